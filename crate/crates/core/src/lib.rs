//! Driving-behavior classification from kinematic time series.
//!
//! Trips are turned into Gramian angular field images ([`gaf`]), weighted
//! per channel ([`attention`]) and classified by a small vision transformer
//! ([`vit`]). Training labels come from threshold clustering of trip
//! endpoints ([`clustering`]). [`engine`] holds the matrix type, reverse-mode
//! differentiation and the optimizer that tie the model together.

pub mod attention;
pub mod clustering;
pub mod data;
pub mod engine;
pub mod gaf;
pub mod metrics;
pub mod model;
pub mod vit;

pub use model::{gradient_check, Ablation, GafVit, ModelConfig, ModelError, ModelInput};
