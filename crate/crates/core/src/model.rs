//! End-to-end classifier: feature matrix → GAF image → channel attention →
//! vision transformer → class logits.
//!
//! Two ablations are configuration switches of the same model:
//! `no_attention` feeds the image to the transformer unscaled, and
//! `no_gaf` replaces the angular-field encoding with a trainable per-step
//! linear map from the `n` (min-max scaled) features to one `W×C` image row.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{self, AttentionError, AttentionWeights, ChannelAttentionParams};
use crate::engine::{grad_check, EngineError, GradCheckReport, Gradients, Matrix, ParamId, ParamStore, Tape, Var};
use crate::gaf::{self, FeatureMatrix, GafError, MultiChannelImage};
use crate::vit::{self, Logits, PatchMode, VitConfig, VitError, VitParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Gaf(#[from] GafError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Vit(#[from] VitError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_attention: bool,
    pub no_gaf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Time steps per sample (`m`); the image is `m×m`.
    pub sequence_len: usize,
    pub feature_names: Vec<String>,
    pub reduction_ratio: usize,
    pub ablation: Ablation,
    pub vit: VitConfig,
}

impl ModelConfig {
    /// Reference settings for `m`-step samples: ratio-1 attention and the
    /// reference transformer.
    pub fn reference(sequence_len: usize, feature_names: &[&str]) -> Self {
        let channels = 2 * feature_names.len();
        Self {
            sequence_len,
            feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
            reduction_ratio: 1,
            ablation: Ablation::default(),
            vit: VitConfig::reference(sequence_len, channels),
        }
    }

    pub fn channels(&self) -> usize {
        2 * self.feature_names.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let c = self.channels();
        if self.feature_names.is_empty() {
            return Err(ModelError::Config("no input features".into()));
        }
        if self.vit.image_h != self.sequence_len || self.vit.image_w != self.sequence_len || self.vit.channels != c {
            return Err(ModelError::Config(format!(
                "transformer expects {}x{}x{}, features give {m}x{m}x{c}",
                self.vit.image_h,
                self.vit.image_w,
                self.vit.channels,
                m = self.sequence_len
            )));
        }
        self.vit.validate()?;
        if !self.ablation.no_attention {
            attention::hidden_width(c, self.reduction_ratio)?;
        }
        Ok(())
    }
}

/// What the transformer consumes for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Image(MultiChannelImage),
    /// Min-max scaled `m×n` features for the `no_gaf` path.
    Scaled(Matrix),
}

#[derive(Debug, Clone)]
pub struct GafVit {
    config: ModelConfig,
    store: ParamStore,
    attention: Option<(ParamId, ParamId)>,
    reshape: Option<(ParamId, ParamId)>,
    vit: VitParams,
    patch_indices: Option<Arc<[usize]>>,
}

impl GafVit {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let c = config.channels();
        if config.ablation.no_gaf {
            let n = config.feature_names.len();
            let std = 1.0 / (n as f64).sqrt();
            store.insert_normal("reshape.w", config.sequence_len * c, n, std, &mut rng);
            store.insert("reshape.b", Matrix::zeros(1, config.sequence_len * c));
        }
        if !config.ablation.no_attention {
            attention::register_params(&mut store, c, config.reduction_ratio, &mut rng)?;
        }
        VitParams::register(&mut store, &config.vit, &mut rng)?;
        Self::from_parts(config, store)
    }

    /// Binds a model to an existing parameter store (e.g. a checkpoint).
    pub fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let lookup = |name: &str| store.id(name).ok_or_else(|| VitError::MissingParam(name.into()));
        let attention = if config.ablation.no_attention {
            None
        } else {
            Some((lookup("attention.w1")?, lookup("attention.w2")?))
        };
        let reshape = if config.ablation.no_gaf {
            Some((lookup("reshape.w")?, lookup("reshape.b")?))
        } else {
            None
        };
        let vit = VitParams::resolve(&store, &config.vit)?;
        let patch_indices = match config.vit.patch_mode {
            PatchMode::Square => Some(vit::square_patch_indices(&config.vit)),
            PatchMode::StripRows => None,
        };
        Ok(Self {
            config,
            store,
            attention,
            reshape,
            vit,
            patch_indices,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn vit_params(&self) -> &VitParams {
        &self.vit
    }

    /// Current attention parameters, unless the block is ablated.
    pub fn attention_params(&self) -> Option<ChannelAttentionParams> {
        self.attention.map(|(w1, w2)| {
            ChannelAttentionParams::new(
                self.store.value(w1).clone(),
                self.store.value(w2).clone(),
                self.config.reduction_ratio,
            )
            .expect("validated shapes")
        })
    }

    fn check_features(&self, features: &FeatureMatrix) -> Result<(), ModelError> {
        if features.len() != self.config.sequence_len || features.feature_names() != self.config.feature_names.as_slice() {
            return Err(ModelError::Config(format!(
                "sample is {}x{:?}, model expects {}x{:?}",
                features.len(),
                features.feature_names(),
                self.config.sequence_len,
                self.config.feature_names
            )));
        }
        Ok(())
    }

    /// Encodes a feature matrix for this model's input path.
    pub fn prepare(&self, features: &FeatureMatrix) -> Result<ModelInput, ModelError> {
        self.check_features(features)?;
        if self.config.ablation.no_gaf {
            let (m, n) = features.values().shape();
            let mut scaled = Matrix::zeros(m, n);
            for i in 0..n {
                let norm = gaf::normalize_series(&features.column(i)).map_err(|e| match e {
                    GafError::DegenerateSeries { .. } => GafError::DegenerateSeries {
                        feature: Some(features.feature_names()[i].clone()),
                    },
                    other => other,
                })?;
                for (j, v) in norm.values().iter().enumerate() {
                    scaled[(j, i)] = *v;
                }
            }
            Ok(ModelInput::Scaled(scaled))
        } else {
            Ok(ModelInput::Image(gaf::encode_matrix(features)?))
        }
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        let m = self.config.sequence_len;
        let c = self.config.channels();
        match (input, self.reshape) {
            (ModelInput::Image(img), None) if img.shape() != (m, m, c) => {
                Err(ModelError::Config(format!("image {:?}, expected ({m}, {m}, {c})", img.shape())))
            }
            (ModelInput::Scaled(x), Some(_)) if x.shape() != (m, self.config.feature_names.len()) => {
                Err(ModelError::Config(format!("scaled features {:?}", x.shape())))
            }
            (ModelInput::Image(_), None) | (ModelInput::Scaled(_), Some(_)) => Ok(()),
            _ => Err(ModelError::Config("input kind does not match the ablation setting".into())),
        }
    }

    /// Pre-attention `(H·W)×C` pixels from the recorded input matrix.
    fn pixels_graph<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let m = self.config.sequence_len;
        match self.reshape {
            Some((w, b)) => {
                let wv = tape.param(&self.store, w);
                let bv = tape.param(&self.store, b);
                let rows = tape.linear(x, wv, Some(bv));
                tape.reshape(rows, m * m, self.config.channels())
            }
            None => x,
        }
    }

    fn head_graph<'a>(&'a self, tape: &mut Tape<'a>, pixels: Var) -> Var {
        let scaled = match self.attention {
            Some((w1, w2)) => {
                let w1 = tape.param(&self.store, w1);
                let w2 = tape.param(&self.store, w2);
                attention::attention_graph(tape, pixels, w1, w2).0
            }
            None => pixels,
        };
        vit::vit_graph(
            tape,
            &self.store,
            &self.vit,
            &self.config.vit,
            scaled,
            self.patch_indices.as_ref(),
        )
    }

    /// Records the forward pass of one prepared sample; returns `1×K`
    /// logits.
    pub fn logits_graph<'a>(&'a self, tape: &mut Tape<'a>, input: &'a ModelInput) -> Result<Var, ModelError> {
        self.check_input(input)?;
        let x = match input {
            ModelInput::Image(img) => tape.constant_ref(img.pixels()),
            ModelInput::Scaled(x) => tape.constant_ref(x),
        };
        let pixels = self.pixels_graph(tape, x);
        Ok(self.head_graph(tape, pixels))
    }

    /// Same as [`GafVit::logits_graph`] but encodes the raw features first,
    /// so no image outlives the tape.
    pub fn features_graph<'a>(&'a self, tape: &mut Tape<'a>, features: &FeatureMatrix) -> Result<Var, ModelError> {
        let input = self.prepare(features)?;
        self.check_input(&input)?;
        let x = match input {
            ModelInput::Image(img) => tape.constant(img.into_pixels()),
            ModelInput::Scaled(x) => tape.constant(x),
        };
        let pixels = self.pixels_graph(tape, x);
        Ok(self.head_graph(tape, pixels))
    }

    pub fn logits(&self, input: &ModelInput) -> Result<Logits, ModelError> {
        let mut tape = Tape::new();
        let out = self.logits_graph(&mut tape, input)?;
        Ok(Logits(tape.value(out).as_slice().to_vec()))
    }

    /// Runs one feature matrix through the whole model; returns the
    /// predicted class and the logits.
    pub fn classify_trajectory(&self, features: &FeatureMatrix) -> Result<(usize, Logits), ModelError> {
        let input = self.prepare(features)?;
        let logits = self.logits(&input)?;
        Ok((logits.argmax(), logits))
    }

    /// Channel weights the attention block assigns to an input.
    pub fn attention_weights(&self, input: &ModelInput) -> Result<Option<AttentionWeights>, ModelError> {
        let Some((w1, w2)) = self.attention else {
            return Ok(None);
        };
        self.check_input(input)?;
        let mut tape = Tape::new();
        let x = match input {
            ModelInput::Image(img) => tape.constant_ref(img.pixels()),
            ModelInput::Scaled(x) => tape.constant_ref(x),
        };
        let pixels = self.pixels_graph(&mut tape, x);
        let w1 = tape.param(&self.store, w1);
        let w2 = tape.param(&self.store, w2);
        let (_, weights) = attention::attention_graph(&mut tape, pixels, w1, w2);
        Ok(Some(AttentionWeights::from_values(tape.value(weights).as_slice().to_vec())))
    }
}

/// Transformer forward on an already-built image: optional channel
/// attention followed by the ViT.
pub fn forward(
    image: &MultiChannelImage,
    attention: Option<&ChannelAttentionParams>,
    store: &ParamStore,
    vit_params: &VitParams,
    config: &VitConfig,
    ablation: Ablation,
) -> Result<Logits, ModelError> {
    config.validate()?;
    if image.shape() != (config.image_h, config.image_w, config.channels) {
        return Err(VitError::DimensionMismatch(format!("image {:?} for config {config:?}", image.shape())).into());
    }
    let mut tape = Tape::new();
    let mut pixels = tape.constant_ref(image.pixels());
    if !ablation.no_attention {
        let params = attention.ok_or_else(|| ModelError::Config("attention parameters required".into()))?;
        if params.channels() != config.channels {
            return Err(AttentionError::DimensionMismatch(format!(
                "{} attention channels for {} image channels",
                params.channels(),
                config.channels
            ))
            .into());
        }
        let w1 = tape.constant_ref(&params.w1);
        let w2 = tape.constant_ref(&params.w2);
        pixels = attention::attention_graph(&mut tape, pixels, w1, w2).0;
    }
    let out = vit::vit_graph(&mut tape, store, vit_params, config, pixels, None);
    Ok(Logits(tape.value(out).as_slice().to_vec()))
}

impl ModelConfig {
    /// Small configuration for gradient checks: one 8-step feature
    /// (8×8×2 image), 4 strip patches, D = 8, one block, 2 heads.
    pub fn toy() -> Self {
        Self {
            sequence_len: 8,
            feature_names: vec!["speed".into()],
            reduction_ratio: 1,
            ablation: Ablation::default(),
            vit: VitConfig {
                image_h: 8,
                image_w: 8,
                channels: 2,
                patch_mode: PatchMode::StripRows,
                patch_size: 2,
                embed_dim: 8,
                depth: 1,
                heads: 2,
                mlp_dim: 8,
                num_classes: 4,
            },
        }
    }
}

fn sample_loss(model: &GafVit, input: &ModelInput, label: usize) -> Result<(f64, Gradients), ModelError> {
    let mut tape = Tape::new();
    let logits = model.logits_graph(&mut tape, input)?;
    let loss = tape.cross_entropy(logits, label)?;
    let bp = tape.backward(loss)?;
    Ok((tape.value(loss)[(0, 0)], tape.param_gradients(&bp, model.store())))
}

/// Cross-entropy gradients of one sample against central differences,
/// over every `stride`-th entry of each trainable parameter.
pub fn gradient_check(
    model: &GafVit,
    features: &FeatureMatrix,
    label: usize,
    stride: usize,
) -> Result<GradCheckReport, ModelError> {
    let input = model.prepare(features)?;
    let (_, grads) = sample_loss(model, &input, label)?;
    Ok(grad_check(model.store(), &grads, stride, |store| {
        let probe = GafVit::from_parts(model.config().clone(), store.clone()).expect("same layout");
        sample_loss(&probe, &input, label).map_or(f64::NAN, |(l, _)| l)
    }))
}

impl crate::engine::Trainable for GafVit {
    type Input = FeatureMatrix;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits_graph<'a>(&'a self, tape: &mut Tape<'a>, input: &'a FeatureMatrix) -> Result<Var, EngineError> {
        self.features_graph(tape, input).map_err(|e| match e {
            ModelError::Engine(e) => e,
            other => EngineError::Input(other.to_string()),
        })
    }
}
