//! Squeeze-excitation channel attention.
//!
//! `u = mean over pixels`, `U = σ(W2 · ReLU(W1 · u))`, and every channel of
//! the image is multiplied by its weight. The two layers carry no bias.

use rand::Rng;
use thiserror::Error;

use crate::engine::{Matrix, ParamStore, Tape, Var};
use crate::gaf::MultiChannelImage;

/// Initialization spread of `W1` and `W2`.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reduction ratio {ratio} does not divide {channels} channels")]
    InvalidRatio { ratio: usize, channels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams {
    /// `(C/ρ)×C`
    pub w1: Matrix,
    /// `C×(C/ρ)`
    pub w2: Matrix,
    pub reduction_ratio: usize,
}

impl ChannelAttentionParams {
    pub fn new(w1: Matrix, w2: Matrix, reduction_ratio: usize) -> Result<Self, AttentionError> {
        let channels = w1.cols();
        let hidden = hidden_width(channels, reduction_ratio)?;
        if w1.shape() != (hidden, channels) || w2.shape() != (channels, hidden) {
            return Err(AttentionError::DimensionMismatch(format!(
                "w1 {:?} / w2 {:?} for {channels} channels at ratio {reduction_ratio}",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(Self {
            w1,
            w2,
            reduction_ratio,
        })
    }

    pub fn zeros(channels: usize, reduction_ratio: usize) -> Result<Self, AttentionError> {
        let hidden = hidden_width(channels, reduction_ratio)?;
        Self::new(
            Matrix::zeros(hidden, channels),
            Matrix::zeros(channels, hidden),
            reduction_ratio,
        )
    }

    pub fn channels(&self) -> usize {
        self.w1.cols()
    }
}

pub fn hidden_width(channels: usize, reduction_ratio: usize) -> Result<usize, AttentionError> {
    if reduction_ratio == 0 || channels % reduction_ratio != 0 || channels == 0 {
        return Err(AttentionError::InvalidRatio {
            ratio: reduction_ratio,
            channels,
        });
    }
    Ok(channels / reduction_ratio)
}

/// Registers `attention.w1` and `attention.w2` in `store`.
pub fn register_params(
    store: &mut ParamStore,
    channels: usize,
    reduction_ratio: usize,
    rng: &mut impl Rng,
) -> Result<(crate::engine::ParamId, crate::engine::ParamId), AttentionError> {
    let hidden = hidden_width(channels, reduction_ratio)?;
    let w1 = store.insert_normal("attention.w1", hidden, channels, INIT_STD, rng);
    let w2 = store.insert_normal("attention.w2", channels, hidden, INIT_STD, rng);
    Ok((w1, w2))
}

/// Per-channel weights, each strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    /// Unchecked construction, e.g. for fixed scaling in tests and ablations.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Global average pool: a `1×C` row of channel means.
pub fn squeeze_graph(tape: &mut Tape<'_>, pixels: Var) -> Var {
    tape.mean_rows(pixels)
}

/// `σ(ReLU(u · W1ᵀ) · W2ᵀ)` for a `1×C` squeezed row.
pub fn excite_graph(tape: &mut Tape<'_>, u: Var, w1: Var, w2: Var) -> Var {
    let hidden = tape.matmul_nt(u, w1);
    let hidden = tape.relu(hidden);
    let pre = tape.matmul_nt(hidden, w2);
    tape.sigmoid(pre)
}

/// Full block on a `(H·W)×C` pixel matrix; returns `(scaled, weights)`.
pub fn attention_graph(tape: &mut Tape<'_>, pixels: Var, w1: Var, w2: Var) -> (Var, Var) {
    let u = squeeze_graph(tape, pixels);
    let weights = excite_graph(tape, u, w1, w2);
    (tape.mul_row(pixels, weights), weights)
}

pub fn squeeze(image: &MultiChannelImage) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant_ref(image.pixels());
    let u = squeeze_graph(&mut tape, x);
    tape.value(u).as_slice().to_vec()
}

pub fn excite(u: &[f64], params: &ChannelAttentionParams) -> Result<AttentionWeights, AttentionError> {
    if u.len() != params.channels() {
        return Err(AttentionError::DimensionMismatch(format!(
            "squeezed vector has {} entries, parameters expect {}",
            u.len(),
            params.channels()
        )));
    }
    let mut tape = Tape::new();
    let uv = tape.constant(Matrix::row_vector(u));
    let w1 = tape.constant_ref(&params.w1);
    let w2 = tape.constant_ref(&params.w2);
    let out = excite_graph(&mut tape, uv, w1, w2);
    Ok(AttentionWeights(tape.value(out).as_slice().to_vec()))
}

pub fn apply_weights(
    image: &MultiChannelImage,
    weights: &AttentionWeights,
) -> Result<MultiChannelImage, AttentionError> {
    if weights.len() != image.channels() {
        return Err(AttentionError::DimensionMismatch(format!(
            "{} weights for {} channels",
            weights.len(),
            image.channels()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(image.pixels());
    let w = tape.constant(Matrix::row_vector(weights.values()));
    let out = tape.mul_row(x, w);
    let scaled = tape.value(out).clone();
    Ok(MultiChannelImage::new(
        image.height(),
        image.width(),
        scaled,
        image.channel_names().to_vec(),
    )
    .expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> MultiChannelImage {
        let mut data = Matrix::zeros(h * w, c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    data[(i * w + j, k)] = f(i, j, k);
                }
            }
        }
        let names = (0..c).map(|k| format!("c{k}")).collect();
        MultiChannelImage::new(h, w, data, names).unwrap()
    }

    #[test]
    fn squeeze_constant_and_small() {
        let img = image(3, 3, 1, |_, _, _| 3.0);
        assert_eq!(squeeze(&img), vec![3.0]);
        let vals = [[1.0, 2.0], [3.0, 4.0]];
        let img = image(2, 2, 1, |i, j, _| vals[i][j]);
        assert_eq!(squeeze(&img), vec![2.5]);
    }

    #[test]
    fn excite_zero_weights_gives_half() {
        let params = ChannelAttentionParams::zeros(6, 1).unwrap();
        let w = excite(&[1.0, -2.0, 3.0, 0.5, 0.0, 9.0], &params).unwrap();
        assert!(w.values().iter().all(|&v| v == 0.5));

        let params = ChannelAttentionParams::new(
            Matrix::from_vec(1, 1, vec![1.0]),
            Matrix::from_vec(1, 1, vec![1.0]),
            1,
        )
        .unwrap();
        assert_eq!(excite(&[0.0], &params).unwrap().values(), &[0.5]);
    }

    #[test]
    fn excite_rejects_wrong_length() {
        let params = ChannelAttentionParams::zeros(2, 1).unwrap();
        assert!(matches!(excite(&[1.0], &params), Err(AttentionError::DimensionMismatch(_))));
    }

    #[test]
    fn ratio_must_divide_channels() {
        assert_eq!(
            ChannelAttentionParams::zeros(6, 4),
            Err(AttentionError::InvalidRatio { ratio: 4, channels: 6 })
        );
        let p = ChannelAttentionParams::zeros(6, 2).unwrap();
        assert_eq!(p.w1.shape(), (3, 6));
        assert_eq!(p.w2.shape(), (6, 3));
    }

    #[test]
    fn apply_identity_and_zero() {
        let img = image(3, 2, 2, |i, j, k| (i * 7 + j * 3 + k) as f64 * 0.1 - 0.4);
        let same = apply_weights(&img, &AttentionWeights::from_values(vec![1.0, 1.0])).unwrap();
        assert_eq!(same, img);
        let zero = apply_weights(&img, &AttentionWeights::from_values(vec![0.0, 0.0])).unwrap();
        assert!(zero.pixels().as_slice().iter().all(|&v| v == 0.0));
        assert!(apply_weights(&img, &AttentionWeights::from_values(vec![1.0])).is_err());
    }

    #[test]
    fn apply_scales_each_channel() {
        let img = image(2, 3, 2, |i, j, k| (i + 2 * j) as f64 - k as f64);
        let out = apply_weights(&img, &AttentionWeights::from_values(vec![0.5, 0.25])).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(out.get(i, j, 0), 0.5 * img.get(i, j, 0));
                assert_eq!(out.get(i, j, 1), 0.25 * img.get(i, j, 1));
            }
        }
    }

    #[test]
    fn registered_params_are_named() {
        let mut store = ParamStore::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w1, w2) = register_params(&mut store, 6, 1, &mut rng).unwrap();
        assert_eq!(store.get(w1).name, "attention.w1");
        assert_eq!(store.get(w2).name, "attention.w2");
        assert_eq!(store.value(w1).shape(), (6, 6));
    }
}
