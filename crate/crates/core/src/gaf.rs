//! Gramian angular field encoding of multivariate feature sequences.
//!
//! Each feature column is min-max scaled to `[0, 1]`, read as the cosine of
//! an angle `φ ∈ [0, π/2]`, and expanded into two `m×m` fields:
//!
//! * summation field `GASF[j][k] = cos(φ_j + φ_k) = f̃_j f̃_k − √(1−f̃_j²)√(1−f̃_k²)`
//! * difference field `GADF[j][k] = sin(φ_j − φ_k) = f̃_k √(1−f̃_j²) − f̃_j √(1−f̃_k²)`
//!
//! The fields of all features are stacked into one `m×m×2n` image with
//! channels ordered `[GASF_1, GADF_1, …, GASF_n, GADF_n]`.
//!
//! All arithmetic is `f64`; the algebraic forms above are evaluated rather
//! than the trigonometric ones.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::engine::Matrix;

/// Slack allowed outside `[0, 1]` (or `[−1, 1]`) before a value is rejected
/// instead of clamped.
pub const CLAMP_SLACK: f64 = 1e-9;

/// Default sampling interval in seconds.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum GafError {
    #[error("series{} is constant; min-max normalization is undefined", feature_suffix(.feature))]
    DegenerateSeries { feature: Option<String> },
    #[error("series contains a non-finite value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("series has {0} points, at least 2 are needed")]
    TooShort(usize),
    #[error("value {value} at index {index} is outside the admissible range")]
    OutOfRange { index: usize, value: f64 },
    #[error("channel {channel} out of bounds for an image with {channels} channels")]
    ChannelOutOfBounds { channel: usize, channels: usize },
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn feature_suffix(feature: &Option<String>) -> String {
    feature.as_ref().map(|f| format!(" `{f}`")).unwrap_or_default()
}

/// An `m×n` multivariate sequence: rows are time steps, columns features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Matrix,
    feature_names: Vec<String>,
    dt: f64,
}

impl FeatureMatrix {
    pub fn new(values: Matrix, feature_names: Vec<String>, dt: f64) -> Result<Self, GafError> {
        let (m, n) = values.shape();
        if m < 2 {
            return Err(GafError::TooShort(m));
        }
        if n == 0 {
            return Err(GafError::InvalidMatrix("no feature columns".into()));
        }
        if feature_names.len() != n {
            return Err(GafError::InvalidMatrix(format!(
                "{} feature names for {n} columns",
                feature_names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name) {
                return Err(GafError::InvalidMatrix(format!("duplicate feature name `{name}`")));
            }
        }
        if let Some(index) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(GafError::NonFiniteInput { index });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(GafError::InvalidMatrix(format!("sampling interval {dt} must be positive")));
        }
        Ok(Self {
            values,
            feature_names,
            dt,
        })
    }

    /// Builds a matrix from equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>], feature_names: &[&str], dt: f64) -> Result<Self, GafError> {
        let m = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != m) {
            return Err(GafError::InvalidMatrix("columns differ in length".into()));
        }
        let n = columns.len();
        let mut data = Vec::with_capacity(m * n);
        for j in 0..m {
            data.extend(columns.iter().map(|c| c[j]));
        }
        Self::new(
            Matrix::from_vec(m, n, data),
            feature_names.iter().map(|s| s.to_string()).collect(),
            dt,
        )
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of time steps `m`.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Number of features `n`.
    pub fn num_features(&self) -> usize {
        self.values.cols()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.values[(j, i)]).collect()
    }

    pub fn last_row(&self) -> &[f64] {
        self.values.row(self.len() - 1)
    }
}

/// A series min-max scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries(Vec<f64>);

impl NormalizedSeries {
    /// Wraps values already in `[0, 1]`; values within [`CLAMP_SLACK`] of
    /// the range are clamped, anything further out is rejected.
    pub fn new(values: Vec<f64>) -> Result<Self, GafError> {
        let mut values = values;
        for (index, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -CLAMP_SLACK || *v > 1.0 + CLAMP_SLACK {
                return Err(GafError::OutOfRange { index, value: *v });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self(values))
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

/// Polar form of a normalized series. `radii[j] = (j+1)/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSeries {
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
}

/// Summation and difference fields of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GafPair {
    pub gasf: Matrix,
    pub gadf: Matrix,
}

/// An `H×W×C` image. Pixel `(i, j)` is row `i·W + j` of `data`, channel `c`
/// is column `c`, so the flat buffer is laid out `(row, column, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    height: usize,
    width: usize,
    data: Matrix,
    channel_names: Vec<String>,
}

impl MultiChannelImage {
    /// Wraps a `(H·W)×C` pixel matrix.
    pub fn new(height: usize, width: usize, data: Matrix, channel_names: Vec<String>) -> Result<Self, GafError> {
        if data.rows() != height * width {
            return Err(GafError::InvalidMatrix(format!(
                "{} pixel rows for a {height}x{width} image",
                data.rows()
            )));
        }
        if channel_names.len() != data.cols() {
            return Err(GafError::InvalidMatrix(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                data.cols()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            channel_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    /// `(H, W, C)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.data.cols())
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j, c)]
    }

    /// Pixels as a `(H·W)×C` matrix.
    pub fn pixels(&self) -> &Matrix {
        &self.data
    }

    pub fn into_pixels(self) -> Matrix {
        self.data
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// One channel as an `H×W` matrix.
    pub fn channel(&self, c: usize) -> Result<Matrix, GafError> {
        let channels = self.channels();
        if c >= channels {
            return Err(GafError::ChannelOutOfBounds { channel: c, channels });
        }
        let data = (0..self.height * self.width).map(|p| self.data[(p, c)]).collect();
        Ok(Matrix::from_vec(self.height, self.width, data))
    }
}

pub fn normalize_series(series: &[f64]) -> Result<NormalizedSeries, GafError> {
    if series.len() < 2 {
        return Err(GafError::TooShort(series.len()));
    }
    if let Some(index) = series.iter().position(|v| !v.is_finite()) {
        return Err(GafError::NonFiniteInput { index });
    }
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Err(GafError::DegenerateSeries { feature: None });
    }
    Ok(NormalizedSeries(
        series.iter().map(|v| ((v - min) / range).clamp(0.0, 1.0)).collect(),
    ))
}

pub fn to_polar(norm: &NormalizedSeries) -> PolarSeries {
    let m = norm.len() as f64;
    PolarSeries {
        angles: norm.0.iter().map(|v| v.clamp(0.0, 1.0).acos()).collect(),
        radii: (1..=norm.len()).map(|j| j as f64 / m).collect(),
    }
}

fn complements(values: &[f64]) -> Vec<f64> {
    values.iter().map(|f| (1.0 - f * f).max(0.0).sqrt()).collect()
}

pub fn gasf(norm: &NormalizedSeries) -> Matrix {
    let f = norm.values();
    let s = complements(f);
    let m = f.len();
    let mut out = Matrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            out[(j, k)] = (f[j] * f[k] - s[j] * s[k]).clamp(-1.0, 1.0);
        }
    }
    out
}

pub fn gadf(norm: &NormalizedSeries) -> Matrix {
    let f = norm.values();
    let s = complements(f);
    let m = f.len();
    let mut out = Matrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            out[(j, k)] = (f[k] * s[j] - f[j] * s[k]).clamp(-1.0, 1.0);
        }
    }
    out
}

/// `cos(φ_j + φ_k)` evaluated directly from angles.
pub fn gasf_from_angles(angles: &[f64]) -> Matrix {
    let m = angles.len();
    let mut out = Matrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            out[(j, k)] = (angles[j] + angles[k]).cos();
        }
    }
    out
}

/// `sin(φ_j − φ_k)` evaluated directly from angles.
pub fn gadf_from_angles(angles: &[f64]) -> Matrix {
    let m = angles.len();
    let mut out = Matrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            out[(j, k)] = (angles[j] - angles[k]).sin();
        }
    }
    out
}

pub fn encode_feature(series: &[f64]) -> Result<GafPair, GafError> {
    let norm = normalize_series(series)?;
    Ok(GafPair {
        gasf: gasf(&norm),
        gadf: gadf(&norm),
    })
}

/// Encodes every feature column and interleaves the fields into one image.
pub fn encode_matrix(features: &FeatureMatrix) -> Result<MultiChannelImage, GafError> {
    let m = features.len();
    let n = features.num_features();
    let channels = 2 * n;
    let mut data = Matrix::zeros(m * m, channels);
    let mut names = Vec::with_capacity(channels);
    for i in 0..n {
        let name = &features.feature_names()[i];
        let pair = encode_feature(&features.column(i)).map_err(|e| match e {
            GafError::DegenerateSeries { .. } => GafError::DegenerateSeries {
                feature: Some(name.clone()),
            },
            other => other,
        })?;
        let out = data.as_mut_slice();
        for (p, (s, d)) in pair.gasf.as_slice().iter().zip(pair.gadf.as_slice()).enumerate() {
            out[p * channels + 2 * i] = *s;
            out[p * channels + 2 * i + 1] = *d;
        }
        names.push(format!("{name}/gasf"));
        names.push(format!("{name}/gadf"));
    }
    MultiChannelImage::new(m, m, data, names)
}

/// Recovers `f̃` from the summation-field diagonal `2f̃² − 1`.
pub fn reconstruct_from_gasf(diag: &[f64]) -> Result<NormalizedSeries, GafError> {
    let mut out = Vec::with_capacity(diag.len());
    for (index, &d) in diag.iter().enumerate() {
        if !d.is_finite() || !(-1.0 - CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&d) {
            return Err(GafError::OutOfRange { index, value: d });
        }
        out.push(((d.clamp(-1.0, 1.0) + 1.0) / 2.0).sqrt());
    }
    Ok(NormalizedSeries(out))
}

/// Maps a value in `[−1, 1]` to an 8-bit gray level.
pub fn gray_level(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes one channel as a binary PGM (P5), row-major from the top-left.
pub fn render_channel(image: &MultiChannelImage, channel: usize, path: &Path) -> Result<(), GafError> {
    let plane = image.channel(channel)?;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", plane.cols(), plane.rows())?;
    let bytes: Vec<u8> = plane.as_slice().iter().map(|&v| gray_level(v)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
