//! Trip ingestion, cleaning into fixed-length samples, kinematics, the
//! on-disk dataset container and a synthetic trip generator.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaf::{self, FeatureMatrix, GafError, DEFAULT_DT};

/// Steps per sample after cleaning.
pub const SEQUENCE_LEN: usize = 99;
pub const FEATURE_NAMES: [&str; 3] = ["speed", "accel", "jerk"];
/// Trip lengths kept by [`clean_and_split`].
pub const TRIP_LENGTHS: [usize; 2] = [198, 199];
/// Allowed deviation of time steps from the grid.
pub const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: schema error{}: {message}", line_suffix(*.line))]
    Schema {
        path: String,
        line: Option<u64>,
        message: String,
    },
    #[error("{path}: trip `{trip_id}` has repeated time {t} (line {line})")]
    NonMonotonicTime {
        path: String,
        trip_id: String,
        t: f64,
        line: u64,
    },
    #[error("{path}: trip `{trip_id}` is not on a uniform {dt} s grid near t = {t}")]
    NonUniformGrid {
        path: String,
        trip_id: String,
        dt: f64,
        t: f64,
    },
    #[error("{0}: no data rows")]
    EmptyFile(String),
    #[error("series has {0} points, at least 3 are needed")]
    TooShort(usize),
    #[error("sample `{id}`: {source}")]
    Sample {
        id: String,
        #[source]
        source: GafError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn line_suffix(line: Option<u64>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One recorded trip on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub trip_id: String,
    pub t: Vec<f64>,
    pub position: Option<Vec<f64>>,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    pub jerk: Vec<f64>,
    pub label: Option<usize>,
}

impl Trip {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Whether acceleration and jerk agree with forward differences of speed
    /// within `rel_tol` (relative to the largest magnitude of each series).
    pub fn is_kinematic_consistent(&self, dt: f64, rel_tol: f64) -> bool {
        let Ok((a, j)) = derive_kinematics(&self.speed, dt) else {
            return false;
        };
        close(&a, &self.accel, rel_tol) && close(&j, &self.jerk, rel_tol)
    }
}

fn close(expected: &[f64], actual: &[f64], rel_tol: f64) -> bool {
    let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    expected.len() == actual.len()
        && expected
            .iter()
            .zip(actual)
            .all(|(e, a)| (e - a).abs() <= rel_tol * scale)
}

/// Forward differences `a[j] = (v[j+1] − v[j]) / dt`, the last value
/// repeated; jerk is obtained the same way from acceleration.
pub fn derive_kinematics(speed: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    if speed.len() < 3 {
        return Err(DataError::TooShort(speed.len()));
    }
    let accel = forward_difference(speed, dt);
    let jerk = forward_difference(&accel, dt);
    Ok((accel, jerk))
}

fn forward_difference(x: &[f64], dt: f64) -> Vec<f64> {
    let mut out: Vec<f64> = x.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    out.push(*out.last().expect("at least two points"));
    out
}

#[derive(Default)]
struct TripRows {
    first_line: u64,
    rows: Vec<(f64, [Option<f64>; 4], Option<usize>, u64)>,
}

/// Reads trips from a CSV with header `trip_id,t,position,speed,accel,jerk`
/// (`position`, `accel`, `jerk` and `label` optional). Trips keep the order
/// of their first row; rows are sorted by time. Missing acceleration or
/// jerk is derived from speed.
pub fn load_trips(path: &Path) -> Result<Vec<Trip>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_trips(file, &path.display().to_string())
}

pub fn read_trips(input: impl Read, source: &str) -> Result<Vec<Trip>, DataError> {
    let schema = |line: Option<u64>, message: String| DataError::Schema {
        path: source.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| schema(Some(1), e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| col(name).ok_or_else(|| schema(Some(1), format!("missing required column `{name}`")));
    let id_col = require("trip_id")?;
    let t_col = require("t")?;
    let speed_col = require("speed")?;
    let optional = [
        (0, col("position"), "position"),
        (2, col("accel"), "accel"),
        (3, col("jerk"), "jerk"),
    ];
    let label_col = col("label");

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, TripRows> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| schema(e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64, DataError> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| schema(Some(line), format!("column `{name}`: `{raw}` is not a finite number")))
        };
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(schema(Some(line), "column `trip_id` is empty".into()));
        }
        let t = field(t_col, "t")?;
        let speed = field(speed_col, "speed")?;
        let mut extra = [None, Some(speed), None, None];
        for (slot, c, name) in optional {
            if let Some(c) = c {
                extra[slot] = Some(field(c, name)?);
            }
        }
        let label = match label_col {
            Some(c) => {
                let raw = record.get(c).unwrap_or("");
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<usize>().map_err(|_| {
                        schema(Some(line), format!("column `label`: `{raw}` is not a class index"))
                    })?)
                }
            }
            None => None,
        };
        let group = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            TripRows {
                first_line: line,
                rows: Vec::new(),
            }
        });
        group.rows.push((t, extra, label, line));
    }
    if order.is_empty() {
        return Err(DataError::EmptyFile(source.to_string()));
    }

    let mut trips = Vec::with_capacity(order.len());
    for id in order {
        let mut group = groups.remove(&id).expect("grouped");
        group.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in group.rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DataError::NonMonotonicTime {
                    path: source.to_string(),
                    trip_id: id,
                    t: w[1].0,
                    line: w[1].3,
                });
            }
            if ((w[1].0 - w[0].0) - DEFAULT_DT).abs() > GRID_TOLERANCE {
                return Err(DataError::NonUniformGrid {
                    path: source.to_string(),
                    trip_id: id,
                    dt: DEFAULT_DT,
                    t: w[0].0,
                });
            }
        }
        let column = |k: usize| -> Option<Vec<f64>> { group.rows.iter().map(|r| r.1[k]).collect() };
        let speed = column(1).expect("speed is required");
        let (accel, jerk) = match (column(2), column(3)) {
            (Some(a), Some(j)) => (a, j),
            (Some(a), None) if a.len() >= 2 => {
                let j = forward_difference(&a, DEFAULT_DT);
                (a, j)
            }
            _ if speed.len() >= 3 => derive_kinematics(&speed, DEFAULT_DT)?,
            _ => (vec![0.0; speed.len()], vec![0.0; speed.len()]),
        };
        let labels: Vec<usize> = group.rows.iter().filter_map(|r| r.2).collect();
        let label = labels.first().copied();
        if labels.iter().any(|&l| Some(l) != label) {
            return Err(schema(
                Some(group.first_line),
                format!("trip `{id}` carries more than one label"),
            ));
        }
        trips.push(Trip {
            trip_id: id,
            t: group.rows.iter().map(|r| r.0).collect(),
            position: column(0),
            speed,
            accel,
            jerk,
            label,
        });
    }
    Ok(trips)
}

/// A named fixed-length sample, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: FeatureMatrix,
    pub label: Option<usize>,
}

/// Why a trip was left out by [`clean_and_split`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NonPositiveSpeed,
    Length(usize),
}

/// Keeps trips of 198 or 199 steps whose speed is positive somewhere,
/// drops the last point of 199-step trips and cuts each into two
/// contiguous 99-step halves (`<id>_a`, `<id>_b`) with columns
/// `speed, accel, jerk`.
pub fn clean_and_split(trips: &[Trip]) -> (Vec<Sample>, Vec<(String, DropReason)>) {
    let mut samples = Vec::new();
    let mut dropped = Vec::new();
    for trip in trips {
        if trip.speed.iter().all(|&v| v <= 0.0) {
            log::info!("dropping trip `{}`: speed never positive", trip.trip_id);
            dropped.push((trip.trip_id.clone(), DropReason::NonPositiveSpeed));
            continue;
        }
        if !TRIP_LENGTHS.contains(&trip.len()) {
            log::info!("dropping trip `{}`: length {}", trip.trip_id, trip.len());
            dropped.push((trip.trip_id.clone(), DropReason::Length(trip.len())));
            continue;
        }
        for (half, suffix) in [(0, "a"), (1, "b")] {
            let range = half * SEQUENCE_LEN..(half + 1) * SEQUENCE_LEN;
            let columns = [
                trip.speed[range.clone()].to_vec(),
                trip.accel[range.clone()].to_vec(),
                trip.jerk[range].to_vec(),
            ];
            let features =
                FeatureMatrix::from_columns(&columns, &FEATURE_NAMES, DEFAULT_DT).expect("finite 99x3 columns");
            samples.push(Sample {
                id: format!("{}_{suffix}", trip.trip_id),
                features,
                label: trip.label,
            });
        }
    }
    (samples, dropped)
}

/// Samples stored as `features.csv` (`trip_id,step,<features…>`) and
/// `labels.csv` (`trip_id,class`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn features_csv(&self) -> String {
        let mut out = String::new();
        let names = self
            .samples
            .first()
            .map(|s| s.features.feature_names().join(","))
            .unwrap_or_else(|| FEATURE_NAMES.join(","));
        out.push_str(&format!("trip_id,step,{names}\n"));
        for s in &self.samples {
            for j in 0..s.features.len() {
                out.push_str(&s.id);
                out.push(',');
                out.push_str(&j.to_string());
                for v in s.features.values().row(j) {
                    out.push(',');
                    out.push_str(&v.to_string());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn labels_csv(&self) -> String {
        let mut out = String::from("trip_id,class\n");
        for s in &self.samples {
            if let Some(l) = s.label {
                out.push_str(&format!("{},{l}\n", s.id));
            }
        }
        out
    }

    /// Writes `features.csv`, plus `labels.csv` when any sample is labeled.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let f = dir.join(FEATURES_FILE);
        fs::write(&f, self.features_csv()).map_err(io_err(&f))?;
        if self.samples.iter().any(|s| s.label.is_some()) {
            let l = dir.join(LABELS_FILE);
            fs::write(&l, self.labels_csv()).map_err(io_err(&l))?;
        }
        Ok(())
    }

    /// Loads `features.csv` from `dir` and, if present, `labels.csv`.
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let f = dir.join(FEATURES_FILE);
        let file = fs::File::open(&f).map_err(io_err(&f))?;
        let mut dataset = Self::read_features(file, &f.display().to_string())?;
        let l = dir.join(LABELS_FILE);
        if l.exists() {
            let labels = read_labels(&l)?;
            dataset.apply_labels(&labels);
        }
        Ok(dataset)
    }

    pub fn apply_labels(&mut self, labels: &HashMap<String, usize>) {
        for s in &mut self.samples {
            s.label = labels.get(&s.id).copied();
        }
    }

    pub fn read_features(input: impl Read, source: &str) -> Result<Self, DataError> {
        let schema = |line: Option<u64>, message: String| DataError::Schema {
            path: source.to_string(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| schema(Some(1), e.to_string()))?
            .clone();
        if headers.get(0) != Some("trip_id") || headers.get(1) != Some("step") || headers.len() < 3 {
            return Err(schema(Some(1), "expected header `trip_id,step,<feature>…`".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut samples = Vec::new();
        let mut current: Option<(String, Vec<Vec<f64>>)> = None;
        let flush = |cur: Option<(String, Vec<Vec<f64>>)>, samples: &mut Vec<Sample>| -> Result<(), DataError> {
            if let Some((id, columns)) = cur {
                let features = FeatureMatrix::from_columns(&columns, &name_refs, DEFAULT_DT)
                    .map_err(|source| DataError::Sample { id: id.clone(), source })?;
                samples.push(Sample {
                    id,
                    features,
                    label: None,
                });
            }
            Ok(())
        };
        for record in reader.records() {
            let record = record.map_err(|e| schema(e.position().map(|p| p.line()), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let id = record.get(0).unwrap_or("");
            let step: usize = record
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| schema(Some(line), "column `step` is not an index".into()))?;
            let new_sample = current.as_ref().is_none_or(|(cur, _)| cur != id);
            if new_sample {
                flush(current.take(), &mut samples)?;
                current = Some((id.to_string(), vec![Vec::new(); names.len()]));
            }
            let (_, columns) = current.as_mut().expect("set above");
            if step != columns[0].len() {
                return Err(schema(
                    Some(line),
                    format!("sample `{id}`: step {step} out of order, expected {}", columns[0].len()),
                ));
            }
            for (k, column) in columns.iter_mut().enumerate() {
                let raw = record.get(k + 2).unwrap_or("");
                let v = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| schema(Some(line), format!("column `{}`: `{raw}` is not a finite number", names[k])))?;
                column.push(v);
            }
        }
        flush(current.take(), &mut samples)?;
        if samples.is_empty() {
            return Err(DataError::EmptyFile(source.to_string()));
        }
        Ok(Self { samples })
    }
}

/// Reads a `trip_id,class` file.
pub fn read_labels(path: &Path) -> Result<HashMap<String, usize>, DataError> {
    let source = path.display().to_string();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let schema = |line: Option<u64>, message: String| DataError::Schema {
        path: source.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| schema(Some(1), e.to_string()))?;
    if headers.get(0) != Some("trip_id") || headers.get(1) != Some("class") {
        return Err(schema(Some(1), "expected header `trip_id,class`".into()));
    }
    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| schema(e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let raw = record.get(1).unwrap_or("");
        let class = raw
            .parse()
            .map_err(|_| schema(Some(line), format!("column `class`: `{raw}` is not a class index")))?;
        out.insert(record.get(0).unwrap_or("").to_string(), class);
    }
    Ok(out)
}

/// Base speed curve of a regime over normalized time `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendShape {
    /// Speed up, slow down, speed up again: `−cos 2πu`.
    Surge,
    /// Quick rise settling into a cruise: `1 − (1−u)²`.
    RiseAndCruise,
    /// Gradual slowdown leveling off: `(1−u)²`.
    EaseDown,
    /// Cruise then increasingly firm slowdown: `−u²`.
    LateSlowdown,
}

impl TrendShape {
    fn value(self, u: f64) -> f64 {
        match self {
            Self::Surge => -(std::f64::consts::TAU * u).cos(),
            Self::RiseAndCruise => 1.0 - (1.0 - u) * (1.0 - u),
            Self::EaseDown => (1.0 - u) * (1.0 - u),
            Self::LateSlowdown => -u * u,
        }
    }

    fn slope(self, u: f64) -> f64 {
        match self {
            Self::Surge => std::f64::consts::TAU * (std::f64::consts::TAU * u).sin(),
            Self::RiseAndCruise => 2.0 * (1.0 - u),
            Self::EaseDown => -2.0 * (1.0 - u),
            Self::LateSlowdown => -2.0 * u,
        }
    }
}

/// Parameters of one synthetic driving regime.
///
/// Speed follows `base + amplitude·shape(u)` with a per-trip random scale
/// and offset. Acceleration tracks that curve with speed feedback `kv`
/// plus a smooth noise term driven by an Ornstein-Uhlenbeck jerk process
/// (`sigma`, `jerk_reversion`, `accel_reversion`). Over the last
/// `ramp_steps` the acceleration blends into a terminal maneuver whose
/// acceleration/speed ratio is `tan ψ`, with `ψ` drawn near
/// `±spread` around `terminal_angle_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub name: String,
    pub base_speed: f64,
    pub amplitude: f64,
    pub shape: TrendShape,
    pub terminal_angle_deg: f64,
    pub sigma: f64,
    pub jerk_reversion: f64,
    pub accel_reversion: f64,
    pub ramp_steps: usize,
}

/// Feedback gain of speed toward the regime curve (1/s).
pub const SPEED_FEEDBACK: f64 = 0.8;
/// Offset of the two terminal-angle sub-bundles, in units of π.
pub const TERMINAL_SPREAD: f64 = 0.017;
/// Uniform jitter around each sub-bundle, in units of π.
pub const TERMINAL_JITTER: f64 = 0.002;

impl Regime {
    /// Four regimes loosely shaped after the reference class statistics
    /// (mean speeds 7.05, 6.66, 2.91, 4.25 m/s).
    pub fn reference() -> Vec<Regime> {
        let r = |name: &str, base, amplitude, shape, angle, sigma, kq, ka, ramp| Regime {
            name: name.to_string(),
            base_speed: base,
            amplitude,
            shape,
            terminal_angle_deg: angle,
            sigma,
            jerk_reversion: kq,
            accel_reversion: ka,
            ramp_steps: ramp,
        };
        vec![
            r("aggressive", 6.69, 2.0, TrendShape::Surge, 8.0, 0.47, 0.64, 0.82, 36),
            r("assertive", 4.74, 3.0, TrendShape::RiseAndCruise, -8.0, 1.1, 1.3, 0.15, 26),
            r("conservative", 2.33, 2.0, TrendShape::EaseDown, -24.0, 0.4, 0.7, 0.8, 26),
            r("moderate", 5.13, 3.3, TrendShape::LateSlowdown, 24.0, 0.2, 0.6, 0.2, 26),
        ]
    }

    /// One `SEQUENCE_LEN`-step speed profile.
    pub fn speed_profile(&self, rng: &mut impl Rng) -> Vec<f64> {
        let m = SEQUENCE_LEN;
        let dt = DEFAULT_DT;
        let span = (m - 1) as f64;
        let scale = rng.sample(Uniform::new(0.8, 1.2).expect("valid range"));
        let offset = Normal::new(0.0, 0.3).expect("valid sd").sample(rng);
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let jitter = rng.sample(Uniform::new(-TERMINAL_JITTER, TERMINAL_JITTER).expect("valid range"));
        let psi = self.terminal_angle_deg.to_radians() + std::f64::consts::PI * (side * TERMINAL_SPREAD + jitter);
        let ratio = psi.tan();

        let (kq, ka, sigma) = (self.jerk_reversion, self.accel_reversion, self.sigma);
        let std_normal = Normal::new(0.0, 1.0).expect("valid sd");
        let mut q = 0.0;
        let mut noise = std_normal.sample(rng) * sigma / (2.0 * kq).sqrt() / (ka * (ka + kq)).sqrt();
        let ramp = self.ramp_steps.clamp(1, m - 2) as f64;
        let mut v = vec![0.0; m];
        v[0] = (self.base_speed + offset + self.amplitude * scale * self.shape.value(0.0)).max(0.0);
        for j in 0..m - 1 {
            let u = j as f64 / span;
            let target = self.base_speed + offset + self.amplitude * scale * self.shape.value(u);
            let target_slope = self.amplitude * scale * self.shape.slope(u) / (span * dt);
            q += -kq * q * dt + sigma * dt.sqrt() * std_normal.sample(rng);
            noise += dt * (q - ka * noise);
            let free = target_slope + SPEED_FEEDBACK * (target - v[j]) + noise;
            let s = ((j as f64 - (m as f64 - 2.0 - ramp)) / ramp).max(0.0);
            let w = s * s * (3.0 - 2.0 * s);
            let terminal = ratio * v[j] / (1.0 - ratio * dt);
            let a = (1.0 - w) * free + w * terminal;
            v[j + 1] = (v[j] + dt * a).max(0.0);
        }
        v
    }
}

/// Generates `counts[r]` samples of regime `r` (labels are regime
/// indices), shuffled into one seeded order. Sample ids are
/// `synth_<index>`.
pub fn synth_generate(regimes: &[Regime], counts: &[usize], seed: u64) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::new();
    for (label, (regime, &count)) in regimes.iter().zip(counts).enumerate() {
        for _ in 0..count {
            let features = loop {
                let speed = regime.speed_profile(&mut rng);
                if speed[SEQUENCE_LEN - 2] <= 0.1 {
                    continue;
                }
                let (accel, jerk) = derive_kinematics(&speed, DEFAULT_DT)?;
                let fm = FeatureMatrix::from_columns(&[speed, accel, jerk], &FEATURE_NAMES, DEFAULT_DT)
                    .expect("finite columns");
                if gaf::encode_matrix(&fm).is_ok() {
                    break fm;
                }
            };
            labeled.push((features, label));
        }
    }
    labeled.shuffle(&mut rng);
    let width = labeled.len().max(1).to_string().len().max(5);
    let samples = labeled
        .into_iter()
        .enumerate()
        .map(|(i, (features, label))| Sample {
            id: format!("synth_{i:0width$}"),
            features,
            label: Some(label),
        })
        .collect();
    Ok(Dataset { samples })
}
