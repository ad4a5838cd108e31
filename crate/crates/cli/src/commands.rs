use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gafvit::attention::squeeze;
use gafvit::clustering::{
    class_summaries, elbow_select, label_dataset, matched_agreement, qb_cluster, summary_csv, theta_grid, DistanceMode,
};
use gafvit::data::{self, clean_and_split, load_trips, read_labels, synth_generate, Dataset, Regime, Sample};
use gafvit::engine::{evaluate, fit, load_checkpoint, save_checkpoint, split_dataset, Split, TrainConfig};
use gafvit::gaf::{self, FeatureMatrix, GafError, DEFAULT_DT};
use gafvit::metrics::{confusion, report};
use gafvit::vit::PatchMode;
use gafvit::{gradient_check, Ablation, GafVit, ModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use toml::Value;

use crate::config::{List, Resolver, Setting};
use crate::error::CliError;
use crate::{ClassifyArgs, ClusterArgs, EvalArgs, GradcheckArgs, Source, SynthArgs, TrainArgs, TransformArgs};

pub const CHECKPOINT_FILE: &str = "model.gvt";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    Skip,
    Error,
}

impl FromStr for Degenerate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "skip" => Ok(Self::Skip),
            "error" => Ok(Self::Error),
            other => Err(format!("`{other}` is not skip or error")),
        }
    }
}

impl Setting for Degenerate {
    fn to_toml(&self) -> Value {
        Value::String(match self {
            Self::Skip => "skip".into(),
            Self::Error => "error".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(format!("`{other}` is not train, val, test or all")),
        }
    }
}

impl Setting for Subset {
    fn to_toml(&self) -> Value {
        Value::String(
            match self {
                Self::Train => "train",
                Self::Val => "val",
                Self::Test => "test",
                Self::All => "all",
            }
            .into(),
        )
    }
}

impl Setting for PatchMode {
    fn to_toml(&self) -> Value {
        Value::String(self.to_string())
    }
}

/// `start:stop:step` threshold grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            start: 0.02,
            stop: 0.5,
            step: 0.02,
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad grid `{s}`")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [start, stop, step] => Ok(Self { start, stop, step }),
            _ => Err(format!("grid `{s}` is not start:stop:step")),
        }
    }
}

impl Setting for Grid {
    fn to_toml(&self) -> Value {
        Value::String(format!("{}:{}:{}", self.start, self.stop, self.step))
    }
}

/// What `train` stores next to the weights; `eval` and `classify` rebuild
/// the model and the split from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub best_epoch: Option<usize>,
    pub samples: usize,
}

struct SourceSpec {
    data: Option<PathBuf>,
    trips: Option<PathBuf>,
    labels: Option<PathBuf>,
}

fn resolve_source(r: &mut Resolver, s: Source) -> Result<SourceSpec, CliError> {
    let spec = SourceSpec {
        data: r.optional("data", s.data)?,
        trips: r.optional("trips", s.trips)?,
        labels: r.optional("labels", s.labels)?,
    };
    if spec.data.is_some() == spec.trips.is_some() {
        return Err(CliError::Usage("give exactly one of --data or --trips".into()));
    }
    Ok(spec)
}

/// Loads samples; raw trips are cleaned and halved. With `keep_exact`, a
/// trip that already has one sample's length is kept whole.
fn load_source(spec: &SourceSpec, keep_exact: bool) -> Result<Dataset, CliError> {
    let mut dataset = match (&spec.data, &spec.trips) {
        (Some(dir), _) => Dataset::load(dir)?,
        (None, Some(path)) => {
            let trips = load_trips(path)?;
            let (exact, rest): (Vec<_>, Vec<_>) = trips
                .into_iter()
                .partition(|t| keep_exact && t.len() == data::SEQUENCE_LEN);
            let mut samples: Vec<Sample> = exact
                .into_iter()
                .map(|t| {
                    let columns = [t.speed, t.accel, t.jerk];
                    let features = FeatureMatrix::from_columns(&columns, &data::FEATURE_NAMES, DEFAULT_DT)
                        .map_err(|source| data::DataError::Sample {
                            id: t.trip_id.clone(),
                            source,
                        })?;
                    Ok(Sample {
                        id: t.trip_id,
                        features,
                        label: t.label,
                    })
                })
                .collect::<Result<_, CliError>>()?;
            let (halves, dropped) = clean_and_split(&rest);
            if !dropped.is_empty() {
                log::info!("{} trip(s) dropped during cleaning", dropped.len());
            }
            samples.extend(halves);
            Dataset { samples }
        }
        (None, None) => unreachable!("checked by resolve_source"),
    };
    if let Some(path) = &spec.labels {
        dataset.apply_labels(&read_labels(path)?);
    }
    if dataset.is_empty() {
        return Err(CliError::Data("no usable samples".into()));
    }
    Ok(dataset)
}

fn out_dir(r: &mut Resolver, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let out: PathBuf = r.required("out", flag)?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn same_dir(a: &Path, b: &Path) -> bool {
    matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

/// Removes (or rejects) samples with a constant feature column, which
/// have no angular encoding.
fn usable_samples(samples: Vec<Sample>, policy: Degenerate) -> Result<(Vec<Sample>, Vec<String>), CliError> {
    let mut keep = Vec::with_capacity(samples.len());
    let mut skipped = Vec::new();
    for s in samples {
        let bad = (0..s.features.num_features()).find(|&i| gaf::normalize_series(&s.features.column(i)).is_err());
        match (bad, policy) {
            (None, _) => keep.push(s),
            (Some(i), Degenerate::Skip) => {
                log::warn!("skipping `{}`: feature `{}` is constant", s.id, s.features.feature_names()[i]);
                skipped.push(s.id);
            }
            (Some(i), Degenerate::Error) => {
                return Err(data::DataError::Sample {
                    id: s.id,
                    source: GafError::DegenerateSeries {
                        feature: Some(s.features.feature_names()[i].clone()),
                    },
                }
                .into())
            }
        }
    }
    Ok((keep, skipped))
}

fn labels_of(samples: &[Sample]) -> Result<Vec<usize>, CliError> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| CliError::Data(format!("sample `{}` has no label (see --labels)", s.id)))
        })
        .collect()
}

fn labels_csv(ids: impl Iterator<Item = (String, usize)>) -> String {
    let mut out = String::from("trip_id,class\n");
    for (id, class) in ids {
        let _ = writeln!(out, "{id},{class}");
    }
    out
}

pub fn synth(a: SynthArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("synth", config)?;
    let regimes = Regime::reference();
    let counts = r.get("counts", a.counts, List(vec![250; regimes.len()]))?;
    let seed = r.seed(a.seed, 0)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    if counts.0.len() != regimes.len() {
        return Err(CliError::Usage(format!(
            "--counts needs {} values, got {}",
            regimes.len(),
            counts.0.len()
        )));
    }
    r.write_echo(&out)?;
    let dataset = synth_generate(&regimes, &counts.0, seed)?;
    dataset.save(&out)?;
    let labels = dataset.labels().expect("synthetic samples are labeled");
    let features: Vec<FeatureMatrix> = dataset.samples.iter().map(|s| s.features.clone()).collect();
    let summary = class_summaries(&labels, &features, regimes.len());
    write(&out.join("summary.csv"), summary_csv(&summary))?;
    println!("{} samples written to {}", dataset.len(), out.display());
    Ok(())
}

pub fn cluster(a: ClusterArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("cluster", config)?;
    let spec = resolve_source(&mut r, a.source)?;
    let theta = r.optional("theta", a.theta)?;
    let grid = r.get("grid", a.grid, Grid::default())?;
    let literal = r.switch("literal-cosine", a.literal_cosine)?;
    let policy = r.get("degenerate", a.degenerate, Degenerate::Skip)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    if spec.data.as_deref().is_some_and(|d| same_dir(d, &out)) {
        return Err(CliError::Usage("--out must differ from --data so labels.csv is not overwritten".into()));
    }
    r.write_echo(&out)?;
    let mode = if literal {
        DistanceMode::LiteralCosine
    } else {
        DistanceMode::Angular
    };

    let dataset = load_source(&spec, false)?;
    let mut samples = Vec::with_capacity(dataset.len());
    let mut skipped = Vec::new();
    for s in dataset.samples {
        if s.features.last_row().iter().all(|&v| v == 0.0) {
            if policy == Degenerate::Error {
                return Err(CliError::Data(format!("sample `{}` has a zero endpoint", s.id)));
            }
            log::warn!("skipping `{}`: zero endpoint", s.id);
            skipped.push(s.id);
        } else {
            samples.push(s);
        }
    }
    if samples.is_empty() {
        return Err(CliError::Data("no sample has a usable endpoint".into()));
    }
    let features: Vec<FeatureMatrix> = samples.iter().map(|s| s.features.clone()).collect();

    let elbow = match theta {
        Some(_) => None,
        None => Some(elbow_select(
            &features,
            &theta_grid(grid.start, grid.stop, grid.step),
            mode,
        )?),
    };
    let threshold = theta.or(elbow.as_ref().map(|e| e.threshold)).expect("one of the two");
    let model = qb_cluster(&features, threshold, mode)?;
    let (labels, summaries) = label_dataset(&model, &features);

    write(
        &out.join(data::LABELS_FILE),
        labels_csv(samples.iter().map(|s| s.id.clone()).zip(labels.iter().copied())),
    )?;
    write(&out.join("summary.csv"), summary_csv(&summaries))?;
    if let Some(e) = &elbow {
        write(&out.join("elbow.csv"), e.to_csv())?;
    }
    let truth: Option<Vec<usize>> = samples.iter().map(|s| s.label).collect();
    let agreement = truth.and_then(|t| matched_agreement(&t, &labels).ok());
    let info = json!({
        "threshold": threshold,
        "mode": mode,
        "clusters": model.num_clusters(),
        "elbow_degenerate": elbow.as_ref().map(|e| e.degenerate),
        "skipped": skipped,
        "agreement_with_input_labels": agreement,
    });
    write(&out.join("clusters.json"), serde_json::to_string_pretty(&info).expect("json"))?;

    println!("threshold {threshold}: {} clusters", model.num_clusters());
    print!("{}", summary_csv(&summaries));
    if let Some(a) = agreement {
        println!("agreement with input labels {a:.4}");
    }
    Ok(())
}

pub fn transform(a: TransformArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("transform", config)?;
    let spec = resolve_source(&mut r, a.source)?;
    let trip: Option<String> = r.optional("trip", a.trip)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    r.write_echo(&out)?;
    let dataset = load_source(&spec, true)?;
    let selected: Vec<&Sample> = match &trip {
        Some(t) => dataset
            .samples
            .iter()
            .filter(|s| &s.id == t || s.id.strip_suffix("_a").or(s.id.strip_suffix("_b")) == Some(t.as_str()))
            .collect(),
        None => dataset.samples.iter().collect(),
    };
    if selected.is_empty() {
        return Err(CliError::Data(format!(
            "no sample matches `{}`",
            trip.unwrap_or_default()
        )));
    }
    let mut files = 0;
    for s in selected {
        let image = gaf::encode_matrix(&s.features).map_err(|source| data::DataError::Sample {
            id: s.id.clone(),
            source,
        })?;
        let dir = out.join(&s.id);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (c, name) in image.channel_names().iter().enumerate() {
            let path = dir.join(format!("{}.pgm", name.replace('/', "_")));
            gaf::render_channel(&image, c, &path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            files += 1;
        }
        log::info!("{}: {}x{}x{}", s.id, image.height(), image.width(), image.channels());
    }
    println!("{files} images written to {}", out.display());
    Ok(())
}

pub fn train(a: TrainArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("train", config)?;
    let spec = resolve_source(&mut r, a.source)?;
    let defaults = TrainConfig::default();
    let split = r.get("split", a.split, List(defaults.split.to_vec()))?;
    let split: [f64; 3] = split
        .0
        .try_into()
        .map_err(|v: Vec<f64>| CliError::Usage(format!("--split needs 3 fractions, got {}", v.len())))?;
    let train_config = TrainConfig {
        epochs: r.get("epochs", a.epochs, defaults.epochs)?,
        batch_size: r.get("batch-size", a.batch_size, defaults.batch_size)?,
        learning_rate: r.get("learning-rate", a.learning_rate, defaults.learning_rate)?,
        weight_decay: r.get("weight-decay", a.weight_decay, defaults.weight_decay)?,
        split,
        seed: r.seed(a.seed, defaults.seed)?,
        threads: r.get("threads", a.threads, defaults.threads)?,
    };
    let ablation = Ablation {
        no_attention: r.switch("no-attention", a.no_attention)?,
        no_gaf: r.switch("no-gaf", a.no_gaf)?,
    };
    let reference = ModelConfig::reference(data::SEQUENCE_LEN, &data::FEATURE_NAMES);
    let patch_mode = r.get("patch-mode", a.patch_mode, reference.vit.patch_mode)?;
    let patch_size = r.get("patch-size", a.patch_size, reference.vit.patch_size)?;
    let embed_dim = r.get("embed-dim", a.embed_dim, reference.vit.embed_dim)?;
    let depth = r.get("depth", a.depth, reference.vit.depth)?;
    let heads = r.get("heads", a.heads, reference.vit.heads)?;
    let mlp_dim = r.get("mlp-dim", a.mlp_dim, reference.vit.mlp_dim)?;
    let reduction_ratio = r.get("reduction-ratio", a.reduction_ratio, reference.reduction_ratio)?;
    let policy = r.get("degenerate", a.degenerate, Degenerate::Skip)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    train_config.validate()?;
    r.write_echo(&out)?;

    let dataset = load_source(&spec, false)?;
    let (samples, skipped) = usable_samples(dataset.samples, policy)?;
    if samples.is_empty() {
        return Err(CliError::Data("every sample was skipped".into()));
    }
    let labels = labels_of(&samples)?;
    let first = &samples[0].features;
    let names: Vec<&str> = first.feature_names().iter().map(String::as_str).collect();
    if let Some(s) = samples
        .iter()
        .find(|s| s.features.len() != first.len() || s.features.feature_names() != first.feature_names())
    {
        return Err(CliError::Data(format!(
            "sample `{}` does not match the shape of `{}`",
            s.id, samples[0].id
        )));
    }
    let mut model_config = ModelConfig::reference(first.len(), &names);
    model_config.reduction_ratio = reduction_ratio;
    model_config.ablation = ablation;
    let vit = &mut model_config.vit;
    vit.patch_mode = patch_mode;
    vit.patch_size = patch_size;
    vit.embed_dim = embed_dim;
    vit.depth = depth;
    vit.heads = heads;
    vit.mlp_dim = mlp_dim;
    vit.num_classes = labels.iter().max().map_or(1, |m| m + 1);

    let split = split_dataset(samples.len(), &train_config)?;
    let mut model = GafVit::new(model_config.clone(), train_config.seed)?;
    log::info!(
        "{} samples ({} train / {} val / {} test), {} classes, {} parameters",
        samples.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        model_config.vit.num_classes,
        model.store().num_scalars()
    );
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let features: Vec<FeatureMatrix> = samples.into_iter().map(|s| s.features).collect();
    let outcome = fit(&mut model, &features, &labels, &split, &train_config, |e| {
        log::info!(
            "epoch {:>3}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            e.val_loss,
            e.val_acc
        );
    })?;

    write(&out.join(HISTORY_FILE), outcome.history.to_csv())?;
    let record = RunRecord {
        model: model_config,
        train: train_config,
        best_epoch: outcome.best_epoch,
        samples: ids.len(),
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.best, &record)?;
    write(&out.join("split.csv"), split_csv(&ids, &split))?;
    if !skipped.is_empty() {
        write(&out.join("skipped.csv"), format!("trip_id\n{}\n", skipped.join("\n")))?;
    }
    match outcome.best_epoch {
        Some(e) => println!(
            "best validation loss {:.4} at epoch {e}; checkpoint {}",
            outcome.history.records[e - 1].val_loss,
            out.join(CHECKPOINT_FILE).display()
        ),
        None => println!("no epochs run; checkpoint holds the initial weights"),
    }
    Ok(())
}

fn split_csv(ids: &[String], split: &Split) -> String {
    let mut part = vec![""; ids.len()];
    for (name, indices) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for &i in indices {
            part[i] = name;
        }
    }
    let mut out = String::from("trip_id,partition\n");
    for (id, p) in ids.iter().zip(part) {
        let _ = writeln!(out, "{id},{p}");
    }
    out
}

fn load_model(path: &Path) -> Result<(GafVit, RunRecord), CliError> {
    let checkpoint = load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let record: RunRecord = serde_json::from_value(checkpoint.config)
        .map_err(|e| CliError::Data(format!("{}: unreadable run record: {e}", path.display())))?;
    let model = GafVit::from_parts(record.model.clone(), checkpoint.store)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((model, record))
}

pub fn eval(a: EvalArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("eval", config)?;
    let checkpoint: PathBuf = r.required("checkpoint", a.checkpoint)?;
    let spec = resolve_source(&mut r, a.source)?;
    let subset = r.get("subset", a.subset, Subset::Test)?;
    let threads = r.get("threads", a.threads, 1)?;
    let policy = r.get("degenerate", a.degenerate, Degenerate::Skip)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    r.write_echo(&out)?;

    let (model, record) = load_model(&checkpoint)?;
    let dataset = load_source(&spec, false)?;
    let (samples, _) = usable_samples(dataset.samples, policy)?;
    if samples.len() != record.samples {
        return Err(CliError::Data(format!(
            "dataset has {} usable samples but the checkpoint was trained on {}",
            samples.len(),
            record.samples
        )));
    }
    let labels = labels_of(&samples)?;
    let split = split_dataset(samples.len(), &record.train)?;
    let indices: Vec<usize> = match subset {
        Subset::Train => split.train.clone(),
        Subset::Val => split.val.clone(),
        Subset::Test => split.test.clone(),
        Subset::All => (0..samples.len()).collect(),
    };
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let features: Vec<FeatureMatrix> = samples.into_iter().map(|s| s.features).collect();
    let result = evaluate(&model, &features, &labels, &indices, threads)?;
    let truth: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let cm = confusion(&truth, &result.predictions, model.config().vit.num_classes)?;
    let rep = report(&cm)?;

    let mut metrics = serde_json::to_value(&rep).expect("report serializes");
    metrics["loss"] = json!(result.loss);
    metrics["subset"] = json!(subset.to_toml().as_str());
    write(&out.join("metrics.json"), serde_json::to_string_pretty(&metrics).expect("json"))?;
    write(&out.join("metrics.txt"), rep.to_table())?;
    write(&out.join("confusion.csv"), cm.to_csv())?;
    let mut preds = String::from("trip_id,true,predicted\n");
    for ((&i, t), p) in indices.iter().zip(&truth).zip(&result.predictions) {
        let _ = writeln!(preds, "{},{t},{p}", ids[i]);
    }
    write(&out.join("predictions.csv"), preds)?;
    print!("{}", rep.to_table());
    Ok(())
}

pub fn classify(a: ClassifyArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("classify", config)?;
    let checkpoint: PathBuf = r.required("checkpoint", a.checkpoint)?;
    let input: Option<PathBuf> = r.optional("input", a.input)?;
    let data_dir: Option<PathBuf> = r.optional("data", a.data)?;
    let trip: Option<String> = r.optional("trip", a.trip)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    r.write_echo(&out)?;

    let sample = match (input, data_dir, trip) {
        (Some(path), None, None) => {
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let mut d = Dataset::read_features(file, &path.display().to_string())?;
            if d.len() != 1 {
                return Err(CliError::Data(format!(
                    "{}: expected one sample, found {}",
                    path.display(),
                    d.len()
                )));
            }
            d.samples.remove(0)
        }
        (None, Some(dir), Some(id)) => Dataset::load(&dir)?
            .samples
            .into_iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CliError::Data(format!("{}: no sample `{id}`", dir.display())))?,
        _ => return Err(CliError::Usage("give --input FILE, or --data DIR with --trip ID".into())),
    };

    let (model, _) = load_model(&checkpoint)?;
    let (class, logits) = model.classify_trajectory(&sample.features)?;
    let attention = model
        .attention_weights(&model.prepare(&sample.features)?)?
        .map(|w| w.values().to_vec());
    let result = json!({
        "sample": sample.id,
        "class": class,
        "logits": logits.0,
        "probabilities": logits.probabilities(),
        "attention_weights": attention,
    });
    write(&out.join("classification.json"), serde_json::to_string_pretty(&result).expect("json"))?;
    println!("{} {class}", sample.id);
    Ok(())
}

/// Aligns the signs of the first attention layer with the squeezed channel
/// means so every hidden ReLU is active at the check point.
fn open_gate(model: &mut GafVit, sample: &FeatureMatrix) -> Result<(), CliError> {
    let u = squeeze(&gaf::encode_matrix(sample)?);
    let Some(id) = model.store().id("attention.w1") else {
        return Ok(());
    };
    let w1 = model.store_mut().value_mut(id);
    for h in 0..w1.rows() {
        for (c, &uc) in u.iter().enumerate() {
            w1[(h, c)] = w1[(h, c)].abs() * if uc < 0.0 { -1.0 } else { 1.0 };
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs, config: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::new("gradcheck", config)?;
    let seed = r.seed(a.seed, 0)?;
    let stride = r.get("stride", a.stride, 1)?;
    let out = out_dir(&mut r, a.out)?;
    r.finish()?;
    r.write_echo(&out)?;

    let base = ModelConfig::toy();
    let phase = seed as f64 * 0.37;
    let series: Vec<f64> = (0..base.sequence_len)
        .map(|i| (0.7 * i as f64 + phase).sin() + 0.1 * i as f64)
        .collect();
    let sample = FeatureMatrix::from_columns(&[series], &["speed"], DEFAULT_DT)?;
    let label = (seed % base.vit.num_classes as u64) as usize;

    let mut square = base.clone();
    square.vit.patch_mode = PatchMode::Square;
    let mut no_gaf = base.clone();
    no_gaf.ablation.no_gaf = true;
    let mut checks = Vec::new();
    for (name, config, tolerance, attention_only) in [
        ("full model, strip patches", base.clone(), 1e-3, false),
        ("full model, square patches", square, 1e-3, false),
        ("attention block only", base.clone(), 1e-4, true),
        ("linear reshape instead of GAF", no_gaf, 1e-3, false),
    ] {
        let mut model = GafVit::new(config, seed)?;
        if !model.config().ablation.no_gaf {
            open_gate(&mut model, &sample)?;
        }
        if attention_only {
            let frozen: Vec<_> = model
                .store()
                .iter()
                .filter(|(_, p)| !p.name.starts_with("attention."))
                .map(|(id, _)| id)
                .collect();
            for id in frozen {
                model.store_mut().set_frozen(id, true);
            }
        }
        let rep = gradient_check(&model, &sample, label, stride)?;
        // An all-zero gradient would pass trivially.
        let passed = rep.passes(tolerance) && rep.entries.iter().any(|e| e.analytic != 0.0);
        println!(
            "{} {name}: max relative error {:.3e} over {} entries (tolerance {tolerance:e})",
            if passed { "ok  " } else { "FAIL" },
            rep.max_rel_error(),
            rep.entries.len()
        );
        checks.push(json!({
            "name": name,
            "tolerance": tolerance,
            "checked": rep.entries.len(),
            "max_rel_error": rep.max_rel_error(),
            "worst": rep.worst(),
            "passed": passed,
        }));
    }
    let failed = checks.iter().filter(|c| c["passed"] == json!(false)).count();
    write(&out.join("gradcheck.json"), serde_json::to_string_pretty(&checks).expect("json"))?;
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}
