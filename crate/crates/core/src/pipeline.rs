//! File-based pipeline stages behind the `oodkit` command-line verbs.
//!
//! Every stage reads its inputs from files and writes its outputs to files,
//! so stages can be run, inspected and resumed independently.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::data::{
    load_dataset, split, synthesize, ChannelStats, GeneratorKind, LabeledImageSet, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairing, write_eval_csv, write_eval_json, EvalRow};
use crate::scoring::{
    calibrate_on, fit_stats, read_scores_csv, score_embeddings, write_scores_csv, ClassStats, FitOptions,
    Metric, Thresholds,
};
use crate::tensor::{DType, Float};
use crate::train::{train_with_progress, parse_kv, Precision, TrainConfig, TrainReport};
use crate::vit::{extract, EmbeddingSet, NormPlacement, ViTConfig, ViTParams, PROFILES};

/// Everything an experiment needs, read from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id_data: Option<PathBuf>,
    pub ood_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Model profile name.
    pub profile: String,
    /// Per-key overrides of the profile (`image_size`, `patch_size`, ...).
    pub model_overrides: BTreeMap<String, String>,
    pub train: TrainConfig,
    pub fit: FitOptions,
    pub target_tpr: f64,
    pub seed: u64,
    /// Held-out ID fractions used by the full pipeline.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub eval_batch_size: usize,
    /// Standardize inputs per channel with training-set statistics.
    pub standardize: bool,
    pub synth: SyntheticSpec,
    pub synth_name: String,
    /// Print per-epoch progress to stderr.
    #[serde(skip)]
    pub verbose: bool,
}

const MODEL_KEYS: [&str; 8] = [
    "image_size",
    "patch_size",
    "layers",
    "hidden_size",
    "mlp_size",
    "heads",
    "norm",
    "layer_norm_eps",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            id_data: None,
            ood_data: None,
            model: None,
            stats: None,
            out_dir: PathBuf::from("out"),
            profile: "tiny-4".into(),
            model_overrides: BTreeMap::new(),
            train: TrainConfig::default(),
            fit: FitOptions::default(),
            target_tpr: 0.95,
            seed: 0,
            val_fraction: 0.15,
            test_fraction: 0.15,
            eval_batch_size: 128,
            standardize: true,
            synth: SyntheticSpec::default(),
            synth_name: "synthetic".into(),
            verbose: false,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text).map_err(|e| e.in_file(path))
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = parse_kv(text)?;
        let mut cfg = ExperimentConfig::default();
        // profiles first so explicit keys override them
        if let Some(p) = kv.remove("train_profile") {
            cfg.train = TrainConfig::profile(&p)?;
        }
        for (k, v) in kv {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "id_data" => self.id_data = Some(value.into()),
            "ood_data" => self.ood_data = Some(value.into()),
            "model" => self.model = Some(value.into()),
            "stats" => self.stats = Some(value.into()),
            "out_dir" => self.out_dir = value.into(),
            "profile" => self.profile = value.into(),
            "train_profile" => self.train = TrainConfig::profile(value)?,
            "metric" => self.fit.metric = value.parse()?,
            "shared_covariance" => self.fit.shared_covariance = flag(key, value)?,
            "jitter" => self.fit.relative_jitter = num(key, value)?,
            "target_tpr" => self.target_tpr = num(key, value)?,
            "seed" => self.set_seed(num(key, value)?),
            "val_fraction" => self.val_fraction = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "eval_batch_size" => self.eval_batch_size = num(key, value)?,
            "standardize" => self.standardize = flag(key, value)?,
            k if MODEL_KEYS.contains(&k) => {
                self.model_overrides.insert(k.into(), value.into());
            }
            k if k.starts_with("synth.") => self.set_synth(&k[6..], value)?,
            k => {
                if !self.train.set(k, value)? {
                    return Err(Error::Config(format!("unknown config key {k:?}")));
                }
            }
        }
        Ok(())
    }

    fn set_synth(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "kind" => s.kind = value.parse::<GeneratorKind>()?,
            "classes" => s.num_classes = num(key, value)?,
            "samples_per_class" => s.samples_per_class = num(key, value)?,
            "image_size" => s.image_size = num(key, value)?,
            "channels" => s.channels = num(key, value)?,
            "noise_sigma" => s.noise_sigma = num(key, value)?,
            "shift" => s.shift = num(key, value)?,
            "seed" => s.seed = num(key, value)?,
            "name" => self.synth_name = value.into(),
            k => return Err(Error::Config(format!("unknown config key \"synth.{k}\""))),
        }
        Ok(())
    }

    /// One seed drives training, splitting and synthesis.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !PROFILES.contains(&self.profile.as_str()) {
            return Err(Error::Config(format!(
                "unknown model profile {:?}; expected one of {PROFILES:?}",
                self.profile
            )));
        }
        self.train.validate()?;
        if !(self.target_tpr > 0.0 && self.target_tpr <= 1.0) {
            return Err(Error::Config(format!("target_tpr {} outside (0, 1]", self.target_tpr)));
        }
        let held = self.val_fraction + self.test_fraction;
        if !(self.val_fraction > 0.0 && self.test_fraction > 0.0 && held < 1.0) {
            return Err(Error::Config(
                "val_fraction and test_fraction must be positive and sum below 1".into(),
            ));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolves the model shape for a dataset: the profile, the overrides,
    /// and the dataset's channel and class counts.
    pub fn model_config(&self, data: &LabeledImageSet) -> Result<ViTConfig> {
        let mut m = ViTConfig::profile(&self.profile)?
            .with_classes(data.num_classes())
            .with_channels(data.channels);
        for (k, v) in &self.model_overrides {
            match k.as_str() {
                "image_size" => m.image_size = num(k, v)?,
                "patch_size" => m.patch_size = num(k, v)?,
                "layers" => m.layers = num(k, v)?,
                "hidden_size" => m.hidden_size = num(k, v)?,
                "mlp_size" => m.mlp_size = num(k, v)?,
                "heads" => m.heads = num(k, v)?,
                "layer_norm_eps" => m.layer_norm_eps = num(k, v)?,
                "norm" => {
                    m.norm = match v.as_str() {
                        "pre-norm" | "pre" => NormPlacement::PreNorm,
                        "post-norm" | "post" => NormPlacement::PostNorm,
                        _ => return Err(bad(k, v)),
                    }
                }
                _ => unreachable!("filtered by MODEL_KEYS"),
            }
        }
        if data.height != m.image_size || data.width != m.image_size {
            return Err(Error::Config(format!(
                "dataset images are {}x{} but profile {:?} expects {}x{}; set image_size",
                data.height, data.width, self.profile, m.image_size, m.image_size
            )));
        }
        m.validate()?;
        Ok(m)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// File name up to its first dot: `id_test.emb.oodt` -> `id_test`.
pub fn base_name(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or("").to_string()
}

fn load_data(path: &Path) -> Result<LabeledImageSet> {
    load_dataset(path).map_err(|e| e.in_file(path))
}

/// Model parameters in whichever precision the checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyParams {
    F32(ViTParams<f32>),
    F64(ViTParams<f64>),
}

/// A checkpoint: architecture, parameters and the input standardization the
/// parameters were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ViTConfig,
    pub params: AnyParams,
    pub input_norm: Option<ChannelStats>,
}

const INPUT_NORM_KEY: &str = "input_standardization";

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let load = || -> Result<Model> {
            let params = match c.entry("head.weight")?.buffer.dtype() {
                DType::F64 => {
                    let (config, p) = ViTParams::<f64>::from_container(&c)?;
                    (config, AnyParams::F64(p))
                }
                _ => {
                    let (config, p) = ViTParams::<f32>::from_container(&c)?;
                    (config, AnyParams::F32(p))
                }
            };
            let input_norm = match c.metadata.get(INPUT_NORM_KEY) {
                Some(v) => Some(serde_json::from_value::<ChannelStats>(v.clone())?),
                None => None,
            };
            Ok(Model {
                config: params.0,
                params: params.1,
                input_norm,
            })
        };
        load().map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = match &self.params {
            AnyParams::F32(p) => p.to_container(&self.config)?,
            AnyParams::F64(p) => p.to_container(&self.config)?,
        };
        if let Some(n) = &self.input_norm {
            c.metadata.insert(INPUT_NORM_KEY.into(), serde_json::to_value(n)?);
        }
        c.save(path)
    }

    /// Embeds `set` after applying the model's own input standardization.
    pub fn extract(&self, set: &LabeledImageSet, batch: usize, source: &str) -> Result<EmbeddingSet> {
        let mut set = set.clone();
        set.standardization = self.input_norm.clone();
        set.validate()?;
        match &self.params {
            AnyParams::F32(p) => extract(p, &self.config, &set, batch, source),
            AnyParams::F64(p) => extract(p, &self.config, &set, batch, source),
        }
    }
}

/// `synth`: writes `<out>/<name>.oodd`.
pub fn cmd_synth(spec: &SyntheticSpec, name: &str, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let path = out.join(format!("{name}.oodd"));
    synthesize(spec)?.save(&path)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub model: PathBuf,
    pub report_csv: PathBuf,
    pub report_json: PathBuf,
    pub report: TrainReport,
}

fn run_training<T: Float>(
    cfg: &ExperimentConfig,
    model: &ViTConfig,
    train_set: &LabeledImageSet,
    held_out: &LabeledImageSet,
) -> Result<(ViTParams<T>, TrainReport)> {
    let params = ViTParams::<T>::init(model, cfg.train.seed)?;
    let verbose = cfg.verbose;
    train_with_progress(params, model, train_set, Some(held_out), &cfg.train, |r| {
        if verbose {
            eprintln!(
                "epoch {:>3}  loss {:.4}  train_acc {:.4}  test_acc {:.4}  lr {:.5}",
                r.epoch,
                r.loss,
                r.train_acc,
                r.test_acc.unwrap_or(f64::NAN),
                r.lr
            );
        }
    })
}

/// `train`: fits a classifier and writes `model.oodt`, `train_report.csv`
/// and `train_report.json` to `out`. Without `held_out`, `val_fraction` of
/// the data is split off (stratified, seeded) for checkpoint selection.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, held_out: Option<&Path>, out: &Path) -> Result<TrainOutputs> {
    cfg.validate()?;
    let full = load_data(data)?;
    let (train_set, held) = match held_out {
        Some(p) => (full, load_data(p)?),
        None => {
            let (tr, va, _) = split(&full, [1.0 - cfg.val_fraction, cfg.val_fraction, 0.0], cfg.seed)?;
            (tr, va)
        }
    };
    if held.is_empty() {
        return Err(Error::Config("held-out set is empty; raise val_fraction".into()));
    }
    let model = cfg.model_config(&train_set)?;
    let input_norm = cfg.standardize.then(|| train_set.channel_stats());
    let (mut train_set, mut held) = (train_set, held);
    train_set.standardization = input_norm.clone();
    held.standardization = input_norm.clone();
    ensure_dir(out)?;
    let (params, report) = match cfg.train.precision {
        Precision::F32 => {
            let (p, r) = run_training::<f32>(cfg, &model, &train_set, &held)?;
            (AnyParams::F32(p), r)
        }
        Precision::F64 => {
            let (p, r) = run_training::<f64>(cfg, &model, &train_set, &held)?;
            (AnyParams::F64(p), r)
        }
    };
    let outputs = TrainOutputs {
        model: out.join("model.oodt"),
        report_csv: out.join("train_report.csv"),
        report_json: out.join("train_report.json"),
        report,
    };
    Model {
        config: model,
        params,
        input_norm,
    }
    .save(&outputs.model)?;
    outputs.report.write_csv(&outputs.report_csv)?;
    outputs.report.write_json(&outputs.report_json)?;
    Ok(outputs)
}

/// `extract`: writes `<out>/<data name>.emb.oodt`.
pub fn cmd_extract(model: &Path, data: &Path, out: &Path, batch_size: usize) -> Result<PathBuf> {
    let m = Model::load(model)?;
    let set = load_data(data)?;
    let name = base_name(data);
    let emb = m.extract(&set, batch_size, &name).map_err(|e| e.in_file(data))?;
    ensure_dir(out)?;
    let path = out.join(format!("{name}.emb.oodt"));
    emb.save(&path)?;
    Ok(path)
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    EmbeddingSet::load(path).map_err(|e| e.in_file(path))
}

/// `fit`: writes `<out>/stats.oodt`.
pub fn cmd_fit(embeddings: &Path, options: &FitOptions, out: &Path) -> Result<PathBuf> {
    let emb = load_embeddings(embeddings)?;
    let stats = fit_stats(&emb, options).map_err(|e| e.in_file(embeddings))?;
    ensure_dir(out)?;
    let path = out.join("stats.oodt");
    stats.save(&path)?;
    Ok(path)
}

/// What to score.
#[derive(Debug, Clone)]
pub enum ScoreInput {
    Embeddings(PathBuf),
    /// Raw images, run through the model first.
    Images { model: PathBuf, data: PathBuf },
}

/// Where thresholds come from.
#[derive(Debug, Clone)]
pub enum ThresholdSource {
    Fixed(Thresholds),
    /// Calibrated on ID validation embeddings at a target TPR.
    Calibrate { embeddings: PathBuf, target_tpr: f64 },
}

#[derive(Debug, Clone)]
pub struct ScoreOutputs {
    pub scores: PathBuf,
    pub thresholds: PathBuf,
    pub outliers: usize,
    pub total: usize,
}

/// `score`: writes `<out>/<name>.scores.csv` and
/// `<out>/<name>.thresholds.json`. The metric defaults to the one the
/// statistics were fitted for.
pub fn cmd_score(
    stats: &Path,
    input: &ScoreInput,
    thresholds: &ThresholdSource,
    metric: Option<Metric>,
    out: &Path,
) -> Result<ScoreOutputs> {
    let st = ClassStats::load(stats).map_err(|e| e.in_file(stats))?;
    let metric = metric.unwrap_or(st.metric);
    let (emb, name) = match input {
        ScoreInput::Embeddings(p) => (load_embeddings(p)?, base_name(p)),
        ScoreInput::Images { model, data } => {
            let m = Model::load(model)?;
            let name = base_name(data);
            (m.extract(&load_data(data)?, 128, &name)?, name)
        }
    };
    let t = match thresholds {
        ThresholdSource::Fixed(t) => {
            t.validate()?;
            *t
        }
        ThresholdSource::Calibrate { embeddings, target_tpr } => {
            let val = load_embeddings(embeddings)?;
            calibrate_on(&val, &st, metric, *target_tpr).map_err(|e| e.in_file(embeddings))?
        }
    };
    let decisions = score_embeddings(&emb, &st, &t, metric)?;
    ensure_dir(out)?;
    let outputs = ScoreOutputs {
        scores: out.join(format!("{name}.scores.csv")),
        thresholds: out.join(format!("{name}.thresholds.json")),
        outliers: decisions.iter().filter(|d| d.is_outlier).count(),
        total: decisions.len(),
    };
    write_scores_csv(&outputs.scores, &decisions)?;
    let json = serde_json::json!({
        "metric": metric.name(),
        "t_distance": t.t_distance,
        "t_conf": t.t_conf,
    });
    fs::write(&outputs.thresholds, serde_json::to_string_pretty(&json)?)
        .map_err(|e| Error::io(&outputs.thresholds, e))?;
    Ok(outputs)
}

/// `eval`: writes `<out>/eval.csv` and `<out>/eval.json`.
pub fn cmd_eval(
    id_scores: &Path,
    ood_scores: &Path,
    id_name: Option<&str>,
    ood_name: Option<&str>,
    metric: &str,
    out: &Path,
) -> Result<Vec<EvalRow>> {
    let id = read_scores_csv(id_scores).map_err(|e| e.in_file(id_scores))?;
    let ood = read_scores_csv(ood_scores).map_err(|e| e.in_file(ood_scores))?;
    let id_name = id_name.map(str::to_string).unwrap_or_else(|| base_name(id_scores));
    let ood_name = ood_name.map(str::to_string).unwrap_or_else(|| base_name(ood_scores));
    let rows = evaluate_pairing(&id_name, &ood_name, metric, &id, &ood)?;
    ensure_dir(out)?;
    write_eval_csv(&out.join("eval.csv"), &rows)?;
    write_eval_json(&out.join("eval.json"), &rows)?;
    Ok(rows)
}

/// Paths produced by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub model: PathBuf,
    pub embeddings: Vec<PathBuf>,
    pub stats: PathBuf,
    pub scores: Vec<PathBuf>,
    pub rows: Vec<EvalRow>,
    pub report: Option<TrainReport>,
}

struct Splits {
    train: PathBuf,
    val: PathBuf,
    test: PathBuf,
    ood: PathBuf,
}

fn write_splits(cfg: &ExperimentConfig, out: &Path) -> Result<Splits> {
    let id_path = cfg
        .id_data
        .as_deref()
        .ok_or_else(|| Error::Config("id_data is not set".into()))?;
    let ood = cfg
        .ood_data
        .clone()
        .ok_or_else(|| Error::Config("ood_data is not set".into()))?;
    let id = load_data(id_path)?;
    let train_frac = 1.0 - cfg.val_fraction - cfg.test_fraction;
    let (tr, va, te) = split(&id, [train_frac, cfg.val_fraction, cfg.test_fraction], cfg.seed)?;
    let dir = out.join("data");
    ensure_dir(&dir)?;
    let s = Splits {
        train: dir.join("id_train.oodd"),
        val: dir.join("id_val.oodd"),
        test: dir.join("id_test.oodd"),
        ood,
    };
    tr.save(&s.train)?;
    va.save(&s.val)?;
    te.save(&s.test)?;
    Ok(s)
}

/// Extract, fit, score and evaluate with an existing model.
fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Path,
    splits: &Splits,
    out: &Path,
) -> Result<PipelineOutputs> {
    let emb_dir = out.join("embeddings");
    let b = cfg.eval_batch_size;
    let train_emb = cmd_extract(model, &splits.train, &emb_dir, b)?;
    let val_emb = cmd_extract(model, &splits.val, &emb_dir, b)?;
    let test_emb = cmd_extract(model, &splits.test, &emb_dir, b)?;
    let ood_emb = cmd_extract(model, &splits.ood, &emb_dir, b)?;
    let stats = cmd_fit(&train_emb, &cfg.fit, out)?;
    let source = ThresholdSource::Calibrate {
        embeddings: val_emb.clone(),
        target_tpr: cfg.target_tpr,
    };
    let score_dir = out.join("scores");
    let id_scores = cmd_score(&stats, &ScoreInput::Embeddings(test_emb.clone()), &source, None, &score_dir)?;
    let ood_scores = cmd_score(&stats, &ScoreInput::Embeddings(ood_emb.clone()), &source, None, &score_dir)?;
    let ood_name = base_name(&splits.ood);
    let rows = cmd_eval(
        &id_scores.scores,
        &ood_scores.scores,
        Some("id_test"),
        Some(&ood_name),
        cfg.fit.metric.name(),
        out,
    )?;
    Ok(PipelineOutputs {
        model: model.to_path_buf(),
        embeddings: vec![train_emb, val_emb, test_emb, ood_emb],
        stats,
        scores: vec![id_scores.scores, ood_scores.scores],
        rows,
        report: None,
    })
}

/// Full run: split the ID data, train, extract, fit, score, evaluate.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineOutputs> {
    cfg.validate()?;
    ensure_dir(out)?;
    let splits = write_splits(cfg, out)?;
    let trained = cmd_train(cfg, &splits.train, Some(&splits.val), out)?;
    let mut outputs = evaluate_model(cfg, &trained.model, &splits, out)?;
    outputs.report = Some(trained.report);
    Ok(outputs)
}

/// Axis varied by [`cmd_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BatchSize,
    Epochs,
    Metric,
    ModelProfile,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_size" => Ok(SweepAxis::BatchSize),
            "epochs" => Ok(SweepAxis::Epochs),
            "metric" => Ok(SweepAxis::Metric),
            "model_profile" => Ok(SweepAxis::ModelProfile),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?}; expected batch_size, epochs, metric or model_profile"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Epochs => "epochs",
            SweepAxis::Metric => "metric",
            SweepAxis::ModelProfile => "model_profile",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        let key = self.name();
        match self {
            SweepAxis::BatchSize => cfg.train.batch_size = num(key, value)?,
            SweepAxis::Epochs => cfg.train.epochs = num(key, value)?,
            SweepAxis::Metric => cfg.fit.metric = value.parse()?,
            SweepAxis::ModelProfile => cfg.profile = value.to_string(),
        }
        cfg.validate()
    }
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub id_dataset: String,
    pub ood_dataset: String,
    pub metric: String,
    pub score_type: String,
    pub auroc: f64,
    pub aupr: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub best_test_acc: Option<f64>,
}

/// `sweep`: runs the pipeline once per axis value into
/// `<out>/<axis>=<value>/` and writes `<out>/sweep.csv`. A metric sweep
/// trains once and re-fits the statistics per metric.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // validate every value before any work starts
    let configs = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            axis.apply(&mut c, v)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;

    let mut shared: Option<(Splits, PathBuf, Option<f64>)> = None;
    if axis == SweepAxis::Metric {
        let base = out.join("model");
        ensure_dir(&base)?;
        let splits = write_splits(cfg, &base)?;
        let trained = cmd_train(cfg, &splits.train, Some(&splits.val), &base)?;
        shared = Some((splits, trained.model, trained.report.best_test_acc));
    }

    let mut rows = Vec::new();
    for (value, c) in values.iter().zip(&configs) {
        let dir = out.join(format!("{}={value}", axis.name()));
        let (eval_rows, acc) = match &shared {
            Some((splits, model, acc)) => {
                ensure_dir(&dir)?;
                (evaluate_model(c, model, splits, &dir)?.rows, *acc)
            }
            None => {
                let o = run_pipeline(c, &dir)?;
                let acc = o.report.as_ref().and_then(|r| r.best_test_acc);
                (o.rows, acc)
            }
        };
        rows.extend(eval_rows.into_iter().map(|r| SweepRow {
            axis: axis.name().to_string(),
            value: value.clone(),
            id_dataset: r.id_dataset,
            ood_dataset: r.ood_dataset,
            metric: r.metric,
            score_type: r.score_type,
            auroc: r.auroc,
            aupr: r.aupr,
            n_id: r.n_id,
            n_ood: r.n_ood,
            best_test_acc: acc,
        }));
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
