//! Experiment orchestration: run configs, the three evaluation regimes,
//! result CSVs, checkpoint sidecars, and the CLI commands.
//!
//! A run trains one model and reports accuracy and Reachability Ratio under
//! three regimes: held-out starts on train maps x train goals, train maps x
//! test goals, and test maps x test goals.

pub mod render;
pub mod sweep;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::dataset::{
    build_held_out_samples, build_regime_samples, build_samples, make_splits, save_dataset,
    DatasetError, Split, SplitConfig, SplitPlan,
};
use crate::gridworld::{door_masks, Cell, Map};
use crate::metrics::{reachability_ratio, MetricsError};
use crate::models::{Model, ModelError, ModelKind};
use crate::neural::checkpoint::{load_into, save_checkpoint, CheckpointError};
use crate::neural::gradcheck::{GradCheckError, GradCheckReport};
use crate::neural::layers::argmax_action;
use crate::trainer::{evaluate, train, ImageTable, TrainConfig, TrainError, TrainedModel};
use crate::verify;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("result row is malformed: {0}")]
    BadRow(String),
    #[error("{0}")]
    Invalid(String),
}

/// Everything one training/evaluation run needs, parsed from a config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub split: SplitConfig,
    pub seed: u64,
    pub kind: ModelKind,
    pub width: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub steps_per_epoch: Option<usize>,
    pub parallel: bool,
    pub deterministic: bool,
}

impl RunConfig {
    /// Read the run keys from a parsed config. `finish` is the caller's job
    /// so sweep configs can layer extra keys on the same file.
    pub fn from_kv(cfg: &KvConfig) -> Result<RunConfig, HarnessError> {
        let defaults = SplitConfig::default();
        let fractions = cfg.get_list(
            "goal_fractions",
            defaults.goal_fractions.to_vec(),
        )?;
        if fractions.len() != 3 {
            return Err(HarnessError::Invalid(
                "goal_fractions needs exactly three values".into(),
            ));
        }
        let split = SplitConfig {
            train_maps: cfg.get("train_maps", defaults.train_maps)?,
            val_maps: cfg.get("val_maps", defaults.val_maps)?,
            test_maps: cfg.get("test_maps", defaults.test_maps)?,
            goal_fractions: [fractions[0], fractions[1], fractions[2]],
            start_fraction: cfg.get("start_fraction", defaults.start_fraction)?,
        };
        let kind: String = cfg.get("kind", "hupa".to_string())?;
        Ok(RunConfig {
            split,
            seed: cfg.get("seed", 0u64)?,
            kind: kind.parse()?,
            width: cfg.get("width", 16usize)?,
            lr: cfg.get("lr", 1e-3)?,
            batch: cfg.get("batch", 256usize)?,
            max_epochs: cfg.get("max_epochs", 200usize)?,
            patience: cfg.get("patience", 10usize)?,
            steps_per_epoch: cfg.get_opt("steps_per_epoch")?,
            parallel: cfg.get("parallel", true)?,
            deterministic: cfg.get("deterministic", true)?,
        })
    }

    pub fn from_path(path: &Path) -> Result<RunConfig, HarnessError> {
        let kv = KvConfig::from_path(path)?;
        let run = RunConfig::from_kv(&kv)?;
        kv.finish()?;
        Ok(run)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            width: self.width,
            lr: self.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: self.batch,
            max_epochs: self.max_epochs,
            patience: self.patience,
            steps_per_epoch: self.steps_per_epoch,
            seed: self.seed,
            parallel: self.parallel,
            deterministic: self.deterministic,
        }
    }
}

/// The three evaluation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    KnownMapKnownGoal,
    KnownMapUnknownGoal,
    UnknownMapUnknownGoal,
}

impl Regime {
    pub const ALL: [Regime; 3] = [
        Regime::KnownMapKnownGoal,
        Regime::KnownMapUnknownGoal,
        Regime::UnknownMapUnknownGoal,
    ];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::KnownMapKnownGoal => "known-E/known-g",
            Regime::KnownMapUnknownGoal => "known-E/unknown-g",
            Regime::UnknownMapUnknownGoal => "unknown-E/unknown-g",
        })
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Regime, String> {
        match s {
            "known-E/known-g" => Ok(Regime::KnownMapKnownGoal),
            "known-E/unknown-g" => Ok(Regime::KnownMapUnknownGoal),
            "unknown-E/unknown-g" => Ok(Regime::UnknownMapUnknownGoal),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub kind: ModelKind,
    pub width: usize,
    pub seed: u64,
    pub regime: Regime,
    pub label_acc: f64,
    pub opt_acc: f64,
    pub rr: f64,
    pub params: usize,
    pub seconds: f64,
}

/// Fixed results schema.
pub const RESULT_HEADER: [&str; 9] = [
    "kind", "width", "seed", "regime", "label_acc", "opt_acc", "rr", "params", "seconds",
];

impl ResultRow {
    pub fn key(&self) -> (String, usize, u64, Regime) {
        (self.kind.to_string(), self.width, self.seed, self.regime)
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.kind.to_string(),
            self.width.to_string(),
            self.seed.to_string(),
            self.regime.to_string(),
            format!("{:.6}", self.label_acc),
            format!("{:.6}", self.opt_acc),
            format!("{:.6}", self.rr),
            self.params.to_string(),
            format!("{:.3}", self.seconds),
        ]
    }

    fn from_record(record: &csv::StringRecord) -> Result<ResultRow, HarnessError> {
        if record.len() != RESULT_HEADER.len() {
            return Err(HarnessError::BadRow(format!("{record:?}")));
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let bad = |what: &str| HarnessError::BadRow(format!("{what} in {record:?}"));
        Ok(ResultRow {
            kind: field(0).parse().map_err(|_| bad("kind"))?,
            width: field(1).parse().map_err(|_| bad("width"))?,
            seed: field(2).parse().map_err(|_| bad("seed"))?,
            regime: field(3).parse().map_err(|_| bad("regime"))?,
            label_acc: field(4).parse().map_err(|_| bad("label_acc"))?,
            opt_acc: field(5).parse().map_err(|_| bad("opt_acc"))?,
            rr: field(6).parse().map_err(|_| bad("rr"))?,
            params: field(7).parse().map_err(|_| bad("params"))?,
            seconds: field(8).parse().map_err(|_| bad("seconds"))?,
        })
    }
}

/// Append rows, writing the header when the file is new.
pub fn append_result_rows(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let new_file = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if new_file {
        writer.write_record(RESULT_HEADER)?;
    }
    for row in rows {
        writer.write_record(row.to_record())?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a results CSV back into rows.
pub fn read_result_rows(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(ResultRow::from_record(&record?)?);
    }
    Ok(rows)
}

/// Accuracy metrics and reachability of one regime.
#[derive(Debug, Clone)]
pub struct RegimeEval {
    pub regime: Regime,
    pub label_acc: f64,
    pub opt_acc: f64,
    pub rr: f64,
    pub sample_count: usize,
    pub seconds: f64,
}

/// Mean `|C_g| / |open|` over every (map, goal) pair of a regime.
fn regime_rr(
    model: &Model,
    params: &[f32],
    images: &ImageTable,
    map_ids: &[u16],
    goals: &[Cell],
    parallel: bool,
) -> Result<f64, HarnessError> {
    let mut sum = 0.0f64;
    let mut pairs = 0usize;
    for &map_id in map_ids {
        let map = Map::from_id(map_id);
        let open_goals: Vec<Cell> = goals.iter().copied().filter(|g| map.is_open(*g)).collect();
        if open_goals.is_empty() {
            continue;
        }
        let context = model.map_context(params, images.get(map_id));
        let report = reachability_ratio(&map, &open_goals, parallel, |s, g| {
            argmax_action(&model.logits(params, &context, s, g))
        })?;
        sum += report.per_goal.iter().map(|(_, f)| f).sum::<f64>();
        pairs += report.per_goal.len();
    }
    Ok(sum / pairs.max(1) as f64)
}

/// Evaluate all three regimes for a trained model.
///
/// Known-map/known-goal uses start states held out by `start_fraction`; when
/// nothing is held out (fraction 1.0) it falls back to the training stream.
pub fn eval_regimes(
    model: &Model,
    params: &[f32],
    plan: &SplitPlan,
    parallel: bool,
) -> Result<Vec<RegimeEval>, HarnessError> {
    let images = ImageTable::for_ids(
        plan.train_maps
            .iter()
            .chain(&plan.test_maps)
            .copied()
            .collect::<Vec<_>>(),
    );
    let mut out = Vec::with_capacity(3);
    for regime in Regime::ALL {
        let started = Instant::now();
        let (samples, map_ids, goals) = match regime {
            Regime::KnownMapKnownGoal => {
                let mut samples = build_held_out_samples(plan, parallel);
                if samples.is_empty() {
                    samples = build_samples(plan, Split::Train, parallel);
                }
                (samples, &plan.train_maps, &plan.train_goals)
            }
            Regime::KnownMapUnknownGoal => (
                build_regime_samples(plan, &plan.train_maps, &plan.test_goals, parallel),
                &plan.train_maps,
                &plan.test_goals,
            ),
            Regime::UnknownMapUnknownGoal => (
                build_regime_samples(plan, &plan.test_maps, &plan.test_goals, parallel),
                &plan.test_maps,
                &plan.test_goals,
            ),
        };
        let metrics = evaluate(model, params, &samples, &images, parallel);
        let rr = regime_rr(model, params, &images, map_ids, goals, parallel)?;
        out.push(RegimeEval {
            regime,
            label_acc: metrics.label_acc,
            opt_acc: metrics.optimal_acc,
            rr,
            sample_count: metrics.count,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// A finished experiment: the trained model and its three result rows.
pub struct ExperimentResult {
    pub trained: TrainedModel,
    pub plan: SplitPlan,
    pub rows: Vec<ResultRow>,
    pub train_seconds: f64,
}

/// Train one model per the config and evaluate the three regimes.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult, HarnessError> {
    let plan = make_splits(config.seed, &config.split)?;
    let train_samples = build_samples(&plan, Split::Train, config.parallel);
    let val_samples = build_samples(&plan, Split::Val, config.parallel);
    let images = ImageTable::for_samples([train_samples.as_slice(), val_samples.as_slice()]);

    let started = Instant::now();
    let trained = train(&config.train_config(), &train_samples, &val_samples, &images)?;
    let train_seconds = started.elapsed().as_secs_f64();

    let evals = eval_regimes(&trained.model, &trained.params, &plan, config.parallel)?;
    let params = trained.model.param_count();
    let rows = evals
        .iter()
        .map(|e| ResultRow {
            kind: config.kind,
            width: config.width,
            seed: config.seed,
            regime: e.regime,
            label_acc: e.label_acc,
            opt_acc: e.opt_acc,
            rr: e.rr,
            params,
            seconds: train_seconds + e.seconds,
        })
        .collect();
    Ok(ExperimentResult {
        trained,
        plan,
        rows,
        train_seconds,
    })
}

/// Sidecar metadata next to a checkpoint: config echo plus the history.
pub fn write_meta(path: &Path, config: &RunConfig, result: &ExperimentResult) -> Result<(), HarnessError> {
    let mut out = String::new();
    let h = &result.trained.history;
    out.push_str(&format!("kind = {}\n", config.kind));
    out.push_str(&format!("width = {}\n", config.width));
    out.push_str(&format!("seed = {}\n", config.seed));
    out.push_str(&format!("lr = {}\n", config.lr));
    out.push_str(&format!("batch = {}\n", config.batch));
    out.push_str(&format!("max_epochs = {}\n", config.max_epochs));
    out.push_str(&format!("patience = {}\n", config.patience));
    if let Some(cap) = config.steps_per_epoch {
        out.push_str(&format!("steps_per_epoch = {cap}\n"));
    }
    out.push_str(&format!("train_maps = {}\n", config.split.train_maps));
    out.push_str(&format!("val_maps = {}\n", config.split.val_maps));
    out.push_str(&format!("test_maps = {}\n", config.split.test_maps));
    out.push_str(&format!(
        "goal_fractions = {},{},{}\n",
        config.split.goal_fractions[0], config.split.goal_fractions[1], config.split.goal_fractions[2]
    ));
    out.push_str(&format!("start_fraction = {}\n", config.split.start_fraction));
    out.push_str(&format!("deterministic = {}\n", config.deterministic));
    out.push_str(&format!("epochs_run = {}\n", h.epochs.len()));
    out.push_str(&format!("best_epoch = {}\n", h.best_epoch));
    out.push_str(&format!("best_val_acc = {:.6}\n", h.best_val_acc()));
    out.push_str(&format!("train_seconds = {:.3}\n", result.train_seconds));
    for (i, epoch) in h.epochs.iter().enumerate() {
        out.push_str(&format!(
            "history.{i}.train_loss = {:.6}\nhistory.{i}.train_acc = {:.6}\nhistory.{i}.val_acc = {:.6}\n",
            epoch.train_loss, epoch.train_acc, epoch.val_acc
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// (kind, width, seed) recovered from a sidecar.
pub fn read_meta(path: &Path) -> Result<(ModelKind, usize, u64), HarnessError> {
    let kv = KvConfig::from_path(path)?;
    let kind: String = kv.require("kind")?;
    Ok((kind.parse()?, kv.require("width")?, kv.require("seed")?))
}

pub fn checkpoint_stem(kind: ModelKind, width: usize, seed: u64) -> String {
    format!("{kind}_w{width}_s{seed}")
}

/// `maps`: write all 164 maps as text plus an index CSV.
pub fn cmd_maps(out_dir: &Path) -> Result<usize, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let masks = door_masks();
    let mut index = std::io::BufWriter::new(std::fs::File::create(out_dir.join("index.csv"))?);
    writeln!(index, "map_id,door0,door1,door2")?;
    for (id, mask) in masks.iter().enumerate() {
        let [a, b, c] = mask.blocked();
        writeln!(index, "{id},{a},{b},{c}")?;
        let map = Map::build(*mask);
        std::fs::write(out_dir.join(format!("map_{id:03}.txt")), map.to_text())?;
    }
    index.flush()?;
    Ok(masks.len())
}

/// `dataset`: build the plan's three splits and write them as dataset files.
pub fn cmd_dataset(config: &RunConfig, out_dir: &Path) -> Result<[usize; 3], HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let plan = make_splits(config.seed, &config.split)?;
    let mut counts = [0usize; 3];
    for (i, (split, name)) in [
        (Split::Train, "train.hds"),
        (Split::Val, "val.hds"),
        (Split::Test, "test.hds"),
    ]
    .into_iter()
    .enumerate()
    {
        let samples = build_samples(&plan, split, config.parallel);
        counts[i] = samples.len();
        save_dataset(&out_dir.join(name), &samples, plan.seed)?;
    }
    Ok(counts)
}

/// `train`: run one experiment, persist checkpoint + metadata, append rows.
pub fn cmd_run(config: &RunConfig, out_dir: &Path) -> Result<ExperimentResult, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let result = run_experiment(config)?;
    let stem = checkpoint_stem(config.kind, config.width, config.seed);
    save_checkpoint(
        &out_dir.join(format!("{stem}.ckpt")),
        result.trained.model.layout(),
        &result.trained.params,
    )?;
    write_meta(&out_dir.join(format!("{stem}.meta")), config, &result)?;
    append_result_rows(&out_dir.join("results.csv"), &result.rows)?;
    Ok(result)
}

/// `eval`: evaluate an existing checkpoint over the config's splits.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<Vec<ResultRow>, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let meta_path = checkpoint.with_extension("meta");
    let (kind, width, seed) = read_meta(&meta_path)?;
    let model = Model::new(kind, width)?;
    let mut params = vec![0.0f32; model.param_count()];
    load_into(checkpoint, model.layout(), &mut params)?;

    let plan = make_splits(seed, &config.split)?;
    let evals = eval_regimes(&model, &params, &plan, config.parallel)?;
    let rows: Vec<ResultRow> = evals
        .iter()
        .map(|e| ResultRow {
            kind,
            width,
            seed,
            regime: e.regime,
            label_acc: e.label_acc,
            opt_acc: e.opt_acc,
            rr: e.rr,
            params: model.param_count(),
            seconds: e.seconds,
        })
        .collect();
    append_result_rows(&out_dir.join("results.csv"), &rows)?;
    Ok(rows)
}

/// `gradcheck`: run the verification suite; true when everything passes.
pub fn cmd_gradcheck(seed: u64) -> Result<(Vec<GradCheckReport>, bool), HarnessError> {
    let reports = verify::run_suite(seed)?;
    let ok = reports
        .iter()
        .all(|r| r.passes(verify::threshold_for(r)));
    Ok((reports, ok))
}

/// Paths produced by a run, for callers that need them.
pub fn run_artifacts(out_dir: &Path, kind: ModelKind, width: usize, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let stem = checkpoint_stem(kind, width, seed);
    (
        out_dir.join(format!("{stem}.ckpt")),
        out_dir.join(format!("{stem}.meta")),
        out_dir.join("results.csv"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_strings_round_trip() {
        for regime in Regime::ALL {
            assert_eq!(regime.to_string().parse::<Regime>().unwrap(), regime);
        }
    }

    #[test]
    fn result_rows_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![
            ResultRow {
                kind: ModelKind::Hupa,
                width: 16,
                seed: 1,
                regime: Regime::UnknownMapUnknownGoal,
                label_acc: 0.5,
                opt_acc: 0.625,
                rr: 0.75,
                params: 204_984,
                seconds: 12.5,
            },
            ResultRow {
                kind: ModelKind::Embedding,
                width: 32,
                seed: 2,
                regime: Regime::KnownMapKnownGoal,
                label_acc: 0.25,
                opt_acc: 0.375,
                rr: 1.0,
                params: 434_088,
                seconds: 3.25,
            },
        ];
        append_result_rows(&path, &rows[..1]).unwrap();
        append_result_rows(&path, &rows[1..]).unwrap();
        let read = read_result_rows(&path).unwrap();
        assert_eq!(read, rows);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("kind,width,seed,regime,label_acc,opt_acc,rr,params,seconds\n"));
        // appending never rewrites: exactly one header
        assert_eq!(text.matches("kind,width").count(), 1);
    }

    #[test]
    fn config_defaults_and_overrides() {
        let kv = KvConfig::parse("kind = embedding\nwidth = 32\nseed = 9\nstart_fraction = 0.1\n").unwrap();
        let run = RunConfig::from_kv(&kv).unwrap();
        kv.finish().unwrap();
        assert_eq!(run.kind, ModelKind::Embedding);
        assert_eq!(run.width, 32);
        assert_eq!(run.seed, 9);
        assert_eq!(run.split.start_fraction, 0.1);
        assert_eq!(run.split.train_maps, 50);
        assert_eq!(run.batch, 256);
        assert!(run.deterministic);
    }

    #[test]
    fn unknown_config_key_is_an_error() {
        let kv = KvConfig::parse("kind = hupa\nwdith = 32\n").unwrap();
        let _ = RunConfig::from_kv(&kv).unwrap();
        assert!(matches!(
            kv.finish(),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
    }
}
