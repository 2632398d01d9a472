//! Width and sparsity sweeps over (kind x grid x seed) cells, with
//! append-only CSVs and key-based resume.
//!
//! Cells are independent experiments; with `jobs > 1` they run on worker
//! threads while CSV appends stay serialized behind one lock. Each cell is
//! internally deterministic for its seed, so resumed or reordered sweeps
//! produce the same values.

use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::KvConfig;
use crate::dataset::SplitConfig;
use crate::models::{ModelKind, WIDTHS};

use super::{
    append_result_rows, read_result_rows, run_experiment, HarnessError, Regime, ResultRow,
    RunConfig,
};

/// Grid settings for both sweeps, layered over a base run config.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub kinds: Vec<ModelKind>,
    /// Sparsity grid: training map counts at the default goal fraction.
    pub sparsity_map_counts: Vec<usize>,
    /// Sparsity grid: training goal percentages at the default map count.
    pub sparsity_goal_percents: Vec<usize>,
    /// Fixed width for the sparsity sweep.
    pub sparsity_width: usize,
    pub jobs: usize,
}

impl SweepConfig {
    pub fn from_path(path: &Path) -> Result<SweepConfig, HarnessError> {
        let kv = KvConfig::from_path(path)?;
        let sweep = SweepConfig::from_kv(&kv)?;
        kv.finish()?;
        Ok(sweep)
    }

    pub fn from_kv(kv: &KvConfig) -> Result<SweepConfig, HarnessError> {
        let base = RunConfig::from_kv(kv)?;
        let kinds: Vec<String> =
            kv.get_list("kinds", vec!["hupa".to_string(), "embedding".to_string()])?;
        let kinds = kinds
            .iter()
            .map(|k| ModelKind::from_str(k))
            .collect::<Result<Vec<_>, _>>()?;
        let widths = kv.get_list("widths", WIDTHS.to_vec())?;
        if let Some(bad) = widths.iter().find(|w| !WIDTHS.contains(w)) {
            return Err(HarnessError::Invalid(format!(
                "width {bad} not in the supported set {WIDTHS:?}"
            )));
        }
        Ok(SweepConfig {
            base,
            widths,
            seeds: kv.get_list("seeds", vec![1, 2, 3])?,
            kinds,
            sparsity_map_counts: kv.get_list("sparsity_map_counts", vec![5, 10, 20, 35, 50])?,
            sparsity_goal_percents: kv.get_list("sparsity_goal_percents", vec![5, 10, 20, 40])?,
            sparsity_width: kv.get("sparsity_width", 128usize)?,
            jobs: kv.get("jobs", 1usize)?,
        })
    }
}

fn run_cells<C: Sync>(
    cells: &[C],
    jobs: usize,
    runner: impl Fn(&C) -> Result<(), HarnessError> + Sync,
) -> Result<(), HarnessError> {
    if jobs <= 1 {
        for cell in cells {
            runner(cell)?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cells.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                if let Err(err) = runner(&cells[idx]) {
                    *failure.lock().unwrap() = Some(err);
                    break;
                }
            });
        }
    });
    match failure.into_inner().unwrap() {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

/// Width sweep: kinds x widths x seeds, resumable via the results CSV.
///
/// Returns the number of cells actually run (skipped cells already had all
/// three regime rows).
pub fn cmd_sweep_width(config: &SweepConfig, out_dir: &Path) -> Result<usize, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("results.csv");
    let existing = read_result_rows(&csv_path)?;
    let done = |kind: ModelKind, width: usize, seed: u64| {
        Regime::ALL.iter().all(|regime| {
            existing
                .iter()
                .any(|r| r.kind == kind && r.width == width && r.seed == seed && r.regime == *regime)
        })
    };

    let mut cells = Vec::new();
    for &kind in &config.kinds {
        for &width in &config.widths {
            for &seed in &config.seeds {
                if !done(kind, width, seed) {
                    cells.push((kind, width, seed));
                }
            }
        }
    }

    let writer = Mutex::new(());
    run_cells(&cells, config.jobs, |&(kind, width, seed)| {
        let mut run = config.base.clone();
        run.kind = kind;
        run.width = width;
        run.seed = seed;
        let result = run_experiment(&run)?;
        let _guard = writer.lock().unwrap();
        append_result_rows(&csv_path, &result.rows)?;
        Ok(())
    })?;
    Ok(cells.len())
}

/// One line of the sparsity CSV: a result row plus its grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub row: ResultRow,
    pub train_maps: usize,
    pub goal_pct: usize,
}

pub const SPARSITY_HEADER: [&str; 11] = [
    "kind",
    "width",
    "seed",
    "regime",
    "train_maps",
    "goal_pct",
    "label_acc",
    "opt_acc",
    "rr",
    "params",
    "seconds",
];

fn append_sparsity_rows(path: &Path, rows: &[SparsityRow]) -> Result<(), HarnessError> {
    let new_file = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if new_file {
        writer.write_record(SPARSITY_HEADER)?;
    }
    for sr in rows {
        let r = &sr.row;
        writer.write_record([
            r.kind.to_string(),
            r.width.to_string(),
            r.seed.to_string(),
            r.regime.to_string(),
            sr.train_maps.to_string(),
            sr.goal_pct.to_string(),
            format!("{:.6}", r.label_acc),
            format!("{:.6}", r.opt_acc),
            format!("{:.6}", r.rr),
            r.params.to_string(),
            format!("{:.3}", r.seconds),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_sparsity_rows(path: &Path) -> Result<Vec<SparsityRow>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != SPARSITY_HEADER.len() {
            return Err(HarnessError::BadRow(format!("{record:?}")));
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let bad = |what: &str| HarnessError::BadRow(format!("{what} in {record:?}"));
        rows.push(SparsityRow {
            row: ResultRow {
                kind: field(0).parse().map_err(|_| bad("kind"))?,
                width: field(1).parse().map_err(|_| bad("width"))?,
                seed: field(2).parse().map_err(|_| bad("seed"))?,
                regime: field(3).parse().map_err(|_| bad("regime"))?,
                label_acc: field(6).parse().map_err(|_| bad("label_acc"))?,
                opt_acc: field(7).parse().map_err(|_| bad("opt_acc"))?,
                rr: field(8).parse().map_err(|_| bad("rr"))?,
                params: field(9).parse().map_err(|_| bad("params"))?,
                seconds: field(10).parse().map_err(|_| bad("seconds"))?,
            },
            train_maps: field(4).parse().map_err(|_| bad("train_maps"))?,
            goal_pct: field(5).parse().map_err(|_| bad("goal_pct"))?,
        });
    }
    Ok(rows)
}

/// One sparsity cell: vary either the map count or the goal percentage.
#[derive(Debug, Clone, Copy)]
struct SparsityCell {
    kind: ModelKind,
    seed: u64,
    train_maps: usize,
    goal_pct: usize,
}

/// Sparsity sweep at a fixed width: a map-count grid at the base goal
/// fraction, then a goal-percentage grid at the base map count.
pub fn cmd_sweep_sparsity(config: &SweepConfig, out_dir: &Path) -> Result<usize, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("sparsity.csv");
    let existing = read_sparsity_rows(&csv_path)?;
    let width = config.sparsity_width;
    let base_goal_pct = (config.base.split.goal_fractions[0] * 100.0).round() as usize;

    let mut cells: Vec<SparsityCell> = Vec::new();
    for &kind in &config.kinds {
        for &seed in &config.seeds {
            for &train_maps in &config.sparsity_map_counts {
                cells.push(SparsityCell {
                    kind,
                    seed,
                    train_maps,
                    goal_pct: base_goal_pct,
                });
            }
            for &goal_pct in &config.sparsity_goal_percents {
                if goal_pct == base_goal_pct {
                    continue; // covered by the map grid at the base count
                }
                cells.push(SparsityCell {
                    kind,
                    seed,
                    train_maps: config.base.split.train_maps,
                    goal_pct,
                });
            }
        }
    }
    cells.retain(|cell| {
        !Regime::ALL.iter().all(|regime| {
            existing.iter().any(|r| {
                r.row.kind == cell.kind
                    && r.row.width == width
                    && r.row.seed == cell.seed
                    && r.row.regime == *regime
                    && r.train_maps == cell.train_maps
                    && r.goal_pct == cell.goal_pct
            })
        })
    });

    let writer = Mutex::new(());
    run_cells(&cells, config.jobs, |cell| {
        let mut run = config.base.clone();
        run.kind = cell.kind;
        run.width = width;
        run.seed = cell.seed;
        let train_frac = cell.goal_pct as f64 / 100.0;
        let val_frac = config.base.split.goal_fractions[1];
        run.split = SplitConfig {
            train_maps: cell.train_maps,
            goal_fractions: [train_frac, val_frac, 1.0 - train_frac - val_frac],
            ..config.base.split
        };
        let result = run_experiment(&run)?;
        let rows: Vec<SparsityRow> = result
            .rows
            .into_iter()
            .map(|row| SparsityRow {
                row,
                train_maps: cell.train_maps,
                goal_pct: cell.goal_pct,
            })
            .collect();
        let _guard = writer.lock().unwrap();
        append_sparsity_rows(&csv_path, &rows)?;
        Ok(())
    })?;
    Ok(cells.len())
}

/// Median of unordered values; the mean of the middle pair on even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_config_defaults() {
        let kv = KvConfig::parse("widths = 16, 32\nseeds = 1, 2\nstart_fraction = 0.05\n").unwrap();
        let sweep = SweepConfig::from_kv(&kv).unwrap();
        kv.finish().unwrap();
        assert_eq!(sweep.widths, vec![16, 32]);
        assert_eq!(sweep.seeds, vec![1, 2]);
        assert_eq!(sweep.kinds, vec![ModelKind::Hupa, ModelKind::Embedding]);
        assert_eq!(sweep.sparsity_width, 128);
        assert_eq!(sweep.sparsity_map_counts, vec![5, 10, 20, 35, 50]);
        assert_eq!(sweep.jobs, 1);
    }

    #[test]
    fn unsupported_width_rejected() {
        let kv = KvConfig::parse("widths = 16, 48\n").unwrap();
        assert!(matches!(
            SweepConfig::from_kv(&kv),
            Err(HarnessError::Invalid(_))
        ));
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
