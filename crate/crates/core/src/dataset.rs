//! Deterministic split construction, sample enumeration, and the binary
//! dataset file format.
//!
//! A split plan partitions the 164 maps into train/val/test lists and the
//! 741 base-map open coordinates into disjoint goal sets, all driven by one
//! seed. Samples enumerate (map, goal, start) triples in lexicographic order
//! with oracle canonical labels; starts may be subsampled per (map, goal) by
//! `start_fraction`, with the complement available as a held-out pool.
//!
//! Records are 8 bytes; map images are regenerated from the map id at load
//! time instead of being stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridworld::{door_masks, ActionId, Cell, Map, BASE_OPEN_CELLS};
use crate::oracle::oracle_labels;
use crate::par;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("map budget exceeded: {requested} maps requested, {available} available")]
    MapBudget { requested: usize, available: usize },
    #[error("goal fractions {0:?} must be nonnegative and sum to 1")]
    BadGoalFractions([f64; 3]),
    #[error("start fraction {0} must lie in (0, 1]")]
    BadStartFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a dataset file")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u16),
    #[error("file truncated: expected {expected} bytes of records")]
    Truncated { expected: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("record {index} is invalid: {reason}")]
    BadRecord { index: usize, reason: String },
}

/// Knobs for split construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_maps: usize,
    pub val_maps: usize,
    pub test_maps: usize,
    /// (train, val, test) fractions of the 741 goal coordinates; must sum to 1.
    pub goal_fractions: [f64; 3],
    /// Fraction of open start cells kept per (map, goal); the rest form the
    /// held-out start pool.
    pub start_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_maps: 50,
            val_maps: 5,
            test_maps: 20,
            goal_fractions: [0.4, 0.1, 0.5],
            start_fraction: 1.0,
        }
    }
}

/// Which split of a plan to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A fully determined train/val/test division of maps and goal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_maps: Vec<u16>,
    pub val_maps: Vec<u16>,
    pub test_maps: Vec<u16>,
    pub train_goals: Vec<Cell>,
    pub val_goals: Vec<Cell>,
    pub test_goals: Vec<Cell>,
    pub start_fraction: f64,
}

impl SplitPlan {
    pub fn maps(&self, split: Split) -> &[u16] {
        match split {
            Split::Train => &self.train_maps,
            Split::Val => &self.val_maps,
            Split::Test => &self.test_maps,
        }
    }

    pub fn goals(&self, split: Split) -> &[Cell] {
        match split {
            Split::Train => &self.train_goals,
            Split::Val => &self.val_goals,
            Split::Test => &self.test_goals,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stable stream derivation: distinct RNG streams from one experiment seed.
pub(crate) fn derive_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed ^ stream).wrapping_add(a)).wrapping_add(b))
}

const MAP_STREAM: u64 = 0x6d61_7073; // "maps"
const GOAL_STREAM: u64 = 0x676f_616c; // "goal"
const START_STREAM: u64 = 0x7374_6172; // "star"

/// Draw maps and partition goal coordinates, entirely from `seed`.
///
/// Map lists and goal sets are stored sorted so downstream enumeration is
/// lexicographic; the random choice itself is uniform without replacement.
pub fn make_splits(seed: u64, config: &SplitConfig) -> Result<SplitPlan, DatasetError> {
    let total_maps = config.train_maps + config.val_maps + config.test_maps;
    let available = door_masks().len();
    if total_maps > available {
        return Err(DatasetError::MapBudget {
            requested: total_maps,
            available,
        });
    }
    let f = config.goal_fractions;
    if f.iter().any(|x| *x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadGoalFractions(f));
    }
    if !(config.start_fraction > 0.0 && config.start_fraction <= 1.0) {
        return Err(DatasetError::BadStartFraction(config.start_fraction));
    }

    let mut map_ids: Vec<u16> = (0..available as u16).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, MAP_STREAM, 0, 0));
    map_ids.shuffle(&mut rng);
    let mut train_maps: Vec<u16> = map_ids[..config.train_maps].to_vec();
    let mut val_maps: Vec<u16> =
        map_ids[config.train_maps..config.train_maps + config.val_maps].to_vec();
    let mut test_maps: Vec<u16> =
        map_ids[config.train_maps + config.val_maps..total_maps].to_vec();
    train_maps.sort_unstable();
    val_maps.sort_unstable();
    test_maps.sort_unstable();

    let mut coords: Vec<Cell> = Map::base().open_cells().collect();
    debug_assert_eq!(coords.len(), BASE_OPEN_CELLS);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, GOAL_STREAM, 0, 0));
    coords.shuffle(&mut rng);
    let n_train = (f[0] * BASE_OPEN_CELLS as f64).floor() as usize;
    let n_val = (f[1] * BASE_OPEN_CELLS as f64).floor() as usize;
    let mut train_goals: Vec<Cell> = coords[..n_train].to_vec();
    let mut val_goals: Vec<Cell> = coords[n_train..n_train + n_val].to_vec();
    let mut test_goals: Vec<Cell> = coords[n_train + n_val..].to_vec();
    train_goals.sort_unstable();
    val_goals.sort_unstable();
    test_goals.sort_unstable();

    Ok(SplitPlan {
        seed,
        train_maps,
        val_maps,
        test_maps,
        train_goals,
        val_goals,
        test_goals,
        start_fraction: config.start_fraction,
    })
}

/// One supervised example: predict the oracle action from (map, start, goal).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub map_id: u16,
    pub s: Cell,
    pub g: Cell,
    pub label: ActionId,
    pub optimal_mask: u8,
}

/// The seeded subsample of start cells for one (map, goal), and its complement.
fn partition_starts(
    plan_seed: u64,
    start_fraction: f64,
    map_id: u16,
    map: &Map,
    goal: Cell,
) -> (Vec<Cell>, Vec<Cell>) {
    let mut starts: Vec<Cell> = map.open_cells().filter(|s| *s != goal).collect();
    if start_fraction >= 1.0 {
        return (starts, Vec::new());
    }
    let keep = ((start_fraction * starts.len() as f64).floor() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        plan_seed,
        START_STREAM,
        map_id as u64,
        goal.index() as u64,
    ));
    starts.shuffle(&mut rng);
    let mut kept = starts[..keep].to_vec();
    let mut held_out = starts[keep..].to_vec();
    kept.sort_unstable();
    held_out.sort_unstable();
    (kept, held_out)
}

fn samples_for_pair(
    plan: &SplitPlan,
    map_id: u16,
    map: &Map,
    goal: Cell,
    held_out: bool,
) -> Vec<Sample> {
    let labels = oracle_labels(map, goal).expect("goal open in map");
    let (kept, complement) = partition_starts(plan.seed, plan.start_fraction, map_id, map, goal);
    let starts = if held_out { complement } else { kept };
    starts
        .into_iter()
        .map(|s| Sample {
            map_id,
            s,
            g: goal,
            label: labels.canonical(s).expect("open non-goal cell"),
            optimal_mask: labels.optimal_set(s).bits(),
        })
        .collect()
}

fn enumerate_pairs(maps: &[u16], goals: &[Cell]) -> Vec<(u16, Cell)> {
    let mut pairs = Vec::new();
    for &map_id in maps {
        let map = Map::from_id(map_id);
        for &goal in goals {
            if map.is_open(goal) {
                pairs.push((map_id, goal));
            }
        }
    }
    pairs
}

fn build_from_pairs(
    plan: &SplitPlan,
    pairs: &[(u16, Cell)],
    held_out: bool,
    parallel: bool,
) -> Vec<Sample> {
    let chunks = par::map_collect(pairs, parallel, |&(map_id, goal)| {
        let map = Map::from_id(map_id);
        samples_for_pair(plan, map_id, &map, goal, held_out)
    });
    chunks.into_iter().flatten().collect()
}

/// Enumerate one split's samples in (map, goal, start) lexicographic order.
pub fn build_samples(plan: &SplitPlan, split: Split, parallel: bool) -> Vec<Sample> {
    let pairs = enumerate_pairs(plan.maps(split), plan.goals(split));
    build_from_pairs(plan, &pairs, false, parallel)
}

/// Samples over train maps x train goals whose starts were excluded from
/// training by `start_fraction`. Empty when `start_fraction == 1.0`.
pub fn build_held_out_samples(plan: &SplitPlan, parallel: bool) -> Vec<Sample> {
    if plan.start_fraction >= 1.0 {
        return Vec::new();
    }
    let pairs = enumerate_pairs(&plan.train_maps, &plan.train_goals);
    build_from_pairs(plan, &pairs, true, parallel)
}

/// Samples for an arbitrary (maps x goals) evaluation regime, using the
/// plan's start fraction.
pub fn build_regime_samples(
    plan: &SplitPlan,
    maps: &[u16],
    goals: &[Cell],
    parallel: bool,
) -> Vec<Sample> {
    let pairs = enumerate_pairs(maps, goals);
    build_from_pairs(plan, &pairs, false, parallel)
}

const MAGIC: &[u8; 7] = b"HUPADS1";
const VERSION: u16 = 1;
const RECORD_BYTES: usize = 8;

/// Write samples in the binary dataset format.
///
/// Layout: magic `HUPADS1`, version u16, count u64, seed u64, then 8-byte
/// little-endian records (map_id u16, s_row, s_col, g_row, g_col, label,
/// optimal_mask), then a CRC-32 of the record bytes.
pub fn save_dataset(path: &Path, samples: &[Sample], seed: u64) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    let mut hasher = crc32fast::Hasher::new();
    for sample in samples {
        let mut record = [0u8; RECORD_BYTES];
        record[0..2].copy_from_slice(&sample.map_id.to_le_bytes());
        record[2] = sample.s.row;
        record[3] = sample.s.col;
        record[4] = sample.g.row;
        record[5] = sample.g.col;
        record[6] = sample.label.k();
        record[7] = sample.optimal_mask;
        hasher.update(&record);
        out.write_all(&record)?;
    }
    out.write_all(&hasher.finalize().to_le_bytes())?;
    out.flush()?;
    Ok(())
}

/// Read a dataset file back, validating magic, version, checksum, and basic
/// record invariants. Returns the samples and the stored seed.
pub fn load_dataset(path: &Path) -> Result<(Vec<Sample>, u64), DatasetError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    reader
        .read_exact(&mut magic)
        .map_err(|_| DatasetError::BadMagic)?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut buf2 = [0u8; 2];
    reader.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != VERSION {
        return Err(DatasetError::BadVersion(version));
    }
    let mut buf8 = [0u8; 8];
    reader.read_exact(&mut buf8)?;
    let count = u64::from_le_bytes(buf8) as usize;
    reader.read_exact(&mut buf8)?;
    let seed = u64::from_le_bytes(buf8);

    let mut records = vec![0u8; count * RECORD_BYTES];
    reader
        .read_exact(&mut records)
        .map_err(|_| DatasetError::Truncated {
            expected: count * RECORD_BYTES,
        })?;
    let mut buf4 = [0u8; 4];
    reader
        .read_exact(&mut buf4)
        .map_err(|_| DatasetError::Truncated {
            expected: count * RECORD_BYTES + 4,
        })?;
    let stored = u32::from_le_bytes(buf4);
    let computed = crc32fast::hash(&records);
    if stored != computed {
        return Err(DatasetError::ChecksumMismatch { stored, computed });
    }

    let mut samples = Vec::with_capacity(count);
    for (index, record) in records.chunks_exact(RECORD_BYTES).enumerate() {
        let map_id = u16::from_le_bytes([record[0], record[1]]);
        let bad = |reason: &str| DatasetError::BadRecord {
            index,
            reason: reason.to_string(),
        };
        if map_id as usize >= door_masks().len() {
            return Err(bad("map id out of range"));
        }
        let s = Cell::new(record[2] as usize, record[3] as usize)
            .ok_or_else(|| bad("start coordinates out of range"))?;
        let g = Cell::new(record[4] as usize, record[5] as usize)
            .ok_or_else(|| bad("goal coordinates out of range"))?;
        if s == g {
            return Err(bad("start equals goal"));
        }
        let label = ActionId::new(record[6]).ok_or_else(|| bad("label out of range"))?;
        let optimal_mask = record[7];
        if optimal_mask & (1 << label.index()) == 0 {
            return Err(bad("label not in optimal mask"));
        }
        samples.push(Sample {
            map_id,
            s,
            g,
            label,
            optimal_mask,
        });
    }
    Ok((samples, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn default_split_sizes() {
        let plan = make_splits(7, &SplitConfig::default()).unwrap();
        assert_eq!(plan.train_maps.len(), 50);
        assert_eq!(plan.val_maps.len(), 5);
        assert_eq!(plan.test_maps.len(), 20);
        assert_eq!(plan.train_goals.len(), 296); // floor(0.4 * 741)
        assert_eq!(plan.val_goals.len(), 74); // floor(0.1 * 741)
        assert_eq!(plan.test_goals.len(), 741 - 296 - 74);
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let plan = make_splits(42, &SplitConfig::default()).unwrap();
        let again = make_splits(42, &SplitConfig::default()).unwrap();
        assert_eq!(plan, again);
        let other = make_splits(43, &SplitConfig::default()).unwrap();
        assert_ne!(plan, other);

        let maps: HashSet<u16> = plan
            .train_maps
            .iter()
            .chain(&plan.val_maps)
            .chain(&plan.test_maps)
            .copied()
            .collect();
        assert_eq!(maps.len(), 75);
        let goals: HashSet<Cell> = plan
            .train_goals
            .iter()
            .chain(&plan.val_goals)
            .chain(&plan.test_goals)
            .copied()
            .collect();
        assert_eq!(goals.len(), BASE_OPEN_CELLS);
    }

    #[test]
    fn over_budget_and_bad_fractions_rejected() {
        let config = SplitConfig {
            train_maps: 160,
            ..SplitConfig::default()
        };
        assert!(matches!(
            make_splits(1, &config),
            Err(DatasetError::MapBudget { .. })
        ));
        let config = SplitConfig {
            goal_fractions: [0.5, 0.1, 0.5],
            ..SplitConfig::default()
        };
        assert!(matches!(
            make_splits(1, &config),
            Err(DatasetError::BadGoalFractions(_))
        ));
        let config = SplitConfig {
            start_fraction: 0.0,
            ..SplitConfig::default()
        };
        assert!(matches!(
            make_splits(1, &config),
            Err(DatasetError::BadStartFraction(_))
        ));
    }

    #[test]
    fn full_start_fraction_counts() {
        // one train map, full starts: every open goal contributes 737 samples
        let config = SplitConfig {
            train_maps: 1,
            val_maps: 1,
            test_maps: 1,
            goal_fractions: [0.4, 0.1, 0.5],
            start_fraction: 1.0,
        };
        let plan = make_splits(3, &config).unwrap();
        let map = Map::from_id(plan.train_maps[0]);
        let open_goals = plan.train_goals.iter().filter(|g| map.is_open(**g)).count();
        let samples = build_samples(&plan, Split::Train, true);
        assert_eq!(samples.len(), open_goals * 737);
        assert!(build_held_out_samples(&plan, true).is_empty());
    }

    #[test]
    fn labels_reproducible_from_oracle() {
        let config = SplitConfig {
            train_maps: 2,
            val_maps: 1,
            test_maps: 1,
            goal_fractions: [0.05, 0.05, 0.9],
            start_fraction: 0.1,
        };
        let plan = make_splits(9, &config).unwrap();
        let samples = build_samples(&plan, Split::Train, true);
        assert!(!samples.is_empty());
        let mut current: Option<(u16, Cell)> = None;
        let mut labels = None;
        for sample in &samples {
            if current != Some((sample.map_id, sample.g)) {
                current = Some((sample.map_id, sample.g));
                labels = Some(oracle_labels(&Map::from_id(sample.map_id), sample.g).unwrap());
            }
            let labels = labels.as_ref().unwrap();
            assert_eq!(labels.canonical(sample.s).unwrap(), sample.label);
            assert_eq!(labels.optimal_set(sample.s).bits(), sample.optimal_mask);
            assert!(sample.optimal_mask & (1 << sample.label.index()) != 0);
        }
    }

    #[test]
    fn held_out_disjoint_from_training() {
        let config = SplitConfig {
            train_maps: 1,
            val_maps: 1,
            test_maps: 1,
            goal_fractions: [0.02, 0.08, 0.9],
            start_fraction: 0.3,
        };
        let plan = make_splits(17, &config).unwrap();
        let train: HashSet<(u16, Cell, Cell)> = build_samples(&plan, Split::Train, false)
            .iter()
            .map(|s| (s.map_id, s.g, s.s))
            .collect();
        let held: Vec<Sample> = build_held_out_samples(&plan, false);
        assert!(!held.is_empty());
        for sample in &held {
            assert!(!train.contains(&(sample.map_id, sample.g, sample.s)));
        }
        // kept + held out covers all 737 starts per pair
        let map = Map::from_id(plan.train_maps[0]);
        let open_goals = plan.train_goals.iter().filter(|g| map.is_open(**g)).count();
        assert_eq!(train.len() + held.len(), open_goals * 737);
    }

    #[test]
    fn build_is_deterministic_and_ordered() {
        let config = SplitConfig {
            train_maps: 2,
            val_maps: 1,
            test_maps: 1,
            goal_fractions: [0.03, 0.07, 0.9],
            start_fraction: 0.2,
        };
        let plan = make_splits(23, &config).unwrap();
        let a = build_samples(&plan, Split::Train, true);
        let b = build_samples(&plan, Split::Train, false);
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(
                (w[0].map_id, w[0].g, w[0].s) < (w[1].map_id, w[1].g, w[1].s),
                "ordering violated"
            );
        }
    }

    #[test]
    fn round_trip_and_corruption() {
        let config = SplitConfig {
            train_maps: 1,
            val_maps: 1,
            test_maps: 1,
            goal_fractions: [0.02, 0.08, 0.9],
            start_fraction: 0.05,
        };
        let plan = make_splits(31, &config).unwrap();
        let samples = build_samples(&plan, Split::Train, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.hds");
        save_dataset(&path, &samples, plan.seed).unwrap();

        let (loaded, seed) = load_dataset(&path).unwrap();
        assert_eq!(loaded, samples);
        assert_eq!(seed, plan.seed);

        // flip one checksum byte
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatasetError::ChecksumMismatch { .. })
        ));

        // bad magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(DatasetError::BadMagic)));
    }

    #[test]
    fn record_is_eight_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.hds");
        let sample = Sample {
            map_id: 0,
            s: Cell::new(1, 1).unwrap(),
            g: Cell::new(2, 2).unwrap(),
            label: ActionId::new(7).unwrap(),
            optimal_mask: 1 << 6,
        };
        save_dataset(&path, &[sample], 5).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        // header 25 bytes + 1 record + 4-byte checksum
        assert_eq!(len, 25 + RECORD_BYTES + 4);
    }

    proptest! {
        #[test]
        fn random_sample_vectors_round_trip(
            raw in proptest::collection::vec((0u16..164, 0usize..320, 0usize..320, 1u8..=8), 0..200),
            seed in any::<u64>(),
        ) {
            // map raw tuples onto structurally valid samples
            let samples: Vec<Sample> = raw
                .iter()
                .map(|&(map_id, a, b, k)| {
                    let s = Cell::from_index(a * 3 + 1);
                    let mut g = Cell::from_index(b * 3 + 2);
                    if s == g {
                        g = Cell::from_index((b * 3 + 5) % 961);
                    }
                    let label = ActionId::new(k).unwrap();
                    Sample {
                        map_id,
                        s,
                        g,
                        label,
                        optimal_mask: (1 << label.index()) | 0b1,
                    }
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.hds");
            save_dataset(&path, &samples, seed).unwrap();
            let (loaded, loaded_seed) = load_dataset(&path).unwrap();
            prop_assert_eq!(loaded, samples);
            prop_assert_eq!(loaded_seed, seed);
        }
    }
}
