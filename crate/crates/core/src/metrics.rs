//! Policy quality metrics: functional reachability graphs, reachable sets,
//! the Reachability Ratio, and a forward-rollout cross-check.
//!
//! Following a deterministic policy one step from every open cell induces a
//! functional graph (out-degree <= 1). The cells whose forward path ends at
//! the goal form the reachable set `C_g`, found by one reverse breadth-first
//! traversal from the goal. The Reachability Ratio of a goal set averages
//! `|C_g| / |open cells|` over its goals.

use std::collections::VecDeque;

use thiserror::Error;

use crate::gridworld::{ActionId, Cell, Map, GRID_CELLS};
use crate::par;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("reachability ratio needs a nonempty goal set")]
    EmptyGoalSet,
    #[error("goal cell {0:?} is a wall")]
    GoalBlocked(Cell),
}

/// The one-step transition graph induced by a policy for a fixed goal.
///
/// `successor(s)` is where the policy's move from `s` lands; `None` marks an
/// illegal move (the agent is stuck). The goal itself has no outgoing edge.
pub struct FunctionalGraph {
    goal: Cell,
    succ: Vec<Option<Cell>>,
}

/// Evaluate `policy` once per open cell to build the functional graph.
pub fn policy_graph(
    map: &Map,
    goal: Cell,
    policy: impl Fn(Cell) -> ActionId,
) -> Result<FunctionalGraph, MetricsError> {
    if !map.is_open(goal) {
        return Err(MetricsError::GoalBlocked(goal));
    }
    let mut succ = vec![None; GRID_CELLS];
    for s in map.open_cells() {
        if s == goal {
            continue;
        }
        succ[s.index()] = map.apply_action(s, policy(s));
    }
    Ok(FunctionalGraph { goal, succ })
}

impl FunctionalGraph {
    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn successor(&self, s: Cell) -> Option<Cell> {
        self.succ[s.index()]
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().filter(|s| s.is_some()).count()
    }
}

/// A set of cells backed by a flat boolean grid.
#[derive(Clone)]
pub struct CellSet {
    member: Vec<bool>,
    count: usize,
}

impl CellSet {
    fn new() -> CellSet {
        CellSet {
            member: vec![false; GRID_CELLS],
            count: 0,
        }
    }

    fn insert(&mut self, cell: Cell) {
        if !self.member[cell.index()] {
            self.member[cell.index()] = true;
            self.count += 1;
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.member[cell.index()]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// All cells whose forward policy path terminates at the goal, including the
/// goal itself. Computed by reverse BFS over predecessor edges.
pub fn reachable_set(map: &Map, graph: &FunctionalGraph) -> CellSet {
    let mut preds: Vec<Vec<Cell>> = vec![Vec::new(); GRID_CELLS];
    for s in map.open_cells() {
        if let Some(t) = graph.successor(s) {
            preds[t.index()].push(s);
        }
    }
    let mut set = CellSet::new();
    set.insert(graph.goal());
    let mut queue = VecDeque::new();
    queue.push_back(graph.goal());
    while let Some(cell) = queue.pop_front() {
        for &p in &preds[cell.index()] {
            if !set.contains(p) {
                set.insert(p);
                queue.push_back(p);
            }
        }
    }
    set
}

/// Reachability results for a policy over a goal set.
#[derive(Debug)]
pub struct ReachabilityReport {
    /// `|C_g| / |open|` per goal, in input goal order.
    pub per_goal: Vec<(Cell, f64)>,
    /// Mean of the per-goal fractions.
    pub rr: f64,
}

/// Reachability Ratio of `policy` over the goals in `goals`.
///
/// `policy(s, g)` must yield an action for every open `s != g`. Per-goal
/// graphs are independent, so they evaluate in parallel and merge in goal
/// order.
pub fn reachability_ratio(
    map: &Map,
    goals: &[Cell],
    parallel: bool,
    policy: impl Fn(Cell, Cell) -> ActionId + Sync + Send,
) -> Result<ReachabilityReport, MetricsError> {
    if goals.is_empty() {
        return Err(MetricsError::EmptyGoalSet);
    }
    if let Some(&bad) = goals.iter().find(|g| !map.is_open(**g)) {
        return Err(MetricsError::GoalBlocked(bad));
    }
    let open = map.open_count() as f64;
    let fractions = par::map_collect(goals, parallel, |&g| {
        let graph = policy_graph(map, g, |s| policy(s, g)).expect("goals pre-checked");
        reachable_set(map, &graph).len() as f64 / open
    });
    let per_goal: Vec<(Cell, f64)> = goals.iter().copied().zip(fractions).collect();
    let rr = per_goal.iter().map(|(_, f)| f).sum::<f64>() / per_goal.len() as f64;
    Ok(ReachabilityReport { per_goal, rr })
}

/// Outcome of walking a policy forward from one start cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rollout {
    pub success: bool,
    pub steps: usize,
}

/// Follow the policy step by step; success means reaching `goal` within
/// `max_steps`. A stuck move or a revisited cell ends the walk as a failure.
pub fn rollout(
    map: &Map,
    start: Cell,
    goal: Cell,
    max_steps: usize,
    policy: impl Fn(Cell) -> ActionId,
) -> Rollout {
    let mut visited = vec![false; GRID_CELLS];
    let mut cell = start;
    let mut steps = 0;
    loop {
        if cell == goal {
            return Rollout {
                success: true,
                steps,
            };
        }
        if steps >= max_steps || visited[cell.index()] {
            return Rollout {
                success: false,
                steps,
            };
        }
        visited[cell.index()] = true;
        match map.apply_action(cell, policy(cell)) {
            Some(next) => {
                cell = next;
                steps += 1;
            }
            None => {
                return Rollout {
                    success: false,
                    steps,
                }
            }
        }
    }
}

/// Render palette shared with the harness, from the reachability figures:
/// walls yellow, unreachable open cells blue, reachable open cells green,
/// the goal red.
pub const WALL_RGB: [u8; 3] = [255, 255, 0];
pub const UNREACHABLE_RGB: [u8; 3] = [64, 64, 255];
pub const REACHABLE_RGB: [u8; 3] = [64, 200, 64];
pub const GOAL_RGB: [u8; 3] = [255, 0, 0];

/// 31x31 RGB pixel buffer of a reachability map in the shared palette.
pub fn reachability_pixels(map: &Map, goal: Cell, reach: &CellSet) -> Vec<u8> {
    let mut pixels = Vec::with_capacity(GRID_CELLS * 3);
    for idx in 0..GRID_CELLS {
        let cell = Cell::from_index(idx);
        let rgb = if cell == goal {
            GOAL_RGB
        } else if !map.is_open(cell) {
            WALL_RGB
        } else if reach.contains(cell) {
            REACHABLE_RGB
        } else {
            UNREACHABLE_RGB
        };
        pixels.extend_from_slice(&rgb);
    }
    pixels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{door_cell, door_masks, GRID_SIZE};
    use crate::oracle::oracle_labels;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn oracle_policy(map: &Map, goal: Cell) -> impl Fn(Cell) -> ActionId + '_ {
        let labels = oracle_labels(map, goal).unwrap();
        move |s| labels.canonical(s).expect("open non-goal cell")
    }

    #[test]
    fn oracle_graph_has_full_out_degree() {
        let map = Map::from_id(3);
        let g = Cell::new(5, 5).unwrap();
        let graph = policy_graph(&map, g, oracle_policy(&map, g)).unwrap();
        // every open cell except the goal has an edge
        assert_eq!(graph.edge_count(), map.open_count() - 1);
    }

    #[test]
    fn wall_banging_policy_has_no_edges() {
        // constant "up" from the top row of each room hits a wall; pick a map
        // and a policy that always moves into the outer wall from row 1 cells
        let map = Map::base();
        let g = Cell::new(15, 15).unwrap();
        // always move up; cells below row 1 do get edges, so restrict check
        let graph = policy_graph(&map, g, |_| ActionId::new(2).unwrap()).unwrap();
        for col in 1..GRID_SIZE - 1 {
            let top = Cell::new(1, col).unwrap();
            if map.is_open(top) && top != g {
                assert_eq!(graph.successor(top), None);
            }
        }
    }

    #[test]
    fn oracle_reachable_set_is_everything() {
        let map = Map::from_id(77);
        let g = Cell::new(22, 7).unwrap();
        let graph = policy_graph(&map, g, oracle_policy(&map, g)).unwrap();
        let set = reachable_set(&map, &graph);
        assert_eq!(set.len(), map.open_count());
    }

    /// A corridor fixture: one open column, goal at the top, policy "up".
    #[test]
    fn corridor_column_all_reaches_top() {
        let mut rows = vec![vec!['#'; GRID_SIZE]; GRID_SIZE];
        for (r, row) in rows.iter_mut().enumerate().take(30).skip(1) {
            row[5] = '.';
            let _ = r;
        }
        let text: String = rows
            .iter()
            .map(|r| r.iter().collect::<String>())
            .collect::<Vec<_>>()
            .join("\n");
        let map = Map::from_text(&text).unwrap();
        let g = Cell::new(1, 5).unwrap();
        let up = ActionId::new(2).unwrap();
        let graph = policy_graph(&map, g, |_| up).unwrap();
        let set = reachable_set(&map, &graph);
        assert_eq!(set.len(), map.open_count());
        assert!(set.contains(Cell::new(29, 5).unwrap()));
    }

    #[test]
    fn two_cycle_excluded_from_reachable_set() {
        let map = Map::base();
        let g = Cell::new(1, 1).unwrap();
        // cells (5,5) and (5,6) point at each other; everything else oracle
        let labels = oracle_labels(&map, g).unwrap();
        let a = Cell::new(5, 5).unwrap();
        let b = Cell::new(5, 6).unwrap();
        let right = ActionId::new(8).unwrap();
        let left = ActionId::new(4).unwrap();
        let policy = move |s: Cell| {
            if s == a {
                right
            } else if s == b {
                left
            } else {
                labels.canonical(s).unwrap()
            }
        };
        let graph = policy_graph(&map, g, &policy).unwrap();
        let set = reachable_set(&map, &graph);
        assert!(!set.contains(a));
        assert!(!set.contains(b));
        // rollout agrees: the 2-cycle fails via revisit detection
        let roll = rollout(&map, a, g, 10_000, &policy);
        assert!(!roll.success);
    }

    /// Seal room (0,0) with walls (doors 0 and 6 plus door 11 to keep three
    /// blocked) and give the sealed cells a dead-end policy. Exactly the 81
    /// room-interior cells fail.
    #[test]
    fn sealed_room_fraction() {
        let mut rows: Vec<Vec<char>> = Map::base()
            .to_text()
            .lines()
            .map(|l| l.chars().collect())
            .collect();
        for door in [0usize, 6, 11] {
            let cell = door_cell(door);
            rows[cell.row as usize][cell.col as usize] = '#';
        }
        let text: String = rows
            .iter()
            .map(|r| r.iter().collect::<String>())
            .collect::<Vec<_>>()
            .join("\n");
        let map = Map::from_text(&text).unwrap();
        assert_eq!(map.open_count(), 738);

        let g = Cell::new(15, 15).unwrap();
        let labels = oracle_labels(&map, g).unwrap();
        let up = ActionId::new(2).unwrap();
        let policy = move |s: Cell| labels.canonical(s).unwrap_or(up);
        let report = reachability_ratio(&map, &[g], true, |s, _| policy(s)).unwrap();
        let expected = (738.0 - 81.0) / 738.0;
        assert!((report.rr - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_goal_set_rejected() {
        let map = Map::base();
        assert_eq!(
            reachability_ratio(&map, &[], true, |_, _| ActionId::new(1).unwrap()).unwrap_err(),
            MetricsError::EmptyGoalSet
        );
    }

    #[test]
    fn oracle_rr_is_exactly_one() {
        let map = Map::from_id(120);
        let goals: Vec<Cell> = map.open_cells().step_by(97).collect();
        let report = reachability_ratio(&map, &goals, true, |s, g| {
            oracle_labels(&map, g).unwrap().canonical(s).unwrap()
        })
        .unwrap();
        assert_eq!(report.rr, 1.0);
        assert!(report.per_goal.iter().all(|(_, f)| *f == 1.0));
    }

    #[test]
    fn rollout_trivial_cases() {
        let map = Map::base();
        let g = Cell::new(3, 3).unwrap();
        let roll = rollout(&map, g, g, 100, |_| ActionId::new(1).unwrap());
        assert_eq!(
            roll,
            Rollout {
                success: true,
                steps: 0
            }
        );
    }

    #[test]
    fn reverse_bfs_matches_rollout_on_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let mask = door_masks()[rng.random_range(0..164)];
            let map = Map::build(mask);
            let open: Vec<Cell> = map.open_cells().collect();
            let g = open[rng.random_range(0..open.len())];
            // random action table
            let table: Vec<ActionId> = (0..GRID_CELLS)
                .map(|_| ActionId::from_index(rng.random_range(0..8)))
                .collect();
            let policy = |s: Cell| table[s.index()];
            let graph = policy_graph(&map, g, policy).unwrap();
            let set = reachable_set(&map, &graph);
            for &s in open.iter().step_by(13) {
                let roll = rollout(&map, s, g, map.open_count() + 1, policy);
                assert_eq!(
                    roll.success,
                    set.contains(s),
                    "disagreement at {s:?} goal {g:?} on {mask:?}"
                );
            }
        }
    }

    #[test]
    fn oracle_augmentation_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let mask = door_masks()[rng.random_range(0..164)];
            let map = Map::build(mask);
            let open: Vec<Cell> = map.open_cells().collect();
            let g = open[rng.random_range(0..open.len())];
            let labels = oracle_labels(&map, g).unwrap();
            let table: Vec<ActionId> = (0..GRID_CELLS)
                .map(|_| ActionId::from_index(rng.random_range(0..8)))
                .collect();
            let base_policy = |s: Cell| table[s.index()];
            let graph = policy_graph(&map, g, base_policy).unwrap();
            let set = reachable_set(&map, &graph);
            let augmented = |s: Cell| {
                if set.contains(s) {
                    base_policy(s)
                } else {
                    labels.canonical(s).unwrap()
                }
            };
            let rr_base = reachability_ratio(&map, &[g], false, |s, _| base_policy(s))
                .unwrap()
                .rr;
            let rr_aug = reachability_ratio(&map, &[g], false, |s, _| augmented(s))
                .unwrap()
                .rr;
            assert!(rr_aug >= rr_base);
        }
    }

    #[test]
    fn palette_pixels() {
        let map = Map::from_id(0);
        let g = Cell::new(5, 5).unwrap();
        let graph = policy_graph(&map, g, oracle_policy(&map, g)).unwrap();
        let set = reachable_set(&map, &graph);
        let pixels = reachability_pixels(&map, g, &set);
        assert_eq!(pixels.len(), GRID_CELLS * 3);
        // wall pixel
        assert_eq!(&pixels[0..3], &WALL_RGB);
        // goal pixel
        let gi = g.index() * 3;
        assert_eq!(&pixels[gi..gi + 3], &GOAL_RGB);
        // no unreachable pixels under the oracle policy
        for idx in 0..GRID_CELLS {
            assert_ne!(&pixels[idx * 3..idx * 3 + 3], &UNREACHABLE_RGB);
        }
    }
}
