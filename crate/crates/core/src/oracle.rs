//! Ground-truth shortest-path policies via breadth-first search.
//!
//! Every move costs 1 regardless of direction, so plain BFS over open cells
//! yields optimal distances. The optimal action set at a cell holds every
//! action that steps to a cell one unit closer to the goal; the canonical
//! label is the smallest such action index, which keeps training labels and
//! accuracy metrics deterministic.

use std::collections::VecDeque;

use thiserror::Error;

use crate::gridworld::{ActionId, Cell, Map, GRID_CELLS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("goal cell {0:?} is a wall")]
    GoalBlocked(Cell),
    #[error("cell {0:?} is a wall")]
    WallCell(Cell),
    #[error("no action is defined at the goal cell")]
    AtGoal,
    #[error("cell {0:?} cannot reach the goal")]
    Unreachable(Cell),
}

/// Sentinel distance for walls and cells cut off from the goal.
const UNREACHABLE: u32 = u32::MAX;

/// A set of actions packed as a bitmask over k-1.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub fn empty() -> ActionSet {
        ActionSet(0)
    }

    pub fn from_bits(bits: u8) -> ActionSet {
        ActionSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, action: ActionId) {
        self.0 |= 1 << action.index();
    }

    pub fn contains(self, action: ActionId) -> bool {
        self.0 & (1 << action.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Smallest action index in the set.
    pub fn min(self) -> Option<ActionId> {
        (self.0 != 0).then(|| ActionId::from_index(self.0.trailing_zeros() as usize))
    }

    pub fn iter(self) -> impl Iterator<Item = ActionId> {
        ActionId::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

/// BFS distances from every cell to a fixed goal.
#[derive(Debug)]
pub struct DistanceField {
    goal: Cell,
    dist: Vec<u32>,
}

/// Unit-cost BFS distances to `goal` under the map's movement rules.
///
/// Moves are symmetric between open cells, so a single traversal from the
/// goal suffices.
pub fn distance_field(map: &Map, goal: Cell) -> Result<DistanceField, OracleError> {
    if !map.is_open(goal) {
        return Err(OracleError::GoalBlocked(goal));
    }
    let mut dist = vec![UNREACHABLE; GRID_CELLS];
    dist[goal.index()] = 0;
    let mut queue = VecDeque::with_capacity(map.open_count());
    queue.push_back(goal);
    while let Some(cell) = queue.pop_front() {
        let next_dist = dist[cell.index()] + 1;
        for action in ActionId::ALL {
            if let Some(neighbor) = map.apply_action(cell, action) {
                let entry = &mut dist[neighbor.index()];
                if *entry == UNREACHABLE {
                    *entry = next_dist;
                    queue.push_back(neighbor);
                }
            }
        }
    }
    Ok(DistanceField { goal, dist })
}

impl DistanceField {
    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Distance to the goal, `None` for walls and unreachable cells.
    pub fn dist(&self, cell: Cell) -> Option<u32> {
        let d = self.dist[cell.index()];
        (d != UNREACHABLE).then_some(d)
    }

    /// Every action that moves exactly one unit closer to the goal.
    pub fn optimal_actions(&self, map: &Map, s: Cell) -> Result<ActionSet, OracleError> {
        if !map.is_open(s) {
            return Err(OracleError::WallCell(s));
        }
        if s == self.goal {
            return Err(OracleError::AtGoal);
        }
        let here = self.dist[s.index()];
        if here == UNREACHABLE {
            return Err(OracleError::Unreachable(s));
        }
        let mut set = ActionSet::empty();
        for action in ActionId::ALL {
            if let Some(target) = map.apply_action(s, action) {
                if self.dist[target.index()] + 1 == here {
                    set.insert(action);
                }
            }
        }
        debug_assert!(!set.is_empty(), "finite distance implies a descent move");
        Ok(set)
    }

    /// Deterministic training label: the smallest optimal action index.
    pub fn canonical_action(&self, map: &Map, s: Cell) -> Result<ActionId, OracleError> {
        Ok(self
            .optimal_actions(map, s)?
            .min()
            .expect("optimal set nonempty"))
    }
}

/// Per-cell optimal action sets and canonical labels for one (map, goal) pair.
pub struct OracleLabels {
    goal: Cell,
    masks: Vec<u8>,
    canonical: Vec<u8>, // k, 0 = none (goal / wall / unreachable)
    dist: Vec<u32>,
}

/// Compute the full label table for a goal in one pass.
pub fn oracle_labels(map: &Map, goal: Cell) -> Result<OracleLabels, OracleError> {
    let field = distance_field(map, goal)?;
    let mut masks = vec![0u8; GRID_CELLS];
    let mut canonical = vec![0u8; GRID_CELLS];
    for s in map.open_cells() {
        if s == goal || field.dist(s).is_none() {
            continue;
        }
        let set = field
            .optimal_actions(map, s)
            .expect("open non-goal reachable cell");
        masks[s.index()] = set.bits();
        canonical[s.index()] = set.min().expect("nonempty").k();
    }
    Ok(OracleLabels {
        goal,
        masks,
        canonical,
        dist: field.dist,
    })
}

impl OracleLabels {
    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn optimal_set(&self, s: Cell) -> ActionSet {
        ActionSet::from_bits(self.masks[s.index()])
    }

    /// Canonical label at `s`; `None` at the goal and off the open region.
    pub fn canonical(&self, s: Cell) -> Option<ActionId> {
        ActionId::new(self.canonical[s.index()])
    }

    pub fn dist(&self, s: Cell) -> Option<u32> {
        let d = self.dist[s.index()];
        (d != UNREACHABLE).then_some(d)
    }
}
