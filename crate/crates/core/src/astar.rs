//! A* search over the valid-position set and compression of the node path
//! into straight-segment waypoints.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::grid::{FreeSet, Grid, GridNode, NodeIndex};
use crate::{Real, Vec3};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("start or goal is not a valid containment-ball position")]
    InvalidEndpoint,
    #[error("open set exhausted before reaching the goal")]
    NoPath,
}

/// Node path returned by the planner, start to goal.
#[derive(Debug, Clone)]
pub struct PathResult<T: Real = f64> {
    pub nodes: Vec<GridNode<T>>,
    pub cost: T,
}

/// The at-most-26 on-grid neighbors of `node` that are valid ball positions.
pub fn neighbors<T: Real, F: FreeSet<T>>(
    node: &GridNode<T>,
    grid: &Grid<T>,
    free: &F,
) -> Vec<GridNode<T>> {
    let mut out = Vec::with_capacity(26);
    for hx in -1..=1i64 {
        for hy in -1..=1i64 {
            for hz in -1..=1i64 {
                if hx == 0 && hy == 0 && hz == 0 {
                    continue;
                }
                let idx = [
                    node.index[0] + hx,
                    node.index[1] + hy,
                    node.index[2] + hz,
                ];
                if let Some(n) = grid.node(idx) {
                    if free.contains(&n) {
                        out.push(n);
                    }
                }
            }
        }
    }
    out
}

/// Length of one grid step, grouped by axis offset pattern so identical step
/// types always contribute the identical float.
fn step_length<T: Real>(from: NodeIndex, to: NodeIndex, grid: &Grid<T>) -> T {
    let d = grid.deltas();
    let mut acc = T::zero();
    for ((f, t), d) in from.iter().zip(to.iter()).zip(d.iter()) {
        if f != t {
            debug_assert!((f - t).abs() == 1);
            acc += *d * *d;
        }
    }
    acc.sqrt()
}

/// Path cost as the sum of consecutive node distances, accumulated per
/// distinct step length so equal-cost paths report bit-identical totals.
pub fn path_cost<T: Real>(nodes: &[GridNode<T>], grid: &Grid<T>) -> T {
    use std::collections::BTreeMap;
    let d = grid.deltas();
    let mut counts: BTreeMap<u64, (T, u32)> = BTreeMap::new();
    for w in nodes.windows(2) {
        let mut len2 = T::zero();
        for (a, d) in d.iter().enumerate() {
            if w[0].index[a] != w[1].index[a] {
                len2 += *d * *d;
            }
        }
        let key = len2.to_f64().expect("finite step length").to_bits();
        counts.entry(key).or_insert((len2, 0)).1 += 1;
    }
    let mut total = T::zero();
    for (len2, count) in counts.into_values() {
        total += T::from_u32(count).unwrap() * len2.sqrt();
    }
    total
}

struct OpenEntry<T> {
    f: T,
    h: T,
    g: T,
    index: NodeIndex,
}

impl<T: Real> PartialEq for OpenEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Real> Eq for OpenEntry<T> {}

impl<T: Real> PartialOrd for OpenEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for OpenEntry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest f wins. Ties break
        // on smaller heuristic, then lexicographic index, for reproducible
        // paths across runs and platforms.
        let key = |e: &Self| (e.f, e.h);
        key(other)
            .partial_cmp(&key(self))
            .expect("non-finite cost in open set")
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Minimum-cost grid path from `start` to `goal` under 26-connected moves.
///
/// Unvisited nodes carry an implicit infinite cost-to-come; the straight-line
/// heuristic is admissible and consistent, so closed nodes are never
/// reopened. The open set is a binary heap with lazy deletion.
pub fn astar<T: Real, F: FreeSet<T>>(
    start: &GridNode<T>,
    goal: &GridNode<T>,
    grid: &Grid<T>,
    free: &F,
) -> Result<PathResult<T>, PlanError> {
    if !grid.contains_index(start.index)
        || !grid.contains_index(goal.index)
        || !free.contains(start)
        || !free.contains(goal)
    {
        return Err(PlanError::InvalidEndpoint);
    }

    let heuristic = |n: &GridNode<T>| (n.position - goal.position).norm();

    let mut g_score: HashMap<NodeIndex, T> = HashMap::new();
    let mut parent: HashMap<NodeIndex, NodeIndex> = HashMap::new();
    let mut closed: HashMap<NodeIndex, ()> = HashMap::new();
    let mut open = BinaryHeap::new();

    g_score.insert(start.index, T::zero());
    open.push(OpenEntry {
        f: heuristic(start),
        h: heuristic(start),
        g: T::zero(),
        index: start.index,
    });

    while let Some(entry) = open.pop() {
        if closed.contains_key(&entry.index) {
            continue;
        }
        // Stale heap entry left behind by a later improvement.
        if g_score.get(&entry.index).is_some_and(|&g| entry.g > g) {
            continue;
        }
        closed.insert(entry.index, ());

        if entry.index == goal.index {
            let mut rev = vec![goal.index];
            let mut cur = goal.index;
            while let Some(&p) = parent.get(&cur) {
                rev.push(p);
                cur = p;
            }
            rev.reverse();
            let nodes: Vec<GridNode<T>> = rev
                .into_iter()
                .map(|i| grid.node(i).expect("path node on grid"))
                .collect();
            let cost = path_cost(&nodes, grid);
            return Ok(PathResult { nodes, cost });
        }

        let here = grid.node(entry.index).expect("open node on grid");
        for nb in neighbors(&here, grid, free) {
            if closed.contains_key(&nb.index) {
                continue;
            }
            let tentative = entry.g + step_length(entry.index, nb.index, grid);
            let better = g_score
                .get(&nb.index)
                .is_none_or(|&known| tentative < known);
            if better {
                g_score.insert(nb.index, tentative);
                parent.insert(nb.index, entry.index);
                let h = heuristic(&nb);
                open.push(OpenEntry {
                    f: tentative + h,
                    h,
                    g: tentative,
                    index: nb.index,
                });
            }
        }
    }
    Err(PlanError::NoPath)
}

/// Collapses a node path into waypoints: the endpoints plus every node where
/// the step direction changes. Consecutive waypoints bound collinear runs of
/// the original path.
pub fn compress_waypoints<T: Real>(path: &PathResult<T>) -> Vec<Vec3<T>> {
    let nodes = &path.nodes;
    if nodes.len() <= 2 {
        return nodes.iter().map(|n| n.position).collect();
    }
    let mut out = vec![nodes[0].position];
    for k in 1..nodes.len() - 1 {
        let prev = step(nodes[k - 1].index, nodes[k].index);
        let next = step(nodes[k].index, nodes[k + 1].index);
        if prev != next {
            out.push(nodes[k].position);
        }
    }
    out.push(nodes[nodes.len() - 1].position);
    out
}

fn step(from: NodeIndex, to: NodeIndex) -> [i64; 3] {
    [to[0] - from[0], to[1] - from[1], to[2] - from[2]]
}
