//! Uniform discretization of the motion space and the memoized valid-position
//! set queried by the route planner.

use std::collections::HashMap;
use std::sync::Mutex;

use thiserror::Error;

use crate::geometry::{is_valid_center, ObstacleMesh};
use crate::{Real, Vec3};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("grid deltas must be strictly positive")]
    NonPositiveDelta,
    #[error("grid counts must be at least 1")]
    EmptyAxis,
}

/// One-based node index along each axis, `1 ..= count`.
pub type NodeIndex = [i64; 3];

/// Uniform grid over the motion space.
///
/// Node `(i, j, k)` sits at `origin + (i*dx, j*dy, k*dz)` with one-based
/// indices, so the origin itself is not a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Real = f64> {
    origin: Vec3<T>,
    deltas: [T; 3],
    counts: [usize; 3],
}

impl<T: Real> Grid<T> {
    pub fn new(origin: Vec3<T>, deltas: [T; 3], counts: [usize; 3]) -> Result<Self, GridError> {
        if deltas.iter().any(|d| *d <= T::zero()) {
            return Err(GridError::NonPositiveDelta);
        }
        if counts.iter().any(|c| *c < 1) {
            return Err(GridError::EmptyAxis);
        }
        Ok(Self {
            origin,
            deltas,
            counts,
        })
    }

    pub fn origin(&self) -> Vec3<T> {
        self.origin
    }

    pub fn deltas(&self) -> [T; 3] {
        self.deltas
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn contains_index(&self, idx: NodeIndex) -> bool {
        (0..3).all(|a| idx[a] >= 1 && idx[a] <= self.counts[a] as i64)
    }

    pub fn position(&self, idx: NodeIndex) -> Vec3<T> {
        Vec3::new(
            self.origin.x + T::from_i64(idx[0]).unwrap() * self.deltas[0],
            self.origin.y + T::from_i64(idx[1]).unwrap() * self.deltas[1],
            self.origin.z + T::from_i64(idx[2]).unwrap() * self.deltas[2],
        )
    }

    pub fn node(&self, idx: NodeIndex) -> Option<GridNode<T>> {
        self.contains_index(idx).then(|| GridNode {
            index: idx,
            position: self.position(idx),
        })
    }

    /// Snaps a position to the node it coincides with, within `tol` on each
    /// axis. Returns `None` when the position is off-grid or out of range.
    pub fn node_at(&self, p: &Vec3<T>, tol: T) -> Option<GridNode<T>> {
        let offset = p - self.origin;
        let mut idx = [0i64; 3];
        for (slot, (coord, delta)) in idx.iter_mut().zip(offset.iter().zip(self.deltas.iter())) {
            let steps = *coord / *delta;
            let rounded = steps.round();
            if (steps - rounded).abs() * *delta > tol {
                return None;
            }
            *slot = num_traits::ToPrimitive::to_i64(&rounded)?;
        }
        self.node(idx)
    }
}

/// A grid node together with its world position.
#[derive(Debug, Clone, Copy)]
pub struct GridNode<T: Real = f64> {
    pub index: NodeIndex,
    pub position: Vec3<T>,
}

impl<T: Real> PartialEq for GridNode<T> {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
    }
}

impl<T: Real> Eq for GridNode<T> {}

/// Membership test for the set of valid containment-ball centers.
pub trait FreeSet<T: Real> {
    fn contains(&self, node: &GridNode<T>) -> bool;
}

/// Valid-position set induced by an obstacle mesh and ball radius.
///
/// Results are memoized per node; the table uses interior locking so
/// concurrent queries may share one instance.
pub struct MeshFreeSet<T: Real = f64> {
    r_max: T,
    mesh: ObstacleMesh<T>,
    cache: Mutex<HashMap<NodeIndex, bool>>,
}

impl<T: Real> MeshFreeSet<T> {
    pub fn new(r_max: T, mesh: ObstacleMesh<T>) -> Self {
        assert!(r_max > T::zero(), "ball radius must be positive");
        Self {
            r_max,
            mesh,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn mesh(&self) -> &ObstacleMesh<T> {
        &self.mesh
    }

    pub fn r_max(&self) -> T {
        self.r_max
    }
}

impl<T: Real> FreeSet<T> for MeshFreeSet<T> {
    fn contains(&self, node: &GridNode<T>) -> bool {
        if let Some(&hit) = self.cache.lock().unwrap().get(&node.index) {
            return hit;
        }
        let valid = is_valid_center(&node.position, self.r_max, &self.mesh);
        self.cache.lock().unwrap().insert(node.index, valid);
        valid
    }
}

impl<T: Real, F: Fn(&GridNode<T>) -> bool> FreeSet<T> for F {
    fn contains(&self, node: &GridNode<T>) -> bool {
        self(node)
    }
}
