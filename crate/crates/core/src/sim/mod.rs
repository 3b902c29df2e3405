//! Communication graph, consensus matrices, and the decentralized
//! acquisition simulation used for the deviation and safety checks.
//!
//! Followers average the positions of exactly three in-neighbors with
//! constant positive weights that reproduce their reference position, so the
//! steady state of the protocol is the affine image of the reference
//! formation pinned by the leaders.

mod acquisition;
mod quad;

pub use acquisition::{simulate_acquisition, DeviationReport, Plant, SimOptions};
pub use quad::{quad_step, tracking_control, ControlGains, QuadParams, QuadState};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::deform::ReferenceFormation;
use crate::geometry::triangle_barycentric;
use crate::{real, Real, Vec3};

pub const LEADER_COUNT: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("agent count must be at least 4")]
    TooFewAgents,
    #[error("follower {follower} lists invalid in-neighbor {neighbor}")]
    BadNeighbor { follower: usize, neighbor: usize },
    #[error("follower {follower} weights must be positive and sum to 1")]
    BadWeights { follower: usize },
    #[error("follower {follower} is not strictly inside its in-neighbor triangle")]
    NotInteriorFollower { follower: usize },
    #[error("follower {follower} weights are inconsistent with the reference positions")]
    InconsistentWeights { follower: usize },
    #[error("communication graph is not leader-connected")]
    SingularCommunication,
    #[error("pitch magnitude reached the attitude singularity")]
    AttitudeSingularity,
    #[error("graph size {graph} does not match formation size {formation}")]
    SizeMismatch { graph: usize, formation: usize },
}

/// Directed communication topology with per-follower averaging weights.
///
/// Agents are identified 1-based: leaders are `1..=3`, followers `4..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph<T: Real = f64> {
    n: usize,
    in_neighbors: Vec<[usize; 3]>,
    weights: Vec<[T; 3]>,
}

impl<T: Real> CommGraph<T> {
    /// Builds a graph from explicit weights, validating positivity and the
    /// per-follower unit sum.
    pub fn from_weights(
        n: usize,
        in_neighbors: Vec<[usize; 3]>,
        weights: Vec<[T; 3]>,
    ) -> Result<Self, SimError> {
        if n < 4 {
            return Err(SimError::TooFewAgents);
        }
        assert_eq!(in_neighbors.len(), n - LEADER_COUNT);
        assert_eq!(weights.len(), n - LEADER_COUNT);
        for (fi, nbrs) in in_neighbors.iter().enumerate() {
            let follower = fi + LEADER_COUNT + 1;
            for &j in nbrs {
                if j < 1 || j > n || j == follower {
                    return Err(SimError::BadNeighbor {
                        follower,
                        neighbor: j,
                    });
                }
            }
            if nbrs[0] == nbrs[1] || nbrs[0] == nbrs[2] || nbrs[1] == nbrs[2] {
                return Err(SimError::BadNeighbor {
                    follower,
                    neighbor: nbrs[1],
                });
            }
            let w = &weights[fi];
            let sum = w[0] + w[1] + w[2];
            if w.iter().any(|&x| x <= T::zero()) || (sum - T::one()).abs() > real(1e-9) {
                return Err(SimError::BadWeights { follower });
            }
        }
        Ok(Self {
            n,
            in_neighbors,
            weights,
        })
    }

    /// Derives the weights from the reference formation: each follower's
    /// weights are the barycentric coordinates of its reference position
    /// with respect to its in-neighbors' reference positions.
    pub fn compute_weights(
        reference: &ReferenceFormation<T>,
        in_neighbors: Vec<[usize; 3]>,
    ) -> Result<Self, SimError> {
        let n = reference.len();
        if n < 4 {
            return Err(SimError::TooFewAgents);
        }
        assert_eq!(in_neighbors.len(), n - LEADER_COUNT);
        let positions = reference.positions();
        let mut weights = Vec::with_capacity(in_neighbors.len());
        for (fi, nbrs) in in_neighbors.iter().enumerate() {
            let follower = fi + LEADER_COUNT + 1;
            for &j in nbrs {
                if j < 1 || j > n || j == follower {
                    return Err(SimError::BadNeighbor {
                        follower,
                        neighbor: j,
                    });
                }
            }
            let w = triangle_barycentric(
                &positions[nbrs[0] - 1],
                &positions[nbrs[1] - 1],
                &positions[nbrs[2] - 1],
                &positions[follower - 1],
            )
            .map_err(|_| SimError::NotInteriorFollower { follower })?;
            if w.iter().any(|&x| x <= T::zero()) {
                return Err(SimError::NotInteriorFollower { follower });
            }
            weights.push(w);
        }
        Self::from_weights(n, in_neighbors, weights)
    }

    /// Checks the weight-consistency identity against a reference formation:
    /// the weighted neighbor offsets from each follower must cancel.
    pub fn check_consistency(
        &self,
        reference: &ReferenceFormation<T>,
        tol: T,
    ) -> Result<(), SimError> {
        if reference.len() != self.n {
            return Err(SimError::SizeMismatch {
                graph: self.n,
                formation: reference.len(),
            });
        }
        let positions = reference.positions();
        for follower in self.followers() {
            let pi = positions[follower - 1];
            let mut acc = Vec3::<T>::zeros();
            for (&j, &w) in self
                .in_neighbors_of(follower)
                .iter()
                .zip(self.weights_of(follower).iter())
            {
                acc += (positions[j - 1] - pi) * w;
            }
            if acc.norm() > tol {
                return Err(SimError::InconsistentWeights { follower });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn followers(&self) -> impl Iterator<Item = usize> {
        LEADER_COUNT + 1..=self.n
    }

    pub fn in_neighbors_of(&self, follower: usize) -> &[usize; 3] {
        &self.in_neighbors[follower - LEADER_COUNT - 1]
    }

    pub fn weights_of(&self, follower: usize) -> &[T; 3] {
        &self.weights[follower - LEADER_COUNT - 1]
    }

    /// Builds the stacked weight matrix and the leader-to-agent propagation
    /// matrix.
    ///
    /// The first output is the n-by-n weight matrix: zero leader rows, and
    /// follower rows carrying the neighbor weights with -1 on the diagonal.
    /// The second is the n-by-3 row-stochastic matrix whose row i gives
    /// agent i's steady position as a combination of the three leaders:
    /// identity rows for the leaders and propagated barycentric weights for
    /// the followers, obtained by solving the follower block of the
    /// consensus equilibrium.
    pub fn consensus_matrices(&self) -> Result<(DMatrix<T>, DMatrix<T>), SimError> {
        let n = self.n;
        let nf = n - LEADER_COUNT;

        let mut w = DMatrix::<T>::zeros(n, n);
        for follower in self.followers() {
            w[(follower - 1, follower - 1)] = -T::one();
            for (&j, &wij) in self
                .in_neighbors_of(follower)
                .iter()
                .zip(self.weights_of(follower).iter())
            {
                w[(follower - 1, j - 1)] = wij;
            }
        }

        // Follower equilibrium: (I - A0) F = B0, with A0/B0 the pure-weight
        // blocks of w.
        let mut a0 = DMatrix::<T>::zeros(nf, nf);
        let mut b0 = DMatrix::<T>::zeros(nf, LEADER_COUNT);
        for follower in self.followers() {
            let fi = follower - LEADER_COUNT - 1;
            for (&j, &wij) in self
                .in_neighbors_of(follower)
                .iter()
                .zip(self.weights_of(follower).iter())
            {
                if j <= LEADER_COUNT {
                    b0[(fi, j - 1)] = wij;
                } else {
                    a0[(fi, j - LEADER_COUNT - 1)] = wij;
                }
            }
        }
        let sys = DMatrix::<T>::identity(nf, nf) - a0;
        let f = sys
            .clone()
            .lu()
            .solve(&b0)
            .ok_or(SimError::SingularCommunication)?;
        // A nearly singular system can slip past the solver; reject on
        // residual instead of trusting the pivots.
        let residual = (&sys * &f - &b0).amax();
        if !residual.is_finite() || residual > real(1e-8) {
            return Err(SimError::SingularCommunication);
        }

        let mut w_l = DMatrix::<T>::zeros(n, LEADER_COUNT);
        for i in 0..LEADER_COUNT {
            w_l[(i, i)] = T::one();
        }
        w_l.view_mut((LEADER_COUNT, 0), (nf, LEADER_COUNT))
            .copy_from(&f);
        Ok((w, w_l))
    }
}

/// Local desired position of a follower: the weighted average of its
/// in-neighbors' current positions.
pub fn local_desired_position<T: Real>(
    graph: &CommGraph<T>,
    follower: usize,
    neighbor_positions: &[Vec3<T>; 3],
) -> Vec3<T> {
    let w = graph.weights_of(follower);
    neighbor_positions[0] * w[0] + neighbor_positions[1] * w[1] + neighbor_positions[2] * w[2]
}
