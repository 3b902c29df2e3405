//! Constant matrices of the constrained leader problem and the pointwise
//! constraint algebra built on them.

use nalgebra::{SMatrix, SVector};

use super::OcpError;
use crate::deform::LeaderStack;
use crate::{real, Real};

/// Stacked planar leader state: `(x1, x2, x3, y1, y2, y3)` then the rates.
pub type StateVec<T> = SVector<T, 12>;
/// Planar leader accelerations `(x1'', x2'', x3'', y1'', y2'', y3'')`.
pub type InputVec<T> = SVector<T, 6>;

/// The 6x6 pairwise-difference coupling matrix (quarter-scaled).
pub fn coupling_matrix<T: Real>() -> SMatrix<T, 6, 6> {
    let q = real::<T>(0.25);
    let z = T::zero();
    #[rustfmt::skip]
    let m = SMatrix::<T, 6, 6>::from_row_slice(&[
        z,  z,  z,  z,  q, -q,
        z,  z,  z, -q,  z,  q,
        z,  z,  z,  q, -q,  z,
        z, -q,  q,  z,  z,  z,
        q,  z, -q,  z,  z,  z,
       -q,  q,  z,  z,  z,  z,
    ]);
    m
}

/// Gram matrix of the coupling rows: block-diagonal with the scaled graph
/// Laplacian of the complete 3-graph on each coordinate block.
pub fn quadratic_form_matrix<T: Real>() -> SMatrix<T, 6, 6> {
    let p = coupling_matrix::<T>();
    p.transpose() * p
}

/// The conserved quadratic form of a leader stack: one sixteenth of the sum
/// of squared pairwise coordinate differences over the planar components.
pub fn area_form<T: Real>(y: &LeaderStack<T>) -> T {
    area_of_positions(&y.xy())
}

/// Same form evaluated on the position half of a planar state.
pub fn area_of_positions<T: Real>(q: &SVector<T, 6>) -> T {
    let m = quadratic_form_matrix::<T>();
    (m * q).dot(q)
}

/// Time derivative of the form along a state: `2 qdot^T M q`.
pub fn area_rate<T: Real>(x: &StateVec<T>) -> T {
    let m = quadratic_form_matrix::<T>();
    let q = x.fixed_rows::<6>(0);
    let qdot = x.fixed_rows::<6>(6);
    real::<T>(2.0) * (m * q).dot(&qdot)
}

/// True signed area of the leading triangle, reported for diagnostics.
pub fn signed_triangle_area<T: Real>(y: &LeaderStack<T>) -> T {
    let p = y.positions();
    let half = real::<T>(0.5);
    half * ((p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y))
}

/// Second time derivative of the quadratic form along the dynamics:
/// `2 qdot^T M qdot + 2 q^T M u`.
pub fn constraint_value<T: Real>(x: &StateVec<T>, u: &InputVec<T>) -> T {
    let m = quadratic_form_matrix::<T>();
    let q = x.fixed_rows::<6>(0).into_owned();
    let qdot = x.fixed_rows::<6>(6).into_owned();
    let two = real::<T>(2.0);
    two * (m * qdot).dot(&qdot) + two * (m * q).dot(u)
}

/// Lagrange multiplier that drives the constraint to `target` once the input
/// is substituted by the stationarity condition.
///
/// `target` is zero for a strictly conserved form; segment solves pass the
/// second derivative of the boundary-matched reference instead.
pub fn constraint_multiplier_with_target<T: Real>(
    x: &StateVec<T>,
    costate: &StateVec<T>,
    target: T,
) -> Result<T, OcpError> {
    let m = quadratic_form_matrix::<T>();
    let q = x.fixed_rows::<6>(0).into_owned();
    let qdot = x.fixed_rows::<6>(6).into_owned();
    let lambda_rate = costate.fixed_rows::<6>(6).into_owned();
    let two = real::<T>(2.0);

    let mq = m * q;
    let denom = real::<T>(4.0) * mq.norm_squared();
    if denom.abs() <= real(1e-12) {
        return Err(OcpError::DegenerateConstraint);
    }
    let numer = two * (m * qdot).dot(&qdot) - two * mq.dot(&lambda_rate) - target;
    Ok(numer / denom)
}

/// Multiplier for the strictly conserved form (`target = 0`).
pub fn constraint_multiplier<T: Real>(
    x: &StateVec<T>,
    costate: &StateVec<T>,
) -> Result<T, OcpError> {
    constraint_multiplier_with_target(x, costate, T::zero())
}

/// The 24x24 coupled state/co-state system matrix for a multiplier value.
pub fn hamiltonian_matrix<T: Real>(gamma: T) -> SMatrix<T, 24, 24> {
    let m = quadratic_form_matrix::<T>();
    let two = real::<T>(2.0);
    let four = real::<T>(4.0);

    let mut a = SMatrix::<T, 24, 24>::zeros();
    // State block: qdot = rates, qddot = -2 gamma M q - lambda_rate.
    for i in 0..6 {
        a[(i, 6 + i)] = T::one();
        a[(6 + i, 18 + i)] = -T::one();
    }
    a.view_mut((6, 0), (6, 6)).copy_from(&(m * (-two * gamma)));
    // Co-state block.
    a.view_mut((12, 0), (6, 6))
        .copy_from(&(m * m * (four * gamma * gamma)));
    a.view_mut((18, 6), (6, 6)).copy_from(&(m * (-four * gamma)));
    for i in 0..6 {
        a[(18 + i, 12 + i)] = -T::one();
    }
    a.view_mut((12, 18), (6, 6)).copy_from(&(m * (two * gamma)));
    a
}
