//! Constrained minimum-effort trajectory generation for the three leaders.
//!
//! Within each waypoint segment the planar leader coordinates follow
//! double-integrator dynamics driven by an input that minimizes the control
//! effort subject to fixed boundary states and a quadratic invariant of the
//! leader configuration (the leading-triangle spread form). The
//! Euler-Lagrange conditions couple state and co-state through a pointwise
//! Lagrange multiplier; the solver iterates the multiplier profile to a
//! fixed point, integrating the 24x24 transition matrix each pass. Altitude
//! is decoupled and follows a quintic blend between waypoint heights. The
//! overall travel time is assigned by bisecting on a simulated
//! tracking-deviation bound.

mod matrices;
mod segment;
mod timing;

pub use matrices::{
    area_form, area_of_positions, area_rate, constraint_multiplier, constraint_value,
    coupling_matrix, hamiltonian_matrix, quadratic_form_matrix, signed_triangle_area, InputVec,
    StateVec,
};
pub use segment::{integrate_transition, solve_segment, SegmentSolution, SolverOptions};
pub use timing::{
    assign_travel_time, smoothstep, smoothstep_accel, smoothstep_rate, solve_trajectory,
    z_accel, z_rate, z_trajectory, LeaderTrajectory, TimingResult, TrajectorySample,
    TravelTimeOptions,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    /// The multiplier denominator vanished (leaders coincide per axis).
    #[error("constraint multiplier is undefined for this state")]
    DegenerateConstraint,
    /// The boundary solve for the initial co-state is rank-deficient.
    #[error("transition-matrix partition is singular (condition {condition:.3e})")]
    SingularTransition { condition: f64 },
    /// The multiplier fixed point did not settle within the iteration cap.
    #[error("multiplier iteration stalled at residual {residual:.3e}")]
    NoConvergence { residual: f64 },
    /// The transition-matrix integration error estimate exceeded tolerance.
    #[error("transition integration too coarse (estimate {estimate:.3e})")]
    StepSizeTooCoarse { estimate: f64 },
    /// Even the slowest admissible travel time violates the deviation bound.
    #[error("deviation {max_deviation:.4} exceeds bound at maximum travel time {t_max:.1}")]
    Infeasible { max_deviation: f64, t_max: f64 },
}
