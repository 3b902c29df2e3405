//! Planning and simulation kernels for moving a leader-follower quadcopter
//! formation through an obstacle-laden 3-D workspace.
//!
//! The formation is treated as a planar deformable body: three leaders pin an
//! affine map of a reference configuration and every follower sits at a fixed
//! barycentric combination of its in-neighbors. Planning proceeds in stages:
//!
//! 1. [`astar`] routes the center of a rigid containment ball over a uniform
//!    grid, avoiding tetrahedralized obstacle meshes ([`geometry`]).
//! 2. [`deform`] decomposes the requested end deformation into stretch, shear
//!    and rotation, interpolates it along the route, and rebuilds leader
//!    configurations at each waypoint.
//! 3. [`ocp`] solves a constrained minimum-effort two-point boundary-value
//!    problem per route segment and picks the overall travel time by
//!    bisecting on a simulated tracking-deviation bound.
//! 4. [`sim`] runs the decentralized acquisition protocol (leaders track
//!    their planned trajectories, followers average neighbor positions) and
//!    reports per-agent deviations for the safety checks.
//!
//! All numeric kernels are generic over the scalar type via [`Real`];
//! `f64` is the default everywhere and the type the CLI uses.

pub mod astar;
pub mod deform;
pub mod geometry;
pub mod grid;
pub mod ocp;
pub mod sim;

mod real;

pub use real::{real, Real};

/// 3-D position or displacement, meters.
pub type Vec3<T = f64> = nalgebra::Vector3<T>;
