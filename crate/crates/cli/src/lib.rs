//! Scenario ingestion, pipeline orchestration and artifact emission for the
//! formation planner.
//!
//! A single JSON scenario file describes the workspace grid, the obstacle
//! mesh, the reference formation and communication graph, the start and goal
//! of the containment ball, the requested end deformation, and the safety
//! constants. [`pipeline::run_pipeline`] executes route planning,
//! configuration interpolation, the per-segment optimal-control solves,
//! travel-time assignment and the acquisition simulation, and returns a
//! [`pipeline::RunReport`] with a per-constraint safety table.

pub mod output;
pub mod pipeline;
pub mod scenario;
