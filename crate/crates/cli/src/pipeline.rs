//! End-to-end planning pipeline: route search, configuration interpolation,
//! segment solves, travel-time assignment, acquisition simulation, and the
//! safety table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mqs_core::astar::{astar, compress_waypoints, PlanError};
use mqs_core::deform::{
    arc_length_fractions, intermediate_leader_configs, params_from_leaders, polar_decompose,
    DeformError, LeaderStack,
};
use mqs_core::grid::MeshFreeSet;
use mqs_core::ocp::{
    area_form, assign_travel_time, signed_triangle_area, smoothstep, LeaderTrajectory, OcpError,
    SegmentSolution, StateVec,
};
use mqs_core::sim::{simulate_acquisition, DeviationReport, Plant, SimError};
use mqs_core::Vec3;

use crate::scenario::{Scenario, ScenarioError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Allowed relative drift of the conserved quadratic form.
pub const AREA_DRIFT_LIMIT: f64 = 1e-4;

/// Allowed spread of the leader altitudes (the plan assigns one altitude).
pub const LEADER_Z_SPREAD_LIMIT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("astar: {0}")]
    Planner(#[from] PlanError),
    #[error("deformation: {0}")]
    Deformation(#[from] DeformError),
    #[error("optimal-control: {0}")]
    OptimalControl(#[from] OcpError),
    #[error("acquisition-sim: {0}")]
    Simulation(#[from] SimError),
}

/// One row of the safety table. `margin` is positive when satisfied, and
/// measures the distance to the limit in the constraint's own units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetyRow {
    pub constraint: String,
    pub value: f64,
    pub limit: f64,
    pub margin: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub multiplier: Vec<f64>,
    pub degenerate_samples: usize,
}

impl SegmentRecord {
    fn from_solution(s: &SegmentSolution) -> Self {
        Self {
            times: s.times.clone(),
            states: s.states.iter().map(|x| x.as_slice().to_vec()).collect(),
            costates: s.costates.iter().map(|x| x.as_slice().to_vec()).collect(),
            inputs: s.inputs.iter().map(|x| x.as_slice().to_vec()).collect(),
            multiplier: s.multiplier.clone(),
            degenerate_samples: s.degenerate_samples,
        }
    }

    fn to_solution(&self) -> SegmentSolution {
        SegmentSolution {
            times: self.times.clone(),
            states: self
                .states
                .iter()
                .map(|x| StateVec::from_column_slice(x))
                .collect(),
            costates: self
                .costates
                .iter()
                .map(|x| StateVec::from_column_slice(x))
                .collect(),
            inputs: self
                .inputs
                .iter()
                .map(|x| mqs_core::ocp::InputVec::from_column_slice(x))
                .collect(),
            multiplier: self.multiplier.clone(),
            degenerate_samples: self.degenerate_samples,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub max_deviation: f64,
    pub delta: f64,
    pub violated: bool,
    pub min_separation: f64,
    pub max_center_offset: f64,
    pub per_agent_max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Conserved value of the quadratic form at departure.
    pub area_value: f64,
    /// Worst drift of the form across the plan.
    pub max_area_drift: f64,
    /// True signed triangle area at start and its worst drift, reported for
    /// reference alongside the conserved form.
    pub signed_area_start: f64,
    pub max_signed_area_drift: f64,
    /// Total control effort of the plan.
    pub control_cost: f64,
    /// Largest stretch eigenvalue seen along the trajectory.
    pub max_sigma1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub waypoints: Vec<[f64; 3]>,
    pub fractions: Vec<f64>,
    pub intermediate_configs: Vec<[f64; 9]>,
    pub travel_time: f64,
    pub segment_times: Vec<f64>,
    pub z_waypoints: Vec<f64>,
    pub plant: String,
    pub segments: Vec<SegmentRecord>,
    pub deviation: DeviationSummary,
    pub safety: Vec<SafetyRow>,
    pub diagnostics: Diagnostics,
}

impl RunReport {
    pub fn all_satisfied(&self) -> bool {
        self.safety.iter().all(|row| row.satisfied) && !self.deviation.violated
    }

    /// Rebuilds the planned trajectory from the stored segment samples.
    pub fn trajectory(&self) -> LeaderTrajectory {
        LeaderTrajectory {
            segment_times: self.segment_times.clone(),
            segments: self.segments.iter().map(|s| s.to_solution()).collect(),
            z_waypoints: self.z_waypoints.clone(),
        }
    }
}

/// Everything a pipeline run produces: the serializable report plus the full
/// deviation series for CSV emission.
#[derive(Debug)]
pub struct PipelineRun {
    pub report: RunReport,
    pub trajectory: LeaderTrajectory,
    pub deviations: DeviationReport,
}

pub fn plant_name(plant: Plant) -> &'static str {
    match plant {
        Plant::Injection => "injection",
        Plant::DoubleIntegrator => "double-integrator",
        Plant::Quadcopter => "quadcopter",
    }
}

/// Runs the full pipeline on a validated scenario.
///
/// The travel-time search always simulates with the double-integrator plant;
/// `plant` selects the model for the final reported acquisition run.
pub fn run_pipeline(scenario: &Scenario, plant: Plant) -> Result<PipelineRun, PipelineError> {
    // Route the containment ball.
    let free = MeshFreeSet::new(scenario.safety.r_max, scenario.mesh.clone());
    let start = scenario
        .grid
        .node_at(&scenario.start_center, crate::scenario::GRID_SNAP_TOL)
        .ok_or(PlanError::InvalidEndpoint)?;
    let goal = scenario
        .grid
        .node_at(
            &scenario.end_params.translation,
            crate::scenario::GRID_SNAP_TOL,
        )
        .ok_or(PlanError::InvalidEndpoint)?;
    let path = astar(&start, &goal, &scenario.grid, &free)?;
    let waypoints = compress_waypoints(&path);

    // Interpolate the deformation along the route.
    let fractions = arc_length_fractions(&waypoints)?;
    let configs =
        intermediate_leader_configs(&waypoints, &scenario.end_params, &scenario.formation)?;
    let waypoint_states: Vec<StateVec<f64>> = configs
        .iter()
        .map(|c| {
            let mut x = StateVec::zeros();
            x.fixed_rows_mut::<6>(0).copy_from(&c.xy());
            x
        })
        .collect();
    let z_waypoints: Vec<f64> = waypoints.iter().map(|w| w.z).collect();

    // Assign the travel time against the double-integrator deviation.
    let sim_opts = scenario.sim_options();
    let mut deviation_fn = |traj: &LeaderTrajectory| -> f64 {
        simulate_acquisition(
            traj,
            &scenario.formation,
            &scenario.graph,
            scenario.safety.delta,
            Plant::DoubleIntegrator,
            &sim_opts,
        )
        .map(|r| r.max_deviation)
        .unwrap_or(f64::INFINITY)
    };
    let (timing, trajectory) = assign_travel_time(
        &waypoint_states,
        &fractions,
        &z_waypoints,
        &mut deviation_fn,
        scenario.safety.delta,
        &scenario.travel_time_options(),
    )?;

    // Final acquisition run with the requested plant.
    let deviations = simulate_acquisition(
        &trajectory,
        &scenario.formation,
        &scenario.graph,
        scenario.safety.delta,
        plant,
        &sim_opts,
    )?;

    let report = build_report(
        scenario,
        plant,
        &waypoints,
        &fractions,
        &configs,
        &trajectory,
        timing.travel_time,
        &deviations,
    )?;
    Ok(PipelineRun {
        report,
        trajectory,
        deviations,
    })
}

/// Re-runs the acquisition simulation for an existing plan.
pub fn resimulate(
    scenario: &Scenario,
    report: &RunReport,
    plant: Plant,
) -> Result<PipelineRun, PipelineError> {
    let trajectory = report.trajectory();
    let deviations = simulate_acquisition(
        &trajectory,
        &scenario.formation,
        &scenario.graph,
        scenario.safety.delta,
        plant,
        &scenario.sim_options(),
    )?;
    let waypoints: Vec<Vec3> = report
        .waypoints
        .iter()
        .map(|w| Vec3::from_row_slice(w))
        .collect();
    let configs: Vec<LeaderStack> = report
        .intermediate_configs
        .iter()
        .map(|c| LeaderStack(nalgebra::SVector::from_column_slice(c)))
        .collect();
    let rebuilt = build_report(
        scenario,
        plant,
        &waypoints,
        &report.fractions,
        &configs,
        &trajectory,
        report.travel_time,
        &deviations,
    )?;
    Ok(PipelineRun {
        report: rebuilt,
        trajectory,
        deviations,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    scenario: &Scenario,
    plant: Plant,
    waypoints: &[Vec3],
    fractions: &[f64],
    configs: &[LeaderStack],
    trajectory: &LeaderTrajectory,
    travel_time: f64,
    deviations: &DeviationReport,
) -> Result<RunReport, PipelineError> {
    let area_value = scenario.safety.area_value;

    // Sweep the stored samples for the form drift, signed area, altitude
    // spread and stretch bound. Tracking drift is measured against the
    // boundary-matched blend the solver enforces; the c1 row measures the
    // raw drift from the departure value, which a stretch-changing goal
    // cannot keep (the pairwise form is not invariant under the
    // area-preserving stretch interpolation).
    let mut max_area_drift = 0.0f64;
    let mut max_tracking_drift = 0.0f64;
    let mut max_signed_drift = 0.0f64;
    let mut max_sigma1 = 0.0f64;
    let mut max_z_spread = 0.0f64;
    let signed_start = signed_triangle_area(&trajectory.sample(0.0).stack);
    for seg in &trajectory.segments {
        let a_start = area_form(&LeaderStack(expand_xy(&seg.states[0])));
        let a_end = area_form(&LeaderStack(expand_xy(seg.states.last().unwrap())));
        let (t0, t1) = (seg.times[0], *seg.times.last().unwrap());
        for i in 0..seg.states.len() {
            let t = seg.times[i];
            let stack = trajectory.sample(t).stack;
            let a = area_form(&stack);
            max_area_drift = max_area_drift.max((a - area_value).abs());
            let reference = a_start + (a_end - a_start) * smoothstep(t, t0, t1);
            max_tracking_drift = max_tracking_drift.max((a - reference).abs());
            max_signed_drift =
                max_signed_drift.max((signed_triangle_area(&stack) - signed_start).abs());
            let z = [stack.0[6], stack.0[7], stack.0[8]];
            let spread = z.iter().cloned().fold(f64::MIN, f64::max)
                - z.iter().cloned().fold(f64::MAX, f64::min);
            max_z_spread = max_z_spread.max(spread);
            let (q, _) = params_from_leaders(&stack, &scenario.formation)?;
            let params = polar_decompose(&q)?;
            max_sigma1 = max_sigma1.max(params.sigma1);
        }
    }

    let sigma_limit = scenario.safety.sigma_max();
    let two_eps = 2.0 * scenario.safety.epsilon;
    let area_limit = AREA_DRIFT_LIMIT * area_value;
    let safety = vec![
        row("c1-area-form", max_area_drift, area_limit, true),
        row("c1-form-tracking", max_tracking_drift, area_limit, true),
        row("c2-clearance", deviations.min_separation, two_eps, false),
        row("c3-planar", max_z_spread, LEADER_Z_SPREAD_LIMIT, true),
        row(
            "c4-containment",
            deviations.max_center_offset,
            scenario.safety.r_max,
            true,
        ),
        row("sigma1-bound", max_sigma1, sigma_limit, true),
    ];

    let per_agent_max = deviations
        .per_agent
        .iter()
        .map(|series| series.iter().cloned().fold(0.0, f64::max))
        .collect();

    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        waypoints: waypoints.iter().map(|w| [w.x, w.y, w.z]).collect(),
        fractions: fractions.to_vec(),
        intermediate_configs: configs
            .iter()
            .map(|c| {
                let mut out = [0.0; 9];
                out.copy_from_slice(c.0.as_slice());
                out
            })
            .collect(),
        travel_time,
        segment_times: trajectory.segment_times.clone(),
        z_waypoints: trajectory.z_waypoints.clone(),
        plant: plant_name(plant).to_string(),
        segments: trajectory
            .segments
            .iter()
            .map(SegmentRecord::from_solution)
            .collect(),
        deviation: DeviationSummary {
            max_deviation: deviations.max_deviation,
            delta: scenario.safety.delta,
            violated: deviations.violated,
            min_separation: deviations.min_separation,
            max_center_offset: deviations.max_center_offset,
            per_agent_max,
        },
        safety,
        diagnostics: Diagnostics {
            area_value,
            max_area_drift,
            signed_area_start: signed_start,
            max_signed_area_drift: max_signed_drift,
            control_cost: trajectory.total_cost(),
            max_sigma1,
        },
    })
}

fn expand_xy(x: &StateVec<f64>) -> nalgebra::SVector<f64, 9> {
    let mut out = nalgebra::SVector::<f64, 9>::zeros();
    for i in 0..6 {
        out[i] = x[i];
    }
    out
}

/// `upper = true` means the value must stay at or below the limit (the
/// inequalities are non-strict, so equality up to float noise passes);
/// otherwise it must stay strictly above it.
fn row(name: &str, value: f64, limit: f64, upper: bool) -> SafetyRow {
    let margin = if upper { limit - value } else { value - limit };
    let satisfied = if upper {
        margin >= -1e-9 * limit.abs().max(1.0)
    } else {
        margin > 0.0
    };
    SafetyRow {
        constraint: name.to_string(),
        value,
        limit,
        margin,
        satisfied,
    }
}
