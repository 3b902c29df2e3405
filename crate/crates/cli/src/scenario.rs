//! Scenario file schema, validation, and conversion to the typed planner
//! inputs.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use mqs_core::deform::{safety_delta, DeformationParams, ReferenceFormation, SafetyConstants};
use mqs_core::geometry::{ObstacleMesh, Tetrahedron};
use mqs_core::grid::{Grid, MeshFreeSet};
use mqs_core::grid::FreeSet;
use mqs_core::ocp::{area_form, SolverOptions, TravelTimeOptions};
use mqs_core::sim::{CommGraph, SimOptions};
use mqs_core::deform::LeaderStack;
use mqs_core::Vec3;

pub const GRID_SNAP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("scenario field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("infeasible scenario: {reason}")]
    Infeasible { reason: String },
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub workspace: WorkspaceSpec,
    pub obstacles: Vec<PolytopeSpec>,
    pub formation: FormationSpec,
    pub graph: GraphSpec,
    pub start_center: [f64; 3],
    pub goal: GoalSpec,
    pub safety: SafetySpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub vehicle: VehicleSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub origin: [f64; 3],
    pub deltas: [f64; 3],
    pub counts: [usize; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeSpec {
    pub id: u32,
    /// Each tetrahedron is four vertices, each `[x, y, z]` in meters.
    pub tetrahedra: Vec<[[f64; 3]; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSpec {
    /// Reference positions, leaders first; z must be zero.
    pub positions: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    /// Three in-neighbor ids per follower, in follower order (agent 4 up).
    pub in_neighbors: Vec<[usize; 3]>,
    /// Optional explicit weights; computed from the reference when omitted.
    #[serde(default)]
    pub weights: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub sigma1: f64,
    /// Radians unless the loader is asked to read degrees.
    pub shear_angle: f64,
    #[serde(default)]
    pub rotation_angle: f64,
    pub center: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySpec {
    pub epsilon: f64,
    pub r_max: f64,
    /// Tracking-deviation bound; derived from the deformation bound when
    /// omitted.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSpec {
    /// Vehicle mass, kg.
    pub mass: f64,
    /// Diagonal of the body inertia tensor, kg m^2.
    pub inertia: [f64; 3],
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia: [0.0082, 0.0082, 0.0148],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub eps_gamma: f64,
    pub eps_t: f64,
    pub rk4_steps: usize,
    pub damping: f64,
    pub max_iterations: usize,
    pub stm_tol: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub control_dt: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            eps_gamma: 1e-6,
            eps_t: 2.0,
            rk4_steps: 200,
            damping: 0.5,
            max_iterations: 50,
            stm_tol: 1e-8,
            t_min: 5.0,
            t_max: 600.0,
            control_dt: 0.01,
        }
    }
}

/// Fully validated planner inputs.
#[derive(Debug)]
pub struct Scenario {
    pub grid: Grid,
    pub mesh: ObstacleMesh,
    pub formation: ReferenceFormation,
    pub graph: CommGraph,
    pub start_center: Vec3,
    /// Requested end deformation; `translation` is the goal ball center.
    pub end_params: DeformationParams,
    pub safety: SafetyConstants,
    pub solver: SolverSpec,
    pub vehicle: VehicleSpec,
}

impl Scenario {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            eps_gamma: self.solver.eps_gamma,
            max_iterations: self.solver.max_iterations,
            damping: self.solver.damping,
            steps: self.solver.rk4_steps,
            stm_tol: self.solver.stm_tol,
        }
    }

    pub fn travel_time_options(&self) -> TravelTimeOptions {
        TravelTimeOptions {
            t_min: self.solver.t_min,
            t_max: self.solver.t_max,
            eps_t: self.solver.eps_t,
            solver: self.solver_options(),
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        let mut opts = SimOptions {
            control_dt: self.solver.control_dt,
            ..SimOptions::default()
        };
        opts.quad.mass = self.vehicle.mass;
        opts.quad.inertia = Vec3::from_row_slice(&self.vehicle.inertia);
        opts
    }
}

/// Loads and validates a scenario file. With `degrees` set, the goal angles
/// are interpreted in degrees and converted.
pub fn load_scenario(path: &Path, degrees: bool) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let file: ScenarioFile =
        serde_path_to_error::deserialize(&mut de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    validate(file, degrees)
}

fn validate(file: ScenarioFile, degrees: bool) -> Result<Scenario, ScenarioError> {
    let grid = Grid::new(
        Vec3::from_row_slice(&file.workspace.origin),
        file.workspace.deltas,
        file.workspace.counts,
    )
    .map_err(|e| schema("workspace", e.to_string()))?;

    // Obstacle cells must be non-degenerate and grid-aligned.
    let mut polytopes = Vec::with_capacity(file.obstacles.len());
    for (pi, poly) in file.obstacles.iter().enumerate() {
        let mut cells = Vec::with_capacity(poly.tetrahedra.len());
        for (ti, tet) in poly.tetrahedra.iter().enumerate() {
            let field = format!("obstacles[{pi}].tetrahedra[{ti}]");
            let vertices = tet.map(|v| Vec3::from_row_slice(&v));
            for (vi, v) in vertices.iter().enumerate() {
                if grid.node_at(v, GRID_SNAP_TOL).is_none() {
                    return Err(schema(
                        format!("{field}[{vi}]"),
                        "obstacle vertex is not a grid node",
                    ));
                }
            }
            cells.push(
                Tetrahedron::new(vertices).map_err(|e| schema(field.clone(), e.to_string()))?,
            );
        }
        polytopes.push((poly.id, cells));
    }
    let mesh = ObstacleMesh::new(polytopes);

    let positions: Vec<Vec3> = file
        .formation
        .positions
        .iter()
        .map(|p| Vec3::from_row_slice(p))
        .collect();
    let formation = ReferenceFormation::new(positions)
        .map_err(|e| schema("formation.positions", e.to_string()))?;

    let expected_followers = formation.len() - 3;
    if file.graph.in_neighbors.len() != expected_followers {
        return Err(schema(
            "graph.in_neighbors",
            format!(
                "expected {expected_followers} follower rows, got {}",
                file.graph.in_neighbors.len()
            ),
        ));
    }
    let graph = match file.graph.weights {
        Some(weights) => {
            if weights.len() != expected_followers {
                return Err(schema(
                    "graph.weights",
                    format!(
                        "expected {expected_followers} follower rows, got {}",
                        weights.len()
                    ),
                ));
            }
            let g = CommGraph::from_weights(formation.len(), file.graph.in_neighbors, weights)
                .map_err(|e| schema("graph.weights", e.to_string()))?;
            g.check_consistency(&formation, 1e-6)
                .map_err(|e| schema("graph.weights", e.to_string()))?;
            g
        }
        None => CommGraph::compute_weights(&formation, file.graph.in_neighbors)
            .map_err(|e| schema("graph.in_neighbors", e.to_string()))?,
    };

    if file.safety.epsilon <= 0.0 {
        return Err(schema("safety.epsilon", "must be positive"));
    }
    if file.safety.r_max <= 0.0 {
        return Err(schema("safety.r_max", "must be positive"));
    }

    let to_rad = if degrees {
        std::f64::consts::PI / 180.0
    } else {
        1.0
    };
    if file.goal.sigma1 < 1.0 {
        return Err(schema(
            "goal.sigma1",
            "must be at least 1 (the minor stretch is its reciprocal)",
        ));
    }
    let end_params = DeformationParams {
        sigma1: file.goal.sigma1,
        sigma2: 1.0 / file.goal.sigma1,
        shear_angle: file.goal.shear_angle * to_rad,
        rotation_angle: file.goal.rotation_angle * to_rad,
        translation: Vec3::from_row_slice(&file.goal.center),
    };

    let d_min = formation.min_pairwise_distance();
    let sigma_min = 1.0 / end_params.sigma1;
    let delta = match file.safety.delta {
        Some(d) if d > 0.0 => d,
        Some(_) => return Err(schema("safety.delta", "must be positive")),
        None => safety_delta(d_min, sigma_min, file.safety.epsilon).map_err(|_| {
            ScenarioError::Infeasible {
                reason: format!(
                    "derived deviation bound is non-positive: d_min {d_min:.4} * sigma_min \
                     {sigma_min:.4} <= 2 * epsilon {:.4}",
                    file.safety.epsilon
                ),
            }
        })?,
    };
    let safety = SafetyConstants {
        epsilon: file.safety.epsilon,
        delta,
        d_min,
        r_max: file.safety.r_max,
        area_value: area_form(&LeaderStack::from_positions(&formation.leaders())),
    };

    // The requested stretch must respect the eigenvalue bound.
    let sigma_max = safety.sigma_max();
    if end_params.sigma1 > sigma_max + 1e-9 {
        return Err(ScenarioError::Infeasible {
            reason: format!(
                "goal.sigma1 {:.6} exceeds the safety bound {:.6}",
                end_params.sigma1, sigma_max
            ),
        });
    }

    // Formation must fit the containment ball, including at full stretch.
    let max_radius = formation
        .positions()
        .iter()
        .map(|p| p.norm())
        .fold(0.0, f64::max);
    if max_radius * end_params.sigma1 > safety.r_max {
        return Err(ScenarioError::Infeasible {
            reason: format!(
                "formation radius {:.3} stretched by sigma1 {:.3} exceeds r_max {:.3}",
                max_radius, end_params.sigma1, safety.r_max
            ),
        });
    }

    // Endpoints must be grid nodes inside the valid-position set.
    let start_center = Vec3::from_row_slice(&file.start_center);
    let free = MeshFreeSet::new(safety.r_max, mesh.clone());
    for (name, center) in [("start_center", start_center), ("goal.center", end_params.translation)]
    {
        let node = grid.node_at(&center, GRID_SNAP_TOL).ok_or_else(|| {
            schema(name, "must coincide with a grid node")
        })?;
        if !free.contains(&node) {
            return Err(ScenarioError::Infeasible {
                reason: format!("{name} is not a valid containment-ball position"),
            });
        }
    }

    if file.vehicle.mass <= 0.0 || file.vehicle.inertia.iter().any(|&j| j <= 0.0) {
        return Err(schema("vehicle", "mass and inertia must be positive"));
    }

    Ok(Scenario {
        grid,
        mesh,
        formation,
        graph,
        start_center,
        end_params,
        safety,
        solver: file.solver,
        vehicle: file.vehicle,
    })
}
