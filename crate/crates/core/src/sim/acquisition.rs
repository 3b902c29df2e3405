//! Closed-loop acquisition run: leaders track the planned trajectories,
//! followers chase the weighted average of their in-neighbors, and the
//! per-agent deviation from the global desired formation is recorded.

use super::quad::{quad_step, tracking_control, ControlGains, QuadParams, QuadState};
use super::{local_desired_position, CommGraph, SimError, LEADER_COUNT};
use crate::deform::ReferenceFormation;
use crate::ocp::LeaderTrajectory;
use crate::{real, Real, Vec3};

/// Plant model used for every agent in the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plant {
    /// Actual outputs are the desired positions; zero-deviation baseline.
    Injection,
    /// Double integrator under the PD protocol; the default for planning.
    DoubleIntegrator,
    /// Full rigid-body quadcopter under the cascaded controller.
    Quadcopter,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions<T: Real = f64> {
    /// Control period, seconds.
    pub control_dt: T,
    /// Physics substeps per control period for the quadcopter plant.
    pub physics_substeps: usize,
    pub gains: ControlGains<T>,
    pub quad: QuadParams<T>,
}

impl<T: Real> Default for SimOptions<T> {
    fn default() -> Self {
        Self {
            control_dt: real(0.01),
            physics_substeps: 10,
            gains: ControlGains::standard(),
            quad: QuadParams::standard(),
        }
    }
}

/// Per-agent tracking record and the safety aggregates of one run.
#[derive(Debug, Clone)]
pub struct DeviationReport<T: Real = f64> {
    /// Sample instants, one per control tick.
    pub times: Vec<T>,
    /// Deviation series per agent, same length as `times`.
    pub per_agent: Vec<Vec<T>>,
    pub max_deviation: T,
    /// True when `max_deviation` exceeded the allowed bound.
    pub violated: bool,
    /// Smallest pairwise distance between actual positions over the run.
    pub min_separation: T,
    /// Largest distance of any desired position from the ball center.
    pub max_center_offset: T,
}

/// Runs the acquisition loop against a planned leader trajectory.
///
/// Leaders track their own planned positions with full feedforward;
/// followers steer toward the weighted average of their in-neighbors'
/// actual positions (and velocities, for damping). Deviations are measured
/// against the global desired formation, the affine image of the reference.
pub fn simulate_acquisition<T: Real>(
    trajectory: &LeaderTrajectory<T>,
    reference: &ReferenceFormation<T>,
    graph: &CommGraph<T>,
    delta: T,
    plant: Plant,
    opts: &SimOptions<T>,
) -> Result<DeviationReport<T>, SimError> {
    let n = reference.len();
    if graph.n() != n {
        return Err(SimError::SizeMismatch {
            graph: graph.n(),
            formation: n,
        });
    }
    let shape = reference
        .shape_matrix()
        .expect("validated reference formation");

    let t_end = trajectory.end_time();
    let dt = opts.control_dt;
    let ticks = (t_end / dt)
        .ceil()
        .to_usize()
        .expect("finite trajectory span");

    // Desired positions of all agents at a sample time.
    type Kinematics<T> = (Vec<Vec3<T>>, Vec<Vec3<T>>, Vec<Vec3<T>>);
    let desired_all = |t: T| -> Kinematics<T> {
        let s = trajectory.sample(t);
        let mut pos = Vec::with_capacity(n);
        let mut vel = Vec::with_capacity(n);
        let mut acc = Vec::with_capacity(n);
        for i in 0..LEADER_COUNT {
            pos.push(s.stack.position(i));
            vel.push(s.leader_rate(i));
            acc.push(s.leader_accel(i));
        }
        let f_pos = &shape * s.stack.0;
        let f_vel = &shape * s.rate;
        let f_acc = &shape * s.accel;
        let nf = n - LEADER_COUNT;
        let pick = |m: &nalgebra::DVector<T>, fi: usize| -> Vec3<T> {
            Vec3::new(m[fi], m[nf + fi], m[2 * nf + fi])
        };
        for fi in 0..nf {
            pos.push(pick(&f_pos, fi));
            vel.push(pick(&f_vel, fi));
            acc.push(pick(&f_acc, fi));
        }
        (pos, vel, acc)
    };

    // Ball center: the rigid displacement of the leader configuration, which
    // for the planned trajectory is the planar translation plus the shared
    // altitude.
    let gamma = reference
        .param_matrix()
        .expect("validated reference formation");
    let center_of = |stack: &crate::deform::LeaderStack<T>| -> Vec3<T> {
        let p = gamma * stack.xy();
        let z = (stack.0[6] + stack.0[7] + stack.0[8]) / real(3.0);
        Vec3::new(p[4], p[5], z)
    };

    let (p0, v0, _) = desired_all(T::zero());
    let mut positions = p0.clone();
    let mut velocities = v0.clone();
    let mut quads: Vec<QuadState<T>> = positions
        .iter()
        .map(|p| QuadState::at_rest(*p))
        .collect();

    let mut times = Vec::with_capacity(ticks + 1);
    let mut per_agent = vec![Vec::with_capacity(ticks + 1); n];
    let mut max_deviation = T::zero();
    let mut min_separation = T::max_value().unwrap_or_else(T::one);
    let mut max_center_offset = T::zero();

    for tick in 0..=ticks {
        let t = (dt * T::from_usize(tick).unwrap()).min(t_end);
        let (des_pos, des_vel, des_acc) = desired_all(t);

        if plant == Plant::Injection {
            positions.clone_from(&des_pos);
            velocities.clone_from(&des_vel);
        }

        times.push(t);
        for i in 0..n {
            let dev = (positions[i] - des_pos[i]).norm();
            per_agent[i].push(dev);
            if dev > max_deviation {
                max_deviation = dev;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = (positions[i] - positions[j]).norm();
                if d < min_separation {
                    min_separation = d;
                }
            }
        }
        let center = center_of(&trajectory.sample(t).stack);
        for p in &des_pos {
            let off = (p - center).norm();
            if off > max_center_offset {
                max_center_offset = off;
            }
        }

        if tick == ticks {
            break;
        }

        // Control targets: leaders use the plan with feedforward; followers
        // average their in-neighbors' actual states.
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let agent = i + 1;
            if agent <= LEADER_COUNT {
                targets.push((des_pos[i], des_vel[i], des_acc[i]));
            } else {
                let nbrs = graph.in_neighbors_of(agent);
                let np = [
                    positions[nbrs[0] - 1],
                    positions[nbrs[1] - 1],
                    positions[nbrs[2] - 1],
                ];
                let nv = [
                    velocities[nbrs[0] - 1],
                    velocities[nbrs[1] - 1],
                    velocities[nbrs[2] - 1],
                ];
                let p = local_desired_position(graph, agent, &np);
                let v = local_desired_position(graph, agent, &nv);
                targets.push((p, v, Vec3::zeros()));
            }
        }

        match plant {
            Plant::Injection => {}
            Plant::DoubleIntegrator => {
                for i in 0..n {
                    let (tp, tv, ta) = targets[i];
                    let u = ta
                        + (tv - velocities[i]) * opts.gains.pos_d
                        + (tp - positions[i]) * opts.gains.pos_p;
                    positions[i] += velocities[i] * dt + u * (dt * dt / real(2.0));
                    velocities[i] += u * dt;
                }
            }
            Plant::Quadcopter => {
                let sub = opts.physics_substeps.max(1);
                let h = dt / T::from_usize(sub).unwrap();
                for i in 0..n {
                    let (tp, tv, ta) = targets[i];
                    let u = tracking_control(&quads[i], &tp, &tv, &ta, &opts.gains, &opts.quad);
                    for _ in 0..sub {
                        quads[i] = quad_step(&quads[i], &u, h, &opts.quad)?;
                    }
                    positions[i] = quads[i].position;
                    velocities[i] = quads[i].velocity;
                }
            }
        }
    }

    Ok(DeviationReport {
        times,
        per_agent,
        violated: max_deviation > delta,
        max_deviation,
        min_separation,
        max_center_offset,
    })
}
