//! Quintic time blending, the composed leader trajectory, and travel-time
//! assignment by bisection on the simulated deviation bound.

use super::segment::{solve_segment, SegmentSolution, SolverOptions};
use super::matrices::StateVec;
use super::OcpError;
use crate::deform::LeaderStack;
use crate::{real, Real, Vec3};

/// Quintic blend `6 s^5 - 15 s^4 + 10 s^3` over `[t_k, t_k1]`; zero value,
/// rate and acceleration at the start, one/zero/zero at the end.
pub fn smoothstep<T: Real>(t: T, t_k: T, t_k1: T) -> T {
    let s = clamp01((t - t_k) / (t_k1 - t_k));
    ((real::<T>(6.0) * s - real(15.0)) * s + real(10.0)) * s * s * s
}

pub fn smoothstep_rate<T: Real>(t: T, t_k: T, t_k1: T) -> T {
    let dt = t_k1 - t_k;
    let s = clamp01((t - t_k) / dt);
    ((real::<T>(30.0) * s - real(60.0)) * s + real(30.0)) * s * s / dt
}

pub fn smoothstep_accel<T: Real>(t: T, t_k: T, t_k1: T) -> T {
    let dt = t_k1 - t_k;
    let s = clamp01((t - t_k) / dt);
    ((real::<T>(120.0) * s - real(180.0)) * s + real(60.0)) * s / (dt * dt)
}

fn clamp01<T: Real>(s: T) -> T {
    s.clamp(T::zero(), T::one())
}

/// Altitude of every leader within waypoint segment `k`: the quintic blend
/// between consecutive waypoint heights.
pub fn z_trajectory<T: Real>(t: T, k: usize, times: &[T], z_waypoints: &[T]) -> T {
    let g = smoothstep(t, times[k], times[k + 1]);
    z_waypoints[k] * (T::one() - g) + z_waypoints[k + 1] * g
}

pub fn z_rate<T: Real>(t: T, k: usize, times: &[T], z_waypoints: &[T]) -> T {
    (z_waypoints[k + 1] - z_waypoints[k]) * smoothstep_rate(t, times[k], times[k + 1])
}

pub fn z_accel<T: Real>(t: T, k: usize, times: &[T], z_waypoints: &[T]) -> T {
    (z_waypoints[k + 1] - z_waypoints[k]) * smoothstep_accel(t, times[k], times[k + 1])
}

/// Sampled desired leader configuration with rates and accelerations, as the
/// stacked nine coordinates `(x1..x3, y1..y3, z1..z3)`.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample<T: Real = f64> {
    pub stack: LeaderStack<T>,
    pub rate: nalgebra::SVector<T, 9>,
    pub accel: nalgebra::SVector<T, 9>,
}

impl<T: Real> TrajectorySample<T> {
    pub fn leader_positions(&self) -> [Vec3<T>; 3] {
        self.stack.positions()
    }

    pub fn leader_rate(&self, i: usize) -> Vec3<T> {
        Vec3::new(self.rate[i], self.rate[3 + i], self.rate[6 + i])
    }

    pub fn leader_accel(&self, i: usize) -> Vec3<T> {
        Vec3::new(self.accel[i], self.accel[3 + i], self.accel[6 + i])
    }
}

/// Full planned leader motion: one solved segment per waypoint pair plus the
/// altitude schedule.
#[derive(Debug, Clone)]
pub struct LeaderTrajectory<T: Real = f64> {
    /// Waypoint arrival times `t_0 ..= t_n`.
    pub segment_times: Vec<T>,
    pub segments: Vec<SegmentSolution<T>>,
    /// Waypoint altitudes, one per waypoint.
    pub z_waypoints: Vec<T>,
}

impl<T: Real> LeaderTrajectory<T> {
    pub fn start_time(&self) -> T {
        self.segment_times[0]
    }

    pub fn end_time(&self) -> T {
        *self.segment_times.last().unwrap()
    }

    pub fn total_cost(&self) -> T {
        self.segments
            .iter()
            .fold(T::zero(), |acc, s| acc + s.cost())
    }

    fn segment_index(&self, t: T) -> usize {
        let n = self.segments.len();
        let mut k = 0;
        while k + 1 < n && t >= self.segment_times[k + 1] {
            k += 1;
        }
        k
    }

    /// Samples the desired configuration at `t` (clamped to the plan span).
    ///
    /// Planar coordinates interpolate the stored segment solution with cubic
    /// Hermite polynomials built from the stored rates and accelerations;
    /// altitude is the analytic quintic blend.
    pub fn sample(&self, t: T) -> TrajectorySample<T> {
        let t = t.clamp(self.start_time(), self.end_time());
        let k = self.segment_index(t);
        let seg = &self.segments[k];

        let n = seg.times.len() - 1;
        let h = (seg.end_time() - seg.start_time()) / T::from_usize(n).unwrap();
        let s = ((t - seg.start_time()) / h).max(T::zero());
        let i = s.floor().to_usize().unwrap_or(0).min(n - 1);
        let tau = (s - T::from_usize(i).unwrap()).clamp(T::zero(), T::one());

        let (x0, x1) = (&seg.states[i], &seg.states[i + 1]);
        let (u0, u1) = (&seg.inputs[i], &seg.inputs[i + 1]);
        let q0 = x0.fixed_rows::<6>(0).into_owned();
        let q1 = x1.fixed_rows::<6>(0).into_owned();
        let v0 = x0.fixed_rows::<6>(6).into_owned();
        let v1 = x1.fixed_rows::<6>(6).into_owned();

        // Hermite basis on [0, 1].
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let h00 = real::<T>(2.0) * t3 - real::<T>(3.0) * t2 + T::one();
        let h10 = t3 - real::<T>(2.0) * t2 + tau;
        let h01 = -real::<T>(2.0) * t3 + real::<T>(3.0) * t2;
        let h11 = t3 - t2;
        let q = q0 * h00 + v0 * (h10 * h) + q1 * h01 + v1 * (h11 * h);
        let v = v0 * h00 + u0 * (h10 * h) + v1 * h01 + u1 * (h11 * h);
        let a = u0 * (T::one() - tau) + u1 * tau;

        let z = z_trajectory(t, k, &self.segment_times, &self.z_waypoints);
        let zr = z_rate(t, k, &self.segment_times, &self.z_waypoints);
        let za = z_accel(t, k, &self.segment_times, &self.z_waypoints);

        let mut stack = nalgebra::SVector::<T, 9>::zeros();
        let mut rate = nalgebra::SVector::<T, 9>::zeros();
        let mut accel = nalgebra::SVector::<T, 9>::zeros();
        for j in 0..6 {
            stack[j] = q[j];
            rate[j] = v[j];
            accel[j] = a[j];
        }
        for j in 6..9 {
            stack[j] = z;
            rate[j] = zr;
            accel[j] = za;
        }
        TrajectorySample {
            stack: LeaderStack(stack),
            rate,
            accel,
        }
    }
}

/// Travel-time search bracket and tolerances.
#[derive(Debug, Clone, Copy)]
pub struct TravelTimeOptions<T: Real = f64> {
    pub t_min: T,
    pub t_max: T,
    pub eps_t: T,
    pub solver: SolverOptions<T>,
}

/// Outcome of the travel-time assignment.
#[derive(Debug, Clone)]
pub struct TimingResult<T: Real = f64> {
    pub travel_time: T,
    pub segment_times: Vec<T>,
    pub max_deviation: T,
}

/// Solves every waypoint segment for a fixed travel time; waypoint `k`
/// arrives at `fraction_k * travel_time`.
pub fn solve_trajectory<T: Real>(
    waypoint_states: &[StateVec<T>],
    fractions: &[T],
    z_waypoints: &[T],
    travel_time: T,
    solver: &SolverOptions<T>,
) -> Result<LeaderTrajectory<T>, OcpError> {
    assert!(waypoint_states.len() >= 2);
    assert_eq!(waypoint_states.len(), fractions.len());
    assert_eq!(waypoint_states.len(), z_waypoints.len());
    let times: Vec<T> = fractions.iter().map(|&b| b * travel_time).collect();
    let mut segments = Vec::with_capacity(waypoint_states.len() - 1);
    for k in 0..waypoint_states.len() - 1 {
        segments.push(solve_segment(
            &waypoint_states[k],
            &waypoint_states[k + 1],
            times[k],
            times[k + 1],
            solver,
        )?);
    }
    Ok(LeaderTrajectory {
        segment_times: times,
        segments,
        z_waypoints: z_waypoints.to_vec(),
    })
}

/// Assigns the smallest travel time whose simulated tracking deviation stays
/// within `delta`, by bisection over `[t_min, t_max]`.
///
/// The bracket top must be feasible: if the deviation bound fails even at
/// `t_max` the search reports infeasibility. Candidate times where the
/// segment solver fails to converge are treated as too fast and raise the
/// lower bound.
pub fn assign_travel_time<T: Real>(
    waypoint_states: &[StateVec<T>],
    fractions: &[T],
    z_waypoints: &[T],
    deviation_fn: &mut dyn FnMut(&LeaderTrajectory<T>) -> T,
    delta: T,
    opts: &TravelTimeOptions<T>,
) -> Result<(TimingResult<T>, LeaderTrajectory<T>), OcpError> {
    assert!(opts.t_min < opts.t_max);
    let solve = |t_u: T| solve_trajectory(waypoint_states, fractions, z_waypoints, t_u, &opts.solver);

    // Establish feasibility at the top of the bracket.
    let top = solve(opts.t_max)?;
    let top_dev = deviation_fn(&top);
    if top_dev > delta {
        return Err(OcpError::Infeasible {
            max_deviation: top_dev.to_f64().unwrap_or(f64::NAN),
            t_max: opts.t_max.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut best = (opts.t_max, top_dev, top);

    let mut lo = opts.t_min;
    let mut hi = opts.t_max;
    let two = real::<T>(2.0);
    let mut t_u = (lo + hi) / two;
    while t_u - lo >= opts.eps_t {
        match solve(t_u) {
            Ok(traj) => {
                let dev = deviation_fn(&traj);
                if dev <= delta {
                    hi = t_u;
                    best = (t_u, dev, traj);
                } else {
                    lo = t_u;
                }
            }
            // A candidate this fast is not solvable at the working
            // discretization; treat it like a deviation failure.
            Err(OcpError::NoConvergence { .. }) | Err(OcpError::StepSizeTooCoarse { .. }) => {
                lo = t_u;
            }
            Err(e) => return Err(e),
        }
        t_u = (lo + hi) / two;
    }

    let (travel_time, max_deviation, trajectory) = best;
    Ok((
        TimingResult {
            travel_time,
            segment_times: trajectory.segment_times.clone(),
            max_deviation,
        },
        trajectory,
    ))
}
