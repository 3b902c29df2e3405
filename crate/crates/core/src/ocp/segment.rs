//! Transition-matrix integration and the per-segment boundary-value solve.

use nalgebra::SMatrix;

use super::matrices::{
    area_of_positions, constraint_multiplier_with_target, hamiltonian_matrix,
    quadratic_form_matrix, InputVec, StateVec,
};
use super::timing::smoothstep_accel;
use super::OcpError;
use crate::{real, Real};

type SystemMatrix<T> = SMatrix<T, 24, 24>;

/// Tunables of the segment solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions<T: Real = f64> {
    /// Multiplier fixed-point tolerance.
    pub eps_gamma: T,
    /// Multiplier iteration cap before reporting no convergence.
    pub max_iterations: usize,
    /// Under-relaxation factor for the multiplier update.
    pub damping: T,
    /// Integration steps per segment; also the stored sample count.
    pub steps: usize,
    /// Per-step relative error bound for the transition integration.
    pub stm_tol: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            eps_gamma: real(1e-6),
            max_iterations: 50,
            damping: real(0.5),
            steps: 200,
            stm_tol: real(1e-8),
        }
    }
}

/// Converged solution over one waypoint segment.
#[derive(Debug, Clone)]
pub struct SegmentSolution<T: Real = f64> {
    pub times: Vec<T>,
    pub states: Vec<StateVec<T>>,
    pub costates: Vec<StateVec<T>>,
    pub inputs: Vec<InputVec<T>>,
    pub multiplier: Vec<T>,
    /// Samples where the multiplier denominator degenerated and zero was
    /// substituted.
    pub degenerate_samples: usize,
}

impl<T: Real> SegmentSolution<T> {
    pub fn start_time(&self) -> T {
        self.times[0]
    }

    pub fn end_time(&self) -> T {
        *self.times.last().unwrap()
    }

    /// Control effort `1/2 * integral of |u|^2`, by composite Simpson.
    pub fn cost(&self) -> T {
        let n = self.inputs.len() - 1;
        assert!(n >= 2 && n.is_multiple_of(2), "even number of intervals required");
        let h = (self.end_time() - self.start_time()) / T::from_usize(n).unwrap();
        let f = |i: usize| self.inputs[i].norm_squared();
        let mut acc = f(0) + f(n);
        for i in 1..n {
            let w = if i % 2 == 1 { real::<T>(4.0) } else { real::<T>(2.0) };
            acc += w * f(i);
        }
        acc * h / real(3.0) / real(2.0)
    }
}

fn rk4_step<T: Real>(
    phi: &SystemMatrix<T>,
    t0: T,
    h: T,
    system: &impl Fn(T) -> SystemMatrix<T>,
) -> SystemMatrix<T> {
    let two = real::<T>(2.0);
    let half = h / two;
    let k1 = system(t0) * phi;
    let k2 = system(t0 + half) * (phi + k1 * half);
    let k3 = system(t0 + half) * (phi + k2 * half);
    let k4 = system(t0 + h) * (phi + k3 * h);
    phi + (k1 + k2 * two + k3 * two + k4) * (h / real::<T>(6.0))
}

/// Integrates `Phi' = A(t) Phi` from `t_start` to `t_end`, returning the
/// transition matrix at each of the `steps + 1` uniform grid points.
///
/// Each step is advanced with two half-steps; comparing against the single
/// full step gives a per-step error estimate, and the worst estimate must
/// stay within `stm_tol` relative to the matrix scale.
pub fn integrate_transition<T: Real>(
    t_start: T,
    t_end: T,
    gamma: &impl Fn(T) -> T,
    steps: usize,
    stm_tol: T,
) -> Result<Vec<SystemMatrix<T>>, OcpError> {
    assert!(t_end >= t_start && steps >= 1);
    let h = (t_end - t_start) / T::from_usize(steps).unwrap();
    let system = |t: T| hamiltonian_matrix(gamma(t));

    let mut snapshots = Vec::with_capacity(steps + 1);
    let mut phi = SystemMatrix::<T>::identity();
    snapshots.push(phi);
    let mut worst = T::zero();
    for i in 0..steps {
        let t0 = t_start + h * T::from_usize(i).unwrap();
        let full = rk4_step(&phi, t0, h, &system);
        let half = h / real(2.0);
        let mid = rk4_step(&phi, t0, half, &system);
        let fine = rk4_step(&mid, t0 + half, half, &system);
        let scale = T::one().max(fine.amax());
        let estimate = (full - fine).amax() / (real::<T>(15.0) * scale);
        if estimate > worst {
            worst = estimate;
        }
        phi = fine;
        snapshots.push(phi);
    }
    if worst > stm_tol {
        return Err(OcpError::StepSizeTooCoarse {
            estimate: worst.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(snapshots)
}

/// Linear interpolation over a uniform multiplier grid.
fn gamma_profile<'a, T: Real>(
    grid: &'a [T],
    t_start: T,
    h: T,
) -> impl Fn(T) -> T + 'a {
    move |t: T| {
        let n = grid.len() - 1;
        let s = ((t - t_start) / h).max(T::zero());
        let i = s
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(n.saturating_sub(1));
        let frac = (s - T::from_usize(i).unwrap()).clamp(T::zero(), T::one());
        grid[i] * (T::one() - frac) + grid[i + 1] * frac
    }
}

/// Recovers the initial co-state from the end boundary condition by solving
/// the upper-right transition partition.
fn solve_initial_costate<T: Real>(
    phi_end: &SystemMatrix<T>,
    x_start: &StateVec<T>,
    x_end: &StateVec<T>,
) -> Result<StateVec<T>, OcpError> {
    let phi11 = phi_end.fixed_view::<12, 12>(0, 0).into_owned();
    let phi12 = phi_end.fixed_view::<12, 12>(0, 12).into_owned();
    let svd = phi12.svd(false, false);
    let (smax, smin) = (
        svd.singular_values.max(),
        svd.singular_values.min(),
    );
    if smin <= smax * real(1e-13) {
        return Err(OcpError::SingularTransition {
            condition: (smax / smin).to_f64().unwrap_or(f64::INFINITY),
        });
    }
    let rhs = x_end - phi11 * x_start;
    phi12
        .lu()
        .solve(&rhs)
        .ok_or(OcpError::SingularTransition {
            condition: (smax / smin).to_f64().unwrap_or(f64::INFINITY),
        })
}

/// Solves the constrained minimum-effort boundary-value problem over one
/// segment.
///
/// The conserved form is matched to the boundary states: its reference
/// follows a quintic blend between the start and end values, which reduces
/// to strict conservation whenever the two agree (the nominal case). The
/// multiplier profile starts at zero, is recomputed pointwise from each
/// propagated trajectory, and is under-relaxed until the largest pointwise
/// change falls below `eps_gamma`.
pub fn solve_segment<T: Real>(
    x_start: &StateVec<T>,
    x_end: &StateVec<T>,
    t_start: T,
    t_end: T,
    opts: &SolverOptions<T>,
) -> Result<SegmentSolution<T>, OcpError> {
    assert!(t_end > t_start, "segment must have positive duration");
    let steps = opts.steps.max(2) & !1; // even, for Simpson costs
    let h = (t_end - t_start) / T::from_usize(steps).unwrap();
    let times: Vec<T> = (0..=steps)
        .map(|i| t_start + h * T::from_usize(i).unwrap())
        .collect();

    let area_start = area_of_positions(&x_start.fixed_rows::<6>(0).into_owned());
    let area_end = area_of_positions(&x_end.fixed_rows::<6>(0).into_owned());
    let form_accel = |t: T| (area_end - area_start) * smoothstep_accel(t, t_start, t_end);

    let mut gamma = vec![T::zero(); steps + 1];
    let mut residual = T::zero();
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let (states, costates) =
            propagate(&gamma, x_start, x_end, t_start, t_end, steps, opts.stm_tol)?;
        residual = T::zero();
        let mut proposed = vec![T::zero(); steps + 1];
        for i in 0..=steps {
            let target = form_accel(times[i]);
            let g = constraint_multiplier_with_target(&states[i], &costates[i], target)
                .unwrap_or(T::zero());
            proposed[i] = g;
            let delta = (g - gamma[i]).abs();
            if delta > residual {
                residual = delta;
            }
        }
        if residual < opts.eps_gamma {
            gamma = proposed;
            converged = true;
            break;
        }
        for i in 0..=steps {
            let g = gamma[i];
            gamma[i] = g + opts.damping * (proposed[i] - g);
        }
    }
    if !converged {
        return Err(OcpError::NoConvergence {
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }

    // One more pass with the settled profile; inputs use the exact pointwise
    // multiplier so the constraint residual vanishes at the samples.
    let (states, costates) =
        propagate(&gamma, x_start, x_end, t_start, t_end, steps, opts.stm_tol)?;
    let m = quadratic_form_matrix::<T>();
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut multiplier = Vec::with_capacity(steps + 1);
    let mut degenerate = 0usize;
    for i in 0..=steps {
        let target = form_accel(times[i]);
        let g = match constraint_multiplier_with_target(&states[i], &costates[i], target) {
            Ok(g) => g,
            Err(OcpError::DegenerateConstraint) => {
                degenerate += 1;
                T::zero()
            }
            Err(e) => return Err(e),
        };
        let q = states[i].fixed_rows::<6>(0).into_owned();
        let lambda_rate = costates[i].fixed_rows::<6>(6).into_owned();
        inputs.push(-lambda_rate - m * q * (real::<T>(2.0) * g));
        multiplier.push(g);
    }

    Ok(SegmentSolution {
        times,
        states,
        costates,
        inputs,
        multiplier,
        degenerate_samples: degenerate,
    })
}

type StateCostatePair<T> = (Vec<StateVec<T>>, Vec<StateVec<T>>);

fn propagate<T: Real>(
    gamma: &[T],
    x_start: &StateVec<T>,
    x_end: &StateVec<T>,
    t_start: T,
    t_end: T,
    steps: usize,
    stm_tol: T,
) -> Result<StateCostatePair<T>, OcpError> {
    let h = (t_end - t_start) / T::from_usize(steps).unwrap();
    let profile = gamma_profile(gamma, t_start, h);
    let snapshots = integrate_transition(t_start, t_end, &profile, steps, stm_tol)?;
    let lambda0 = solve_initial_costate(snapshots.last().unwrap(), x_start, x_end)?;

    let mut z0 = SMatrix::<T, 24, 1>::zeros();
    z0.fixed_rows_mut::<12>(0).copy_from(x_start);
    z0.fixed_rows_mut::<12>(12).copy_from(&lambda0);

    let mut states = Vec::with_capacity(steps + 1);
    let mut costates = Vec::with_capacity(steps + 1);
    for phi in &snapshots {
        let z = phi * z0;
        states.push(z.fixed_rows::<12>(0).into_owned());
        costates.push(z.fixed_rows::<12>(12).into_owned());
    }
    Ok((states, costates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::matrices::{area_rate, constraint_value};
    use super::super::timing::smoothstep;
    use approx::assert_relative_eq;

    fn triangle_state(scale: f64) -> StateVec<f64> {
        let mut x = StateVec::zeros();
        // Leaders at (-6,-4), (6,-4), (0,8), scaled.
        x[0] = -6.0 * scale;
        x[1] = 6.0 * scale;
        x[2] = 0.0;
        x[3] = -4.0 * scale;
        x[4] = -4.0 * scale;
        x[5] = 8.0 * scale;
        x
    }

    #[test]
    fn transition_identity_at_start() {
        let snaps = integrate_transition(2.0, 5.0, &|_| 0.0, 10, 1e-8).unwrap();
        assert_relative_eq!((snaps[0] - SystemMatrix::<f64>::identity()).amax(), 0.0);
    }

    #[test]
    fn transition_matches_closed_form_when_unconstrained() {
        // At gamma = 0 the system matrix is nilpotent (A^4 = 0), so the
        // transition matrix is the cubic polynomial sum of the exponential
        // series. Compare against that closed form.
        let t = 3.7;
        let snaps = integrate_transition(0.0, t, &|_| 0.0, 50, 1e-8).unwrap();
        let a = hamiltonian_matrix::<f64>(0.0);
        let a2 = a * a;
        let a3 = a2 * a;
        assert_relative_eq!((a3 * a).amax(), 0.0, epsilon = 1e-15);
        let series = SystemMatrix::<f64>::identity()
            + a * t
            + a2 * (t * t / 2.0)
            + a3 * (t * t * t / 6.0);
        assert!((snaps.last().unwrap() - series).amax() < 1e-8);
    }

    #[test]
    fn transition_matches_exponential_for_constant_gamma() {
        let t = 0.8;
        let g = 0.02;
        let snaps = integrate_transition(0.0, t, &|_| g, 80, 1e-8).unwrap();
        // Scaling-and-squaring series oracle.
        let a = hamiltonian_matrix::<f64>(g);
        let mut series = SystemMatrix::<f64>::identity();
        let mut term = SystemMatrix::<f64>::identity();
        let scaled = a * (t / 1024.0);
        for k in 1..20 {
            term = term * scaled / k as f64;
            series += term;
        }
        let mut exp = series;
        for _ in 0..10 {
            exp = exp * exp;
        }
        assert!((snaps.last().unwrap() - exp).amax() < 1e-8);
    }

    #[test]
    fn transition_semigroup_property() {
        let g = |t: f64| 0.01 * (1.0 + (0.5 * t).sin());
        let a = integrate_transition(0.0, 1.0, &g, 40, 1e-7).unwrap();
        let b = integrate_transition(1.0, 2.5, &g, 60, 1e-7).unwrap();
        let c = integrate_transition(0.0, 2.5, &g, 100, 1e-7).unwrap();
        let composed = b.last().unwrap() * a.last().unwrap();
        assert!((c.last().unwrap() - composed).amax() < 1e-7);
    }

    #[test]
    fn coarse_integration_is_reported() {
        // Constant-multiplier systems integrate exactly (the system matrix
        // is nilpotent), so drive the estimate with a rapidly varying
        // profile sampled by too few steps.
        let gamma = |t: f64| 4.0 * (6.0 * t).sin();
        let err = integrate_transition(0.0, 4.0, &gamma, 2, 1e-10).unwrap_err();
        assert!(matches!(err, OcpError::StepSizeTooCoarse { .. }));
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let x0 = triangle_state(1.0);
        let x1 = sheared_matched_state(0.6);
        let opts = SolverOptions {
            eps_gamma: 1e-14,
            max_iterations: 2,
            ..Default::default()
        };
        let err = solve_segment(&x0, &x1, 0.0, 40.0, &opts).unwrap_err();
        assert!(matches!(err, OcpError::NoConvergence { .. }));
    }

    #[test]
    fn coincident_leaders_fall_back_to_unconstrained() {
        // All leaders at one point: the multiplier denominator vanishes at
        // every sample, zero is substituted, and the count is reported.
        let x0 = StateVec::<f64>::zeros();
        let mut x1 = StateVec::<f64>::zeros();
        for i in 0..3 {
            x1[i] = 5.0;
        }
        let sol = solve_segment(&x0, &x1, 0.0, 10.0, &SolverOptions::default()).unwrap();
        assert!(sol.degenerate_samples > 0);
        assert!((sol.states.last().unwrap() - x1).amax() < 1e-6);
    }

    #[test]
    fn stationary_segment_is_trivial() {
        let x = triangle_state(1.0);
        let sol = solve_segment(&x, &x, 0.0, 10.0, &SolverOptions::default()).unwrap();
        for u in &sol.inputs {
            assert!(u.amax() < 1e-10);
        }
        for g in &sol.multiplier {
            assert!(g.abs() < 1e-10);
        }
        assert!((sol.states[0] - x).amax() < 1e-9);
        assert!((sol.states.last().unwrap() - x).amax() < 1e-9);
    }

    #[test]
    fn translation_segment_matches_minimum_effort_closed_form() {
        // Same shape displaced; the translation rides the null space of the
        // pairwise form, so the multiplier stays zero and the solution is
        // the per-axis minimum-effort cubic with cost 6 |d|^2 / T^3.
        let x0 = triangle_state(1.0);
        let mut x1 = x0;
        let (dx, dy) = (30.0, -12.0);
        for i in 0..3 {
            x1[i] += dx;
            x1[3 + i] += dy;
        }
        let t_total = 25.0;
        let sol = solve_segment(&x0, &x1, 0.0, t_total, &SolverOptions::default()).unwrap();

        for g in &sol.multiplier {
            assert!(g.abs() < 1e-9, "translation should stay unconstrained");
        }
        // Boundary exactness.
        assert!((sol.states[0] - x0).amax() < 1e-6);
        assert!((sol.states.last().unwrap() - x1).amax() < 1e-6);

        // Closed-form minimum-effort cost for zero-rate boundary displacement
        // d over T: integral |u|^2 = 12 d^2 / T^3 per axis, halved in J.
        let want = 0.5 * 12.0 * 3.0 * (dx * dx + dy * dy) / t_total.powi(3);
        assert_relative_eq!(sol.cost(), want, max_relative = 1e-6);

        // Constraint residual along the trajectory.
        for (x, u) in sol.states.iter().zip(sol.inputs.iter()) {
            assert!(constraint_value(x, u).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_changing_segment_conserves_form_and_meets_boundaries() {
        // Shear the triangle while scaling the stretch so the pairwise form
        // has the same value at both ends; the solver must then conserve it
        // along the whole segment.
        let x0 = triangle_state(1.0);
        let x1 = sheared_matched_state(0.6);
        let a0 = area_of_positions(&x0.fixed_rows::<6>(0).into_owned());
        let a1 = area_of_positions(&x1.fixed_rows::<6>(0).into_owned());
        assert_relative_eq!(a0, a1, max_relative = 1e-12);

        let sol = solve_segment(&x0, &x1, 0.0, 40.0, &SolverOptions::default()).unwrap();
        assert!((sol.states[0] - x0).amax() < 1e-6);
        assert!((sol.states.last().unwrap() - x1).amax() < 1e-6);
        let mut nonzero = false;
        for (x, u) in sol.states.iter().zip(sol.inputs.iter()) {
            assert!(constraint_value(x, u).abs() < 1e-5);
            nonzero |= u.amax() > 1e-6;
        }
        assert!(nonzero);
        for x in &sol.states {
            let a = area_of_positions(&x.fixed_rows::<6>(0).into_owned());
            assert!((a - a0).abs() < 1e-4 * a0, "form drifted: {a} vs {a0}");
        }
        // Boundary rates are zero so the form rate vanishes at the ends.
        assert!(area_rate(&sol.states[0]).abs() < 1e-9);
        assert!(area_rate(sol.states.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn solver_cost_not_worse_than_projected_competitor() {
        // Feasible competitor: blend the two boundary shapes with a quintic,
        // rescaling each intermediate shape so the pairwise form is exact,
        // then differentiate numerically for its effort.
        let x0 = triangle_state(1.0);
        let x1 = sheared_matched_state(0.45);
        let t_total = 30.0;
        let sol = solve_segment(&x0, &x1, 0.0, t_total, &SolverOptions::default()).unwrap();

        let a0 = area_of_positions(&x0.fixed_rows::<6>(0).into_owned());
        let q0 = x0.fixed_rows::<6>(0).into_owned();
        let q1 = x1.fixed_rows::<6>(0).into_owned();
        let pos = |t: f64| {
            let s = smoothstep(t, 0.0, t_total);
            let q = q0 * (1.0 - s) + q1 * s;
            let a = area_of_positions(&q);
            q * (a0 / a).sqrt()
        };
        // Effort of the competitor via central second differences.
        let n = 2000usize;
        let h = t_total / n as f64;
        let mut effort = 0.0;
        for i in 1..n {
            let t = i as f64 * h;
            let acc = (pos(t + h) - pos(t) * 2.0 + pos(t - h)) / (h * h);
            effort += acc.norm_squared() * h;
        }
        let competitor_cost = 0.5 * effort;
        assert!(
            sol.cost() <= competitor_cost * 1.05,
            "solver {} vs competitor {}",
            sol.cost(),
            competitor_cost
        );
    }

    /// Boundary state with shear angle `angle` and the stretch chosen so the
    /// pairwise form matches the reference triangle exactly.
    fn sheared_matched_state(angle: f64) -> StateVec<f64> {
        use nalgebra::{Matrix2, Vector2};
        let pts = [
            Vector2::new(-6.0, -4.0),
            Vector2::new(6.0, -4.0),
            Vector2::new(0.0, 8.0),
        ];
        let edges = [pts[1] - pts[0], pts[2] - pts[0], pts[2] - pts[1]];
        let mut s = Matrix2::<f64>::zeros();
        for e in edges {
            s += e * e.transpose();
        }
        let (sin, cos) = angle.sin_cos();
        let rd = Matrix2::new(cos, -sin, sin, cos);
        // In the rotated frame the form weight per eigen direction is the
        // diagonal of R^T S R; stretch^2 = beta / alpha keeps the total.
        let srot = rd.transpose() * s * rd;
        let (alpha, beta) = (srot[(0, 0)], srot[(1, 1)]);
        // sigma^2 = beta / alpha keeps alpha sigma^2 + beta / sigma^2 fixed.
        let sigma = (beta / alpha).sqrt();
        let lam = Matrix2::new(sigma, 0.0, 0.0, 1.0 / sigma);
        let q = rd * lam * rd.transpose();
        let mut x = StateVec::zeros();
        for (i, p) in pts.iter().enumerate() {
            let m = q * p;
            x[i] = m.x;
            x[3 + i] = m.y;
        }
        x
    }

    #[test]
    fn stationarity_residual_small_along_converged_segment() {
        let x0 = triangle_state(1.0);
        let x1 = sheared_matched_state(0.5);
        let sol = solve_segment(&x0, &x1, 0.0, 40.0, &SolverOptions::default()).unwrap();
        let m = quadratic_form_matrix::<f64>();
        let n = sol.times.len();
        let h = sol.times[1] - sol.times[0];
        for i in 2..n - 2 {
            // Five-point central derivative of the co-state.
            let lam_dot = (sol.costates[i - 2]
                - sol.costates[i - 1] * 8.0
                + sol.costates[i + 1] * 8.0
                - sol.costates[i + 2])
                / (12.0 * h);
            let qdot = sol.states[i].fixed_rows::<6>(6).into_owned();
            let mut grad = StateVec::<f64>::zeros();
            grad.fixed_rows_mut::<6>(0)
                .copy_from(&(m * sol.inputs[i] * 2.0));
            grad.fixed_rows_mut::<6>(6).copy_from(&(m * qdot * 4.0));
            // A_L^T lambda moves the position part onto the rate slots.
            let mut at_lam = StateVec::<f64>::zeros();
            at_lam
                .fixed_rows_mut::<6>(6)
                .copy_from(&sol.costates[i].fixed_rows::<6>(0));
            let residual = lam_dot + at_lam + grad * sol.multiplier[i];
            assert!(residual.amax() < 1e-5, "residual {} at {i}", residual.amax());
        }
    }
}
