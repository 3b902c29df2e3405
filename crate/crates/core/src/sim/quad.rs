//! Twelve-state quadcopter rigid-body model and the cascaded
//! position/attitude tracking controller used by the acquisition simulation.

use nalgebra::SVector;

use super::SimError;
use crate::{real, Real, Vec3};

/// Pitch guard below the kinematic singularity at +-90 degrees.
const PITCH_GUARD: f64 = 1e-3;

/// Quadcopter state: position, velocity, Euler angles (roll, pitch, yaw) and
/// body rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState<T: Real = f64> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
    pub attitude: Vec3<T>,
    pub body_rates: Vec3<T>,
}

impl<T: Real> QuadState<T> {
    pub fn at_rest(position: Vec3<T>) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            attitude: Vec3::zeros(),
            body_rates: Vec3::zeros(),
        }
    }
}

/// Physical parameters. Inertia is the diagonal of the body-frame tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams<T: Real = f64> {
    pub mass: T,
    pub inertia: Vec3<T>,
    pub gravity: T,
}

impl<T: Real> QuadParams<T> {
    pub fn standard() -> Self {
        Self {
            mass: T::one(),
            inertia: Vec3::new(real(0.0082), real(0.0082), real(0.0148)),
            gravity: real(9.81),
        }
    }
}

impl Default for QuadParams<f64> {
    fn default() -> Self {
        Self::standard()
    }
}

/// Cascaded controller gains (position PD, attitude PD).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains<T: Real = f64> {
    pub pos_p: T,
    pub pos_d: T,
    pub att_p: T,
    pub att_d: T,
}

impl<T: Real> ControlGains<T> {
    pub fn standard() -> Self {
        Self {
            pos_p: real(4.0),
            pos_d: real(4.0),
            att_p: real(60.0),
            att_d: real(15.0),
        }
    }
}

impl Default for ControlGains<f64> {
    fn default() -> Self {
        Self::standard()
    }
}

/// Body z-axis in world coordinates for ZYX Euler angles.
fn body_z<T: Real>(att: &Vec3<T>) -> Vec3<T> {
    let (sr, cr) = att.x.sin_cos();
    let (sp, cp) = att.y.sin_cos();
    let (sy, cy) = att.z.sin_cos();
    Vec3::new(cr * sp * cy + sr * sy, cr * sp * sy - sr * cy, cr * cp)
}

/// Euler-angle rates from body rates; fails near the pitch singularity.
fn euler_rates<T: Real>(att: &Vec3<T>, omega: &Vec3<T>) -> Result<Vec3<T>, SimError> {
    let half_pi = T::pi() / real(2.0);
    if att.y.abs() >= half_pi - real(PITCH_GUARD) {
        return Err(SimError::AttitudeSingularity);
    }
    let (sr, cr) = att.x.sin_cos();
    let (sp, cp) = att.y.sin_cos();
    let tp = sp / cp;
    Ok(Vec3::new(
        omega.x + sr * tp * omega.y + cr * tp * omega.z,
        cr * omega.y - sr * omega.z,
        (sr * omega.y + cr * omega.z) / cp,
    ))
}

type Packed<T> = SVector<T, 12>;

fn pack<T: Real>(s: &QuadState<T>) -> Packed<T> {
    let mut v = Packed::zeros();
    v.fixed_rows_mut::<3>(0).copy_from(&s.position);
    v.fixed_rows_mut::<3>(3).copy_from(&s.velocity);
    v.fixed_rows_mut::<3>(6).copy_from(&s.attitude);
    v.fixed_rows_mut::<3>(9).copy_from(&s.body_rates);
    v
}

fn unpack<T: Real>(v: &Packed<T>) -> QuadState<T> {
    QuadState {
        position: v.fixed_rows::<3>(0).into_owned(),
        velocity: v.fixed_rows::<3>(3).into_owned(),
        attitude: v.fixed_rows::<3>(6).into_owned(),
        body_rates: v.fixed_rows::<3>(9).into_owned(),
    }
}

fn derivative<T: Real>(
    v: &Packed<T>,
    input: &[T; 4],
    params: &QuadParams<T>,
) -> Result<Packed<T>, SimError> {
    let s = unpack(v);
    let thrust = input[0];
    let torque = Vec3::new(input[1], input[2], input[3]);

    let accel = body_z(&s.attitude) * (thrust / params.mass)
        - Vec3::new(T::zero(), T::zero(), params.gravity);
    let att_rate = euler_rates(&s.attitude, &s.body_rates)?;
    let j = params.inertia;
    let jw = Vec3::new(
        j.x * s.body_rates.x,
        j.y * s.body_rates.y,
        j.z * s.body_rates.z,
    );
    let coriolis = s.body_rates.cross(&jw);
    let omega_dot = Vec3::new(
        (torque.x - coriolis.x) / j.x,
        (torque.y - coriolis.y) / j.y,
        (torque.z - coriolis.z) / j.z,
    );

    let mut out = Packed::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&s.velocity);
    out.fixed_rows_mut::<3>(3).copy_from(&accel);
    out.fixed_rows_mut::<3>(6).copy_from(&att_rate);
    out.fixed_rows_mut::<3>(9).copy_from(&omega_dot);
    Ok(out)
}

/// Fourth-order step of the rigid-body dynamics under a held input.
pub fn quad_step<T: Real>(
    state: &QuadState<T>,
    input: &[T; 4],
    dt: T,
    params: &QuadParams<T>,
) -> Result<QuadState<T>, SimError> {
    assert!(dt > T::zero());
    let y = pack(state);
    let two = real::<T>(2.0);
    let half = dt / two;
    let k1 = derivative(&y, input, params)?;
    let k2 = derivative(&(y + k1 * half), input, params)?;
    let k3 = derivative(&(y + k2 * half), input, params)?;
    let k4 = derivative(&(y + k3 * dt), input, params)?;
    let next = y + (k1 + k2 * two + k3 * two + k4) * (dt / real::<T>(6.0));
    let out = unpack(&next);
    let half_pi = T::pi() / real(2.0);
    if out.attitude.y.abs() >= half_pi - real(PITCH_GUARD) {
        return Err(SimError::AttitudeSingularity);
    }
    Ok(out)
}

/// Cascaded tracking controller: a commanded acceleration from position PD
/// plus feedforward shapes the thrust vector; the inner loop tracks the tilt
/// that realizes it with yaw held at zero.
pub fn tracking_control<T: Real>(
    state: &QuadState<T>,
    target: &Vec3<T>,
    target_rate: &Vec3<T>,
    target_accel: &Vec3<T>,
    gains: &ControlGains<T>,
    params: &QuadParams<T>,
) -> [T; 4] {
    let a_cmd = target_accel
        + (target_rate - state.velocity) * gains.pos_d
        + (target - state.position) * gains.pos_p
        + Vec3::new(T::zero(), T::zero(), params.gravity);
    let norm = a_cmd.norm();
    let thrust = params.mass * norm;

    let (roll_des, pitch_des) = if norm <= real(1e-9) {
        (T::zero(), T::zero())
    } else {
        let k = a_cmd / norm;
        (
            (-k.y).clamp(-T::one(), T::one()).asin(),
            k.x.atan2(k.z),
        )
    };

    let att_err = Vec3::new(
        roll_des - state.attitude.x,
        pitch_des - state.attitude.y,
        -state.attitude.z,
    );
    let rate = euler_rates(&state.attitude, &state.body_rates)
        .unwrap_or(state.body_rates);
    let j = params.inertia;
    let jw = Vec3::new(
        j.x * state.body_rates.x,
        j.y * state.body_rates.y,
        j.z * state.body_rates.z,
    );
    let gyro = state.body_rates.cross(&jw);
    let cmd = att_err * gains.att_p - rate * gains.att_d;
    let torque = Vec3::new(j.x * cmd.x, j.y * cmd.y, j.z * cmd.z) + gyro;

    [thrust, torque.x, torque.y, torque.z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hover_is_a_fixed_point() {
        let params = QuadParams::standard();
        let state = QuadState::at_rest(Vec3::new(1.0, 2.0, 3.0));
        let input = [params.mass * params.gravity, 0.0, 0.0, 0.0];
        let next = quad_step(&state, &input, 0.01, &params).unwrap();
        assert!((next.position - state.position).norm() < 1e-12);
        assert!((next.velocity - state.velocity).norm() < 1e-12);
        assert!(next.attitude.norm() < 1e-12);
    }

    #[test]
    fn free_fall_velocity() {
        let params = QuadParams::standard();
        let state = QuadState::at_rest(Vec3::zeros());
        let dt = 0.02;
        let next = quad_step(&state, &[0.0, 0.0, 0.0, 0.0], dt, &params).unwrap();
        assert_relative_eq!(next.velocity.z, -params.gravity * dt, epsilon = 1e-12);
    }

    #[test]
    fn torque_impulse_spins_body_axis() {
        let params = QuadParams::standard();
        let state = QuadState::at_rest(Vec3::zeros());
        let dt = 1e-4;
        let tau = 0.002;
        let next = quad_step(
            &state,
            &[params.mass * params.gravity, tau, 0.0, 0.0],
            dt,
            &params,
        )
        .unwrap();
        // First-order response: omega_x ~ tau / Jx * dt.
        assert_relative_eq!(
            next.body_rates.x,
            tau / params.inertia.x * dt,
            max_relative = 1e-6
        );
    }

    #[test]
    fn pitch_singularity_detected() {
        let params = QuadParams::standard();
        let mut state = QuadState::at_rest(Vec3::zeros());
        state.attitude.y = std::f64::consts::FRAC_PI_2 - 5e-4;
        assert_eq!(
            quad_step(&state, &[9.81, 0.0, 0.0, 0.0], 0.001, &params).unwrap_err(),
            SimError::AttitudeSingularity
        );
    }

    #[test]
    fn controller_hover_input_at_target() {
        let params = QuadParams::standard();
        let gains = ControlGains::standard();
        let target = Vec3::new(4.0, -2.0, 10.0);
        let state = QuadState::at_rest(target);
        let u = tracking_control(
            &state,
            &target,
            &Vec3::zeros(),
            &Vec3::zeros(),
            &gains,
            &params,
        );
        assert_relative_eq!(u[0], params.mass * params.gravity, epsilon = 1e-12);
        assert_relative_eq!(u[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(u[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(u[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn step_response_settles_without_steady_error() {
        let params = QuadParams::standard();
        let gains = ControlGains::standard();
        let target = Vec3::new(1.0, 0.0, 5.0);
        let mut state = QuadState::at_rest(Vec3::new(0.0, 0.0, 5.0));
        let dt = 1e-3;
        let mut overshoot: f64 = 0.0;
        let mut settled_at = f64::INFINITY;
        for step in 0..20_000 {
            let t = step as f64 * dt;
            if step % 10 == 0 {
                // Control at 100 Hz, physics at 1 kHz.
            }
            let u = tracking_control(
                &state,
                &target,
                &Vec3::zeros(),
                &Vec3::zeros(),
                &gains,
                &params,
            );
            state = quad_step(&state, &u, dt, &params).unwrap();
            overshoot = overshoot.max(state.position.x - 1.0);
            let err = (state.position - target).norm();
            if err < 0.02 && settled_at.is_infinite() {
                settled_at = t;
            } else if err >= 0.02 {
                settled_at = f64::INFINITY;
            }
        }
        let err = (state.position - target).norm();
        assert!(err < 1e-3, "steady error {err}");
        assert!(overshoot < 0.2, "overshoot {overshoot}");
        assert!(settled_at.is_finite());
    }

    #[test]
    fn constant_velocity_target_error_decays() {
        let params = QuadParams::standard();
        let gains = ControlGains::standard();
        let vel = Vec3::new(0.4, -0.2, 0.0);
        let mut state = QuadState::at_rest(Vec3::new(0.0, 0.0, 5.0));
        let dt = 1e-3;
        let mut last_err = f64::INFINITY;
        for step in 0..30_000 {
            let t = step as f64 * dt;
            let target = Vec3::new(0.0, 0.0, 5.0) + vel * t;
            let u = tracking_control(&state, &target, &vel, &Vec3::zeros(), &gains, &params);
            state = quad_step(&state, &u, dt, &params).unwrap();
            if step == 29_999 {
                last_err = (state.position - target).norm();
            }
        }
        assert!(last_err < 1e-3, "tracking error {last_err}");
    }

    #[test]
    fn energy_conserved_without_gravity_or_input() {
        // Zero input, zero gravity: translational plus rotational kinetic
        // energy must be conserved to integrator accuracy.
        let params = QuadParams {
            mass: 1.0,
            inertia: Vec3::new(0.0082, 0.0082, 0.0148),
            gravity: 0.0,
        };
        let mut state = QuadState {
            position: Vec3::zeros(),
            velocity: Vec3::new(0.3, -0.2, 0.1),
            attitude: Vec3::zeros(),
            body_rates: Vec3::new(0.8, -0.5, 0.6),
        };
        let energy = |s: &QuadState| {
            let j = params.inertia;
            0.5 * params.mass * s.velocity.norm_squared()
                + 0.5 * (j.x * s.body_rates.x.powi(2)
                    + j.y * s.body_rates.y.powi(2)
                    + j.z * s.body_rates.z.powi(2))
        };
        let e0 = energy(&state);
        let dt = 1e-3;
        for _ in 0..1000 {
            state = quad_step(&state, &[0.0; 4], dt, &params).unwrap();
        }
        let drift = (energy(&state) - e0).abs() / e0;
        assert!(drift < 1e-6, "energy drift {drift}");
    }
}
