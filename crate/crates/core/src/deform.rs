//! Mapping between leader configurations and the parameters of the planar
//! homogeneous transformation, its polar/eigen decomposition, the eigenvalue
//! safety bounds, and the interpolation of deformation parameters along the
//! planned waypoints.
//!
//! The formation's desired configuration is `p_i(t) = Q(t) p_{i,0} + s(t)`
//! with a block-diagonal Jacobian: a 2x2 planar part `Q_xy` and a fixed unit
//! z entry. Three non-collinear leaders determine `Q_xy` and `s` uniquely;
//! followers are linear in the leaders through a constant shape matrix.

use nalgebra::{DMatrix, Matrix2, SMatrix, SVector};
use thiserror::Error;

use crate::geometry::{triangle_barycentric, GeometryError, DEGENERACY_TOL};
use crate::{real, Real, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeformError {
    #[error("leader reference positions are collinear")]
    DegenerateTriangle,
    #[error("reference positions must have distinct x-y coordinates")]
    DuplicateReference,
    #[error("reference positions must lie in the z = 0 plane")]
    NonPlanarReference,
    #[error("leader z components differ by {spread} (max 1e-9)")]
    NonPlanar { spread: f64 },
    #[error("planar Jacobian is singular")]
    SingularJacobian,
    #[error("deformation bound is infeasible: d_min * sigma_min <= 2 * epsilon")]
    InfeasibleSafety,
    #[error("waypoint polyline has zero length")]
    ZeroLengthPath,
    #[error("formation needs at least 3 agents")]
    TooFewAgents,
}

impl From<GeometryError> for DeformError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DegenerateTriangle => DeformError::DegenerateTriangle,
            GeometryError::DegenerateTetrahedron => DeformError::DegenerateTriangle,
        }
    }
}

/// Stacked coordinates of the three leaders:
/// `(x1, x2, x3, y1, y2, y3, z1, z2, z3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderStack<T: Real = f64>(pub SVector<T, 9>);

impl<T: Real> LeaderStack<T> {
    pub fn from_positions(p: &[Vec3<T>; 3]) -> Self {
        let mut v = SVector::<T, 9>::zeros();
        for i in 0..3 {
            v[i] = p[i].x;
            v[3 + i] = p[i].y;
            v[6 + i] = p[i].z;
        }
        Self(v)
    }

    pub fn position(&self, leader: usize) -> Vec3<T> {
        assert!(leader < 3);
        Vec3::new(self.0[leader], self.0[3 + leader], self.0[6 + leader])
    }

    pub fn positions(&self) -> [Vec3<T>; 3] {
        [self.position(0), self.position(1), self.position(2)]
    }

    /// The six planar coordinates `(x1, x2, x3, y1, y2, y3)`.
    pub fn xy(&self) -> SVector<T, 6> {
        self.0.fixed_rows::<6>(0).into_owned()
    }
}

/// Reference formation: agent positions in the z = 0 plane, the first three
/// being the leaders.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFormation<T: Real = f64> {
    positions: Vec<Vec3<T>>,
}

impl<T: Real> ReferenceFormation<T> {
    pub fn new(positions: Vec<Vec3<T>>) -> Result<Self, DeformError> {
        if positions.len() < 3 {
            return Err(DeformError::TooFewAgents);
        }
        if positions.iter().any(|p| p.z != T::zero()) {
            return Err(DeformError::NonPlanarReference);
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if positions[i] == positions[j] {
                    return Err(DeformError::DuplicateReference);
                }
            }
        }
        let f = Self { positions };
        // Leaders must span a proper triangle.
        f.param_matrix()?;
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3<T>] {
        &self.positions
    }

    pub fn leaders(&self) -> [Vec3<T>; 3] {
        [self.positions[0], self.positions[1], self.positions[2]]
    }

    pub fn followers(&self) -> &[Vec3<T>] {
        &self.positions[3..]
    }

    /// Smallest pairwise separation in the reference configuration.
    pub fn min_pairwise_distance(&self) -> T {
        let mut best = T::max_value().unwrap_or_else(T::one);
        for i in 0..self.positions.len() {
            for j in i + 1..self.positions.len() {
                let d = (self.positions[i] - self.positions[j]).norm();
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// Inverse of the stacked leader reference matrix: maps the six planar
    /// leader coordinates to `(Q11, Q12, Q21, Q22, s_x, s_y)`.
    pub fn param_matrix(&self) -> Result<SMatrix<T, 6, 6>, DeformError> {
        let [p1, p2, p3] = self.leaders();
        let mut m = SMatrix::<T, 6, 6>::zeros();
        for (row, p) in [p1, p2, p3].iter().enumerate() {
            m[(row, 0)] = p.x;
            m[(row, 1)] = p.y;
            m[(row, 4)] = T::one();
            m[(row + 3, 2)] = p.x;
            m[(row + 3, 3)] = p.y;
            m[(row + 3, 5)] = T::one();
        }
        if m.determinant().abs() <= real(DEGENERACY_TOL) {
            return Err(DeformError::DegenerateTriangle);
        }
        m.try_inverse().ok_or(DeformError::DegenerateTriangle)
    }

    /// Constant shape matrix mapping a leader stack to the stacked follower
    /// coordinates `(x4..xN, y4..yN, z4..zN)`. Rows are the barycentric
    /// weights of each follower's reference position with respect to the
    /// leaders, replicated per coordinate block.
    pub fn shape_matrix(&self) -> Result<DMatrix<T>, DeformError> {
        let [p1, p2, p3] = self.leaders();
        let nf = self.followers().len();
        let mut h = DMatrix::<T>::zeros(3 * nf, 9);
        for (fi, pf) in self.followers().iter().enumerate() {
            let w = triangle_barycentric(&p1, &p2, &p3, pf)?;
            for block in 0..3 {
                for li in 0..3 {
                    h[(block * nf + fi, block * 3 + li)] = w[li];
                }
            }
        }
        Ok(h)
    }
}

/// Parameters of the planar deformation: stretch eigenvalues, shear angle of
/// the eigenvector frame, rigid rotation angle, and rigid translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationParams<T: Real = f64> {
    pub sigma1: T,
    pub sigma2: T,
    pub shear_angle: T,
    pub rotation_angle: T,
    pub translation: Vec3<T>,
}

impl<T: Real> DeformationParams<T> {
    pub fn identity() -> Self {
        Self {
            sigma1: T::one(),
            sigma2: T::one(),
            shear_angle: T::zero(),
            rotation_angle: T::zero(),
            translation: Vec3::zeros(),
        }
    }
}

/// Safety constants tying the deformation bound to the tracking error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConstants<T: Real = f64> {
    /// Radius of the ball enclosing one quadcopter, m.
    pub epsilon: T,
    /// Allowed tracking deviation per agent, m.
    pub delta: T,
    /// Minimum pairwise separation in the reference formation, m.
    pub d_min: T,
    /// Containment ball radius, m.
    pub r_max: T,
    /// Conserved value of the leader quadratic form.
    pub area_value: T,
}

impl<T: Real> SafetyConstants<T> {
    /// Largest admissible stretch eigenvalue: `d_min / (2 (delta + epsilon))`.
    pub fn sigma_max(&self) -> T {
        self.d_min / (real::<T>(2.0) * (self.delta + self.epsilon))
    }
}

/// Largest tracking deviation compatible with the deformation bound:
/// `(d_min * sigma_min - 2 epsilon) / 2`.
pub fn safety_delta<T: Real>(d_min: T, sigma_min: T, epsilon: T) -> Result<T, DeformError> {
    let delta = (d_min * sigma_min - real::<T>(2.0) * epsilon) / real::<T>(2.0);
    if delta <= T::zero() {
        return Err(DeformError::InfeasibleSafety);
    }
    Ok(delta)
}

fn rotation2<T: Real>(angle: T) -> Matrix2<T> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Recovers `(Q_xy, s)` from a leader stack.
///
/// The planar part comes from the reference solve; `s_z` is the mean leader
/// altitude. The three leader z components must agree to 1e-9 since the
/// formation is constrained to a horizontal plane.
pub fn params_from_leaders<T: Real>(
    y: &LeaderStack<T>,
    reference: &ReferenceFormation<T>,
) -> Result<(Matrix2<T>, Vec3<T>), DeformError> {
    let z = [y.0[6], y.0[7], y.0[8]];
    let z_min = z.iter().copied().fold(z[0], |a, b| a.min(b));
    let z_max = z.iter().copied().fold(z[0], |a, b| a.max(b));
    let spread = z_max - z_min;
    if spread > real(1e-9) {
        return Err(DeformError::NonPlanar {
            spread: spread.to_f64().unwrap_or(f64::NAN),
        });
    }
    let gamma = reference.param_matrix()?;
    let q = gamma * y.xy();
    let q_xy = Matrix2::new(q[0], q[1], q[2], q[3]);
    let s_z = (z[0] + z[1] + z[2]) / real(3.0);
    Ok((q_xy, Vec3::new(q[4], q[5], s_z)))
}

/// Polar/eigen decomposition of a planar Jacobian.
///
/// Writes `Q = R(rotation) * R_D(shear) * diag(sigma1, sigma2) * R_D(shear)^T`
/// with `sigma1 >= sigma2 > 0`. The stretch eigenvalues come from the
/// entries of `Q^T Q` by the closed-form 2x2 symmetric eigensolve; the shear
/// angle is half the `atan2` of those entries, which makes the isotropic case
/// return zero shear. Fails on singular input; a reflection (negative
/// determinant) yields the singular values but no reconstructing rotation.
pub fn polar_decompose<T: Real>(q_xy: &Matrix2<T>) -> Result<DeformationParams<T>, DeformError> {
    if q_xy.determinant().abs() <= real(DEGENERACY_TOL) {
        return Err(DeformError::SingularJacobian);
    }
    let u2 = q_xy.transpose() * q_xy;
    let (a2, b2, c2) = (u2[(0, 0)], u2[(0, 1)], u2[(1, 1)]);
    let half_diff = (a2 - c2) / real(2.0);
    let radical = (half_diff * half_diff + b2 * b2).sqrt();
    let mean = (a2 + c2) / real(2.0);
    let sigma1 = (mean + radical).sqrt();
    let sigma2 = (mean - radical).max(T::zero()).sqrt();
    if sigma2 <= real(DEGENERACY_TOL) {
        return Err(DeformError::SingularJacobian);
    }
    let shear_angle = if b2 == T::zero() && a2 == c2 {
        T::zero()
    } else {
        (real::<T>(2.0) * b2).atan2(a2 - c2) / real(2.0)
    };

    // R = Q U^{-1}, with U^{-1} from the eigen form of the square root.
    let rd = rotation2(shear_angle);
    let lambda_inv = Matrix2::new(
        T::one() / sigma1,
        T::zero(),
        T::zero(),
        T::one() / sigma2,
    );
    let u_inv = rd * lambda_inv * rd.transpose();
    let r = q_xy * u_inv;
    let rotation_angle = r[(1, 0)].atan2(r[(0, 0)]);

    Ok(DeformationParams {
        sigma1,
        sigma2,
        shear_angle,
        rotation_angle,
        translation: Vec3::zeros(),
    })
}

/// Rebuilds the planar Jacobian from deformation parameters.
pub fn compose_jacobian<T: Real>(params: &DeformationParams<T>) -> Matrix2<T> {
    let rd = rotation2(params.shear_angle);
    let lambda = Matrix2::new(params.sigma1, T::zero(), T::zero(), params.sigma2);
    rotation2(params.rotation_angle) * rd * lambda * rd.transpose()
}

/// Blends deformation parameters between the start and end configurations.
///
/// `fraction = 1` returns the start parameters (stretch `start_sigma1`, zero
/// angles), `fraction = 0` the end parameters. The minor stretch is slaved to
/// `1 / sigma1`, which keeps the leader-triangle area constant. Translation
/// is left zero; the caller assigns waypoint centers separately.
pub fn interpolate_params<T: Real>(
    fraction: T,
    end: &DeformationParams<T>,
    start_sigma1: T,
) -> DeformationParams<T> {
    let sigma1 = fraction * start_sigma1 + (T::one() - fraction) * end.sigma1;
    DeformationParams {
        sigma1,
        sigma2: T::one() / sigma1,
        shear_angle: (T::one() - fraction) * end.shear_angle,
        rotation_angle: (T::one() - fraction) * end.rotation_angle,
        translation: Vec3::zeros(),
    }
}

/// Cumulative arc-length fractions of a waypoint polyline: zero at the first
/// waypoint, one at the last, strictly increasing.
pub fn arc_length_fractions<T: Real>(waypoints: &[Vec3<T>]) -> Result<Vec<T>, DeformError> {
    assert!(waypoints.len() >= 2, "need at least two waypoints");
    let mut cumulative = Vec::with_capacity(waypoints.len());
    cumulative.push(T::zero());
    let mut total = T::zero();
    for w in waypoints.windows(2) {
        let len = (w[1] - w[0]).norm();
        if len == T::zero() {
            return Err(DeformError::ZeroLengthPath);
        }
        total += len;
        cumulative.push(total);
    }
    if total == T::zero() {
        return Err(DeformError::ZeroLengthPath);
    }
    Ok(cumulative.into_iter().map(|c| c / total).collect())
}

/// Leader configurations at every waypoint.
///
/// The first configuration is the undeformed reference shifted to the first
/// waypoint; the last applies the full end deformation at the final waypoint.
/// In between, stretch and angles follow the arc-length fractions with the
/// minor stretch slaved to `1 / sigma1`.
pub fn intermediate_leader_configs<T: Real>(
    waypoints: &[Vec3<T>],
    end_params: &DeformationParams<T>,
    reference: &ReferenceFormation<T>,
) -> Result<Vec<LeaderStack<T>>, DeformError> {
    let fractions = arc_length_fractions(waypoints)?;
    let configs = fractions
        .iter()
        .zip(waypoints.iter())
        .map(|(&beta, center)| {
            let params = interpolate_params(T::one() - beta, end_params, T::one());
            let q = compose_jacobian(&params);
            leader_stack_at(&q, center, reference)
        })
        .collect();
    Ok(configs)
}

/// Places the leaders at `Q p_{i,0} + center`.
pub fn leader_stack_at<T: Real>(
    q_xy: &Matrix2<T>,
    center: &Vec3<T>,
    reference: &ReferenceFormation<T>,
) -> LeaderStack<T> {
    let mapped = reference.leaders().map(|p| {
        let xy = q_xy * nalgebra::Vector2::new(p.x, p.y);
        Vec3::new(xy.x + center.x, xy.y + center.y, center.z)
    });
    LeaderStack::from_positions(&mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    fn simple_reference() -> ReferenceFormation {
        ReferenceFormation::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn param_matrix_inverts_reference_stack() {
        let f = simple_reference();
        let gamma = f.param_matrix().unwrap();
        // Identity deformation: feeding the un-deformed leader stack must
        // recover Q = I, s = 0.
        let y = LeaderStack::from_positions(&f.leaders());
        let p = gamma * y.xy();
        let expect = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        for (got, want) in p.iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn param_matrix_multiply_back_randomized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut tested = 0;
        while tested < 200 {
            let pts: Vec<Vec3> = (0..3)
                .map(|_| Vec3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), 0.0))
                .collect();
            let Ok(f) = ReferenceFormation::new(pts) else { continue };
            let gamma = match f.param_matrix() {
                Ok(g) => g,
                Err(_) => continue,
            };
            // Rebuild the stacked reference matrix and check Gamma * M = I.
            let [p1, p2, p3] = f.leaders();
            let mut m = SMatrix::<f64, 6, 6>::zeros();
            for (row, p) in [p1, p2, p3].iter().enumerate() {
                m[(row, 0)] = p.x;
                m[(row, 1)] = p.y;
                m[(row, 4)] = 1.0;
                m[(row + 3, 2)] = p.x;
                m[(row + 3, 3)] = p.y;
                m[(row + 3, 5)] = 1.0;
            }
            let prod = gamma * m;
            assert!((prod - SMatrix::<f64, 6, 6>::identity()).abs().max() < 1e-10);
            tested += 1;
        }
    }

    #[test]
    fn collinear_leaders_rejected() {
        let err = ReferenceFormation::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ])
        .unwrap_err();
        assert_eq!(err, DeformError::DegenerateTriangle);
    }

    #[test]
    fn leaders_to_params_pure_translation() {
        let f = simple_reference();
        let shift = Vec3::new(5.0, 0.0, 10.0);
        let y = LeaderStack::from_positions(&f.leaders().map(|p| p + shift));
        let (q, s) = params_from_leaders(&y, &f).unwrap();
        assert!((q - Matrix2::identity()).abs().max() < 1e-12);
        assert_relative_eq!(s.x, 5.0, epsilon = 1e-12);
        assert_relative_eq!(s.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.z, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn leaders_to_params_recovers_forward_composition() {
        let f = simple_reference();
        let q_true = Matrix2::new(1.2, 0.0, 0.0, 0.8333);
        let y = leader_stack_at(&q_true, &Vec3::zeros(), &f);
        let (q, s) = params_from_leaders(&y, &f).unwrap();
        assert!((q - q_true).abs().max() < 1e-10);
        assert!(s.norm() < 1e-10);
    }

    #[test]
    fn leaders_to_params_nonplanar_rejected() {
        let f = simple_reference();
        let mut y = LeaderStack::from_positions(&f.leaders());
        y.0[8] = 1e-6;
        assert!(matches!(
            params_from_leaders(&y, &f),
            Err(DeformError::NonPlanar { .. })
        ));
    }

    #[test]
    fn polar_identity_convention() {
        let p = polar_decompose(&Matrix2::<f64>::identity()).unwrap();
        assert_relative_eq!(p.sigma1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.sigma2, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.shear_angle, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.rotation_angle, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn polar_diagonal_stretch() {
        let p = polar_decompose(&Matrix2::new(1.2, 0.0, 0.0, 1.0 / 1.2)).unwrap();
        assert_relative_eq!(p.sigma1, 1.2, epsilon = 1e-12);
        assert_relative_eq!(p.sigma2, 1.0 / 1.2, epsilon = 1e-12);
        assert_relative_eq!(p.shear_angle, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.rotation_angle, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn polar_recovers_sheared_end_deformation() {
        let params = DeformationParams {
            sigma1: 1.2,
            sigma2: 1.0 / 1.2,
            shear_angle: -FRAC_PI_4,
            rotation_angle: 0.0,
            translation: Vec3::zeros(),
        };
        let q = compose_jacobian(&params);
        let back = polar_decompose(&q).unwrap();
        assert_relative_eq!(back.sigma1, 1.2, epsilon = 1e-9);
        assert_relative_eq!(back.sigma2, 1.0 / 1.2, epsilon = 1e-9);
        assert_relative_eq!(back.shear_angle, -FRAC_PI_4, epsilon = 1e-9);
        assert_relative_eq!(back.rotation_angle, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn polar_singular_rejected() {
        assert_eq!(
            polar_decompose(&Matrix2::new(1.0, 2.0, 0.5, 1.0)).unwrap_err(),
            DeformError::SingularJacobian
        );
    }

    #[test]
    fn polar_matches_svd_and_det_randomized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut tested = 0;
        while tested < 1000 {
            let q: Matrix2<f64> = Matrix2::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            if q.determinant() <= 1e-3 {
                continue;
            }
            let p = polar_decompose(&q).unwrap();
            // Independent oracle: singular values via nalgebra's SVD.
            let svd = q.svd(false, false);
            let (s_hi, s_lo) = (
                svd.singular_values[0].max(svd.singular_values[1]),
                svd.singular_values[0].min(svd.singular_values[1]),
            );
            assert_relative_eq!(p.sigma1, s_hi, epsilon = 1e-9);
            assert_relative_eq!(p.sigma2, s_lo, epsilon = 1e-9);
            assert!(p.sigma1 >= p.sigma2 && p.sigma2 > 0.0);
            assert_relative_eq!(p.sigma1 * p.sigma2, q.determinant().abs(), epsilon = 1e-9);
            // Round trip.
            let q_back = compose_jacobian(&p);
            assert!((q_back - q).abs().max() < 1e-9, "round trip failed: {q:?}");
            tested += 1;
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            #[test]
            fn polar_round_trip_on_orientation_preserving_jacobians(
                a in -2.0..2.0f64,
                b in -2.0..2.0f64,
                c in -2.0..2.0f64,
                d in -2.0..2.0f64,
            ) {
                let q = Matrix2::new(a, b, c, d);
                prop_assume!(q.determinant() > 1e-3);
                let p = polar_decompose(&q).unwrap();
                prop_assert!(p.sigma1 >= p.sigma2 && p.sigma2 > 0.0);
                let back = compose_jacobian(&p);
                prop_assert!((back - q).abs().max() < 1e-9);
            }

            #[test]
            fn interpolation_preserves_unit_determinant(
                fraction in 0.0..=1.0f64,
                sigma1 in 1.0..1.8f64,
                shear in -1.5..1.5f64,
                rotation in -1.5..1.5f64,
            ) {
                let end = DeformationParams {
                    sigma1,
                    sigma2: 1.0 / sigma1,
                    shear_angle: shear,
                    rotation_angle: rotation,
                    translation: Vec3::zeros(),
                };
                let p = interpolate_params(fraction, &end, 1.0);
                let q = compose_jacobian(&p);
                prop_assert!((q.determinant() - 1.0).abs() < 1e-12);
                prop_assert!(p.sigma1 >= 1.0 && p.sigma1 <= sigma1 + 1e-12);
            }
        }
    }

    #[test]
    fn compose_sheared_stretch_direct_evaluation() {
        // Direct evaluation of the symmetric product for sigma1 = 1.2,
        // sigma2 = 1/1.2, shear -pi/4: diagonal (s1+s2)/2, off-diagonal
        // -(s1-s2)/2.
        let params = DeformationParams {
            sigma1: 1.2,
            sigma2: 1.0 / 1.2,
            shear_angle: -FRAC_PI_4,
            rotation_angle: 0.0,
            translation: Vec3::zeros(),
        };
        let q = compose_jacobian(&params);
        let mean = (1.2 + 1.0 / 1.2) / 2.0;
        let half = (1.2 - 1.0 / 1.2) / 2.0;
        assert_relative_eq!(q[(0, 0)], mean, epsilon = 1e-12);
        assert_relative_eq!(q[(1, 1)], mean, epsilon = 1e-12);
        assert_relative_eq!(q[(0, 1)], -half, epsilon = 1e-12);
        assert_relative_eq!(q[(1, 0)], -half, epsilon = 1e-12);
    }

    #[test]
    fn sigma_bound_arithmetic() {
        let consts = SafetyConstants {
            epsilon: 0.45,
            delta: 1.04,
            d_min: 3.5652,
            r_max: 50.0,
            area_value: 0.0,
        };
        assert_relative_eq!(consts.sigma_max(), 3.5652 / 2.98, epsilon = 1e-12);

        let consts = SafetyConstants {
            epsilon: 0.45,
            delta: 0.55,
            d_min: 4.0,
            r_max: 50.0,
            area_value: 0.0,
        };
        assert_relative_eq!(consts.sigma_max(), 2.0, epsilon = 1e-12);

        // delta + epsilon = d_min / 2 leaves no deformation headroom.
        let consts = SafetyConstants {
            epsilon: 1.0,
            delta: 1.0,
            d_min: 4.0,
            r_max: 50.0,
            area_value: 0.0,
        };
        assert_relative_eq!(consts.sigma_max(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn safety_delta_values() {
        assert_relative_eq!(
            safety_delta(3.5652, 0.83, 0.45).unwrap(),
            1.029558,
            epsilon = 1e-9
        );
        assert_relative_eq!(safety_delta(2.0, 1.0, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(
            safety_delta(2.0, 0.5, 0.5).unwrap_err(),
            DeformError::InfeasibleSafety
        );
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let end = DeformationParams {
            sigma1: 1.2,
            sigma2: 1.0 / 1.2,
            shear_angle: -FRAC_PI_4,
            rotation_angle: 0.3,
            translation: Vec3::zeros(),
        };
        let at_start = interpolate_params(1.0, &end, 1.0);
        assert_relative_eq!(at_start.sigma1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(at_start.shear_angle, 0.0, epsilon = 1e-12);
        assert_relative_eq!(at_start.rotation_angle, 0.0, epsilon = 1e-12);

        let at_end = interpolate_params(0.0, &end, 1.0);
        assert_relative_eq!(at_end.sigma1, 1.2, epsilon = 1e-12);
        assert_relative_eq!(at_end.shear_angle, -FRAC_PI_4, epsilon = 1e-12);

        let mid = interpolate_params(0.5, &end, 1.0);
        assert_relative_eq!(mid.sigma1, 1.1, epsilon = 1e-12);
        assert_relative_eq!(mid.sigma2, 1.0 / 1.1, epsilon = 1e-12);
    }

    #[test]
    fn fractions_follow_arc_length() {
        let two = arc_length_fractions(&[Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0)]).unwrap();
        assert_eq!(two, vec![0.0, 1.0]);

        let three = arc_length_fractions(&[
            Vec3::zeros(),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(4.0, 0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(three, vec![0.0, 0.5, 1.0]);

        let uneven = arc_length_fractions(&[
            Vec3::zeros(),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(3.0, 1.0, 0.0),
        ])
        .unwrap();
        assert_relative_eq!(uneven[1], 0.75, epsilon = 1e-12);

        assert_eq!(
            arc_length_fractions(&[Vec3::<f64>::zeros(), Vec3::<f64>::zeros()]).unwrap_err(),
            DeformError::ZeroLengthPath
        );
    }

    #[test]
    fn intermediate_configs_translation_only() {
        let f = simple_reference();
        let waypoints = [Vec3::new(0.0, 0.0, 5.0), Vec3::new(10.0, 0.0, 5.0)];
        let configs =
            intermediate_leader_configs(&waypoints, &DeformationParams::identity(), &f).unwrap();
        assert_eq!(configs.len(), 2);
        for (cfg, wp) in configs.iter().zip(waypoints.iter()) {
            for (i, p0) in f.leaders().iter().enumerate() {
                let p = cfg.position(i);
                assert_relative_eq!(p.x, p0.x + wp.x, epsilon = 1e-12);
                assert_relative_eq!(p.y, p0.y + wp.y, epsilon = 1e-12);
                assert_relative_eq!(p.z, wp.z, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn intermediate_configs_hit_requested_end_deformation() {
        let f = simple_reference();
        let end = DeformationParams {
            sigma1: 1.2,
            sigma2: 1.0 / 1.2,
            shear_angle: -FRAC_PI_4,
            rotation_angle: 0.0,
            translation: Vec3::new(850.0, 2250.0, 50.0),
        };
        let waypoints = [
            Vec3::new(1935.0, 215.0, 43.0),
            Vec3::new(1400.0, 1200.0, 43.0),
            Vec3::new(850.0, 2250.0, 50.0),
        ];
        let configs = intermediate_leader_configs(&waypoints, &end, &f).unwrap();

        // First config is the translated reference.
        let (q0, s0) = params_from_leaders(&configs[0], &f).unwrap();
        assert!((q0 - Matrix2::identity()).abs().max() < 1e-9);
        assert!((s0 - waypoints[0]).norm() < 1e-9);

        // Last config carries the full end deformation at the final center.
        let (qn, sn) = params_from_leaders(configs.last().unwrap(), &f).unwrap();
        let q_want = compose_jacobian(&end);
        assert!((qn - q_want).abs().max() < 1e-9);
        assert!((sn - end.translation).norm() < 1e-9);

        // Every intermediate config decomposes back to the interpolated
        // parameters.
        let fractions = arc_length_fractions(&waypoints).unwrap();
        for (cfg, &beta) in configs.iter().zip(fractions.iter()) {
            let (q, _) = params_from_leaders(cfg, &f).unwrap();
            let got = polar_decompose(&q).unwrap();
            let want = interpolate_params(1.0 - beta, &end, 1.0);
            assert_relative_eq!(got.sigma1, want.sigma1, epsilon = 1e-9);
            assert_relative_eq!(got.sigma2, want.sigma2, epsilon = 1e-9);
            if (got.sigma1 - got.sigma2).abs() > 1e-9 {
                assert_relative_eq!(got.shear_angle, want.shear_angle, epsilon = 1e-9);
            }
            assert_relative_eq!(got.rotation_angle, want.rotation_angle, epsilon = 1e-9);
        }
    }

    #[test]
    fn shape_matrix_rows_are_leader_weights() {
        // Follower at leader-1's reference position gets row (1, 0, 0);
        // follower at the centroid gets thirds.
        let f = ReferenceFormation::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(0.0, 3.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 0.1, 0.0),
        ])
        .unwrap();
        let h = f.shape_matrix().unwrap();
        assert_eq!(h.shape(), (6, 9));
        assert_relative_eq!(h[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(h[(0, 1)], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(h[(0, 2)], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn shape_matrix_matches_direct_affine_map() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let f = ReferenceFormation::new(vec![
            Vec3::new(-6.0, -4.0, 0.0),
            Vec3::new(6.0, -4.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
            Vec3::new(-4.23, -3.14, 0.0),
            Vec3::new(3.11, -2.40, 0.0),
            Vec3::new(-0.15, 4.09, 0.0),
        ])
        .unwrap();
        let h = f.shape_matrix().unwrap();
        for _ in 0..50 {
            let q = Matrix2::new(
                1.0 + rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                1.0 + rng.random_range(-0.3..0.3),
            );
            let center = Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(0.0..30.0),
            );
            let y = leader_stack_at(&q, &center, &f);
            let followers = h.clone() * y.0;
            for (fi, p0) in f.followers().iter().enumerate() {
                let xy = q * nalgebra::Vector2::new(p0.x, p0.y);
                let nf = f.followers().len();
                assert_relative_eq!(followers[fi], xy.x + center.x, epsilon = 1e-10);
                assert_relative_eq!(followers[nf + fi], xy.y + center.y, epsilon = 1e-10);
                assert_relative_eq!(followers[2 * nf + fi], center.z, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn shape_matrix_consistent_with_recovered_params() {
        // For an arbitrary planar leader stack, the follower positions from
        // the shape matrix equal Q p_0 + s with (Q, s) recovered from the
        // stack itself.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let f = ReferenceFormation::new(vec![
            Vec3::new(-6.0, -4.0, 0.0),
            Vec3::new(6.0, -4.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
            Vec3::new(-2.0, -1.0, 0.0),
            Vec3::new(1.0, 2.0, 0.0),
        ])
        .unwrap();
        let h = f.shape_matrix().unwrap();
        let mut tested = 0;
        while tested < 100 {
            let mut y = SVector::<f64, 9>::zeros();
            for i in 0..6 {
                y[i] = rng.random_range(-20.0..20.0);
            }
            let z = rng.random_range(0.0..50.0);
            for i in 6..9 {
                y[i] = z;
            }
            let stack = LeaderStack(y);
            let Ok((q, s)) = params_from_leaders(&stack, &f) else {
                continue;
            };
            if q.determinant().abs() < 1e-3 {
                continue;
            }
            let followers = h.clone() * stack.0;
            let nf = f.followers().len();
            for (fi, p0) in f.followers().iter().enumerate() {
                let xy = q * nalgebra::Vector2::new(p0.x, p0.y);
                assert_relative_eq!(followers[fi], xy.x + s.x, epsilon = 1e-10);
                assert_relative_eq!(followers[nf + fi], xy.y + s.y, epsilon = 1e-10);
                assert_relative_eq!(followers[2 * nf + fi], s.z, epsilon = 1e-10);
            }
            tested += 1;
        }
    }

    #[test]
    fn intermediate_configs_keep_min_separation_scaled() {
        // Minimum pairwise distance among desired positions at waypoint k is
        // bounded below by d_min * sigma2_k.
        let f = ReferenceFormation::new(vec![
            Vec3::new(-6.0, -4.0, 0.0),
            Vec3::new(6.0, -4.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
            Vec3::new(-2.0, -1.0, 0.0),
            Vec3::new(2.0, 0.5, 0.0),
        ])
        .unwrap();
        let end = DeformationParams {
            sigma1: 1.2,
            sigma2: 1.0 / 1.2,
            shear_angle: -FRAC_PI_4,
            rotation_angle: 0.2,
            translation: Vec3::new(40.0, 0.0, 10.0),
        };
        let waypoints = [
            Vec3::new(0.0, 0.0, 10.0),
            Vec3::new(20.0, 10.0, 10.0),
            Vec3::new(40.0, 0.0, 10.0),
        ];
        let fractions = arc_length_fractions(&waypoints).unwrap();
        let configs = intermediate_leader_configs(&waypoints, &end, &f).unwrap();
        let d_min = f.min_pairwise_distance();
        let h = f.shape_matrix().unwrap();
        for (cfg, &beta) in configs.iter().zip(fractions.iter()) {
            let sigma2 = interpolate_params(1.0 - beta, &end, 1.0).sigma2;
            let followers = h.clone() * cfg.0;
            let nf = f.followers().len();
            let mut pts: Vec<Vec3> = cfg.positions().to_vec();
            for fi in 0..nf {
                pts.push(Vec3::new(followers[fi], followers[nf + fi], followers[2 * nf + fi]));
            }
            let mut min_d = f64::INFINITY;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    min_d = min_d.min((pts[i] - pts[j]).norm());
                }
            }
            assert!(min_d >= d_min * sigma2 - 1e-9, "{min_d} vs {}", d_min * sigma2);
        }
    }
}
