//! Barycentric weight functions and the predicates deciding whether a
//! containment-ball center is a valid, obstacle-free position.
//!
//! Obstacles are unions of tetrahedral cells with grid-aligned vertices. A
//! center is valid when every obstacle vertex lies strictly outside the ball
//! and no part of the ball (boundary or center) is contained by any cell;
//! both conditions reduce to an exact point-to-tetrahedron distance test.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::{real, Real, Vec3};

/// Determinant threshold below which reference matrices are treated as
/// singular, in scenario units.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Tolerance for "on the boundary counts as inside" containment decisions.
pub const CONTAINMENT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    /// The three triangle vertices are collinear (or coincident).
    #[error("triangle vertices are collinear")]
    DegenerateTriangle,
    /// The four tetrahedron vertices are coplanar (or worse).
    #[error("tetrahedron vertices are coplanar")]
    DegenerateTetrahedron,
}

/// Barycentric weights of `p` with respect to a triangle in the x-y plane.
///
/// Solves the 3x3 homogeneous system built from the vertex x-y coordinates,
/// so only the planar components of the inputs participate. The weights sum
/// to one and reconstruct `p`'s x-y position as the weighted combination of
/// the vertices.
pub fn triangle_barycentric<T: Real>(
    p1: &Vec3<T>,
    p2: &Vec3<T>,
    p3: &Vec3<T>,
    p: &Vec3<T>,
) -> Result<[T; 3], GeometryError> {
    let m = Matrix3::new(
        p1.x,
        p2.x,
        p3.x,
        p1.y,
        p2.y,
        p3.y,
        T::one(),
        T::one(),
        T::one(),
    );
    if m.determinant().abs() <= real(DEGENERACY_TOL) {
        return Err(GeometryError::DegenerateTriangle);
    }
    let rhs = Vector3::new(p.x, p.y, T::one());
    let w = m
        .lu()
        .solve(&rhs)
        .ok_or(GeometryError::DegenerateTriangle)?;
    Ok([w.x, w.y, w.z])
}

/// Barycentric weights of `p` with respect to an arbitrary tetrahedron.
///
/// The weights sum to one; they are all non-negative exactly when `p` lies
/// inside or on the tetrahedron.
pub fn tetra_barycentric<T: Real>(
    v1: &Vec3<T>,
    v2: &Vec3<T>,
    v3: &Vec3<T>,
    v4: &Vec3<T>,
    p: &Vec3<T>,
) -> Result<[T; 4], GeometryError> {
    let m = homogeneous_vertex_matrix(v1, v2, v3, v4);
    if m.determinant().abs() <= real(DEGENERACY_TOL) {
        return Err(GeometryError::DegenerateTetrahedron);
    }
    let rhs = Vector4::new(p.x, p.y, p.z, T::one());
    let w = m
        .lu()
        .solve(&rhs)
        .ok_or(GeometryError::DegenerateTetrahedron)?;
    Ok([w.x, w.y, w.z, w.w])
}

fn homogeneous_vertex_matrix<T: Real>(
    v1: &Vec3<T>,
    v2: &Vec3<T>,
    v3: &Vec3<T>,
    v4: &Vec3<T>,
) -> Matrix4<T> {
    Matrix4::new(
        v1.x,
        v2.x,
        v3.x,
        v4.x,
        v1.y,
        v2.y,
        v3.y,
        v4.y,
        v1.z,
        v2.z,
        v3.z,
        v4.z,
        T::one(),
        T::one(),
        T::one(),
        T::one(),
    )
}

/// Rigid sphere that must enclose the whole formation while it moves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainmentBall<T: Real = f64> {
    pub center: Vec3<T>,
    pub radius: T,
}

impl<T: Real> ContainmentBall<T> {
    pub fn new(center: Vec3<T>, radius: T) -> Self {
        assert!(radius > T::zero(), "containment radius must be positive");
        Self { center, radius }
    }
}

/// A non-degenerate tetrahedral obstacle cell.
///
/// The inverse of the homogeneous vertex matrix is cached at construction so
/// containment queries are a single matrix-vector product.
#[derive(Debug, Clone, PartialEq)]
pub struct Tetrahedron<T: Real = f64> {
    vertices: [Vec3<T>; 4],
    inv: Matrix4<T>,
}

impl<T: Real> Tetrahedron<T> {
    pub fn new(vertices: [Vec3<T>; 4]) -> Result<Self, GeometryError> {
        let m = homogeneous_vertex_matrix(&vertices[0], &vertices[1], &vertices[2], &vertices[3]);
        if m.determinant().abs() <= real(DEGENERACY_TOL) {
            return Err(GeometryError::DegenerateTetrahedron);
        }
        let inv = m
            .try_inverse()
            .ok_or(GeometryError::DegenerateTetrahedron)?;
        Ok(Self { vertices, inv })
    }

    pub fn vertices(&self) -> &[Vec3<T>; 4] {
        &self.vertices
    }

    /// Barycentric weights of `p`; entries sum to one.
    pub fn barycentric(&self, p: &Vec3<T>) -> [T; 4] {
        let w = self.inv * Vector4::new(p.x, p.y, p.z, T::one());
        [w.x, w.y, w.z, w.w]
    }

    /// True when `p` lies inside or on the tetrahedron (boundary inclusive).
    pub fn contains(&self, p: &Vec3<T>) -> bool {
        let tol = -real::<T>(CONTAINMENT_TOL);
        self.barycentric(p).iter().all(|&w| w >= tol)
    }

    /// Closest point of the solid tetrahedron to `p`.
    pub fn closest_point(&self, p: &Vec3<T>) -> Vec3<T> {
        if self.contains(p) {
            return *p;
        }
        const FACES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
        let mut best = self.vertices[0];
        let mut best_d2 = (p - best).norm_squared();
        for f in FACES {
            let q = closest_point_triangle(
                p,
                &self.vertices[f[0]],
                &self.vertices[f[1]],
                &self.vertices[f[2]],
            );
            let d2 = (p - q).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = q;
            }
        }
        best
    }

    /// Euclidean distance from `p` to the solid tetrahedron (zero inside).
    pub fn distance(&self, p: &Vec3<T>) -> T {
        (p - self.closest_point(p)).norm()
    }
}

/// True when `p` lies inside or on tetrahedron `t` (all barycentric weights
/// non-negative up to [`CONTAINMENT_TOL`]).
pub fn point_in_tetrahedron<T: Real>(t: &Tetrahedron<T>, p: &Vec3<T>) -> bool {
    t.contains(p)
}

/// Closest point on triangle `abc` to `p` (Ericson's region test).
fn closest_point_triangle<T: Real>(p: &Vec3<T>, a: &Vec3<T>, b: &Vec3<T>, c: &Vec3<T>) -> Vec3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= T::zero() && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= T::zero() && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Union of tetrahedralized obstacle polytopes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObstacleMesh<T: Real = f64> {
    polytopes: Vec<(u32, Vec<Tetrahedron<T>>)>,
}

impl<T: Real> ObstacleMesh<T> {
    pub fn new(polytopes: Vec<(u32, Vec<Tetrahedron<T>>)>) -> Self {
        Self { polytopes }
    }

    pub fn empty() -> Self {
        Self { polytopes: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.polytopes.iter().all(|(_, cells)| cells.is_empty())
    }

    pub fn polytopes(&self) -> &[(u32, Vec<Tetrahedron<T>>)] {
        &self.polytopes
    }

    pub fn tetrahedra(&self) -> impl Iterator<Item = &Tetrahedron<T>> {
        self.polytopes.iter().flat_map(|(_, cells)| cells.iter())
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vec3<T>> {
        self.tetrahedra().flat_map(|t| t.vertices().iter())
    }
}

/// True when every obstacle vertex lies strictly outside the ball.
///
/// A vertex exactly on the sphere counts as a violation.
pub fn ball_excludes_vertices<T: Real>(ball: &ContainmentBall<T>, mesh: &ObstacleMesh<T>) -> bool {
    mesh.vertices()
        .all(|v| (v - ball.center).norm() > ball.radius)
}

/// Decides whether `center` is a valid position for the containment ball.
///
/// Valid means: every obstacle vertex is strictly outside the ball, no point
/// of the ball boundary lies in any obstacle cell, and the center itself is
/// not enclosed by a cell. Since a cell whose every vertex is outside the
/// ball cannot sit strictly inside it, all three conditions are equivalent to
/// the exact test `distance(center, cell) > r_max` for every cell, which is
/// what this runs. Distance exactly equal to the radius is a violation.
pub fn is_valid_center<T: Real>(center: &Vec3<T>, r_max: T, mesh: &ObstacleMesh<T>) -> bool {
    debug_assert!(r_max > T::zero());
    for tet in mesh.tetrahedra() {
        for v in tet.vertices() {
            if (v - center).norm() <= r_max {
                return false;
            }
        }
        if tet.distance(center) <= r_max {
            return false;
        }
    }
    true
}
