//! Rotation-group and unit-sphere primitives.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix3x2, UnitQuaternion, Vector3};

/// Below this angle `exp_so3` switches to its second-order series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Rotation-vector exponential (Rodrigues).
pub fn exp_so3(phi: &Vector3<f64>) -> Rotation {
    let theta = phi.norm();
    let k = skew(phi);
    let m = if theta < SMALL_ANGLE {
        Matrix3::identity() + k + k * k * 0.5
    } else {
        let t2 = theta * theta;
        Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / t2)
    };
    Rotation(m)
}

/// Rotation-vector logarithm, the inverse of [`exp_so3`] on `|phi| < pi`.
///
/// At exactly a half turn the axis sign is chosen so that its
/// largest-magnitude component is positive.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = &r.0;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(m);
    let s = w.norm();
    let theta = s.atan2(cos);

    if theta < std::f64::consts::PI - 1e-3 {
        if s < 1e-12 {
            return w;
        }
        return w * (theta / s);
    }

    // Near a half turn the antisymmetric part vanishes; recover the axis from
    // the symmetric part (1 - cos) a a^T instead.
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let i = (0..3)
        .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
        .unwrap_or(0);
    let scale = (b[(i, i)] * (1.0 - cos)).max(0.0).sqrt();
    if scale == 0.0 {
        return Vector3::zeros();
    }
    let mut axis: Vector3<f64> = b.column(i) / scale;
    axis.normalize_mut();
    if s > 1e-12 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else {
        let j = axis.iamax();
        if axis[j] < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - k * 0.5 + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - k * ((1.0 - theta.cos()) / t2)
        + k * k * ((theta - theta.sin()) / (t2 * theta))
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k * 0.5 + k * k / 12.0;
    }
    let t2 = theta * theta;
    let c = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + k * 0.5 + k * k * c
}

/// An element of SO(3), stored as an orthonormal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that is already orthonormal with unit determinant.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix onto the nearest rotation.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Rotation(m).renormalized()
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Vector3<f64> {
        log_so3(self)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Intrinsic z-y-x Euler angles: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        Rotation(rz * ry * rx)
    }

    /// Returns `(roll, pitch, yaw)` matching [`Rotation::from_euler`].
    pub fn euler(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }

    /// Unit quaternion as `[x, y, z, w]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.0);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    /// Builds a rotation from `[x, y, z, w]`; the quaternion is normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Rotation(*uq.to_rotation_matrix().matrix())
    }

    /// Nearest orthonormal matrix with determinant +1.
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return *self;
        };
        let mut m = u * v_t;
        if m.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            m = u * v_t;
        }
        Rotation(m)
    }

    /// Geodesic angle between two rotations, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.inverse() * *other).log().norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// A unit vector on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    /// Normalizes `v`; `None` for zero or non-finite input.
    pub fn new(v: &Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(Direction(v / n))
        } else {
            None
        }
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Deterministic orthonormal basis of the tangent plane.
    pub fn tangent_basis(&self) -> Matrix3x2<f64> {
        tangent_basis(self)
    }

    /// `skew(omega) * N(omega)`: maps tangent-plane perturbations to
    /// perturbations of the direction vector.
    pub fn perturbation_map(&self) -> Matrix3x2<f64> {
        skew(&self.0) * self.tangent_basis()
    }
}

/// Orthonormal basis of the plane orthogonal to `omega`, seeded from the
/// coordinate axis where `omega` has its smallest absolute component.
pub fn tangent_basis(omega: &Direction) -> Matrix3x2<f64> {
    let w = omega.0;
    let a = w.abs();
    let seed = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let n1 = w.cross(&seed).normalize();
    let n2 = w.cross(&n1);
    Matrix3x2::from_columns(&[n1, n2])
}
