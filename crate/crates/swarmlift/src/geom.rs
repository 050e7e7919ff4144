//! Geometric primitives: 3-vectors, unit quaternions, rotation matrices, and
//! the intersection/distance predicates used by the simulator and the reward.
//!
//! Conventions, fixed here and relied on everywhere else:
//!
//! * Quaternions are scalar-first `(w, x, y, z)`, Hamilton product, and
//!   represent **world-from-body** rotations: `q.rotate(v_body) = v_world`.
//! * Rotation matrices are row-major and likewise map body to world.
//! * Angular error between two orientations is the geodesic angle in
//!   `[0, pi]`, computed from the canonicalized (non-negative scalar part)
//!   relative quaternion.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Tolerance under which a line is considered parallel to a plane.
pub const PARALLEL_EPS: f64 = 1e-6;
/// Tolerance for the unit-norm precondition on quaternions.
pub const UNIT_EPS: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Vec3
// ---------------------------------------------------------------------------

/// Plain 3-vector over `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; `None` when the norm is ~zero.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Componentwise clamp to `[-bound, bound]`.
    pub fn clamp_abs(self, bound: f64) -> Vec3 {
        Vec3::new(
            self.x.clamp(-bound, bound),
            self.y.clamp(-bound, bound),
            self.z.clamp(-bound, bound),
        )
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

// ---------------------------------------------------------------------------
// Quat
// ---------------------------------------------------------------------------

/// Unit quaternion, scalar-first, Hamilton convention, world-from-body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let u = axis.normalized().unwrap_or(Vec3::Z);
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(c, u.x * s, u.y * s, u.z * s)
    }

    /// Exponential map: rotation vector (axis * angle) to quaternion.
    /// Stable for small angles via the series expansion of sin(t/2)/t.
    pub fn from_scaled_axis(v: Vec3) -> Quat {
        let angle = v.norm();
        let half = angle * 0.5;
        let k = if angle < 1e-8 {
            // sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
            0.5 - angle * angle / 48.0
        } else {
            half.sin() / angle
        };
        Quat::new(half.cos(), v.x * k, v.y * k, v.z * k)
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) composition:
    /// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Quat {
        Quat::from_axis_angle(Vec3::Z, yaw)
            * Quat::from_axis_angle(Vec3::Y, pitch)
            * Quat::from_axis_angle(Vec3::X, roll)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn vector_norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_EPS
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Flip sign so the scalar part is non-negative. `q` and `-q` encode the
    /// same rotation; the canonical form makes angle extraction unambiguous.
    pub fn canonicalized(self) -> Quat {
        if self.w < 0.0 {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    /// Geodesic rotation angle in `[0, pi]`.
    pub fn angle(self) -> f64 {
        let q = self.canonicalized();
        2.0 * q.vector_norm().atan2(q.w)
    }

    /// Logarithmic map: rotation vector (axis * angle, shortest arc).
    /// Inverse of [`Quat::from_scaled_axis`] for angles below pi.
    pub fn to_scaled_axis(self) -> Vec3 {
        let q = self.canonicalized();
        let vn = q.vector_norm();
        if vn < 1e-12 {
            return Vec3::ZERO;
        }
        let angle = 2.0 * vn.atan2(q.w);
        Vec3::new(q.x, q.y, q.z) * (angle / vn)
    }

    /// Rotate a body-frame vector into the world frame.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + w * (2 u x v) + u x (2 u x v)
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(t)
    }

    /// Rotate a world-frame vector into the body frame.
    pub fn rotate_inv(self, v: Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    pub fn to_matrix(self) -> RotMat {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        RotMat([
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ])
    }

    /// Shepperd's method: branch on the largest of trace and diagonal
    /// entries so the division is always well conditioned.
    pub fn from_matrix(m: &RotMat) -> Quat {
        let t = m.trace();
        let q = if t > m.get(0, 0) && t > m.get(1, 1) && t > m.get(2, 2) {
            let r = (1.0 + t).sqrt();
            let s = 0.5 / r;
            Quat::new(
                0.5 * r,
                (m.get(2, 1) - m.get(1, 2)) * s,
                (m.get(0, 2) - m.get(2, 0)) * s,
                (m.get(1, 0) - m.get(0, 1)) * s,
            )
        } else if m.get(0, 0) > m.get(1, 1) && m.get(0, 0) > m.get(2, 2) {
            let r = (1.0 + m.get(0, 0) - m.get(1, 1) - m.get(2, 2)).sqrt();
            let s = 0.5 / r;
            Quat::new(
                (m.get(2, 1) - m.get(1, 2)) * s,
                0.5 * r,
                (m.get(0, 1) + m.get(1, 0)) * s,
                (m.get(0, 2) + m.get(2, 0)) * s,
            )
        } else if m.get(1, 1) > m.get(2, 2) {
            let r = (1.0 - m.get(0, 0) + m.get(1, 1) - m.get(2, 2)).sqrt();
            let s = 0.5 / r;
            Quat::new(
                (m.get(0, 2) - m.get(2, 0)) * s,
                (m.get(0, 1) + m.get(1, 0)) * s,
                0.5 * r,
                (m.get(1, 2) + m.get(2, 1)) * s,
            )
        } else {
            let r = (1.0 - m.get(0, 0) - m.get(1, 1) + m.get(2, 2)).sqrt();
            let s = 0.5 / r;
            Quat::new(
                (m.get(1, 0) - m.get(0, 1)) * s,
                (m.get(0, 2) + m.get(2, 0)) * s,
                (m.get(1, 2) + m.get(2, 1)) * s,
                0.5 * r,
            )
        };
        q.normalized().canonicalized()
    }

    /// Body z-axis expressed in world coordinates (third matrix column).
    pub fn body_z(self) -> Vec3 {
        self.rotate(Vec3::Z)
    }

    /// Heading of the body x-axis projected on the world xy-plane.
    pub fn yaw(self) -> f64 {
        let bx = self.rotate(Vec3::X);
        bx.y.atan2(bx.x)
    }
}

impl Mul for Quat {
    type Output = Quat;
    /// Hamilton product: `(a * b).rotate(v) == a.rotate(b.rotate(v))`.
    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

// ---------------------------------------------------------------------------
// RotMat
// ---------------------------------------------------------------------------

/// Row-major 3x3 rotation matrix (world-from-body, like `Quat`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(pub [f64; 9]);

impl Default for RotMat {
    fn default() -> Self {
        RotMat::IDENTITY
    }
}

impl RotMat {
    pub const IDENTITY: RotMat = RotMat([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[r * 3 + c]
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3::new(self.get(r, 0), self.get(r, 1), self.get(r, 2))
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3::new(self.get(0, c), self.get(1, c), self.get(2, c))
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> RotMat {
        RotMat([c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z])
    }

    pub fn transpose(&self) -> RotMat {
        let m = &self.0;
        RotMat([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[4] + self.0[8]
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn matmul(&self, o: &RotMat) -> RotMat {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.get(r, k) * o.get(k, c);
                }
                out[r * 3 + c] = acc;
            }
        }
        RotMat(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// True when `R^T R = I` within `tol` and `det R = +1` within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let g = self.transpose().matmul(self);
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                if (g.get(r, c) - expect).abs() > tol {
                    return false;
                }
            }
        }
        (self.det() - 1.0).abs() <= tol
    }

    pub fn rot_x(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat([1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c])
    }

    pub fn rot_y(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat([c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c])
    }

    pub fn rot_z(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat([c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }
}

// ---------------------------------------------------------------------------
// Predicates
// ---------------------------------------------------------------------------

/// Geodesic angle between the rotations encoded by two unit quaternions.
///
/// Symmetric in its arguments, invariant to the sign ambiguity of either
/// input, and zero iff both encode the same rotation. Errors if either
/// argument is not unit length within [`UNIT_EPS`].
pub fn quat_error_angle(a: Quat, b: Quat) -> Result<f64> {
    for (name, q) in [("first", a), ("second", b)] {
        if !q.is_unit() {
            return Err(Error::Contract(format!(
                "{name} quaternion is not unit length (norm = {})",
                q.norm()
            )));
        }
    }
    Ok((a * b.conjugate()).angle())
}

/// Intersection of the infinite line `point + s * dir` with the plane through
/// `plane_point` with normal `plane_normal`. Returns `None` when the line is
/// parallel to the plane (|dir . n| < [`PARALLEL_EPS`] for unit inputs).
pub fn line_plane_intersection(
    point: Vec3,
    dir: Vec3,
    plane_point: Vec3,
    plane_normal: Vec3,
) -> Option<Vec3> {
    let denom = dir.dot(plane_normal);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let s = (plane_point - point).dot(plane_normal) / denom;
    Some(point + dir * s)
}

/// Minimum distance between two segments `p1..q1` and `p2..q2`.
/// Clamped closest-point computation; handles degenerate (point) segments.
pub fn segment_segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    const EPS: f64 = 1e-12;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(r);

    let (s, t);
    if a <= EPS && e <= EPS {
        return (p1 - p2).norm();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s_ = if denom.abs() > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
