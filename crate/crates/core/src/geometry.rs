//! Rotations and ground-plane rigid transforms.
//!
//! World frame: Y up, ground is the XZ plane, a body faces along +Z of its
//! root rotation and yaw is measured about +Y (positive yaw turns +Z towards +X).

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

/// Wraps an angle into `[-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..=PI).contains(&theta) {
        return theta;
    }
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped == -PI && theta > 0.0 {
        PI
    } else {
        wrapped
    }
}

/// Rotation about +Y by `yaw` radians.
pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Encodes a rotation matrix as its first two columns.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Decodes a 6D rotation with Gram-Schmidt.
///
/// A zero first column decodes to the identity. When the second column is
/// exactly parallel to the first, the world axis least aligned with the first
/// column stands in for it.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Matrix3<f64> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > 0.0) {
        return Matrix3::identity();
    }
    let b1 = a1 / n1;
    let mut resid = a2 - b1 * b1.dot(&a2);
    if !(resid.norm() > 1e-12) {
        let axis = least_aligned_axis(&b1);
        resid = axis - b1 * b1.dot(&axis);
    }
    let b2 = resid.normalize();
    let b3 = b1.cross(&b2);
    Matrix3::from_columns(&[b1, b2, b3])
}

fn least_aligned_axis(v: &Vector3<f64>) -> Vector3<f64> {
    let a = [v.x.abs(), v.y.abs(), v.z.abs()];
    let mut k = 0;
    for i in 1..3 {
        if a[i] < a[k] {
            k = i;
        }
    }
    let mut e = Vector3::zeros();
    e[k] = 1.0;
    e
}

/// Heading of a root rotation: its +Z axis projected onto the ground plane.
/// Returns `None` when the forward axis is (numerically) vertical.
pub fn yaw_from_rotation(m: &Matrix3<f64>) -> Option<f64> {
    let fx = m[(0, 2)];
    let fz = m[(2, 2)];
    if fx.hypot(fz) < 1e-9 {
        None
    } else {
        Some(fx.atan2(fz))
    }
}

pub fn yaw_from_rot6d(r: &[f64; 6]) -> Option<f64> {
    yaw_from_rotation(&rot6d_to_matrix(r))
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let a = from.normalize();
    let b = to.normalize();
    let v = a.cross(&b);
    let c = a.dot(&b);
    if c < -1.0 + 1e-12 {
        // half turn about any axis orthogonal to `a`
        let axis = least_aligned_axis(&a);
        let u = (axis - a * a.dot(&axis)).normalize();
        return 2.0 * u * u.transpose() - Matrix3::identity();
    }
    let vx = Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    Matrix3::identity() + vx + vx * vx * (1.0 / (1.0 + c))
}

/// Ground-plane rigid transform: rotate about +Y by `yaw`, then translate in XZ.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RigidTransform2D {
    pub tx: f64,
    pub tz: f64,
    pub yaw: f64,
}

impl Default for RigidTransform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform2D {
    pub const IDENTITY: Self = Self {
        tx: 0.0,
        tz: 0.0,
        yaw: 0.0,
    };

    pub fn new(tx: f64, tz: f64, yaw: f64) -> Self {
        Self { tx, tz, yaw }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        [
            c * p[0] + s * p[2] + self.tx,
            p[1],
            -s * p[0] + c * p[2] + self.tz,
        ]
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
    }

    pub fn apply_rotation(&self, m: &Matrix3<f64>) -> Matrix3<f64> {
        yaw_matrix(self.yaw) * m
    }

    pub fn apply_yaw(&self, yaw: f64) -> f64 {
        wrap_angle(yaw + self.yaw)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        // R^T applied to -t
        let tx = -(c * self.tx - s * self.tz);
        let tz = -(s * self.tx + c * self.tz);
        Self {
            tx,
            tz,
            yaw: -self.yaw,
        }
    }

    /// `self.then(other)` applies `self` first and `other` second.
    pub fn then(&self, other: &Self) -> Self {
        let t = other.apply_point(&[self.tx, 0.0, self.tz]);
        Self {
            tx: t[0],
            tz: t[2],
            yaw: wrap_angle(self.yaw + other.yaw),
        }
    }

    /// Transform whose local frame sits at ground point `(x, z)` facing `yaw`.
    pub fn from_pose(x: f64, z: f64, yaw: f64) -> Self {
        Self { tx: x, tz: z, yaw }
    }
}
