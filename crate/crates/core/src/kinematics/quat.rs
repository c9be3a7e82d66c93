use serde::{Deserialize, Serialize};

use super::real::{cross, dot, norm, scale, Real, Vec3};
use crate::error::{Error, Result};

/// Rotation quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat<T = f64> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

pub type Quaternion = Quat<f64>;

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Quat { w, x, y, z }
    }

    pub fn identity() -> Self {
        Quat::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array([w, x, y, z]: [T; 4]) -> Self {
        Quat { w, x, y, z }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(self) -> Vec3<T> {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// The representative with `w ≥ 0`.
    pub fn canonical(self) -> Self {
        if self.w.value() < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    /// Hamilton product without renormalisation.
    pub fn mul_raw(self, o: Self) -> Self {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Hamilton product `self · o`, renormalised.
    pub fn mul(self, o: Self) -> Self {
        self.mul_raw(o).normalize()
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        let u = self.vector();
        let two = T::from_f64(2.0);
        let t = scale(cross(u, v), two);
        let c = cross(u, t);
        [v[0] + self.w * t[0] + c[0], v[1] + self.w * t[1] + c[1], v[2] + self.w * t[2] + c[2]]
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Minimal rotation taking the direction of `u` onto the direction of `v`.
    /// Anti-parallel inputs get a half turn about `û × e`, where `e` is the
    /// coordinate axis along which `û` has its smallest absolute component
    /// (lowest index on ties).
    pub fn from_two_vectors(u: Vec3<T>, v: Vec3<T>) -> Result<Self> {
        let (nu, nv) = (norm(u), norm(v));
        if nu.value() <= 1e-12 || nv.value() <= 1e-12 {
            return Err(Error::arg("rotation between vectors needs nonzero inputs"));
        }
        let uh = scale(u, T::one() / nu);
        let vh = scale(v, T::one() / nv);
        let d = dot(uh, vh);
        if d.value() < -1.0 + 1e-12 {
            let axis = perpendicular(uh);
            return Ok(Quat::new(T::zero(), axis[0], axis[1], axis[2]));
        }
        let c = cross(uh, vh);
        Ok(Quat::new(T::one() + d, c[0], c[1], c[2]).normalize())
    }

    /// Rotation about the unit `axis` taking `u` onto `v`; both must be
    /// perpendicular to the axis.
    pub(crate) fn about_axis_between(u: Vec3<T>, v: Vec3<T>, axis: Vec3<T>) -> Result<Self> {
        let (nu, nv) = (norm(u), norm(v));
        if nu.value() <= 1e-12 || nv.value() <= 1e-12 {
            return Err(Error::Degenerate("secondary bone is parallel to the primary bone".into()));
        }
        let d = dot(u, v) / (nu * nv);
        if d.value() < -1.0 + 1e-12 {
            return Ok(Quat::new(T::zero(), axis[0], axis[1], axis[2]));
        }
        Self::from_two_vectors(u, v)
    }
}

fn perpendicular<T: Real>(u: Vec3<T>) -> Vec3<T> {
    let mags = [u[0].value().abs(), u[1].value().abs(), u[2].value().abs()];
    let mut k = 0;
    for i in 1..3 {
        if mags[i] < mags[k] {
            k = i;
        }
    }
    let mut e = [T::zero(); 3];
    e[k] = T::one();
    let c = cross(u, e);
    scale(c, T::one() / norm(c))
}

impl Quaternion {
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, axis[0] / n * s, axis[1] / n * s, axis[2] / n * s)
    }

    /// Rotation angle in `[0, π]`, identical for `q` and `-q`.
    pub fn angle(self) -> f64 {
        let v = norm(self.vector());
        2.0 * v.atan2(self.w.abs())
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(self, o: Self) -> f64 {
        self.conjugate().mul_raw(o).angle()
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(self, o: Self, t: f64) -> Self {
        let mut b = o;
        let mut d = self.dot(o);
        if d < 0.0 {
            b = o.neg();
            d = -d;
        }
        if d > 1.0 - 1e-12 {
            let q = Quat::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
            return q.normalize();
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let (ka, kb) = (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s);
        Quat::new(
            ka * self.w + kb * b.w,
            ka * self.x + kb * b.x,
            ka * self.y + kb * b.y,
            ka * self.z + kb * b.z,
        )
        .normalize()
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
        };
        q.normalize().canonical()
    }

    /// Splits `self = swing · twist` where `twist` rotates about `axis`.
    pub fn swing_twist(self, axis: Vec3) -> (Quaternion, Quaternion) {
        let n = norm(axis);
        let a = scale(axis, 1.0 / n);
        let p = dot(self.vector(), a);
        let twist = Quat::new(self.w, a[0] * p, a[1] * p, a[2] * p);
        let twist = if twist.norm() < 1e-12 { Quat::identity() } else { twist.normalize() };
        let swing = self.mul_raw(twist.conjugate());
        (swing, twist)
    }
}
