//! Planar points, rigid motions and similarity cameras.
//!
//! World coordinates use `x` to the right and `y` downwards so that a camera
//! with zero rotation maps world axes onto image columns and rows.

use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from the +x axis.
    pub fn from_angle(angle: f64) -> Self {
        Self::new(libm::cos(angle), libm::sin(angle))
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn min(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x.min(o.x), self.y.min(o.y))
    }

    pub fn max(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x.max(o.x), self.y.max(o.y))
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Proper rigid motion `p -> R p + t`, stored as a rotation (cos, sin) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid2 {
    cos: f64,
    sin: f64,
    pub translation: Vec2,
}

impl Default for Rigid2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Rigid2 {
    pub const IDENTITY: Rigid2 = Rigid2 { cos: 1.0, sin: 0.0, translation: Vec2::ZERO };

    pub fn rotation(angle: f64) -> Self {
        Self { cos: libm::cos(angle), sin: libm::sin(angle), translation: Vec2::ZERO }
    }

    pub fn translation(t: Vec2) -> Self {
        Self { translation: t, ..Self::IDENTITY }
    }

    /// Rotation by `angle` about `pivot`.
    pub fn rotation_about(pivot: Vec2, angle: f64) -> Self {
        let r = Self::rotation(angle);
        Self { translation: pivot - r.rotate(pivot), ..r }
    }

    pub fn angle(&self) -> f64 {
        libm::atan2(self.sin, self.cos)
    }

    pub fn rotate(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.cos * v.x - self.sin * v.y, self.sin * v.x + self.cos * v.y)
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        self.rotate(p) + self.translation
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &Rigid2) -> Rigid2 {
        Rigid2 {
            cos: self.cos * inner.cos - self.sin * inner.sin,
            sin: self.sin * inner.cos + self.cos * inner.sin,
            translation: self.apply(inner.translation),
        }
    }

    pub fn inverse(&self) -> Rigid2 {
        let inv = Rigid2 { cos: self.cos, sin: -self.sin, translation: Vec2::ZERO };
        Rigid2 { translation: -inv.rotate(self.translation), ..inv }
    }

    /// Row-major 2x3 affine matrix `[[c, -s, tx], [s, c, ty]]`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [
            [self.cos, -self.sin, self.translation.x],
            [self.sin, self.cos, self.translation.y],
        ]
    }
}

/// Similarity camera mapping world points onto the continuous pixel plane:
/// `(col, row) = scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity2 {
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    pub translation: Vec2,
}

impl Similarity2 {
    pub fn new(scale: f64, rotation: f64, translation: Vec2) -> Result<Self> {
        let cam = Self { scale, rotation, translation };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale.abs() > 1e-12) {
            return Err(Error::InvalidCamera(alloc::format!("scale {} is degenerate", self.scale)));
        }
        if !self.rotation.is_finite() || !self.translation.is_finite() {
            return Err(Error::InvalidCamera("non-finite rotation or translation".into()));
        }
        Ok(())
    }

    /// World point to `(row, col)` pixel coordinates.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let q = Rigid2::rotation(self.rotation).rotate(p) * self.scale + self.translation;
        (q.y, q.x)
    }

    /// `(row, col)` pixel coordinates back to the world plane.
    pub fn unproject(&self, row: f64, col: f64) -> Vec2 {
        let q = (Vec2::new(col, row) - self.translation) * (1.0 / self.scale);
        Rigid2::rotation(-self.rotation).rotate(q)
    }

    /// Rigid world motion conjugated into pixel space, up to scale; used to move
    /// image points by a world-frame transform.
    pub fn transfer(&self, motion: &Rigid2, row: f64, col: f64) -> (f64, f64) {
        self.project(motion.apply(self.unproject(row, col)))
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut r = libm::fmod(a, two_pi);
    if r <= -core::f64::consts::PI {
        r += two_pi;
    } else if r > core::f64::consts::PI {
        r -= two_pi;
    }
    r
}
