use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{Rigid2, Similarity2, Vec2};
use crate::invalid;
use crate::rng::uniform;
use crate::world::tree::KinematicTree;

/// Axis-aligned world bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> Vec2 {
        self.max - self.min
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [self.min, Vec2::new(self.max.x, self.min.y), self.max, Vec2::new(self.min.x, self.max.y)]
    }
}

/// Bounds of every part over a sequence of poses.
pub fn world_bounds<'a, I>(tree: &KinematicTree, poses: I) -> Bounds
where
    I: IntoIterator<Item = &'a [Rigid2]>,
{
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for frame in poses {
        for (part, pose) in tree.parts().iter().zip(frame) {
            for c in part.rect.corners() {
                let p = pose.apply(c);
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
    }
    Bounds { min: lo, max: hi }
}

/// Pixels per world unit at unit camera scale.
pub fn base_scale(height: usize, width: usize) -> f64 {
    0.5 * height.min(width) as f64
}

/// Random similarity camera: scale in `[0.8, 1.2]` of the base scale,
/// rotation in `[-15, 15]` degrees, translation uniform among placements
/// keeping `bounds` one pixel inside the frame. The scale shrinks when the
/// rotated bounds would not fit.
pub fn sample_camera<R: RngCore + ?Sized>(bounds: Bounds, height: usize, width: usize, rng: &mut R) -> Result<Similarity2> {
    if !bounds.min.is_finite() || !bounds.max.is_finite() {
        return Err(invalid!("camera bounds must be finite"));
    }
    let mut scale = uniform(rng, 0.8, 1.2) * base_scale(height, width);
    let rotation = uniform(rng, -15.0, 15.0) * PI / 180.0;
    let unit = Similarity2::new(1.0, rotation, Vec2::new(0.0, 0.0))?;
    let pts: Vec<(f64, f64)> = bounds.corners().iter().map(|&c| unit.project(c)).collect();
    let extent = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (rlo, rhi) = extent(|p| p.0);
    let (clo, chi) = extent(|p| p.1);
    let avail_r = height as f64 - 2.0;
    let avail_c = width as f64 - 2.0;
    let need = ((rhi - rlo) / avail_r).max((chi - clo) / avail_c);
    if need * scale > 1.0 {
        scale = 1.0 / need;
    }
    let (rlo, rhi, clo, chi) = (rlo * scale, rhi * scale, clo * scale, chi * scale);
    let t_row = uniform(rng, 1.0 - rlo, 1.0 + avail_r - rhi);
    let t_col = uniform(rng, 1.0 - clo, 1.0 + avail_c - chi);
    Similarity2::new(scale, rotation, Vec2::new(t_col, t_row))
}
