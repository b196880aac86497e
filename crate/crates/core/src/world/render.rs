use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rigid2, Similarity2, Vec2};
use crate::image::{BinaryMask, ImageGrid, LabelMap};
use crate::invalid;
use crate::rng::uniform;
use crate::world::animation::ArticulationState;
use crate::world::tree::{pose_parts, KinematicTree, PartLabel};

pub type Rgb = [f32; 3];

pub const BACKGROUND: Rgb = [1.0, 1.0, 1.0];

/// Smallest supported render size per axis.
pub const MIN_RESOLUTION: usize = 16;

/// Canonical colour of a part label.
pub fn palette_color(label: PartLabel) -> Rgb {
    match label {
        PartLabel::Body => [0.55, 0.45, 0.35],
        PartLabel::Door => [0.25, 0.45, 0.75],
        PartLabel::Drawer => [0.30, 0.65, 0.35],
        PartLabel::Lid => [0.85, 0.55, 0.20],
        PartLabel::Handle => [0.15, 0.15, 0.15],
    }
}

/// Independent uniform monochrome colour per part.
pub fn random_palette<R: RngCore + ?Sized>(parts: usize, rng: &mut R) -> Vec<Rgb> {
    (0..parts).map(|_| [0; 3].map(|_: u8| uniform(rng, 0.05, 0.95) as f32)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub height: usize,
    pub width: usize,
    /// Global multiplier applied to part colours.
    pub brightness: f32,
}

impl RenderOptions {
    pub fn square(size: usize) -> Self {
        Self { height: size, width: size, brightness: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    /// RGB in `[0, 1]`.
    pub image: ImageGrid,
    /// Full silhouette of every part, occluded pixels included.
    pub masks: Vec<BinaryMask>,
    /// Top-most visible part per pixel.
    pub labels: LabelMap,
    pub camera: Similarity2,
    pub colors: Vec<Rgb>,
}

impl RenderedFrame {
    pub fn foreground(&self) -> BinaryMask {
        self.labels.foreground()
    }
}

pub fn render(
    tree: &KinematicTree,
    state: &ArticulationState,
    colors: &[Rgb],
    camera: &Similarity2,
    opts: RenderOptions,
) -> Result<RenderedFrame> {
    state.validate()?;
    render_poses(tree, &pose_parts(tree, state.values())?, colors, camera, opts)
}

/// Affine map from `(row, col)` pixel coordinates to a part's rest frame.
#[derive(Clone, Copy)]
struct PixelToRest {
    origin: Vec2,
    d_row: Vec2,
    d_col: Vec2,
}

impl PixelToRest {
    fn new(camera: &Similarity2, pose: &Rigid2) -> Self {
        let inv = pose.inverse();
        let origin = inv.apply(camera.unproject(0.0, 0.0));
        let d_row = inv.apply(camera.unproject(1.0, 0.0)) - origin;
        let d_col = inv.apply(camera.unproject(0.0, 1.0)) - origin;
        Self { origin, d_row, d_col }
    }

    fn at(&self, row: f64, col: f64) -> Vec2 {
        self.origin + self.d_row * row + self.d_col * col
    }
}

/// Rasterizes parts at explicit world poses, sampling each pixel at its centre.
pub fn render_poses(
    tree: &KinematicTree,
    poses: &[Rigid2],
    colors: &[Rgb],
    camera: &Similarity2,
    opts: RenderOptions,
) -> Result<RenderedFrame> {
    camera.validate()?;
    let (h, w) = (opts.height, opts.width);
    if h < MIN_RESOLUTION || w < MIN_RESOLUTION {
        return Err(invalid!("render resolution must be at least {MIN_RESOLUTION}x{MIN_RESOLUTION}, got {h}x{w}"));
    }
    if poses.len() != tree.len() || colors.len() != tree.len() {
        return Err(Error::Shape(alloc::format!(
            "{} poses and {} colours for {} parts",
            poses.len(),
            colors.len(),
            tree.len()
        )));
    }
    if !opts.brightness.is_finite() || opts.brightness < 0.0 {
        return Err(invalid!("brightness must be finite and non-negative"));
    }
    let mut labels = vec![0u16; h * w];
    let mut masks = Vec::with_capacity(tree.len());
    masks.resize_with(tree.len(), || BinaryMask::empty(h, w));
    for &i in tree.paint_order() {
        let rect = tree.part(i).rect;
        let map = PixelToRest::new(camera, &poses[i]);
        let (mut r0, mut r1, mut c0, mut c1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for corner in rect.corners() {
            let (r, c) = camera.project(poses[i].apply(corner));
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        let clamp = |v: f64, hi: usize| if v <= 0.0 { 0 } else { (v as usize).min(hi) };
        let (rs, re) = (clamp(libm::floor(r0 - 1.0), h), clamp(libm::ceil(r1 + 1.0), h));
        let (cs, ce) = (clamp(libm::floor(c0 - 1.0), w), clamp(libm::ceil(c1 + 1.0), w));
        let mask = &mut masks[i];
        for r in rs..re {
            for c in cs..ce {
                if rect.contains(map.at(r as f64 + 0.5, c as f64 + 0.5)) {
                    mask.set(r, c, true);
                    labels[r * w + c] = (i + 1) as u16;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for &l in &labels {
        let rgb = if l == 0 { BACKGROUND } else { colors[l as usize - 1].map(|v| (v * opts.brightness).clamp(0.0, 1.0)) };
        data.extend_from_slice(&rgb);
    }
    Ok(RenderedFrame {
        image: ImageGrid::new(h, w, 3, data)?,
        masks,
        labels: LabelMap::new(h, w, labels)?,
        camera: *camera,
        colors: colors.to_vec(),
    })
}
