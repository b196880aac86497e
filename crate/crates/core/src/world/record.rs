use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drag::{DragSet, GridSize};
use crate::error::{Error, Result};
use crate::geometry::{Rigid2, Similarity2};
use crate::invalid;
use crate::motion::MotionHypothesis;
use crate::rng::{domain, stream, uniform};
use crate::world::animation::{articulation_at, sample_animation, subsample_parts, AnimationSpec, ArticulationState};
use crate::world::archetype::Archetype;
use crate::world::camera::{sample_camera, world_bounds};
use crate::world::drags::{sample_with_labels, DragTrack};
use crate::world::render::{palette_color, random_palette, render_poses, RenderOptions, RenderedFrame, Rgb};
use crate::world::tree::{pose_parts, KinematicTree};

/// Generation parameters of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Square image size in pixels.
    pub resolution: usize,
    /// Frames per animation (`N + 1`).
    pub frames: usize,
    /// Number of distinct objects; asset `i` uses `archetypes[i % len]`.
    pub assets: usize,
    pub animations_per_asset: usize,
    pub archetypes: Vec<Archetype>,
    /// Maximum drags per animation.
    pub drag_capacity: usize,
    /// Half-width of the global brightness jitter around 1.
    pub brightness_jitter: f64,
    /// Animations redrawn after an occluded drag before giving up.
    pub max_regenerations: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            frames: 36,
            assets: 16,
            animations_per_asset: 8,
            archetypes: Archetype::TRAINING.to_vec(),
            drag_capacity: crate::DEFAULT_DRAG_CAPACITY,
            brightness_jitter: 0.1,
            max_regenerations: 32,
        }
    }
}

impl WorldConfig {
    pub fn animations(&self) -> usize {
        self.assets * self.animations_per_asset
    }

    pub fn image_size(&self) -> GridSize {
        GridSize::square(self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 || self.frames < 2 || self.assets == 0 || self.animations_per_asset == 0 {
            return Err(invalid!("dataset needs resolution >= 16, >= 2 frames and at least one animation"));
        }
        if self.archetypes.is_empty() || self.drag_capacity == 0 {
            return Err(invalid!("dataset needs archetypes and a positive drag capacity"));
        }
        if !(0.0..1.0).contains(&self.brightness_jitter) {
            return Err(invalid!("brightness jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Palette {
    /// Canonical colour per part label.
    Regular,
    /// Per-animation random colour per part.
    Random,
}

/// World-frame motion of a moving part between the first and last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTruth {
    pub part: usize,
    pub motion: MotionHypothesis,
    /// Whether any ancestor also moves in this animation.
    pub nested: bool,
}

/// Everything needed to reproduce one animation's frames and drags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationRecord {
    pub index: usize,
    pub asset: usize,
    pub archetype: Archetype,
    pub resolution: usize,
    pub tree: KinematicTree,
    pub spec: AnimationSpec,
    pub camera: Similarity2,
    pub brightness: f32,
    pub random_colors: Vec<Rgb>,
    pub tracks: Vec<DragTrack>,
    pub truths: Vec<JointTruth>,
}

impl AnimationRecord {
    pub fn frames(&self) -> usize {
        self.spec.frames()
    }

    pub fn state(&self, n: usize) -> Result<ArticulationState> {
        articulation_at(&self.spec, n)
    }

    pub fn poses(&self, n: usize) -> Result<Vec<Rigid2>> {
        pose_parts(&self.tree, self.state(n)?.values())
    }

    pub fn colors(&self, palette: Palette) -> Vec<Rgb> {
        match palette {
            Palette::Regular => self.tree.parts().iter().map(|p| palette_color(p.label)).collect(),
            Palette::Random => self.random_colors.clone(),
        }
    }

    pub fn options(&self) -> RenderOptions {
        RenderOptions { height: self.resolution, width: self.resolution, brightness: self.brightness }
    }

    pub fn render(&self, n: usize, palette: Palette) -> Result<RenderedFrame> {
        render_poses(&self.tree, &self.poses(n)?, &self.colors(palette), &self.camera, self.options())
    }

    /// Drags moving frame `from` to frame `to`, in track order, skipping tracks
    /// whose source leaves the image.
    pub fn drags(&self, from: usize, to: usize, capacity: usize) -> Result<DragSet> {
        let size = GridSize::square(self.resolution);
        let mut set = DragSet::empty(capacity);
        for track in &self.tracks {
            let d = track.drag(from, to)?;
            if d.validate(size).is_ok() {
                set.push(d)?;
            }
        }
        Ok(set)
    }
}

/// Deterministically generates animation `index` of a dataset.
///
/// Objects come from the per-asset stream so all animations of an asset share
/// geometry; everything else comes from the per-animation stream. An animation
/// whose drag points are all occluded is redrawn.
pub fn generate_animation(config: &WorldConfig, seed: u64, index: usize) -> Result<AnimationRecord> {
    config.validate()?;
    if index >= config.animations() {
        return Err(Error::Index { index, last: config.animations() - 1 });
    }
    let asset = index / config.animations_per_asset;
    let archetype = config.archetypes[asset % config.archetypes.len()];
    let tree = archetype.build(&mut stream(seed, domain::ASSET, asset as u64));
    let mut rng = stream(seed, domain::ANIMATION, index as u64);
    let last = config.frames - 1;
    let res = config.resolution;
    let mut last_err = None;
    for _ in 0..config.max_regenerations {
        let spec = sample_animation(&tree, last, &mut rng)?;
        let poses: Vec<Vec<Rigid2>> =
            (0..=last).map(|n| pose_parts(&tree, articulation_at(&spec, n)?.values())).collect::<Result<_>>()?;
        let bounds = world_bounds(&tree, poses.iter().map(|p| p.as_slice()));
        let camera = sample_camera(bounds, res, res, &mut rng)?;
        let brightness = uniform(&mut rng, 1.0 - config.brightness_jitter, 1.0 + config.brightness_jitter) as f32;
        let random_colors = random_palette(tree.len(), &mut rng);
        let moving = subsample_parts(&spec.moving, config.drag_capacity, &mut rng);
        let opts = RenderOptions { height: res, width: res, brightness };
        let labels = render_poses(&tree, &poses[0], &random_colors, &camera, opts)?.labels;
        let mut tracks = Vec::with_capacity(moving.len());
        let mut occluded = false;
        for &part in &moving {
            match sample_with_labels(&tree, part, (&poses[0], &poses[last]), &camera, &labels, &mut rng) {
                Ok(sample) => tracks.push(DragTrack::from_sample(part, &sample, &camera, poses.iter().map(|p| p.as_slice()))),
                Err(e @ Error::Occluded { .. }) => {
                    occluded = true;
                    last_err = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if occluded {
            continue;
        }
        let truths = spec
            .moving
            .iter()
            .map(|&part| {
                let m = poses[last][part].compose(&poses[0][part].inverse());
                JointTruth {
                    part,
                    motion: MotionHypothesis::from_rigid(&m),
                    nested: tree.ancestors(part).iter().any(|a| spec.is_moving(*a)),
                }
            })
            .collect();
        // Consume one value so later additions to the stream do not shift records.
        let _: u64 = rng.random();
        return Ok(AnimationRecord {
            index,
            asset,
            archetype,
            resolution: res,
            tree,
            spec,
            camera,
            brightness,
            random_colors,
            tracks,
            truths,
        });
    }
    Err(last_err.unwrap_or_else(|| invalid!("animation {index} could not be generated")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> WorldConfig {
        WorldConfig { assets: 10, animations_per_asset: 2, archetypes: Archetype::ALL.to_vec(), ..WorldConfig::default() }
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = config();
        for i in 0..cfg.animations() {
            let a = generate_animation(&cfg, 7, i).unwrap();
            assert_eq!(a, generate_animation(&cfg, 7, i).unwrap());
            assert_eq!(a.archetype, cfg.archetypes[a.asset % 10]);
            assert!(!a.tracks.is_empty() && a.tracks.len() <= cfg.drag_capacity);
            for t in &a.tracks {
                assert_eq!(t.points.len(), 36);
                assert!(t.points[0].inside(cfg.image_size()));
            }
            let f0 = a.render(0, Palette::Regular).unwrap();
            let f35 = a.render(35, Palette::Random).unwrap();
            for p in 0..a.tree.len() {
                let still = !a.spec.is_moving(p) && a.tree.ancestors(p).iter().all(|q| !a.spec.is_moving(*q));
                if still {
                    assert_eq!(f0.masks[p], f35.masks[p], "animation {i} part {p}");
                }
            }
        }
    }

    #[test]
    fn assets_share_geometry() {
        let cfg = config();
        let (a, b) = (generate_animation(&cfg, 1, 0).unwrap(), generate_animation(&cfg, 1, 1).unwrap());
        assert_eq!(a.tree, b.tree);
        assert_ne!(a.camera, b.camera);
        assert_ne!(a.random_colors, b.random_colors);
        assert!(generate_animation(&cfg, 1, 20).is_err());
    }

    #[test]
    fn pair_drags_reverse() {
        let a = generate_animation(&config(), 3, 4).unwrap();
        let fwd = a.drags(0, 35, 5).unwrap();
        assert!(fwd.len() <= a.tracks.len());
        let back = a.drags(35, 0, 5).unwrap();
        for (f, b) in fwd.drags().iter().zip(back.drags()) {
            if b.source == f.termination {
                assert_eq!(*b, f.reversed());
            }
        }
        let same = a.drags(10, 10, 5).unwrap();
        assert!(same.drags().iter().all(|d| d.source == d.termination));
    }

    #[test]
    fn truths_reproduce_final_pose() {
        let a = generate_animation(&config(), 5, 2).unwrap();
        let (p0, pn) = (a.poses(0).unwrap(), a.poses(35).unwrap());
        for t in &a.truths {
            let moved = t.motion.transform().compose(&p0[t.part]);
            let probe = a.tree.part(t.part).rect.center();
            assert!((moved.apply(probe) - pn[t.part].apply(probe)).norm() < 1e-9);
        }
    }
}
