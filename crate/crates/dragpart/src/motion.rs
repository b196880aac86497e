//! Motion analysis of segmented objects by render-and-compare grid search.
//!
//! Targets come from the ground-truth motion (oracle mode) or from a trained
//! generator fed one reprojected drag per view (generator mode).

use dragpart_core::motion::{
    estimate_motion_with, objective, project_drag, Lattice, MotionEstimate, MotionHypothesis, MotionScene, OracleTargets,
    SearchGrid, SearchOptions, TargetProvider,
};
use dragpart_core::rng::{domain, stream};
use dragpart_core::world::{
    generate_animation, palette_color, pose_parts, sample_camera, world_bounds, Archetype, Bounds, Joint, KinematicTree,
    RenderOptions, WorldConfig,
};
use dragpart_core::{Drag, DragSet, ImageGrid, Similarity2, Vec2};
use dragpart_diffusion::{sample, Checkpoint, SampleOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An articulated object at a fixed state with one pre-segmented moving part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionObject {
    pub tree: KinematicTree,
    /// Articulation state of every part.
    pub openness: Vec<f64>,
    /// Root of the moving subtree.
    pub moving_part: usize,
    pub resolution: usize,
    /// Ground-truth motion, required in oracle mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<MotionHypothesis>,
}

impl MotionObject {
    pub fn scene(&self) -> Result<MotionScene> {
        if self.moving_part >= self.tree.len() {
            return Err(Error::Core(dragpart_core::Error::Index { index: self.moving_part, last: self.tree.len() - 1 }));
        }
        let scene = MotionScene {
            poses: pose_parts(&self.tree, &self.openness)?,
            moving: self.tree.subtree(self.moving_part),
            colors: self.tree.parts().iter().map(|p| palette_color(p.label)).collect(),
            options: RenderOptions::square(self.resolution),
            tree: self.tree.clone(),
        };
        scene.validate()?;
        Ok(scene)
    }

    /// World bounds of the object at its source state.
    pub fn bounds(&self) -> Result<Bounds> {
        let poses = pose_parts(&self.tree, &self.openness)?;
        Ok(world_bounds(&self.tree, [poses.as_slice()]))
    }

    /// Centre of the moving part in world coordinates.
    pub fn handle_point(&self) -> Result<Vec2> {
        let poses = pose_parts(&self.tree, &self.openness)?;
        Ok(poses[self.moving_part].apply(self.tree.part(self.moving_part).rect.center()))
    }

    /// World drag from the moving part's centre along `motion`.
    pub fn drag_for(&self, motion: &MotionHypothesis) -> Result<WorldDrag> {
        let from = self.handle_point()?;
        Ok(WorldDrag { from, to: motion.transform().apply(from) })
    }
}

/// A drag in world coordinates, projected into every view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldDrag {
    pub from: Vec2,
    pub to: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Oracle,
    Generator,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TargetMode::Oracle),
            "generator" => Ok(TargetMode::Generator),
            _ => Err(Error::Config(format!("unknown target mode `{s}` (expected oracle or generator)"))),
        }
    }
}

/// Targets sampled from a checkpoint, one drag per view.
pub struct GeneratorTargets<'a> {
    pub checkpoint: &'a Checkpoint,
    pub options: SampleOptions,
}

impl TargetProvider for GeneratorTargets<'_> {
    fn targets(&self, scene: &MotionScene, cameras: &[Similarity2], drags: &[Drag]) -> dragpart_core::Result<Vec<ImageGrid>> {
        let capacity = self.checkpoint.config().drag_capacity;
        cameras
            .iter()
            .zip(drags)
            .enumerate()
            .map(|(k, (cam, d))| {
                let y = scene.render_source(cam)?;
                let set = DragSet::new(capacity, vec![*d])?;
                let opts = SampleOptions { seed: self.options.seed.wrapping_add(k as u64), ..self.options };
                sample(self.checkpoint, &y, &set, &opts)
                    .map_err(|e| dragpart_core::Error::InvalidInput(format!("generator failed: {e}")))
            })
            .collect()
    }
}

/// `K` cameras framing the object with a 25% margin per side.
pub fn cameras(object: &MotionObject, views: usize, seed: u64) -> Result<Vec<Similarity2>> {
    let b = object.bounds()?;
    let grown = Bounds { min: b.min - b.size() * 0.25, max: b.max + b.size() * 0.25 };
    (0..views)
        .map(|k| Ok(sample_camera(grown, object.resolution, object.resolution, &mut stream(seed, domain::MOTION_CAMERAS, k as u64))?))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EstimateRequest<'a> {
    pub object: &'a MotionObject,
    pub drag: WorldDrag,
    pub mode: TargetMode,
    pub views: usize,
    pub grid: Option<SearchGrid>,
    pub search: SearchOptions,
    pub seed: u64,
    pub checkpoint: Option<&'a Checkpoint>,
    pub sample: SampleOptions,
}

/// Renders or samples the targets, then scans the grid in parallel.
pub fn estimate(req: &EstimateRequest<'_>) -> Result<MotionEstimate> {
    if req.views == 0 {
        return Err(Error::Config("motion estimation needs at least one view".into()));
    }
    let scene = req.object.scene()?;
    let cams = cameras(req.object, req.views, req.seed)?;
    let drags: Vec<Drag> = cams.iter().map(|c| project_drag(c, req.drag.from, req.drag.to)).collect();
    let targets = match req.mode {
        TargetMode::Oracle => {
            let truth = req.object.truth.ok_or_else(|| Error::Config("oracle mode needs an object with a `truth` motion".into()))?;
            OracleTargets(truth).targets(&scene, &cams, &drags)?
        }
        TargetMode::Generator => {
            let ckpt = req.checkpoint.ok_or_else(|| Error::Config("generator mode needs a checkpoint".into()))?;
            if ckpt.config().image.h != req.object.resolution || ckpt.config().image.w != req.object.resolution {
                return Err(Error::Config(format!("checkpoint renders {}x{} images, object uses {}", ckpt.config().image.h, ckpt.config().image.w, req.object.resolution)));
            }
            GeneratorTargets { checkpoint: ckpt, options: req.sample }.targets(&scene, &cams, &drags)?
        }
    };
    let grid = match &req.grid {
        Some(g) => g.clone(),
        None => SearchGrid::default_for(req.object.bounds()?),
    };
    Ok(estimate_motion_with(&scene, &targets, &cams, &grid, req.search, |hyps| {
        hyps.par_iter().map(|h| objective(&scene, h, &targets, &cams)).collect()
    })?)
}

/// Objective table as CSV rows `type,pivot_x,pivot_y,angle,axis_x,axis_y,distance,objective`.
pub fn table_csv(estimate: &MotionEstimate) -> String {
    let mut out = String::from("type,pivot_x,pivot_y,angle,axis_x,axis_y,distance,objective\n");
    for (h, v) in estimate.table.iter().flatten() {
        let row = match *h {
            MotionHypothesis::Revolute { pivot, angle } => format!("revolute,{},{},{},,,,{v}\n", pivot.x, pivot.y, angle),
            MotionHypothesis::Prismatic { axis, distance } => format!("prismatic,,,,{},{},{distance},{v}\n", axis.x, axis.y),
        };
        out.push_str(&row);
    }
    out
}

fn nearest(l: &Lattice, v: f64, lo: usize) -> usize {
    let i = ((v - l.start) / l.step).round();
    (i.max(lo as f64) as usize).min(l.count - 1)
}

/// Snaps a motion onto `grid`, keeping at least `min_angle_steps` angle steps
/// from zero and at least `min_distance` for translations.
pub fn snap_to_grid(motion: &MotionHypothesis, grid: &SearchGrid, min_angle: f64, min_distance: f64) -> MotionHypothesis {
    match *motion {
        MotionHypothesis::Revolute { pivot, angle } => {
            let x = grid.pivot_x.value(nearest(&grid.pivot_x, pivot.x, 0));
            let y = grid.pivot_y.value(nearest(&grid.pivot_y, pivot.y, 0));
            let mut j = nearest(&grid.angle, angle, 0);
            if grid.angle.value(j).abs() < min_angle - 1e-12 {
                let candidates = (0..grid.angle.count).filter(|&k| grid.angle.value(k).abs() >= min_angle - 1e-12);
                let same_sign = candidates.filter(|&k| grid.angle.value(k).signum() == angle.signum() || angle == 0.0);
                j = same_sign.min_by(|&a, &b| grid.angle.value(a).abs().total_cmp(&grid.angle.value(b).abs())).unwrap_or(j);
            }
            MotionHypothesis::revolute(Vec2::new(x, y), grid.angle.value(j))
        }
        MotionHypothesis::Prismatic { axis, distance } => {
            let a = axis.y.atan2(axis.x).rem_euclid(std::f64::consts::TAU);
            let i = nearest(&grid.axis_angle, a, 0);
            let lo = ((min_distance - grid.distance.start) / grid.distance.step - 1e-9).ceil().max(0.0) as usize;
            let d = nearest(&grid.distance, distance, lo);
            MotionHypothesis::prismatic(grid.axis_angle.value(i), grid.distance.value(d))
        }
    }
}

/// One benchmark object with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub object: MotionObject,
    pub truth: MotionHypothesis,
    pub grid: SearchGrid,
}

/// World motion of `part` when its openness changes from `a` to `b`.
fn joint_motion(tree: &KinematicTree, openness: &[f64], part: usize, b: f64) -> Result<MotionHypothesis> {
    let p0 = pose_parts(tree, openness)?;
    let mut moved = openness.to_vec();
    moved[part] = b;
    let p1 = pose_parts(tree, &moved)?;
    Ok(MotionHypothesis::from_rigid(&p1[part].compose(&p0[part].inverse())))
}

/// Synthetic objects whose snapped ground truth lies on the default grid:
/// `count / 2` revolute and `count - count / 2` prismatic, with motions of at
/// least 15 degrees or 0.1 world units and a moving part covering at least
/// 30 pixels in the first view.
pub fn oracle_benchmark(count: usize, resolution: usize, seed: u64) -> Result<Vec<BenchmarkCase>> {
    let want_rev = count / 2;
    let want_pri = count - want_rev;
    let (mut rev, mut pri) = (Vec::new(), Vec::new());
    let world = WorldConfig { resolution, frames: 2, assets: 256, animations_per_asset: 1, archetypes: Archetype::ALL.to_vec(), ..Default::default() };
    for index in 0..world.animations() {
        if rev.len() >= want_rev && pri.len() >= want_pri {
            break;
        }
        let rec = generate_animation(&world, seed, index)?;
        let openness = rec.state(0)?.values().to_vec();
        for part in rec.tree.movable_parts() {
            if rec.tree.ancestors(part).iter().any(|&a| rec.tree.part(a).joint.is_movable()) {
                continue;
            }
            let is_rev = matches!(rec.tree.part(part).joint, Joint::Revolute { .. });
            if (is_rev && rev.len() >= want_rev) || (!is_rev && pri.len() >= want_pri) {
                continue;
            }
            let target = if openness[part] < 0.5 { 1.0 } else { 0.0 };
            let motion = joint_motion(&rec.tree, &openness, part, target)?;
            let mut object = MotionObject { tree: rec.tree.clone(), openness: openness.clone(), moving_part: part, resolution, truth: None };
            let grid = SearchGrid::default_for(object.bounds()?);
            let truth = snap_to_grid(&motion, &grid, 15f64.to_radians(), 0.1);
            object.truth = Some(truth);
            let scene = object.scene()?;
            let cam = cameras(&object, 1, seed)?[0];
            let labels = dragpart_core::world::render_poses(&scene.tree, &scene.poses, &scene.colors, &cam, scene.options)?.labels;
            if labels.mask_of_any(&scene.moving).count() < 30 {
                continue;
            }
            let case = BenchmarkCase { object, truth, grid };
            if is_rev {
                rev.push(case);
            } else {
                pri.push(case);
            }
            break;
        }
    }
    if rev.len() < want_rev || pri.len() < want_pri {
        return Err(Error::Config(format!("benchmark found {} revolute and {} prismatic objects", rev.len(), pri.len())));
    }
    rev.extend(pri);
    Ok(rev)
}

/// Moves a lattice-aligned prismatic truth half a distance step off the lattice.
pub fn off_lattice(case: &BenchmarkCase) -> Option<BenchmarkCase> {
    match case.truth {
        MotionHypothesis::Prismatic { axis, distance } => {
            let d = distance + case.grid.distance.step / 2.0;
            if d > case.grid.distance.end() {
                return None;
            }
            let truth = MotionHypothesis::Prismatic { axis, distance: d };
            let mut object = case.object.clone();
            object.truth = Some(truth);
            Some(BenchmarkCase { object, truth, grid: case.grid.clone() })
        }
        MotionHypothesis::Revolute { .. } => None,
    }
}

/// Oracle-mode estimate of one benchmark case.
pub fn estimate_case(case: &BenchmarkCase, views: usize, seed: u64, search: SearchOptions) -> Result<MotionEstimate> {
    estimate(&EstimateRequest {
        object: &case.object,
        drag: case.object.drag_for(&case.truth)?,
        mode: TargetMode::Oracle,
        views,
        grid: Some(case.grid.clone()),
        search,
        seed,
        checkpoint: None,
        sample: SampleOptions::default(),
    })
}
