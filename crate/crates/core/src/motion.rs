//! Render-and-compare motion estimation by exhaustive grid search.
//!
//! A hypothesis is a planar rigid motion of the moving subtree, either a
//! rotation about a pivot or a translation along an axis. Candidates are
//! rendered from `K` cameras and scored by the mean per-view MSE against target
//! images; the lexicographically first strict minimum wins.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::drag::{Drag, PixelPoint};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Rigid2, Similarity2, Vec2};
use crate::image::ImageGrid;
use crate::invalid;
use crate::Square;
use crate::world::{render_poses, Bounds, KinematicTree, RenderOptions, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionHypothesis {
    /// Rotation by `angle` radians about `pivot` (world units).
    Revolute { pivot: Vec2, angle: f64 },
    /// Translation by `distance` world units along the unit `axis`.
    Prismatic { axis: Vec2, distance: f64 },
}

impl MotionHypothesis {
    pub fn revolute(pivot: Vec2, angle: f64) -> Self {
        MotionHypothesis::Revolute { pivot, angle: wrap_angle(angle) }
    }

    /// Prismatic hypothesis with the axis given by its angle.
    pub fn prismatic(axis_angle: f64, distance: f64) -> Self {
        MotionHypothesis::Prismatic { axis: Vec2::from_angle(axis_angle), distance }
    }

    pub fn is_revolute(&self) -> bool {
        matches!(self, MotionHypothesis::Revolute { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MotionHypothesis::Revolute { pivot, angle } => {
                if !pivot.is_finite() || !(angle > -PI && angle <= PI) {
                    return Err(invalid!("revolute angle must lie in (-pi, pi]"));
                }
            }
            MotionHypothesis::Prismatic { axis, distance } => {
                if !axis.is_finite() || (axis.norm() - 1.0).abs() > 1e-9 || !distance.is_finite() {
                    return Err(invalid!("prismatic axis must be a unit vector"));
                }
            }
        }
        Ok(())
    }

    pub fn transform(&self) -> Rigid2 {
        match *self {
            MotionHypothesis::Revolute { pivot, angle } => Rigid2::rotation_about(pivot, angle),
            MotionHypothesis::Prismatic { axis, distance } => Rigid2::translation(axis * distance),
        }
    }

    /// Classifies a rigid world motion: pure translations become prismatic,
    /// everything else a rotation about its fixed point.
    pub fn from_rigid(m: &Rigid2) -> Self {
        let angle = m.angle();
        if angle.abs() < 1e-12 {
            let t = m.translation;
            let axis = t.normalized().unwrap_or(Vec2::new(1.0, 0.0));
            return MotionHypothesis::Prismatic { axis, distance: t.norm() };
        }
        // Solve (I - R) p = t.
        let (c, s) = (libm::cos(angle), libm::sin(angle));
        let (a, b, cc, d) = (1.0 - c, s, -s, 1.0 - c);
        let det = a * d - b * cc;
        let t = m.translation;
        let pivot = Vec2::new((d * t.x - b * t.y) / det, (a * t.y - cc * t.x) / det);
        MotionHypothesis::Revolute { pivot, angle: wrap_angle(angle) }
    }
}

pub fn apply_motion(points: &[Vec2], hypothesis: &MotionHypothesis) -> Vec<Vec2> {
    let m = hypothesis.transform();
    points.iter().map(|&p| m.apply(p)).collect()
}

/// `start + i * step` for `i in 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Lattice {
    pub fn new(start: f64, step: f64, count: usize) -> Self {
        Self { start, step, count }
    }

    pub fn span(lo: f64, hi: f64, count: usize) -> Self {
        let step = if count > 1 { (hi - lo) / (count - 1) as f64 } else { 1.0 };
        Self { start: lo, step, count }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.value(i))
    }

    pub fn end(&self) -> f64 {
        self.value(self.count.saturating_sub(1))
    }

    /// Halves the step over the same range; every old point is kept.
    pub fn halved(&self) -> Self {
        Self { start: self.start, step: self.step / 2.0, count: 2 * self.count.max(1) - 1 }
    }

    /// `2 * radius + 1` points centred on `center` with half the step.
    pub fn refined_around(&self, center: f64, radius: usize) -> Self {
        let step = self.step / 2.0;
        Self { start: center - radius as f64 * step, step, count: 2 * radius + 1 }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.count == 0 || self.step.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) || !self.start.is_finite() || !self.step.is_finite() {
            return Err(invalid!("{what} lattice must be non-empty with a positive step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub pivot_x: Lattice,
    pub pivot_y: Lattice,
    /// Revolute angles, radians.
    pub angle: Lattice,
    /// Prismatic axis directions, radians.
    pub axis_angle: Lattice,
    pub distance: Lattice,
    #[serde(default = "yes")]
    pub revolute: bool,
    #[serde(default = "yes")]
    pub prismatic: bool,
}

fn yes() -> bool {
    true
}

impl SearchGrid {
    /// 9x9 pivots over the object bounds grown by 25% per side, angles
    /// -90..=90 degrees in 7.5 degree steps, axes every 15 degrees and
    /// distances 0..=0.5 in steps of 0.05.
    pub fn default_for(bounds: Bounds) -> Self {
        let size = bounds.size();
        let (lo, hi) = (bounds.min - size * 0.25, bounds.max + size * 0.25);
        let deg = PI / 180.0;
        Self {
            pivot_x: Lattice::span(lo.x, hi.x, 9),
            pivot_y: Lattice::span(lo.y, hi.y, 9),
            angle: Lattice::new(-90.0 * deg, 7.5 * deg, 25),
            axis_angle: Lattice::new(0.0, 15.0 * deg, 24),
            distance: Lattice::new(0.0, 0.05, 11),
            revolute: true,
            prismatic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.revolute && !self.prismatic {
            return Err(invalid!("search grid enables no motion type"));
        }
        if self.revolute {
            self.pivot_x.validate("pivot x")?;
            self.pivot_y.validate("pivot y")?;
            self.angle.validate("angle")?;
        }
        if self.prismatic {
            self.axis_angle.validate("axis angle")?;
            self.distance.validate("distance")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        let rev = if self.revolute { self.pivot_x.count * self.pivot_y.count * self.angle.count } else { 0 };
        let pri = if self.prismatic { self.axis_angle.count * self.distance.count } else { 0 };
        rev + pri
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every hypothesis in lexicographic order: revolute by (pivot x, pivot y,
    /// angle) index, then prismatic by (axis, distance) index.
    pub fn hypotheses(&self) -> Vec<MotionHypothesis> {
        let mut out = Vec::with_capacity(self.len());
        if self.revolute {
            for x in self.pivot_x.values() {
                for y in self.pivot_y.values() {
                    for a in self.angle.values() {
                        out.push(MotionHypothesis::revolute(Vec2::new(x, y), a));
                    }
                }
            }
        }
        if self.prismatic {
            for ax in self.axis_angle.values() {
                for d in self.distance.values() {
                    out.push(MotionHypothesis::prismatic(ax, d));
                }
            }
        }
        out
    }

    pub fn halved(&self) -> Self {
        Self {
            pivot_x: self.pivot_x.halved(),
            pivot_y: self.pivot_y.halved(),
            angle: self.angle.halved(),
            axis_angle: self.axis_angle.halved(),
            distance: self.distance.halved(),
            ..*self
        }
    }

    /// Local grid of half the step around an incumbent, restricted to its type.
    pub fn refined_around(&self, best: &MotionHypothesis) -> Self {
        let mut g = self.clone();
        match *best {
            MotionHypothesis::Revolute { pivot, angle } => {
                g.pivot_x = self.pivot_x.refined_around(pivot.x, 2);
                g.pivot_y = self.pivot_y.refined_around(pivot.y, 2);
                g.angle = self.angle.refined_around(angle, 2);
                g.prismatic = false;
            }
            MotionHypothesis::Prismatic { axis, distance } => {
                g.axis_angle = self.axis_angle.refined_around(libm::atan2(axis.y, axis.x), 2);
                g.distance = self.distance.refined_around(distance, 2);
                g.revolute = false;
            }
        }
        g
    }
}

/// Object to analyse: all parts at their source pose, with a set of parts that
/// move rigidly together under the hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScene {
    pub tree: KinematicTree,
    pub poses: Vec<Rigid2>,
    pub moving: Vec<usize>,
    pub colors: Vec<Rgb>,
    pub options: RenderOptions,
}

impl MotionScene {
    pub fn validate(&self) -> Result<()> {
        if self.poses.len() != self.tree.len() || self.colors.len() != self.tree.len() {
            return Err(Error::Shape("scene poses and colours must cover every part".into()));
        }
        if self.moving.is_empty() || self.moving.iter().any(|&i| i >= self.tree.len()) {
            return Err(invalid!("scene needs a non-empty set of valid moving parts"));
        }
        Ok(())
    }

    pub fn moved_poses(&self, hypothesis: &MotionHypothesis) -> Vec<Rigid2> {
        let m = hypothesis.transform();
        let mut poses = self.poses.clone();
        for &i in &self.moving {
            poses[i] = m.compose(&self.poses[i]);
        }
        poses
    }

    pub fn render(&self, hypothesis: &MotionHypothesis, camera: &Similarity2) -> Result<ImageGrid> {
        Ok(render_poses(&self.tree, &self.moved_poses(hypothesis), &self.colors, camera, self.options)?.image)
    }

    /// Source view with no motion applied.
    pub fn render_source(&self, camera: &Similarity2) -> Result<ImageGrid> {
        Ok(render_poses(&self.tree, &self.poses, &self.colors, camera, self.options)?.image)
    }
}

/// A world-space drag projected into one view.
pub fn project_drag(camera: &Similarity2, from: Vec2, to: Vec2) -> Drag {
    let (a, b) = (camera.project(from), camera.project(to));
    Drag::new(PixelPoint::new(a.0, a.1), PixelPoint::new(b.0, b.1))
}

/// Source of the target images `x_k` for each view.
pub trait TargetProvider {
    fn targets(&self, scene: &MotionScene, cameras: &[Similarity2], drags: &[Drag]) -> Result<Vec<ImageGrid>>;
}

/// Renders targets from a known motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTargets(pub MotionHypothesis);

impl TargetProvider for OracleTargets {
    fn targets(&self, scene: &MotionScene, cameras: &[Similarity2], _drags: &[Drag]) -> Result<Vec<ImageGrid>> {
        cameras.iter().map(|c| scene.render(&self.0, c)).collect()
    }
}

/// Mean over views of the per-element squared error between the hypothesis
/// render and the target.
pub fn objective(scene: &MotionScene, hypothesis: &MotionHypothesis, targets: &[ImageGrid], cameras: &[Similarity2]) -> Result<f64> {
    if targets.is_empty() || targets.len() != cameras.len() {
        return Err(invalid!("need K >= 1 targets and one camera per target, got {} and {}", targets.len(), cameras.len()));
    }
    let mut total = 0.0;
    for (target, camera) in targets.iter().zip(cameras) {
        let img = scene.render(hypothesis, camera)?;
        if !img.same_shape(target) {
            return Err(Error::Shape("target resolution differs from the scene".into()));
        }
        let sum: f64 = img.data().iter().zip(target.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).sq()).sum();
        total += sum / img.data().len() as f64;
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub best: MotionHypothesis,
    pub objective: f64,
    /// Every evaluated hypothesis with its objective, in evaluation order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(MotionHypothesis, f64)>>,
}

/// Index of the first strict minimum.
pub fn first_minimum(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Coarse-to-fine rounds after the global scan.
    pub refine_rounds: usize,
    pub keep_table: bool,
}

/// Exhaustive scan of `grid`, then optional local refinement.
pub fn estimate_motion(
    scene: &MotionScene,
    targets: &[ImageGrid],
    cameras: &[Similarity2],
    grid: &SearchGrid,
    options: SearchOptions,
) -> Result<MotionEstimate> {
    estimate_motion_with(scene, targets, cameras, grid, options, |hyps| {
        hyps.iter().map(|h| objective(scene, h, targets, cameras)).collect()
    })
}

/// Like [`estimate_motion`] with a caller-supplied batch evaluator, which must
/// return objectives in input order (lets callers parallelize).
pub fn estimate_motion_with<F>(
    scene: &MotionScene,
    targets: &[ImageGrid],
    cameras: &[Similarity2],
    grid: &SearchGrid,
    options: SearchOptions,
    mut evaluate: F,
) -> Result<MotionEstimate>
where
    F: FnMut(&[MotionHypothesis]) -> Result<Vec<f64>>,
{
    scene.validate()?;
    grid.validate()?;
    if targets.is_empty() || targets.len() != cameras.len() {
        return Err(invalid!("need K >= 1 targets and one camera per target"));
    }
    let mut table = Vec::new();
    let mut current = grid.clone();
    let mut best: Option<(MotionHypothesis, f64)> = None;
    for round in 0..=options.refine_rounds {
        if round > 0 {
            current = current.refined_around(&best.expect("scanned").0);
        }
        let hyps = current.hypotheses();
        if hyps.is_empty() {
            return Err(invalid!("search grid is empty"));
        }
        let values = evaluate(&hyps)?;
        let i = first_minimum(&values).expect("non-empty");
        if best.is_none_or(|(_, v)| values[i] < v) {
            best = Some((hyps[i], values[i]));
        }
        if options.keep_table {
            table.extend(hyps.into_iter().zip(values));
        }
    }
    let (best, objective) = best.expect("at least one round");
    Ok(MotionEstimate { best, objective, table: options.keep_table.then_some(table) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::tree::tests::{door_with_handle, part};
    use crate::world::{pose_parts, Joint, PartLabel, Rect};
    use alloc::vec;

    fn scene() -> MotionScene {
        let tree = door_with_handle();
        let poses = pose_parts(&tree, &[0.0; 3]).unwrap();
        MotionScene {
            tree,
            poses,
            moving: vec![1, 2],
            colors: vec![[0.5, 0.4, 0.3], [0.2, 0.4, 0.8], [0.1, 0.1, 0.1]],
            options: RenderOptions::square(32),
        }
    }

    fn cams() -> Vec<Similarity2> {
        vec![
            Similarity2::new(12.0, 0.1, Vec2::new(16.0, 16.0)).unwrap(),
            Similarity2::new(10.0, -0.2, Vec2::new(15.0, 17.0)).unwrap(),
        ]
    }

    #[test]
    fn identity_motions() {
        let pts = [Vec2::new(0.3, -0.2), Vec2::new(-1.0, 2.0)];
        for h in [MotionHypothesis::revolute(Vec2::new(0.1, 0.2), 0.0), MotionHypothesis::prismatic(0.3, 0.0)] {
            assert_eq!(apply_motion(&pts, &h), pts.to_vec());
        }
        let moved = apply_motion(&pts, &MotionHypothesis::prismatic(PI / 2.0, 0.3));
        assert!((moved[0] - Vec2::new(0.3, 0.1)).norm() < 1e-12);
    }

    #[test]
    fn half_turn_reflects_through_pivot() {
        let pivot = Vec2::new(0.25, -0.5);
        let pts = [Vec2::new(1.0, 1.0), Vec2::new(-0.3, 0.7)];
        let moved = apply_motion(&pts, &MotionHypothesis::revolute(pivot, PI));
        for (p, q) in pts.iter().zip(&moved) {
            // R(pi) = -I, so q = 2 * pivot - p.
            assert!((*q - (pivot * 2.0 - *p)).norm() < 1e-12);
        }
    }

    #[test]
    fn from_rigid_recovers_parameters() {
        let h = MotionHypothesis::revolute(Vec2::new(0.4, -0.1), 0.7);
        match MotionHypothesis::from_rigid(&h.transform()) {
            MotionHypothesis::Revolute { pivot, angle } => {
                assert!((pivot - Vec2::new(0.4, -0.1)).norm() < 1e-12 && (angle - 0.7).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(!MotionHypothesis::from_rigid(&MotionHypothesis::prismatic(1.0, 0.2).transform()).is_revolute());
    }

    #[test]
    fn objective_zero_and_symmetry() {
        let s = scene();
        let truth = MotionHypothesis::revolute(Vec2::new(-0.4, 0.0), -0.6);
        let c = cams();
        let targets = OracleTargets(truth).targets(&s, &c, &[]).unwrap();
        assert_eq!(objective(&s, &truth, &targets, &c).unwrap(), 0.0);
        let other = MotionHypothesis::prismatic(0.0, 0.2);
        let a = objective(&s, &other, &targets, &c).unwrap();
        let (rt, rc): (Vec<_>, Vec<_>) = (targets.iter().rev().cloned().collect(), c.iter().rev().cloned().collect());
        assert_eq!(a, objective(&s, &other, &rt, &rc).unwrap());
        assert!(a > 0.0);
        let src: Vec<ImageGrid> = c.iter().map(|cam| s.render_source(cam).unwrap()).collect();
        assert_eq!(objective(&s, &MotionHypothesis::prismatic(0.0, 0.0), &src, &c).unwrap(), 0.0);
        assert!(objective(&s, &truth, &targets[..1], &c).is_err());
    }

    #[test]
    fn lattice_halving_keeps_points() {
        let l = Lattice::new(-1.0, 0.5, 5);
        let h = l.halved();
        assert_eq!(h.count, 9);
        assert_eq!(h.end(), l.end());
        for i in 0..l.count {
            assert_eq!(h.value(2 * i), l.value(i));
        }
    }

    #[test]
    fn grid_order_and_validation() {
        let b = Bounds { min: Vec2::new(-0.5, -0.5), max: Vec2::new(0.5, 0.5) };
        let g = SearchGrid::default_for(b);
        assert_eq!(g.len(), 81 * 25 + 24 * 11);
        let hyps = g.hypotheses();
        assert_eq!(hyps.len(), g.len());
        assert_eq!(hyps[0], MotionHypothesis::revolute(Vec2::new(-0.75, -0.75), -PI / 2.0));
        assert!(!hyps[81 * 25].is_revolute());
        let mut empty = g.clone();
        empty.distance.count = 0;
        assert!(empty.validate().is_err());
    }

    #[test]
    fn first_minimum_breaks_ties_low() {
        assert_eq!(first_minimum(&[3.0, 1.0, 1.0, 2.0]), Some(1));
        assert_eq!(first_minimum(&[]), None);
    }

    #[test]
    fn small_grid_search_is_globally_optimal() {
        let body = Rect::new(Vec2::new(-0.6, -0.6), Vec2::new(0.6, 0.6));
        let tree = KinematicTree::new(vec![
            part("body", PartLabel::Body, body, Joint::Fixed, None),
            part("drawer", PartLabel::Drawer, Rect::new(Vec2::new(-0.4, -0.2), Vec2::new(0.4, 0.2)), Joint::Fixed, Some(0)),
        ])
        .unwrap();
        let s = MotionScene {
            poses: pose_parts(&tree, &[0.0, 0.0]).unwrap(),
            tree,
            moving: vec![1],
            colors: vec![[0.6, 0.5, 0.4], [0.2, 0.7, 0.3]],
            options: RenderOptions::square(32),
        };
        let grid = SearchGrid {
            pivot_x: Lattice::span(-0.5, 0.5, 3),
            pivot_y: Lattice::span(-0.5, 0.5, 3),
            angle: Lattice::new(-0.5, 0.25, 5),
            axis_angle: Lattice::new(0.0, PI / 2.0, 4),
            distance: Lattice::new(0.0, 0.1, 4),
            revolute: true,
            prismatic: true,
        };
        let c = cams();
        let truth = MotionHypothesis::prismatic(0.0, 0.2);
        let targets = OracleTargets(truth).targets(&s, &c, &[]).unwrap();
        let est = estimate_motion(&s, &targets, &c, &grid, SearchOptions { refine_rounds: 0, keep_table: true }).unwrap();
        assert_eq!(est.objective, 0.0);
        assert!(!est.best.is_revolute());
        let table = est.table.unwrap();
        let min = table.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        assert_eq!(min, est.objective);
        assert_eq!(objective(&s, &est.best, &targets, &c).unwrap(), est.objective);
        let halved = estimate_motion(&s, &targets, &c, &grid.halved(), SearchOptions::default()).unwrap();
        assert!(halved.objective <= est.objective);
    }
}
