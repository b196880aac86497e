use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::drag::{Drag, PixelPoint};
use crate::error::{Error, Result};
use crate::geometry::{Rigid2, Similarity2, Vec2};
use crate::image::LabelMap;
use crate::world::animation::ArticulationState;
use crate::world::render::{render_poses, RenderOptions, Rgb};
use crate::world::tree::{pose_parts, KinematicTree};

/// Subpart draws before a part is declared occluded.
pub const MAX_DRAG_ATTEMPTS: usize = 8;

/// A sampled drag together with the surface point that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct DragSample {
    pub subpart: usize,
    /// The point in the subpart's rest frame.
    pub rest_point: Vec2,
    pub drag: Drag,
}

/// Projected trajectory of one surface point over every frame of an animation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragTrack {
    /// The moving part this drag describes.
    pub part: usize,
    /// The subtree member the point lies on.
    pub subpart: usize,
    pub rest_point: Vec2,
    pub points: Vec<PixelPoint>,
}

impl DragTrack {
    pub fn from_sample<'a, I>(part: usize, sample: &DragSample, camera: &Similarity2, poses: I) -> Self
    where
        I: IntoIterator<Item = &'a [Rigid2]>,
    {
        let points = poses
            .into_iter()
            .map(|p| {
                let (h, w) = camera.project(p[sample.subpart].apply(sample.rest_point));
                PixelPoint::new(h, w)
            })
            .collect();
        Self { part, subpart: sample.subpart, rest_point: sample.rest_point, points }
    }

    /// The drag taking frame `from` to frame `to`.
    pub fn drag(&self, from: usize, to: usize) -> Result<Drag> {
        let last = self.points.len().saturating_sub(1);
        for n in [from, to] {
            if n > last {
                return Err(Error::Index { index: n, last });
            }
        }
        Ok(Drag::new(self.points[from], self.points[to]))
    }
}

/// Samples one drag for moving part `part` between two states.
///
/// A subpart is drawn uniformly from the subtree of `part`; one of its visible
/// pixels in the start frame is drawn with probability proportional to the
/// on-screen displacement of the pixel centre between the two states, and the
/// drag source is jittered uniformly inside that pixel.
pub fn sample_drag_for_part<R: RngCore + ?Sized>(
    tree: &KinematicTree,
    part: usize,
    states: (&ArticulationState, &ArticulationState),
    camera: &Similarity2,
    opts: RenderOptions,
    rng: &mut R,
) -> Result<DragSample> {
    let start = pose_parts(tree, states.0.values())?;
    let end = pose_parts(tree, states.1.values())?;
    let colors: Vec<Rgb> = alloc::vec![[0.0; 3]; tree.len()];
    let labels = render_poses(tree, &start, &colors, camera, opts)?.labels;
    sample_with_labels(tree, part, (&start, &end), camera, &labels, rng)
}

pub(crate) fn sample_with_labels<R: RngCore + ?Sized>(
    tree: &KinematicTree,
    part: usize,
    poses: (&[Rigid2], &[Rigid2]),
    camera: &Similarity2,
    labels: &LabelMap,
    rng: &mut R,
) -> Result<DragSample> {
    if part >= tree.len() {
        return Err(Error::Index { index: part, last: tree.len() - 1 });
    }
    let subtree = tree.subtree(part);
    for _ in 0..MAX_DRAG_ATTEMPTS {
        let sub = subtree[rng.random_range(0..subtree.len())];
        let (start, end) = (poses.0[sub], poses.1[sub]);
        let to_rest = start.inverse();
        let mut pixels = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for r in 0..labels.height {
            for c in 0..labels.width {
                if labels.part_at(r, c) != Some(sub) {
                    continue;
                }
                let (pr, pc) = (r as f64 + 0.5, c as f64 + 0.5);
                let rest = to_rest.apply(camera.unproject(pr, pc));
                let (er, ec) = camera.project(end.apply(rest));
                let disp = libm::hypot(er - pr, ec - pc);
                if disp > 0.0 {
                    total += disp;
                    pixels.push((r, c));
                    cumulative.push(total);
                }
            }
        }
        if pixels.is_empty() {
            continue;
        }
        let u = rng.random::<f64>() * total;
        let k = cumulative.partition_point(|&c| c <= u).min(pixels.len() - 1);
        let (r, c) = pixels[k];
        let rect = tree.part(sub).rect;
        let mut point = (r as f64 + 0.5, c as f64 + 0.5);
        for _ in 0..4 {
            let cand = (r as f64 + rng.random::<f64>(), c as f64 + rng.random::<f64>());
            if rect.contains(to_rest.apply(camera.unproject(cand.0, cand.1))) {
                point = cand;
                break;
            }
        }
        let rest_point = to_rest.apply(camera.unproject(point.0, point.1));
        let (er, ec) = camera.project(end.apply(rest_point));
        return Ok(DragSample {
            subpart: sub,
            rest_point,
            drag: Drag::new(PixelPoint::new(point.0, point.1), PixelPoint::new(er, ec)),
        });
    }
    Err(Error::Occluded { part, attempts: MAX_DRAG_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::world::tree::tests::{door_with_handle, part};
    use crate::world::tree::{Joint, PartLabel, Rect};
    use alloc::vec;

    fn cam() -> Similarity2 {
        Similarity2::new(30.0, 0.15, Vec2::new(32.0, 32.0)).unwrap()
    }

    /// Unproject the source, undo the start pose, apply the end pose, project.
    fn reprojection_error(tree: &KinematicTree, s: &DragSample, a0: &[f64], a1: &[f64], cam: &Similarity2) -> f64 {
        let p0 = pose_parts(tree, a0).unwrap();
        let p1 = pose_parts(tree, a1).unwrap();
        let world = cam.unproject(s.drag.source.h, s.drag.source.w);
        let rest = p0[s.subpart].inverse().apply(world);
        let (r, c) = cam.project(p1[s.subpart].apply(rest));
        libm::hypot(r - s.drag.termination.h, c - s.drag.termination.w)
    }

    #[test]
    fn reprojection_consistency() {
        let tree = door_with_handle();
        let mut rng = stream(1, 0, 0);
        let (a0, a1) = (ArticulationState(vec![0.0, 0.1, 0.0]), ArticulationState(vec![0.0, 0.8, 0.6]));
        for _ in 0..200 {
            let s = sample_drag_for_part(&tree, 1, (&a0, &a1), &cam(), RenderOptions::square(64), &mut rng).unwrap();
            assert!(s.subpart == 1 || s.subpart == 2);
            assert!(reprojection_error(&tree, &s, &a0.0, &a1.0, &cam()) < 1e-9);
            let (r, c) = (s.drag.source.h as usize, s.drag.source.w as usize);
            let labels = render_poses(&tree, &pose_parts(&tree, &a0.0).unwrap(), &[[0.0; 3]; 3], &cam(), RenderOptions::square(64))
                .unwrap()
                .labels;
            assert_eq!(labels.part_at(r, c), Some(s.subpart));
        }
    }

    #[test]
    fn fully_hidden_part_is_occluded() {
        // The drawer sits entirely behind a later-painted cover.
        let r = Rect::new(Vec2::new(-0.5, -0.5), Vec2::new(0.5, 0.5));
        let tree = KinematicTree::new(vec![
            part("body", PartLabel::Body, r, Joint::Fixed, None),
            part("drawer", PartLabel::Drawer, Rect::new(Vec2::new(-0.2, -0.2), Vec2::new(0.2, 0.2)), Joint::Prismatic { axis: Vec2::new(1.0, 0.0), travel: 0.1 }, Some(0)),
            part("cover", PartLabel::Body, r, Joint::Fixed, Some(0)),
        ])
        .unwrap();
        let st = (ArticulationState(vec![0.0; 3]), ArticulationState(vec![0.0, 1.0, 0.0]));
        let err = sample_drag_for_part(&tree, 1, (&st.0, &st.1), &cam(), RenderOptions::square(64), &mut stream(0, 0, 0));
        assert_eq!(err, Err(Error::Occluded { part: 1, attempts: MAX_DRAG_ATTEMPTS }));
    }

    #[test]
    fn prismatic_sampling_is_uniform_over_visible_pixels() {
        let body = Rect::new(Vec2::new(-0.6, -0.6), Vec2::new(0.6, 0.6));
        let tree = KinematicTree::new(vec![
            part("body", PartLabel::Body, body, Joint::Fixed, None),
            part("drawer", PartLabel::Drawer, Rect::new(Vec2::new(-0.4, -0.2), Vec2::new(0.4, 0.2)), Joint::Prismatic { axis: Vec2::new(1.0, 0.0), travel: 0.3 }, Some(0)),
        ])
        .unwrap();
        let st = (ArticulationState(vec![0.0; 2]), ArticulationState(vec![0.0, 1.0]));
        let mut rng = stream(2, 0, 0);
        let mut left = 0;
        let n = 4000;
        for _ in 0..n {
            let s = sample_drag_for_part(&tree, 1, (&st.0, &st.1), &cam(), RenderOptions::square(64), &mut rng).unwrap();
            let rest = s.rest_point;
            assert!((s.drag.termination.w - s.drag.source.w - 0.3 * 30.0 * libm::cos(0.15)).abs() < 1e-9);
            left += usize::from(rest.x < 0.0);
        }
        let frac = left as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.04, "{frac}");
    }

    #[test]
    fn track_drags_follow_frames() {
        let tree = door_with_handle();
        let a: Vec<Vec<f64>> = (0..4).map(|n| vec![0.0, n as f64 / 3.0, 0.0]).collect();
        let poses: Vec<Vec<Rigid2>> = a.iter().map(|s| pose_parts(&tree, s).unwrap()).collect();
        let (s0, s1) = (ArticulationState(a[0].clone()), ArticulationState(a[3].clone()));
        let s = sample_drag_for_part(&tree, 1, (&s0, &s1), &cam(), RenderOptions::square(64), &mut stream(3, 0, 0)).unwrap();
        let track = DragTrack::from_sample(1, &s, &cam(), poses.iter().map(|p| p.as_slice()));
        assert_eq!(track.points.len(), 4);
        let d = track.drag(0, 3).unwrap();
        assert!((d.termination.h - s.drag.termination.h).abs() < 1e-9);
        assert_eq!(track.drag(3, 0).unwrap(), d.reversed());
        assert!(track.drag(0, 4).is_err());
    }
}
