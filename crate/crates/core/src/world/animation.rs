use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invalid;
use crate::rng::uniform;
use crate::world::tree::KinematicTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AnimationKind {
    /// Stationary parts closed, moving parts go from closed to open.
    Type1,
    /// Stationary parts at random states, moving parts between random states.
    Type2,
}

impl TryFrom<u8> for AnimationKind {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(AnimationKind::Type1),
            2 => Ok(AnimationKind::Type2),
            _ => Err(invalid!("animation type must be 1 or 2, got {v}")),
        }
    }
}

impl From<AnimationKind> for u8 {
    fn from(k: AnimationKind) -> u8 {
        match k {
            AnimationKind::Type1 => 1,
            AnimationKind::Type2 => 2,
        }
    }
}

/// Openness `A_i` of every part, `0` closed and `1` open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArticulationState(pub Vec<f64>);

impl ArticulationState {
    pub fn closed(parts: usize) -> Self {
        Self(alloc::vec![0.0; parts])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|a| (0.0..=1.0).contains(a)) {
            Ok(())
        } else {
            Err(invalid!("articulation values must lie in [0, 1]"))
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Animation over frames `0..=last_frame`; constants are stored per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationSpec {
    pub kind: AnimationKind,
    /// Moving parts `s`, ascending.
    pub moving: Vec<usize>,
    /// `N`; the animation has `N + 1` frames.
    pub last_frame: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl AnimationSpec {
    pub fn frames(&self) -> usize {
        self.last_frame + 1
    }

    pub fn is_moving(&self, part: usize) -> bool {
        self.moving.binary_search(&part).is_ok()
    }

    pub fn validate(&self, parts: usize) -> Result<()> {
        if self.last_frame == 0 {
            return Err(invalid!("an animation needs at least two frames"));
        }
        if self.moving.is_empty() {
            return Err(invalid!("moving set is empty"));
        }
        if self.moving.windows(2).any(|w| w[0] >= w[1]) || self.moving.iter().any(|&i| i >= parts) {
            return Err(invalid!("moving set must be ascending part ids"));
        }
        if self.a.len() != parts || self.b.len() != parts || self.c.len() != parts {
            return Err(invalid!("per-part constants must have {parts} entries"));
        }
        let ok = self.a.iter().all(|v| (0.0..=0.25).contains(v))
            && self.b.iter().all(|v| (0.75..=1.0).contains(v))
            && self.c.iter().all(|v| (0.0..=1.0).contains(v));
        if ok {
            Ok(())
        } else {
            Err(invalid!("animation constants out of range"))
        }
    }
}

/// Draws an animation type (p = 0.5), a uniform non-empty subset of the
/// movable parts and the per-part constants `a ~ U(0, 1/4)`, `b ~ U(3/4, 1)`,
/// `c ~ U(0, 1)`.
pub fn sample_animation<R: RngCore + ?Sized>(tree: &KinematicTree, last_frame: usize, rng: &mut R) -> Result<AnimationSpec> {
    let movable = tree.movable_parts();
    if movable.is_empty() {
        return Err(Error::InvalidTree("tree has no movable part".into()));
    }
    if last_frame == 0 {
        return Err(invalid!("an animation needs at least two frames"));
    }
    let kind = if rng.random_bool(0.5) { AnimationKind::Type1 } else { AnimationKind::Type2 };
    // Uniform over the 2^m - 1 non-empty subsets via rejection of the empty one.
    let moving = loop {
        let chosen: Vec<usize> = movable.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if !chosen.is_empty() {
            break chosen;
        }
    };
    let n = tree.len();
    let a = (0..n).map(|_| uniform(rng, 0.0, 0.25)).collect();
    let b = (0..n).map(|_| uniform(rng, 0.75, 1.0)).collect();
    let c = (0..n).map(|_| uniform(rng, 0.0, 1.0)).collect();
    Ok(AnimationSpec { kind, moving, last_frame, a, b, c })
}

/// Closed-form articulation state at frame `n`.
pub fn articulation_at(spec: &AnimationSpec, n: usize) -> Result<ArticulationState> {
    if n > spec.last_frame {
        return Err(Error::Index { index: n, last: spec.last_frame });
    }
    let big_n = spec.last_frame as f64;
    let nf = n as f64;
    let values = (0..spec.a.len())
        .map(|i| {
            let moving = spec.is_moving(i);
            match (spec.kind, moving) {
                (AnimationKind::Type1, true) => nf / big_n,
                (AnimationKind::Type1, false) => 0.0,
                (AnimationKind::Type2, true) if n == 0 => spec.a[i],
                (AnimationKind::Type2, true) if n == spec.last_frame => spec.b[i],
                (AnimationKind::Type2, true) => ((big_n - nf) * spec.a[i] + nf * spec.b[i]) / big_n,
                (AnimationKind::Type2, false) => spec.c[i],
            }
        })
        .collect();
    Ok(ArticulationState(values))
}

/// Shuffles and truncates a moving set to at most `capacity` entries.
pub(crate) fn subsample_parts<R: RngCore + ?Sized>(parts: &[usize], capacity: usize, rng: &mut R) -> Vec<usize> {
    let mut out = parts.to_vec();
    if out.len() > capacity {
        out.shuffle(rng);
        out.truncate(capacity);
        out.sort_unstable();
    }
    out
}
