use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rigid2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    Body,
    Door,
    Drawer,
    Lid,
    Handle,
}

impl PartLabel {
    pub const ALL: [PartLabel; 5] = [PartLabel::Body, PartLabel::Door, PartLabel::Drawer, PartLabel::Lid, PartLabel::Handle];

    /// Labels that count as annotated movable parts.
    pub fn is_articulated(self) -> bool {
        !matches!(self, PartLabel::Body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Joint {
    Fixed,
    Revolute { pivot: Vec2, closed_angle: f64, open_angle: f64 },
    Prismatic { axis: Vec2, travel: f64 },
}

impl Joint {
    pub fn is_movable(&self) -> bool {
        !matches!(self, Joint::Fixed)
    }

    /// Transform of the joint at openness `a`, in the parent's frame.
    pub fn transform(&self, a: f64) -> Rigid2 {
        match *self {
            Joint::Fixed => Rigid2::IDENTITY,
            Joint::Revolute { pivot, closed_angle, open_angle } => {
                Rigid2::rotation_about(pivot, closed_angle + a * (open_angle - closed_angle))
            }
            Joint::Prismatic { axis, travel } => Rigid2::translation(axis * (a * travel)),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Joint::Fixed => Ok(()),
            Joint::Revolute { pivot, closed_angle, open_angle } => {
                if !pivot.is_finite() || !closed_angle.is_finite() || !open_angle.is_finite() {
                    return Err(Error::InvalidTree("non-finite revolute joint".into()));
                }
                if open_angle == closed_angle {
                    return Err(Error::InvalidTree("revolute joint with equal open and closed angles".into()));
                }
                Ok(())
            }
            Joint::Prismatic { axis, travel } => {
                if !travel.is_finite() || travel <= 0.0 {
                    return Err(Error::InvalidTree("prismatic travel must be positive".into()));
                }
                if !axis.is_finite() || (axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidTree("prismatic axis must be a unit vector".into()));
                }
                Ok(())
            }
        }
    }
}

/// Axis-aligned rectangle in the rest frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vec2, width: f64, height: f64) -> Self {
        let half = Vec2::new(width / 2.0, height / 2.0);
        Self { min: center - half, max: center + half }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    /// Half-open containment `[min, max)`.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x < self.max.x && p.y >= self.min.y && p.y < self.max.y
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [self.min, Vec2::new(self.max.x, self.min.y), self.max, Vec2::new(self.min.x, self.max.y)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub label: PartLabel,
    pub rect: Rect,
    pub joint: Joint,
    pub parent: Option<usize>,
}

/// Parts indexed by position; part `i`'s id is `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct KinematicTree {
    parts: Vec<Part>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawTree {
    parts: Vec<Part>,
}

impl TryFrom<RawTree> for KinematicTree {
    type Error = Error;
    fn try_from(raw: RawTree) -> Result<Self> {
        KinematicTree::new(raw.parts)
    }
}

impl From<KinematicTree> for RawTree {
    fn from(tree: KinematicTree) -> Self {
        RawTree { parts: tree.parts }
    }
}

impl KinematicTree {
    pub fn new(parts: Vec<Part>) -> Result<Self> {
        let n = parts.len();
        if n == 0 {
            return Err(Error::InvalidTree("tree has no parts".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parts[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(alloc::format!("expected one root, found {}", roots.len())));
        }
        let mut children = vec![Vec::new(); n];
        for (i, part) in parts.iter().enumerate() {
            part.joint.validate()?;
            if !(part.rect.width() > 0.0 && part.rect.height() > 0.0) {
                return Err(Error::InvalidTree(alloc::format!("part {i} has an empty rectangle")));
            }
            if let Some(p) = part.parent {
                if p >= n || p == i {
                    return Err(Error::InvalidTree(alloc::format!("part {i} has invalid parent {p}")));
                }
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![roots[0]];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(children[i].iter().rev());
        }
        if order.len() != n {
            return Err(Error::InvalidTree("tree contains a cycle or disconnected parts".into()));
        }
        Ok(Self { parts, children, order })
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn part(&self, i: usize) -> &Part {
        &self.parts[i]
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Pre-order traversal; parents always precede their children and are
    /// painted beneath them.
    pub fn paint_order(&self) -> &[usize] {
        &self.order
    }

    /// Parts with a non-fixed joint.
    pub fn movable_parts(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parts[i].joint.is_movable()).collect()
    }

    /// Whether some articulated-label part has a movable joint.
    pub fn has_articulated_part(&self) -> bool {
        self.parts.iter().any(|p| p.joint.is_movable() && p.label.is_articulated())
    }

    /// Part `i` and all of its descendants, in pre-order.
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(j) = stack.pop() {
            out.push(j);
            stack.extend(self.children[j].iter().rev());
        }
        out
    }

    /// Strict ancestors of `i`, nearest first.
    pub fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parts[i].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.parts[p].parent;
        }
        out
    }
}

/// World transform of every part: `T_i = T_parent(i) * J_i(A_i)`.
pub fn pose_parts(tree: &KinematicTree, openness: &[f64]) -> Result<Vec<Rigid2>> {
    if openness.len() != tree.len() {
        return Err(Error::Shape(alloc::format!("{} openness values for {} parts", openness.len(), tree.len())));
    }
    let mut poses = vec![Rigid2::IDENTITY; tree.len()];
    for &i in tree.paint_order() {
        let local = tree.part(i).joint.transform(openness[i]);
        poses[i] = match tree.part(i).parent {
            Some(p) => poses[p].compose(&local),
            None => local,
        };
    }
    Ok(poses)
}
