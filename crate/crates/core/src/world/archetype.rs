use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::invalid;
use crate::rng::uniform;
use crate::world::tree::{Joint, KinematicTree, Part, PartLabel, Rect};

/// Procedural object families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    CabinetDrawers,
    CabinetDoors,
    BoxLid,
    OvenHandle,
    Desk,
    Fridge,
    Bucket,
    Microwave,
    Toolbox,
    Safe,
}

impl Archetype {
    pub const ALL: [Archetype; 10] = [
        Archetype::CabinetDrawers,
        Archetype::CabinetDoors,
        Archetype::BoxLid,
        Archetype::OvenHandle,
        Archetype::Desk,
        Archetype::Fridge,
        Archetype::Bucket,
        Archetype::Microwave,
        Archetype::Toolbox,
        Archetype::Safe,
    ];

    /// Families used for training and in-distribution evaluation.
    pub const TRAINING: [Archetype; 8] = [
        Archetype::CabinetDrawers,
        Archetype::CabinetDoors,
        Archetype::BoxLid,
        Archetype::OvenHandle,
        Archetype::Desk,
        Archetype::Fridge,
        Archetype::Bucket,
        Archetype::Microwave,
    ];

    /// Families never seen in training (out-of-distribution evaluation).
    pub const HELD_OUT: [Archetype; 2] = [Archetype::Toolbox, Archetype::Safe];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::CabinetDrawers => "cabinet_drawers",
            Archetype::CabinetDoors => "cabinet_doors",
            Archetype::BoxLid => "box_lid",
            Archetype::OvenHandle => "oven_handle",
            Archetype::Desk => "desk",
            Archetype::Fridge => "fridge",
            Archetype::Bucket => "bucket",
            Archetype::Microwave => "microwave",
            Archetype::Toolbox => "toolbox",
            Archetype::Safe => "safe",
        }
    }

    /// Builds a random instance centred near the origin, roughly one world unit across.
    pub fn build<R: RngCore + ?Sized>(self, rng: &mut R) -> KinematicTree {
        let mut b = Builder::default();
        match self {
            Archetype::CabinetDrawers => {
                let (w, h) = (uniform(rng, 0.8, 1.1), uniform(rng, 0.9, 1.2));
                let body = b.body(w, h);
                let count = rng.random_range(2..=3);
                let m = 0.06;
                let slot = (h - m) / count as f64;
                let travel = uniform(rng, 0.3, 0.5) * w;
                for k in 0..count {
                    let y0 = -h / 2.0 + m + k as f64 * slot;
                    let r = rect(-w / 2.0 + m, y0, w / 2.0 - m, y0 + slot - m);
                    let d = b.add("drawer", PartLabel::Drawer, r, Joint::Prismatic { axis: Vec2::new(1.0, 0.0), travel }, body);
                    b.handle_right(d, r);
                }
            }
            Archetype::CabinetDoors => {
                let (w, h) = (uniform(rng, 0.8, 1.1), uniform(rng, 0.9, 1.2));
                let body = b.body(w, h);
                let m = 0.05;
                let (x0, x1, y0, y1) = (-w / 2.0 + m, w / 2.0 - m, -h / 2.0 + m, h / 2.0 - m);
                if rng.random_bool(0.5) {
                    let r = rect(x0, y0, x1, y1);
                    let d = b.add("door", PartLabel::Door, r, revolute(Vec2::new(x0, 0.0), -deg(rng, 60.0, 100.0)), body);
                    b.handle_right(d, r);
                } else {
                    let mid = 0.0;
                    let left = rect(x0, y0, mid - m / 4.0, y1);
                    let right = rect(mid + m / 4.0, y0, x1, y1);
                    let d = b.add("door_left", PartLabel::Door, left, revolute(Vec2::new(x0, 0.0), -deg(rng, 60.0, 100.0)), body);
                    b.handle_right(d, left);
                    let d = b.add("door_right", PartLabel::Door, right, revolute(Vec2::new(x1, 0.0), deg(rng, 60.0, 100.0)), body);
                    b.handle_left(d, right);
                }
            }
            Archetype::BoxLid => {
                let (w, h) = (uniform(rng, 0.9, 1.3), uniform(rng, 0.5, 0.8));
                let body = b.body(w, h);
                let t = uniform(rng, 0.08, 0.14);
                let r = rect(-w / 2.0, -h / 2.0 - t, w / 2.0, -h / 2.0);
                let lid = b.add("lid", PartLabel::Lid, r, revolute(Vec2::new(-w / 2.0, -h / 2.0), -deg(rng, 60.0, 110.0)), body);
                let knob = rect(w / 2.0 - 0.12, -h / 2.0 - t - 0.05, w / 2.0 - 0.04, -h / 2.0 - t);
                b.add("knob", PartLabel::Handle, knob, Joint::Fixed, lid);
            }
            Archetype::OvenHandle => {
                let (w, h) = (uniform(rng, 0.9, 1.2), uniform(rng, 0.8, 1.0));
                let body = b.body(w, h);
                let m = 0.05;
                let top = -h / 2.0 + 0.35 * h;
                let r = rect(-w / 2.0 + m, top, w / 2.0 - m, h / 2.0 - m);
                let door = b.add("door", PartLabel::Door, r, revolute(Vec2::new(r.min.x, r.max.y), -deg(rng, 50.0, 85.0)), body);
                let hw = 0.6 * r.width();
                let handle = rect(-hw / 2.0, top + 0.05, hw / 2.0, top + 0.1);
                b.add("handle", PartLabel::Handle, handle, revolute(Vec2::new(-hw / 2.0, top + 0.075), deg(rng, 20.0, 45.0)), door);
                for k in 0..2 {
                    let cx = -w / 4.0 + k as f64 * w / 2.0;
                    let knob = Rect::from_center(Vec2::new(cx, -h / 2.0 + 0.17 * h), 0.1, 0.1);
                    b.add("knob", PartLabel::Body, knob, Joint::Fixed, body);
                }
            }
            Archetype::Desk => {
                let (w, h) = (uniform(rng, 1.0, 1.3), uniform(rng, 0.7, 0.9));
                let slab = 0.1;
                let body = b.add("top", PartLabel::Body, rect(-w / 2.0, -h / 2.0, w / 2.0, -h / 2.0 + slab), Joint::Fixed, usize::MAX);
                let leg = 0.08;
                b.add("leg_left", PartLabel::Body, rect(-w / 2.0 + 0.03, -h / 2.0 + slab, -w / 2.0 + 0.03 + leg, h / 2.0), Joint::Fixed, body);
                b.add("leg_right", PartLabel::Body, rect(w / 2.0 - 0.03 - leg, -h / 2.0 + slab, w / 2.0 - 0.03, h / 2.0), Joint::Fixed, body);
                let dw = uniform(rng, 0.35, 0.5) * w;
                let r = rect(-dw / 2.0, -h / 2.0 + slab, dw / 2.0, -h / 2.0 + slab + 0.22);
                let travel = uniform(rng, 0.25, 0.4);
                let d = b.add("drawer", PartLabel::Drawer, r, Joint::Prismatic { axis: Vec2::new(0.0, 1.0), travel }, body);
                let handle = Rect::from_center(Vec2::new(0.0, r.max.y - 0.05), 0.16, 0.05);
                b.add("handle", PartLabel::Handle, handle, Joint::Fixed, d);
            }
            Archetype::Fridge => {
                let (w, h) = (uniform(rng, 0.6, 0.8), uniform(rng, 1.2, 1.5));
                let body = b.body(w, h);
                let m = 0.04;
                let split = -h / 2.0 + uniform(rng, 0.3, 0.4) * h;
                let upper = rect(-w / 2.0 + m, -h / 2.0 + m, w / 2.0 - m, split - m / 2.0);
                let lower = rect(-w / 2.0 + m, split + m / 2.0, w / 2.0 - m, h / 2.0 - m);
                for (name, r) in [("freezer_door", upper), ("door", lower)] {
                    let d = b.add(name, PartLabel::Door, r, revolute(r.min, -deg(rng, 45.0, 90.0)), body);
                    b.handle_right(d, r);
                }
            }
            Archetype::Bucket => {
                let (w, h) = (uniform(rng, 0.7, 0.9), uniform(rng, 0.6, 0.8));
                let body = b.body(w, h);
                let y = -h / 2.0 - uniform(rng, 0.2, 0.3);
                let r = rect(-w / 2.0, y - 0.03, w / 2.0, y + 0.03);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                b.add("handle", PartLabel::Handle, r, revolute(Vec2::new(-w / 2.0, y), sign * deg(rng, 30.0, 70.0)), body);
                b.add("ear", PartLabel::Body, rect(-w / 2.0 - 0.04, y, -w / 2.0 + 0.04, -h / 2.0), Joint::Fixed, body);
            }
            Archetype::Microwave => {
                let (w, h) = (uniform(rng, 1.0, 1.3), uniform(rng, 0.6, 0.8));
                let body = b.body(w, h);
                let m = 0.05;
                let split = w / 2.0 - 0.28 * w;
                let r = rect(-w / 2.0 + m, -h / 2.0 + m, split, h / 2.0 - m);
                let d = b.add("door", PartLabel::Door, r, revolute(Vec2::new(r.min.x, 0.0), -deg(rng, 60.0, 100.0)), body);
                b.handle_right(d, r);
                b.add("panel", PartLabel::Body, rect(split + m, -h / 2.0 + m, w / 2.0 - m, h / 2.0 - m), Joint::Fixed, body);
            }
            Archetype::Toolbox => {
                let (w, h) = (uniform(rng, 0.9, 1.2), uniform(rng, 0.6, 0.8));
                let body = b.body(w, h);
                let t = 0.1;
                let r = rect(-w / 2.0, -h / 2.0 - t, w / 2.0, -h / 2.0);
                let lid = b.add("lid", PartLabel::Lid, r, revolute(Vec2::new(-w / 2.0, -h / 2.0), -deg(rng, 60.0, 110.0)), body);
                b.add("grip", PartLabel::Handle, rect(-0.15, -h / 2.0 - t - 0.06, 0.15, -h / 2.0 - t), Joint::Fixed, lid);
                let m = 0.06;
                let dr = rect(-w / 2.0 + m, 0.0, w / 2.0 - m, h / 2.0 - m);
                let d = b.add("drawer", PartLabel::Drawer, dr, Joint::Prismatic { axis: Vec2::new(1.0, 0.0), travel: uniform(rng, 0.3, 0.45) * w }, body);
                b.handle_right(d, dr);
            }
            Archetype::Safe => {
                let s = uniform(rng, 0.8, 1.1);
                let body = b.body(s, s);
                let m = 0.07;
                let r = rect(-s / 2.0 + m, -s / 2.0 + m, s / 2.0 - m, s / 2.0 - m);
                let door = b.add("door", PartLabel::Door, r, revolute(Vec2::new(r.min.x, 0.0), -deg(rng, 60.0, 100.0)), body);
                let wheel = Rect::from_center(r.center() + Vec2::new(0.1, 0.0), 0.26, 0.06);
                b.add("wheel", PartLabel::Handle, wheel, revolute(wheel.center(), deg(rng, 45.0, 90.0)), door);
            }
        }
        KinematicTree::new(b.parts).expect("archetype builders produce valid trees")
    }
}

impl FromStr for Archetype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| invalid!("unknown archetype {s:?}"))
    }
}

impl core::fmt::Display for Archetype {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
    Rect::new(Vec2::new(x0, y0), Vec2::new(x1, y1))
}

fn revolute(pivot: Vec2, open_angle: f64) -> Joint {
    Joint::Revolute { pivot, closed_angle: 0.0, open_angle }
}

fn deg<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    uniform(rng, lo, hi) * PI / 180.0
}

#[derive(Default)]
struct Builder {
    parts: Vec<Part>,
}

impl Builder {
    fn body(&mut self, w: f64, h: f64) -> usize {
        self.add("body", PartLabel::Body, rect(-w / 2.0, -h / 2.0, w / 2.0, h / 2.0), Joint::Fixed, usize::MAX)
    }

    /// Appends a part; `parent == usize::MAX` marks the root.
    fn add(&mut self, name: &str, label: PartLabel, rect: Rect, joint: Joint, parent: usize) -> usize {
        let name: String = if self.parts.iter().any(|p| p.name == name) { format!("{name}_{}", self.parts.len()) } else { name.into() };
        self.parts.push(Part { name, label, rect, joint, parent: (parent != usize::MAX).then_some(parent) });
        self.parts.len() - 1
    }

    fn handle_right(&mut self, parent: usize, r: Rect) {
        let hr = rect(r.max.x - 0.09, r.center().y - 0.06, r.max.x - 0.04, r.center().y + 0.06);
        self.add("handle", PartLabel::Handle, hr, Joint::Fixed, parent);
    }

    fn handle_left(&mut self, parent: usize, r: Rect) {
        let hr = rect(r.min.x + 0.04, r.center().y - 0.06, r.min.x + 0.09, r.center().y + 0.06);
        self.add("handle", PartLabel::Handle, hr, Joint::Fixed, parent);
    }
}
