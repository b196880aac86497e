//! Core algorithms for drag-conditioned part-level image generation.
//!
//! Everything in this crate is pure and deterministic: drag encodings, the
//! procedural articulated world (kinematics, articulation schedules,
//! rasterization, ground-truth drags), render-and-compare motion search,
//! feature clustering for moving-part segmentation and image metrics. It is
//! `no_std` and only needs an allocator; IO, networks and services live in
//! the companion crates.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod drag;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod motion;
pub mod rng;
pub mod schedule;
pub mod segment;
pub mod world;

pub use drag::{encode_drags, encode_point, encoding_pyramid, Drag, DragEncoding, DragSet, GridSize, PixelPoint};
pub use error::{Error, Result};
pub use geometry::{Rigid2, Similarity2, Vec2};
pub use image::{BinaryMask, ImageGrid, LabelMap, Normalization};
pub use schedule::NoiseSchedule;

/// Default drag capacity `N` of datasets and models.
pub const DEFAULT_DRAG_CAPACITY: usize = 5;

pub(crate) trait Square {
    fn sq(self) -> Self;
}

impl Square for f64 {
    fn sq(self) -> f64 {
        self * self
    }
}
