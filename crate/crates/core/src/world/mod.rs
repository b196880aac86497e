//! Procedural 2D articulated world.
//!
//! Objects are kinematic trees of axis-aligned rectangles expressed in a shared
//! rest frame (x right, y down). Joints move whole subtrees; a similarity
//! camera maps the world onto the pixel grid and a painter's-order
//! rasterizer produces images, per-part silhouettes and a visibility label map.

mod animation;
mod archetype;
mod camera;
mod drags;
mod record;
mod render;
pub(crate) mod tree;

pub use animation::{articulation_at, sample_animation, AnimationKind, AnimationSpec, ArticulationState};
pub use archetype::Archetype;
pub use camera::{sample_camera, world_bounds, Bounds};
pub use drags::{sample_drag_for_part, DragSample, DragTrack, MAX_DRAG_ATTEMPTS};
pub use record::{generate_animation, AnimationRecord, JointTruth, Palette, WorldConfig};
pub use render::{palette_color, random_palette, render, render_poses, RenderOptions, RenderedFrame, Rgb, BACKGROUND};
pub use tree::{pose_parts, Joint, KinematicTree, Part, PartLabel, Rect};
