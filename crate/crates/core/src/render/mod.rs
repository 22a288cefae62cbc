//! Fixed-geometry rendering: rigid-part meshes, a pinhole camera, a
//! z-buffer rasterizer and texture lookup through the resulting UV map.
//!
//! Visibility is decided once per view and carries no gradient; gradients
//! reach the texture through bilinear sampling only.

mod camera;
pub mod io;
mod mesh;
mod raster;
mod texture;

pub use camera::{Camera, Projected, NEAR};
pub use mesh::{Mesh, Pose, Vec3};
pub use raster::{rasterize, texel_surface, texel_visibility, RasterMap, TEXTURE_SIZE, VISIBILITY_TOLERANCE};
pub use texture::{foreground_mask, part_index_map, raster_flow, render_part_masks, render_texture, BACKGROUND};

/// Rendered image height and width.
pub const IMAGE_HEIGHT: usize = 128;
pub const IMAGE_WIDTH: usize = 64;
