//! Procedural multi-view dataset: a six-part mannequin with a fixed UV atlas,
//! randomly painted textures, and eight rendered views per identity.

mod atlas;
pub mod disk;
mod face;
mod identity;
mod mannequin;
mod paint;
mod sample;

pub use atlas::{AtlasLayout, Part, Rect, NUM_PARTS};
pub use disk::{load_identity, load_manifest, render_dataset, rerender_error, Manifest, StoredIdentity, StoredView, ViewRecord};
pub use face::{face_bank, face_mask, face_seeds, FaceBank, DEFAULT_FACE_BANK_SIZE};
pub use identity::{generate_identity, jittered_pose, render_view, texel_coverage, view_camera, SyntheticIdentity, View, NUM_VIEWS};
pub use mannequin::{build_mannequin, Proportions};
pub use paint::{FacePaint, Paint, PartPaint, Pattern, Rgb};
pub use sample::{load_split, SampleIdentity, SampleView};
