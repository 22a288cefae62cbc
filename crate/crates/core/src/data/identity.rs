use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::atlas::{AtlasLayout, Part, NUM_PARTS};
use super::mannequin::{build_mannequin, Proportions};
use super::paint::Paint;
use crate::render::{
    rasterize, render_part_masks, render_texture, texel_surface, texel_visibility, Camera, Mesh, Pose, RasterMap, BACKGROUND, IMAGE_HEIGHT,
    IMAGE_WIDTH,
};
use crate::tensor::{Tape, Tensor};

/// Views per identity, at azimuths `0, 45, ..., 315` degrees.
pub const NUM_VIEWS: usize = 8;
pub const CAMERA_DISTANCE: f64 = 4.0;
pub const FOCAL_LENGTH: f64 = 230.0;
pub const MAX_ELEVATION_DEG: f64 = 10.0;
/// Bounds on the limb swing (about x) and outward abduction (about z). Their
/// composition stays below 20 degrees of total rotation.
pub const MAX_SWING_DEG: f64 = 15.0;
pub const MAX_ABDUCTION_DEG: f64 = 12.0;

/// One rendered view of an identity.
#[derive(Clone, Debug)]
pub struct View {
    pub index: usize,
    pub pose: Pose,
    pub camera: Camera,
    pub raster: RasterMap,
    /// `(3, 128, 64)` rendering of the ground-truth texture.
    pub image: Tensor<f64>,
    /// `(6, 128, 64)` binary part masks.
    pub parts: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticIdentity {
    pub id: String,
    pub seed: u64,
    pub paint: Paint,
    /// `(3, 128, 128)` ground truth in network range.
    pub texture: Tensor<f64>,
    pub mesh: Mesh,
    pub views: Vec<View>,
}

/// Limb pose for one view. Torso and head stay at rest.
pub fn jittered_pose<R: Rng>(rng: &mut R) -> Pose {
    let mut pose = Pose::rest(NUM_PARTS);
    for part in [Part::LeftArm, Part::RightArm, Part::LeftLeg, Part::RightLeg] {
        let outward = if matches!(part, Part::LeftArm | Part::LeftLeg) { 1.0 } else { -1.0 };
        let swing = rng.gen_range(-MAX_SWING_DEG..=MAX_SWING_DEG).to_radians();
        let abduction = outward * rng.gen_range(0.0..=MAX_ABDUCTION_DEG).to_radians();
        pose.angles[part as usize] = [swing, abduction];
    }
    pose
}

pub fn view_camera(index: usize, elevation_deg: f64) -> Camera {
    Camera {
        azimuth: (45.0 * index as f64).to_radians(),
        elevation: elevation_deg.to_radians(),
        distance: CAMERA_DISTANCE,
        focal: FOCAL_LENGTH,
        height: IMAGE_HEIGHT,
        width: IMAGE_WIDTH,
    }
}

/// Renders one view of `texture` `(3, 128, 128)`.
pub fn render_view(mesh: &Mesh, texture: &Tensor<f64>, index: usize, pose: Pose, camera: Camera) -> crate::Result<View> {
    let raster = rasterize(mesh, &pose, &camera)?;
    let tape = Tape::<f64>::inference();
    let batch = texture.reshape(&[1, 3, texture.shape()[1], texture.shape()[2]])?;
    let image = render_texture(tape.constant(batch), &[&raster], BACKGROUND)?.value();
    let image = image.reshape(&[3, raster.height, raster.width])?;
    let parts = render_part_masks(&raster, NUM_PARTS);
    Ok(View { index, pose, camera, raster, image, parts })
}

/// Deterministically builds an identity from `seed`: paint, body shape, and
/// eight views with elevation and limb jitter.
pub fn generate_identity(seed: u64) -> SyntheticIdentity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atlas = AtlasLayout::default();
    let paint = Paint::random(&mut rng);
    let texture = paint.texture(&atlas);
    let proportions = Proportions { height: rng.gen_range(0.95..1.04), girth: rng.gen_range(0.9..1.1) };
    let mesh = build_mannequin(&atlas, proportions);
    let views = (0..NUM_VIEWS)
        .map(|k| {
            let camera = view_camera(k, rng.gen_range(-MAX_ELEVATION_DEG..=MAX_ELEVATION_DEG));
            let pose = jittered_pose(&mut rng);
            render_view(&mesh, &texture, k, pose, camera).expect("generated views are well formed")
        })
        .collect();
    SyntheticIdentity { id: format!("{seed:016x}"), seed, paint, texture, mesh, views }
}

/// Fraction of atlas texels that land on the surface and are visible in at
/// least one view.
pub fn texel_coverage(identity: &SyntheticIdentity) -> crate::Result<f64> {
    let surface = texel_surface(&identity.mesh);
    let mut seen = vec![false; surface.len()];
    for view in &identity.views {
        let visible = texel_visibility(&identity.mesh, &surface, &view.pose, &view.camera, &view.raster)?;
        seen.iter_mut().zip(visible).for_each(|(s, v)| *s |= v);
    }
    let mapped = surface.iter().filter(|s| s.is_some()).count();
    Ok(seen.iter().filter(|&&s| s).count() as f64 / mapped.max(1) as f64)
}
