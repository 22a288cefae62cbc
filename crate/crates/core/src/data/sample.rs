use std::path::Path;

use super::atlas::NUM_PARTS;
use super::disk::{load_identity, load_manifest, Manifest, StoredIdentity};
use crate::error::{Error, Result};
use crate::render::{part_index_map, rasterize, render_part_masks, Camera, Mesh, Pose, RasterMap};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One stored view with everything the network and the losses consume.
#[derive(Clone, Debug)]
pub struct SampleView<S: Scalar> {
    pub index: usize,
    pub camera: Camera,
    pub pose: Pose,
    pub raster: RasterMap,
    /// Stored image, `(1, 3, H, W)` in `[-1, 1]`.
    pub image: Tensor<S>,
    /// Part-index map `(1, 1, H, W)` in `[0, 1]`.
    pub parts: Tensor<S>,
    /// Binary part masks `(1, P, H, W)`.
    pub masks: Tensor<S>,
}

/// An identity ready for training or evaluation.
#[derive(Clone, Debug)]
pub struct SampleIdentity<S: Scalar> {
    pub id: String,
    pub mesh: Mesh,
    /// Ground-truth texture, `(1, 3, 128, 128)`.
    pub texture: Tensor<S>,
    pub views: Vec<SampleView<S>>,
}

impl<S: Scalar> SampleView<S> {
    /// Builds a view from an image and a freshly rasterized geometry.
    pub fn new(index: usize, mesh: &Mesh, pose: Pose, camera: Camera, image: &Tensor<f64>) -> Result<Self> {
        let raster = rasterize(mesh, &pose, &camera)?;
        let (h, w) = (raster.height, raster.width);
        if image.shape() != [3, h, w] {
            return Err(Error::shape("sample view", format!("image {:?} for a {h}x{w} camera", image.shape())));
        }
        Ok(Self {
            index,
            image: image.cast::<S>().reshape(&[1, 3, h, w])?,
            parts: part_index_map(&raster, NUM_PARTS),
            masks: render_part_masks::<S>(&raster, NUM_PARTS).reshape(&[1, NUM_PARTS, h, w])?,
            camera,
            pose,
            raster,
        })
    }
}

impl<S: Scalar> SampleIdentity<S> {
    pub fn from_stored(stored: &StoredIdentity) -> Result<Self> {
        let views = stored
            .views
            .iter()
            .map(|v| SampleView::new(v.index, &stored.mesh, v.record.pose.clone(), v.record.camera.clone(), &v.image))
            .collect::<Result<Vec<_>>>()?;
        let n = stored.texture.shape()[1];
        Ok(Self { id: stored.id.clone(), mesh: stored.mesh.clone(), texture: stored.texture.cast().reshape(&[1, 3, n, n])?, views })
    }

    pub fn load(root: &Path, id: &str) -> Result<Self> {
        Self::from_stored(&load_identity(root, id)?)
    }
}

/// Loads the manifest and every identity of `split` (`train` or `test`).
pub fn load_split<S: Scalar>(root: &Path, split: &str) -> Result<(Manifest, Vec<SampleIdentity<S>>)> {
    let manifest = load_manifest(root)?;
    let ids = manifest.split(split)?.to_vec();
    let identities = ids.iter().map(|id| SampleIdentity::load(root, id)).collect::<Result<Vec<_>>>()?;
    Ok((manifest, identities))
}
