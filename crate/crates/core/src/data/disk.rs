//! On-disk dataset layout:
//!
//! ```text
//! <out>/dataset.json
//! <out>/<id>/texture_gt.png
//! <out>/<id>/mesh.json
//! <out>/<id>/views/<k>/image.png     RGB, network range mapped to 0..255
//! <out>/<id>/views/<k>/parts.png     gray, (label + 1) * 40, background 0
//! <out>/<id>/views/<k>/camera.json   {"camera": {...}, "pose": {...}}
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::atlas::NUM_PARTS;
use super::identity::{generate_identity, render_view, SyntheticIdentity, View, NUM_VIEWS};
use crate::error::{Error, Result};
use crate::render::io::{quantize_tensor, read_json, read_png, read_raw_png, write_gray_png, write_json, write_png};
use crate::render::{Camera, Mesh, Pose, IMAGE_HEIGHT, IMAGE_WIDTH, TEXTURE_SIZE};
use crate::tensor::Tensor;

/// Identity seeds are drawn below this bound; the face bank uses the range above.
pub const IDENTITY_SEED_LIMIT: u64 = 1 << 62;
/// Fraction of identities held out for testing.
pub const TEST_FRACTION: f64 = 0.2;
/// Gray level step between part labels in `parts.png`.
pub const PART_LEVEL: u8 = 40;

const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub id: String,
    pub seed: u64,
}

/// Contents of `dataset.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub views: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub texture_size: usize,
    pub identities: Vec<IdentityEntry>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}, expected train or test"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub camera: Camera,
    pub pose: Pose,
}

/// Seeds of the `n` identities of a dataset, all below [`IDENTITY_SEED_LIMIT`].
pub fn identity_seeds(dataset_seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed);
    (0..n).map(|_| rng.gen::<u64>() % IDENTITY_SEED_LIMIT).collect()
}

/// Train/test split by identity index: a seeded shuffle, with
/// `round(n * TEST_FRACTION)` (at least one when `n >= 2`) held out.
pub fn split_indices(dataset_seed: u64, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(dataset_seed ^ SPLIT_STREAM));
    let n_test = if n >= 2 { ((n as f64 * TEST_FRACTION).round() as usize).max(1) } else { 0 };
    let (mut test, mut train) = (order[..n_test].to_vec(), order[n_test..].to_vec());
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Gray part map: `(label + 1) * PART_LEVEL` on covered pixels, 0 elsewhere.
pub fn part_bytes(view: &View) -> Vec<u8> {
    view.raster.part.iter().map(|p| p.map_or(0, |l| (l + 1) * PART_LEVEL)).collect()
}

/// Writes one identity below `dir`.
pub fn write_identity(dir: &Path, identity: &SyntheticIdentity) -> Result<()> {
    create_dir(dir)?;
    write_png(&dir.join("texture_gt.png"), &identity.texture)?;
    write_json(&dir.join("mesh.json"), &identity.mesh)?;
    for view in &identity.views {
        let vdir = dir.join("views").join(view.index.to_string());
        create_dir(&vdir)?;
        write_png(&vdir.join("image.png"), &view.image)?;
        write_gray_png(&vdir.join("parts.png"), &part_bytes(view), view.raster.width, view.raster.height)?;
        write_json(&vdir.join("camera.json"), &ViewRecord { camera: view.camera.clone(), pose: view.pose.clone() })?;
    }
    Ok(())
}

/// Generates `n` identities from `seed` and writes them, with the manifest,
/// below `out`. Identities are generated in parallel; the bytes depend only
/// on `(seed, n)`.
pub fn render_dataset(n: usize, seed: u64, out: &Path) -> Result<Manifest> {
    create_dir(out)?;
    let seeds = identity_seeds(seed, n);
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    let results: Vec<Result<IdentityEntry>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let seeds = &seeds;
                scope.spawn(move || {
                    (w..seeds.len())
                        .step_by(workers)
                        .map(|i| {
                            let identity = generate_identity(seeds[i]);
                            write_identity(&out.join(&identity.id), &identity)?;
                            Ok((i, IdentityEntry { id: identity.id, seed: identity.seed }))
                        })
                        .collect::<Vec<Result<(usize, IdentityEntry)>>>()
                })
            })
            .collect();
        let mut all: Vec<Result<(usize, IdentityEntry)>> = handles.into_iter().flat_map(|h| h.join().expect("dataset worker panicked")).collect();
        all.sort_by_key(|r| r.as_ref().map_or(0, |(i, _)| *i));
        all.into_iter().map(|r| r.map(|(_, e)| e)).collect()
    });
    let identities = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (train, test) = split_indices(seed, n);
    let ids = |idx: Vec<usize>| idx.into_iter().map(|i| identities[i].id.clone()).collect();
    let manifest = Manifest {
        seed,
        views: NUM_VIEWS,
        image_height: IMAGE_HEIGHT,
        image_width: IMAGE_WIDTH,
        texture_size: TEXTURE_SIZE,
        train: ids(train),
        test: ids(test),
        identities,
    };
    write_json(&out.join("dataset.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    read_json(&root.join("dataset.json"))
}

/// A view as stored on disk.
#[derive(Clone, Debug)]
pub struct StoredView {
    pub index: usize,
    pub record: ViewRecord,
    /// `(3, H, W)` decoded image.
    pub image: Tensor<f64>,
    /// Per-pixel part label, `None` on background.
    pub labels: Vec<Option<u8>>,
}

#[derive(Clone, Debug)]
pub struct StoredIdentity {
    pub id: String,
    pub texture: Tensor<f64>,
    pub mesh: Mesh,
    pub views: Vec<StoredView>,
}

impl StoredIdentity {
    /// Re-renders every stored view from the stored mesh, camera, pose and
    /// texture.
    pub fn rerender(&self) -> Result<Vec<View>> {
        self.views.iter().map(|v| render_view(&self.mesh, &self.texture, v.index, v.record.pose.clone(), v.record.camera.clone())).collect()
    }
}

fn decode_labels(path: &Path) -> Result<Vec<Option<u8>>> {
    let raw = read_raw_png(path)?;
    if raw.channels != 1 {
        return Err(Error::format("parts.png", format!("{}: expected grayscale", path.display())));
    }
    raw.bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(None),
            b if b % PART_LEVEL == 0 && ((b / PART_LEVEL) as usize) <= NUM_PARTS => Ok(Some(b / PART_LEVEL - 1)),
            b => Err(Error::format("parts.png", format!("{}: invalid level {b}", path.display()))),
        })
        .collect()
}

pub fn load_identity(root: &Path, id: &str) -> Result<StoredIdentity> {
    let dir = root.join(id);
    let texture = read_png(&dir.join("texture_gt.png"))?;
    let mesh: Mesh = read_json(&dir.join("mesh.json"))?;
    mesh.validate()?;
    let views = (0..NUM_VIEWS)
        .map(|k| {
            let vdir = dir.join("views").join(k.to_string());
            Ok(StoredView {
                index: k,
                record: read_json(&vdir.join("camera.json"))?,
                image: read_png(&vdir.join("image.png"))?,
                labels: decode_labels(&vdir.join("parts.png"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StoredIdentity { id: id.to_string(), texture, mesh, views })
}

/// Largest absolute difference, over all views, between the stored image
/// and a fresh 8-bit rendering of the stored scene.
pub fn rerender_error(identity: &StoredIdentity) -> Result<f64> {
    let mut worst = 0.0f64;
    for (stored, fresh) in identity.views.iter().zip(identity.rerender()?) {
        worst = worst.max(stored.image.max_abs_diff(&quantize_tensor(&fresh.image))?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_complete() {
        for n in [1, 2, 5, 10, 37] {
            let (train, test) = split_indices(4, n);
            assert_eq!(train.len() + test.len(), n);
            assert!(train.iter().all(|i| !test.contains(i)));
            if n >= 2 {
                assert!(!test.is_empty());
            }
        }
        assert_eq!(split_indices(10, 10).1.len(), 2);
    }

    #[test]
    fn identity_seeds_stay_below_the_reserved_range() {
        assert!(identity_seeds(0, 1000).iter().all(|&s| s < IDENTITY_SEED_LIMIT));
        assert_eq!(identity_seeds(3, 4), identity_seeds(3, 4));
        assert_eq!(identity_seeds(3, 4)[..2], identity_seeds(3, 2)[..]);
    }

    #[test]
    fn unknown_split_is_a_config_error() {
        let m =
            Manifest { seed: 0, views: 8, image_height: 128, image_width: 64, texture_size: 128, identities: vec![], train: vec![], test: vec![] };
        assert!(matches!(m.split("val"), Err(Error::Config(_))));
    }
}
