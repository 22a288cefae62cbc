use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::atlas::AtlasLayout;
use super::disk::IDENTITY_SEED_LIMIT;
use super::paint::Paint;
use crate::render::TEXTURE_SIZE;
use crate::tensor::Tensor;

pub const DEFAULT_FACE_BANK_SIZE: usize = 20;

/// Synthetic face textures used as the face-loss reference.
#[derive(Clone, Debug)]
pub struct FaceBank {
    pub seeds: Vec<u64>,
    /// `(3, 128, 128)` full textures; only the face rectangle is meaningful.
    pub textures: Vec<Tensor<f64>>,
    /// `(1, 1, 128, 128)` indicator of the face rectangle.
    pub mask: Tensor<f64>,
}

/// Seeds in the reserved range `[IDENTITY_SEED_LIMIT, 2 * IDENTITY_SEED_LIMIT)`.
pub fn face_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| IDENTITY_SEED_LIMIT | (rng.gen::<u64>() % IDENTITY_SEED_LIMIT)).collect()
}

pub fn face_mask(atlas: &AtlasLayout) -> Tensor<f64> {
    let n = TEXTURE_SIZE;
    let data = atlas.face_mask().into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[1, 1, n, n], data).expect("mask buffer matches its shape")
}

/// Paints `n` textures from reserved seeds, with the identity painter.
pub fn face_bank(seed: u64, n: usize) -> FaceBank {
    let atlas = AtlasLayout::default();
    let seeds = face_seeds(seed, n);
    let textures = seeds.iter().map(|&s| Paint::random(&mut ChaCha8Rng::seed_from_u64(s)).texture(&atlas)).collect();
    FaceBank { seeds, textures, mask: face_mask(&atlas) }
}

impl FaceBank {
    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }

    /// Texture `i` multiplied by the face mask, `(1, 3, 128, 128)`.
    pub fn masked(&self, i: usize) -> Tensor<f64> {
        let n = TEXTURE_SIZE * TEXTURE_SIZE;
        let t = &self.textures[i];
        Tensor::from_fn(&[1, 3, TEXTURE_SIZE, TEXTURE_SIZE], |k| t.data()[k] * self.mask.data()[k % n])
    }
}
