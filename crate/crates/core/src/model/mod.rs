//! Texture estimation network: attention backbone, refinement module, mask
//! fusion and the confidence network used by the uncertainty loss.

mod backbone;
pub mod checkpoint;
mod confidence;
mod refine;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{IMAGE_HEIGHT, IMAGE_WIDTH, TEXTURE_SIZE};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use backbone::Backbone;
use confidence::ConfidenceNet;
use refine::Refinement;

pub use confidence::SIGMA_FLOOR;

/// Which refinement module follows the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Backbone only.
    None,
    /// Plain convolutions over the flow-warped input.
    Conv,
    Deformable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub refine: RefineMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("model width must be positive".into()));
        }
        Ok(())
    }
}

/// One branch's predictions over the UV grid.
#[derive(Clone, Copy)]
pub struct TextureOutput<'t, S: Scalar> {
    /// `(B, 2, 128, 128)`, tanh.
    pub flow: Var<'t, S>,
    /// `(B, 3, 128, 128)`, tanh.
    pub rgb: Var<'t, S>,
    /// `(B, 1, 128, 128)`, sigmoid.
    pub mask: Var<'t, S>,
    /// Fused texture, `(B, 3, 128, 128)`.
    pub texture: Var<'t, S>,
    /// Raw 6-channel head output before activations.
    pub raw: Var<'t, S>,
}

/// Final and intermediate predictions. Without refinement both are the
/// backbone output.
#[derive(Clone, Copy)]
pub struct Estimate<'t, S: Scalar> {
    pub output: TextureOutput<'t, S>,
    pub intermediate: TextureOutput<'t, S>,
    pub refined: bool,
}

/// `T = M * sample(I, F) + (1 - M) * T_rgb` with the mask shared by the
/// three colour channels.
pub fn mask_fusion<'t, S: Scalar>(rgb: Var<'t, S>, flow: Var<'t, S>, mask: Var<'t, S>, image: Var<'t, S>) -> Result<Var<'t, S>> {
    let m = mask.repeat_channels(3)?;
    let sampled = image.grid_sample(flow)?;
    let keep = m.neg().add_scalar(S::one());
    m.mul(sampled)?.add(keep.mul(rgb)?)
}

/// Fixed query colour map `(u, v, 0.5)` over the UV grid, `(B, 3, 128, 128)`,
/// with `u` along columns and `v` along rows, both in `[0, 1]`.
pub fn uv_encoding<S: Scalar>(batch: usize) -> Tensor<S> {
    let n = TEXTURE_SIZE;
    let s = (n - 1) as f64;
    Tensor::from_fn(&[batch, 3, n, n], |i| {
        let (c, p) = ((i / (n * n)) % 3, i % (n * n));
        S::lit(match c {
            0 => (p % n) as f64 / s,
            1 => (p / n) as f64 / s,
            _ => 0.5,
        })
    })
}

/// Normalized pixel coordinates `(x, y)` in `[-1, 1]`, `(B, 2, H, W)`.
pub fn coordinate_grid<S: Scalar>(batch: usize, h: usize, w: usize) -> Tensor<S> {
    Tensor::from_fn(&[batch, 2, h, w], |i| {
        let (c, p) = ((i / (h * w)) % 2, i % (h * w));
        S::lit(if c == 0 { 2.0 * (p % w) as f64 / (w - 1) as f64 - 1.0 } else { 2.0 * (p / w) as f64 / (h - 1) as f64 - 1.0 })
    })
}

fn split_head<'t, S: Scalar>(raw: Var<'t, S>, image: Var<'t, S>) -> Result<TextureOutput<'t, S>> {
    let flow = raw.slice_channels(0, 2)?.tanh();
    let rgb = raw.slice_channels(2, 3)?.tanh();
    let mask = raw.slice_channels(5, 1)?.sigmoid();
    let texture = mask_fusion(rgb, flow, mask, image)?;
    Ok(TextureOutput { flow, rgb, mask, texture, raw })
}

/// The full network with its parameters.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    backbone: Backbone,
    refine: Option<Refinement>,
    confidence: ConfidenceNet,
}

impl<S: Scalar> Model<S> {
    /// Builds a freshly initialized model; parameters depend only on
    /// `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = config.width;
        let backbone = Backbone::new(&mut store, w, &mut rng)?;
        let refine = match config.refine {
            RefineMode::None => None,
            RefineMode::Conv => Some(Refinement::new(&mut store, w, false, &mut rng)?),
            RefineMode::Deformable => Some(Refinement::new(&mut store, w, true, &mut rng)?),
        };
        let confidence = ConfidenceNet::new(&mut store, w, &mut rng)?;
        Ok(Self { config, store, backbone, refine, confidence })
    }

    /// Trainable parameters of the texture network (backbone and
    /// refinement), excluding the confidence network.
    pub fn texture_param_count(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.trainable && !p.name.starts_with("confidence.")).map(|(_, p)| p.value.numel()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.store.num_trainable()
    }

    fn check_inputs(image: &Var<'_, S>, parts: &Var<'_, S>) -> Result<usize> {
        let (b, c, h, w) = image.dims4()?;
        if (c, h, w) != (3, IMAGE_HEIGHT, IMAGE_WIDTH) {
            return Err(Error::contract("model", format!("image must be (B, 3, {IMAGE_HEIGHT}, {IMAGE_WIDTH}), got {:?}", image.shape())));
        }
        if parts.shape() != [b, 1, h, w] {
            return Err(Error::contract("model", format!("part map must be ({b}, 1, {h}, {w}), got {:?}", parts.shape())));
        }
        Ok(b)
    }

    /// Backbone predictions for `image` `(B, 3, 128, 64)` in `[-1, 1]` and
    /// the part-index map `parts` `(B, 1, 128, 64)` in `[0, 1]`.
    pub fn backbone_forward<'t>(&self, tape: &'t Tape<S>, image: Var<'t, S>, parts: Var<'t, S>) -> Result<TextureOutput<'t, S>> {
        let b = Self::check_inputs(&image, &parts)?;
        let uv = tape.constant(uv_encoding(b));
        let key_in = Var::concat_channels(&[image, parts])?;
        let value_in = Var::concat_channels(&[image, tape.constant(coordinate_grid(b, IMAGE_HEIGHT, IMAGE_WIDTH))])?;
        let raw = self.backbone.forward(tape, &self.store, uv, key_in, value_in)?;
        split_head(raw, image)
    }

    /// Refinement of backbone predictions; `None` without a refinement module.
    pub fn refinement_forward<'t>(
        &self,
        tape: &'t Tape<S>,
        image: Var<'t, S>,
        parts: Var<'t, S>,
        backbone: &TextureOutput<'t, S>,
    ) -> Result<Option<TextureOutput<'t, S>>> {
        let Some(refine) = &self.refine else { return Ok(None) };
        let input = Var::concat_channels(&[image, parts])?;
        let raw = refine.forward(tape, &self.store, input, backbone.flow, backbone.raw)?;
        split_head(raw, image).map(Some)
    }

    /// Final and intermediate predictions.
    pub fn estimate_texture<'t>(&self, tape: &'t Tape<S>, image: Var<'t, S>, parts: Var<'t, S>) -> Result<Estimate<'t, S>> {
        let intermediate = self.backbone_forward(tape, image, parts)?;
        Ok(match self.refinement_forward(tape, image, parts, &intermediate)? {
            Some(output) => Estimate { output, intermediate, refined: true },
            None => Estimate { output: intermediate, intermediate, refined: false },
        })
    }

    /// Per-pixel scale `(B, 1, H, W)` for the uncertainty loss.
    pub fn confidence_forward<'t>(&self, tape: &'t Tape<S>, image: Var<'t, S>) -> Result<Var<'t, S>> {
        let (_, c, _, _) = image.dims4()?;
        if c != 3 {
            return Err(Error::contract("confidence", format!("image must have 3 channels, got {c}")));
        }
        self.confidence.forward(tape, &self.store, image)
    }

    /// Offset field of the deformable layers for one input, `(B, 18, 128, 128)`.
    pub fn offsets<'t>(&self, tape: &'t Tape<S>, image: Var<'t, S>, parts: Var<'t, S>) -> Result<Option<Var<'t, S>>> {
        let Some(refine) = &self.refine else { return Ok(None) };
        let backbone = self.backbone_forward(tape, image, parts)?;
        refine.offsets(tape, &self.store, backbone.flow, (IMAGE_HEIGHT, IMAGE_WIDTH))
    }

    fn zero(&mut self, ids: [ParamId; 2]) {
        for id in ids {
            let p = self.store.get_mut(id);
            p.value = Tensor::zeros(p.value.shape());
        }
    }

    /// Zeroes the final prediction head.
    pub fn zero_head(&mut self) {
        let head = self.refine.as_ref().map_or(&self.backbone.head, |r| &r.head);
        self.zero([head.weight, head.bias]);
    }

    /// Zeroes the backbone head, which produces the intermediate predictions.
    pub fn zero_backbone_head(&mut self) {
        self.zero([self.backbone.head.weight, self.backbone.head.bias]);
    }

    pub fn zero_confidence_head(&mut self) {
        self.zero([self.confidence.head.weight, self.confidence.head.bias]);
    }

    /// Zeroes the offset convolution so every deformable tap sits on the
    /// base grid.
    pub fn zero_offsets(&mut self) {
        if let Some(conv) = self.refine.as_ref().and_then(|r| r.offset_conv.as_ref()) {
            self.zero([conv.weight, conv.bias]);
        }
    }
}
