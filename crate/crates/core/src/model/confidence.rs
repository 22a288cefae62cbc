use rand::Rng;

use crate::error::Result;
use crate::nn::layers::{Conv2d, ConvBnRelu};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Var};

/// Lower bound of the predicted scale.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Six-layer encoder-decoder over the input image with additive skips and
/// a 1-channel softplus head: the per-pixel scale of the reconstruction
/// likelihood. Channel plan `w, w | 2w | 2w | 2w | w`.
#[derive(Clone, Debug)]
pub(crate) struct ConfidenceNet {
    layers: [ConvBnRelu; 6],
    pub head: Conv2d,
}

impl ConfidenceNet {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, w: usize, rng: &mut impl Rng) -> Result<Self> {
        let plan = [(3, w), (w, w), (w, 2 * w), (2 * w, 2 * w), (2 * w, 2 * w), (2 * w, w)];
        let mut layers = Vec::with_capacity(6);
        for (i, (a, b)) in plan.into_iter().enumerate() {
            layers.push(ConvBnRelu::new(store, &format!("confidence.l{}", i + 1), a, b, rng)?);
        }
        Ok(Self { layers: layers.try_into().expect("six layers"), head: Conv2d::new(store, "confidence.head", w, 1, rng)? })
    }

    /// `(B, 3, H, W)` image to `(B, 1, H, W)` scale, at least [`SIGMA_FLOOR`].
    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, image: Var<'t, S>) -> Result<Var<'t, S>> {
        let l = &self.layers;
        let x1 = l[0].forward(tape, store, image)?;
        let full = l[1].forward(tape, store, x1)?;
        let half = l[2].forward(tape, store, full.downsample2x()?)?;
        let quarter = l[3].forward(tape, store, half.downsample2x()?)?;
        let up = l[4].forward(tape, store, quarter.upsample2x()?.add(half)?)?;
        let out = l[5].forward(tape, store, up.upsample2x()?)?.add(full)?;
        Ok(self.head.forward(tape, store, out)?.softplus().clamp_min(S::lit(SIGMA_FLOOR)))
    }
}
