use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::layers::he_uniform;
use crate::nn::ConvGeometry;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Output channels of the four stages.
pub const FEATURE_CHANNELS: [usize; 4] = [16, 32, 64, 128];
pub const FEATURE_SEED: u64 = 0x5eed_f00d;

/// Frozen random convolutional pyramid standing in for a re-identification
/// network. Each stage is a stride-2 `3 x 3` convolution followed by ReLU,
/// so a `128 x 64` image yields maps of `64 x 32` down to `8 x 4`.
///
/// Weights enter the tape as constants: gradients reach the input only.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<S: Scalar> {
    stages: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> FeatureExtractor<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let stages = FEATURE_CHANNELS
            .iter()
            .map(|&cout| {
                let w = he_uniform::<f64>(&[cout, cin, 3, 3], cin * 9, &mut rng).cast();
                cin = cout;
                (w, Tensor::zeros(&[cout]))
            })
            .collect();
        Self { stages }
    }

    /// Features of stages 1 to 4 for `x` `(B, 3, H, W)`.
    pub fn features<'t>(&self, tape: &'t Tape<S>, x: Var<'t, S>) -> Result<Vec<Var<'t, S>>> {
        let geom = ConvGeometry { stride: 2, padding: 1 };
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for (w, b) in &self.stages {
            h = h.conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), geom)?.relu();
            out.push(h);
        }
        Ok(out)
    }

    /// First-stage features only.
    pub fn first<'t>(&self, tape: &'t Tape<S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let (w, b) = &self.stages[0];
        Ok(x.conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), ConvGeometry { stride: 2, padding: 1 })?.relu())
    }
}

impl<S: Scalar> Default for FeatureExtractor<S> {
    fn default() -> Self {
        Self::new(FEATURE_SEED)
    }
}
