use rand::Rng;

use super::backbone::HEAD_CHANNELS;
use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm2d, Conv2d, ConvBnRelu, DeformConv2d};
use crate::nn::{flow_to_offsets, replication_kernel, ConvGeometry, OFFSET_CHANNELS};
use crate::render::TEXTURE_SIZE;
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Var};

/// First and third refinement layer: deformable, or a plain convolution
/// applied to the flow-warped input for the convolutional ablation.
#[derive(Clone, Debug)]
enum Sampler {
    Deformable(DeformConv2d),
    Plain(Conv2d),
}

impl Sampler {
    fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>, offsets: Option<Var<'t, S>>) -> Result<Var<'t, S>> {
        match (self, offsets) {
            (Sampler::Deformable(d), Some(o)) => d.forward(tape, store, x, o),
            (Sampler::Plain(c), _) => c.forward(tape, store, x),
            (Sampler::Deformable(_), None) => Err(Error::contract("refinement", "deformable layers need an offset field")),
        }
    }
}

/// Refinement module over the `128 x 128` UV grid: sampler (4 -> w), concat
/// with the backbone's 6 raw predictions, conv (w + 6 -> w), sampler
/// (w -> w), conv (w -> w), head (w -> 6). Batch norm and ReLU follow every
/// layer but the head. Both deformable layers share one offset field derived
/// from the backbone flow.
#[derive(Clone, Debug)]
pub(crate) struct Refinement {
    pub offset_conv: Option<Conv2d>,
    first: Sampler,
    first_bn: BatchNorm2d,
    second: ConvBnRelu,
    third: Sampler,
    third_bn: BatchNorm2d,
    fourth: ConvBnRelu,
    pub head: Conv2d,
}

impl Refinement {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, w: usize, deformable: bool, rng: &mut impl Rng) -> Result<Self> {
        let offset_conv = if deformable {
            let conv = Conv2d::with_kernel(store, "refine.offset", 2, OFFSET_CHANNELS, 3, ConvGeometry::SAME, rng)?;
            store.get_mut(conv.weight).value = replication_kernel();
            Some(conv)
        } else {
            None
        };
        let mut sampler = |store: &mut ParamStore<S>, name: &str, cin: usize| -> Result<Sampler> {
            Ok(if deformable {
                Sampler::Deformable(DeformConv2d::new(store, name, cin, w, rng)?)
            } else {
                Sampler::Plain(Conv2d::new(store, name, cin, w, rng)?)
            })
        };
        let first = sampler(store, "refine.l1", 4)?;
        let third = sampler(store, "refine.l3", w)?;
        Ok(Self {
            offset_conv,
            first,
            first_bn: BatchNorm2d::new(store, "refine.l1.bn", w)?,
            second: ConvBnRelu::new(store, "refine.l2", w + HEAD_CHANNELS, w, rng)?,
            third,
            third_bn: BatchNorm2d::new(store, "refine.l3.bn", w)?,
            fourth: ConvBnRelu::new(store, "refine.l4", w, w, rng)?,
            head: Conv2d::new(store, "refine.head", w, HEAD_CHANNELS, rng)?,
        })
    }

    /// Offset field for the deformable layers, `(B, 18, 128, 128)`.
    pub fn offsets<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        flow: Var<'t, S>,
        in_size: (usize, usize),
    ) -> Result<Option<Var<'t, S>>> {
        self.offset_conv
            .as_ref()
            .map(|c| flow_to_offsets(flow, in_size, (TEXTURE_SIZE, TEXTURE_SIZE), tape.param(store, c.weight), Some(tape.param(store, c.bias))))
            .transpose()
    }

    /// `input` is the image with its part map, `(B, 4, H, W)`; `flow` the
    /// backbone flow after tanh and `preds` its raw 6-channel output.
    pub fn forward<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        input: Var<'t, S>,
        flow: Var<'t, S>,
        preds: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let (_, _, h, w) = input.dims4()?;
        let offsets = self.offsets(tape, store, flow, (h, w))?;
        self.forward_with_offsets(tape, store, input, flow, offsets, preds)
    }

    /// Forward pass with an explicit offset field (`None` for the plain
    /// variant, which warps `input` by `flow` instead).
    pub fn forward_with_offsets<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        input: Var<'t, S>,
        flow: Var<'t, S>,
        offsets: Option<Var<'t, S>>,
        preds: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let x = match self.first {
            Sampler::Deformable(_) => input,
            Sampler::Plain(_) => input.grid_sample(flow)?,
        };
        let x = self.first.forward(tape, store, x, offsets)?;
        let x = self.first_bn.forward(tape, store, x, true)?;
        let x = self.second.forward(tape, store, Var::concat_channels(&[x, preds])?)?;
        let x = self.third.forward(tape, store, x, offsets)?;
        let x = self.third_bn.forward(tape, store, x, true)?;
        let x = self.fourth.forward(tape, store, x)?;
        self.head.forward(tape, store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::identity_flow;
    use crate::tensor::{Mode, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_offsets_on_equal_sizes_reduce_to_plain_convolutions() {
        let (w, n) = (3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut deform_store = ParamStore::<f64>::new();
        let deform = Refinement::new(&mut deform_store, w, true, &mut rng).unwrap();
        let mut plain_store = ParamStore::<f64>::new();
        let plain = Refinement::new(&mut plain_store, w, false, &mut rng).unwrap();
        for (_, p) in deform_store.iter() {
            if let Some(id) = plain_store.id(&p.name) {
                plain_store.get_mut(id).value = p.value.clone();
            }
        }

        let run = |r: &Refinement, store: &ParamStore<f64>, deformable: bool| {
            let tape = Tape::new(Mode::Train);
            let input = tape.constant(Tensor::from_fn(&[1, 4, n, n], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0));
            let preds = tape.constant(Tensor::from_fn(&[1, HEAD_CHANNELS, n, n], |i| ((i * 13) % 7) as f64 / 7.0));
            let flow = tape.constant(identity_flow(1, n, n));
            let offsets = deformable.then(|| tape.constant(Tensor::zeros(&[1, OFFSET_CHANNELS, n, n])));
            r.forward_with_offsets(&tape, store, input, flow, offsets, preds).unwrap().value()
        };
        let (a, b) = (run(&deform, &deform_store, true), run(&plain, &plain_store, false));
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn deformable_layers_without_offsets_are_a_contract_error() {
        let mut store = ParamStore::<f64>::new();
        let refine = Refinement::new(&mut store, 2, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4, 4]));
        let err = refine.forward_with_offsets(
            &tape,
            &store,
            x,
            tape.constant(Tensor::zeros(&[1, 2, 4, 4])),
            None,
            tape.constant(Tensor::zeros(&[1, 6, 4, 4])),
        );
        assert!(matches!(err, Err(Error::Contract { .. })));
    }
}
