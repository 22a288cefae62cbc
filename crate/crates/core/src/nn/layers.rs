//! Parameterized layers. Each holds only [`ParamId`]s; values live in a
//! [`ParamStore`] and are fetched onto the tape at every forward pass.

use rand::Rng;

use super::conv::ConvGeometry;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Mode, ParamId, ParamStore, Tape, Tensor, Var};

/// Running-average momentum of batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Uniform He initialization for a kernel with `fan_in` inputs.
pub fn he_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| S::lit(rng.gen_range(-bound..bound)))
}

/// Dense convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    /// A 3x3 "same" convolution.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_kernel(store, name, cin, cout, 3, ConvGeometry::SAME, rng)
    }

    pub fn with_kernel<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), he_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { weight, bias, geometry })
    }

    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        x.conv2d(tape.param(store, self.weight), Some(tape.param(store, self.bias)), self.geometry)
    }
}

/// Batch normalization with running statistics kept as store buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels]))?,
        })
    }

    /// Normalizes with batch statistics on a training tape (queueing the
    /// running-average update) and with running statistics otherwise.
    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>, relu: bool) -> Result<Var<'t, S>> {
        let (gamma, beta) = (tape.param(store, self.gamma), tape.param(store, self.beta));
        let eps = S::lit(BN_EPS);
        match tape.mode() {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, eps, relu)?;
                let m = S::lit(BN_MOMENTUM);
                let blend = |old: &Tensor<S>, new: &[S]| Tensor::from_fn(old.shape(), |i| (S::one() - m) * old.data()[i] + m * new[i]);
                tape.push_stat_update(self.running_mean, blend(store.value(self.running_mean), &stats.mean));
                tape.push_stat_update(self.running_var, blend(store.value(self.running_var), &stats.var_unbiased));
                Ok(y)
            }
            Mode::Eval => x.batch_norm_eval(gamma, beta, store.value(self.running_mean), store.value(self.running_var), eps, relu),
        }
    }
}

/// `relu(bn(conv(x)))`, the repeating unit of every stream.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self { conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, rng)?, bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout)? })
    }

    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let y = self.conv.forward(tape, store, x)?;
        self.bn.forward(tape, store, y, true)
    }
}

/// 3x3 deformable convolution weights; offsets are supplied per call.
#[derive(Clone, Debug)]
pub struct DeformConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DeformConv2d {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: store.add(&format!("{name}.weight"), he_uniform(&[cout, cin, 3, 3], cin * 9, rng))?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>, offsets: Var<'t, S>) -> Result<Var<'t, S>> {
        x.deform_conv2d(offsets, tape.param(store, self.weight), Some(tape.param(store, self.bias)))
    }
}

/// Query, key and value projections (1x1 convolutions, `d -> d`) around
/// [`Var::attention`].
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
}

impl Attention {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let one = ConvGeometry { stride: 1, padding: 0 };
        Ok(Self {
            query: Conv2d::with_kernel(store, &format!("{name}.query"), d, d, 1, one, rng)?,
            key: Conv2d::with_kernel(store, &format!("{name}.key"), d, d, 1, one, rng)?,
            value: Conv2d::with_kernel(store, &format!("{name}.value"), d, d, 1, one, rng)?,
        })
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        q: Var<'t, S>,
        k: Var<'t, S>,
        v: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let q = self.query.forward(tape, store, q)?;
        let k = self.key.forward(tape, store, k)?;
        let v = self.value.forward(tape, store, v)?;
        q.attention(k, v)
    }
}
