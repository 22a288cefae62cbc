use rand::Rng;

use crate::error::Result;
use crate::nn::layers::{Attention, Conv2d, ConvBnRelu};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Var};

/// Six-layer encoder-decoder. Channel plan `w, w | 2w | 2w | 2w | w` with a
/// 2x downsampling after layers 2 and 3 and a 2x upsampling after layers 4
/// and 5. Decoder layers see the upsampled features concatenated with the
/// encoder features of the same scale.
#[derive(Clone, Debug)]
pub(crate) struct Stream {
    layers: [ConvBnRelu; 6],
}

/// Encoder features at full, half and quarter scale.
pub(crate) struct Encoded<'t, S: Scalar> {
    pub full: Var<'t, S>,
    pub half: Var<'t, S>,
    pub quarter: Var<'t, S>,
}

/// Decoder features of an image stream at the three attention scales.
pub(crate) struct Decoded<'t, S: Scalar> {
    pub quarter: Var<'t, S>,
    pub half: Var<'t, S>,
    pub full: Var<'t, S>,
}

impl Stream {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cin: usize, w: usize, rng: &mut impl Rng) -> Result<Self> {
        let plan = [(cin, w), (w, w), (w, 2 * w), (2 * w, 2 * w), (4 * w, 2 * w), (3 * w, w)];
        let mut layers = Vec::with_capacity(6);
        for (i, (a, b)) in plan.into_iter().enumerate() {
            layers.push(ConvBnRelu::new(store, &format!("{name}.l{}", i + 1), a, b, rng)?);
        }
        Ok(Self { layers: layers.try_into().expect("six layers") })
    }

    pub fn encode<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>) -> Result<Encoded<'t, S>> {
        let x = self.layers[0].forward(tape, store, x)?;
        let full = self.layers[1].forward(tape, store, x)?;
        let half = self.layers[2].forward(tape, store, full.downsample2x()?)?;
        let quarter = self.layers[3].forward(tape, store, half.downsample2x()?)?;
        Ok(Encoded { full, half, quarter })
    }

    pub fn decode_half<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, quarter: Var<'t, S>, skip: Var<'t, S>) -> Result<Var<'t, S>> {
        self.layers[4].forward(tape, store, Var::concat_channels(&[quarter.upsample2x()?, skip])?)
    }

    pub fn decode_full<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, half: Var<'t, S>, skip: Var<'t, S>) -> Result<Var<'t, S>> {
        self.layers[5].forward(tape, store, Var::concat_channels(&[half.upsample2x()?, skip])?)
    }

    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>) -> Result<Decoded<'t, S>> {
        let e = self.encode(tape, store, x)?;
        let half = self.decode_half(tape, store, e.quarter, e.half)?;
        let full = self.decode_full(tape, store, half, e.full)?;
        Ok(Decoded { quarter: e.quarter, half, full })
    }
}

/// Attention backbone. The query stream encodes the fixed UV colour map;
/// key and value streams encode the image with the part map and with its
/// pixel coordinates. At each scale an attention block reads the image
/// streams and is added to the query decoder; the finest scale attends over
/// 2x pooled tokens.
#[derive(Clone, Debug)]
pub(crate) struct Backbone {
    query: Stream,
    key: Stream,
    value: Stream,
    attention: [Attention; 3],
    pub head: Conv2d,
}

/// Raw 6-channel prediction `(flow 2, rgb 3, mask 1)` before activations.
pub(crate) const HEAD_CHANNELS: usize = 6;

impl Backbone {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, w: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            query: Stream::new(store, "backbone.query", 3, w, rng)?,
            key: Stream::new(store, "backbone.key", 4, w, rng)?,
            value: Stream::new(store, "backbone.value", 5, w, rng)?,
            attention: [
                Attention::new(store, "backbone.attention.full", w, rng)?,
                Attention::new(store, "backbone.attention.half", 2 * w, rng)?,
                Attention::new(store, "backbone.attention.quarter", 2 * w, rng)?,
            ],
            head: Conv2d::new(store, "backbone.head", w, HEAD_CHANNELS, rng)?,
        })
    }

    /// `uv` is the `(B, 3, 128, 128)` query map, `key_in` the image with its
    /// part map and `value_in` the image with its coordinate grid.
    pub fn forward<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        uv: Var<'t, S>,
        key_in: Var<'t, S>,
        value_in: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let k = self.key.forward(tape, store, key_in)?;
        let v = self.value.forward(tape, store, value_in)?;
        let q = self.query.encode(tape, store, uv)?;
        let [att_full, att_half, att_quarter] = &self.attention;

        let quarter = q.quarter.add(att_quarter.forward(tape, store, q.quarter, k.quarter, v.quarter)?)?;
        let half = self.query.decode_half(tape, store, quarter, q.half)?;
        let half = half.add(att_half.forward(tape, store, half, k.half, v.half)?)?;
        let full = self.query.decode_full(tape, store, half, q.full)?;
        let pooled = att_full.forward(tape, store, full.downsample2x()?, k.full.downsample2x()?, v.full.downsample2x()?)?;
        let full = full.add(pooled.upsample2x()?)?;
        self.head.forward(tape, store, full)
    }
}
