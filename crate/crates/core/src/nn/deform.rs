use super::conv::ConvGeometry;
use super::sample::{bilinear_zero, scatter_bilinear_zero};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Kernel taps of the 3x3 deformable convolution.
pub const TAPS: usize = 9;
/// Offset channels: `(dy, dx)` for each tap, in that order.
pub const OFFSET_CHANNELS: usize = 2 * TAPS;

/// Input-pixel position that output index `i` of `n_out` maps to when the
/// input axis has `n_in` pixels. Equal sizes give the identity.
pub fn base_coordinate(i: usize, n_in: usize, n_out: usize) -> f64 {
    (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Sampling position of tap `k` at output pixel `pix`.
    fn position<S: Scalar>(&self, offsets: &[S], k: usize, pix: usize) -> (S, S) {
        let p = self.ho * self.wo;
        let (i, j) = (pix / self.wo, pix % self.wo);
        let (dy, dx) = ((k / 3) as f64 - 1.0, (k % 3) as f64 - 1.0);
        let y = S::lit(base_coordinate(i, self.h, self.ho) + dy) + offsets[2 * k * p + pix];
        let x = S::lit(base_coordinate(j, self.w, self.wo) + dx) + offsets[(2 * k + 1) * p + pix];
        (x, y)
    }

    /// Sampled values for one batch element as a `(C*9, P)` matrix, plus the
    /// spatial derivatives of each sample when requested.
    fn gather<S: Scalar>(&self, x: &[S], offsets: &[S], cols: &mut [S], mut derivs: Option<(&mut [S], &mut [S])>) {
        let p = self.ho * self.wo;
        let hw = self.h * self.w;
        for k in 0..TAPS {
            for pix in 0..p {
                let (sx, sy) = self.position(offsets, k, pix);
                for c in 0..self.c {
                    let (v, ddx, ddy) = bilinear_zero(&x[c * hw..(c + 1) * hw], self.h, self.w, sx, sy);
                    let row = c * TAPS + k;
                    cols[row * p + pix] = v;
                    if let Some((gx, gy)) = derivs.as_mut() {
                        gx[row * p + pix] = ddx;
                        gy[row * p + pix] = ddy;
                    }
                }
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    /// 3x3 deformable convolution whose output grid is given by the offset
    /// field rather than by the input.
    ///
    /// For output pixel `(i, j)` the kernel is centred at
    /// [`base_coordinate`] of each axis; tap `k` at `(dy, dx)` samples the
    /// input bilinearly at `centre + (dy, dx) + offset_k`, reading zero
    /// outside the image.
    pub fn deform_conv2d(self, offsets: Var<'t, S>, weight: Var<'t, S>, bias: Option<Var<'t, S>>) -> Result<Var<'t, S>> {
        self.same_tape(&offsets, "deform_conv2d")?;
        self.same_tape(&weight, "deform_conv2d")?;
        let x = self.value();
        let off = offsets.value();
        let wt = weight.value();
        let (b, c, h, w) = x.dims4()?;
        let (ob, oc, ho, wo) = off.dims4()?;
        if oc != OFFSET_CHANNELS {
            return Err(Error::contract("deform_conv2d", format!("offsets need {OFFSET_CHANNELS} channels, got {oc}")));
        }
        if ob != b {
            return Err(Error::shape("deform_conv2d", format!("offset batch {ob} for input batch {b}")));
        }
        let [co, ci, 3, 3] = wt.shape()[..] else {
            return Err(Error::shape("deform_conv2d", format!("weight must be (out, in, 3, 3), got {:?}", wt.shape())));
        };
        if ci != c {
            return Err(Error::contract("deform_conv2d", format!("input has {c} channels, weight expects {ci}")));
        }
        if let Some(bv) = bias {
            self.same_tape(&bv, "deform_conv2d")?;
            if bv.shape() != [co] {
                return Err(Error::shape("deform_conv2d", format!("bias {:?} for {co} outputs", bv.shape())));
            }
        }
        let bias_value = bias.map(|v| v.value());
        let geo = Geometry { c, h, w, ho, wo };
        let (k, p) = (c * TAPS, ho * wo);
        let (xs, os) = (c * h * w, OFFSET_CHANNELS * p);
        let mut y = vec![S::zero(); b * co * p];
        let mut cols = vec![S::zero(); k * p];
        for bi in 0..b {
            geo.gather(&x.data()[bi * xs..(bi + 1) * xs], &off.data()[bi * os..(bi + 1) * os], &mut cols, None);
            let yb = &mut y[bi * co * p..(bi + 1) * co * p];
            if let Some(bv) = &bias_value {
                for (o, chunk) in yb.chunks_mut(p).enumerate() {
                    chunk.fill(bv.data()[o]);
                }
            }
            S::gemm(co, k, p, S::one(), wt.data(), (k, 1), &cols, (p, 1), S::one(), yb, (p, 1));
        }

        let mut inputs = vec![self, offsets, weight];
        inputs.extend(bias);
        let out = Tensor::from_parts(vec![b, co, ho, wo], y);
        Ok(self.tape.record(out, &inputs, move |g, need| {
            let mut dx = need[0].then(|| vec![S::zero(); b * xs]);
            let mut doff = need[1].then(|| vec![S::zero(); b * os]);
            let mut dw = need[2].then(|| vec![S::zero(); co * k]);
            let mut cols = vec![S::zero(); k * p];
            let mut gx = vec![S::zero(); k * p];
            let mut gy = vec![S::zero(); k * p];
            let mut dcols = vec![S::zero(); k * p];
            for bi in 0..b {
                let xb = &x.data()[bi * xs..(bi + 1) * xs];
                let ob = &off.data()[bi * os..(bi + 1) * os];
                let gb = &g[bi * co * p..(bi + 1) * co * p];
                geo.gather(xb, ob, &mut cols, Some((&mut gx, &mut gy)));
                if let Some(dw) = dw.as_mut() {
                    S::gemm(co, p, k, S::one(), gb, (p, 1), &cols, (1, p), S::one(), dw, (k, 1));
                }
                if dx.is_none() && doff.is_none() {
                    continue;
                }
                S::gemm(k, co, p, S::one(), wt.data(), (1, k), gb, (p, 1), S::zero(), &mut dcols, (p, 1));
                for tap in 0..TAPS {
                    for pix in 0..p {
                        let (sx, sy) = geo.position(ob, tap, pix);
                        let (mut acc_x, mut acc_y) = (S::zero(), S::zero());
                        for ch in 0..c {
                            let idx = (ch * TAPS + tap) * p + pix;
                            let d = dcols[idx];
                            acc_x += d * gx[idx];
                            acc_y += d * gy[idx];
                            if let Some(dx) = dx.as_mut() {
                                let plane = &mut dx[bi * xs + ch * h * w..bi * xs + (ch + 1) * h * w];
                                scatter_bilinear_zero(plane, h, w, sx, sy, d);
                            }
                        }
                        if let Some(doff) = doff.as_mut() {
                            doff[bi * os + 2 * tap * p + pix] += acc_y;
                            doff[bi * os + (2 * tap + 1) * p + pix] += acc_x;
                        }
                    }
                }
            }
            let mut grads = vec![dx, doff, dw];
            if need.len() > 3 {
                grads.push(need[3].then(|| {
                    let mut db = vec![S::zero(); co];
                    for (i, chunk) in g.chunks(p).enumerate() {
                        db[i % co] += chunk.iter().copied().sum();
                    }
                    db
                }));
            }
            grads
        }))
    }
}

/// Turns a normalized flow field over the output grid into raw per-pixel
/// offsets `(dx, dy)` in input pixels, relative to the deformable base grid.
///
/// The flow uses the same convention as [`Var::grid_sample`]: `-1` and `+1`
/// are the first and last input pixel centres.
pub fn flow_to_raw_offsets<'t, S: Scalar>(flow: Var<'t, S>, h_in: usize, w_in: usize) -> Result<Var<'t, S>> {
    let (b, two, ho, wo) = flow.dims4()?;
    if two != 2 {
        return Err(Error::contract("flow_to_offsets", format!("flow needs 2 channels, got {two}")));
    }
    let half = |n: usize| 0.5 * (n as f64 - 1.0);
    let scale = Tensor::new(&[2], vec![S::lit(half(w_in)), S::lit(half(h_in))])?;
    let shift = Tensor::from_fn(&[b, 2, ho, wo], |i| {
        let x = i % wo;
        let y = (i / wo) % ho;
        let base = if (i / (wo * ho)) % 2 == 0 { half(w_in) - base_coordinate(x, w_in, wo) } else { half(h_in) - base_coordinate(y, h_in, ho) };
        S::lit(base)
    });
    let tape = flow.tape();
    flow.mul_channel(tape.constant(scale))?.add(tape.constant(shift))
}

/// Full flow-to-offset transform: raw offsets followed by the 2-to-18
/// channel offset convolution. `out_size` is the intended deformable output
/// size and must match the flow.
pub fn flow_to_offsets<'t, S: Scalar>(
    flow: Var<'t, S>,
    in_size: (usize, usize),
    out_size: (usize, usize),
    weight: Var<'t, S>,
    bias: Option<Var<'t, S>>,
) -> Result<Var<'t, S>> {
    let (_, _, fh, fw) = flow.dims4()?;
    if (fh, fw) != out_size {
        return Err(Error::contract("flow_to_offsets", format!("flow is {fh}x{fw} but the deformable output is {}x{}", out_size.0, out_size.1)));
    }
    flow_to_raw_offsets(flow, in_size.0, in_size.1)?.conv2d(weight, bias, ConvGeometry::SAME)
}

/// Offset-convolution kernel that copies the raw `(dx, dy)` into every tap:
/// channel `2k` receives `dy` and `2k + 1` receives `dx`.
pub fn replication_kernel<S: Scalar>() -> Tensor<S> {
    let mut w = Tensor::zeros(&[OFFSET_CHANNELS, 2, 3, 3]);
    let data = w.data_mut();
    for k in 0..TAPS {
        data[((2 * k) * 2 + 1) * 9 + 4] = S::one();
        data[(2 * k + 1) * 2 * 9 + 4] = S::one();
    }
    w
}
