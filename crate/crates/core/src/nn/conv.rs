use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Geometry of a dense 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Stride 1, padding 1: the 3x3 "same" convolution used throughout.
    pub const SAME: Self = Self { stride: 1, padding: 1 };

    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= kernel && self.stride > 0).then(|| (padded - kernel) / self.stride + 1)
    }
}

struct Im2Col {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one `(C, H, W)` image into a `(C*kh*kw, Ho*Wo)` matrix.
    fn unfold<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        let p = self.cols();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut out[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(S::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { S::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Im2Col::unfold`]: scatters columns back, accumulating.
    fn fold<S: Scalar>(&self, cols: &[S], dx: &mut [S]) {
        let p = self.cols();
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Cross-correlation of a `(B, C_in, H, W)` input with a
    /// `(C_out, C_in, kh, kw)` kernel plus an optional per-channel bias.
    pub fn conv2d(self, weight: Var<'t, S>, bias: Option<Var<'t, S>>, geom: ConvGeometry) -> Result<Var<'t, S>> {
        self.same_tape(&weight, "conv2d")?;
        let x = self.value();
        let wt = weight.value();
        let (b, c, h, w) = x.dims4()?;
        let [co, ci, kh, kw] = wt.shape()[..] else {
            return Err(Error::shape("conv2d", format!("weight must be rank 4, got {:?}", wt.shape())));
        };
        if ci != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, weight expects {ci}")));
        }
        let (Some(ho), Some(wo)) = (geom.output_size(h, kh), geom.output_size(w, kw)) else {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded {h}x{w}")));
        };
        let bias_value = match bias {
            Some(bv) => {
                self.same_tape(&bv, "conv2d")?;
                let t = bv.value();
                if t.shape() != [co] {
                    return Err(Error::shape("conv2d", format!("bias {:?} for {co} outputs", t.shape())));
                }
                Some(t)
            }
            None => None,
        };
        let geo = Im2Col { c, h, w, kh, kw, stride: geom.stride, pad: geom.padding, ho, wo };
        let (k, p) = (geo.rows(), geo.cols());
        let mut y = vec![S::zero(); b * co * p];
        let mut cols = vec![S::zero(); k * p];
        for bi in 0..b {
            geo.unfold(&x.data()[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
            let yb = &mut y[bi * co * p..(bi + 1) * co * p];
            if let Some(bv) = &bias_value {
                for (o, chunk) in yb.chunks_mut(p).enumerate() {
                    chunk.fill(bv.data()[o]);
                }
            }
            S::gemm(co, k, p, S::one(), wt.data(), (k, 1), &cols, (p, 1), S::one(), yb, (p, 1));
        }
        let out = Tensor::from_parts(vec![b, co, ho, wo], y);

        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape.record(out, &inputs, move |g, need| {
            let mut dx = need[0].then(|| vec![S::zero(); b * c * h * w]);
            let mut dw = need[1].then(|| vec![S::zero(); co * k]);
            let mut cols = vec![S::zero(); k * p];
            let mut dcols = vec![S::zero(); k * p];
            for bi in 0..b {
                let gb = &g[bi * co * p..(bi + 1) * co * p];
                if let Some(dw) = dw.as_mut() {
                    geo.unfold(&x.data()[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                    S::gemm(co, p, k, S::one(), gb, (p, 1), &cols, (1, p), S::one(), dw, (k, 1));
                }
                if let Some(dx) = dx.as_mut() {
                    S::gemm(k, co, p, S::one(), wt.data(), (1, k), gb, (p, 1), S::zero(), &mut dcols, (p, 1));
                    geo.fold(&dcols, &mut dx[bi * c * h * w..(bi + 1) * c * h * w]);
                }
            }
            let mut grads = vec![dx, dw];
            if need.len() > 2 {
                grads.push(need[2].then(|| {
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
