use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Neighbour pair and weight for a border-clamped coordinate.
#[derive(Clone, Copy)]
struct Axis<S> {
    i0: usize,
    i1: usize,
    t: S,
    /// `d coord / d normalized`, zero once the coordinate is clamped.
    slope: S,
}

fn clamp_axis<S: Scalar>(normalized: S, size: usize) -> Axis<S> {
    let half_extent = S::from_usize(size - 1).unwrap() * S::lit(0.5);
    let coord = (normalized + S::one()) * half_extent;
    let max = S::from_usize(size - 1).unwrap();
    if size == 1 {
        return Axis { i0: 0, i1: 0, t: S::zero(), slope: S::zero() };
    }
    let inside = coord >= S::zero() && coord <= max;
    let c = coord.max(S::zero()).min(max);
    let i0 = c.floor().to_usize().unwrap().min(size - 2);
    Axis { i0, i1: i0 + 1, t: c - S::from_usize(i0).unwrap(), slope: if inside { half_extent } else { S::zero() } }
}

/// Bilinear lookup with zero padding outside `[0, w) x [0, h)`.
///
/// Returns the value and its partial derivatives with respect to `x` and `y`.
pub(crate) fn bilinear_zero<S: Scalar>(plane: &[S], h: usize, w: usize, x: S, y: S) -> (S, S, S) {
    let (xf, yf) = (x.floor(), y.floor());
    let (tx, ty) = (x - xf, y - yf);
    let (x0, y0) = (xf.to_isize().unwrap_or(isize::MIN / 2), yf.to_isize().unwrap_or(isize::MIN / 2));
    let at = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            S::zero()
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let (v00, v01, v10, v11) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
    let one = S::one();
    let value = (one - ty) * ((one - tx) * v00 + tx * v01) + ty * ((one - tx) * v10 + tx * v11);
    let dx = (one - ty) * (v01 - v00) + ty * (v11 - v10);
    let dy = (one - tx) * (v10 - v00) + tx * (v11 - v01);
    (value, dx, dy)
}

/// Adjoint of [`bilinear_zero`] with respect to the plane.
pub(crate) fn scatter_bilinear_zero<S: Scalar>(plane: &mut [S], h: usize, w: usize, x: S, y: S, g: S) {
    let (xf, yf) = (x.floor(), y.floor());
    let (tx, ty) = (x - xf, y - yf);
    let (x0, y0) = (xf.to_isize().unwrap_or(isize::MIN / 2), yf.to_isize().unwrap_or(isize::MIN / 2));
    let one = S::one();
    for (dy, wy) in [(0, one - ty), (1, ty)] {
        for (dx, wx) in [(0, one - tx), (1, tx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                plane[yy as usize * w + xx as usize] += g * wy * wx;
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Samples a `(B, C, H, W)` image at the normalized positions of a
    /// `(B, 2, H_out, W_out)` flow field (channel 0 = x, channel 1 = y).
    ///
    /// `-1` maps to the first pixel centre and `+1` to the last; positions
    /// outside the image are clamped to the border.
    pub fn grid_sample(self, flow: Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(&flow, "grid_sample")?;
        let img = self.value();
        let fl = flow.value();
        let (b, c, h, w) = img.dims4()?;
        let (fb, two, ho, wo) = fl.dims4()?;
        if fb != b || two != 2 {
            return Err(Error::shape("grid_sample", format!("image {:?} with flow {:?}", img.shape(), fl.shape())));
        }
        if !fl.all_finite() {
            return Err(Error::NonFinite { what: "grid_sample flow".into() });
        }
        let p = ho * wo;
        let axes = move |bi: usize, k: usize| {
            let fx = fl.data()[(bi * 2) * p + k];
            let fy = fl.data()[(bi * 2 + 1) * p + k];
            (clamp_axis(fx, w), clamp_axis(fy, h))
        };
        let mut out = Vec::with_capacity(b * c * p);
        for bi in 0..b {
            let lookups: Vec<_> = (0..p).map(|k| axes(bi, k)).collect();
            for ci in 0..c {
                let plane = &img.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                out.extend(lookups.iter().map(|(ax, ay)| lerp2(plane, w, ax, ay)));
            }
        }
        let value = Tensor::from_parts(vec![b, c, ho, wo], out);
        Ok(self.tape.record(value, &[self, flow], move |g, need| {
            let one = S::one();
            let mut di = need[0].then(|| vec![S::zero(); b * c * h * w]);
            let mut df = need[1].then(|| vec![S::zero(); b * 2 * p]);
            for bi in 0..b {
                for k in 0..p {
                    let (ax, ay) = axes(bi, k);
                    for ci in 0..c {
                        let gv = g[(bi * c + ci) * p + k];
                        let base = (bi * c + ci) * h * w;
                        if let Some(di) = di.as_mut() {
                            let plane = &mut di[base..base + h * w];
                            plane[ay.i0 * w + ax.i0] += gv * (one - ay.t) * (one - ax.t);
                            plane[ay.i0 * w + ax.i1] += gv * (one - ay.t) * ax.t;
                            plane[ay.i1 * w + ax.i0] += gv * ay.t * (one - ax.t);
                            plane[ay.i1 * w + ax.i1] += gv * ay.t * ax.t;
                        }
                        if let Some(df) = df.as_mut() {
                            let plane = &img.data()[base..base + h * w];
                            let (v00, v01) = (plane[ay.i0 * w + ax.i0], plane[ay.i0 * w + ax.i1]);
                            let (v10, v11) = (plane[ay.i1 * w + ax.i0], plane[ay.i1 * w + ax.i1]);
                            let dx = (one - ay.t) * (v01 - v00) + ay.t * (v11 - v10);
                            let dy = (one - ax.t) * (v10 - v00) + ax.t * (v11 - v01);
                            df[(bi * 2) * p + k] += gv * dx * ax.slope;
                            df[(bi * 2 + 1) * p + k] += gv * dy * ay.slope;
                        }
                    }
                }
            }
            vec![di, df]
        }))
    }
}

fn lerp2<S: Scalar>(plane: &[S], w: usize, ax: &Axis<S>, ay: &Axis<S>) -> S {
    let one = S::one();
    let top = (one - ax.t) * plane[ay.i0 * w + ax.i0] + ax.t * plane[ay.i0 * w + ax.i1];
    let bottom = (one - ax.t) * plane[ay.i1 * w + ax.i0] + ax.t * plane[ay.i1 * w + ax.i1];
    (one - ay.t) * top + ay.t * bottom
}

/// Normalized coordinates of every pixel of an `h x w` grid, as a
/// `(b, 2, h, w)` flow field; sampling with it reproduces the image.
pub fn identity_flow<S: Scalar>(b: usize, h: usize, w: usize) -> Tensor<S> {
    let norm = |i: usize, n: usize| {
        if n == 1 {
            S::zero()
        } else {
            S::lit(-1.0 + 2.0 * i as f64 / (n - 1) as f64)
        }
    };
    Tensor::from_fn(&[b, 2, h, w], |i| {
        let x = i % w;
        let y = (i / w) % h;
        if (i / (w * h)).is_multiple_of(2) {
            norm(x, w)
        } else {
            norm(y, h)
        }
    })
}
