//! Elementwise, reduction and shape operations on recorded values.
//!
//! Binary operations require identical shapes. The only broadcasts are the
//! explicit per-channel ones ([`Var::add_channel`], [`Var::mul_channel`]) and
//! [`Var::repeat_channels`].

use super::tape::Var;
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<'t, S: Scalar> Var<'t, S> {
    fn unary<F, D>(self, f: F, df: D) -> Var<'t, S>
    where
        F: Fn(S) -> S,
        D: Fn(S, S) -> S + 'static,
    {
        let x = self.value();
        let y = x.map(f);
        let y_saved = y.clone();
        self.tape.record(y, &[self], move |g, _| {
            let d = g.iter().zip(x.data().iter().zip(y_saved.data())).map(|(&g, (&x, &y))| g * df(x, y)).collect();
            vec![Some(d)]
        })
    }

    fn check_same(&self, other: &Var<'t, S>, op: &'static str) -> Result<(Tensor<S>, Tensor<S>)> {
        self.same_tape(other, op)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok((a, b))
    }

    pub fn add(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (a, b) = self.check_same(&other, "add")?;
        let y = a.zip_map(&b, |x, y| x + y)?;
        Ok(self.tape.record(y, &[self, other], |g, need| {
            let g = g.to_vec();
            vec![need[0].then(|| g.clone()), need[1].then_some(g)]
        }))
    }

    pub fn sub(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (a, b) = self.check_same(&other, "sub")?;
        let y = a.zip_map(&b, |x, y| x - y)?;
        Ok(self.tape.record(y, &[self, other], |g, need| vec![need[0].then(|| g.to_vec()), need[1].then(|| g.iter().map(|&v| -v).collect())]))
    }

    pub fn mul(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (a, b) = self.check_same(&other, "mul")?;
        let y = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.tape.record(y, &[self, other], move |g, need| {
            let ga = need[0].then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect());
            let gb = need[1].then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect());
            vec![ga, gb]
        }))
    }

    pub fn div(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (a, b) = self.check_same(&other, "div")?;
        let y = a.zip_map(&b, |x, y| x / y)?;
        Ok(self.tape.record(y, &[self, other], move |g, need| {
            let ga = need[0].then(|| g.iter().zip(b.data()).map(|(&g, &b)| g / b).collect());
            let gb = need[1].then(|| g.iter().zip(a.data().iter().zip(b.data())).map(|(&g, (&a, &b))| -g * a / (b * b)).collect());
            vec![ga, gb]
        }))
    }

    pub fn neg(self) -> Var<'t, S> {
        self.unary(|x| -x, |_, _| -S::one())
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: S) -> Var<'t, S> {
        self.unary(move |x| x + c, |_, _| S::one())
    }

    pub fn square(self) -> Var<'t, S> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(self) -> Var<'t, S> {
        self.unary(|x| x.sqrt(), |_, y| if y > S::zero() { S::lit(0.5) / y } else { S::zero() })
    }

    /// Absolute value with subgradient zero at the origin.
    pub fn abs(self) -> Var<'t, S> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn exp(self) -> Var<'t, S> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, S> {
        self.unary(|x| x.ln(), |x, _| S::one() / x)
    }

    pub fn relu(self) -> Var<'t, S> {
        self.unary(|x| x.max(S::zero()), |x, _| if x > S::zero() { S::one() } else { S::zero() })
    }

    pub fn tanh(self) -> Var<'t, S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'t, S> {
        self.unary(sigmoid, |_, y| y * (S::one() - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t, S> {
        self.unary(|x| x.max(S::zero()) + (-x.abs()).exp().ln_1p(), |x, _| sigmoid(x))
    }

    /// `max(x, floor)`; gradient passes only above the floor.
    pub fn clamp_min(self, floor: S) -> Var<'t, S> {
        self.unary(move |x| x.max(floor), move |x, _| if x > floor { S::one() } else { S::zero() })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'t, S> {
        let x = self.value();
        let n = x.numel();
        self.tape.record(Tensor::scalar(x.sum()), &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(self) -> Var<'t, S> {
        let n = self.numel();
        self.sum().scale(S::one() / S::lit(n as f64))
    }

    /// Euclidean norm of all elements; zero gradient at the origin.
    pub fn norm2(self) -> Var<'t, S> {
        self.square().sum().sqrt()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, S>> {
        let y = self.value().reshape(shape)?;
        Ok(self.tape.record(y, &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Adds `bias[c]` to channel `c` of a `(B, C, H, W)` value.
    pub fn add_channel(self, bias: Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(&bias, "add_channel")?;
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let bv = bias.value();
        if bv.shape() != [c] {
            return Err(Error::shape("add_channel", format!("bias {:?} for {c} channels", bv.shape())));
        }
        let hw = h * w;
        let mut y = x.data().to_vec();
        for (i, chunk) in y.chunks_mut(hw).enumerate() {
            let add = bv.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += add);
        }
        Ok(self.tape.record(Tensor::from_parts(vec![b, c, h, w], y), &[self, bias], move |g, need| {
            let gb = need[1].then(|| {
                let mut gb = vec![S::zero(); c];
                for (i, chunk) in g.chunks(hw).enumerate() {
                    gb[i % c] += chunk.iter().copied().sum();
                }
                gb
            });
            vec![need[0].then(|| g.to_vec()), gb]
        }))
    }

    /// Multiplies channel `c` of a `(B, C, H, W)` value by `scale[c]`.
    pub fn mul_channel(self, scale: Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(&scale, "mul_channel")?;
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let sv = scale.value();
        if sv.shape() != [c] {
            return Err(Error::shape("mul_channel", format!("scale {:?} for {c} channels", sv.shape())));
        }
        let hw = h * w;
        let mut y = x.data().to_vec();
        for (i, chunk) in y.chunks_mut(hw).enumerate() {
            let s = sv.data()[i % c];
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.tape.record(Tensor::from_parts(vec![b, c, h, w], y), &[self, scale], move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = g.to_vec();
                for (i, chunk) in gx.chunks_mut(hw).enumerate() {
                    let s = sv.data()[i % c];
                    chunk.iter_mut().for_each(|v| *v *= s);
                }
                gx
            });
            let gs = need[1].then(|| {
                let mut gs = vec![S::zero(); c];
                for (i, (gc, xc)) in g.chunks(hw).zip(x.data().chunks(hw)).enumerate() {
                    gs[i % c] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum();
                }
                gs
            });
            vec![gx, gs]
        }))
    }

    /// `(B, 1, H, W)` to `(B, n, H, W)` by copying the single channel.
    pub fn repeat_channels(self, n: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::shape("repeat_channels", format!("expected 1 channel, got {c}")));
        }
        let hw = h * w;
        let mut y = Vec::with_capacity(b * n * hw);
        for chunk in x.data().chunks(hw) {
            for _ in 0..n {
                y.extend_from_slice(chunk);
            }
        }
        Ok(self.tape.record(Tensor::from_parts(vec![b, n, h, w], y), &[self], move |g, _| {
            let mut gx = vec![S::zero(); b * hw];
            for (bi, gb) in gx.chunks_mut(hw).enumerate() {
                for k in 0..n {
                    let src = &g[(bi * n + k) * hw..(bi * n + k + 1) * hw];
                    gb.iter_mut().zip(src).for_each(|(a, &v)| *a += v);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Channels `[start, start + len)` of a rank-4 value.
    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_channels", format!("[{start}, {}) of {c}", start + len)));
        }
        let hw = h * w;
        let mut y = Vec::with_capacity(b * len * hw);
        for bi in 0..b {
            y.extend_from_slice(&x.data()[(bi * c + start) * hw..(bi * c + start + len) * hw]);
        }
        Ok(self.tape.record(Tensor::from_parts(vec![b, len, h, w], y), &[self], move |g, _| {
            let mut gx = vec![S::zero(); b * c * hw];
            for bi in 0..b {
                gx[(bi * c + start) * hw..(bi * c + start + len) * hw].copy_from_slice(&g[bi * len * hw..(bi + 1) * len * hw]);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates rank-4 values along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (b, _, h, w) = first.dims4()?;
        let mut chans = Vec::with_capacity(parts.len());
        let values: Vec<Tensor<S>> = parts.iter().map(|p| p.value()).collect();
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p, "concat_channels")?;
            let (pb, pc, ph, pw) = v.dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::shape("concat_channels", format!("{:?} vs {:?}", v.shape(), first.shape())));
            }
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut y = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for (v, &c) in values.iter().zip(&chans) {
                y.extend_from_slice(&v.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        Ok(first.tape.record(Tensor::from_parts(vec![b, total, h, w], y), parts, move |g, need| {
            let mut offset = 0;
            let mut out = Vec::with_capacity(chans.len());
            for (k, &c) in chans.iter().enumerate() {
                if need[k] {
                    let mut gk = Vec::with_capacity(b * c * hw);
                    for bi in 0..b {
                        let start = (bi * total + offset) * hw;
                        gk.extend_from_slice(&g[start..start + c * hw]);
                    }
                    out.push(Some(gk));
                } else {
                    out.push(None);
                }
                offset += c;
            }
            out
        }))
    }

    /// Concatenates along the batch axis.
    pub fn concat_batch(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_batch", "no inputs"))?;
        let values: Vec<Tensor<S>> = parts.iter().map(|p| p.value()).collect();
        for p in parts {
            first.same_tape(p, "concat_batch")?;
        }
        let y = Tensor::stack_batch(&values)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.numel()).collect();
        Ok(first.tape.record(y, parts, move |g, need| {
            let mut offset = 0;
            sizes
                .iter()
                .zip(need)
                .map(|(&n, &nd)| {
                    let part = nd.then(|| g[offset..offset + n].to_vec());
                    offset += n;
                    part
                })
                .collect()
        }))
    }

    /// Spatial window `rows` x `cols` of a rank-4 value starting at `(y0, x0)`.
    pub fn crop(self, y0: usize, x0: usize, rows: usize, cols: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if rows == 0 || cols == 0 || y0 + rows > h || x0 + cols > w {
            return Err(Error::shape("crop", format!("{rows}x{cols} at ({y0}, {x0}) of {h}x{w}")));
        }
        let planes = b * c;
        let mut y = Vec::with_capacity(planes * rows * cols);
        for p in 0..planes {
            for r in 0..rows {
                let start = (p * h + y0 + r) * w + x0;
                y.extend_from_slice(&x.data()[start..start + cols]);
            }
        }
        Ok(self.tape.record(Tensor::from_parts(vec![b, c, rows, cols], y), &[self], move |g, _| {
            let mut gx = vec![S::zero(); planes * h * w];
            for p in 0..planes {
                for r in 0..rows {
                    let start = (p * h + y0 + r) * w + x0;
                    gx[start..start + cols].copy_from_slice(&g[(p * rows + r) * cols..(p * rows + r + 1) * cols]);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Sample `i` of the batch axis, keeping a batch of one.
    pub fn select_batch(self, i: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let y = x.select_batch(i)?;
        let per = y.numel();
        let total = x.numel();
        Ok(self.tape.record(y, &[self], move |g, _| {
            let mut gx = vec![S::zero(); total];
            gx[i * per..(i + 1) * per].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Mode, Tape, Tensor};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_is_twice_x() {
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates_exactly() {
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(t(&[3], &[0.3, -1.7, 2.2]));
        let loss = x.add(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn constants_never_receive_gradients() {
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let g = tape.backward(x.mul(c).unwrap().sum()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(x.square()).is_err());
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let loss = x.sum();
        assert!(tape.backward(loss).is_ok());
        assert!(tape.backward(loss).is_err());
    }

    #[test]
    fn backward_without_recording_is_an_error() {
        let tape = Tape::<f64>::inference();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(!x.requires_grad());
        assert!(tape.backward(x.sum()).is_err());
    }

    #[test]
    fn binary_ops_reject_shape_mismatch() {
        let tape = Tape::new(Mode::Train);
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        let b = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(a.add(b).is_err());
        assert!(a.mul(b).is_err());
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let tape = Tape::new(Mode::Train);
        let a = tape.leaf(Tensor::from_fn(&[2, 1, 1, 2], |i| i as f64));
        let b = tape.leaf(Tensor::from_fn(&[2, 2, 1, 2], |i| 10.0 + i as f64));
        let cat = crate::tensor::Var::concat_channels(&[a, b]).unwrap();
        assert_eq!(cat.value().data(), &[0.0, 1.0, 10.0, 11.0, 12.0, 13.0, 2.0, 3.0, 14.0, 15.0, 16.0, 17.0]);
        let loss = cat.slice_channels(1, 1).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0; 4]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(t(&[3], &[-800.0, 0.0, 800.0]));
        let y = x.softplus().value();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(y.data()[2], 800.0);
    }

    #[test]
    fn crop_selects_a_window_and_scatters_its_gradient() {
        let tape = Tape::new(Mode::Train);
        let x = tape.leaf(Tensor::from_fn(&[1, 2, 3, 4], |i| i as f64));
        let y = x.crop(1, 2, 2, 2).unwrap();
        assert_eq!(y.value().data(), &[6.0, 7.0, 10.0, 11.0, 18.0, 19.0, 22.0, 23.0]);
        let g = tape.backward(y.sum()).unwrap();
        let nonzero: Vec<usize> = (0..24).filter(|&i| g.get(x).unwrap().data()[i] == 1.0).collect();
        assert_eq!(nonzero, vec![6, 7, 10, 11, 18, 19, 22, 23]);
        assert!(x.crop(2, 0, 2, 1).is_err());
    }
}
