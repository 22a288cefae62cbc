use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Per-channel statistics of one training-mode batch.
#[derive(Clone, Debug)]
pub struct BatchStats<S: Scalar = f64> {
    pub mean: Vec<S>,
    /// Unbiased (`n - 1`) variance, the quantity tracked by running averages.
    pub var_unbiased: Vec<S>,
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Batch normalization with statistics of the current batch, optionally
    /// fused with a following ReLU.
    pub fn batch_norm_train(self, gamma: Var<'t, S>, beta: Var<'t, S>, eps: S, relu: bool) -> Result<(Var<'t, S>, BatchStats<S>)> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let hw = h * w;
        let n = S::from_usize(b * hw).unwrap();
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            mean[i % c] += chunk.iter().copied().sum();
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            let m = mean[i % c];
            var[i % c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum();
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<S> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let var_unbiased = var.iter().map(|&v| if b * hw > 1 { v * n / (n - S::one()) } else { v }).collect();
        let y = normalize(self, gamma, beta, mean.clone(), inv_std, relu, true)?;
        Ok((y, BatchStats { mean, var_unbiased }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(self, gamma: Var<'t, S>, beta: Var<'t, S>, mean: &Tensor<S>, var: &Tensor<S>, eps: S, relu: bool) -> Result<Var<'t, S>> {
        let inv_std = var.data().iter().map(|&v| (v + eps).sqrt().recip()).collect();
        normalize(self, gamma, beta, mean.data().to_vec(), inv_std, relu, false)
    }
}

/// `y = gamma * (x - mean) * inv_std + beta`, optionally rectified. When
/// `batch_stats` is set the statistics are functions of `x` and the input
/// gradient carries the two correction terms.
fn normalize<'t, S: Scalar>(
    x_var: Var<'t, S>,
    gamma: Var<'t, S>,
    beta: Var<'t, S>,
    mean: Vec<S>,
    inv_std: Vec<S>,
    relu: bool,
    batch_stats: bool,
) -> Result<Var<'t, S>> {
    x_var.same_tape(&gamma, "batchnorm")?;
    x_var.same_tape(&beta, "batchnorm")?;
    let x = x_var.value();
    let (b, c, h, w) = x.dims4()?;
    let (gv, bv) = (gamma.value(), beta.value());
    for (name, t) in [("gamma", &gv), ("beta", &bv)] {
        if t.shape() != [c] {
            return Err(Error::contract("batchnorm", format!("{name} {:?} for {c} channels", t.shape())));
        }
    }
    if mean.len() != c || inv_std.len() != c {
        return Err(Error::contract("batchnorm", format!("statistics for {} channels, input has {c}", mean.len())));
    }
    let hw = h * w;
    let mut y = Vec::with_capacity(x.numel());
    for (i, chunk) in x.data().chunks(hw).enumerate() {
        let ch = i % c;
        let (m, s, g, bb) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
        y.extend(chunk.iter().map(|&v| {
            let o = g * (v - m) * s + bb;
            if relu && o < S::zero() {
                S::zero()
            } else {
                o
            }
        }));
    }
    let out = Tensor::from_parts(vec![b, c, h, w], y);
    let saved = relu.then(|| out.clone());
    Ok(x_var.tape.record(out, &[x_var, gamma, beta], move |g, need| {
        // Upstream gradient with the ReLU mask applied.
        let gm: Vec<S> = match &saved {
            Some(y) => g.iter().zip(y.data()).map(|(&g, &y)| if y > S::zero() { g } else { S::zero() }).collect(),
            None => g.to_vec(),
        };
        let mut sum_g = vec![S::zero(); c];
        let mut sum_gx = vec![S::zero(); c];
        for (i, (gc, xc)) in gm.chunks(hw).zip(x.data().chunks(hw)).enumerate() {
            let ch = i % c;
            let (m, s) = (mean[ch], inv_std[ch]);
            sum_g[ch] += gc.iter().copied().sum();
            sum_gx[ch] += gc.iter().zip(xc).map(|(&g, &v)| g * (v - m) * s).sum();
        }
        let dx = need[0].then(|| {
            let n = S::from_usize(b * hw).unwrap();
            let mut dx = Vec::with_capacity(gm.len());
            for (i, (gc, xc)) in gm.chunks(hw).zip(x.data().chunks(hw)).enumerate() {
                let ch = i % c;
                let (m, s, gg) = (mean[ch], inv_std[ch], gv.data()[ch]);
                if batch_stats {
                    let (mg, mgx) = (sum_g[ch] / n, sum_gx[ch] / n);
                    dx.extend(gc.iter().zip(xc).map(|(&g, &v)| gg * s * (g - mg - (v - m) * s * mgx)));
                } else {
                    dx.extend(gc.iter().map(|&g| gg * s * g));
                }
            }
            dx
        });
        vec![dx, need[1].then_some(sum_gx), need[2].then_some(sum_g)]
    }))
}
