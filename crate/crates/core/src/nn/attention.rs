use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Largest query or key token count accepted by [`Var::attention`].
pub const MAX_TOKENS: usize = 4096;

/// Row-softmax of `q^T k / sqrt(d)` for one batch element, `(nq, nk)`.
fn weights<S: Scalar>(q: &[S], k: &[S], d: usize, nq: usize, nk: usize) -> Vec<S> {
    let mut p = vec![S::zero(); nq * nk];
    let scale = S::from_usize(d).unwrap().sqrt().recip();
    S::gemm(nq, d, nk, scale, q, (1, nq), k, (nk, 1), S::zero(), &mut p, (nk, 1));
    for row in p.chunks_mut(nk) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let inv = z.recip();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    p
}

fn token_dims<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<(usize, usize, usize)> {
    let (b, d, h, w) = t.dims4()?;
    if h * w > MAX_TOKENS {
        return Err(Error::contract("attention", format!("{what} has {} tokens, limit {MAX_TOKENS}", h * w)));
    }
    Ok((b, d, h * w))
}

/// Softmax attention weights `(B, Nq, Nk)` without recording anything.
pub fn attention_weights<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>) -> Result<Tensor<S>> {
    let (b, d, nq) = token_dims(q, "query")?;
    let (bk, dk, nk) = token_dims(k, "key")?;
    if b != bk || d != dk {
        return Err(Error::contract("attention", format!("query {:?} vs key {:?}", q.shape(), k.shape())));
    }
    let mut out = Vec::with_capacity(b * nq * nk);
    for bi in 0..b {
        out.extend(weights(&q.data()[bi * d * nq..(bi + 1) * d * nq], &k.data()[bi * d * nk..(bi + 1) * d * nk], d, nq, nk));
    }
    Tensor::new(&[b, nq, nk], out)
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Scaled dot-product attention over spatial tokens.
    ///
    /// `self` is the query map `(B, d, hq, wq)`, `key` and `value` are
    /// `(B, d, hk, wk)`. The result has the query geometry. The weight
    /// matrix is recomputed during the backward pass instead of stored.
    pub fn attention(self, key: Var<'t, S>, value: Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(&key, "attention")?;
        self.same_tape(&value, "attention")?;
        let (q, k, v) = (self.value(), key.value(), value.value());
        let (b, d, nq) = token_dims(&q, "query")?;
        let (bk, dk, nk) = token_dims(&k, "key")?;
        if b != bk || d != dk {
            return Err(Error::contract("attention", format!("query {:?} vs key {:?}", q.shape(), k.shape())));
        }
        if v.shape() != k.shape() {
            return Err(Error::contract("attention", format!("value {:?} vs key {:?}", v.shape(), k.shape())));
        }
        let (qs, ks) = (d * nq, d * nk);
        let mut out = vec![S::zero(); b * qs];
        for bi in 0..b {
            let p = weights(&q.data()[bi * qs..(bi + 1) * qs], &k.data()[bi * ks..(bi + 1) * ks], d, nq, nk);
            let vb = &v.data()[bi * ks..(bi + 1) * ks];
            S::gemm(d, nk, nq, S::one(), vb, (nk, 1), &p, (1, nk), S::zero(), &mut out[bi * qs..(bi + 1) * qs], (nq, 1));
        }
        let out = Tensor::new(q.shape(), out)?;
        Ok(self.tape.record(out, &[self, key, value], move |g, need| {
            let scale = S::from_usize(d).unwrap().sqrt().recip();
            let mut dq = need[0].then(|| vec![S::zero(); b * qs]);
            let mut dk = need[1].then(|| vec![S::zero(); b * ks]);
            let mut dv = need[2].then(|| vec![S::zero(); b * ks]);
            let mut dp = vec![S::zero(); nq * nk];
            for bi in 0..b {
                let (qb, kb, vb) = (&q.data()[bi * qs..(bi + 1) * qs], &k.data()[bi * ks..(bi + 1) * ks], &v.data()[bi * ks..(bi + 1) * ks]);
                let gb = &g[bi * qs..(bi + 1) * qs];
                let p = weights(qb, kb, d, nq, nk);
                if let Some(dv) = dv.as_mut() {
                    S::gemm(d, nq, nk, S::one(), gb, (nq, 1), &p, (nk, 1), S::zero(), &mut dv[bi * ks..(bi + 1) * ks], (nk, 1));
                }
                if dq.is_none() && dk.is_none() {
                    continue;
                }
                S::gemm(nq, d, nk, S::one(), gb, (1, nq), vb, (nk, 1), S::zero(), &mut dp, (nk, 1));
                // Softmax Jacobian, row by row: ds = p * (dp - <dp, p>).
                for (dr, pr) in dp.chunks_mut(nk).zip(p.chunks(nk)) {
                    let dot: S = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    dr.iter_mut().zip(pr).for_each(|(a, &pv)| *a = pv * (*a - dot));
                }
                if let Some(dq) = dq.as_mut() {
                    S::gemm(d, nk, nq, scale, kb, (nk, 1), &dp, (1, nk), S::zero(), &mut dq[bi * qs..(bi + 1) * qs], (nq, 1));
                }
                if let Some(dk) = dk.as_mut() {
                    S::gemm(d, nq, nk, scale, qb, (nq, 1), &dp, (nk, 1), S::zero(), &mut dk[bi * ks..(bi + 1) * ks], (nk, 1));
                }
            }
            vec![dq, dk, dv]
        }))
    }
}
