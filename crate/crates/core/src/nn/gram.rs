use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

impl<'t, S: Scalar> Var<'t, S> {
    /// Per-sample Gram matrix `X X^T / (C H W)` of the flattened feature map,
    /// `(B, C, C)`.
    pub fn gram(self) -> Result<Var<'t, S>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let n = h * w;
        let norm = S::lit(1.0 / (c * n) as f64);
        let mut g = vec![S::zero(); b * c * c];
        for bi in 0..b {
            let xb = &x.data()[bi * c * n..(bi + 1) * c * n];
            S::gemm(c, n, c, norm, xb, (n, 1), xb, (1, n), S::zero(), &mut g[bi * c * c..(bi + 1) * c * c], (c, 1));
        }
        Ok(self.tape().record(Tensor::new(&[b, c, c], g)?, &[self], move |dg, _| {
            // dX = (dG + dG^T) X / (C H W)
            let mut dx = vec![S::zero(); b * c * n];
            for bi in 0..b {
                let d = &dg[bi * c * c..(bi + 1) * c * c];
                let sym: Vec<S> = (0..c * c).map(|k| d[k] + d[(k % c) * c + k / c]).collect();
                let xb = &x.data()[bi * c * n..(bi + 1) * c * n];
                S::gemm(c, c, n, norm, &sym, (c, 1), xb, (n, 1), S::zero(), &mut dx[bi * c * n..(bi + 1) * c * n], (n, 1));
            }
            vec![Some(dx)]
        }))
    }
}
