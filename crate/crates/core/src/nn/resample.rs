use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

impl<'t, S: Scalar> Var<'t, S> {
    /// 2x2 average pooling.
    pub fn downsample2x(self) -> Result<Var<'t, S>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract("downsample2x", format!("odd spatial size {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = S::lit(0.25);
        let mut y = Vec::with_capacity(b * c * ho * wo);
        for plane in x.data().chunks(h * w) {
            for i in 0..ho {
                let (r0, r1) = (&plane[2 * i * w..(2 * i + 1) * w], &plane[(2 * i + 1) * w..(2 * i + 2) * w]);
                y.extend((0..wo).map(|j| quarter * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1])));
            }
        }
        let out = Tensor::from_parts(vec![b, c, ho, wo], y);
        Ok(self.tape.record(out, &[self], move |g, _| {
            let mut dx = vec![S::zero(); b * c * h * w];
            for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
                for (idx, v) in plane.iter_mut().enumerate() {
                    *v = quarter * gp[(idx / w / 2) * wo + (idx % w) / 2];
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(self) -> Result<Var<'t, S>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let (ho, wo) = (2 * h, 2 * w);
        let mut y = Vec::with_capacity(b * c * ho * wo);
        for plane in x.data().chunks(h * w) {
            for i in 0..ho {
                let row = &plane[(i / 2) * w..(i / 2 + 1) * w];
                y.extend((0..wo).map(|j| row[j / 2]));
            }
        }
        let out = Tensor::from_parts(vec![b, c, ho, wo], y);
        Ok(self.tape.record(out, &[self], move |g, _| {
            let mut dx = vec![S::zero(); b * c * h * w];
            for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
                for (idx, &gv) in gp.iter().enumerate() {
                    plane[(idx / wo / 2) * w + (idx % wo) / 2] += gv;
                }
            }
            vec![Some(dx)]
        }))
    }
}
