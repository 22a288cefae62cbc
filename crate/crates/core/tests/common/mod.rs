//! Helpers shared by the integration test targets.
#![allow(dead_code, clippy::needless_range_loop)]

use std::path::Path;

use texrefine::render::io::read_png;
use texrefine::tensor::Tensor;

/// Scores from scikit-image's `structural_similarity` (Gaussian weights,
/// sigma 1.5, population covariance, data range 1), printed by
/// `fixtures/ssim/make_pairs.py`.
pub const REFERENCE: [f64; 3] = [0.461315527826, 0.934481319071, 0.001896279249];

pub fn fixture(name: &str) -> Tensor<f64> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ssim").join(name);
    let t = read_png::<f64>(&path).unwrap();
    let s = t.shape().to_vec();
    t.reshape(&[1, s[0], s[1], s[2]]).unwrap()
}

/// Direct windowed SSIM: explicit 11x11 Gaussian sums per valid window and
/// channel on the [0, 1] scale.
pub fn loop_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (_, c, h, w) = a.dims4().unwrap();
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (y, row) in g.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let d2 = (y as f64 - 5.0).powi(2) + (x as f64 - 5.0).powi(2);
            *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let px = |t: &Tensor<f64>, ch: usize, y: usize, x: usize| (t.data()[(ch * h + y) * w + x] + 1.0) / 2.0;
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy][dx] / total;
                        let (p, q) = (px(a, ch, y0 + dy, x0 + dx), px(b, ch, y0 + dy, x0 + dx));
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}
