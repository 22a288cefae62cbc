//! Image similarity metrics and the same-view / novel-view evaluation.

mod eval;
mod ssim;

use crate::error::{Error, Result};
use crate::losses::{reid_from_features, FeatureExtractor};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

pub use eval::{evaluate_model, evaluate_sv_nv, read_rows, write_rows, MetricMeans, MetricReport, SampleMetrics};
pub use ssim::{gaussian_window, ssim, ssim_map, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean SSIM of two `(B, C, H, W)` images in `[-1, 1]`.
pub fn ssim_value<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    let tape = Tape::inference();
    Ok(ssim(tape.constant(a.clone()), tape.constant(b.clone()))?.item()?.as_f64())
}

/// PSNR in dB of images in `[-1, 1]`, measured on the `[0, 1]` scale and
/// capped at [`PSNR_CAP`].
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    same_shape("psnr", a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (0.5 * (x.as_f64() - y.as_f64())).powi(2)).sum::<f64>() / a.numel() as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// Cosine similarity of the globally pooled deepest features, averaged
/// over the batch.
pub fn cossim<S: Scalar>(phi: &FeatureExtractor<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    same_shape("cossim", a, b)?;
    let tape = Tape::inference();
    let pooled = |x: &Tensor<S>| -> Result<(usize, usize, Vec<f64>)> {
        let f = phi.features(&tape, tape.constant(x.clone()))?.pop().expect("four stages").value();
        let (n, c, h, w) = f.dims4()?;
        let hw = h * w;
        let v = (0..n * c).map(|i| f.data()[i * hw..(i + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64).collect();
        Ok((n, c, v))
    };
    let ((n, c, pa), (_, _, pb)) = (pooled(a)?, pooled(b)?);
    let mut total = 0.0;
    for i in 0..n {
        let (u, v) = (&pa[i * c..(i + 1) * c], &pb[i * c..(i + 1) * c]);
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        let norms = u.iter().map(|x| x * x).sum::<f64>().sqrt() * v.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += if norms > 0.0 {
            (dot / norms).clamp(-1.0, 1.0)
        } else if u == v {
            1.0
        } else {
            0.0
        };
    }
    Ok(total / n as f64)
}

/// Perceptual distance surrogate: mean over the four stages of the mean
/// squared feature difference.
pub fn pdist<S: Scalar>(phi: &FeatureExtractor<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    same_shape("pdist", a, b)?;
    let tape = Tape::inference();
    let fa = phi.features(&tape, tape.constant(a.clone()))?;
    let fb = phi.features(&tape, tape.constant(b.clone()))?;
    Ok(reid_from_features(&fa, &fb)?.item()?.as_f64() / fa.len() as f64)
}

/// Mean squared texture error on the `[0, 1]` scale over the texels where
/// `select` holds, for `(1, C, N, N)` textures. `None` when nothing is
/// selected.
pub fn masked_texture_mse<S: Scalar>(pred: &Tensor<S>, truth: &Tensor<S>, select: &[bool]) -> Result<Option<f64>> {
    same_shape("masked_texture_mse", pred, truth)?;
    let (_, c, h, w) = pred.dims4()?;
    if select.len() != h * w {
        return Err(Error::shape("masked_texture_mse", format!("{} selectors for {h}x{w} texels", select.len())));
    }
    let count = select.iter().filter(|&&s| s).count();
    if count == 0 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for ch in 0..c {
        for (i, _) in select.iter().enumerate().filter(|(_, &s)| s) {
            let k = ch * h * w + i;
            sum += (0.5 * (pred.data()[k].as_f64() - truth.data()[k].as_f64())).powi(2);
        }
    }
    Ok(Some(sum / (count * c) as f64))
}
