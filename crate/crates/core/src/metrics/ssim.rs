use crate::error::{Error, Result};
use crate::nn::ConvGeometry;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized `11 x 11` Gaussian kernel, shape `(1, 1, 11, 11)`.
pub fn gaussian_window<S: Scalar>() -> Tensor<S> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = g.iter().sum();
    Tensor::from_fn(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], |i| S::lit(g[i / SSIM_WINDOW] * g[i % SSIM_WINDOW] / (total * total)))
}

/// Local SSIM map over valid windows, `(B * C, 1, H - 10, W - 10)`, for
/// images in `[-1, 1]` (mapped to `[0, 1]` first). Channels are independent.
pub fn ssim_map<'t, S: Scalar>(a: Var<'t, S>, b: Var<'t, S>) -> Result<Var<'t, S>> {
    let (n, c, h, w) = a.dims4()?;
    if b.shape() != a.shape() {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract("ssim", format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let tape = a.tape();
    let window = tape.constant(gaussian_window());
    let valid = ConvGeometry { stride: 1, padding: 0 };
    let blur = |x: Var<'t, S>| x.conv2d(window, None, valid);
    let unit = |x: Var<'t, S>| x.add_scalar(S::one()).scale(S::lit(0.5)).reshape(&[n * c, 1, h, w]);
    let (a, b) = (unit(a)?, unit(b)?);

    let (mu_a, mu_b) = (blur(a)?, blur(b)?);
    let (mu_aa, mu_bb, mu_ab) = (mu_a.square(), mu_b.square(), mu_a.mul(mu_b)?);
    let var_a = blur(a.square())?.sub(mu_aa)?;
    let var_b = blur(b.square())?.sub(mu_bb)?;
    let cov = blur(a.mul(b)?)?.sub(mu_ab)?;

    let two = S::lit(2.0);
    let num = mu_ab.scale(two).add_scalar(S::lit(SSIM_C1)).mul(cov.scale(two).add_scalar(S::lit(SSIM_C2)))?;
    let den = mu_aa.add(mu_bb)?.add_scalar(S::lit(SSIM_C1)).mul(var_a.add(var_b)?.add_scalar(S::lit(SSIM_C2)))?;
    num.div(den)
}

/// Mean SSIM over batch, channels and windows.
pub fn ssim<'t, S: Scalar>(a: Var<'t, S>, b: Var<'t, S>) -> Result<Var<'t, S>> {
    Ok(ssim_map(a, b)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, Tape};

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window::<f64>();
        assert!((g.sum() - 1.0).abs() < 1e-14);
        let at = |y: usize, x: usize| g.data()[y * SSIM_WINDOW + x];
        assert_eq!(at(0, 3), at(10, 3));
        assert_eq!(at(2, 7), at(7, 2));
        assert!(at(5, 5) > at(5, 4));
    }

    #[test]
    fn small_images_are_rejected() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros(&[1, 3, 10, 40]));
        assert!(matches!(ssim(x, x), Err(Error::Contract { .. })));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let other = Tensor::from_fn(&[1, 1, 12, 12], |i| ((i * 7) % 13) as f64 / 6.5 - 1.0);
        let x = Tensor::from_fn(&[1, 1, 12, 12], |i| ((i * 5) % 11) as f64 / 5.5 - 1.0);
        let check = finite_diff_check(|tape, x| ssim(x, tape.constant(other.clone())), &x, 1e-6).unwrap();
        assert!(check.max_rel_error <= 1e-4, "{}", check.max_rel_error);
    }
}
