use super::tape::{Mode, Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest admissible input for a finite-difference sweep.
pub const MAX_CHECK_ELEMENTS: usize = 10_000;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `max |a - n| / max(1e-8, |a| + |n|)` over all elements.
    pub max_rel_error: f64,
    /// Element where the maximum occurs.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of a scalar function with central differences.
///
/// `f` is re-evaluated on a fresh training-mode tape for every perturbation,
/// so batch statistics stay part of the function being checked.
pub fn finite_diff_check<S, F>(f: F, x: &Tensor<S>, eps: S) -> Result<GradCheck>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    finite_diff_check_in(Mode::Train, f, x, eps)
}

pub fn finite_diff_check_in<S, F>(mode: Mode, f: F, x: &Tensor<S>, eps: S) -> Result<GradCheck>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    if x.numel() > MAX_CHECK_ELEMENTS {
        return Err(Error::contract("finite_diff_check", format!("{} elements exceeds {MAX_CHECK_ELEMENTS}", x.numel())));
    }
    let tape = Tape::new(mode);
    let leaf = tape.leaf(x.clone());
    let out = f(&tape, leaf)?;
    let value = out.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "f(x) at the unperturbed point".into() });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = match grads.get(leaf) {
        Some(g) => g.data().iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; x.numel()],
    };

    let eval = |probe: Tensor<S>, i: usize| -> Result<f64> {
        let tape = Tape::new(mode);
        let leaf = tape.constant(probe);
        let y = f(&tape, leaf)?.item()?;
        if !y.is_finite() {
            return Err(Error::NonFinite { what: format!("f(x) with element {i} perturbed") });
        }
        Ok(y.as_f64())
    };

    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let hi = eval(plus, i)?;
        let lo = eval(minus, i)?;
        numeric.push((hi - lo) / (2.0 * eps.as_f64()));
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .enumerate()
        .fold((0, 0.0f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheck { max_rel_error, worst_index, analytic, numeric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    #[test]
    fn sum_is_exact() {
        let x = random(&[3, 4], -1.0, 1.0, 7);
        let r = finite_diff_check(|_, x| Ok(x.sum()), &x, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-10, "{}", r.max_rel_error);
    }

    #[test]
    fn tanh_matches_one_minus_tanh_squared() {
        let x = random(&[20], -2.0, 2.0, 11);
        let r = finite_diff_check(|_, x| Ok(x.tanh().sum()), &x, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{}", r.max_rel_error);
        for (a, xi) in r.analytic.iter().zip(x.data()) {
            assert!((a - (1.0 - xi.tanh().powi(2))).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_output_is_reported() {
        let x = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let err = finite_diff_check(|_, x| Ok(x.ln().sum()), &x, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn oversized_inputs_are_rejected() {
        let x = Tensor::<f64>::zeros(&[MAX_CHECK_ELEMENTS + 1]);
        assert!(finite_diff_check(|_, x| Ok(x.sum()), &x, 1e-5).is_err());
    }

    #[test]
    fn elementwise_ops_pass() {
        let x = random(&[2, 3, 2, 2], 0.2, 1.5, 3);
        let numerator = random(&[2, 3, 2, 2], -1.0, 1.0, 4);
        let checks: Vec<(&str, GradCheck)> = vec![
            ("sigmoid", finite_diff_check(|_, x| Ok(x.sigmoid().sum()), &x, 1e-6).unwrap()),
            ("softplus", finite_diff_check(|_, x| Ok(x.softplus().sum()), &x, 1e-6).unwrap()),
            ("ln", finite_diff_check(|_, x| Ok(x.ln().sum()), &x, 1e-6).unwrap()),
            ("sqrt", finite_diff_check(|_, x| Ok(x.sqrt().sum()), &x, 1e-6).unwrap()),
            ("exp", finite_diff_check(|_, x| Ok(x.exp().sum()), &x, 1e-6).unwrap()),
            ("div", finite_diff_check(|t, x| Ok(t.constant(numerator.clone()).div(x)?.sum()), &x, 1e-6).unwrap()),
            ("norm2", finite_diff_check(|_, x| Ok(x.norm2()), &x, 1e-6).unwrap()),
        ];
        for (name, c) in checks {
            assert!(c.max_rel_error <= 1e-6, "{name}: {}", c.max_rel_error);
        }
    }
}
