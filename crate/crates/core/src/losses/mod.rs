//! Training objectives: feature reconstruction, per-part style, face
//! structure, the uncertainty-weighted reconstruction, cycle consistency and
//! their weighted total.

mod features;

use serde::{Deserialize, Serialize};

use crate::data::{AtlasLayout, FaceBank};
use crate::error::{Error, Result};
use crate::metrics::ssim;
use crate::model::{Model, SIGMA_FLOOR};
use crate::render::{render_texture, RasterMap, BACKGROUND};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub use features::{FeatureExtractor, FEATURE_CHANNELS, FEATURE_SEED};

/// Loss coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reid: f64,
    pub style: f64,
    pub face: f64,
    pub cycle: f64,
    pub url: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { reid: 5000.0, style: 0.4, face: 0.01, cycle: 0.1, url: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.reid, self.style, self.face, self.cycle, self.url];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Weight of the intermediate branch at `step` of `total`: linear from 1
/// down to 0 at half of training.
pub fn intermediate_weight(step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (1.0 - 2.0 * step as f64 / total as f64).max(0.0)
}

/// `sum_j mean((phi_j(a) - phi_j(b))^2)` over feature lists of equal shapes.
pub fn reid_from_features<'t, S: Scalar>(fa: &[Var<'t, S>], fb: &[Var<'t, S>]) -> Result<Var<'t, S>> {
    if fa.len() != fb.len() || fa.is_empty() {
        return Err(Error::contract("reid_loss", format!("{} vs {} feature layers", fa.len(), fb.len())));
    }
    let mut total: Option<Var<'t, S>> = None;
    for (a, b) in fa.iter().zip(fb) {
        let term = a.sub(*b)?.square().mean();
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one layer"))
}

pub fn reid_loss<'t, S: Scalar>(phi: &FeatureExtractor<S>, tape: &'t Tape<S>, image: Var<'t, S>, rendered: Var<'t, S>) -> Result<Var<'t, S>> {
    if image.shape() != rendered.shape() {
        return Err(Error::shape("reid_loss", format!("{:?} vs {:?}", image.shape(), rendered.shape())));
    }
    reid_from_features(&phi.features(tape, image)?, &phi.features(tape, rendered)?)
}

/// Nearest-neighbour resize of `(B, P, H, W)` masks to `(B, P, h, w)`,
/// sampling source index `floor(i * H / h)`.
pub fn resize_masks<S: Scalar>(masks: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (b, p, sh, sw) = masks.dims4()?;
    Ok(Tensor::from_fn(&[b, p, h, w], |i| {
        let (plane, y, x) = (i / (h * w), (i / w) % h, i % w);
        masks.data()[plane * sh * sw + (y * sh / h) * sw + x * sw / w]
    }))
}

/// Per-part Gram matching on first-stage features:
/// `sum_p ||G(M_p * phi_1(a)) - G(M'_p * phi_1(b))||^2`, averaged over the
/// batch. Masks are `(B, P, H, W)` at image resolution.
pub fn part_style_from_features<'t, S: Scalar>(fa: Var<'t, S>, fb: Var<'t, S>, masks_a: &Tensor<S>, masks_b: &Tensor<S>) -> Result<Var<'t, S>> {
    let (b, c, h, w) = fa.dims4()?;
    if fb.shape() != fa.shape() {
        return Err(Error::shape("part_style_loss", format!("{:?} vs {:?}", fa.shape(), fb.shape())));
    }
    if masks_a.shape() != masks_b.shape() || masks_a.rank() != 4 || masks_a.shape()[0] != b {
        return Err(Error::contract("part_style_loss", format!("part masks {:?} and {:?} for batch {b}", masks_a.shape(), masks_b.shape())));
    }
    let parts = masks_a.shape()[1];
    let tape = fa.tape();
    let (ma, mb) = (tape.constant(resize_masks(masks_a, h, w)?), tape.constant(resize_masks(masks_b, h, w)?));
    let mut total = tape.constant(Tensor::scalar(S::zero()));
    for p in 0..parts {
        let ga = fa.mul(ma.slice_channels(p, 1)?.repeat_channels(c)?)?.gram()?;
        let gb = fb.mul(mb.slice_channels(p, 1)?.repeat_channels(c)?)?.gram()?;
        total = total.add(ga.sub(gb)?.square().sum())?;
    }
    Ok(total.scale(S::lit(1.0 / b as f64)))
}

pub fn part_style_loss<'t, S: Scalar>(
    phi: &FeatureExtractor<S>,
    tape: &'t Tape<S>,
    image: Var<'t, S>,
    rendered: Var<'t, S>,
    masks: &Tensor<S>,
    rendered_masks: &Tensor<S>,
) -> Result<Var<'t, S>> {
    part_style_from_features(phi.first(tape, image)?, phi.first(tape, rendered)?, masks, rendered_masks)
}

/// Face crops of a bank, ready for [`face_structure_loss`].
#[derive(Clone, Debug)]
pub struct FaceTargets<S: Scalar> {
    /// `(y0, x0, rows, cols)` of the face rectangle on the atlas.
    pub window: (usize, usize, usize, usize),
    /// One `(1, 3, rows, cols)` crop per bank texture.
    pub crops: Vec<Tensor<S>>,
}

impl<S: Scalar> FaceTargets<S> {
    pub fn new(bank: &FaceBank, atlas: &AtlasLayout) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::contract("face_structure_loss", "face bank is empty"));
        }
        let f = atlas.face;
        let window = (f.y0, f.x0, f.height(), f.width());
        let crops = (0..bank.len()).map(|i| crop_tensor(&bank.masked(i).cast(), window)).collect::<Result<Vec<_>>>()?;
        Ok(Self { window, crops })
    }
}

fn crop_tensor<S: Scalar>(t: &Tensor<S>, (y0, x0, rows, cols): (usize, usize, usize, usize)) -> Result<Tensor<S>> {
    let (b, c, h, w) = t.dims4()?;
    if y0 + rows > h || x0 + cols > w {
        return Err(Error::contract("crop", format!("window exceeds {h}x{w}")));
    }
    Ok(Tensor::from_fn(&[b, c, rows, cols], |i| {
        let (plane, y, x) = (i / (rows * cols), (i / cols) % rows, i % cols);
        t.data()[plane * h * w + (y0 + y) * w + x0 + x]
    }))
}

/// `-(1/N) sum_i ssim(face(T), face(F_i))` over the face rectangle,
/// averaged over the batch.
pub fn face_structure_loss<'t, S: Scalar>(texture: Var<'t, S>, targets: &FaceTargets<S>) -> Result<Var<'t, S>> {
    if targets.crops.is_empty() {
        return Err(Error::contract("face_structure_loss", "face bank is empty"));
    }
    let (b, ..) = texture.dims4()?;
    let (y0, x0, rows, cols) = targets.window;
    let face = texture.crop(y0, x0, rows, cols)?;
    let tape = texture.tape();
    let mut total = tape.constant(Tensor::scalar(S::zero()));
    for crop in &targets.crops {
        let target = tape.constant(Tensor::stack_batch(&vec![crop.select_batch(0)?; b])?);
        total = total.add(ssim(face, target)?)?;
    }
    Ok(total.scale(S::lit(-1.0 / targets.crops.len() as f64)))
}

/// Unweighted components of the base loss.
#[derive(Clone, Copy)]
pub struct BaseTerms<'t, S: Scalar> {
    pub reid: Var<'t, S>,
    pub style: Var<'t, S>,
    pub face: Var<'t, S>,
}

impl<'t, S: Scalar> BaseTerms<'t, S> {
    /// `reid * l1 + style * l2 + face * l3`.
    pub fn weighted(&self, w: &LossWeights) -> Result<Var<'t, S>> {
        self.reid.scale(S::lit(w.reid)).add(self.style.scale(S::lit(w.style)))?.add(self.face.scale(S::lit(w.face)))
    }
}

/// Base loss of one rendered view against its ground-truth image.
/// `image_features` are the Φ features of the image, computed once per
/// view; `masks` are its part masks and `rendered_masks` those of the
/// geometry the texture was rendered with.
#[allow(clippy::too_many_arguments)]
pub fn base_terms<'t, S: Scalar>(
    phi: &FeatureExtractor<S>,
    tape: &'t Tape<S>,
    image_features: &[Var<'t, S>],
    rendered: Var<'t, S>,
    masks: &Tensor<S>,
    rendered_masks: &Tensor<S>,
    texture: Var<'t, S>,
    face: &FaceTargets<S>,
) -> Result<BaseTerms<'t, S>> {
    let rendered_features = phi.features(tape, rendered)?;
    Ok(BaseTerms {
        reid: reid_from_features(image_features, &rendered_features)?,
        style: part_style_from_features(image_features[0], rendered_features[0], masks, rendered_masks)?,
        face: face_structure_loss(texture, face)?,
    })
}

/// Laplacian negative log-likelihood
/// `sum_{c,x,y} ln(sqrt2 * sigma) + sqrt2 * |I - I_r| / sigma`, averaged over
/// the batch. `sigma` `(B, 1, H, W)` is shared by the three channels.
pub fn uncertainty_recon_loss<'t, S: Scalar>(image: Var<'t, S>, rendered: Var<'t, S>, sigma: Var<'t, S>) -> Result<Var<'t, S>> {
    let (b, c, h, w) = image.dims4()?;
    if rendered.shape() != image.shape() || sigma.shape() != [b, 1, h, w] {
        return Err(Error::shape("uncertainty_recon_loss", format!("{:?}, {:?}, sigma {:?}", image.shape(), rendered.shape(), sigma.shape())));
    }
    let floor = S::lit(SIGMA_FLOOR);
    if let Some(s) = sigma.value().data().iter().find(|&&s| !(s >= floor)) {
        return Err(Error::contract("uncertainty_recon_loss", format!("sigma {s} below the floor {SIGMA_FLOOR}")));
    }
    let sqrt2 = S::SQRT_2();
    let s = sigma.repeat_channels(c)?;
    let residual = image.sub(rendered)?.abs();
    let nll = s.scale(sqrt2).ln().add(residual.scale(sqrt2).div(s)?)?;
    Ok(nll.sum().scale(S::lit(1.0 / b as f64)))
}

/// `||T_first - T_second||_2` per sample, averaged over the batch.
pub fn cycle_loss<'t, S: Scalar>(first: Var<'t, S>, second: Var<'t, S>) -> Result<Var<'t, S>> {
    let (b, ..) = first.dims4()?;
    let diff = first.sub(second)?;
    let mut total = diff.select_batch(0)?.norm2();
    for i in 1..b {
        total = total.add(diff.select_batch(i)?.norm2())?;
    }
    Ok(total.scale(S::lit(1.0 / b as f64)))
}

/// Renders `texture` at the novel views, re-estimates a texture from those
/// renders and compares the two. With `stop_gradient` the second estimate is
/// treated as a constant target.
pub fn cycle_consistency<'t, S: Scalar>(
    model: &Model<S>,
    tape: &'t Tape<S>,
    texture: Var<'t, S>,
    rasters: &[&RasterMap],
    parts: Var<'t, S>,
    stop_gradient: bool,
) -> Result<Var<'t, S>> {
    let novel = render_texture(texture, rasters, S::lit(BACKGROUND))?;
    let second = model.estimate_texture(tape, novel, parts)?.output.texture;
    cycle_loss(texture, if stop_gradient { second.detach() } else { second })
}

/// Every term that enters the total; absent terms are disabled by the
/// training configuration.
#[derive(Clone, Copy)]
pub struct LossTerms<'t, S: Scalar> {
    pub base_sv: BaseTerms<'t, S>,
    pub base_nv: Option<BaseTerms<'t, S>>,
    pub cycle: Option<Var<'t, S>>,
    pub url: Option<Var<'t, S>>,
    pub intermediate_sv: Option<BaseTerms<'t, S>>,
    pub intermediate_nv: Option<BaseTerms<'t, S>>,
}

/// Scalar values of every term, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reid_sv: f64,
    pub style_sv: f64,
    pub face: f64,
    pub base_sv: f64,
    pub base_nv: f64,
    pub cycle: f64,
    pub url: f64,
    pub intermediate_sv: f64,
    pub intermediate_nv: f64,
    pub w_int: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 11] =
        ["reid_sv", "style_sv", "face", "base_sv", "base_nv", "cycle", "url", "intermediate_sv", "intermediate_nv", "w_int", "total"];

    pub fn values(&self) -> [f64; 11] {
        [
            self.reid_sv,
            self.style_sv,
            self.face,
            self.base_sv,
            self.base_nv,
            self.cycle,
            self.url,
            self.intermediate_sv,
            self.intermediate_nv,
            self.w_int,
            self.total,
        ]
    }

    /// Name of the first non-finite term.
    pub fn non_finite(&self) -> Option<&'static str> {
        Self::FIELDS.iter().zip(self.values()).find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

fn scalar_of<S: Scalar>(v: Var<'_, S>) -> Result<f64> {
    Ok(v.item()?.as_f64())
}

/// `base_sv + base_nv + l4 * cycle + l5 * url + w_int * (int_sv + int_nv)`.
/// In multi-view mode the novel-view term is required.
pub fn total_loss<'t, S: Scalar>(terms: &LossTerms<'t, S>, w: &LossWeights, w_int: f64, multi_view: bool) -> Result<(Var<'t, S>, LossBreakdown)> {
    if multi_view && terms.base_nv.is_none() {
        return Err(Error::contract("total_loss", "multi-view training needs a novel-view term"));
    }
    let mut out = LossBreakdown { w_int, ..Default::default() };
    let sv = terms.base_sv.weighted(w)?;
    out.reid_sv = scalar_of(terms.base_sv.reid)?;
    out.style_sv = scalar_of(terms.base_sv.style)?;
    out.face = scalar_of(terms.base_sv.face)?;
    out.base_sv = scalar_of(sv)?;
    let mut total = sv;
    if let Some(nv) = &terms.base_nv {
        let nv = nv.weighted(w)?;
        out.base_nv = scalar_of(nv)?;
        total = total.add(nv)?;
    }
    if let Some(c) = terms.cycle {
        out.cycle = scalar_of(c)?;
        total = total.add(c.scale(S::lit(w.cycle)))?;
    }
    if let Some(u) = terms.url {
        out.url = scalar_of(u)?;
        total = total.add(u.scale(S::lit(w.url)))?;
    }
    if w_int > 0.0 {
        for (slot, term) in [(&mut out.intermediate_sv, &terms.intermediate_sv), (&mut out.intermediate_nv, &terms.intermediate_nv)] {
            if let Some(t) = term {
                let v = t.weighted(w)?;
                *slot = scalar_of(v)?;
                total = total.add(v.scale(S::lit(w_int)))?;
            }
        }
    }
    out.total = scalar_of(total)?;
    Ok((total, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, Mode};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn scalar<'t>(tape: &'t Tape<f64>, v: f64) -> Var<'t, f64> {
        tape.constant(Tensor::scalar(v))
    }

    #[test]
    fn intermediate_weight_schedule() {
        assert_eq!(intermediate_weight(0, 100), 1.0);
        assert_eq!(intermediate_weight(25, 100), 0.5);
        assert_eq!(intermediate_weight(50, 100), 0.0);
        assert_eq!(intermediate_weight(99, 100), 0.0);
        let w: Vec<_> = (0..100).map(|t| intermediate_weight(t, 100)).collect();
        assert!(w.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn reid_vanishes_on_equal_images_and_is_symmetric() {
        let phi = FeatureExtractor::default();
        let tape = Tape::inference();
        let (a, b) = (tape.constant(random(&[1, 3, 32, 16], 1)), tape.constant(random(&[1, 3, 32, 16], 2)));
        assert_eq!(reid_loss(&phi, &tape, a, a).unwrap().item().unwrap(), 0.0);
        let ab = reid_loss(&phi, &tape, a, b).unwrap().item().unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, reid_loss(&phi, &tape, b, a).unwrap().item().unwrap());
    }

    #[test]
    fn reid_matches_a_brute_force_sum_over_dumped_features() {
        let phi = FeatureExtractor::default();
        let tape = Tape::inference();
        let (a, b) = (tape.constant(random(&[2, 3, 32, 16], 3)), tape.constant(random(&[2, 3, 32, 16], 4)));
        let (fa, fb) = (phi.features(&tape, a).unwrap(), phi.features(&tape, b).unwrap());
        let mut want = 0.0;
        for (x, y) in fa.iter().zip(&fb) {
            let (x, y) = (x.value(), y.value());
            let mut s = 0.0;
            for i in 0..x.numel() {
                s += (x.data()[i] - y.data()[i]).powi(2);
            }
            want += s / x.numel() as f64;
        }
        assert_abs_diff_eq!(reid_loss(&phi, &tape, a, b).unwrap().item().unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn masks_resize_by_floor_index() {
        let m = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        assert_eq!(resize_masks(&m, 2, 2).unwrap().data(), &[0.0, 2.0, 8.0, 10.0]);
        assert_eq!(resize_masks(&m, 4, 4).unwrap(), m);
    }

    #[test]
    fn style_of_identical_inputs_is_zero_and_empty_parts_contribute_nothing() {
        let tape = Tape::inference();
        let f = tape.constant(random(&[1, 4, 4, 4], 5)).relu();
        let g = tape.constant(random(&[1, 4, 4, 4], 6)).relu();
        let masks = Tensor::from_fn(&[1, 2, 8, 8], |i| if (i / 8) % 8 < 4 && i < 64 { 1.0 } else { 0.0 });
        assert_eq!(part_style_from_features(f, f, &masks, &masks).unwrap().item().unwrap(), 0.0);
        let with_empty = Tensor::from_fn(&[1, 3, 8, 8], |i| if i < 128 { masks.data()[i] } else { 0.0 });
        let a = part_style_from_features(f, g, &masks, &masks).unwrap().item().unwrap();
        let b = part_style_from_features(f, g, &with_empty, &with_empty).unwrap().item().unwrap();
        assert!(a > 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn style_with_full_mask_is_the_squared_gram_difference() {
        // 1x2x2x2 features: x = [[1,2],[3,4]], [[0,1],[1,0]]; y = 0.
        let tape = Tape::inference();
        let x = tape.constant(Tensor::new(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let full = Tensor::ones(&[1, 1, 2, 2]);
        // G = [[30, 5], [5, 2]] / 8.
        let want = (30.0f64.powi(2) + 2.0 * 25.0 + 4.0) / 64.0;
        let got = part_style_from_features(x, y, &full, &full).unwrap().item().unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    fn bank_of(textures: Vec<Tensor<f64>>) -> FaceTargets<f64> {
        let n = textures.len();
        let bank = FaceBank { seeds: (0..n as u64).collect(), textures, mask: crate::data::face_mask(&AtlasLayout::default()) };
        FaceTargets::new(&bank, &AtlasLayout::default()).unwrap()
    }

    #[test]
    fn face_loss_against_itself_is_minus_one() {
        let t = random(&[3, 128, 128], 7);
        let targets = bank_of(vec![t.clone()]);
        let tape = Tape::inference();
        let v = tape.constant(t.reshape(&[1, 3, 128, 128]).unwrap());
        assert_abs_diff_eq!(face_structure_loss(v, &targets).unwrap().item().unwrap(), -1.0, epsilon = 1e-9);
    }

    #[test]
    fn face_loss_is_the_mean_over_the_bank_and_bounded() {
        let (f1, f2) = (random(&[3, 128, 128], 8), random(&[3, 128, 128], 9));
        let tape = Tape::inference();
        let t = tape.constant(random(&[2, 3, 128, 128], 10));
        let single = |f: &Tensor<f64>| face_structure_loss(t, &bank_of(vec![f.clone()])).unwrap().item().unwrap();
        let both = face_structure_loss(t, &bank_of(vec![f1.clone(), f2.clone()])).unwrap().item().unwrap();
        assert_abs_diff_eq!(both, 0.5 * (single(&f1) + single(&f2)), epsilon = 1e-12);
        assert!((-1.0..=1.0).contains(&both));
    }

    #[test]
    fn empty_bank_is_rejected() {
        let bank = FaceBank { seeds: vec![], textures: vec![], mask: crate::data::face_mask(&AtlasLayout::default()) };
        assert!(matches!(FaceTargets::<f64>::new(&bank, &AtlasLayout::default()), Err(Error::Contract { .. })));
    }

    #[test]
    fn base_weights_combine_linearly() {
        let tape = Tape::inference();
        let terms = BaseTerms { reid: scalar(&tape, 0.2), style: scalar(&tape, 3.0), face: scalar(&tape, -0.5) };
        let w = LossWeights::default();
        assert_abs_diff_eq!(terms.weighted(&w).unwrap().item().unwrap(), 5000.0 * 0.2 + 0.4 * 3.0 + 0.01 * -0.5, epsilon = 1e-9);
        let doubled = LossWeights { reid: 2.0 * w.reid, ..w };
        let delta = terms.weighted(&doubled).unwrap().item().unwrap() - terms.weighted(&w).unwrap().item().unwrap();
        assert_abs_diff_eq!(delta, 5000.0 * 0.2, epsilon = 1e-9);
        let zero = BaseTerms { reid: scalar(&tape, 0.0), style: scalar(&tape, 0.0), face: scalar(&tape, 0.0) };
        assert_eq!(zero.weighted(&w).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn url_minimizer_is_sqrt_two_times_the_residual() {
        let tape = Tape::inference();
        let r = 0.25;
        let nll = |s: f64| {
            let img = tape.constant(Tensor::full(&[1, 1, 1, 1], r));
            let zero = tape.constant(Tensor::zeros(&[1, 1, 1, 1]));
            uncertainty_recon_loss(img, zero, tape.constant(Tensor::full(&[1, 1, 1, 1], s))).unwrap().item().unwrap()
        };
        let best = (0..=99_990).map(|i| 1e-3 + i as f64 * 1e-4).min_by(|a, b| nll(*a).total_cmp(&nll(*b))).unwrap();
        assert!((best - std::f64::consts::SQRT_2 * r).abs() <= 1e-3, "{best}");
    }

    #[test]
    fn url_is_zero_at_unit_scale_and_grows_with_sigma_at_zero_residual() {
        let tape = Tape::inference();
        let img = tape.constant(random(&[1, 3, 4, 4], 11));
        let s = |v: f64| tape.constant(Tensor::full(&[1, 1, 4, 4], v));
        assert_abs_diff_eq!(uncertainty_recon_loss(img, img, s(1.0 / 2f64.sqrt())).unwrap().item().unwrap(), 0.0, epsilon = 1e-12);
        let (a, b) = (uncertainty_recon_loss(img, img, s(0.5)).unwrap(), uncertainty_recon_loss(img, img, s(0.6)).unwrap());
        assert!(b.item().unwrap() > a.item().unwrap());
        assert!(matches!(uncertainty_recon_loss(img, img, s(1e-4)), Err(Error::Contract { .. })));
    }

    #[test]
    fn url_sigma_gradient_vanishes_at_the_optimum() {
        for r in [0.01, 0.1, 0.5, 1.0] {
            let tape = Tape::new(Mode::Train);
            let img = tape.constant(Tensor::full(&[1, 3, 1, 1], r));
            let zero = tape.constant(Tensor::zeros(&[1, 3, 1, 1]));
            let sigma = tape.leaf(Tensor::full(&[1, 1, 1, 1], std::f64::consts::SQRT_2 * r));
            let loss = uncertainty_recon_loss(img, zero, sigma).unwrap();
            let g = tape.backward(loss).unwrap().get(sigma).unwrap().data()[0];
            assert!(g.abs() <= 1e-6, "r = {r}: {g}");
        }
    }

    #[test]
    fn cycle_loss_is_a_per_sample_norm() {
        let tape = Tape::inference();
        let t = random(&[2, 3, 8, 8], 12);
        let mut u = t.clone();
        u.data_mut()[5] += 0.3;
        let (a, b) = (tape.constant(t), tape.constant(u));
        assert_eq!(cycle_loss(a, a).unwrap().item().unwrap(), 0.0);
        assert_abs_diff_eq!(cycle_loss(a, b).unwrap().item().unwrap(), 0.3 / 2.0, epsilon = 1e-12);
        let single = tape.constant(random(&[1, 3, 8, 8], 13));
        let mut moved = single.value();
        moved.data_mut()[0] -= 0.3;
        assert_abs_diff_eq!(cycle_loss(single, tape.constant(moved)).unwrap().item().unwrap(), 0.3, epsilon = 1e-12);
    }

    fn base<'t>(tape: &'t Tape<f64>, v: f64) -> BaseTerms<'t, f64> {
        // reid carries the whole value after weighting by 1/5000.
        BaseTerms { reid: scalar(tape, v / 5000.0), style: scalar(tape, 0.0), face: scalar(tape, 0.0) }
    }

    #[test]
    fn total_uses_the_documented_coefficients() {
        let tape = Tape::inference();
        let (p, q, r, s) = (1.5, 2.5, 4.0, 30.0);
        let terms = LossTerms {
            base_sv: base(&tape, p),
            base_nv: Some(base(&tape, q)),
            cycle: Some(scalar(&tape, r)),
            url: Some(scalar(&tape, s)),
            intermediate_sv: Some(base(&tape, 100.0)),
            intermediate_nv: None,
        };
        let (total, breakdown) = total_loss(&terms, &LossWeights::default(), 0.0, true).unwrap();
        assert_abs_diff_eq!(total.item().unwrap(), p + q + 0.1 * r + 0.001 * s, epsilon = 1e-9);
        assert_eq!(breakdown.total, total.item().unwrap());
        let (with_int, b2) = total_loss(&terms, &LossWeights::default(), 0.25, true).unwrap();
        assert_abs_diff_eq!(with_int.item().unwrap() - total.item().unwrap(), 25.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b2.intermediate_sv, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn single_view_drops_novel_terms_and_multi_view_requires_them() {
        let tape = Tape::inference();
        let terms = LossTerms { base_sv: base(&tape, 2.0), base_nv: None, cycle: None, url: None, intermediate_sv: None, intermediate_nv: None };
        assert!(matches!(total_loss(&terms, &LossWeights::default(), 0.0, true), Err(Error::Contract { .. })));
        let (t, b) = total_loss(&terms, &LossWeights::default(), 0.0, false).unwrap();
        assert_abs_diff_eq!(t.item().unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!((b.base_nv, b.cycle), (0.0, 0.0));
        let zero = LossTerms { base_sv: base(&tape, 0.0), ..terms };
        assert_eq!(total_loss(&zero, &LossWeights::default(), 1.0, false).unwrap().0.item().unwrap(), 0.0);
    }

    #[test]
    fn breakdown_names_the_first_non_finite_term() {
        let b = LossBreakdown { url: f64::NAN, total: f64::NAN, ..Default::default() };
        assert_eq!(b.non_finite(), Some("url"));
        assert_eq!(LossBreakdown::default().non_finite(), None);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let phi = FeatureExtractor::default();
        let target = random(&[1, 3, 8, 8], 14);
        let masks = Tensor::from_fn(&[1, 2, 8, 8], |i| if (i % 64) % 8 < 4 { (i / 64) as f64 } else { 1.0 - (i / 64) as f64 });
        let sigma = Tensor::from_fn(&[1, 1, 8, 8], |i| 0.3 + (i % 5) as f64 * 0.1);
        let x = random(&[1, 3, 8, 8], 15).map(|v| 0.9 * v);
        let tol = 1e-4;
        let reid = finite_diff_check(|tape, x| reid_loss(&phi, tape, tape.constant(target.clone()), x), &x, 1e-6).unwrap();
        assert!(reid.max_rel_error <= tol, "reid {}", reid.max_rel_error);
        let style = finite_diff_check(|tape, x| part_style_loss(&phi, tape, tape.constant(target.clone()), x, &masks, &masks), &x, 1e-6).unwrap();
        assert!(style.max_rel_error <= tol, "style {}", style.max_rel_error);
        let url =
            finite_diff_check(|tape, x| uncertainty_recon_loss(tape.constant(target.clone()), x, tape.constant(sigma.clone())), &x, 1e-6).unwrap();
        assert!(url.max_rel_error <= tol, "url {}", url.max_rel_error);
        let url_sigma =
            finite_diff_check(|tape, s| uncertainty_recon_loss(tape.constant(target.clone()), tape.constant(x.clone()), s), &sigma, 1e-6).unwrap();
        assert!(url_sigma.max_rel_error <= tol, "url sigma {}", url_sigma.max_rel_error);
        let other = random(&[1, 3, 8, 8], 16);
        let cyc = finite_diff_check(|tape, x| cycle_loss(x, tape.constant(other.clone())), &x, 1e-6).unwrap();
        assert!(cyc.max_rel_error <= tol, "cycle {}", cyc.max_rel_error);
    }

    #[test]
    fn face_loss_gradient_matches_finite_differences() {
        let f = random(&[3, 128, 128], 17);
        let targets =
            FaceTargets { window: (0, 0, 12, 12), crops: vec![crop_tensor(&f.reshape(&[1, 3, 128, 128]).unwrap(), (4, 76, 12, 12)).unwrap()] };
        let x = random(&[1, 3, 12, 12], 18).map(|v| 0.8 * v);
        let check = finite_diff_check(|_, x| face_structure_loss(x, &targets), &x, 1e-4).unwrap();
        assert!(check.max_rel_error <= 1e-4, "{}", check.max_rel_error);
    }
}
