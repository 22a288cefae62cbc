use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::data::{face_bank, AtlasLayout, SampleIdentity, SampleView, NUM_PARTS};
use crate::error::{Error, Result};
use crate::losses::{
    base_terms, cycle_consistency, intermediate_weight, total_loss, uncertainty_recon_loss, BaseTerms, FaceTargets, FeatureExtractor, LossBreakdown,
    LossTerms,
};
use crate::model::Model;
use crate::render::io::write_png;
use crate::render::{rasterize, render_part_masks, render_texture, RasterMap, BACKGROUND};
use crate::scalar::Scalar;
use crate::tensor::{AdamState, Mode, Tape, Tensor, Var};

/// Seed of the face bank shared by every run.
pub const FACE_BANK_SEED: u64 = 0xface;

/// One training sample: an input view and, in multi-view mode, a second
/// view of the same identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub identity: usize,
    pub input: usize,
    pub novel: Option<usize>,
}

/// Geometry a prediction is rendered with: the stored raster, or a
/// re-rasterized one under a jittered camera.
struct RenderTarget<S: Scalar> {
    raster: Option<RasterMap>,
    masks: Option<Tensor<S>>,
}

pub struct Trainer<S: Scalar> {
    pub config: RunConfig,
    pub model: Model<S>,
    pub adam: AdamState<S>,
    pub step: u64,
    phi: FeatureExtractor<S>,
    face: FaceTargets<S>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(), config.seed)?;
        let adam = AdamState::new(config.adam(), &model.store);
        Self::assemble(config, model, adam, 0)
    }

    pub fn from_checkpoint(ck: Checkpoint<S>) -> Result<Self> {
        Self::assemble(ck.config, ck.model, ck.adam, ck.step)
    }

    fn assemble(config: RunConfig, model: Model<S>, adam: AdamState<S>, step: u64) -> Result<Self> {
        let face = FaceTargets::new(&face_bank(FACE_BANK_SEED, config.face_bank), &AtlasLayout::default())?;
        Ok(Self { config, model, adam, step, phi: FeatureExtractor::default(), face })
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint { config: self.config.clone(), model: self.model.clone(), adam: self.adam.clone(), step: self.step }
    }

    pub fn steps_per_epoch(&self, identities: &[SampleIdentity<S>]) -> usize {
        let samples: usize = identities.iter().map(|i| i.views.len()).sum();
        samples.div_ceil(self.config.batch)
    }

    /// Steps of the whole run, honouring `max_steps`.
    pub fn total_steps(&self, identities: &[SampleIdentity<S>]) -> usize {
        let full = self.config.epochs * self.steps_per_epoch(identities);
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    /// Shuffled input views of one epoch, each with a uniformly drawn second
    /// view of the same identity in multi-view mode.
    pub fn schedule(&self, identities: &[SampleIdentity<S>], epoch: usize) -> Vec<Pair> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut pairs: Vec<Pair> =
            identities.iter().enumerate().flat_map(|(i, id)| (0..id.views.len()).map(move |v| Pair { identity: i, input: v, novel: None })).collect();
        pairs.shuffle(&mut rng);
        if self.config.multi_view {
            for p in &mut pairs {
                let n = identities[p.identity].views.len();
                if n > 1 {
                    let k = rng.gen_range(0..n - 1);
                    p.novel = Some(if k >= p.input { k + 1 } else { k });
                }
            }
        }
        pairs
    }

    /// One optimizer step on `pairs`; `total` is the run length used by the
    /// intermediate-branch schedule.
    pub fn train_step(&mut self, identities: &[SampleIdentity<S>], pairs: &[Pair], total: usize) -> Result<LossBreakdown> {
        if pairs.is_empty() {
            return Err(Error::contract("train_step", "empty batch"));
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(self.step.wrapping_mul(0x2545_f491_4f6c_dd1d)));
        let view = |p: &Pair, k: usize| &identities[p.identity].views[k];
        let novel =
            |p: &Pair| -> Result<usize> { p.novel.ok_or_else(|| Error::contract("train_step", "multi-view training needs a novel view per sample")) };

        let stack =
            |f: &dyn Fn(&Pair) -> Result<Tensor<S>>| -> Result<Tensor<S>> { Tensor::stack_batch(&pairs.iter().map(f).collect::<Result<Vec<_>>>()?) };
        let jitter = |k: &dyn Fn(&Pair) -> Result<usize>, rng: &mut ChaCha8Rng| -> Result<Vec<RenderTarget<S>>> {
            pairs
                .iter()
                .map(|p| {
                    let v = view(p, k(p)?);
                    jitter_target(&identities[p.identity], v, cfg.camera_jitter_deg, rng)
                })
                .collect()
        };

        let sv_targets = jitter(&|p| Ok(p.input), &mut rng)?;
        let nv_targets = if cfg.multi_view { Some(jitter(&novel, &mut rng)?) } else { None };
        let w_int = if self.model.config.refine == crate::model::RefineMode::None { 0.0 } else { intermediate_weight(self.step as usize, total) };

        let (grads, updates, breakdown) = {
            let tape = Tape::new(Mode::Train);
            let image_t = stack(&|p| Ok(view(p, p.input).image.clone()))?;
            let image = tape.constant(image_t);
            let parts = tape.constant(stack(&|p| Ok(view(p, p.input).parts.clone()))?);
            let est = self.model.estimate_texture(&tape, image, parts)?;

            let sv_masks = stack(&|p| Ok(view(p, p.input).masks.clone()))?;
            let sv_rmasks = rendered_masks(&sv_targets, &sv_masks)?;
            let sv_rasters = rasters(pairs, &sv_targets, |p| view(p, p.input));
            let sv_feats = self.phi.features(&tape, image)?;

            let branch = |texture, rasters: &[&RasterMap], feats: &Vec<_>, masks: &Tensor<S>, rmasks: &Tensor<S>| {
                render_branch(&self.phi, &tape, &self.face, texture, rasters, feats, masks, rmasks)
            };
            let (base_sv, rendered_sv) = branch(est.output.texture, &sv_rasters, &sv_feats, &sv_masks, &sv_rmasks)?;

            let mut base_nv: Option<BaseTerms<'_, S>> = None;
            let mut cycle = None;
            let mut intermediate_nv = None;
            let nv = match &nv_targets {
                Some(targets) => {
                    let image_nv = tape.constant(stack(&|p| Ok(view(p, novel(p)?).image.clone()))?);
                    let masks = stack(&|p| Ok(view(p, novel(p)?).masks.clone()))?;
                    let rmasks = rendered_masks(targets, &masks)?;
                    let rs = rasters(pairs, targets, |p| view(p, p.novel.expect("checked")));
                    let feats = self.phi.features(&tape, image_nv)?;
                    base_nv = Some(branch(est.output.texture, &rs, &feats, &masks, &rmasks)?.0);
                    if cfg.use_cycle {
                        let parts_nv = tape.constant(stack(&|p| Ok(view(p, novel(p)?).parts.clone()))?);
                        let stored: Vec<&RasterMap> = pairs.iter().map(|p| &view(p, p.novel.expect("checked")).raster).collect();
                        cycle = Some(cycle_consistency(&self.model, &tape, est.output.texture, &stored, parts_nv, cfg.cycle_stopgrad)?);
                    }
                    Some((rs, feats, masks, rmasks))
                }
                None => None,
            };
            let url = if cfg.use_url {
                let sigma = self.model.confidence_forward(&tape, image)?;
                Some(uncertainty_recon_loss(image, rendered_sv, sigma)?)
            } else {
                None
            };
            let mut intermediate_sv = None;
            if est.refined && w_int > 0.0 {
                intermediate_sv = Some(branch(est.intermediate.texture, &sv_rasters, &sv_feats, &sv_masks, &sv_rmasks)?.0);
                if let Some((rs, feats, masks, rmasks)) = &nv {
                    intermediate_nv = Some(branch(est.intermediate.texture, rs, feats, masks, rmasks)?.0);
                }
            }
            let terms = LossTerms { base_sv, base_nv, cycle, url, intermediate_sv, intermediate_nv };
            let (total_var, breakdown) = total_loss(&terms, &cfg.weights, w_int, cfg.multi_view)?;
            if let Some(name) = breakdown.non_finite() {
                return Err(Error::NonFinite { what: format!("loss term {name} at step {}", self.step) });
            }
            let grads = tape.backward(total_var)?;
            (grads, tape.take_stat_updates(), breakdown)
        };
        self.model.store.set_grads(&grads);
        self.adam.step(&mut self.model.store)?;
        self.model.store.zero_grads();
        self.model.store.apply_stat_updates(updates)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// Trains for the configured budget. Appends one CSV row per step to
    /// `log` and writes validation renders to `val_dir` every `val_every`
    /// steps.
    pub fn fit(&mut self, identities: &[SampleIdentity<S>], log: Option<&Path>, val_dir: Option<&Path>) -> Result<Vec<LossBreakdown>> {
        if identities.is_empty() {
            return Err(Error::Config("no training identities".into()));
        }
        let total = self.total_steps(identities);
        let per_epoch = self.steps_per_epoch(identities);
        let mut writer = match log {
            Some(path) => {
                let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("csv", format!("{}: {e}", path.display())))?;
                let mut header = vec!["step".to_string(), "epoch".to_string()];
                header.extend(LossBreakdown::FIELDS.iter().map(|s| s.to_string()));
                w.write_record(&header).map_err(|e| Error::format("csv", e.to_string()))?;
                Some(w)
            }
            None => None,
        };
        let mut history = Vec::new();
        while (self.step as usize) < total {
            let epoch = self.step as usize / per_epoch;
            let offset = (self.step as usize % per_epoch) * self.config.batch;
            let pairs = self.schedule(identities, epoch);
            let end = (offset + self.config.batch).min(pairs.len());
            let breakdown = self.train_step(identities, &pairs[offset..end], total)?;
            log::debug!("step {} total {:.5}", self.step, breakdown.total);
            if let Some(w) = writer.as_mut() {
                let mut row = vec![self.step.to_string(), epoch.to_string()];
                row.extend(breakdown.values().iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(|e| Error::format("csv", e.to_string()))?;
                w.flush().map_err(|e| Error::io(log.expect("writer implies path"), e))?;
            }
            if let Some(dir) = val_dir {
                let every = self.config.val_every;
                if every > 0 && ((self.step as usize).is_multiple_of(every) || self.step as usize == total) {
                    self.validation_render(&identities[0], dir)?;
                }
            }
            history.push(breakdown);
        }
        Ok(history)
    }

    /// Writes the texture estimated from view 0 and its same-view render.
    pub fn validation_render(&self, identity: &SampleIdentity<S>, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let view = &identity.views[0];
        let tape = Tape::inference();
        let est = self.model.estimate_texture(&tape, tape.constant(view.image.clone()), tape.constant(view.parts.clone()))?;
        let rendered = render_texture(est.output.texture, &[&view.raster], S::lit(BACKGROUND))?;
        write_png(&dir.join(format!("step{:06}_texture.png", self.step)), &est.output.texture.value())?;
        write_png(&dir.join(format!("step{:06}_render.png", self.step)), &rendered.value())
    }
}

fn jitter_target<S: Scalar>(identity: &SampleIdentity<S>, view: &SampleView<S>, jitter_deg: f64, rng: &mut ChaCha8Rng) -> Result<RenderTarget<S>> {
    if jitter_deg == 0.0 {
        return Ok(RenderTarget { raster: None, masks: None });
    }
    let j = jitter_deg.to_radians();
    let mut camera = view.camera.clone();
    camera.azimuth += rng.gen_range(-j..=j);
    camera.elevation += rng.gen_range(-j..=j);
    let raster = rasterize(&identity.mesh, &view.pose, &camera)?;
    let (h, w) = (raster.height, raster.width);
    let masks = render_part_masks::<S>(&raster, NUM_PARTS).reshape(&[1, NUM_PARTS, h, w])?;
    Ok(RenderTarget { raster: Some(raster), masks: Some(masks) })
}

/// Renders `texture` with `rasters` and scores it against one view.
#[allow(clippy::too_many_arguments)]
fn render_branch<'t, S: Scalar>(
    phi: &FeatureExtractor<S>,
    tape: &'t Tape<S>,
    face: &FaceTargets<S>,
    texture: Var<'t, S>,
    rasters: &[&RasterMap],
    feats: &[Var<'t, S>],
    masks: &Tensor<S>,
    rmasks: &Tensor<S>,
) -> Result<(BaseTerms<'t, S>, Var<'t, S>)> {
    let rendered = render_texture(texture, rasters, S::lit(BACKGROUND))?;
    Ok((base_terms(phi, tape, feats, rendered, masks, rmasks, texture, face)?, rendered))
}

fn rendered_masks<S: Scalar>(targets: &[RenderTarget<S>], stored: &Tensor<S>) -> Result<Tensor<S>> {
    if targets.iter().all(|t| t.masks.is_none()) {
        return Ok(stored.clone());
    }
    let parts = targets
        .iter()
        .enumerate()
        .map(|(i, t)| match &t.masks {
            Some(m) => Ok(m.clone()),
            None => stored.select_batch(i),
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_batch(&parts)
}

fn rasters<'a, S: Scalar>(pairs: &[Pair], targets: &'a [RenderTarget<S>], stored: impl Fn(&Pair) -> &'a SampleView<S>) -> Vec<&'a RasterMap> {
    pairs.iter().zip(targets).map(|(p, t)| t.raster.as_ref().unwrap_or_else(|| &stored(p).raster)).collect()
}
