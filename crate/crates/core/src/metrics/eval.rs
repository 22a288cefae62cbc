use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cossim, masked_texture_mse, pdist, psnr, ssim_value};
use crate::data::{SampleIdentity, SampleView};
use crate::error::{Error, Result};
use crate::losses::FeatureExtractor;
use crate::model::Model;
use crate::render::{io, render_texture, texel_surface, texel_visibility, BACKGROUND};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Metrics of one input view. Novel-view columns average over every other
/// view of the same identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub identity: String,
    pub view: usize,
    pub ssim_sv: f64,
    pub ssim_nv: f64,
    pub psnr_sv: f64,
    pub psnr_nv: f64,
    pub cossim_sv: f64,
    pub cossim_nv: f64,
    pub pdist_sv: f64,
    pub pdist_nv: f64,
    /// Texture error on texels hidden in the input view.
    pub invisible_mse: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub ssim_sv: f64,
    pub ssim_nv: f64,
    pub psnr_sv: f64,
    pub psnr_nv: f64,
    pub cossim_sv: f64,
    pub cossim_nv: f64,
    pub pdist_sv: f64,
    pub pdist_nv: f64,
    pub invisible_mse: f64,
}

impl MetricMeans {
    pub fn of(rows: &[SampleMetrics]) -> Self {
        let n = rows.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            ssim_sv: mean(|r| r.ssim_sv),
            ssim_nv: mean(|r| r.ssim_nv),
            psnr_sv: mean(|r| r.psnr_sv),
            psnr_nv: mean(|r| r.psnr_nv),
            cossim_sv: mean(|r| r.cossim_sv),
            cossim_nv: mean(|r| r.cossim_nv),
            pdist_sv: mean(|r| r.pdist_sv),
            pdist_nv: mean(|r| r.pdist_nv),
            invisible_mse: mean(|r| r.invisible_mse),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Fingerprint of the configuration that produced the evaluated weights.
    pub fingerprint: String,
    pub split: String,
    pub identities: usize,
    pub samples: usize,
    /// Novel views compared per input view.
    pub novel_views: usize,
    pub means: MetricMeans,
    pub rows: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn new(fingerprint: &str, split: &str, rows: Vec<SampleMetrics>, novel_views: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("metric report", "no samples were evaluated"));
        }
        let mut ids: Vec<&str> = rows.iter().map(|r| r.identity.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(Self {
            fingerprint: fingerprint.to_string(),
            split: split.to_string(),
            identities: ids.len(),
            samples: rows.len(),
            novel_views,
            means: MetricMeans::of(&rows),
            rows,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    /// Per-sample rows as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

pub fn write_rows(path: &Path, rows: &[SampleMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<SampleMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("csv", format!("{}: {other:?}", path.display())),
    }
}

/// Evaluates a texture estimator on every view of every identity: the
/// estimate from view `v` is rendered at `v` (same view) and at every other
/// view `k` (novel views) and compared with the stored images.
pub fn evaluate_sv_nv<S, F>(identities: &[SampleIdentity<S>], phi: &FeatureExtractor<S>, mut estimate: F) -> Result<Vec<SampleMetrics>>
where
    S: Scalar,
    F: FnMut(&SampleIdentity<S>, &SampleView<S>) -> Result<Tensor<S>>,
{
    let mut rows = Vec::new();
    for identity in identities {
        if identity.views.len() < 2 {
            return Err(Error::contract("evaluate_sv_nv", format!("identity {} has {} views; need at least 2", identity.id, identity.views.len())));
        }
        let surface = texel_surface(&identity.mesh);
        for input in &identity.views {
            let texture = estimate(identity, input)?;
            if texture.shape() != identity.texture.shape() {
                return Err(Error::shape("evaluate_sv_nv", format!("estimate {:?}, expected {:?}", texture.shape(), identity.texture.shape())));
            }
            let visible = texel_visibility(&identity.mesh, &surface, &input.pose, &input.camera, &input.raster)?;
            let hidden: Vec<bool> = surface.iter().zip(&visible).map(|(s, &v)| s.is_some() && !v).collect();
            let invisible_mse = masked_texture_mse(&texture, &identity.texture, &hidden)?.unwrap_or(0.0);

            let tape = Tape::inference();
            let t = tape.constant(texture);
            let mut sv = [0.0; 4];
            let mut nv = [0.0; 4];
            for view in &identity.views {
                let rendered = render_texture(t, &[&view.raster], S::lit(BACKGROUND))?.value();
                let m = [
                    ssim_value(&rendered, &view.image)?,
                    psnr(&rendered, &view.image)?,
                    cossim(phi, &rendered, &view.image)?,
                    pdist(phi, &rendered, &view.image)?,
                ];
                let slot = if view.index == input.index { &mut sv } else { &mut nv };
                slot.iter_mut().zip(m).for_each(|(s, v)| *s += v);
            }
            let k = (identity.views.len() - 1) as f64;
            rows.push(SampleMetrics {
                identity: identity.id.clone(),
                view: input.index,
                ssim_sv: sv[0],
                psnr_sv: sv[1],
                cossim_sv: sv[2],
                pdist_sv: sv[3],
                ssim_nv: nv[0] / k,
                psnr_nv: nv[1] / k,
                cossim_nv: nv[2] / k,
                pdist_nv: nv[3] / k,
                invisible_mse,
            });
        }
    }
    Ok(rows)
}

/// [`evaluate_sv_nv`] with the model's final texture in inference mode.
pub fn evaluate_model<S: Scalar>(model: &Model<S>, phi: &FeatureExtractor<S>, identities: &[SampleIdentity<S>]) -> Result<Vec<SampleMetrics>> {
    evaluate_sv_nv(identities, phi, |_, view| {
        let tape = Tape::inference();
        let est = model.estimate_texture(&tape, tape.constant(view.image.clone()), tape.constant(view.parts.clone()))?;
        Ok(est.output.texture.value())
    })
}
