use std::fs;
use std::path::Path;

use super::ablate::{table_values, AblationTable, TableEntry, Variant};
use super::config::RunConfig;
use super::train::Trainer;
use crate::data::SampleIdentity;
use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, LossBreakdown};
use crate::metrics::{evaluate_model, MetricReport};
use crate::model::Model;
use crate::render::io::write_json;
use crate::scalar::Scalar;

/// Trains `config` on `train`. With `out`, writes `config.json`,
/// `loss.csv`, validation renders under `val/` and `checkpoint.txrf`.
pub fn train_run<S: Scalar>(config: &RunConfig, train: &[SampleIdentity<S>], out: Option<&Path>) -> Result<(Trainer<S>, Vec<LossBreakdown>)> {
    let mut trainer = Trainer::new(config.clone())?;
    let history = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_json(&dir.join("config.json"), config)?;
            let history = trainer.fit(train, Some(&dir.join("loss.csv")), Some(&dir.join("val")))?;
            trainer.checkpoint().save(&dir.join("checkpoint.txrf"))?;
            history
        }
        None => trainer.fit(train, None, None)?,
    };
    Ok((trainer, history))
}

/// Evaluates `model` on `identities` and labels the report with the
/// fingerprint of the configuration that trained it.
pub fn evaluate<S: Scalar>(model: &Model<S>, config: &RunConfig, identities: &[SampleIdentity<S>], split: &str) -> Result<MetricReport> {
    let rows = evaluate_model(model, &FeatureExtractor::default(), identities)?;
    let novel = identities.first().map_or(0, |i| i.views.len().saturating_sub(1));
    MetricReport::new(&config.fingerprint(), split, rows, novel)
}

/// Trains every variant under every seed and evaluates on `test`. Each run
/// with `out` gets its own `<out>/<label>/seed<k>` directory.
pub fn run_ablation<S: Scalar>(
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    train: &[SampleIdentity<S>],
    test: &[SampleIdentity<S>],
    out: Option<&Path>,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for &variant in variants {
        for &seed in seeds {
            let config = variant.config(base, seed);
            let dir = out.map(|o| o.join(variant.label().replace([' ', '+'], "_")).join(format!("seed{seed}")));
            log::info!("{} seed {seed}: training {}", variant.label(), config.fingerprint());
            let (trainer, _) = train_run(&config, train, dir.as_deref())?;
            let report = evaluate(&trainer.model, &config, test, "test")?;
            if let Some(d) = &dir {
                report.write_json(&d.join("report.json"))?;
            }
            table.entries.push(TableEntry {
                row: variant.label().into(),
                fingerprint: report.fingerprint,
                seed,
                values: table_values(&report.means),
            });
        }
    }
    Ok(table)
}
