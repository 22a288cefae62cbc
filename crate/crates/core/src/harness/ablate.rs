use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricMeans;

/// Ablation variants, each a switch on top of the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    ConvRefine,
    DeformableRefine,
    Url,
    Cycle,
    /// Baseline trained without the second view.
    SingleView,
}

impl Variant {
    /// Rows of the ablation table, in order.
    pub const TABLE: [Variant; 5] = [Variant::Baseline, Variant::ConvRefine, Variant::DeformableRefine, Variant::Url, Variant::Cycle];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "BL",
            Variant::ConvRefine => "BL+Conv Refine",
            Variant::DeformableRefine => "BL+Deformable Refine",
            Variant::Url => "BL+URL",
            Variant::Cycle => "BL+Cycle",
            Variant::SingleView => "BL single-view",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::TABLE.into_iter().chain([Variant::SingleView]).find(|v| v.label() == s)
    }

    /// `base` with the variant's switches; `seed` replaces the run seed.
    pub fn config(self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = RunConfig { seed, multi_view: true, use_url: false, use_cycle: false, use_refine: false, conv_refine: false, ..base.clone() };
        match self {
            Variant::Baseline => {}
            Variant::ConvRefine => {
                c.use_refine = true;
                c.conv_refine = true;
            }
            Variant::DeformableRefine => c.use_refine = true,
            Variant::Url => c.use_url = true,
            Variant::Cycle => c.use_cycle = true,
            Variant::SingleView => c.multi_view = false,
        }
        c
    }
}

/// Metric columns of the table.
pub const TABLE_METRICS: [&str; 6] = ["ssim_sv", "ssim_nv", "pdist_sv", "pdist_nv", "cossim_sv", "cossim_nv"];

pub fn table_values(m: &MetricMeans) -> [f64; 6] {
    [m.ssim_sv, m.ssim_nv, m.pdist_sv, m.pdist_nv, m.cossim_sv, m.cossim_nv]
}

/// One variant evaluated under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub row: String,
    pub fingerprint: String,
    pub seed: u64,
    pub values: [f64; 6],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub entries: Vec<TableEntry>,
}

impl AblationTable {
    /// Row labels in first-seen order.
    pub fn rows(&self) -> Vec<&str> {
        let mut rows: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !rows.contains(&e.row.as_str()) {
                rows.push(&e.row);
            }
        }
        rows
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = Vec::new();
        for e in &self.entries {
            if !seeds.contains(&e.seed) {
                seeds.push(e.seed);
            }
        }
        seeds
    }

    pub fn entry(&self, row: &str, seed: u64) -> Option<&TableEntry> {
        self.entries.iter().find(|e| e.row == row && e.seed == seed)
    }

    /// Mean over seeds of each metric for `row`.
    pub fn mean(&self, row: &str) -> Option<[f64; 6]> {
        let es: Vec<_> = self.entries.iter().filter(|e| e.row == row).collect();
        if es.is_empty() {
            return None;
        }
        let mut out = [0.0; 6];
        for e in &es {
            out.iter_mut().zip(e.values).for_each(|(o, v)| *o += v);
        }
        Some(out.map(|v| v / es.len() as f64))
    }

    /// One line per row and seed with the fingerprint, followed by one
    /// `mean` line per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("csv", format!("{}: {e}", path.display())))?;
        let fail = |e: csv::Error| Error::format("csv", e.to_string());
        let mut header = vec!["row", "fingerprint", "seed"];
        header.extend(TABLE_METRICS);
        w.write_record(&header).map_err(fail)?;
        for e in &self.entries {
            let mut rec = vec![e.row.clone(), e.fingerprint.clone(), e.seed.to_string()];
            rec.extend(e.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(fail)?;
        }
        for row in self.rows() {
            let mut rec = vec![row.to_string(), String::new(), "mean".to_string()];
            rec.extend(self.mean(row).expect("row exists").iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(fail)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`AblationTable::write_csv`]; `mean` lines
    /// are checked against the recomputed means.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("csv", format!("{}: {e}", path.display())))?;
        let mut table = Self::default();
        let mut means = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format("csv", e.to_string()))?;
            if rec.len() != 3 + TABLE_METRICS.len() {
                return Err(Error::format("ablation table", format!("{} fields in {rec:?}", rec.len())));
            }
            let mut values = [0.0; 6];
            for (v, s) in values.iter_mut().zip(rec.iter().skip(3)) {
                *v = s.parse().map_err(|_| Error::format("ablation table", format!("bad number {s:?}")))?;
            }
            if &rec[2] == "mean" {
                means.push((rec[0].to_string(), values));
                continue;
            }
            let seed = rec[2].parse().map_err(|_| Error::format("ablation table", format!("bad seed {:?}", &rec[2])))?;
            table.entries.push(TableEntry { row: rec[0].to_string(), fingerprint: rec[1].to_string(), seed, values });
        }
        for (row, values) in means {
            if table.mean(&row) != Some(values) {
                return Err(Error::format("ablation table", format!("mean line of {row} disagrees with its entries")));
            }
        }
        Ok(table)
    }

    /// Markdown table: per metric, the seed mean followed by each seed's
    /// value.
    pub fn markdown(&self) -> String {
        let seeds = self.seeds();
        let mut s = String::from("| Row |");
        for m in TABLE_METRICS {
            let _ = write!(s, " {m} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(TABLE_METRICS.len()));
        s.push('\n');
        for row in self.rows() {
            let mean = self.mean(row).expect("row exists");
            let _ = write!(s, "| {row} |");
            for (i, m) in mean.iter().enumerate() {
                let per: Vec<String> = seeds.iter().filter_map(|&sd| self.entry(row, sd)).map(|e| format!("{:.4}", e.values[i])).collect();
                let _ = write!(s, " {m:.4} ({}) |", per.join(" / "));
            }
            s.push('\n');
        }
        let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "\nSeeds: {}.", seeds.join(", "));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_differ_from_the_baseline_by_their_switch_only() {
        let base = RunConfig::default();
        let bl = Variant::Baseline.config(&base, 1);
        let url = Variant::Url.config(&base, 1);
        assert_eq!(RunConfig { use_url: true, ..bl.clone() }, url);
        assert_ne!(bl.fingerprint(), url.fingerprint());
        assert_eq!(RunConfig { use_cycle: true, ..bl.clone() }, Variant::Cycle.config(&base, 1));
        assert_eq!(RunConfig { multi_view: false, ..bl.clone() }, Variant::SingleView.config(&base, 1));
        for v in Variant::TABLE.into_iter().chain([Variant::SingleView]) {
            v.config(&base, 2).validate().unwrap();
            assert_eq!(Variant::from_label(v.label()), Some(v));
        }
    }

    #[test]
    fn table_round_trips_through_csv() {
        let mut table = AblationTable::default();
        for (i, v) in Variant::TABLE.iter().enumerate() {
            for seed in [1, 2, 3] {
                let values = std::array::from_fn(|m| 0.1 * i as f64 + 0.01 * m as f64 + 1e-3 * seed as f64 + 1.0 / 3.0);
                table.entries.push(TableEntry { row: v.label().into(), fingerprint: format!("fp{i}"), seed, values });
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        table.write_csv(&path).unwrap();
        let back = AblationTable::read_csv(&path).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.rows().len(), 5);
        assert_eq!(back.seeds(), [1, 2, 3]);
        let md = table.markdown();
        assert_eq!(md.lines().filter(|l| l.starts_with("| BL")).count(), 5);
        assert_eq!(md.lines().next().unwrap().matches('|').count(), 8);
    }
}
