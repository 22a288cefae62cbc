mod common;

use std::path::PathBuf;

use common::{fixture, loop_ssim, REFERENCE};

use texrefine::data::{render_dataset, SampleIdentity};
use texrefine::losses::FeatureExtractor;
use texrefine::metrics::{evaluate_sv_nv, read_rows, ssim_value, MetricReport};
use texrefine::tensor::Tensor;

#[test]
fn ssim_of_an_image_with_itself_is_one() {
    for i in 1..=3 {
        let a = fixture(&format!("pair{i}_a.png"));
        assert!((ssim_value(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn ssim_matches_both_references_on_stored_pairs() {
    for (i, want) in REFERENCE.iter().enumerate() {
        let (a, b) = (fixture(&format!("pair{}_a.png", i + 1)), fixture(&format!("pair{}_b.png", i + 1)));
        let got = ssim_value(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-6, "pair {}: {got} vs reference {want}", i + 1);
        assert!((got - loop_ssim(&a, &b)).abs() <= 1e-9, "pair {}: loop oracle", i + 1);
        assert_eq!(got, ssim_value(&b, &a).unwrap());
    }
}

fn dataset(n: usize, seed: u64) -> (tempfile::TempDir, Vec<SampleIdentity<f64>>) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = render_dataset(n, seed, dir.path()).unwrap();
    let ids = manifest.identities.iter().map(|e| SampleIdentity::load(dir.path(), &e.id).unwrap()).collect();
    (dir, ids)
}

#[test]
fn ground_truth_texture_scores_near_one() {
    let (_dir, ids) = dataset(1, 3);
    let rows = evaluate_sv_nv(&ids, &FeatureExtractor::default(), |id, _| Ok(id.texture.clone())).unwrap();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert!(r.ssim_sv >= 0.999 && r.ssim_nv >= 0.999, "{r:?}");
        assert!(r.cossim_sv > 0.999);
        assert_eq!(r.invisible_mse, 0.0);
    }
}

#[test]
fn constant_gray_texture_scores_poorly() {
    let (_dir, ids) = dataset(2, 4);
    let rows = evaluate_sv_nv(&ids, &FeatureExtractor::default(), |_, _| Ok(Tensor::zeros(&[1, 3, 128, 128]))).unwrap();
    let report = MetricReport::new("gray", "all", rows, 7).unwrap();
    assert!(report.means.ssim_sv < 0.9, "{}", report.means.ssim_sv);
    assert!(report.means.invisible_mse > 0.0);
}

#[test]
fn report_means_match_the_per_sample_csv() {
    let (dir, ids) = dataset(1, 5);
    let mut calls = 0;
    let rows = evaluate_sv_nv(&ids, &FeatureExtractor::default(), |id, view| {
        calls += 1;
        Ok(id.texture.map(|v| v * (0.5 + 0.05 * view.index as f64)))
    })
    .unwrap();
    assert_eq!(calls, 8);
    let report = MetricReport::new("abc", "test", rows, 7).unwrap();
    let csv: PathBuf = dir.path().join("rows.csv");
    report.write_csv(&csv).unwrap();
    let back = read_rows(&csv).unwrap();
    assert_eq!(back, report.rows);
    let hand = back.iter().map(|r| r.ssim_nv).sum::<f64>() / back.len() as f64;
    assert_eq!(hand, report.means.ssim_nv);
    let json = dir.path().join("report.json");
    report.write_json(&json).unwrap();
    assert_eq!(MetricReport::read_json(&json).unwrap(), report);
}

#[test]
fn identities_need_two_views() {
    let (_dir, mut ids) = dataset(1, 6);
    ids[0].views.truncate(1);
    let err = evaluate_sv_nv(&ids, &FeatureExtractor::default(), |id, _| Ok(id.texture.clone())).unwrap_err();
    assert!(matches!(err, texrefine::Error::Contract { .. }));
}
