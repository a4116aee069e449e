use crl::error::CrlError;
use crl::io;
use crl::losses::{LossKind, NoiseScale};
use crl::model::Dataset;
use crl::protocols;
use crl::selection::{self, PicVariant, Score};
use crl::solver::FitConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn planted(seed: u64, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(60, 12, |_, _| rng.sample::<f64, _>(StandardNormal));
    let centers = DMatrix::from_fn(4, 2, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
    let s = DMatrix::from_fn(12, 2, |j, k| centers[(j % 4, k)]);
    let v = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let e = DMatrix::from_fn(60, 6, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
    let y = &x * (s * v.transpose()) + e;
    Dataset::new(y, x, LossKind::Quadratic).unwrap()
}

#[test]
fn planted_grid_picks_the_truth() {
    for variant in [PicVariant::fractional(), PicVariant::plug_in()] {
        let out = selection::select_over_grid(&planted(1, 0.3), &[2, 3, 4, 5, 6], &[1, 2, 3], &FitConfig::new(1, 1, 0), &variant).unwrap();
        assert_eq!(out.report.winner, (4, 2), "{variant:?}");
        let c = out.report.winner_candidate();
        assert_eq!(c.fit.as_ref().unwrap().q_eff, 4);
    }
}

#[test]
fn infeasible_pairs_are_reported() {
    let out = selection::select_over_grid(&planted(2, 0.3), &[2, 4], &[1, 3], &FitConfig::new(1, 1, 0), &PicVariant::fractional()).unwrap();
    assert!(out.report.eliminated.iter().any(|(q, r, _)| (*q, *r) == (2, 3)));
    let mut csv = Vec::new();
    io::write_report_csv(&mut csv, &out.report).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("q,r,score,loss,penalty,status\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("selected"));
    assert!(text.contains("eliminated: r exceeds q"));
}

#[test]
fn report_json_round_trips() {
    let out = selection::select_over_grid(&planted(3, 0.5), &[3, 4], &[2], &FitConfig::new(1, 1, 0), &PicVariant::PlugIn { sigma2: NoiseScale::Known(0.25), a: 2.0 }).unwrap();
    let text = serde_json::to_string(&out.report).unwrap();
    let back: selection::SelectionReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, out.report);
    assert_eq!(out.report.sigma2, Some(0.25));
}

#[test]
fn grid_of_only_infeasible_pairs_fails() {
    let d = planted(4, 0.1);
    let err = selection::select_over_grid(&d, &[2], &[3], &FitConfig::new(1, 1, 0), &PicVariant::fractional()).unwrap_err();
    assert!(matches!(err, CrlError::AllEliminated));
}

#[test]
fn scale_free_needs_quadratic_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = DMatrix::from_fn(30, 4, |_, _| rng.random::<f64>());
    let y = DMatrix::from_fn(30, 2, |_, _| f64::from(rng.random_bool(0.5)));
    let d = Dataset::new(y, x, LossKind::Logistic).unwrap();
    let err = selection::select_over_grid(&d, &[2], &[1], &FitConfig::new(1, 1, 0), &PicVariant::fractional()).unwrap_err();
    assert!(matches!(err, CrlError::UnsupportedVariant(_)));
    let ok = selection::select_over_grid(&d, &[2, 3], &[1], &FitConfig::new(1, 1, 0), &PicVariant::plug_in()).unwrap();
    assert_eq!(ok.report.sigma2, Some(0.25));
    assert!(ok.report.candidates.iter().all(|c| matches!(c.score, Score::Value(_))));
}

#[test]
fn noisy_segmentation_selects_two_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = DMatrix::from_fn(80, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..80)
        .map(|i| {
            let (a, b) = if i % 2 == 0 { (4.0, -3.0) } else { (-4.0, 2.0) };
            a * x[(i, 0)] + b * x[(i, 1)] + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let seg = protocols::segment(&x, &y, &[1, 2, 3, 4], 0).unwrap();
    assert_eq!(seg.report.winner.0, 2);
    let truth: Vec<usize> = (0..80).map(|i| i % 2).collect();
    assert!(crl::metrics::clustering_accuracy(&truth, &seg.labels).unwrap() >= 0.95);
    assert_eq!(seg.coefficients.shape(), (2, 2));
}
