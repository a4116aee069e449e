//! Replicate-level experiment protocols shared by the acceptance suite and the
//! `bench` command.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::graph::{self, SimilarityGraph};
use crate::metrics;
use crate::model::Dataset;
use crate::selection::{self, PicVariant};
use crate::sim::{self, CentroidSpec, PlantedSpec, RegressionSpec};
use crate::solver::{self, FitConfig};

/// Clustering quality of one unsupervised replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub ca: f64,
    pub nmi: f64,
    pub mse: f64,
}

/// One centroid-clustering replicate: generate, fit with `q = q*` and rank
/// `r`, score against the planted labels and noiseless data.
pub fn centroid_replicate(spec: &CentroidSpec, r: usize, seed: u64) -> Result<ClusterScores> {
    let (data, truth) = sim::gen_centroid_clusters(spec, seed)?;
    let res = solver::fit_unsupervised(&data, &FitConfig::new(spec.q, r, seed))?;
    Ok(ClusterScores {
        ca: metrics::clustering_accuracy(&truth.labels, &res.clusters.labels)?,
        nmi: metrics::nmi(&truth.labels, &res.clusters.labels)?,
        mse: metrics::approx_mse(truth.b_star.as_ref().expect("set"), &res.coefficients())?,
    })
}

/// Grids searched by validation in the misspecification study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationGrid {
    pub q: Vec<usize>,
    pub r: Vec<usize>,
}

impl Default for ValidationGrid {
    fn default() -> Self {
        ValidationGrid { q: (2..=16).collect(), r: (1..=8).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecScores {
    pub crl: metrics::PredictionError,
    pub crl_q: usize,
    pub crl_r: usize,
    pub rrr: metrics::PredictionError,
    pub rrr_r: usize,
}

fn validation_error(d: &Dataset, b: &DMatrix<f64>) -> f64 {
    selection::residual_ss(d, b, &nalgebra::DVector::zeros(d.m()))
}

/// One misspecification replicate: CRL over the `(q, r)` grid and RRR over
/// the rank grid, each picked by error on a validation set and scored on a
/// test set of the same size.
pub fn misspec_replicate(spec: &RegressionSpec, grid: &ValidationGrid, n_holdout: usize, seed: u64) -> Result<MisspecScores> {
    let splits = sim::gen_regression_splits(spec, n_holdout, n_holdout, seed)?;
    let b_star = splits.truth.b_star.as_ref().expect("set");
    let max_r = spec.p.min(spec.m);

    let mut rrr_best: Option<(f64, usize, DMatrix<f64>)> = None;
    for &r in grid.r.iter().filter(|&&r| r >= 1 && r <= max_r) {
        let b = solver::rrr_fit(&splits.train, r, false)?.b_rrr;
        let e = validation_error(&splits.validation, &b);
        if rrr_best.as_ref().is_none_or(|best| e < best.0) {
            rrr_best = Some((e, r, b));
        }
    }
    let (_, rrr_r, b_rrr) = rrr_best.ok_or_else(|| CrlError::Config("empty rank grid".into()))?;

    let pairs: Vec<(usize, usize)> = grid
        .q
        .iter()
        .flat_map(|&q| grid.r.iter().map(move |&r| (q, r)))
        .filter(|&(q, r)| q >= 1 && q <= spec.p && r >= 1 && r <= q.min(max_r))
        .collect();
    let fits = crate::par::par_map(pairs, |(q, r)| -> Result<(f64, usize, usize, DMatrix<f64>)> {
        let b = solver::fit(&splits.train, &FitConfig::new(q, r, seed), None)?.coefficients();
        Ok((validation_error(&splits.validation, &b), q, r, b))
    });
    let mut crl_best: Option<(f64, usize, usize, DMatrix<f64>)> = None;
    for f in fits {
        let f = f?;
        if crl_best.as_ref().is_none_or(|best| f.0 < best.0) {
            crl_best = Some(f);
        }
    }
    let (_, crl_q, crl_r, b_crl) = crl_best.ok_or_else(|| CrlError::Config("empty (q, r) grid".into()))?;

    let zero = nalgebra::DVector::zeros(spec.m);
    Ok(MisspecScores {
        crl: metrics::prediction_error(&splits.test, &b_crl, &zero, Some(b_star), true)?,
        crl_q,
        crl_r,
        rrr: metrics::prediction_error(&splits.test, &b_rrr, &zero, Some(b_star), true)?,
        rrr_r,
    })
}

/// Settings for kernel clustering of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub normalized: bool,
    /// Response width; `None` means `2q`.
    pub m_bar: Option<usize>,
    pub whiten: bool,
    /// Clustering rank; `None` means `q`.
    pub r: Option<usize>,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings { normalized: true, m_bar: None, whiten: false, r: None }
    }
}

/// Kernel CRL on a graph with `q` clusters; returns 0-based labels.
pub fn kernel_labels(g: &SimilarityGraph, q: usize, ks: &KernelSettings, seed: u64) -> Result<Vec<usize>> {
    let m_bar = ks.m_bar.unwrap_or(2 * q).min(g.n());
    let r = ks.r.unwrap_or(q).min(m_bar);
    let res = graph::kernel_crl(g, ks.normalized, m_bar, ks.whiten, &FitConfig::new(q, r, seed))?;
    Ok(res.clusters.labels)
}

/// One planted-partition replicate through the kernel pipeline.
pub fn planted_replicate(spec: &PlantedSpec, ks: &KernelSettings, seed: u64) -> Result<ClusterScores> {
    let (w, truth) = sim::gen_planted_partition(spec, seed)?;
    let g = SimilarityGraph::from_weights(w)?;
    let labels = kernel_labels(&g, spec.q, ks, seed)?;
    Ok(ClusterScores {
        ca: metrics::clustering_accuracy(&truth.labels, &labels)?,
        nmi: metrics::nmi(&truth.labels, &labels)?,
        mse: f64::NAN,
    })
}

/// Segmentation result: selected `q`, per-sample labels and the per-group
/// coefficient rows.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub report: selection::SelectionReport,
    pub labels: Vec<usize>,
    pub coefficients: DMatrix<f64>,
}

/// Trace-regression segmentation over `q ∈ q_grid` with `r = min(q, p)`,
/// selected by the log-form criterion.
pub fn segment(x_rows: &DMatrix<f64>, y: &[f64], q_grid: &[usize], seed: u64) -> Result<Segmentation> {
    let d = sim::build_trace_design(x_rows, y)?;
    let p = x_rows.ncols();
    let pairs: Vec<(usize, usize)> = q_grid.iter().map(|&q| (q, q.min(p))).collect();
    let out = selection::select_over_pairs(&d, &pairs, &FitConfig::new(1, 1, seed), &PicVariant::log_form())?;
    let b = out.best.coefficients();
    let cs = crate::model::ClusterStructure::from_rows(&b);
    Ok(Segmentation { report: out.report, labels: cs.labels, coefficients: cs.mu })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn small_centroid_replicate() {
        let spec = CentroidSpec { q: 3, ambient_m: 6, centroid_dim: 2, side: 100.0, per_cluster: 20, sigma2: 1.0 };
        let s = centroid_replicate(&spec, 3, 1).unwrap();
        assert_eq!(s.ca, 1.0);
        assert!(s.mse < 0.5);
    }

    #[test]
    fn segmentation_recovers_two_models() {
        let x = DMatrix::from_fn(40, 2, |i, j| 1.0 + ((i * 7 + j * 3) % 11) as f64 / 5.0);
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 2.0 * x[(i, 0)] - x[(i, 1)] } else { -3.0 * x[(i, 0)] + 0.5 * x[(i, 1)] }).collect();
        let seg = segment(&x, &y, &[1, 2, 3], 0).unwrap();
        let truth: Vec<usize> = (0..40).map(|i| i / 20).collect();
        assert_eq!(metrics::clustering_accuracy(&truth, &seg.labels).unwrap(), 1.0);
    }
}
