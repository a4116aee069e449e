//! Seeded generators for the synthetic experiments and the trace-regression
//! design builder.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::losses::LossKind;
use crate::model::{Dataset, Design};

/// Planted structure recorded alongside generated data. Labels are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_star: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSpec {
    pub q: usize,
    pub ambient_m: usize,
    pub centroid_dim: usize,
    pub side: f64,
    pub per_cluster: usize,
    pub sigma2: f64,
}

impl CentroidSpec {
    /// Ten centers in a 500-square, zero-padded into ℝ⁵⁰, 100 points each.
    pub fn setting1() -> Self {
        CentroidSpec { q: 10, ambient_m: 50, centroid_dim: 2, side: 500.0, per_cluster: 100, sigma2: 1.0 }
    }

    /// Twenty centers in a 500-hypercube of ℝ⁵⁰, 100 points each.
    pub fn setting2() -> Self {
        CentroidSpec { q: 20, ambient_m: 50, centroid_dim: 50, side: 500.0, per_cluster: 100, sigma2: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        if self.q == 0 || self.ambient_m == 0 || self.centroid_dim == 0 || self.per_cluster == 0 {
            return Err(CrlError::Config("all counts must be positive".into()));
        }
        if self.centroid_dim > self.ambient_m {
            return Err(CrlError::Config("centroid_dim exceeds ambient_m".into()));
        }
        if !(self.side > 0.0) || !(self.sigma2 >= 0.0) {
            return Err(CrlError::Config("side must be positive and sigma2 nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub q: usize,
    pub r: usize,
    pub tau: f64,
    pub sigma_b: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec { n: 100, p: 50, m: 25, q: 10, r: 5, tau: 0.2, sigma_b: 0.0 }
    }
}

impl RegressionSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.m == 0 || self.r == 0 {
            return Err(CrlError::Config("all counts must be positive".into()));
        }
        if self.q < 2 {
            return Err(CrlError::Config("q must be at least 2".into()));
        }
        if self.q > self.p {
            return Err(CrlError::Config(format!("q = {} exceeds p = {}", self.q, self.p)));
        }
        if self.r > self.p.min(self.m) {
            return Err(CrlError::Config("r exceeds min(p, m)".into()));
        }
        if !(0.0..1.0).contains(&self.tau) || !(self.sigma_b >= 0.0) {
            return Err(CrlError::Config("tau must lie in [0, 1) and sigma_b be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub q: usize,
    pub z_in: f64,
    pub z_out: f64,
}

impl PlantedSpec {
    /// 1000 nodes in 20 communities of 50, `z_in = 15`, `z_out = 30`.
    pub fn gn() -> Self {
        PlantedSpec { n: 1000, q: 20, z_in: 15.0, z_out: 30.0 }
    }
}

/// Any of the generators, tagged for JSON specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario")]
pub enum Scenario {
    CentroidClusters(CentroidSpec),
    RegressionSuite(RegressionSpec),
    PlantedPartition(PlantedSpec),
    DoubleMoon { per_cluster: usize, noise: f64 },
    ClusterInCluster { per_cluster: usize, noise: f64 },
}

/// Output of [`generate`]: the response (or data, or adjacency), the design
/// when there is one, and the ground truth.
#[derive(Debug, Clone)]
pub struct Generated {
    pub y: DMatrix<f64>,
    pub x: Option<DMatrix<f64>>,
    pub truth: GroundTruth,
}

pub fn generate(scenario: &Scenario, seed: u64) -> Result<Generated> {
    Ok(match scenario {
        Scenario::CentroidClusters(s) => {
            let (y, truth) = gen_centroid_clusters(s, seed)?;
            Generated { y, x: None, truth }
        }
        Scenario::RegressionSuite(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = regression_truth(s, &mut rng)?;
            let (x, y) = draw_regression(truth.b_star.as_ref().expect("set"), s.n, s.tau, &mut rng);
            Generated { y, x: Some(x), truth }
        }
        Scenario::PlantedPartition(s) => {
            let (w, truth) = gen_planted_partition(s, seed)?;
            Generated { y: w, x: None, truth }
        }
        Scenario::DoubleMoon { per_cluster, noise } => {
            let (y, truth) = double_moon(*per_cluster, *noise, seed);
            Generated { y, x: None, truth }
        }
        Scenario::ClusterInCluster { per_cluster, noise } => {
            let (y, truth) = cluster_in_cluster(*per_cluster, *noise, seed);
            Generated { y, x: None, truth }
        }
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Clustered points around uniformly drawn centers. Rows are grouped by
/// cluster; `truth.b_star` holds the noiseless data.
pub fn gen_centroid_clusters(spec: &CentroidSpec, seed: u64) -> Result<(DMatrix<f64>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = DMatrix::from_fn(spec.q, spec.ambient_m, |_, j| {
        if j < spec.centroid_dim { rng.random_range(0.0..spec.side) } else { 0.0 }
    });
    let n = spec.q * spec.per_cluster;
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_cluster).collect();
    let clean = DMatrix::from_fn(n, spec.ambient_m, |i, j| centers[(labels[i], j)]);
    let sd = spec.sigma2.sqrt();
    let mut data = clean.clone();
    for v in data.iter_mut() {
        *v += sd * normal(&mut rng);
    }
    Ok((data, GroundTruth { labels, b_star: Some(clean), centers: Some(centers) }))
}

/// Rows of `B₁` copy one of `q` shared component rows (the zero row and rows
/// drawn elementwise from `N(k, 1)`), redrawn until every component occurs.
/// `truth.b_star` is `B₁B₂ᵀ` plus `N(0, σ_B²)` entries; `truth.centers` holds
/// the noiseless `B°`.
pub fn regression_truth(spec: &RegressionSpec, rng: &mut ChaCha8Rng) -> Result<GroundTruth> {
    spec.validate()?;
    let (p, q, r) = (spec.p, spec.q, spec.r);
    let comps = DMatrix::from_fn(q, r, |k, _| if k == 0 { 0.0 } else { k as f64 + normal(rng) });
    let labels = loop {
        let labels: Vec<usize> = (0..p).map(|_| rng.random_range(0..q)).collect();
        let mut seen = vec![false; q];
        labels.iter().for_each(|&l| seen[l] = true);
        if seen.iter().all(|&s| s) {
            break labels;
        }
    };
    let b1 = DMatrix::from_fn(p, r, |j, k| comps[(labels[j], k)]);
    let b2 = DMatrix::from_fn(spec.m, r, |_, _| normal(rng));
    let b_circ = &b1 * b2.transpose();
    let mut b_star = b_circ.clone();
    if spec.sigma_b > 0.0 {
        for v in b_star.iter_mut() {
            *v += spec.sigma_b * normal(rng);
        }
    }
    Ok(GroundTruth { labels, b_star: Some(b_star), centers: Some(b_circ) })
}

/// Draws `n` rows of an AR(1) design (`cov = τ^|i−j|`) and `Y = X B* + E`
/// with standard Gaussian `E`.
pub fn draw_regression(b_star: &DMatrix<f64>, n: usize, tau: f64, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, m) = b_star.shape();
    let innov = (1.0 - tau * tau).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = normal(rng);
        x[(i, 0)] = prev;
        for j in 1..p {
            prev = tau * prev + innov * normal(rng);
            x[(i, j)] = prev;
        }
    }
    let mut y = &x * b_star;
    for i in 0..n {
        for k in 0..m {
            y[(i, k)] += normal(rng);
        }
    }
    (x, y)
}

pub fn gen_regression_suite(spec: &RegressionSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = regression_truth(spec, &mut rng)?;
    let (x, y) = draw_regression(truth.b_star.as_ref().expect("set"), spec.n, spec.tau, &mut rng);
    Ok((Dataset::new(y, x, LossKind::Quadratic)?, truth))
}

/// Training, validation and test sets sharing one `B*`.
#[derive(Debug, Clone)]
pub struct RegressionSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
}

pub fn gen_regression_splits(spec: &RegressionSpec, n_val: usize, n_test: usize, seed: u64) -> Result<RegressionSplits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = regression_truth(spec, &mut rng)?;
    let b = truth.b_star.as_ref().expect("set");
    let mut draw = |n: usize| -> Result<Dataset> {
        let (x, y) = draw_regression(b, n, spec.tau, &mut rng);
        Dataset::new(y, x, LossKind::Quadratic)
    };
    let train = draw(spec.n)?;
    let validation = draw(n_val)?;
    let test = draw(n_test)?;
    Ok(RegressionSplits { train, validation, test, truth })
}

/// Planted-partition graph with equal communities of size `s = n/q`, edge
/// probabilities `z_in/(s−1)` inside and `z_out/(n−s)` across.
pub fn gen_planted_partition(spec: &PlantedSpec, seed: u64) -> Result<(DMatrix<f64>, GroundTruth)> {
    let (n, q) = (spec.n, spec.q);
    if q == 0 || n == 0 || n % q != 0 {
        return Err(CrlError::Config(format!("q = {q} must divide n = {n}")));
    }
    let s = n / q;
    let p_in = if s > 1 { spec.z_in / (s - 1) as f64 } else { 0.0 };
    let p_out = if q > 1 { spec.z_out / (n - s) as f64 } else { 0.0 };
    for (name, pr) in [("within", p_in), ("between", p_out)] {
        if !(0.0..=1.0).contains(&pr) {
            return Err(CrlError::Config(format!("{name}-community edge probability {pr} is not in [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i / s).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let pr = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random_bool(pr) {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    Ok((w, GroundTruth { labels, b_star: None, centers: None }))
}

/// Two interleaved half circles of radius 1 with Gaussian jitter.
pub fn double_moon(per_cluster: usize, noise: f64, seed: u64) -> (DMatrix<f64>, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * per_cluster;
    let mut data = DMatrix::zeros(n, 2);
    let labels: Vec<usize> = (0..n).map(|i| i / per_cluster).collect();
    for i in 0..n {
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let (x, y) = if labels[i] == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        data[(i, 0)] = x + noise * normal(&mut rng);
        data[(i, 1)] = y + noise * normal(&mut rng);
    }
    (data, GroundTruth { labels, b_star: None, centers: None })
}

/// A disk of radius 1 inside a ring of radius 3, with Gaussian jitter.
pub fn cluster_in_cluster(per_cluster: usize, noise: f64, seed: u64) -> (DMatrix<f64>, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * per_cluster;
    let mut data = DMatrix::zeros(n, 2);
    let labels: Vec<usize> = (0..n).map(|i| i / per_cluster).collect();
    for i in 0..n {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let rad = if labels[i] == 0 { rng.random_range(0.0f64..1.0).sqrt() } else { 3.0 };
        data[(i, 0)] = rad * t.cos() + noise * normal(&mut rng);
        data[(i, 1)] = rad * t.sin() + noise * normal(&mut rng);
    }
    (data, GroundTruth { labels, b_star: None, centers: None })
}

/// Trace-regression instance `yᵢ ≈ ⟨xᵢ, bᵢ⟩` with one coefficient row per
/// sample under the quadratic loss.
pub fn build_trace_design(x_rows: &DMatrix<f64>, y: &[f64]) -> Result<Dataset> {
    if x_rows.nrows() != y.len() {
        return Err(CrlError::Structural(format!("{} design rows but {} responses", x_rows.nrows(), y.len())));
    }
    let y = DMatrix::from_column_slice(y.len(), 1, y);
    Dataset::with_design(y, Design::Trace(x_rows.clone()), LossKind::Quadratic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::distinct_row_count;
    use crate::solver::{fit, FitConfig};

    #[test]
    fn setting_shapes() {
        let (data, truth) = gen_centroid_clusters(&CentroidSpec::setting1(), 1).unwrap();
        assert_eq!(data.shape(), (1000, 50));
        let centers = truth.centers.unwrap();
        assert_eq!(crate::linalg::numerical_rank(&centers, 1e-10), 2);
        assert_eq!(distinct_row_count(&truth.b_star.unwrap(), 0.0), 10);

        let (data, truth) = gen_centroid_clusters(&CentroidSpec::setting2(), 1).unwrap();
        assert_eq!(data.shape(), (2000, 50));
        assert_eq!(crate::linalg::numerical_rank(&truth.centers.unwrap(), 1e-10), 20);

        let bad = CentroidSpec { centroid_dim: 60, ..CentroidSpec::setting1() };
        assert!(gen_centroid_clusters(&bad, 0).is_err());
    }

    #[test]
    fn determinism() {
        let a = gen_centroid_clusters(&CentroidSpec::setting1(), 9).unwrap();
        let b = gen_centroid_clusters(&CentroidSpec::setting1(), 9).unwrap();
        assert_eq!(a, b);
        let (da, ta) = gen_regression_suite(&RegressionSpec::default(), 4).unwrap();
        let (db, tb) = gen_regression_suite(&RegressionSpec::default(), 4).unwrap();
        assert_eq!(da.y, db.y);
        assert_eq!(ta, tb);
    }

    #[test]
    fn regression_truth_structure() {
        for seed in 0..10 {
            let (d, truth) = gen_regression_suite(&RegressionSpec::default(), seed).unwrap();
            assert_eq!(d.y.shape(), (100, 25));
            let b0 = truth.centers.as_ref().unwrap();
            assert_eq!(distinct_row_count(b0, 0.0), 10);
            assert_eq!(crate::linalg::numerical_rank(b0, 1e-10), 5);
            assert_eq!(truth.b_star.as_ref().unwrap(), b0);
        }
        let spec = RegressionSpec { sigma_b: 0.16, ..RegressionSpec::default() };
        let (_, truth) = gen_regression_suite(&spec, 0).unwrap();
        assert_eq!(distinct_row_count(truth.b_star.as_ref().unwrap(), 0.0), 50);
    }

    #[test]
    fn uncorrelated_design_at_tau_zero() {
        let spec = RegressionSpec { n: 1000, p: 8, m: 2, q: 2, r: 1, tau: 0.0, sigma_b: 0.0 };
        let (d, _) = gen_regression_suite(&spec, 3).unwrap();
        let x = d.x.to_dense().unwrap();
        for a in 0..8 {
            for b in a + 1..8 {
                let (ca, cb) = (x.column(a), x.column(b));
                let (ma, mb) = (ca.mean(), cb.mean());
                let cov: f64 = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum();
                let va: f64 = ca.iter().map(|u| (u - ma).powi(2)).sum();
                let vb: f64 = cb.iter().map(|v| (v - mb).powi(2)).sum();
                assert!((cov / (va * vb).sqrt()).abs() < 0.15);
            }
        }
    }

    #[test]
    fn ar1_correlation() {
        let spec = RegressionSpec { n: 20000, p: 4, m: 1, q: 2, r: 1, tau: 0.5, sigma_b: 0.0 };
        let (d, _) = gen_regression_suite(&spec, 5).unwrap();
        let x = d.x.to_dense().unwrap();
        let c = x.tr_mul(&x) / 20000.0;
        assert!((c[(0, 0)] - 1.0).abs() < 0.05);
        assert!((c[(0, 1)] - 0.5).abs() < 0.05);
        assert!((c[(0, 2)] - 0.25).abs() < 0.05);
    }

    #[test]
    fn planted_partition_properties() {
        let (w, truth) = gen_planted_partition(&PlantedSpec::gn(), 2).unwrap();
        assert_eq!(w, w.transpose());
        assert!((0..1000).all(|i| w[(i, i)] == 0.0));
        let mean_deg = w.sum() / 1000.0;
        assert!((mean_deg - 45.0).abs() < 2.0, "{mean_deg}");
        assert_eq!(truth.labels.iter().filter(|&&l| l == 3).count(), 50);

        let spec = PlantedSpec { n: 60, q: 3, z_in: 15.0, z_out: 0.0 };
        let (w, _) = gen_planted_partition(&spec, 1).unwrap();
        assert_eq!(component_count(&w), 3);

        assert!(gen_planted_partition(&PlantedSpec { n: 60, q: 3, z_in: 25.0, z_out: 0.0 }, 0).is_err());
        assert!(gen_planted_partition(&PlantedSpec { n: 61, q: 3, z_in: 1.0, z_out: 1.0 }, 0).is_err());
    }

    fn component_count(w: &DMatrix<f64>) -> usize {
        let n = w.nrows();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = count;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if w[(u, v)] > 0.0 && comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        count
    }

    #[test]
    fn shape_generators() {
        let (d, t) = double_moon(50, 0.05, 1);
        assert_eq!(d.shape(), (100, 2));
        assert_eq!(t.labels.iter().sum::<usize>(), 50);
        let (d, _) = cluster_in_cluster(50, 0.0, 1);
        for i in 0..50 {
            assert!(d.row(i).norm() <= 1.0);
        }
        for i in 50..100 {
            assert!((d.row(i).norm() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_design_pooled_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(40, 3, |_, _| normal(&mut rng));
        let beta = [1.0, -2.0, 0.5];
        let y: Vec<f64> = (0..40).map(|i| (0..3).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + 0.1 * normal(&mut rng)).collect();
        let d = build_trace_design(&x, &y).unwrap();
        let res = fit(&d, &FitConfig::new(1, 1, 0), None).unwrap();
        let b = res.coefficients();
        let yv = nalgebra::DVector::from_column_slice(&y);
        let ols = (x.tr_mul(&x)).lu().solve(&x.tr_mul(&yv)).unwrap();
        for i in 0..40 {
            assert!((b.row(i).transpose() - &ols).abs().max() < 1e-8);
        }
        assert!(build_trace_design(&x, &y[..39]).is_err());
    }
}
