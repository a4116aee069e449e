//! K-means on the rows of a projected matrix `L`: ++-style seeding, Lloyd
//! iterations with empty-cluster repair, multi-start, warm starts, and the
//! column-wise 1-D mode used by the rank-wise variant.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::model::ClusterStructure;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub q: usize,
    pub n_starts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Relative sse decrease below which Lloyd stops; 0 means run until no
    /// assignment changes.
    pub tol: f64,
}

impl KmeansConfig {
    pub fn new(q: usize, seed: u64) -> Self {
        KmeansConfig { q, n_starts: 10, max_iter: 100, seed, tol: 0.0 }
    }

    fn validate(&self, rows: usize) -> Result<()> {
        if self.q == 0 || self.n_starts == 0 || self.max_iter == 0 {
            return Err(CrlError::Config("q, n_starts and max_iter must be positive".into()));
        }
        if self.q > rows {
            return Err(CrlError::Config(format!("q = {} exceeds the {} rows being clustered", self.q, rows)));
        }
        if !(self.tol >= 0.0) {
            return Err(CrlError::Config("tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub structure: ClusterStructure,
    pub sse: f64,
    pub iters: usize,
}

fn sq_dist(l: &DMatrix<f64>, j: usize, mu: &DMatrix<f64>, k: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..l.ncols() {
        let d = l[(j, c)] - mu[(k, c)];
        acc += d * d;
    }
    acc
}

/// Within-cluster sum of squares.
pub fn sse(l: &DMatrix<f64>, labels: &[usize], mu: &DMatrix<f64>) -> f64 {
    labels.iter().enumerate().map(|(j, &k)| sq_dist(l, j, mu, k)).sum()
}

/// Chooses `q` initial centroids by D²-weighted sampling. The first is uniform
/// over rows; when every remaining row coincides with a chosen centroid the
/// next is uniform over rows not yet picked.
pub fn seed_plus_plus(l: &DMatrix<f64>, q: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let p = l.nrows();
    if q == 0 || q > p {
        return Err(CrlError::Config(format!("cannot seed {q} centroids from {p} rows")));
    }
    let mut chosen = vec![rng.random_range(0..p)];
    let mut d2: Vec<f64> = (0..p).map(|j| row_dist(l, j, chosen[0])).collect();
    while chosen.len() < q {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (j, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(j);
                    break;
                }
            }
            // rounding can leave the target past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..p).filter(|j| !chosen.contains(j)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (j, w) in d2.iter_mut().enumerate() {
            *w = w.min(row_dist(l, j, next));
        }
    }
    Ok(DMatrix::from_fn(q, l.ncols(), |k, c| l[(chosen[k], c)]))
}

fn row_dist(l: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..l.ncols()).map(|c| (l[(a, c)] - l[(b, c)]).powi(2)).sum()
}

fn assign(l: &DMatrix<f64>, mu: &DMatrix<f64>) -> Vec<usize> {
    (0..l.nrows())
        .map(|j| {
            let mut best = 0;
            let mut best_d = sq_dist(l, j, mu, 0);
            for k in 1..mu.nrows() {
                let d = sq_dist(l, j, mu, k);
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

fn centroids(l: &DMatrix<f64>, labels: &[usize], q: usize) -> DMatrix<f64> {
    let mut mu = DMatrix::zeros(q, l.ncols());
    let mut counts = vec![0usize; q];
    for (j, &k) in labels.iter().enumerate() {
        counts[k] += 1;
        for c in 0..l.ncols() {
            mu[(k, c)] += l[(j, c)];
        }
    }
    for k in 0..q {
        if counts[k] > 0 {
            let inv = 1.0 / counts[k] as f64;
            mu.row_mut(k).scale_mut(inv);
        }
    }
    mu
}

/// Moves the point farthest from its centroid (among clusters with at least
/// two members) into each empty cluster.
fn repair_empty(l: &DMatrix<f64>, labels: &mut [usize], mu: &mut DMatrix<f64>) {
    let q = mu.nrows();
    loop {
        let mut counts = vec![0usize; q];
        for &k in labels.iter() {
            counts[k] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for (j, &k) in labels.iter().enumerate() {
            if counts[k] > 1 {
                let d = sq_dist(l, j, mu, k);
                if d > far_d {
                    far_d = d;
                    far = Some(j);
                }
            }
        }
        let j = far.expect("q ≤ rows guarantees a donor cluster");
        labels[j] = empty;
        for c in 0..l.ncols() {
            mu[(empty, c)] = l[(j, c)];
        }
    }
}

/// Lloyd iterations from the given centroids. Returns a fixed point unless
/// `max_iter` is reached first.
pub fn lloyd(l: &DMatrix<f64>, mu0: &DMatrix<f64>, max_iter: usize, tol: f64) -> KmeansResult {
    let q = mu0.nrows();
    let mut mu = mu0.clone();
    let mut labels = assign(l, &mu);
    repair_empty(l, &mut labels, &mut mu);
    mu = centroids(l, &labels, q);
    let mut cur = sse(l, &labels, &mu);
    let mut iters = 1;
    while iters < max_iter {
        let mut next = assign(l, &mu);
        let mut probe = mu.clone();
        repair_empty(l, &mut next, &mut probe);
        if next == labels {
            break;
        }
        iters += 1;
        let mu_next = centroids(l, &next, q);
        let s = sse(l, &next, &mu_next);
        debug_assert!(
            s <= cur * (1.0 + 1e-10) + 1e-12,
            "Lloyd sse increased from {cur} to {s}"
        );
        labels = next;
        mu = mu_next;
        let stop = tol > 0.0 && cur - s <= tol * cur;
        cur = s;
        if stop {
            break;
        }
    }
    KmeansResult { structure: ClusterStructure { labels, mu }, sse: cur, iters }
}

fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    rng
}

/// Best-of-`n_starts` K-means by sse; ties go to the lowest start index.
pub fn kmeans_fit(l: &DMatrix<f64>, cfg: &KmeansConfig) -> Result<KmeansResult> {
    cfg.validate(l.nrows())?;
    let runs = par::par_range(cfg.n_starts, |s| {
        let mut rng = start_rng(cfg.seed, s);
        let mu0 = seed_plus_plus(l, cfg.q, &mut rng).expect("validated");
        lloyd(l, &mu0, cfg.max_iter, cfg.tol)
    });
    let mut best: Option<KmeansResult> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_starts ≥ 1"))
}

/// Single Lloyd run seeded with the previous centroids.
pub fn kmeans_warm(l: &DMatrix<f64>, mu0: &DMatrix<f64>, max_iter: usize) -> Result<KmeansResult> {
    if mu0.ncols() != l.ncols() {
        return Err(CrlError::Structural(format!(
            "centroids have {} columns but data has {}",
            mu0.ncols(),
            l.ncols()
        )));
    }
    if mu0.nrows() == 0 || mu0.nrows() > l.nrows() {
        return Err(CrlError::Config(format!("cannot form {} clusters from {} rows", mu0.nrows(), l.nrows())));
    }
    Ok(lloyd(l, mu0, max_iter.max(1), 0.0))
}

/// Column-wise quantization: each column of `L` is split into `q_e` levels
/// by exact 1-D K-means (dynamic programming over sorted order). Returns the
/// quantized matrix and the per-column levels (`q_e × r`, ascending).
pub fn kmeans_columnwise(l: &DMatrix<f64>, q_e: usize, cfg: &KmeansConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    KmeansConfig { q: q_e, ..cfg.clone() }.validate(l.nrows())?;
    let cols: Vec<Vec<f64>> = l.column_iter().map(|c| c.iter().copied().collect()).collect();
    let fits = par::par_map(cols, |c| kmeans_1d_exact(&c, q_e));
    let s = DMatrix::from_fn(l.nrows(), l.ncols(), |j, c| fits[c].1[fits[c].0[j]]);
    let levels = DMatrix::from_fn(q_e, l.ncols(), |k, c| fits[c].1[k]);
    Ok((s, levels))
}

/// Optimal 1-D K-means: labels (ordered by level) and the level values.
fn kmeans_1d_exact(values: &[f64], q: usize) -> (Vec<usize>, Vec<f64>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let v: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + v[i];
        s2[i + 1] = s2[i] + v[i] * v[i];
    }
    let cost = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let sum = s1[b] - s1[a];
        (s2[b] - s2[a] - sum * sum / len).max(0.0)
    };
    // dp[k][b]: best cost of splitting v[..b] into k segments; cut[k][b]: start of the last one
    let mut dp = vec![vec![f64::INFINITY; n + 1]; q + 1];
    let mut cut = vec![vec![0usize; n + 1]; q + 1];
    dp[0][0] = 0.0;
    for k in 1..=q {
        for b in k..=n - (q - k) {
            for a in (k - 1)..b {
                let c = dp[k - 1][a] + cost(a, b);
                if c < dp[k][b] {
                    dp[k][b] = c;
                    cut[k][b] = a;
                }
            }
        }
    }
    let mut labels = vec![0usize; n];
    let mut levels = vec![0.0; q];
    let mut b = n;
    for k in (1..=q).rev() {
        let a = cut[k][b];
        levels[k - 1] = (s1[b] - s1[a]) / (b - a) as f64;
        for &i in &order[a..b] {
            labels[i] = k - 1;
        }
        b = a;
    }
    // exact means, free of prefix-sum cancellation
    for (k, level) in levels.iter_mut().enumerate() {
        let members: Vec<f64> = (0..n).filter(|&i| labels[i] == k).map(|i| values[i]).collect();
        *level = members.iter().sum::<f64>() / members.len() as f64;
    }
    (labels, levels)
}

/// Column-wise Lloyd from the previous levels.
pub fn kmeans_columnwise_warm(l: &DMatrix<f64>, levels: &DMatrix<f64>, max_iter: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if levels.ncols() != l.ncols() {
        return Err(CrlError::Structural("level matrix and data differ in column count".into()));
    }
    let fits: Vec<KmeansResult> = (0..l.ncols())
        .map(|c| kmeans_warm(&l.columns(c, 1).into_owned(), &levels.columns(c, 1).into_owned(), max_iter))
        .collect::<Result<_>>()?;
    Ok(assemble_columns(l, &fits))
}

fn assemble_columns(l: &DMatrix<f64>, fits: &[KmeansResult]) -> (DMatrix<f64>, DMatrix<f64>) {
    let q_e = fits.first().map_or(0, |f| f.structure.q());
    let s = DMatrix::from_fn(l.nrows(), l.ncols(), |j, c| {
        let st = &fits[c].structure;
        st.mu[(st.labels[j], 0)]
    });
    let levels = DMatrix::from_fn(q_e, l.ncols(), |k, c| fits[c].structure.mu[(k, 0)]);
    (s, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn brute_force(l: &DMatrix<f64>, q: usize) -> f64 {
        let p = l.nrows();
        let mut best = f64::INFINITY;
        let total = q.pow(p as u32);
        let mut labels = vec![0usize; p];
        for code in 0..total {
            let mut c = code;
            for lab in labels.iter_mut() {
                *lab = c % q;
                c /= q;
            }
            let mut seen = vec![false; q];
            labels.iter().for_each(|&k| seen[k] = true);
            if seen.iter().any(|s| !s) {
                continue;
            }
            let mu = centroids(l, &labels, q);
            best = best.min(sse(l, &labels, &mu));
        }
        best
    }

    /// Optimal 3-level 1-D K-means by enumerating both cut points in sorted order.
    fn cuts_1d_q3(values: &[f64]) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        let cost = |seg: &[f64]| {
            let m = seg.iter().sum::<f64>() / seg.len() as f64;
            seg.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        for a in 1..n - 1 {
            for b in a + 1..n {
                best = best.min(cost(&v[..a]) + cost(&v[a..b]) + cost(&v[b..]));
            }
        }
        best
    }

    #[test]
    fn separated_pairs() {
        let l = DMatrix::from_column_slice(4, 1, &[0.0, 0.1, 10.0, 10.1]);
        let res = kmeans_fit(&l, &KmeansConfig::new(2, 1)).unwrap();
        let lab = &res.structure.labels;
        assert_eq!(lab[0], lab[1]);
        assert_eq!(lab[2], lab[3]);
        assert_ne!(lab[0], lab[2]);
        let mut cents: Vec<f64> = res.structure.mu.iter().copied().collect();
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((cents[0] - 0.05).abs() < 1e-12 && (cents[1] - 10.05).abs() < 1e-12);
        assert!((res.sse - 0.01).abs() < 1e-12);
    }

    #[test]
    fn q_equals_p_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let res = kmeans_fit(&l, &KmeansConfig::new(6, 5)).unwrap();
        assert_eq!(res.sse, 0.0);
        let mut lab = res.structure.labels.clone();
        lab.sort();
        assert_eq!(lab, (0..6).collect::<Vec<_>>());

        let cents = seed_plus_plus(&l, 6, &mut rng).unwrap();
        for j in 0..6 {
            assert_eq!((0..6).filter(|&k| cents.row(k) == l.row(j)).count(), 1);
        }
    }

    #[test]
    fn single_centroid_is_a_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let c = seed_plus_plus(&l, 1, &mut rng).unwrap();
        assert!((0..5).any(|j| l.row(j) == c.row(0)));
        assert!(seed_plus_plus(&l, 6, &mut rng).is_err());
    }

    #[test]
    fn seeding_skips_duplicates() {
        let l = DMatrix::from_row_slice(8, 2, &[
            1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 0.0, 2.0, 0.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0,
        ]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = seed_plus_plus(&l, 3, &mut rng).unwrap();
            for a in 0..3 {
                for b in 0..a {
                    assert_ne!(c.row(a), c.row(b));
                }
            }
        }
    }

    #[test]
    fn seeding_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let a = seed_plus_plus(&l, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = seed_plus_plus(&l, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brute_force_small_instances() {
        let mut hits = 0;
        for inst in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
            let l = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
            let cfg = KmeansConfig { n_starts: 20, ..KmeansConfig::new(3, inst) };
            let res = kmeans_fit(&l, &cfg).unwrap();
            let opt = brute_force(&l, 3);
            assert!(res.sse >= opt - 1e-12);
            if res.sse <= opt * (1.0 + 1e-9) + 1e-12 {
                hits += 1;
            }
        }
        assert!(hits >= 38, "optimum attained in {hits}/40");
    }

    #[test]
    fn columnwise_reduces_to_rowwise_for_one_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = DMatrix::from_fn(15, 1, |_, _| rng.random_range(-3.0..3.0));
        let cfg = KmeansConfig::new(3, 4);
        let (s, _) = kmeans_columnwise(&l, 3, &cfg).unwrap();
        let rw = kmeans_fit(&l, &cfg).unwrap();
        assert_eq!(s, rw.structure.reconstruct());
    }

    #[test]
    fn columnwise_matches_dp_oracle() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-2.0..2.0));
            let (s, _) = kmeans_columnwise(&l, 3, &KmeansConfig::new(3, seed)).unwrap();
            for c in 0..2 {
                let col: Vec<f64> = l.column(c).iter().copied().collect();
                let got: f64 = (0..12).map(|j| (l[(j, c)] - s[(j, c)]).powi(2)).sum();
                let opt = cuts_1d_q3(&col);
                assert!((got - opt).abs() <= 1e-10 * opt.max(1.0), "seed {seed} col {c}: {got} vs {opt}");
            }
        }
    }

    #[test]
    fn columnwise_keeps_quantized_columns() {
        let l = DMatrix::from_row_slice(6, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 5.0, 1.0, 5.0, 2.0, 7.0, 3.0, 7.0]);
        let (s, _) = kmeans_columnwise(&l, 3, &KmeansConfig::new(3, 0)).unwrap();
        assert_eq!(s, l);
    }

    #[test]
    fn empty_cluster_repair_keeps_all_clusters() {
        // two centroids start on top of each other
        let l = DMatrix::from_column_slice(5, 1, &[0.0, 0.0, 1.0, 5.0, 6.0]);
        let mu0 = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 5.5]);
        let res = kmeans_warm(&l, &mu0, 100).unwrap();
        assert_eq!(res.structure.sizes().iter().filter(|&&c| c > 0).count(), 3);
    }

    proptest! {
        #[test]
        fn fixed_point_properties(seed in 0u64..5_000, q in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.random_range(q..20);
            let l = DMatrix::from_fn(p, 2, |_, _| rng.random_range(-1.0..1.0));
            let res = kmeans_fit(&l, &KmeansConfig::new(q, seed)).unwrap();
            let st = &res.structure;
            prop_assert!(st.sizes().iter().all(|&c| c > 0));
            let recomputed = sse(&l, &st.labels, &st.mu);
            prop_assert!((recomputed - res.sse).abs() <= 1e-10 * res.sse.max(1e-300));
            let means = centroids(&l, &st.labels, q);
            prop_assert!((means - &st.mu).abs().max() <= 1e-12);
            for j in 0..p {
                let own = sq_dist(&l, j, &st.mu, st.labels[j]);
                for k in 0..q {
                    let d = sq_dist(&l, j, &st.mu, k);
                    prop_assert!(own <= d);
                    if k < st.labels[j] {
                        prop_assert!(own < d);
                    }
                }
            }
        }
    }
}
