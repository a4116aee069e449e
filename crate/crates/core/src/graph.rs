//! Similarity graphs, Laplacians, and the kernel pseudo-response that turns
//! spectral clustering into an unsupervised clustered fit.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::linalg;
use crate::solver::{self, FitConfig, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Gaussian { bandwidth: f64 },
    MutualKnn { k: usize },
    /// Read from an edge list.
    Edges,
}

/// A symmetric nonnegative weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub w: DMatrix<f64>,
    pub kind: GraphKind,
}

impl SimilarityGraph {
    pub fn from_weights(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(CrlError::Structural("weight matrix must be square".into()));
        }
        let scale = w.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        if (&w - w.transpose()).abs().max() > 1e-12 * scale {
            return Err(CrlError::Domain("weight matrix is not symmetric".into()));
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(CrlError::Domain("weights must be finite and nonnegative".into()));
        }
        Ok(SimilarityGraph { w, kind: GraphKind::Edges })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }
}

fn sq_distances(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let norms: Vec<f64> = data.row_iter().map(|r| r.norm_squared()).collect();
    let gram = data * data.transpose();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0) })
}

/// `W[i,j] = exp(−‖xᵢ − xⱼ‖²/(2h²))` with a zero diagonal.
pub fn gaussian_similarity(data: &DMatrix<f64>, bandwidth: f64) -> Result<SimilarityGraph> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(CrlError::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let d2 = sq_distances(data);
    let scale = 2.0 * bandwidth * bandwidth;
    let w = DMatrix::from_fn(d2.nrows(), d2.ncols(), |i, j| if i == j { 0.0 } else { (-d2[(i, j)] / scale).exp() });
    Ok(SimilarityGraph { w, kind: GraphKind::Gaussian { bandwidth } })
}

/// Median pairwise distance over a subsample of at most 500 points.
pub fn default_bandwidth(data: &DMatrix<f64>, seed: u64) -> f64 {
    let n = data.nrows();
    let idx: Vec<usize> = if n > 500 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, 500).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let sub = DMatrix::from_fn(idx.len(), data.ncols(), |i, c| data[(idx[i], c)]);
    let d2 = sq_distances(&sub);
    let mut dists: Vec<f64> = Vec::with_capacity(idx.len() * idx.len() / 2);
    for i in 0..idx.len() {
        for j in i + 1..idx.len() {
            dists.push(d2[(i, j)].sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 1 { dists[mid] } else { 0.5 * (dists[mid - 1] + dists[mid]) };
    if med > 0.0 { med } else { 1.0 }
}

/// Edge `i–j` iff each is among the other's `k` nearest neighbors
/// (distance ties broken by lower index).
pub fn mutual_knn_similarity(data: &DMatrix<f64>, k: usize) -> Result<SimilarityGraph> {
    let n = data.nrows();
    if k == 0 || k >= n {
        return Err(CrlError::Config(format!("k must lie in 1..{n}, got {k}")));
    }
    let d2 = sq_distances(data);
    let mut near = vec![vec![false; n]; n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        for &j in &others[..k] {
            near[i][j] = true;
        }
    }
    let w = DMatrix::from_fn(n, n, |i, j| if near[i][j] && near[j][i] { 1.0 } else { 0.0 });
    Ok(SimilarityGraph { w, kind: GraphKind::MutualKnn { k } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub l: DMatrix<f64>,
    pub normalized: bool,
}

/// `D − W`, or `I − D^{-1/2} W D^{-1/2}` when normalized.
pub fn graph_laplacian(g: &SimilarityGraph, normalized: bool) -> Result<Laplacian> {
    let n = g.n();
    let deg: Vec<f64> = g.w.row_iter().map(|r| r.sum()).collect();
    let l = if normalized {
        if let Some(v) = deg.iter().position(|&d| d <= 0.0) {
            return Err(CrlError::Domain(format!("vertex {v} is isolated; the normalized Laplacian is undefined")));
        }
        let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        DMatrix::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - inv[i] * g.w[(i, j)] * inv[j])
    } else {
        let l = DMatrix::from_fn(n, n, |i, j| (if i == j { deg[i] } else { 0.0 }) - g.w[(i, j)]);
        debug_assert!(l.row_iter().all(|r| r.sum().abs() <= 1e-9 * (1.0 + deg.iter().fold(0.0f64, |a, &b| a.max(b)))));
        l
    };
    Ok(Laplacian { l, normalized })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSource {
    Kernel,
    Laplacian,
}

/// Leading `m̄` eigenvectors of the kernel (a Laplacian `L` is first mapped to
/// `σ_max(L)·I − L`). With `whiten` the block is `U[:, 1:m̄]`; otherwise its
/// columns are scaled by the square roots of their eigenvalues.
pub fn kernel_to_response(k: &DMatrix<f64>, source: KernelSource, m_bar: usize, whiten: bool) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if !k.is_square() {
        return Err(CrlError::Structural("kernel must be square".into()));
    }
    if m_bar == 0 || m_bar > n {
        return Err(CrlError::Config(format!("m_bar must lie in 1..={n}, got {m_bar}")));
    }
    let scale = k.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if (k - k.transpose()).abs().max() > 1e-10 * scale {
        return Err(CrlError::Domain("kernel input is not symmetric".into()));
    }
    let (vals, vecs) = match source {
        KernelSource::Kernel => {
            let (vals, vecs) = linalg::sym_eigen_desc(k);
            let smax = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if vals[n - 1] < -1e-8 * smax {
                return Err(CrlError::Domain(format!("kernel has negative eigenvalue {:.3e}", vals[n - 1])));
            }
            (vals, vecs)
        }
        KernelSource::Laplacian => {
            // σ_max(L)·I − L shares the eigenvectors of L with eigenvalues
            // σ_max − λ, so one decomposition of L suffices
            let (lv, lvecs) = linalg::sym_eigen_desc(k);
            let top = lv[0];
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| lv[a].total_cmp(&lv[b]).then(a.cmp(&b)));
            let vals = nalgebra::DVector::from_iterator(n, order.iter().map(|&j| top - lv[j]));
            let vecs = DMatrix::from_fn(n, n, |i, c| lvecs[(i, order[c])]);
            (vals, vecs)
        }
    };
    let mut out = vecs.columns(0, m_bar).into_owned();
    if !whiten {
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= vals[j].max(0.0).sqrt();
        }
    }
    Ok(out)
}

/// Kernel clustering: normalized (or unnormalized) Laplacian of `g`, leading
/// `m̄` eigenvectors as the response, then an unsupervised fit.
pub fn kernel_crl(g: &SimilarityGraph, normalized: bool, m_bar: usize, whiten: bool, cfg: &FitConfig) -> Result<FitResult> {
    let lap = graph_laplacian(g, normalized)?;
    let y = kernel_to_response(&lap.l, KernelSource::Laplacian, m_bar, whiten)?;
    solver::fit_unsupervised(&y, cfg)
}

/// Parses whitespace-separated `i j [weight]` lines (blank lines and `#`
/// comments skipped) into a graph symmetrized by the maximum weight.
pub fn parse_edge_list(text: &str, n: Option<usize>, one_based: bool) -> Result<SimilarityGraph> {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(CrlError::Parse(format!("line {}: expected `i j [weight]`", lineno + 1)));
        }
        let idx = |s: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| CrlError::Parse(format!("line {}: bad vertex `{s}`", lineno + 1)))?;
            if one_based {
                v.checked_sub(1).ok_or_else(|| CrlError::Parse(format!("line {}: vertex 0 in a 1-based list", lineno + 1)))
            } else {
                Ok(v)
            }
        };
        let i = idx(fields[0])?;
        let j = idx(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| CrlError::Parse(format!("line {}: bad weight `{s}`", lineno + 1)))?,
            None => 1.0,
        };
        if !(w >= 0.0 && w.is_finite()) {
            return Err(CrlError::Domain(format!("line {}: weight must be finite and nonnegative", lineno + 1)));
        }
        edges.push((i, j, w));
    }
    let max_idx = edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(max_idx);
    if max_idx > n {
        return Err(CrlError::Structural(format!("vertex index {} exceeds n = {n}", max_idx - 1)));
    }
    let mut w = DMatrix::zeros(n, n);
    for (i, j, v) in edges {
        if i == j {
            continue;
        }
        let cur: f64 = w[(i, j)];
        let m = cur.max(v);
        w[(i, j)] = m;
        w[(j, i)] = m;
    }
    Ok(SimilarityGraph { w, kind: GraphKind::Edges })
}

pub fn read_edge_list(path: &Path, n: Option<usize>, one_based: bool) -> Result<SimilarityGraph> {
    parse_edge_list(&std::fs::read_to_string(path)?, n, one_based)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn gaussian_examples() {
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 2.0_f64.sqrt() * 1.5, 0.0]);
        let g = gaussian_similarity(&data, 1.5).unwrap();
        assert_eq!(g.w[(0, 1)], 1.0);
        assert!((g.w[(0, 2)] - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(g.w[(0, 0)], 0.0);
        assert!(gaussian_similarity(&data, 0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = gaussian_similarity(&data, 0.7).unwrap();
        assert_eq!(g.w, g.w.transpose());
    }

    #[test]
    fn mutual_knn_examples() {
        // points 0, 1, 3 on a line
        let data = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        let g = mutual_knn_similarity(&data, 1).unwrap();
        assert_eq!(g.w, DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));

        let g = mutual_knn_similarity(&data, 2).unwrap();
        assert_eq!(g.w, DMatrix::from_element(3, 3, 1.0) - DMatrix::identity(3, 3));
        assert!(mutual_knn_similarity(&data, 3).is_err());

        // 2 is near 1 but 1 is nearer to 0: no edge 1–2 at k = 1
        assert_eq!(mutual_knn_similarity(&data, 1).unwrap().w[(1, 2)], 0.0);
    }

    #[test]
    fn laplacian_examples() {
        let g = SimilarityGraph::from_weights(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(graph_laplacian(&g, false).unwrap().l, expect);
        assert!((graph_laplacian(&g, true).unwrap().l - expect).abs().max() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = DMatrix::from_fn(12, 12, |_, _| if rng.random_bool(0.4) { rng.random_range(0.1..2.0) } else { 0.0 });
        w = (&w + w.transpose()) * 0.5;
        w.fill_diagonal(0.0);
        let g = SimilarityGraph::from_weights(w).unwrap();
        let l = graph_laplacian(&g, false).unwrap().l;
        assert!((&l * DMatrix::from_element(12, 1, 1.0)).abs().max() < 1e-12);
        let (vals, _) = linalg::sym_eigen_desc(&l);
        assert!(vals.iter().all(|&v| v >= -1e-10));

        let iso = SimilarityGraph::from_weights(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        match graph_laplacian(&iso, true) {
            Err(CrlError::Domain(msg)) => assert!(msg.contains("vertex 2")),
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn kernel_response_examples() {
        let y = kernel_to_response(&DMatrix::identity(5, 5), KernelSource::Kernel, 2, true).unwrap();
        assert!(linalg::orthonormality_gap(&y) < 1e-12);

        // two disconnected triangles
        let mut w = DMatrix::zeros(6, 6);
        for (a, b) in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)] {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
        let lap = graph_laplacian(&SimilarityGraph::from_weights(w).unwrap(), false).unwrap();
        let y = kernel_to_response(&lap.l, KernelSource::Laplacian, 2, true).unwrap();
        for block in [[0, 1, 2], [3, 4, 5]] {
            for &i in &block[1..] {
                assert!((y.row(i) - y.row(block[0])).abs().max() < 1e-10);
            }
        }

        let v = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 1.0]);
        let k = &v * v.transpose();
        let y = kernel_to_response(&k, KernelSource::Kernel, 1, false).unwrap();
        // eigenpair (‖v‖², v/‖v‖), so U D^{1/2} = v
        let expect = v.clone();
        let sign = if y[(1, 0)] * expect[(1, 0)] > 0.0 { 1.0 } else { -1.0 };
        assert!((y * sign - expect).abs().max() < 1e-10);

        let bad = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(kernel_to_response(&bad, KernelSource::Kernel, 1, true), Err(CrlError::Domain(_))));
        assert!(kernel_to_response(&DMatrix::identity(3, 3), KernelSource::Kernel, 4, true).is_err());
    }

    #[test]
    fn two_blob_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = DMatrix::from_fn(60, 2, |i, _| if i < 30 { 0.0 } else { 8.0 } + rng.random_range(-0.5..0.5));
        let truth: Vec<usize> = (0..60).map(|i| i / 30).collect();
        let g = gaussian_similarity(&data, 1.0).unwrap();
        // whitened m̄ = 2q is not safe here: the two extra columns are
        // within-blob eigenvectors of unit norm, and splitting a blob along one
        // of them beats the true partition
        let res = kernel_crl(&g, true, 4, false, &FitConfig::new(2, 2, 1)).unwrap();
        assert_eq!(crate::metrics::clustering_accuracy(&truth, &res.clusters.labels).unwrap(), 1.0);
    }

    #[test]
    fn edge_list_parsing() {
        let g = parse_edge_list("1 2\n2 3 0.5\n# comment\n3 2 2.0\n", None, true).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.w[(0, 1)], 1.0);
        assert_eq!(g.w[(1, 2)], 2.0);
        assert_eq!(g.w[(2, 1)], 2.0);
        let g0 = parse_edge_list("0 1\n", Some(4), false).unwrap();
        assert_eq!(g0.n(), 4);
        assert!(parse_edge_list("0 1\n", None, true).is_err());
        assert!(parse_edge_list("a b\n", None, false).is_err());
    }

    #[test]
    fn bandwidth_is_median_distance() {
        let data = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(default_bandwidth(&data, 0), 2.0);
    }
}
