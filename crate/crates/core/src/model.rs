//! Core domain types: the problem instance, the `S Vᵀ` factorization, the
//! cluster structure of `S`, and structural measures on coefficient matrices.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::linalg;
use crate::losses::LossKind;

/// A `p × m` coefficient matrix `B`.
pub type CoefficientMatrix = DMatrix<f64>;

/// The linear map from coefficients to natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// `η = X B` with `X` of size `n × p`.
    Dense(DMatrix<f64>),
    /// `η = B`; the unsupervised case `X = I_n`.
    Identity(usize),
    /// Trace regression: `ηᵢ = ⟨xᵢ, bᵢ⟩`, one coefficient row per sample.
    /// `B` is `n × p` and the response is a single column.
    Trace(DMatrix<f64>),
}

impl Design {
    pub fn n_obs(&self) -> usize {
        match self {
            Design::Dense(x) | Design::Trace(x) => x.nrows(),
            Design::Identity(n) => *n,
        }
    }

    /// Shape of `B` given the number of response columns.
    pub fn coef_shape(&self, m: usize) -> (usize, usize) {
        match self {
            Design::Dense(x) => (x.ncols(), m),
            Design::Identity(n) => (*n, m),
            Design::Trace(x) => (x.nrows(), x.ncols()),
        }
    }

    /// Natural parameter `X B` (without intercept).
    pub fn forward(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Design::Dense(x) => x * b,
            Design::Identity(_) => b.clone(),
            Design::Trace(x) => {
                DMatrix::from_fn(x.nrows(), 1, |i, _| x.row(i).dot(&b.row(i)))
            }
        }
    }

    /// Adjoint map `Xᵀ G`.
    pub fn adjoint(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Design::Dense(x) => x.tr_mul(g),
            Design::Identity(_) => g.clone(),
            Design::Trace(x) => {
                let mut out = x.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= g[(i, 0)];
                }
                out
            }
        }
    }

    /// `‖X‖₂²`, the squared operator norm.
    pub fn op_norm_sq(&self) -> f64 {
        match self {
            Design::Dense(x) => linalg::spectral_norm(x).powi(2),
            Design::Identity(_) => 1.0,
            Design::Trace(x) => x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max),
        }
    }

    /// Squared operator norm of `[1, X]`, the design augmented by an intercept.
    pub fn op_norm_sq_with_intercept(&self) -> f64 {
        match self {
            Design::Dense(x) => {
                let n = x.nrows();
                let aug = DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
                linalg::spectral_norm(&aug).powi(2)
            }
            // ‖[1, I]‖² = 1 + n
            Design::Identity(n) => 1.0 + *n as f64,
            Design::Trace(x) => 1.0 + x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Design::Dense(x) => numerical_rank(x, 1e-10),
            Design::Identity(n) => *n,
            Design::Trace(x) => x.row_iter().filter(|r| r.norm_squared() > 0.0).count(),
        }
    }

    /// The dense matrix for `Dense` and `Identity` designs.
    pub fn to_dense(&self) -> Option<DMatrix<f64>> {
        match self {
            Design::Dense(x) => Some(x.clone()),
            Design::Identity(n) => Some(DMatrix::identity(*n, *n)),
            Design::Trace(_) => None,
        }
    }
}

/// A problem instance: responses, design, and loss.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: Design,
    pub loss: LossKind,
    pub centered: bool,
    pub standardized: bool,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, loss: LossKind) -> Result<Self> {
        Self::with_design(y, Design::Dense(x), loss)
    }

    /// Unsupervised instance `X = I_n`.
    pub fn unsupervised(y: DMatrix<f64>, loss: LossKind) -> Result<Self> {
        let n = y.nrows();
        Self::with_design(y, Design::Identity(n), loss)
    }

    pub fn with_design(y: DMatrix<f64>, x: Design, loss: LossKind) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(CrlError::Structural("response matrix is empty".into()));
        }
        if x.n_obs() != y.nrows() {
            return Err(CrlError::Structural(format!(
                "design has {} rows but response has {}",
                x.n_obs(),
                y.nrows()
            )));
        }
        match &x {
            Design::Dense(m) | Design::Trace(m) => {
                if m.ncols() == 0 {
                    return Err(CrlError::Structural("design has no columns".into()));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(CrlError::Domain("design contains non-finite entries".into()));
                }
            }
            Design::Identity(_) => {}
        }
        if matches!(x, Design::Trace(_)) && y.ncols() != 1 {
            return Err(CrlError::Structural("trace regression takes a single response column".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CrlError::Domain("response contains non-finite entries".into()));
        }
        loss.check_response(&y)?;
        Ok(Dataset { y, x, loss, centered: false, standardized: false })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    /// Shape of the coefficient matrix `B`.
    pub fn coef_shape(&self) -> (usize, usize) {
        self.x.coef_shape(self.m())
    }

    /// `1 αᵀ + X B`.
    pub fn linear_predictor(&self, b: &DMatrix<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
        let mut eta = self.x.forward(b);
        for mut row in eta.row_iter_mut() {
            row += alpha.transpose();
        }
        eta
    }
}

/// `B = S Vᵀ` with orthonormal `V` and an intercept `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub r: usize,
}

impl Factorization {
    pub fn new(s: DMatrix<f64>, v: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let f = Factorization { r: s.ncols(), s, v, alpha };
        f.validate(1e-10)?;
        Ok(f)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.r == 0 || self.s.ncols() != self.r || self.v.ncols() != self.r {
            return Err(CrlError::Structural(format!(
                "S has {} columns and V has {} columns; expected r = {}",
                self.s.ncols(),
                self.v.ncols(),
                self.r
            )));
        }
        if self.alpha.len() != self.v.nrows() {
            return Err(CrlError::Structural("intercept length differs from V rows".into()));
        }
        if self.r > self.v.nrows() || self.r > self.s.nrows() {
            return Err(CrlError::Structural("rank exceeds min(m, p)".into()));
        }
        let gap = linalg::orthonormality_gap(&self.v);
        if gap > tol {
            return Err(CrlError::Structural(format!("V is not orthonormal (gap {gap:.3e})")));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }
}

/// `B = S Vᵀ`.
pub fn compose_coefficients(f: &Factorization) -> Result<CoefficientMatrix> {
    if f.s.ncols() != f.v.ncols() {
        return Err(CrlError::Structural(format!(
            "S is {}×{} but V is {}×{}",
            f.s.nrows(),
            f.s.ncols(),
            f.v.nrows(),
            f.v.ncols()
        )));
    }
    Ok(&f.s * f.v.transpose())
}

/// Feature clusters of `S`: labels (0-based) and the centroid matrix `μ`,
/// so that row `j` of `S` is `μ[labels[j], :]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStructure {
    pub labels: Vec<usize>,
    pub mu: DMatrix<f64>,
}

impl ClusterStructure {
    pub fn new(labels: Vec<usize>, mu: DMatrix<f64>) -> Result<Self> {
        let q = mu.nrows();
        let mut seen = vec![false; q];
        for &l in &labels {
            if l >= q {
                return Err(CrlError::Structural(format!("label {l} out of range for q = {q}")));
            }
            seen[l] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(CrlError::Structural(format!("cluster {k} is empty")));
        }
        Ok(ClusterStructure { labels, mu })
    }

    pub fn q(&self) -> usize {
        self.mu.nrows()
    }

    /// `S = F μ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let r = self.mu.ncols();
        DMatrix::from_fn(self.labels.len(), r, |j, k| self.mu[(self.labels[j], k)])
    }

    /// Groups exactly equal rows of `s`, numbering clusters by first appearance.
    pub fn from_rows(s: &DMatrix<f64>) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut labels = Vec::with_capacity(s.nrows());
        let mut reps: Vec<usize> = Vec::new();
        for (j, row) in s.row_iter().enumerate() {
            let key = row_key(row.iter());
            let next = index.len();
            let label = *index.entry(key).or_insert_with(|| {
                reps.push(j);
                next
            });
            labels.push(label);
        }
        let mu = DMatrix::from_fn(reps.len(), s.ncols(), |k, c| s[(reps[k], c)]);
        ClusterStructure { labels, mu }
    }

    /// Sizes of each cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.q()];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }
}

fn row_key<'a>(row: impl Iterator<Item = &'a f64>) -> Vec<u64> {
    // +0.0 and -0.0 compare equal, so they must hash equal
    row.map(|&x| if x == 0.0 { 0u64 } else { x.to_bits() }).collect()
}

/// Number of distinct rows of `b`: rows are grouped greedily with each row
/// joining the first representative within max-abs distance `tol`.
/// `tol = 0` means exact equality.
pub fn distinct_row_count(b: &DMatrix<f64>, tol: f64) -> usize {
    if b.nrows() == 0 {
        return 0;
    }
    if tol == 0.0 {
        let mut keys = std::collections::HashSet::new();
        for row in b.row_iter() {
            keys.insert(row_key(row.iter()));
        }
        return keys.len();
    }
    let mut reps: Vec<usize> = Vec::new();
    for j in 0..b.nrows() {
        let joined = reps.iter().any(|&k| {
            b.row(j)
                .iter()
                .zip(b.row(k).iter())
                .all(|(a, c)| (a - c).abs() <= tol)
        });
        if !joined {
            reps.push(j);
        }
    }
    reps.len()
}

/// Default row-equality tolerance for externally supplied matrices.
pub fn default_row_tol(b: &DMatrix<f64>) -> f64 {
    1e-12 * b.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Count of singular values above `rel_tol · σ₁`; zero for the zero matrix.
pub fn numerical_rank(b: &DMatrix<f64>, rel_tol: f64) -> usize {
    linalg::numerical_rank(b, rel_tol)
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Centers `Y` (optionally) and `X` columnwise, and scales `X` columns to unit
/// sample standard deviation when `scale_x`. Constant columns stay at zero.
pub fn standardize_columns(d: &Dataset, center_y: bool, scale_x: bool) -> Result<Dataset> {
    let x = match &d.x {
        Design::Dense(x) => x,
        _ => return Err(CrlError::Config("standardization applies to dense designs only".into())),
    };
    let n = d.n();
    if scale_x && n < 2 {
        return Err(CrlError::Config("scaling needs at least two observations".into()));
    }
    let mut xc = x.clone();
    let xm = column_means(x);
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-xm[j]);
        if scale_x {
            let ss = col.norm_squared();
            let sd = (ss / (n as f64 - 1.0)).sqrt();
            if sd > 0.0 && ss > 1e-28 * (xm[j] * xm[j] * n as f64).max(1.0) {
                col /= sd;
            } else {
                col.fill(0.0);
            }
        }
    }
    let mut y = d.y.clone();
    if center_y {
        let ym = column_means(&d.y);
        for (k, mut col) in y.column_iter_mut().enumerate() {
            col.add_scalar_mut(-ym[k]);
        }
    }
    Ok(Dataset {
        y,
        x: Design::Dense(xc),
        loss: d.loss,
        centered: true,
        standardized: scale_x || d.standardized,
    })
}
