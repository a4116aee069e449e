//! The clustered reduced-rank optimizer: outer linearized-surrogate steps with
//! a line-searched curvature `ρ`, and an inner block-coordinate descent that
//! alternates a Procrustes rotation for `V` with K-means for `S`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::kmeans::{self, KmeansConfig};
use crate::linalg;
use crate::losses::{self, Lipschitz, LossKind};
use crate::model::{ClusterStructure, Dataset, Design, Factorization};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// At most `q` distinct rows of `S`.
    RowWise,
    /// At most `q` distinct values in each column of `S`.
    RankWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoPolicy {
    /// `ρ = L‖X‖₂²`, no search.
    Conservative,
    /// Geometric ladder `ρ₀·growᵏ`; `ρ₀` is `init` on the first outer step
    /// and `max(1e-4, shrink·ρ_prev)` afterwards.
    LineSearch { init: f64, grow: f64, shrink: f64 },
}

impl Default for RhoPolicy {
    fn default() -> Self {
        RhoPolicy::LineSearch { init: 1.0, grow: 2.0, shrink: 0.9 }
    }
}

/// Doublings tried before the line search gives up.
pub const MAX_LADDER_STEPS: usize = 60;

/// Relative change of the inner objective below which the inner loop stops.
pub const INNER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub q: usize,
    pub r: usize,
    pub variant: Variant,
    pub rho_policy: RhoPolicy,
    pub eps: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Multi-start settings for the initializer. Its `q` is ignored in favor
    /// of the `q` above.
    pub kmeans: KmeansConfig,
    pub fit_intercept: bool,
    /// Records the orthogonal-decomposition gap on every inner step.
    #[serde(default)]
    pub check_identities: bool,
}

impl FitConfig {
    pub fn new(q: usize, r: usize, seed: u64) -> Self {
        FitConfig {
            q,
            r,
            variant: Variant::RowWise,
            rho_policy: RhoPolicy::default(),
            eps: 1e-6,
            max_outer: 500,
            max_inner: 50,
            kmeans: KmeansConfig::new(q, seed),
            fit_intercept: false,
            check_identities: false,
        }
    }

    pub fn with_intercept(mut self, on: bool) -> Self {
        self.fit_intercept = on;
        self
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    fn kmeans_cfg(&self) -> KmeansConfig {
        KmeansConfig { q: self.q, ..self.kmeans.clone() }
    }

    pub fn validate(&self, d: &Dataset) -> Result<()> {
        let (p, m) = d.coef_shape();
        if self.q == 0 || self.r == 0 {
            return Err(CrlError::Config("q and r must be positive".into()));
        }
        if self.r > m.min(p) {
            return Err(CrlError::Config(format!("r = {} exceeds min(m, p) = {}", self.r, m.min(p))));
        }
        if self.q > p {
            return Err(CrlError::Config(format!("q = {} exceeds the {} coefficient rows", self.q, p)));
        }
        if self.variant == Variant::RowWise && self.q < self.r {
            return Err(CrlError::Config(format!(
                "row-wise clustering needs q ≥ r (got q = {}, r = {})",
                self.q, self.r
            )));
        }
        if !(self.eps > 0.0) || self.max_outer == 0 || self.max_inner == 0 {
            return Err(CrlError::Config("eps, max_outer and max_inner must be positive".into()));
        }
        if let RhoPolicy::LineSearch { init, grow, shrink } = self.rho_policy {
            if !(init > 0.0) || !(grow > 1.0) || !(shrink > 0.0 && shrink <= 1.0) {
                return Err(CrlError::Config("line search needs init > 0, grow > 1, 0 < shrink ≤ 1".into()));
            }
        }
        if self.kmeans.n_starts == 0 || self.kmeans.max_iter == 0 {
            return Err(CrlError::Config("K-means n_starts and max_iter must be positive".into()));
        }
        if self.fit_intercept && matches!(d.x, Design::Trace(_)) {
            return Err(CrlError::Config("trace designs take no intercept".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Largest relative orthogonal-decomposition gap seen in the inner loop
    /// (only when `check_identities` is set).
    pub max_decomposition_gap: Option<f64>,
    /// Accepted `ρ` per outer iteration.
    pub rho_trace: Vec<f64>,
    /// Whether any Poisson natural parameter ended above the cap.
    pub eta_clamped: bool,
    /// Set when an accepted step failed to decrease the objective and the
    /// fit stopped early.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub factorization: Factorization,
    pub clusters: ClusterStructure,
    /// Objective at the initializer followed by every accepted outer step.
    pub objective_trace: Vec<f64>,
    pub rho_final: f64,
    pub outer_iters: usize,
    pub converged: bool,
    pub loss_kind: LossKind,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// `B = S Vᵀ`.
    pub fn coefficients(&self) -> DMatrix<f64> {
        &self.factorization.s * self.factorization.v.transpose()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Clustering state carried between inner steps for warm starts.
#[derive(Debug, Clone)]
enum Groups {
    Rows(ClusterStructure),
    Levels(DMatrix<f64>),
}

impl Groups {
    fn from_s(s: &DMatrix<f64>, variant: Variant) -> Self {
        match variant {
            Variant::RowWise => Groups::Rows(ClusterStructure::from_rows(s)),
            Variant::RankWise => {
                // one column of levels per column of S, padded later as needed
                let cols: Vec<Vec<f64>> = s.column_iter().map(|c| distinct_values(c.iter())).collect();
                let k = cols.iter().map(Vec::len).max().unwrap_or(0);
                let levels = DMatrix::from_fn(k, s.ncols(), |i, c| cols[c][i.min(cols[c].len() - 1)]);
                Groups::Levels(levels)
            }
        }
    }

    fn structure(&self, s: &DMatrix<f64>) -> ClusterStructure {
        match self {
            Groups::Rows(cs) => cs.clone(),
            Groups::Levels(_) => ClusterStructure::from_rows(s),
        }
    }
}

fn distinct_values<'a>(it: impl Iterator<Item = &'a f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in it {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn check_factorization(d: &Dataset, f: &Factorization) -> Result<()> {
    let (p, m) = d.coef_shape();
    if f.s.nrows() != p || f.v.nrows() != m || f.alpha.len() != d.m() {
        return Err(CrlError::Structural(format!(
            "factorization shapes S {}×{}, V {}×{}, α {} do not fit B {}×{}",
            f.s.nrows(),
            f.s.ncols(),
            f.v.nrows(),
            f.v.ncols(),
            f.alpha.len(),
            p,
            m
        )));
    }
    f.validate(1e-8)
}

/// `l₀(1αᵀ + X S Vᵀ; Y)`.
pub fn objective_value(d: &Dataset, f: &Factorization) -> Result<f64> {
    check_factorization(d, f)?;
    let b = &f.s * f.v.transpose();
    Ok(losses::loss_unchecked(d.loss, &d.linear_predictor(&b, &f.alpha), &d.y))
}

/// `Ỹ = B − Xᵀ∇l₀(1αᵀ + XB; Y)/ρ`.
pub fn pseudo_response(d: &Dataset, f: &Factorization, rho: f64) -> Result<DMatrix<f64>> {
    check_factorization(d, f)?;
    if !(rho > 0.0) {
        return Err(CrlError::Config("rho must be positive".into()));
    }
    let b = &f.s * f.v.transpose();
    let g = losses::gradient_unchecked(d.loss, &d.linear_predictor(&b, &f.alpha), &d.y);
    Ok(b - d.x.adjoint(&g) / rho)
}

/// `α − ∇l₀ᵀ1/ρ`.
pub fn intercept_step(d: &Dataset, f: &Factorization, rho: f64) -> Result<DVector<f64>> {
    check_factorization(d, f)?;
    if !(rho > 0.0) {
        return Err(CrlError::Config("rho must be positive".into()));
    }
    let b = &f.s * f.v.transpose();
    let g = losses::gradient_unchecked(d.loss, &d.linear_predictor(&b, &f.alpha), &d.y);
    Ok(&f.alpha - column_sums(&g) / rho)
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// The orthonormal `V` maximizing `⟨W, V⟩`: `U_w V_wᵀ` from the thin SVD.
/// Directions of `W` with zero singular value are filled in deterministically
/// by orthogonalizing the standard basis against the nonzero ones.
pub fn procrustes_rotation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, r) = w.shape();
    assert!(r <= m, "Procrustes needs at least as many rows as columns");
    let svd = w.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let top = order.first().map_or(0.0, |&i| sv[i]);
    let kept: Vec<usize> = order.iter().copied().filter(|&i| top > 0.0 && sv[i] > 1e-12 * top).collect();
    let uk = DMatrix::from_fn(m, kept.len(), |i, j| u[(i, kept[j])]);
    let vk = DMatrix::from_fn(r, kept.len(), |i, j| vt[(kept[j], i)]);
    let uf = linalg::complete_orthonormal(&uk, r);
    let vf = linalg::complete_orthonormal(&vk, r);
    uf * vf.transpose()
}

/// `½‖Ỹ − S Vᵀ‖²`.
fn inner_value(ytil: &DMatrix<f64>, s: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    0.5 * linalg::frob_sq(&(ytil - s * v.transpose()))
}

/// Appends rows of `l` (farthest from the current centroids first) until
/// there are `q` centroids.
fn pad_centroids(l: &DMatrix<f64>, mu: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let mut rows: Vec<Vec<f64>> = mu.row_iter().map(|r| r.iter().copied().collect()).collect();
    while rows.len() < q {
        let mut best = 0;
        let mut best_d = -1.0;
        for j in 0..l.nrows() {
            let d = rows
                .iter()
                .map(|c| c.iter().enumerate().map(|(k, x)| (l[(j, k)] - x).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = j;
            }
        }
        rows.push(l.row(best).iter().copied().collect());
    }
    DMatrix::from_fn(q, l.ncols(), |k, c| rows[k][c])
}

/// Clusters `l`, warm-started from the previous groups.
fn cluster_step(l: &DMatrix<f64>, prev: &Groups, cfg: &FitConfig) -> Result<(DMatrix<f64>, Groups)> {
    let kcfg = cfg.kmeans_cfg();
    match prev {
        Groups::Rows(cs) => {
            let res = if cs.q() <= cfg.q && cs.mu.ncols() == l.ncols() {
                kmeans::kmeans_warm(l, &pad_centroids(l, &cs.mu, cfg.q), kcfg.max_iter)?
            } else {
                kmeans::kmeans_fit(l, &kcfg)?
            };
            Ok((res.structure.reconstruct(), Groups::Rows(res.structure)))
        }
        Groups::Levels(levels) => {
            let (s, lv) = if levels.nrows() <= cfg.q && levels.ncols() == l.ncols() {
                let cols: Vec<DMatrix<f64>> = (0..l.ncols())
                    .map(|c| {
                        let col = l.columns(c, 1).into_owned();
                        let start = levels.columns(c, 1).into_owned();
                        pad_centroids(&col, &start, cfg.q)
                    })
                    .collect();
                let start = DMatrix::from_fn(cfg.q, l.ncols(), |k, c| cols[c][(k, 0)]);
                kmeans::kmeans_columnwise_warm(l, &start, kcfg.max_iter)?
            } else {
                kmeans::kmeans_columnwise(l, cfg.q, &kcfg)?
            };
            Ok((s, Groups::Levels(lv)))
        }
    }
}

struct InnerOutcome {
    s: DMatrix<f64>,
    v: DMatrix<f64>,
    groups: Groups,
    max_gap: Option<f64>,
}

/// Relative gap of `‖Ỹ − SVᵀ‖² = ‖ỸV − S‖² + ‖ỸV⊥‖²`, measured against `‖Ỹ‖²`.
fn decomposition_gap(ytil: &DMatrix<f64>, s: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let full = linalg::complete_orthonormal(v, v.nrows());
    let v_perp = full.columns(v.ncols(), v.nrows() - v.ncols()).into_owned();
    let lhs = linalg::frob_sq(&(ytil - s * v.transpose()));
    let rhs = linalg::frob_sq(&(ytil * v - s)) + linalg::frob_sq(&(ytil * v_perp));
    (lhs - rhs).abs() / linalg::frob_sq(ytil).max(f64::MIN_POSITIVE)
}

fn inner_descent(ytil: &DMatrix<f64>, s0: &DMatrix<f64>, v0: &DMatrix<f64>, g0: &Groups, cfg: &FitConfig) -> Result<InnerOutcome> {
    let mut s = s0.clone();
    let mut v = v0.clone();
    let mut groups = g0.clone();
    let mut val = inner_value(ytil, &s, &v);
    let mut max_gap: Option<f64> = None;
    for _ in 0..cfg.max_inner {
        let v_new = procrustes_rotation(&(ytil.transpose() * &s));
        let l = ytil * &v_new;
        let (s_new, g_new) = cluster_step(&l, &groups, cfg)?;
        if cfg.check_identities {
            let gap = decomposition_gap(ytil, &s_new, &v_new);
            max_gap = Some(max_gap.map_or(gap, |m| m.max(gap)));
        }
        let val_new = inner_value(ytil, &s_new, &v_new);
        if val_new > val {
            break;
        }
        let drop = val - val_new;
        s = s_new;
        v = v_new;
        groups = g_new;
        val = val_new;
        if drop <= INNER_TOL * val {
            break;
        }
    }
    Ok(InnerOutcome { s, v, groups, max_gap })
}

/// Block-coordinate descent on `½‖Ỹ − S Vᵀ‖²` from `f0`, alternating
/// `V ← procrustes(ỸᵀS)` and `S ← cluster(ỸV)`. Never increases the value at `f0`.
pub fn inner_sv_descent(ytil: &DMatrix<f64>, f0: &Factorization, cfg: &FitConfig) -> Result<(Factorization, ClusterStructure)> {
    if ytil.shape() != (f0.s.nrows(), f0.v.nrows()) {
        return Err(CrlError::Structural("pseudo-response shape differs from S Vᵀ".into()));
    }
    let g0 = Groups::from_s(&f0.s, cfg.variant);
    let out = inner_descent(ytil, &f0.s, &f0.v, &g0, cfg)?;
    let clusters = out.groups.structure(&out.s);
    let f = Factorization { r: out.s.ncols(), s: out.s, v: out.v, alpha: f0.alpha.clone() };
    Ok((f, clusters))
}

/// Conservative curvature `L·‖X‖₂²` (with the intercept column when it is
/// updated explicitly).
pub fn conservative_rho(d: &Dataset, explicit_intercept: bool) -> Result<f64> {
    match losses::lipschitz_bound(d.loss) {
        Lipschitz::Bounded(l) => {
            let norm = if explicit_intercept { d.x.op_norm_sq_with_intercept() } else { d.x.op_norm_sq() };
            Ok((l * norm).max(f64::MIN_POSITIVE))
        }
        Lipschitz::Unbounded => Err(CrlError::Config(format!(
            "the {} loss has unbounded curvature; use the line search",
            d.loss.name()
        ))),
    }
}

/// How the intercept is handled during a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Intercept {
    None,
    /// Quadratic loss: `α` is set to its closed-form optimum for each `B`,
    /// which is equivalent to centering `Y` and `X`.
    Profiled,
    /// GLM losses: gradient step `α ← α − ∇ᵀ1/ρ`.
    Explicit,
}

fn intercept_mode(d: &Dataset, cfg: &FitConfig) -> Intercept {
    match (cfg.fit_intercept, d.loss) {
        (false, _) => Intercept::None,
        (true, LossKind::Quadratic) => Intercept::Profiled,
        (true, _) => Intercept::Explicit,
    }
}

fn profiled_alpha(d: &Dataset, b: &DMatrix<f64>) -> DVector<f64> {
    let resid = &d.y - d.x.forward(b);
    column_sums(&resid) / d.n() as f64
}

/// Outcome of one line search: accepted `ρ` and the new iterate.
pub struct LineSearchStep {
    pub rho: f64,
    pub factorization: Factorization,
    pub clusters: ClusterStructure,
    pub objective: f64,
    pub surrogate: f64,
}

/// Finds the smallest `ρ` on the ladder `ρ₀·growᵏ` whose inner solution
/// satisfies `f ≤ G_ρ`. The conservative policy returns its single step.
pub fn line_search_rho(d: &Dataset, f_old: &Factorization, rho0: f64, cfg: &FitConfig) -> Result<LineSearchStep> {
    check_factorization(d, f_old)?;
    cfg.validate(d)?;
    let mode = intercept_mode(d, cfg);
    let g0 = Groups::from_s(&f_old.s, cfg.variant);
    let state = State::new(d, f_old.clone(), g0, mode);
    let (step, _) = state.search(d, rho0, cfg)?;
    let clusters = step.groups.structure(&step.f.s);
    Ok(LineSearchStep {
        rho: step.rho,
        factorization: step.f,
        clusters,
        objective: step.value,
        surrogate: step.surrogate,
    })
}

struct State {
    f: Factorization,
    b: DMatrix<f64>,
    groups: Groups,
    value: f64,
    grad: DMatrix<f64>,
    mode: Intercept,
}

struct Step {
    f: Factorization,
    b: DMatrix<f64>,
    groups: Groups,
    rho: f64,
    value: f64,
    surrogate: f64,
    max_gap: Option<f64>,
}

impl State {
    fn new(d: &Dataset, mut f: Factorization, groups: Groups, mode: Intercept) -> Self {
        let b = &f.s * f.v.transpose();
        if mode == Intercept::Profiled {
            f.alpha = profiled_alpha(d, &b);
        }
        let eta = d.linear_predictor(&b, &f.alpha);
        let value = losses::loss_unchecked(d.loss, &eta, &d.y);
        let grad = losses::gradient_unchecked(d.loss, &eta, &d.y);
        State { f, b, groups, value, grad, mode }
    }

    fn trial(&self, d: &Dataset, xt_grad: &DMatrix<f64>, grad_sum: &DVector<f64>, rho: f64, cfg: &FitConfig) -> Result<Step> {
        let ytil = &self.b - xt_grad / rho;
        let inner = inner_descent(&ytil, &self.f.s, &self.f.v, &self.groups, cfg)?;
        let b_new = &inner.s * inner.v.transpose();
        let alpha = match self.mode {
            Intercept::None => self.f.alpha.clone(),
            Intercept::Profiled => profiled_alpha(d, &b_new),
            Intercept::Explicit => &self.f.alpha - grad_sum / rho,
        };
        let value = losses::loss_unchecked(d.loss, &d.linear_predictor(&b_new, &alpha), &d.y);
        let db = &b_new - &self.b;
        let mut surrogate = self.value + xt_grad.dot(&db) + 0.5 * rho * linalg::frob_sq(&db);
        if self.mode == Intercept::Explicit {
            let da = &alpha - &self.f.alpha;
            surrogate += grad_sum.dot(&da) + 0.5 * rho * da.norm_squared();
        }
        let f = Factorization { r: inner.s.ncols(), s: inner.s, v: inner.v, alpha };
        Ok(Step { f, b: b_new, groups: inner.groups, rho, value, surrogate, max_gap: inner.max_gap })
    }

    /// Returns the accepted step and the largest identity gap seen across trials.
    fn search(&self, d: &Dataset, rho0: f64, cfg: &FitConfig) -> Result<(Step, Option<f64>)> {
        let xt_grad = d.x.adjoint(&self.grad);
        let grad_sum = column_sums(&self.grad);
        let mut gap: Option<f64> = None;
        let mut merge = |g: Option<f64>| {
            if let Some(x) = g {
                gap = Some(gap.map_or(x, |m: f64| m.max(x)));
            }
        };
        match cfg.rho_policy {
            RhoPolicy::Conservative => {
                let rho = conservative_rho(d, self.mode == Intercept::Explicit)?;
                let step = self.trial(d, &xt_grad, &grad_sum, rho, cfg)?;
                merge(step.max_gap);
                Ok((step, gap))
            }
            RhoPolicy::LineSearch { grow, .. } => {
                let slack = 1e-12 * (1.0 + self.value.abs());
                let mut rho = rho0;
                for _ in 0..=MAX_LADDER_STEPS {
                    let step = self.trial(d, &xt_grad, &grad_sum, rho, cfg)?;
                    merge(step.max_gap);
                    if step.value.is_finite() && step.value <= step.surrogate + slack {
                        return Ok((step, gap));
                    }
                    rho *= grow;
                }
                Err(CrlError::Nonconvergence(format!(
                    "line search exhausted {MAX_LADDER_STEPS} doublings from rho = {rho0:e}"
                )))
            }
        }
    }
}

/// Least-squares fit of a working response, used to start the solver and as
/// the reduced-rank regression baseline.
#[derive(Debug, Clone)]
pub struct RrrFit {
    /// `(XᵀX)⁺XᵀZ` (on centered data when an intercept is fitted).
    pub b_ols: DMatrix<f64>,
    /// Leading `r` eigenvectors of `Zᵀ P_X Z`.
    pub v_r: DMatrix<f64>,
    /// `B_ols V_r V_rᵀ`.
    pub b_rrr: DMatrix<f64>,
    /// Intercept of the rank-`r` fit.
    pub alpha: DVector<f64>,
}

/// Response on the natural-parameter scale: `Y` for quadratic, the
/// linearization `4(Y − ½)` at `η = 0` for logistic, `ln(Y + ½)` for Poisson.
fn working_response(d: &Dataset) -> DMatrix<f64> {
    match d.loss {
        LossKind::Quadratic => d.y.clone(),
        LossKind::Logistic => d.y.map(|v| 4.0 * (v - 0.5)),
        LossKind::Poisson => d.y.map(|v| (v + 0.5).ln()),
    }
}

fn center(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let means = column_sums(m) / m.nrows() as f64;
    let mut c = m.clone();
    for (k, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[k]);
    }
    (c, means)
}

/// Reduced-rank regression of rank `r` on the working response.
pub fn rrr_fit(d: &Dataset, r: usize, fit_intercept: bool) -> Result<RrrFit> {
    let m = d.m();
    let z = working_response(d);
    let (z, z_mean) = if fit_intercept { center(&z) } else { (z.clone(), DVector::zeros(m)) };
    let (b_ols, x_mean) = match &d.x {
        Design::Dense(x) => {
            let (xc, xm) = if fit_intercept { center(x) } else { (x.clone(), DVector::zeros(x.ncols())) };
            (linalg::pinv(&xc, 1e-10) * &z, xm)
        }
        Design::Identity(n) => (z.clone(), DVector::from_element(*n, if fit_intercept { 1.0 / *n as f64 } else { 0.0 })),
        Design::Trace(_) => return Err(CrlError::UnsupportedVariant("reduced-rank regression on a trace design".into())),
    };
    if r == 0 || r > m.min(b_ols.nrows()) {
        return Err(CrlError::Config(format!("rank {r} outside 1..=min(m, p)")));
    }
    let fitted = match &d.x {
        Design::Dense(x) => {
            let (xc, _) = if fit_intercept { center(x) } else { (x.clone(), DVector::zeros(0)) };
            xc * &b_ols
        }
        _ => b_ols.clone(),
    };
    let (_, vecs) = linalg::sym_eigen_desc(&fitted.tr_mul(&fitted));
    let v_r = vecs.columns(0, r).into_owned();
    let b_rrr = &b_ols * &v_r * v_r.transpose();
    let alpha = if fit_intercept { z_mean - b_rrr.tr_mul(&x_mean) } else { DVector::zeros(m) };
    Ok(RrrFit { b_ols, v_r, b_rrr, alpha })
}

/// Solver start: `V⁰ = V_r` from reduced-rank regression and `S⁰` from
/// multi-start K-means on `B_ols V⁰`. Trace designs use a k-regressions start.
pub fn init_rrr(d: &Dataset, cfg: &FitConfig) -> Result<(Factorization, ClusterStructure)> {
    cfg.validate(d)?;
    let (f, g) = initialize(d, cfg)?;
    let cs = g.structure(&f.s);
    Ok((f, cs))
}

fn initialize(d: &Dataset, cfg: &FitConfig) -> Result<(Factorization, Groups)> {
    if let Design::Trace(x) = &d.x {
        return trace_init(x, &d.y, cfg);
    }
    let rrr = rrr_fit(d, cfg.r, cfg.fit_intercept)?;
    let l0 = &rrr.b_ols * &rrr.v_r;
    let z = working_response(d);
    let finish = |s: DMatrix<f64>, v: DMatrix<f64>| {
        let b = &s * v.transpose();
        let alpha = if cfg.fit_intercept {
            column_sums(&(&z - d.x.forward(&b))) / d.n() as f64
        } else {
            DVector::zeros(d.m())
        };
        Factorization { r: cfg.r, s, v, alpha }
    };
    match cfg.variant {
        Variant::RowWise => {
            // every K-means start is polished by the inner descent on B_ols and
            // scored by the true objective
            let kcfg = KmeansConfig { n_starts: 1, ..cfg.kmeans_cfg() };
            let runs = par::par_range(cfg.kmeans.n_starts, |start| -> Result<(f64, Factorization, Groups)> {
                let cfg_s = KmeansConfig { seed: start_seed(cfg.kmeans.seed, start), ..kcfg.clone() };
                let res = kmeans::kmeans_fit(&l0, &cfg_s)?;
                let s0 = res.structure.reconstruct();
                let inner = inner_descent(&rrr.b_ols, &s0, &rrr.v_r, &Groups::Rows(res.structure), cfg)?;
                let f = finish(inner.s, inner.v);
                let b = &f.s * f.v.transpose();
                let alpha = if intercept_mode(d, cfg) == Intercept::Profiled { profiled_alpha(d, &b) } else { f.alpha.clone() };
                let val = losses::loss_unchecked(d.loss, &d.linear_predictor(&b, &alpha), &d.y);
                Ok((val, f, inner.groups))
            });
            let mut best: Option<(f64, Factorization, Groups)> = None;
            for run in runs {
                let run = run?;
                if best.as_ref().is_none_or(|b| run.0 < b.0) {
                    best = Some(run);
                }
            }
            let (_, f, g) = best.expect("n_starts ≥ 1");
            Ok((f, g))
        }
        Variant::RankWise => {
            let (s, lv) = kmeans::kmeans_columnwise(&l0, cfg.q, &cfg.kmeans_cfg())?;
            Ok((finish(s, rrr.v_r.clone()), Groups::Levels(lv)))
        }
    }
}

/// Seed for the `start`-th single-start run derived from a base seed.
fn start_seed(seed: u64, start: usize) -> u64 {
    seed.wrapping_add((start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Multi-start k-regressions for trace designs: samples are split into `q`
/// groups, each fitted by minimum-norm least squares, and reassigned to the
/// group that predicts them best. With `q` equal to the sample count every
/// sample gets its own minimum-norm interpolant.
fn trace_init(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &FitConfig) -> Result<(Factorization, Groups)> {
    let (n, p) = x.shape();
    let q = cfg.q;
    let coef = if q >= n {
        let c = DMatrix::from_fn(n, p, |i, j| {
            let nn = x.row(i).norm_squared();
            if nn > 0.0 { y[(i, 0)] * x[(i, j)] / nn } else { 0.0 }
        });
        (c, (0..n).collect::<Vec<_>>())
    } else {
        let runs = par::par_range(cfg.kmeans.n_starts, |start| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.kmeans.seed);
            rng.set_stream(start as u64);
            k_regressions(x, y, q, cfg.kmeans.max_iter, &mut rng)
        });
        let mut best: Option<(f64, DMatrix<f64>, Vec<usize>)> = None;
        for run in runs {
            if best.as_ref().is_none_or(|b| run.0 < b.0) {
                best = Some(run);
            }
        }
        let (_, c, labels) = best.expect("n_starts ≥ 1");
        (c, labels)
    };
    let (c, labels) = coef;
    let b0 = DMatrix::from_fn(n, p, |i, j| c[(labels[i], j)]);
    let (_, vecs) = linalg::sym_eigen_desc(&b0.tr_mul(&b0));
    let v = vecs.columns(0, cfg.r).into_owned();
    let rows = ClusterStructure { mu: &c * &v, labels };
    let s = rows.reconstruct();
    let groups = match cfg.variant {
        Variant::RowWise if q < n => Groups::Rows(rows),
        variant => Groups::from_s(&s, variant),
    };
    Ok((Factorization { r: cfg.r, s, v, alpha: DVector::zeros(1) }, groups))
}

fn k_regressions(x: &DMatrix<f64>, y: &DMatrix<f64>, q: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (f64, DMatrix<f64>, Vec<usize>) {
    let n = x.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut labels = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        labels[i] = if pos < q { pos } else { rng.random_range(0..q) };
    }
    let mut coef = group_ols(x, y, &labels, q);
    for _ in 0..max_iter {
        let resid = |i: usize, k: usize| (y[(i, 0)] - x.row(i).dot(&coef.row(k))).powi(2);
        let mut next: Vec<usize> = (0..n)
            .map(|i| {
                let mut best = 0;
                for k in 1..q {
                    if resid(i, k) < resid(i, best) {
                        best = k;
                    }
                }
                best
            })
            .collect();
        // refill empty groups with the worst-fitted samples of larger groups
        loop {
            let mut counts = vec![0usize; q];
            next.iter().for_each(|&k| counts[k] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let worst = (0..n)
                .filter(|&i| counts[next[i]] > 1)
                .max_by(|&a, &b| resid(a, next[a]).total_cmp(&resid(b, next[b])))
                .expect("q < n leaves a donor");
            next[worst] = empty;
        }
        if next == labels {
            break;
        }
        labels = next;
        coef = group_ols(x, y, &labels, q);
    }
    let rss = (0..n).map(|i| (y[(i, 0)] - x.row(i).dot(&coef.row(labels[i]))).powi(2)).sum();
    (rss, coef, labels)
}

fn group_ols(x: &DMatrix<f64>, y: &DMatrix<f64>, labels: &[usize], q: usize) -> DMatrix<f64> {
    let p = x.ncols();
    let mut coef = DMatrix::zeros(q, p);
    for k in 0..q {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        let xk = DMatrix::from_fn(idx.len(), p, |a, j| x[(idx[a], j)]);
        let yk = DMatrix::from_fn(idx.len(), 1, |a, _| y[(idx[a], 0)]);
        let c = linalg::pinv(&xk, 1e-10) * yk;
        coef.row_mut(k).copy_from(&c.transpose());
    }
    coef
}

/// Runs the outer surrogate iterations until the relative change of `B`
/// falls below `eps` or `max_outer` is reached.
pub fn fit(d: &Dataset, cfg: &FitConfig, init: Option<&Factorization>) -> Result<FitResult> {
    cfg.validate(d)?;
    let (f0, g0) = match init {
        Some(f) => {
            check_factorization(d, f)?;
            if f.r != cfg.r {
                return Err(CrlError::Config(format!("initializer has rank {} but r = {}", f.r, cfg.r)));
            }
            (f.clone(), Groups::from_s(&f.s, cfg.variant))
        }
        None => initialize(d, cfg)?,
    };
    fit_from(d, cfg, f0, g0)
}

fn fit_from(d: &Dataset, cfg: &FitConfig, f0: Factorization, g0: Groups) -> Result<FitResult> {
    let mode = intercept_mode(d, cfg);
    let mut state = State::new(d, f0, g0, mode);
    let mut trace = vec![state.value];
    let mut diag = FitDiagnostics::default();
    let mut rho_prev = f64::NAN;
    let mut converged = false;
    let mut outer = 0;
    while outer < cfg.max_outer {
        let rho0 = match cfg.rho_policy {
            RhoPolicy::LineSearch { init, shrink, .. } => {
                if outer == 0 { init } else { (shrink * rho_prev).max(1e-4) }
            }
            RhoPolicy::Conservative => f64::NAN,
        };
        let (step, gap) = state.search(d, rho0, cfg)?;
        if let Some(g) = gap {
            diag.max_decomposition_gap = Some(diag.max_decomposition_gap.map_or(g, |m| m.max(g)));
        }
        outer += 1;
        if step.value > state.value {
            diag.stalled = true;
            converged = true;
            break;
        }
        let mut num = linalg::frob_sq(&(&step.b - &state.b));
        let mut den = linalg::frob_sq(&state.b);
        if mode == Intercept::Explicit {
            num += (&step.f.alpha - &state.f.alpha).norm_squared();
            den += state.f.alpha.norm_squared();
        }
        let rel = num.sqrt() / (den.sqrt() + 1e-12);
        rho_prev = step.rho;
        diag.rho_trace.push(step.rho);
        trace.push(step.value);
        state = State::new(d, step.f, step.groups, mode);
        if rel < cfg.eps {
            converged = true;
            break;
        }
    }
    if d.loss == LossKind::Poisson {
        diag.eta_clamped = losses::poisson_clamped(&d.linear_predictor(&state.b, &state.f.alpha));
    }
    let clusters = state.groups.structure(&state.f.s);
    Ok(FitResult {
        factorization: state.f,
        clusters,
        objective_trace: trace,
        rho_final: rho_prev,
        outer_iters: outer,
        converged,
        loss_kind: d.loss,
        diagnostics: diag,
    })
}

/// Row clustering of `Y` (`X = I`).
pub fn fit_unsupervised(y: &DMatrix<f64>, cfg: &FitConfig) -> Result<FitResult> {
    let d = Dataset::unsupervised(y.clone(), LossKind::Quadratic)?;
    fit(&d, cfg, None)
}

/// A fit on the whitened response `YΓ^{1/2}` with coefficients on both scales.
#[derive(Debug, Clone)]
pub struct WeightedFit {
    pub result: FitResult,
    /// `Γ^{1/2}`.
    pub gamma_sqrt: DMatrix<f64>,
    /// `S Vᵀ`, coefficients for the whitened response.
    pub b_whitened: DMatrix<f64>,
    /// `S Vᵀ (Γ^{1/2})⁺`, coefficients mapped back to the original response.
    pub b_original: DMatrix<f64>,
}

/// Fits on `YΓ^{1/2}` for a symmetric positive semidefinite weight `Γ`.
pub fn fit_weighted(d: &Dataset, gamma: &DMatrix<f64>, cfg: &FitConfig) -> Result<WeightedFit> {
    let m = d.m();
    if gamma.shape() != (m, m) {
        return Err(CrlError::Structural(format!("weight is {}×{}, expected {m}×{m}", gamma.nrows(), gamma.ncols())));
    }
    if d.loss != LossKind::Quadratic {
        return Err(CrlError::UnsupportedVariant("weighted fits use the quadratic loss".into()));
    }
    let scale = gamma.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if (gamma - gamma.transpose()).abs().max() > 1e-10 * scale {
        return Err(CrlError::Domain("weight matrix is not symmetric".into()));
    }
    let (vals, _) = linalg::sym_eigen_desc(gamma);
    if vals.iter().any(|&e| e < -1e-10 * scale) {
        return Err(CrlError::Domain("weight matrix is not positive semidefinite".into()));
    }
    let (root, root_pinv) = linalg::psd_sqrt_pair(gamma);
    let dw = Dataset { y: &d.y * &root, ..d.clone() };
    let result = fit(&dw, cfg, None)?;
    let b_whitened = result.coefficients();
    let b_original = &b_whitened * &root_pinv;
    Ok(WeightedFit { result, gamma_sqrt: root, b_whitened, b_original })
}
