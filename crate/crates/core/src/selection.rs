//! Joint selection of the cluster count `q` and rank `r` by predictive
//! information criteria: plug-in, scale-free (fractional and conjugate
//! forms), and log form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::linalg;
use crate::losses::{self, LossKind, NoiseScale};
use crate::model::{self, Dataset};
use crate::par;
use crate::solver::{self, FitConfig, FitResult, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PicVariant {
    /// `l₀ + A·σ²·P_o`; σ² is estimated when unknown.
    PlugIn { sigma2: NoiseScale, a: f64 },
    /// `RSS / (mn − A₁(q∧rank X + m)r − A₂(p − q) ln q)`.
    ScaleFreeFractional { a1: f64, a2: f64 },
    /// `(l₀ + b*(Y)) / (1 − δ)`, `δ = A·P_o·κ/(mn)`.
    ScaleFreeGeneral { a: f64, a0: f64, kappa: f64 },
    /// `N·ln RSS + A₁·(columns of B)·q + A₂·(rows of B − q)·ln q`, with `N`
    /// the number of response entries.
    LogForm { a1: f64, a2: f64 },
}

impl PicVariant {
    pub fn plug_in() -> Self {
        PicVariant::PlugIn { sigma2: NoiseScale::Unknown, a: 2.0 }
    }

    pub fn fractional() -> Self {
        PicVariant::ScaleFreeFractional { a1: 3.0, a2: 2.5 }
    }

    pub fn log_form() -> Self {
        PicVariant::LogForm { a1: 1.5, a2: 1.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PicVariant::PlugIn { sigma2, a } => {
                a > 0.0 && !matches!(sigma2, NoiseScale::Known(s) if !(s > 0.0))
            }
            PicVariant::ScaleFreeFractional { a1, a2 } | PicVariant::LogForm { a1, a2 } => a1 > 0.0 && a2 > 0.0,
            PicVariant::ScaleFreeGeneral { a, a0, kappa } => a > 0.0 && kappa > 0.0 && a0 > a,
        };
        if ok {
            Ok(())
        } else {
            Err(CrlError::Config(format!("invalid criterion constants: {self:?}")))
        }
    }
}

/// `(q∧rank X + m)·r + (p − q)·ln q`.
pub fn penalty_po(qv: usize, rv: usize, p: usize, m: usize, rank_x: usize) -> f64 {
    let qf = qv as f64;
    ((qv.min(rank_x) + m) * rv) as f64 + (p as f64 - qf) * qf.ln()
}

/// Realized complexity of a coefficient matrix: distinct rows and rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub q: usize,
    pub r: usize,
}

pub fn complexity(b: &DMatrix<f64>) -> Complexity {
    Complexity {
        q: model::distinct_row_count(b, model::default_row_tol(b)).max(1),
        r: model::numerical_rank(b, 1e-10),
    }
}

/// A criterion value, or the reason a candidate was ruled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Value(f64),
    Eliminated(String),
}

impl Score {
    pub fn value(&self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(*v),
            Score::Eliminated(_) => None,
        }
    }
}

fn check_coefficients(d: &Dataset, b: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<()> {
    if b.shape() != d.coef_shape() || alpha.len() != d.m() {
        return Err(CrlError::Structural("coefficients do not match the dataset".into()));
    }
    Ok(())
}

/// Plug-in criterion `l₀(1αᵀ + XB; Y) + A·σ²·P_o(B)`.
pub fn pic_score(d: &Dataset, b: &DMatrix<f64>, alpha: &DVector<f64>, sigma2: f64, a: f64) -> Result<f64> {
    check_coefficients(d, b, alpha)?;
    let c = complexity(b);
    let (p, m) = d.coef_shape();
    let loss = losses::loss_value(d.loss, &d.linear_predictor(b, alpha), &d.y)?;
    Ok(loss + a * sigma2 * penalty_po(c.q, c.r, p, m, d.x.rank()))
}

/// Denominator of the fractional criterion; nonpositive means eliminated.
#[allow(clippy::too_many_arguments)]
pub fn fractional_denominator(n: usize, m: usize, p: usize, q: usize, r: usize, rank_x: usize, a1: f64, a2: f64) -> f64 {
    let qf = q as f64;
    (m * n) as f64 - a1 * ((q.min(rank_x) + m) * r) as f64 - a2 * (p as f64 - qf) * qf.ln()
}

/// Scale-free fractional criterion for the quadratic loss.
pub fn sf_pic_fractional(d: &Dataset, b: &DMatrix<f64>, alpha: &DVector<f64>, a1: f64, a2: f64) -> Result<Score> {
    if d.loss != LossKind::Quadratic {
        return Err(CrlError::UnsupportedVariant(format!(
            "the fractional criterion needs the quadratic loss, not {}",
            d.loss.name()
        )));
    }
    check_coefficients(d, b, alpha)?;
    let c = complexity(b);
    let (p, _) = d.coef_shape();
    let den = fractional_denominator(d.n(), d.m(), p, c.q, c.r, d.x.rank(), a1, a2);
    if den <= 0.0 {
        return Ok(Score::Eliminated(format!("nonpositive denominator {den:.4}")));
    }
    let rss = (&d.y - d.linear_predictor(b, alpha)).norm_squared();
    Ok(Score::Value(rss / den))
}

/// Scale-free criterion with the conjugate shift: `(l₀ + b*(Y))/(1 − δ)`.
pub fn sf_pic_general(d: &Dataset, b: &DMatrix<f64>, alpha: &DVector<f64>, a: f64, kappa: f64) -> Result<Score> {
    check_coefficients(d, b, alpha)?;
    let c = complexity(b);
    let (p, m) = d.coef_shape();
    let delta = a * penalty_po(c.q, c.r, p, m, d.x.rank()) * kappa / (d.n() * d.m()) as f64;
    if delta >= 1.0 {
        return Ok(Score::Eliminated(format!("delta = {delta:.4} ≥ 1")));
    }
    let num = losses::canonical_loss_value(d.loss, &d.linear_predictor(b, alpha), &d.y)?
        + losses::conjugate_value(d.loss, &d.y)?;
    Ok(Score::Value(num / (1.0 - delta)))
}

/// Log form `N·ln RSS + A₁·cols·q + A₂·(rows − q)·ln q`. A zero residual
/// returns `−∞`, which callers treat as degenerate.
pub fn sf_pic_log(residual_ss: f64, n: usize, p_eff: usize, qv: usize) -> f64 {
    sf_pic_log_with(residual_ss, n, p_eff, qv, n, 1.5, 1.1)
}

/// Log form with explicit constants; `rows` is the number of coefficient rows.
pub fn sf_pic_log_with(residual_ss: f64, n: usize, p_eff: usize, qv: usize, rows: usize, a1: f64, a2: f64) -> f64 {
    if residual_ss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let qf = qv as f64;
    n as f64 * residual_ss.ln() + a1 * (p_eff as f64) * qf + a2 * (rows as f64 - qf) * qf.ln()
}

fn residual_dof(n: usize, m: usize, rank_x: usize, r: usize, intercept: bool) -> f64 {
    let df = ((rank_x + m).saturating_sub(r) * r) as f64 + if intercept { m as f64 } else { 0.0 };
    let dof = (n * m) as f64 - df;
    if dof > 0.0 { dof } else { (n * m) as f64 }
}

/// Preliminary noise variance for the plug-in criterion: residual variance of
/// the rank-`r` reduced-rank fit (quadratic), ¼ (logistic), or the Pearson
/// dispersion of the same fit on the log scale (Poisson).
pub fn estimate_sigma2(d: &Dataset, r: usize, fit_intercept: bool) -> Result<f64> {
    let (n, m) = (d.n(), d.m());
    match d.loss {
        LossKind::Logistic => Ok(0.25),
        LossKind::Quadratic | LossKind::Poisson => {
            let r = r.clamp(1, m.min(d.coef_shape().0));
            let fit = solver::rrr_fit(d, r, fit_intercept)?;
            let eta = d.linear_predictor(&fit.b_rrr, &fit.alpha);
            let dof = residual_dof(n, m, d.x.rank(), r, fit_intercept);
            let s = if d.loss == LossKind::Quadratic {
                (&d.y - eta).norm_squared() / dof
            } else {
                let mu = eta.map(|e| e.min(losses::POISSON_ETA_CAP).exp());
                d.y.iter().zip(mu.iter()).map(|(y, u)| (y - u).powi(2) / u).sum::<f64>() / dof
            };
            Ok(s.max(f64::MIN_POSITIVE))
        }
    }
}

/// Scores one coefficient matrix; returns the score and the penalty term.
fn score_candidate(d: &Dataset, b: &DMatrix<f64>, alpha: &DVector<f64>, variant: &PicVariant, sigma2: f64) -> Result<(Score, f64)> {
    let c = complexity(b);
    let (p, m) = d.coef_shape();
    let rank_x = d.x.rank();
    match *variant {
        PicVariant::PlugIn { a, .. } => {
            let pen = a * sigma2 * penalty_po(c.q, c.r, p, m, rank_x);
            Ok((Score::Value(pic_score(d, b, alpha, sigma2, a)?), pen))
        }
        PicVariant::ScaleFreeFractional { a1, a2 } => {
            let pen = (d.n() * d.m()) as f64 - fractional_denominator(d.n(), m, p, c.q, c.r, rank_x, a1, a2);
            Ok((sf_pic_fractional(d, b, alpha, a1, a2)?, pen))
        }
        PicVariant::ScaleFreeGeneral { a, kappa, .. } => {
            let pen = a * penalty_po(c.q, c.r, p, m, rank_x) * kappa / (d.n() * d.m()) as f64;
            Ok((sf_pic_general(d, b, alpha, a, kappa)?, pen))
        }
        PicVariant::LogForm { a1, a2 } => {
            if d.loss != LossKind::Quadratic {
                return Err(CrlError::UnsupportedVariant("the log form needs the quadratic loss".into()));
            }
            let rss = (&d.y - d.linear_predictor(b, alpha)).norm_squared();
            let entries = d.n() * d.m();
            let score = sf_pic_log_with(rss, entries, m, c.q, p, a1, a2);
            let pen = score - entries as f64 * rss.ln();
            if score == f64::NEG_INFINITY {
                return Ok((Score::Eliminated("zero residual".into()), pen));
            }
            Ok((Score::Value(score), pen))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub objective: f64,
    pub converged: bool,
    pub outer_iters: usize,
    /// Realized complexity of the fitted coefficients.
    pub q_eff: usize,
    pub r_eff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub q: usize,
    pub r: usize,
    pub score: Score,
    pub loss: f64,
    pub penalty: f64,
    pub fit: Option<FitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub variant: PicVariant,
    pub sigma2: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub winner: (usize, usize),
    pub eliminated: Vec<(usize, usize, String)>,
}

impl SelectionReport {
    pub fn winner_candidate(&self) -> &Candidate {
        self.candidates
            .iter()
            .find(|c| (c.q, c.r) == self.winner)
            .expect("winner is a candidate")
    }
}

/// The report together with the winning fit.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub report: SelectionReport,
    pub best: FitResult,
}

/// Relative score gap under which two candidates count as tied.
pub const TIE_TOL: f64 = 1e-9;

/// Fits every feasible `(q, r)` on the grid, scores it, and picks the lowest
/// score; ties go to the smaller `q`, then the smaller `r`.
pub fn select_over_grid(d: &Dataset, q_grid: &[usize], r_grid: &[usize], cfg_base: &FitConfig, variant: &PicVariant) -> Result<GridOutcome> {
    let mut pairs = Vec::new();
    for &q in q_grid {
        for &r in r_grid {
            pairs.push((q, r));
        }
    }
    select_over_pairs(d, &pairs, cfg_base, variant)
}

/// [`select_over_grid`] over an explicit list of `(q, r)` pairs.
pub fn select_over_pairs(d: &Dataset, pairs: &[(usize, usize)], cfg_base: &FitConfig, variant: &PicVariant) -> Result<GridOutcome> {
    if pairs.is_empty() {
        return Err(CrlError::Config("selection grids must be nonempty".into()));
    }
    variant.validate()?;
    let (p, m) = d.coef_shape();
    let sigma2 = match *variant {
        PicVariant::PlugIn { sigma2: NoiseScale::Known(s), .. } => Some(s),
        PicVariant::PlugIn { sigma2: NoiseScale::Unknown, .. } => {
            let r_max = pairs.iter().map(|&(_, r)| r).max().expect("nonempty");
            Some(estimate_sigma2(d, r_max, cfg_base.fit_intercept)?)
        }
        _ => None,
    };
    if matches!(variant, PicVariant::ScaleFreeFractional { .. } | PicVariant::LogForm { .. }) && d.loss != LossKind::Quadratic {
        return Err(CrlError::UnsupportedVariant(format!("this criterion needs the quadratic loss, not {}", d.loss.name())));
    }
    let mut pairs = pairs.to_vec();
    pairs.sort();
    pairs.dedup();

    let infeasible = |q: usize, r: usize| -> Option<String> {
        if q == 0 || r == 0 {
            Some("q and r must be positive".into())
        } else if q > p {
            Some(format!("q exceeds {p} coefficient rows"))
        } else if r > m.min(p) {
            Some(format!("r exceeds min(m, p) = {}", m.min(p)))
        } else if cfg_base.variant == Variant::RowWise && r > q {
            Some("r exceeds q".into())
        } else {
            None
        }
    };

    let evaluated = par::par_map(pairs, |(q, r)| -> Result<(Candidate, Option<FitResult>)> {
        if let Some(reason) = infeasible(q, r) {
            let cand = Candidate { q, r, score: Score::Eliminated(reason), loss: f64::NAN, penalty: f64::NAN, fit: None };
            return Ok((cand, None));
        }
        let cfg = FitConfig { q, r, ..cfg_base.clone() };
        let res = solver::fit(d, &cfg, None)?;
        let b = res.coefficients();
        let alpha = &res.factorization.alpha;
        let (score, penalty) = score_candidate(d, &b, alpha, variant, sigma2.unwrap_or(1.0))?;
        let c = complexity(&b);
        let cand = Candidate {
            q,
            r,
            score,
            loss: res.objective(),
            penalty,
            fit: Some(FitSummary {
                objective: res.objective(),
                converged: res.converged,
                outer_iters: res.outer_iters,
                q_eff: c.q,
                r_eff: c.r,
            }),
        };
        Ok((cand, Some(res)))
    });
    let mut candidates = Vec::new();
    let mut fits = Vec::new();
    for e in evaluated {
        let (c, f) = e?;
        candidates.push(c);
        fits.push(f);
    }

    let finite: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.score.value().filter(|v| v.is_finite()).map(|v| (i, v)))
        .collect();
    if finite.is_empty() {
        return Err(CrlError::AllEliminated);
    }
    let best = finite.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let scale = finite.iter().map(|&(_, v)| v.abs()).fold(0.0, f64::max);
    // candidates are sorted by (q, r), so the first within tolerance wins
    let (win, _) = *finite
        .iter()
        .find(|&&(_, v)| v - best <= TIE_TOL * scale)
        .expect("the minimum is within tolerance of itself");
    let eliminated = candidates
        .iter()
        .filter_map(|c| match &c.score {
            Score::Eliminated(why) => Some((c.q, c.r, why.clone())),
            Score::Value(_) => None,
        })
        .collect();
    let winner = (candidates[win].q, candidates[win].r);
    let best_fit = fits[win].take().expect("scored candidates carry a fit");
    Ok(GridOutcome {
        report: SelectionReport { variant: *variant, sigma2, candidates, winner, eliminated },
        best: best_fit,
    })
}

/// Frobenius residual `‖Y − 1αᵀ − XB‖²`.
pub fn residual_ss(d: &Dataset, b: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    linalg::frob_sq(&(&d.y - d.linear_predictor(b, alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty_po(1, 1, 5, 3, 5), 4.0);
        assert!((penalty_po(10, 5, 50, 25, 50) - 267.1034).abs() < 1e-4);
        assert_eq!(penalty_po(1, 0, 7, 4, 7), 0.0);
    }

    #[test]
    fn fractional_examples() {
        let den = fractional_denominator(200, 5, 10, 2, 1, 10, 3.0, 2.5);
        assert!((100.0 / den - 0.103613).abs() < 1e-6);
        assert!(fractional_denominator(10, 2, 50, 20, 2, 10, 3.0, 2.5) <= 0.0);

        let mut g = ChaCha8Rng::seed_from_u64(1);
        let d = Dataset::new(gaussian(&mut g, 20, 3), gaussian(&mut g, 20, 4), LossKind::Quadratic).unwrap();
        let s = sf_pic_fractional(&d, &DMatrix::zeros(4, 3), &DVector::zeros(3), 3.0, 2.5).unwrap();
        assert!((s.value().unwrap() - d.y.norm_squared() / 60.0).abs() < 1e-12);

        // saturated penalty eliminates
        let d = Dataset::new(gaussian(&mut g, 3, 2), gaussian(&mut g, 3, 6), LossKind::Quadratic).unwrap();
        let b = gaussian(&mut g, 6, 2);
        assert!(matches!(sf_pic_fractional(&d, &b, &DVector::zeros(2), 3.0, 2.5).unwrap(), Score::Eliminated(_)));

        let d = Dataset::new(DMatrix::from_element(3, 1, 1.0), DMatrix::identity(3, 3), LossKind::Logistic).unwrap();
        assert!(matches!(
            sf_pic_fractional(&d, &DMatrix::zeros(3, 1), &DVector::zeros(1), 3.0, 2.5),
            Err(CrlError::UnsupportedVariant(_))
        ));
    }

    #[test]
    fn plug_in_examples() {
        let mut g = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut g, 15, 4);
        let y = gaussian(&mut g, 15, 3);
        let d = Dataset::new(y.clone(), x.clone(), LossKind::Quadratic).unwrap();
        let z = DVector::zeros(3);
        let s = pic_score(&d, &DMatrix::zeros(4, 3), &z, 1.3, 2.0).unwrap();
        assert!((s - 0.5 * y.norm_squared()).abs() < 1e-12);

        let b = gaussian(&mut g, 4, 3);
        let loss = 0.5 * (&y - &x * &b).norm_squared();
        let expect = loss + 2.0 * 1.3 * penalty_po(4, 3, 4, 3, 4);
        assert!((pic_score(&d, &b, &z, 1.3, 2.0).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn general_examples() {
        let mut g = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut g, 12, 3);
        let b = gaussian(&mut g, 3, 2);
        let z = DVector::zeros(2);
        let d = Dataset::new(&x * &b, x.clone(), LossKind::Quadratic).unwrap();
        let s = sf_pic_general(&d, &b, &z, 1.0, 1.0).unwrap().value().unwrap();
        assert!(s.abs() < 1e-10);

        let y = gaussian(&mut g, 12, 2);
        let d = Dataset::new(y.clone(), x.clone(), LossKind::Quadratic).unwrap();
        let xb = &x * &b;
        let algebraic = 0.5 * y.norm_squared() - y.dot(&xb) + 0.5 * xb.norm_squared();
        let c = complexity(&b);
        let delta = penalty_po(c.q, c.r, 3, 2, 3) / 24.0 * 0.1;
        let s = sf_pic_general(&d, &b, &z, 0.1, 1.0).unwrap().value().unwrap();
        assert!((s * (1.0 - delta) - algebraic).abs() < 1e-9 * algebraic.max(1.0));
        assert!(matches!(sf_pic_general(&d, &b, &z, 100.0, 1.0).unwrap(), Score::Eliminated(_)));
    }

    #[test]
    fn log_form_examples() {
        assert!((sf_pic_log(std::f64::consts::E, 173, 3, 1) - 177.5).abs() < 1e-10);
        assert!(sf_pic_log(5.0, 50, 2, 2) < sf_pic_log(5.0, 50, 2, 3));
        assert_eq!(sf_pic_log(0.0, 10, 2, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn single_candidate_wins() {
        let mut g = ChaCha8Rng::seed_from_u64(4);
        let d = Dataset::new(gaussian(&mut g, 30, 4), gaussian(&mut g, 30, 6), LossKind::Quadratic).unwrap();
        let out = select_over_grid(&d, &[3], &[2], &FitConfig::new(3, 2, 1), &PicVariant::plug_in()).unwrap();
        assert_eq!(out.report.winner, (3, 2));
        assert!(out.report.sigma2.unwrap() > 0.0);
    }

    #[test]
    fn all_eliminated_is_an_error() {
        let mut g = ChaCha8Rng::seed_from_u64(5);
        let d = Dataset::new(gaussian(&mut g, 30, 4), gaussian(&mut g, 30, 6), LossKind::Quadratic).unwrap();
        let res = select_over_grid(&d, &[2], &[3], &FitConfig::new(2, 1, 1), &PicVariant::plug_in());
        assert!(matches!(res, Err(CrlError::AllEliminated)));
    }

    #[test]
    fn sigma2_estimate_close_to_truth() {
        let mut g = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut g, 400, 10);
        let b = gaussian(&mut g, 10, 2) * gaussian(&mut g, 2, 8);
        let y = &x * &b + gaussian(&mut g, 400, 8) * 1.5;
        let d = Dataset::new(y, x, LossKind::Quadratic).unwrap();
        let s2 = estimate_sigma2(&d, 2, false).unwrap();
        assert!((s2 - 2.25).abs() < 0.2, "{s2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn penalty_matches_formula(q in 1usize..200, r in 0usize..50, extra in 0usize..300, m in 1usize..80, rank_x in 1usize..400) {
            let p = q + extra;
            let expect = ((q.min(rank_x) + m) as f64) * r as f64 + (p as f64 - q as f64) * (q as f64).ln();
            prop_assert!((penalty_po(q, r, p, m, rank_x) - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fractional_scales_with_residuals(seed in 0u64..10_000, c in 0.1f64..10.0) {
            let mut g = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(&mut g, 40, 3);
            let y = gaussian(&mut g, 40, 2);
            let labels: Vec<usize> = (0..3).map(|_| g.random_range(0..2)).collect();
            let mu = gaussian(&mut g, 2, 2);
            let b = DMatrix::from_fn(3, 2, |j, k| mu[(labels[j], k)]);
            let z = DVector::zeros(2);
            let d1 = Dataset::new(y.clone(), x.clone(), LossKind::Quadratic).unwrap();
            let d2 = Dataset::new(&y * c, x, LossKind::Quadratic).unwrap();
            let s1 = sf_pic_fractional(&d1, &b, &z, 3.0, 2.5).unwrap();
            let s2 = sf_pic_fractional(&d2, &(&b * c), &z, 3.0, 2.5).unwrap();
            if let (Some(a), Some(b)) = (s1.value(), s2.value()) {
                prop_assert!((b - c * c * a).abs() <= 1e-9 * b.abs());
            }
        }
    }
}
