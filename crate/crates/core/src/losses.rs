//! Quadratic, logistic, and Poisson losses `l₀(η; Y)` with gradients,
//! curvature bounds, and Fenchel conjugates of the cumulant.
//!
//! Logistic and Poisson losses are written in canonical form
//! `−⟨Y, η⟩ + b(η)`. The quadratic loss is `½‖Y − η‖²`, which differs from
//! its canonical form by the constant `½‖Y‖²`; see [`canonical_loss_value`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};

/// Natural parameters above this value are treated linearly by the Poisson
/// cumulant, keeping values and gradients finite.
pub const POISSON_ETA_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quadratic,
    Logistic,
    Poisson,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Logistic => "logistic",
            LossKind::Poisson => "poisson",
        }
    }

    /// Checks that every response lies in the closure of the mean range.
    pub fn check_response(self, y: &DMatrix<f64>) -> Result<()> {
        match self {
            LossKind::Quadratic => Ok(()),
            LossKind::Logistic => {
                if y.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                    Ok(())
                } else {
                    Err(CrlError::Domain("logistic responses must lie in [0, 1]".into()))
                }
            }
            LossKind::Poisson => {
                if y.iter().all(|&v| v >= 0.0) {
                    Ok(())
                } else {
                    Err(CrlError::Domain("poisson responses must be nonnegative".into()))
                }
            }
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = CrlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" | "gaussian" | "l2" => Ok(LossKind::Quadratic),
            "logistic" | "binomial" => Ok(LossKind::Logistic),
            "poisson" => Ok(LossKind::Poisson),
            other => Err(CrlError::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Known or unknown noise scale σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseScale {
    Known(f64),
    Unknown,
}

impl NoiseScale {
    pub fn known(sigma2: f64) -> Result<Self> {
        if sigma2 > 0.0 && sigma2.is_finite() {
            Ok(NoiseScale::Known(sigma2))
        } else {
            Err(CrlError::Config(format!("noise variance must be positive, got {sigma2}")))
        }
    }
}

/// Global Lipschitz constant of `∇l₀`, when one exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lipschitz {
    Bounded(f64),
    Unbounded,
}

pub fn lipschitz_bound(kind: LossKind) -> Lipschitz {
    match kind {
        LossKind::Quadratic => Lipschitz::Bounded(1.0),
        LossKind::Logistic => Lipschitz::Bounded(0.25),
        LossKind::Poisson => Lipschitz::Unbounded,
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn poisson_cumulant(eta: f64) -> f64 {
    if eta <= POISSON_ETA_CAP {
        eta.exp()
    } else {
        let cap = POISSON_ETA_CAP.exp();
        cap * (1.0 + eta - POISSON_ETA_CAP)
    }
}

fn poisson_mean(eta: f64) -> f64 {
    eta.min(POISSON_ETA_CAP).exp()
}

/// Whether any natural parameter hits the Poisson cap.
pub fn poisson_clamped(eta: &DMatrix<f64>) -> bool {
    eta.iter().any(|&e| e > POISSON_ETA_CAP)
}

fn check_shapes(eta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if eta.shape() != y.shape() {
        return Err(CrlError::Structural(format!(
            "natural parameter shape {:?} differs from response shape {:?}",
            eta.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// `l₀(η; Y)`.
pub fn loss_value(kind: LossKind, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_shapes(eta, y)?;
    kind.check_response(y)?;
    Ok(loss_unchecked(kind, eta, y))
}

pub(crate) fn loss_unchecked(kind: LossKind, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let pairs = eta.iter().zip(y.iter());
    match kind {
        LossKind::Quadratic => 0.5 * pairs.map(|(e, v)| (v - e) * (v - e)).sum::<f64>(),
        LossKind::Logistic => pairs.map(|(&e, &v)| softplus(e) - v * e).sum(),
        LossKind::Poisson => pairs.map(|(&e, &v)| poisson_cumulant(e) - v * e).sum(),
    }
}

/// Canonical form `−⟨Y, η⟩ + b(η)`; equals [`loss_value`] except for the
/// quadratic loss, where it omits the constant `½‖Y‖²`.
pub fn canonical_loss_value(kind: LossKind, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let l = loss_value(kind, eta, y)?;
    Ok(match kind {
        LossKind::Quadratic => l - 0.5 * y.norm_squared(),
        _ => l,
    })
}

/// `∇l₀(η; Y) = ∇b(η) − Y`.
pub fn loss_gradient(kind: LossKind, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(eta, y)?;
    kind.check_response(y)?;
    Ok(gradient_unchecked(kind, eta, y))
}

pub(crate) fn gradient_unchecked(kind: LossKind, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = match kind {
        LossKind::Quadratic => eta.clone(),
        LossKind::Logistic => eta.map(sigmoid),
        LossKind::Poisson => eta.map(poisson_mean),
    };
    mean - y
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Fenchel conjugate `b*(Y)` of the cumulant, with `0·log 0 := 0`.
pub fn conjugate_value(kind: LossKind, y: &DMatrix<f64>) -> Result<f64> {
    kind.check_response(y)?;
    Ok(match kind {
        LossKind::Quadratic => 0.5 * y.norm_squared(),
        LossKind::Logistic => y.iter().map(|&v| xlogx(v) + xlogx(1.0 - v)).sum(),
        LossKind::Poisson => y.iter().map(|&v| xlogx(v) - v).sum(),
    })
}

/// Inverse mean map `(∇b)⁻¹(Y)` for interior responses.
pub fn natural_parameter(kind: LossKind, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match kind {
        LossKind::Quadratic => Ok(y.clone()),
        LossKind::Logistic => {
            if y.iter().all(|&v| v > 0.0 && v < 1.0) {
                Ok(y.map(|v| (v / (1.0 - v)).ln()))
            } else {
                Err(CrlError::Domain("logit needs responses in (0, 1)".into()))
            }
        }
        LossKind::Poisson => {
            if y.iter().all(|&v| v > 0.0) {
                Ok(y.map(f64::ln))
            } else {
                Err(CrlError::Domain("log link needs positive responses".into()))
            }
        }
    }
}
