//! Estimators: minimum-norm interpolation, ridge, lasso and adversarial
//! training, plus the projector and bias-variance decomposition of the
//! minimum-norm solution.

mod adv_train;
mod lasso;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_models::Covariance;
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, ThinSvd};
use crate::norm_geometry::NormOrder;

pub use adv_train::{adv_train_fit, adv_train_objective};
pub use lasso::{lasso_fit, lasso_kkt_residual, lasso_objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    MinNorm,
    Ridge { delta: f64 },
    Lasso { delta: f64 },
    AdvTrain { delta: f64, p: NormOrder },
}

impl Estimator {
    pub fn delta(&self) -> f64 {
        match *self {
            Estimator::MinNorm => 0.0,
            Estimator::Ridge { delta } | Estimator::Lasso { delta } | Estimator::AdvTrain { delta, .. } => delta,
        }
    }

    /// Short label used in tables, e.g. `advtrain_linf`.
    pub fn label(&self) -> String {
        match self {
            Estimator::MinNorm => "minnorm".into(),
            Estimator::Ridge { .. } => "ridge".into(),
            Estimator::Lasso { .. } => "lasso".into(),
            Estimator::AdvTrain { p, .. } => format!("advtrain_{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: f64,
    /// Optimality residual; its meaning depends on the estimator (normal
    /// equations, KKT violation or sampled directional derivatives).
    pub residual: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub beta_hat: DVector<f64>,
    pub estimator: Estimator,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Random restarts of the adversarial-training solver.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 100_000,
            restarts: 10,
            seed: 0,
        }
    }
}

pub(crate) fn check_data(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dims(format!(
            "X has {} rows but y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::dims("X must have at least one row and one column"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::param("X and y must be finite"));
    }
    Ok(())
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("delta must be finite and >= 0, got {delta}")))
    }
}

fn mse(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (y - x * beta).norm_squared() / x.nrows() as f64
}

/// `(X^T X)^+ X^T y`.
pub fn min_norm_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedModel> {
    check_data(x, y)?;
    let svd = ThinSvd::new(x);
    let beta_hat = svd.pinv_solve(y);
    let n = x.nrows() as f64;
    let gradient = x.tr_mul(&(y - x * &beta_hat)) * (2.0 / n);
    let warning = (svd.rank() == 0).then(|| "X is zero; returning the zero vector".to_string());
    Ok(FittedModel {
        diagnostics: Diagnostics {
            objective: mse(x, y, &beta_hat),
            residual: gradient.amax(),
            iterations: 0,
            warning,
        },
        beta_hat,
        estimator: Estimator::MinNorm,
    })
}

/// Minimiser of `(1/n)|y - X b|^2 + delta |b|_2^2`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64) -> Result<FittedModel> {
    check_data(x, y)?;
    check_delta(delta)?;
    if delta == 0.0 {
        let mut fit = min_norm_fit(x, y)?;
        fit.estimator = Estimator::Ridge { delta };
        return Ok(fit);
    }
    let (n, m) = x.shape();
    let shift = n as f64 * delta;
    let beta_hat = if m <= n {
        let mut a = x.tr_mul(x);
        for i in 0..m {
            a[(i, i)] += shift;
        }
        spd_solve(a, &x.tr_mul(y))?
    } else {
        let mut a = x * x.transpose();
        for i in 0..n {
            a[(i, i)] += shift;
        }
        x.tr_mul(&spd_solve(a, y)?)
    };
    let nf = n as f64;
    let gradient = x.tr_mul(&(x * &beta_hat - y)) * (2.0 / nf) + &beta_hat * (2.0 * delta);
    Ok(FittedModel {
        diagnostics: Diagnostics {
            objective: mse(x, y, &beta_hat) + delta * beta_hat.norm_squared(),
            residual: gradient.amax(),
            iterations: 0,
            warning: None,
        },
        beta_hat,
        estimator: Estimator::Ridge { delta },
    })
}

/// Fits any estimator. Solver failures surface as
/// [`Error::NotConverged`] carrying the best iterate.
pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, estimator: &Estimator, options: &SolverOptions) -> Result<FittedModel> {
    match *estimator {
        Estimator::MinNorm => min_norm_fit(x, y),
        Estimator::Ridge { delta } => ridge_fit(x, y, delta),
        Estimator::Lasso { delta } => lasso_fit(x, y, delta, options),
        Estimator::AdvTrain { delta, p } => adv_train_fit(x, y, delta, p.p(), options),
    }
}

#[derive(Debug, Clone)]
pub struct ProjectorDecomposition {
    pub phi: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub sigma_hat_pinv: DMatrix<f64>,
}

/// `Sigma_hat = X^T X / n`, its pseudo-inverse and the projectors onto the row
/// space of `X` and its orthogonal complement.
pub fn projector_decomposition(x: &DMatrix<f64>) -> Result<ProjectorDecomposition> {
    let (n, m) = x.shape();
    if n == 0 || m == 0 {
        return Err(Error::dims("X must be non-empty"));
    }
    let svd = ThinSvd::new(x);
    let phi = svd.row_space_projector();
    let mut scaled_v = svd.v.clone();
    for (c, s) in svd.singular_values.iter().enumerate() {
        scaled_v.column_mut(c).scale_mut(1.0 / s);
    }
    let sigma_hat_pinv = &scaled_v * scaled_v.transpose() * n as f64;
    Ok(ProjectorDecomposition {
        pi: DMatrix::identity(m, m) - &phi,
        phi,
        sigma_hat: x.tr_mul(x) / n as f64,
        sigma_hat_pinv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasVariance {
    /// `bias_risk + variance_risk + sigma2`.
    pub risk_expected: f64,
    /// `bias_norm + variance_norm`.
    pub l2norm_expected: f64,
    /// `|Pi beta|_Sigma^2`.
    pub bias_risk: f64,
    /// `(sigma2 / n) tr(Sigma_hat^+ Sigma)`.
    pub variance_risk: f64,
    /// `|Phi beta|_2^2`.
    pub bias_norm: f64,
    /// `(sigma2 / n) tr(Sigma_hat^+)`.
    pub variance_norm: f64,
}

/// Noise-averaged risk and squared norm of the minimum-norm estimator on the
/// fixed design `X`.
pub fn bias_variance_terms(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma2: f64,
    sigma: &Covariance,
) -> Result<BiasVariance> {
    let m = x.ncols();
    if beta.len() != m || sigma.dim() != m {
        return Err(Error::dims(format!(
            "X has {m} columns, beta {} entries, Sigma dimension {}",
            beta.len(),
            sigma.dim()
        )));
    }
    if sigma2 < 0.0 {
        return Err(Error::param("sigma2 must be >= 0"));
    }
    let svd = ThinSvd::new(x);
    let phi_beta = svd.project_row_space(beta);
    let pi_beta = beta - &phi_beta;
    let mut variance_risk = 0.0;
    let mut variance_norm = 0.0;
    for (k, s) in svd.singular_values.iter().enumerate() {
        let v = svd.v.column(k).into_owned();
        let s2 = s * s;
        variance_risk += sigma.quad_form(&v) / s2;
        variance_norm += 1.0 / s2;
    }
    let bias_risk = sigma.quad_form(&pi_beta);
    let bias_norm = phi_beta.norm_squared();
    let variance_risk = sigma2 * variance_risk;
    let variance_norm = sigma2 * variance_norm;
    Ok(BiasVariance {
        risk_expected: bias_risk + variance_risk + sigma2,
        l2norm_expected: bias_norm + variance_norm,
        bias_risk,
        variance_risk,
        bias_norm,
        variance_norm,
    })
}
