use nalgebra::{DMatrix, DVector};

use super::{check_data, check_delta, min_norm_fit, Diagnostics, Estimator, FittedModel, SolverOptions};
use crate::error::{Error, Result};

/// `(1/n)|y - X b|^2 + delta |b|_1`.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, delta: f64) -> f64 {
    (y - x * beta).norm_squared() / x.nrows() as f64 + delta * beta.lp_norm(1)
}

/// Largest violation of the subgradient optimality conditions, with
/// `g = (2/n) X^T (y - X b)`: `max(0, |g_j| - delta)` where `b_j = 0` and
/// `|g_j - delta sign(b_j)|` elsewhere.
pub fn lasso_kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, delta: f64) -> f64 {
    let g = x.tr_mul(&(y - x * beta)) * (2.0 / x.nrows() as f64);
    kkt_from_gradient(&g, beta, delta)
}

fn kkt_from_gradient(g: &DVector<f64>, beta: &DVector<f64>, delta: f64) -> f64 {
    g.iter()
        .zip(beta.iter())
        .map(|(&gj, &bj)| {
            if bj == 0.0 {
                (gj.abs() - delta).max(0.0)
            } else {
                (gj - delta * bj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct CoordinateDescent<'a> {
    x: &'a DMatrix<f64>,
    col_sq: Vec<f64>,
    threshold: f64,
    beta: DVector<f64>,
    resid: DVector<f64>,
}

impl CoordinateDescent<'_> {
    /// Updates coordinate `j` and returns the size of the step, measured as
    /// the change of the fitted values.
    fn update(&mut self, j: usize) -> f64 {
        let c = self.col_sq[j];
        if c == 0.0 {
            return 0.0;
        }
        let col = self.x.column(j);
        let old = self.beta[j];
        let rho = col.dot(&self.resid) + c * old;
        let new = soft_threshold(rho, self.threshold) / c;
        let step = new - old;
        if step != 0.0 {
            self.resid.axpy(-step, &col, 1.0);
            self.beta[j] = new;
        }
        step.abs() * c.sqrt()
    }
}

/// Cyclic coordinate descent with active-set cycling. `delta = 0` returns the
/// minimum-norm least-squares solution, which is one of the minimisers.
pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64, options: &SolverOptions) -> Result<FittedModel> {
    check_data(x, y)?;
    check_delta(delta)?;
    if !(options.tol > 0.0) {
        return Err(Error::param("tol must be > 0"));
    }
    let estimator = Estimator::Lasso { delta };
    if delta == 0.0 {
        let mut fit = min_norm_fit(x, y)?;
        fit.estimator = estimator;
        return Ok(fit);
    }
    let (n, m) = x.shape();
    let nf = n as f64;
    let make = |beta: DVector<f64>, residual: f64, iterations: usize| FittedModel {
        diagnostics: Diagnostics {
            objective: lasso_objective(x, y, &beta, delta),
            residual,
            iterations,
            warning: None,
        },
        beta_hat: beta,
        estimator,
    };

    let g0 = x.tr_mul(y) * (2.0 / nf);
    if g0.amax() <= delta {
        return Ok(make(DVector::zeros(m), 0.0, 0));
    }

    let mut cd = CoordinateDescent {
        x,
        col_sq: (0..m).map(|j| x.column(j).norm_squared()).collect(),
        threshold: nf * delta / 2.0,
        beta: DVector::zeros(m),
        resid: y.clone(),
    };
    // Stop cycling the active set once no step moves the fitted values by
    // more than this.
    let inner_tol = 0.05 * options.tol * nf.sqrt() / 2.0;
    let mut iterations = 0;
    let mut best: Option<(f64, DVector<f64>)> = None;
    while iterations < options.max_iter {
        for j in 0..m {
            cd.update(j);
        }
        iterations += 1;
        loop {
            let active: Vec<usize> = (0..m).filter(|&j| cd.beta[j] != 0.0).collect();
            let mut biggest = 0.0f64;
            for &j in &active {
                biggest = biggest.max(cd.update(j));
            }
            iterations += 1;
            if biggest <= inner_tol || iterations >= options.max_iter {
                break;
            }
        }
        // Recompute the residual from scratch to shed accumulated rounding.
        cd.resid = y - x * &cd.beta;
        let g = x.tr_mul(&cd.resid) * (2.0 / nf);
        let kkt = kkt_from_gradient(&g, &cd.beta, delta);
        if best.as_ref().is_none_or(|(r, _)| kkt < *r) {
            best = Some((kkt, cd.beta.clone()));
        }
        if kkt <= options.tol {
            return Ok(make(cd.beta, kkt, iterations));
        }
    }
    let (residual, beta) = best.expect("at least one sweep ran");
    Err(Error::NotConverged {
        solver: "lasso",
        iterations,
        residual,
        best: Box::new(make(beta, residual, iterations)),
    })
}
