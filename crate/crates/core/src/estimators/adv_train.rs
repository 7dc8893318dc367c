//! Adversarial training for linear regression,
//! `min_b (1/n) sum_i (|y_i - x_i^T b| + delta |b|_q)^2`.
//!
//! The objective is convex but not smooth. It is minimised through a sequence
//! of smooth surrogates (`|e| -> sqrt(e^2 + mu^2)` and a smoothed dual norm)
//! with `mu` shrinking geometrically, each solved by L-BFGS from the previous
//! solution. Whether `b = 0` is optimal is decided exactly beforehand.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{check_data, check_delta, min_norm_fit, ridge_fit, Diagnostics, Estimator, FittedModel, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::gaussian_vector;
use crate::norm_geometry::{dual_order, vector_norm, Exponent, NormOrder};
use crate::rng::rng_for;

const LBFGS_MEMORY: usize = 10;
/// Relative smoothing levels visited by the continuation.
const MU_LEVELS: [f64; 9] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
const STAGE_ITERATIONS: usize = 1000;
const PROBE_DIRECTIONS: usize = 32;

/// Exact adversarial-training objective with `q = dual(p)`.
pub fn adv_train_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, delta: f64, p: Exponent) -> f64 {
    let q = dual_order(p).expect("validated order");
    let shift = delta * vector_norm(beta.as_slice(), q);
    let resid = y - x * beta;
    resid.iter().map(|e| (e.abs() + shift).powi(2)).sum::<f64>() / x.nrows() as f64
}

/// Smoothed `|b|_q` and its gradient.
fn smoothed_norm(beta: &DVector<f64>, q: Exponent, mu: f64) -> (f64, DVector<f64>) {
    match q {
        Exponent::Infinite => {
            // mu * log sum_j (exp(b_j / mu) + exp(-b_j / mu))
            let top = beta.amax();
            let mut total = 0.0;
            let mut grad = DVector::zeros(beta.len());
            for (j, &b) in beta.iter().enumerate() {
                let plus = ((b - top) / mu).exp();
                let minus = ((-b - top) / mu).exp();
                total += plus + minus;
                grad[j] = plus - minus;
            }
            grad /= total;
            (top + mu * total.ln(), grad)
        }
        Exponent::Finite(q) => {
            let a: Vec<f64> = beta.iter().map(|b| b.hypot(mu)).collect();
            let top = a.iter().cloned().fold(0.0, f64::max);
            let sum: f64 = a.iter().map(|v| (v / top).powf(q)).sum();
            let norm = top * sum.powf(1.0 / q);
            let grad = DVector::from_iterator(
                beta.len(),
                beta.iter().zip(&a).map(|(b, av)| (av / norm).powf(q - 1.0) * b / av),
            );
            (norm, grad)
        }
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    delta: f64,
    p: Exponent,
    q: Exponent,
}

impl Problem<'_> {
    fn exact(&self, beta: &DVector<f64>) -> f64 {
        adv_train_objective(self.x, self.y, beta, self.delta, self.p)
    }

    /// Smoothed objective and gradient; `mu_e` smooths the residuals and
    /// `mu_b` the norm.
    fn smooth(&self, beta: &DVector<f64>, mu_e: f64, mu_b: f64) -> (f64, DVector<f64>) {
        let n = self.x.nrows() as f64;
        let resid = self.y - self.x * beta;
        let (norm, norm_grad) = smoothed_norm(beta, self.q, mu_b);
        let shift = self.delta * norm;
        let mut value = 0.0;
        let mut h_sum = 0.0;
        let mut weights = DVector::zeros(resid.len());
        for (i, &e) in resid.iter().enumerate() {
            let a = e.hypot(mu_e);
            let h = a + shift;
            value += h * h;
            h_sum += h;
            weights[i] = h * e / a;
        }
        let mut grad = self.x.tr_mul(&weights) * (-2.0 / n);
        grad.axpy(2.0 * self.delta * h_sum / n, &norm_grad, 1.0);
        (value / n, grad)
    }
}

/// L-BFGS with Armijo backtracking. Returns the final point and the number of
/// iterations used.
fn lbfgs<F>(mut f: F, start: DVector<f64>, max_iter: usize) -> (DVector<f64>, usize)
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = start;
    let (mut fx, mut g) = f(&x);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut stalls = 0;
    for iter in 0..max_iter {
        let gnorm = g.amax();
        if gnorm == 0.0 || !gnorm.is_finite() {
            return (x, iter);
        }
        // Two-loop recursion.
        let mut d = -&g;
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * s.dot(&d);
            d.axpy(-a, yv, 1.0);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = history.back() {
            d *= s.dot(yv) / yv.norm_squared();
        } else {
            d /= g.norm().max(f64::MIN_POSITIVE);
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * yv.dot(&d);
            d.axpy(a - b, s, 1.0);
        }
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            history.clear();
            d = -&g / g.norm();
            slope = g.dot(&d);
        }
        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let candidate = &x + &d * step;
            let (fc, gc) = f(&candidate);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                break (candidate, fc, gc);
            }
            step *= 0.5;
            if step < 1e-20 {
                return (x, iter);
            }
        };
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if decrease <= 1e-15 * fx.abs() {
            stalls += 1;
            if stalls >= 3 {
                return (x, iter + 1);
            }
        } else {
            stalls = 0;
        }
    }
    (x, max_iter)
}

/// Runs the smoothing continuation from `start`; returns the iterate with the
/// smallest exact objective, that objective and the iteration count.
fn continuation(problem: &Problem, start: DVector<f64>, scale_e: f64, scale_b: f64, budget: usize) -> (DVector<f64>, f64, usize) {
    let mut beta = start;
    let mut best_value = problem.exact(&beta);
    let mut best = beta.clone();
    let mut used = 0;
    for level in MU_LEVELS {
        if used >= budget {
            break;
        }
        let (mu_e, mu_b) = (level * scale_e, level * scale_b);
        let (next, iters) = lbfgs(
            |b| problem.smooth(b, mu_e, mu_b),
            beta,
            STAGE_ITERATIONS.min(budget - used),
        );
        used += iters;
        beta = next;
        let value = problem.exact(&beta);
        if value < best_value {
            best_value = value;
            best = beta.clone();
        }
    }
    (best, best_value, used)
}

/// Largest descent rate `max(0, -f'(b; d))` over sampled unit directions,
/// estimated by forward differences with step `h`.
fn sampled_descent_residual<R: Rng>(problem: &Problem, beta: &DVector<f64>, extra: &[DVector<f64>], h: f64, rng: &mut R) -> f64 {
    let m = beta.len();
    let base = problem.exact(beta);
    let mut worst = 0.0f64;
    let mut probe = |d: &DVector<f64>| {
        let norm = d.norm();
        if norm > 0.0 {
            let slope = (problem.exact(&(beta + d * (h / norm))) - base) / h;
            worst = worst.max(-slope);
        }
    };
    for d in extra {
        probe(d);
    }
    for _ in 0..PROBE_DIRECTIONS {
        probe(&gaussian_vector(m, rng));
    }
    worst
}

pub fn adv_train_fit(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64, p: Exponent, options: &SolverOptions) -> Result<FittedModel> {
    check_data(x, y)?;
    check_delta(delta)?;
    let order = NormOrder::new(p)?;
    if !(options.tol > 0.0) {
        return Err(Error::param("tol must be > 0"));
    }
    let (p, q) = (order.p(), order.q());
    let estimator = Estimator::AdvTrain { delta, p: order };
    let (n, m) = x.shape();
    let problem = Problem { x, y, delta, p, q };

    if delta == 0.0 {
        let mut fit = min_norm_fit(x, y)?;
        fit.estimator = estimator;
        return Ok(fit);
    }

    let zero_fit = |iterations| FittedModel {
        beta_hat: DVector::zeros(m),
        estimator,
        diagnostics: Diagnostics {
            objective: problem.exact(&DVector::zeros(m)),
            residual: 0.0,
            iterations,
            warning: None,
        },
    };
    // b = 0 is optimal iff the directional derivative there,
    // (2/n)(-y^T X d + delta |y|_1 |d|_q), is non-negative for every d.
    let xty = x.tr_mul(y);
    if vector_norm(xty.as_slice(), p) <= delta * y.lp_norm(1) {
        return Ok(zero_fit(0));
    }

    let scale_e = (y.norm_squared() / n as f64).sqrt();
    let warm = ridge_fit(x, y, delta)?.beta_hat;
    let x_scale = (x.norm_squared() / (n * m) as f64).sqrt();
    let scale_b = if warm.amax() > 0.0 {
        warm.amax()
    } else {
        scale_e / (x_scale * (m as f64).sqrt())
    };

    let runs = options.restarts.max(1);
    let per_run = (options.max_iter / runs).max(1);
    let mut results = Vec::with_capacity(runs);
    let mut total_iterations = 0;
    for k in 0..runs {
        let start = if k == 0 {
            warm.clone()
        } else {
            let mut rng = rng_for(options.seed, &[k as u64]);
            &warm + gaussian_vector(m, &mut rng) * (scale_b)
        };
        let (beta, value, used) = continuation(&problem, start, scale_e, scale_b, per_run);
        total_iterations += used;
        results.push((value, beta));
    }
    let zero_value = problem.exact(&DVector::zeros(m));
    results.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spread = results.last().unwrap().0 - results[0].0;
    let (best_value, best_beta) = results.swap_remove(0);
    if zero_value <= best_value {
        return Ok(zero_fit(total_iterations));
    }

    let mut rng = rng_for(options.seed, &[u64::MAX]);
    let (_, smooth_grad) = problem.smooth(&best_beta, 1e-8 * scale_e, 1e-8 * scale_b);
    let h = 1e-7 * best_beta.amax().max(scale_b);
    let residual = sampled_descent_residual(&problem, &best_beta, &[-smooth_grad, -best_beta.clone()], h, &mut rng);
    let fit = FittedModel {
        beta_hat: best_beta,
        estimator,
        diagnostics: Diagnostics {
            objective: best_value,
            residual,
            iterations: total_iterations,
            warning: None,
        },
    };
    if spread > options.tol * (1.0 + best_value) {
        return Err(Error::NotConverged {
            solver: "adversarial training",
            iterations: total_iterations,
            residual: spread,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}
