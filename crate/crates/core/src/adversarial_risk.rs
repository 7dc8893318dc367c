//! Adversarial loss of a linear predictor, worst-case attacks, the exact risk
//! under Gaussian data and the two-sided bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_models::{Covariance, GroundTruth, Population};
use crate::error::{Error, Result};
use crate::norm_geometry::{holder_extremal_direction, vector_norm, Exponent, NormOrder};
use crate::rng::rng_for;

/// Samples per independently seeded Monte Carlo stream.
pub const MC_CHUNK: usize = 4096;

/// An `l_p` ball of radius `delta` around the test input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialBudget {
    pub delta: f64,
    pub p: NormOrder,
}

impl AdversarialBudget {
    pub fn new(delta: f64, p: impl Into<Exponent>) -> Result<AdversarialBudget> {
        let budget = AdversarialBudget {
            delta,
            p: NormOrder::new(p)?,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta >= 0.0 && self.delta.is_finite() {
            Ok(())
        } else {
            Err(Error::param(format!("delta must be finite and >= 0, got {}", self.delta)))
        }
    }

    /// `|beta_hat|_q` for the dual order of the budget.
    pub fn dual_norm(&self, beta_hat: &[f64]) -> f64 {
        vector_norm(beta_hat, self.p.q())
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dims(format!("parameter has length {a}, input has length {b}")))
    }
}

fn residual(beta_hat: &[f64], x0: &[f64], y0: f64) -> f64 {
    y0 - beta_hat.iter().zip(x0).map(|(b, x)| b * x).sum::<f64>()
}

/// `(|y0 - x0^T beta_hat| + delta |beta_hat|_q)^2`.
pub fn pointwise_adv_loss(
    beta_hat: &[f64],
    x0: &[f64],
    y0: f64,
    budget: &AdversarialBudget,
) -> Result<f64> {
    check_len(beta_hat.len(), x0.len())?;
    let e0 = residual(beta_hat, x0, y0);
    let t = e0.abs() + budget.delta * budget.dual_norm(beta_hat);
    Ok(t * t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attack {
    pub perturbation: Vec<f64>,
    /// Squared error at the perturbed input.
    pub loss: f64,
    /// True when `beta_hat = 0` and `delta > 0`: no perturbation changes the
    /// prediction, so the zero perturbation is returned.
    pub vacuous: bool,
}

/// The perturbation attaining [`pointwise_adv_loss`].
pub fn worst_case_attack(
    beta_hat: &[f64],
    x0: &[f64],
    y0: f64,
    budget: &AdversarialBudget,
) -> Result<Attack> {
    check_len(beta_hat.len(), x0.len())?;
    let m = x0.len();
    let e0 = residual(beta_hat, x0, y0);
    if budget.delta == 0.0 {
        return Ok(Attack {
            perturbation: vec![0.0; m],
            loss: e0 * e0,
            vacuous: false,
        });
    }
    let direction = match holder_extremal_direction(beta_hat, budget.p.p()) {
        Ok(d) => d,
        Err(Error::DegenerateDirection) => {
            return Ok(Attack {
                perturbation: vec![0.0; m],
                loss: e0 * e0,
                vacuous: true,
            })
        }
        Err(e) => return Err(e),
    };
    let sign = if e0 >= 0.0 { 1.0 } else { -1.0 };
    let perturbation: Vec<f64> = direction.iter().map(|d| -sign * budget.delta * d).collect();
    let attacked: Vec<f64> = x0.iter().zip(&perturbation).map(|(x, d)| x + d).collect();
    let e = residual(beta_hat, &attacked, y0);
    Ok(Attack {
        perturbation,
        loss: e * e,
        vacuous: false,
    })
}

/// `(beta - beta_hat)^T Sigma (beta - beta_hat) + sigma2`.
pub fn standard_risk(beta_hat: &DVector<f64>, truth: &GroundTruth) -> Result<f64> {
    check_len(beta_hat.len(), truth.beta.len())?;
    Ok(truth.covariance.quad_form(&(&truth.beta - beta_hat)) + truth.sigma2)
}

/// Adversarial risk from the standard risk `r` and the dual norm, using
/// `E|e0| = sqrt(2 r / pi)` for a centred Gaussian residual.
pub fn gaussian_adv_risk_from_parts(r: f64, dual_norm: f64, delta: f64) -> f64 {
    let shift = delta * dual_norm;
    r + 2.0 * shift * (2.0 * r / std::f64::consts::PI).sqrt() + shift * shift
}

/// Exact adversarial risk when `x0 ~ N(0, Sigma)` and the noise is Gaussian.
pub fn adv_risk_gaussian(
    beta_hat: &DVector<f64>,
    beta: &DVector<f64>,
    sigma: &Covariance,
    sigma2: f64,
    budget: &AdversarialBudget,
) -> Result<f64> {
    budget.validate()?;
    check_len(beta_hat.len(), beta.len())?;
    check_len(beta.len(), sigma.dim())?;
    if sigma2 < 0.0 {
        return Err(Error::param("sigma2 must be >= 0"));
    }
    let r = sigma.quad_form(&(beta - beta_hat)) + sigma2;
    if r < 0.0 {
        return Err(Error::NotPsd(r));
    }
    Ok(gaussian_adv_risk_from_parts(
        r,
        budget.dual_norm(beta_hat.as_slice()),
        budget.delta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Running mean and centred second moment, merged with Chan's rule.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.count += 1.0;
        let d = v - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }
}

/// Sample mean and standard error of the pointwise adversarial loss over fresh
/// draws from `population`. Samples are drawn in chunks of [`MC_CHUNK`], chunk
/// `c` from the stream `(seed, c)`.
pub fn adv_risk_monte_carlo(
    beta_hat: &DVector<f64>,
    population: &Population,
    budget: &AdversarialBudget,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    budget.validate()?;
    check_len(beta_hat.len(), population.m())?;
    if samples == 0 {
        return Err(Error::param("samples must be >= 1"));
    }
    let shift = budget.delta * budget.dual_norm(beta_hat.as_slice());
    let chunks = samples.div_ceil(MC_CHUNK);
    let mut total = Moments::default();
    for c in 0..chunks {
        let size = MC_CHUNK.min(samples - c * MC_CHUNK);
        let mut rng = rng_for(seed, &[c as u64]);
        let (x, y): (DMatrix<f64>, DVector<f64>) = population.sample(size, &mut rng);
        let residuals = y - x * beta_hat;
        let mut part = Moments::default();
        for e in residuals.iter() {
            let t = e.abs() + shift;
            part.push(t * t);
        }
        total = total.merge(part);
    }
    let variance = if total.count > 1.0 {
        total.m2 / (total.count - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        estimate: total.mean,
        std_error: (variance / total.count).sqrt(),
        samples,
    })
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// `(R + delta^2 Lq, (sqrt(R) + delta sqrt(Lq))^2)`, the upper bound expanded
/// so that it equals `R` exactly at `delta = 0`.
pub fn risk_bounds(r: f64, lq: f64, delta: f64) -> Result<(f64, f64)> {
    check_nonneg("R", r)?;
    check_nonneg("Lq", lq)?;
    check_nonneg("delta", delta)?;
    let lower = r + delta * delta * lq;
    Ok((lower, lower + 2.0 * delta * (r * lq).sqrt()))
}

/// Bounds on the `l_1` or `l_inf` adversarial risk from the squared `l_2`
/// norm `L2` alone.
pub fn lp_transfer_bounds(r: f64, l2: f64, delta: f64, m: usize, p: Exponent) -> Result<(f64, f64)> {
    check_nonneg("R", r)?;
    check_nonneg("L2", l2)?;
    check_nonneg("delta", delta)?;
    if m == 0 {
        return Err(Error::param("m must be >= 1"));
    }
    let mf = m as f64;
    let d2 = delta * delta;
    match p.validate()? {
        Exponent::Finite(v) if v == 1.0 => Ok((r + d2 * l2 / mf, risk_bounds(r, l2, delta)?.1)),
        Exponent::Infinite => Ok((r + d2 * l2, risk_bounds(r, mf * l2, delta)?.1)),
        other => Err(Error::param(format!(
            "transfer bounds are defined for p = 1 and p = inf, got p = {other}"
        ))),
    }
}

/// Adversarial risk for one budget together with its bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvRiskEntry {
    pub p: NormOrder,
    pub delta: f64,
    pub adv_risk: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub standard_risk: f64,
    pub adversarial: Vec<AdvRiskEntry>,
    pub norm_l1: f64,
    pub norm_l2: f64,
    pub norm_linf: f64,
}

impl RiskReport {
    /// Exact Gaussian evaluation of `beta_hat` against `truth` for each budget,
    /// with bounds from the deterministic `|beta_hat|_q^2`.
    pub fn evaluate(
        beta_hat: &DVector<f64>,
        truth: &GroundTruth,
        budgets: &[AdversarialBudget],
    ) -> Result<RiskReport> {
        let r = standard_risk(beta_hat, truth)?;
        let slice = beta_hat.as_slice();
        let adversarial = budgets
            .iter()
            .map(|b| {
                b.validate()?;
                let norm = b.dual_norm(slice);
                let (lower_bound, upper_bound) = risk_bounds(r, norm * norm, b.delta)?;
                Ok(AdvRiskEntry {
                    p: b.p,
                    delta: b.delta,
                    adv_risk: gaussian_adv_risk_from_parts(r, norm, b.delta),
                    lower_bound,
                    upper_bound,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RiskReport {
            standard_risk: r,
            adversarial,
            norm_l1: vector_norm(slice, Exponent::ONE),
            norm_l2: vector_norm(slice, Exponent::TWO),
            norm_linf: vector_norm(slice, Exponent::INF),
        })
    }

    pub fn adv_risk(&self, p: NormOrder, delta: f64) -> Option<f64> {
        self.adversarial
            .iter()
            .find(|e| e.p == p && e.delta == delta)
            .map(|e| e.adv_risk)
    }
}
