//! Limits of the risk and of the squared parameter norm of the minimum-norm
//! estimator as `m, n -> inf` with `m / n -> gamma`.
//!
//! Every `risk` returned here is the total risk, irreducible noise included.
//! The excess part is reported separately as `excess_risk`.

use serde::{Deserialize, Serialize};

use crate::data_models::Scaling;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Under,
    Over,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPoint {
    pub gamma: f64,
    pub risk: f64,
    pub excess_risk: f64,
    pub l2norm_sq: f64,
    pub regime: Regime,
}

impl AsymptoticPoint {
    fn new(gamma: f64, excess_risk: f64, sigma2: f64, l2norm_sq: f64) -> AsymptoticPoint {
        AsymptoticPoint {
            gamma,
            risk: excess_risk + sigma2,
            excess_risk,
            l2norm_sq,
            regime: if gamma < 1.0 { Regime::Under } else { Regime::Over },
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("gamma must be finite and > 0, got {gamma}")));
    }
    if gamma == 1.0 {
        return Err(Error::Pole);
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// Isotropic features, `|beta|_2^2 = r2`.
pub fn isotropic_asymptotics(gamma: f64, r2: f64, sigma2: f64) -> Result<AsymptoticPoint> {
    equicorrelated_asymptotics(gamma, 0.0, r2, sigma2)
}

/// Equicorrelated features with `beta ~ N(0, r2/m I)`.
pub fn equicorrelated_asymptotics(gamma: f64, rho: f64, r2: f64, sigma2: f64) -> Result<AsymptoticPoint> {
    check_gamma(gamma)?;
    check_nonneg("r2", r2)?;
    check_nonneg("sigma2", sigma2)?;
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::param(format!("rho must lie in [0, 1), got {rho}")));
    }
    let s = 1.0 - rho;
    Ok(if gamma < 1.0 {
        let v = gamma / (1.0 - gamma);
        AsymptoticPoint::new(gamma, sigma2 * v, sigma2, r2 + sigma2 * v / s)
    } else {
        AsymptoticPoint::new(
            gamma,
            r2 * s * (1.0 - 1.0 / gamma) + sigma2 / (gamma - 1.0),
            sigma2,
            r2 / gamma + sigma2 / ((gamma - 1.0) * s),
        )
    })
}

/// `gamma` at which the overparameterized isotropic risk is smallest, when
/// `r > sigma` (otherwise the risk decreases monotonically and `None` is
/// returned).
pub fn isotropic_risk_minimizer(r2: f64, sigma2: f64) -> Option<f64> {
    let (r, s) = (r2.sqrt(), sigma2.sqrt());
    (r > s).then(|| r / (r - s))
}

/// Residual of the defining equation of `c0`.
pub fn c0_residual(c0: f64, psi: f64, gamma: f64) -> f64 {
    let a = gamma;
    let b = (1.0 + 1.0 / psi) * gamma;
    (1.0 - psi) / (1.0 + c0 * a) + psi / (1.0 + c0 * b) - (1.0 - 1.0 / gamma)
}

/// Unique non-negative root of
/// `1 - 1/gamma = (1-psi)/(1 + c0 gamma) + psi/(1 + c0 (1 + 1/psi) gamma)`.
pub fn solve_c0(psi: f64, gamma: f64) -> Result<f64> {
    if !(psi > 0.0 && psi <= 1.0) {
        return Err(Error::param(format!("psi must lie in (0, 1], got {psi}")));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::param(format!("c0 is defined for gamma > 1, got {gamma}")));
    }
    let a = gamma;
    let b = (1.0 + 1.0 / psi) * gamma;
    let l = 1.0 - 1.0 / gamma;
    // Multiply out the denominators: qa c^2 + qb c + qc = 0 with qa > 0 and
    // qc < 0, so exactly one root is positive.
    let qa = l * a * b;
    let qb = l * (a + b) - (1.0 - psi) * b - psi * a;
    let qc = -1.0 / gamma;
    let disc = qb * qb - 4.0 * qa * qc;
    let mut c = if qb >= 0.0 {
        -2.0 * qc / (qb + disc.sqrt())
    } else {
        (-qb + disc.sqrt()) / (2.0 * qa)
    };
    // One Newton step on the rational form removes the cancellation left over
    // from the quadratic.
    let deriv = -(1.0 - psi) * a / (1.0 + c * a).powi(2) - psi * b / (1.0 + c * b).powi(2);
    if deriv != 0.0 {
        let polished = c - c0_residual(c, psi, gamma) / deriv;
        if polished >= 0.0 && c0_residual(polished, psi, gamma).abs() <= c0_residual(c, psi, gamma).abs() {
            c = polished;
        }
    }
    if !(c >= 0.0 && c.is_finite()) || c0_residual(c, psi, gamma).abs() > 1e-12 {
        c = bisect_c0(psi, gamma)?;
    }
    Ok(c)
}

fn bisect_c0(psi: f64, gamma: f64) -> Result<f64> {
    // The residual decreases in c from 1/gamma > 0 at c = 0 to -(1 - 1/gamma).
    let mut lo = 0.0;
    let mut hi = 1.0;
    while c0_residual(hi, psi, gamma) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numeric("no non-negative root for c0".into()));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if c0_residual(mid, psi, gamma) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentAsymptoticParams {
    pub psi: f64,
    pub gamma: f64,
    pub r2: f64,
    pub sigma2: f64,
    pub c0: f64,
    pub b: f64,
    pub v: f64,
    pub e1: f64,
    pub e2: f64,
}

/// Latent-factor features with `psi = d / m`. `r2` and `sigma2` are the
/// squared norm and noise level of the linear-equivalent model. The terms
/// `B, V, E1, E2` are only defined (and only filled in) for `gamma > 1`.
pub fn latent_asymptotics(
    psi: f64,
    gamma: f64,
    r2: f64,
    sigma2: f64,
) -> Result<(AsymptoticPoint, LatentAsymptoticParams)> {
    check_gamma(gamma)?;
    check_nonneg("r2", r2)?;
    check_nonneg("sigma2", sigma2)?;
    if !(psi > 0.0 && psi <= 1.0) {
        return Err(Error::param(format!("psi must lie in (0, 1], got {psi}")));
    }
    let mut params = LatentAsymptoticParams {
        psi,
        gamma,
        r2,
        sigma2,
        c0: 0.0,
        b: 0.0,
        v: 0.0,
        e1: 0.0,
        e2: 0.0,
    };
    if gamma < 1.0 {
        let v = gamma / (1.0 - gamma);
        let point = AsymptoticPoint::new(gamma, sigma2 * v, sigma2, r2 + sigma2 * v / (1.0 + psi));
        return Ok((point, params));
    }
    let c0 = solve_c0(psi, gamma)?;
    let spike = 1.0 + 1.0 / psi;
    let d_bulk = (1.0 + c0 * gamma).powi(2);
    let d_spike = (1.0 + c0 * gamma * spike).powi(2);
    // Second and first spectral moments weighted by (1 + c0 gamma s)^-2.
    let e1 = (1.0 - psi) / d_bulk + psi * spike * spike / d_spike;
    let e2 = (1.0 - psi) / d_bulk + (1.0 + psi) / d_spike;
    let v = gamma * c0 * e1 / e2;
    let b = (1.0 + v) * spike / d_spike;
    let t = c0 * gamma * spike;
    let l2 = r2 * t / (1.0 + t) + sigma2 * c0 * gamma;
    params.c0 = c0;
    params.b = b;
    params.v = v;
    params.e1 = e1;
    params.e2 = e2;
    Ok((AsymptoticPoint::new(gamma, r2 * b + sigma2 * v, sigma2, l2), params))
}

/// Overparameterized isotropic norm curve `r2/gamma + sigma2/(gamma - 1)` in
/// the coordinates of scaled inputs, i.e. multiplied by `eta(m)^2` with
/// `m = round(gamma n)`.
pub fn scaled_norm_curve(gamma_grid: &[f64], n: usize, r2: f64, sigma2: f64, scaling: Scaling) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::param("n must be >= 1"));
    }
    gamma_grid
        .iter()
        .map(|&gamma| {
            if !(gamma > 1.0 && gamma.is_finite()) {
                return Err(Error::param(format!("scaled norm curves need gamma > 1, got {gamma}")));
            }
            let m = (gamma * n as f64).round() as usize;
            let ratio = m as f64 / n as f64;
            if ratio <= 1.0 {
                return Err(Error::param(format!("gamma = {gamma} rounds to m = {m} <= n")));
            }
            let eta = scaling.eta(m)?;
            Ok((r2 / ratio + sigma2 / (ratio - 1.0)) * eta * eta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn isotropic_values() {
        let p = isotropic_asymptotics(2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.risk, 2.5, epsilon = 1e-14);
        assert_relative_eq!(p.l2norm_sq, 1.5, epsilon = 1e-14);
        let p = isotropic_asymptotics(0.5, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.risk, 2.0, epsilon = 1e-14);
        assert_relative_eq!(p.l2norm_sq, 2.0, epsilon = 1e-14);
        assert_eq!(p.regime, Regime::Under);
        let p = isotropic_asymptotics(4.0, 3.0, 0.0).unwrap();
        assert_relative_eq!(p.risk, 3.0 * 0.75, epsilon = 1e-14);
        assert_relative_eq!(p.l2norm_sq, 0.75, epsilon = 1e-14);
        assert!(matches!(isotropic_asymptotics(1.0, 1.0, 1.0), Err(Error::Pole)));
        assert!(isotropic_asymptotics(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn equicorrelated_values() {
        let p = equicorrelated_asymptotics(2.0, 0.5, 4.0, 1.0).unwrap();
        assert_relative_eq!(p.l2norm_sq, 4.0, epsilon = 1e-14);
        for gamma in [0.3, 0.8, 1.5, 6.0] {
            let e = equicorrelated_asymptotics(gamma, 0.0, 2.0, 0.7).unwrap();
            let i = isotropic_asymptotics(gamma, 2.0, 0.7).unwrap();
            assert_eq!(e.excess_risk, i.excess_risk);
        }
        let near = equicorrelated_asymptotics(2.0, 0.999_999, 1.0, 1.0).unwrap();
        assert!(near.l2norm_sq > 1e5);
    }

    #[test]
    fn isotropic_interior_minimum() {
        let (r2, s2) = (4.0, 1.0);
        let grid: Vec<f64> = (1..=19_000).map(|i| 1.0 + i as f64 * 1e-3).collect();
        let risk: Vec<f64> = grid.iter().map(|&g| isotropic_asymptotics(g, r2, s2).unwrap().risk).collect();
        let (imin, _) = risk
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(imin > 0 && imin < grid.len() - 1);
        assert_relative_eq!(grid[imin], isotropic_risk_minimizer(r2, s2).unwrap(), epsilon = 2e-3);
        assert!(isotropic_risk_minimizer(1.0, 2.0).is_none());
    }

    #[test]
    fn norm_decreasing_and_pole_divergence() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let g = 1.0 + i as f64 * 0.05;
            let l = isotropic_asymptotics(g, 1.0, 0.5).unwrap().l2norm_sq;
            assert!(l < prev);
            prev = l;
        }
        for eps in [1e-3, 1e-6] {
            assert!(isotropic_asymptotics(1.0 + eps, 1.0, 1.0).unwrap().risk > 0.5 / eps);
            assert!(isotropic_asymptotics(1.0 - eps, 1.0, 1.0).unwrap().risk > 0.5 / eps);
        }
    }

    fn bisection_oracle(psi: f64, gamma: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1e3f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c0_residual(mid, psi, gamma) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn c0_examples() {
        let c = solve_c0(0.05, 2.0).unwrap();
        assert!(c0_residual(c, 0.05, 2.0).abs() <= 1e-12);
        assert_relative_eq!(c, bisection_oracle(0.05, 2.0), max_relative = 1e-10);
        for gamma in [1.1, 2.0, 7.5, 100.0] {
            let c = solve_c0(1.0, gamma).unwrap();
            assert_relative_eq!(c, 1.0 / (2.0 * gamma * (gamma - 1.0)), max_relative = 1e-10);
        }
        let mut prev = f64::INFINITY;
        for gamma in [2.0, 10.0, 100.0, 1000.0] {
            let c = solve_c0(0.3, gamma).unwrap();
            assert!(c < prev && c > 0.0);
            assert!(c * gamma < 10.0);
            prev = c;
        }
        assert!(solve_c0(0.0, 2.0).is_err());
        assert!(solve_c0(0.5, 0.5).is_err());
    }

    #[test]
    fn latent_branches() {
        let (p, _) = latent_asymptotics(0.3, 0.5, 2.0, 0.7).unwrap();
        assert_relative_eq!(p.excess_risk, 0.7, epsilon = 1e-14);
        let (p2, _) = latent_asymptotics(0.9, 0.5, 2.0, 0.7).unwrap();
        assert_eq!(p.excess_risk, p2.excess_risk);

        let (p, params) = latent_asymptotics(0.05, 2.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(p.excess_risk, params.b, epsilon = 1e-14);

        // psi = 1 is isotropic with covariance 2 I: the same excess risk as the
        // isotropic limit with r2 scaled by the eigenvalue.
        for gamma in [1.5, 3.0, 9.0] {
            let (p, _) = latent_asymptotics(1.0, gamma, 1.0, 0.4).unwrap();
            let iso = isotropic_asymptotics(gamma, 2.0, 0.4).unwrap();
            assert_relative_eq!(p.excess_risk, iso.excess_risk, max_relative = 1e-10);
            assert_relative_eq!(p.l2norm_sq, 1.0 / gamma + 0.4 / (2.0 * (gamma - 1.0)), max_relative = 1e-10);
        }
        assert!(matches!(latent_asymptotics(0.5, 1.0, 1.0, 1.0), Err(Error::Pole)));
    }

    #[test]
    fn latent_regression_value() {
        // Bisection c0 plus direct evaluation of the spectral moments.
        let (psi, gamma): (f64, f64) = (0.05, 2.0);
        let c0 = bisection_oracle(psi, gamma);
        let s = 1.0 + 1.0 / psi;
        let e1 = (1.0 - psi) / (1.0 + c0 * gamma).powi(2) + psi * s * s / (1.0 + c0 * gamma * s).powi(2);
        let e2 = (1.0 - psi) / (1.0 + c0 * gamma).powi(2) + psi * s / (1.0 + c0 * gamma * s).powi(2);
        let v = gamma * c0 * e1 / e2;
        let b = (1.0 + v) * s / (1.0 + c0 * gamma * s).powi(2);
        let (p, params) = latent_asymptotics(psi, gamma, 1.0, 1.0).unwrap();
        assert_relative_eq!(params.v, v, max_relative = 1e-9);
        assert_relative_eq!(params.b, b, max_relative = 1e-9);
        assert_relative_eq!(p.risk, b + v + 1.0, max_relative = 1e-9);
        assert_relative_eq!(p.risk, LATENT_FROZEN_RISK, max_relative = 1e-9);
    }

    /// `latent_asymptotics(0.05, 2, 1, 1).risk`.
    const LATENT_FROZEN_RISK: f64 = 2.197760028695572;

    #[test]
    fn scaled_norm_curves() {
        let n = 100;
        let big = scaled_norm_curve(&[1e4], n, 1.0, 1.0, Scaling::SqrtM).unwrap()[0];
        assert_relative_eq!(big, 100.0 + 100.0, max_relative = 1e-3);
        let unit = scaled_norm_curve(&[10.0, 100.0, 1e4], n, 1.0, 1.0, Scaling::Unit).unwrap();
        assert!(unit[0] > unit[1] && unit[1] > unit[2] && unit[2] < 1e-3);
        let small_n = scaled_norm_curve(&[5.0], 50, 1.0, 1.0, Scaling::SqrtM).unwrap()[0];
        let large_n = scaled_norm_curve(&[5.0], 200, 1.0, 1.0, Scaling::SqrtM).unwrap()[0];
        assert!(large_n > small_n);
        let log = scaled_norm_curve(&[4.0], n, 1.0, 1.0, Scaling::SqrtLog).unwrap()[0];
        assert_relative_eq!(log, (0.25 + 1.0 / 3.0) * 400f64.ln(), max_relative = 1e-12);
        assert!(scaled_norm_curve(&[0.5], n, 1.0, 1.0, Scaling::Unit).is_err());
    }

    proptest! {
        #[test]
        fn c0_residual_is_tiny(psi in 0.001f64..=1.0, gamma in 1.001f64..1e3) {
            let c = solve_c0(psi, gamma).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert!(c0_residual(c, psi, gamma).abs() <= 1e-12);
        }
    }
}
