//! Finite-sample experiments on random projections, sample-covariance spectra
//! and the parameter norm of the minimum-norm interpolator.

use advreg_core::linalg::{gaussian_matrix, gaussian_vector, spd_solve, symmetric_eigenvalues, ThinSvd};
use advreg_core::norm_geometry::{vector_norm, Exponent};
use advreg_core::rng::{derive_seed, rng_for, rng_from};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ExpError, ExpResult};
use crate::stats::{quantile, QuantileSeries};
use crate::table::{num, Table};

const TAG_BETA: u64 = 0xbe7a;

fn check_positive(name: &str, v: usize) -> ExpResult<()> {
    if v == 0 {
        Err(ExpError::Invalid(format!("{name} must be >= 1")))
    } else {
        Ok(())
    }
}

/// `(|Phi beta|_1, |Phi beta|_2)` where `Phi` projects onto the row space of an
/// `n x m` standard Gaussian matrix, i.e. onto a uniformly random
/// `n`-dimensional subspace.
pub fn random_projector_apply(beta: &DVector<f64>, m: usize, n: usize, seed: u64) -> ExpResult<(f64, f64)> {
    check_positive("n", n)?;
    if beta.len() != m {
        return Err(ExpError::Invalid(format!("beta has {} entries, expected m = {m}", beta.len())));
    }
    if n > m {
        return Err(ExpError::Invalid(format!("need n <= m, got n = {n}, m = {m}")));
    }
    let projected = if n == m {
        beta.clone()
    } else {
        // Phi beta = X^T (X X^T)^-1 X beta.
        let x = gaussian_matrix(n, m, &mut rng_from(seed));
        let coeffs = spd_solve(&x * x.transpose(), &(&x * beta))?;
        x.tr_mul(&coeffs)
    };
    Ok((projected.lp_norm(1), projected.norm()))
}

/// Uniformly random direction scaled to unit `l_2` norm.
pub fn random_unit_vector(m: usize, seed: u64) -> DVector<f64> {
    let v = gaussian_vector(m, &mut rng_from(seed));
    let norm = v.norm();
    v / norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEstimate {
    /// Median of `|Phi beta|_1 / (sqrt(n) |beta|_2)` over replicates and grid.
    pub c_hat: f64,
    /// That ratio against `n`.
    pub series: QuantileSeries,
    /// `|Phi beta|_2 / |beta|_2` against `n`.
    pub l2_series: QuantileSeries,
}

/// Projection norms of one fixed dense unit vector for each `n` in `n_grid`.
pub fn estimate_conjecture_c(m: usize, n_grid: &[usize], replicates: usize, seed: u64) -> ExpResult<ProjectionEstimate> {
    check_positive("replicates", replicates)?;
    if n_grid.is_empty() {
        return Err(ExpError::Invalid("n_grid is empty".into()));
    }
    if let Some(&n) = n_grid.iter().find(|&&n| n == 0 || n > m) {
        return Err(ExpError::Invalid(format!("grid value n = {n} must lie in 1..={m}")));
    }
    let beta = random_unit_vector(m, derive_seed(seed, &[TAG_BETA]));
    let jobs: Vec<(usize, usize)> = (0..n_grid.len())
        .flat_map(|i| (0..replicates).map(move |r| (i, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, r)| random_projector_apply(&beta, m, n_grid[i], derive_seed(seed, &[i as u64, r as u64])))
        .collect::<ExpResult<Vec<_>>>()?;
    let mut l1 = vec![Vec::with_capacity(replicates); n_grid.len()];
    let mut l2 = vec![Vec::with_capacity(replicates); n_grid.len()];
    for (&(i, _), (a, b)) in jobs.iter().zip(&results) {
        l1[i].push(a / (n_grid[i] as f64).sqrt());
        l2[i].push(*b);
    }
    let all: Vec<f64> = l1.iter().flatten().copied().collect();
    let x: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    Ok(ProjectionEstimate {
        c_hat: quantile(&all, 0.5).expect("ratios are finite"),
        series: QuantileSeries::from_samples(x.clone(), &l1, replicates, seed),
        l2_series: QuantileSeries::from_samples(x, &l2, replicates, seed),
    })
}

/// Constants of the two-sided bound on the nonzero eigenvalues of
/// `Sigma_hat^+`, `(1 + C_l sqrt(m/n))^-2 <= lambda <= (C_u sqrt(m/n) - 1)^-2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConstants {
    pub c_lower: f64,
    pub c_upper: f64,
    pub calibration_n: usize,
    pub calibration_ratio: f64,
    pub calibration_replicates: usize,
    pub calibration_seed: u64,
}

impl SpectrumConstants {
    /// The frozen calibration shipped with the crate.
    pub fn frozen() -> SpectrumConstants {
        serde_json::from_str(include_str!("spectrum_constants.json")).expect("bundled constants parse")
    }

    /// `(lower, upper)` eigenvalue bounds at aspect ratio `m / n`.
    pub fn bounds(&self, ratio: f64) -> (f64, f64) {
        let s = ratio.sqrt();
        let upper_base = self.c_upper * s - 1.0;
        let upper = if upper_base > 0.0 { upper_base.powi(-2) } else { f64::INFINITY };
        ((1.0 + self.c_lower * s).powi(-2), upper)
    }
}

/// Nonzero eigenvalues of `Sigma_hat = X^T X / n` for an `n x m` Gaussian design
/// with `m > n`, ascending.
fn sample_covariance_spectrum(m: usize, n: usize, seed: u64) -> Vec<f64> {
    let x = gaussian_matrix(n, m, &mut rng_from(seed));
    let mut values: Vec<f64> = symmetric_eigenvalues(&x * x.transpose() / n as f64);
    values.sort_by(f64::total_cmp);
    values
}

/// Replicate-level calibration of [`SpectrumConstants`]: `c_lower` and
/// `c_upper` are the `(1 + coverage) / 2` and `(1 - coverage) / 2` quantiles of
/// the smallest admissible constants, so at least `coverage` of the
/// calibration replicates satisfy both bounds.
pub fn calibrate_spectrum_constants(
    n: usize,
    ratio: f64,
    replicates: usize,
    coverage: f64,
    seed: u64,
) -> ExpResult<SpectrumConstants> {
    check_positive("replicates", replicates)?;
    let m = (ratio * n as f64).round() as usize;
    if m <= n {
        return Err(ExpError::Invalid(format!("calibration needs m > n, got m = {m}, n = {n}")));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(ExpError::Invalid(format!("coverage must lie in (0, 1), got {coverage}")));
    }
    let s = (m as f64 / n as f64).sqrt();
    let needed: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let values = sample_covariance_spectrum(m, n, derive_seed(seed, &[r as u64]));
            let lo = values[0];
            let hi = values[values.len() - 1];
            ((hi.sqrt() - 1.0) / s, (lo.sqrt() + 1.0) / s)
        })
        .collect();
    let lower: Vec<f64> = needed.iter().map(|v| v.0).collect();
    let upper: Vec<f64> = needed.iter().map(|v| v.1).collect();
    let tail = (1.0 - coverage) / 2.0;
    Ok(SpectrumConstants {
        c_lower: quantile(&lower, 1.0 - tail).expect("finite"),
        c_upper: quantile(&upper, tail).expect("finite"),
        calibration_n: n,
        calibration_ratio: m as f64 / n as f64,
        calibration_replicates: replicates,
        calibration_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub m: usize,
    pub n: usize,
    /// Smallest and largest nonzero eigenvalue of `Sigma_hat^+`, per replicate.
    pub min_eig: Vec<f64>,
    pub max_eig: Vec<f64>,
    /// Number of nonzero eigenvalues per replicate.
    pub ranks: Vec<usize>,
    pub bounds: (f64, f64),
    /// Replicates with both extremes inside `bounds`.
    pub within_bounds: usize,
}

impl SpectrumReport {
    pub fn coverage(&self) -> f64 {
        self.within_bounds as f64 / self.min_eig.len() as f64
    }
}

pub fn spectrum_extremes(
    m: usize,
    n: usize,
    replicates: usize,
    seed: u64,
    constants: &SpectrumConstants,
) -> ExpResult<SpectrumReport> {
    check_positive("n", n)?;
    check_positive("replicates", replicates)?;
    if m <= n {
        return Err(ExpError::Invalid(format!("need m > n, got m = {m}, n = {n}")));
    }
    let bounds = constants.bounds(m as f64 / n as f64);
    let per_rep: Vec<(f64, f64, usize)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let values = sample_covariance_spectrum(m, n, derive_seed(seed, &[r as u64]));
            let top = values[values.len() - 1];
            let nonzero: Vec<f64> = values
                .into_iter()
                .filter(|&v| v > top * n as f64 * f64::EPSILON)
                .collect();
            let inv_min = 1.0 / nonzero[nonzero.len() - 1];
            let inv_max = 1.0 / nonzero[0];
            (inv_min, inv_max, nonzero.len())
        })
        .collect();
    let within = per_rep
        .iter()
        .filter(|(lo, hi, _)| *lo >= bounds.0 && *hi <= bounds.1)
        .count();
    Ok(SpectrumReport {
        m,
        n,
        min_eig: per_rep.iter().map(|v| v.0).collect(),
        max_eig: per_rep.iter().map(|v| v.1).collect(),
        ranks: per_rep.iter().map(|v| v.2).collect(),
        bounds,
        within_bounds: within,
    })
}

/// Replicate quartiles of the smallest and largest nonzero eigenvalue of
/// `Sigma_hat^+` against `m / n`.
pub fn spectrum_series(
    n: usize,
    ratios: &[f64],
    replicates: usize,
    seed: u64,
    constants: &SpectrumConstants,
) -> ExpResult<(QuantileSeries, QuantileSeries, Vec<SpectrumReport>)> {
    let mut reports = Vec::with_capacity(ratios.len());
    for (i, &ratio) in ratios.iter().enumerate() {
        let m = (ratio * n as f64).round() as usize;
        reports.push(spectrum_extremes(m, n, replicates, derive_seed(seed, &[i as u64]), constants)?);
    }
    let x: Vec<f64> = reports.iter().map(|r| r.m as f64 / r.n as f64).collect();
    let mins: Vec<Vec<f64>> = reports.iter().map(|r| r.min_eig.clone()).collect();
    let maxs: Vec<Vec<f64>> = reports.iter().map(|r| r.max_eig.clone()).collect();
    Ok((
        QuantileSeries::from_samples(x.clone(), &mins, replicates, seed),
        QuantileSeries::from_samples(x, &maxs, replicates, seed),
        reports,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRateTrace {
    /// `|beta_hat|_2` against `m / n`.
    pub l2: QuantileSeries,
    /// `|beta_hat|_1 / |beta_hat|_2` against `m / n`.
    pub l1_over_l2: QuantileSeries,
    /// `|Phi beta|_2` against `m / n`.
    pub phi_beta_l2: QuantileSeries,
    /// Replicates checked against the perturbation bound
    /// `| |beta_hat|_2 - |Phi beta|_2 | <= |eps|_2 / sqrt(n) * sqrt(lambda_max(Sigma_hat^+))`.
    pub bound_checks: usize,
    pub bound_violations: usize,
    /// Largest ratio of the left-hand side to the right-hand side.
    pub bound_max_ratio: f64,
}

/// Minimum-norm fits on isotropic Gaussian data, `|beta|_2 = r`, noise level
/// `sigma`, for each `m` in `m_grid`.
pub fn theorem1_trace(
    n: usize,
    m_grid: &[usize],
    r: f64,
    sigma: f64,
    replicates: usize,
    seed: u64,
) -> ExpResult<NormRateTrace> {
    check_positive("n", n)?;
    check_positive("replicates", replicates)?;
    if let Some(&m) = m_grid.iter().find(|&&m| m <= n) {
        return Err(ExpError::Invalid(format!("every m must exceed n = {n}, got {m}")));
    }
    if !(r >= 0.0 && sigma >= 0.0 && r.is_finite() && sigma.is_finite()) {
        return Err(ExpError::Invalid("r and sigma must be finite and >= 0".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..m_grid.len())
        .flat_map(|i| (0..replicates).map(move |k| (i, k)))
        .collect();
    struct Rep {
        l2: f64,
        ratio: f64,
        phi: f64,
        lhs: f64,
        rhs: f64,
    }
    let reps: Vec<Rep> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let m = m_grid[i];
            let mut rng = rng_for(seed, &[i as u64, k as u64]);
            let beta = {
                let v = gaussian_vector(m, &mut rng);
                let norm = v.norm();
                v * (r / norm)
            };
            let x = gaussian_matrix(n, m, &mut rng);
            let eps = gaussian_vector(n, &mut rng) * sigma;
            let y = &x * &beta + &eps;
            let svd = ThinSvd::new(&x);
            let beta_hat = svd.pinv_solve(&y);
            let phi = svd.project_row_space(&beta).norm();
            let s_min = svd.singular_values[svd.rank() - 1];
            let lambda_max = n as f64 / (s_min * s_min);
            let l2 = beta_hat.norm();
            Rep {
                l2,
                ratio: vector_norm(beta_hat.as_slice(), Exponent::ONE) / l2,
                phi,
                lhs: (l2 - phi).abs(),
                rhs: eps.norm() / (n as f64).sqrt() * lambda_max.sqrt(),
            }
        })
        .collect();
    let mut l2 = vec![Vec::new(); m_grid.len()];
    let mut ratio = vec![Vec::new(); m_grid.len()];
    let mut phi = vec![Vec::new(); m_grid.len()];
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    for (&(i, _), rep) in jobs.iter().zip(&reps) {
        l2[i].push(rep.l2);
        ratio[i].push(rep.ratio);
        phi[i].push(rep.phi);
        // Rounding slack relative to the size of the norms involved.
        if rep.lhs > rep.rhs + 1e-12 * (rep.l2 + rep.phi) {
            violations += 1;
        }
        if rep.rhs > 0.0 {
            max_ratio = max_ratio.max(rep.lhs / rep.rhs);
        }
    }
    let x: Vec<f64> = m_grid.iter().map(|&m| m as f64 / n as f64).collect();
    Ok(NormRateTrace {
        l2: QuantileSeries::from_samples(x.clone(), &l2, replicates, seed),
        l1_over_l2: QuantileSeries::from_samples(x.clone(), &ratio, replicates, seed),
        phi_beta_l2: QuantileSeries::from_samples(x, &phi, replicates, seed),
        bound_checks: reps.len(),
        bound_violations: violations,
        bound_max_ratio: max_ratio,
    })
}

/// `(|x|_2^2, |x|_inf)` of standard Gaussian vectors against `m`.
pub fn input_norm_scaling(m_grid: &[usize], replicates: usize, seed: u64) -> ExpResult<(QuantileSeries, QuantileSeries)> {
    check_positive("replicates", replicates)?;
    if m_grid.contains(&0) {
        return Err(ExpError::Invalid("m must be >= 1".into()));
    }
    let mut l2 = Vec::with_capacity(m_grid.len());
    let mut linf = Vec::with_capacity(m_grid.len());
    for (i, &m) in m_grid.iter().enumerate() {
        let draws: Vec<(f64, f64)> = (0..replicates)
            .into_par_iter()
            .map(|k| {
                let x = gaussian_vector(m, &mut rng_for(seed, &[i as u64, k as u64]));
                (x.norm_squared(), x.amax())
            })
            .collect();
        l2.push(draws.iter().map(|d| d.0).collect::<Vec<_>>());
        linf.push(draws.iter().map(|d| d.1).collect::<Vec<_>>());
    }
    let x: Vec<f64> = m_grid.iter().map(|&m| m as f64).collect();
    Ok((
        QuantileSeries::from_samples(x.clone(), &l2, replicates, seed),
        QuantileSeries::from_samples(x, &linf, replicates, seed),
    ))
}

/// CSV form of a series, with an optional reference column.
pub fn series_table(series: &QuantileSeries, reference: Option<(&str, &dyn Fn(f64) -> f64)>) -> Table {
    let mut columns = vec!["x", "q25", "median", "q75", "mean"];
    if let Some((name, _)) = reference {
        columns.push(name);
    }
    let mut t = Table::new(columns);
    for i in 0..series.len() {
        let mut row = vec![
            num(series.x_values[i]),
            num(series.q25[i]),
            num(series.median[i]),
            num(series.q75[i]),
            num(series.mean[i]),
        ];
        if let Some((_, f)) = reference {
            row.push(num(f(series.x_values[i])));
        }
        t.push(row);
    }
    t.with_meta("replicates", series.replicates.to_string())
        .with_meta("seed", series.seed.to_string())
}
