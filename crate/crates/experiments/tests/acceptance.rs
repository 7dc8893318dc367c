//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::time::Instant;

use advreg_core::adversarial_risk::{adv_risk_gaussian, adv_risk_monte_carlo, pointwise_adv_loss, worst_case_attack};
use advreg_core::asymptotics::{c0_residual, isotropic_asymptotics, solve_c0};
use advreg_core::data_models::{equicorrelated_sigma, latent_to_linear, make_orthogonal_w};
use advreg_core::estimators::{
    adv_train_fit, adv_train_objective, lasso_fit, lasso_kkt_residual, ridge_fit, SolverOptions,
};
use advreg_core::linalg::{gaussian_matrix, gaussian_vector};
use advreg_core::norm_geometry::{vector_norm, Exponent, NormOrder};
use advreg_core::rng::rng_from;
use advreg_core::{AdversarialBudget, DataModel, Estimator, ModelFamily, Population, Scaling};
use advreg_experiments::concentration_lab::{estimate_conjecture_c, theorem1_trace};
use advreg_experiments::figure_plans::{figure_plan, run_figure, FigurePlan, Overrides, Panel, REGULARIZATION_DELTAS};
use advreg_experiments::risk_experiments::{run_regularization_comparison, run_sweep, SweepResult, SweepSpec};
use advreg_experiments::stats::spearman;
use advreg_experiments::{with_threads, Table};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sweep_spec(id: &str, panel: usize) -> SweepSpec {
    match &figure_plan(id).unwrap().panels[panel] {
        Panel::Sweep { spec, .. } | Panel::Regularization { spec, .. } => spec.clone(),
        Panel::Projection { .. } => panic!("{id} has no sweep"),
    }
}

fn budget(delta: f64, p: impl Into<Exponent>) -> AdversarialBudget {
    AdversarialBudget::new(delta, p).unwrap()
}

/// Independent dual norm: `q` from `1/p + 1/q = 1`.
fn dual_norm_oracle(v: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinite => v.iter().map(|x| x.abs()).sum(),
        Exponent::Finite(p) if p == 1.0 => v.iter().fold(0.0, |a, x| a.max(x.abs())),
        Exponent::Finite(p) => {
            let q = p / (p - 1.0);
            v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q)
        }
    }
}

fn attack_tightness() -> Outcome {
    let mut rng = rng_from(101);
    let orders = [Exponent::ONE, Exponent::Finite(1.5), Exponent::TWO, Exponent::INF];
    let mut worst_gap: f64 = 0.0;
    for t in 0..200 {
        let m = rng.random_range(1..=8);
        let beta: Vec<f64> = gaussian_vector(m, &mut rng).iter().copied().collect();
        let x0: Vec<f64> = gaussian_vector(m, &mut rng).iter().copied().collect();
        let y0: f64 = rng.sample(rand_distr::StandardNormal);
        let delta = rng.random_range(0.01..2.0);
        let p = orders[t % 4];
        let b = budget(delta, p);
        let claimed = pointwise_adv_loss(&beta, &x0, y0, &b).map_err(|e| e.to_string())?;
        let e0 = y0 - beta.iter().zip(&x0).map(|(a, c)| a * c).sum::<f64>();
        let oracle = (e0.abs() + delta * dual_norm_oracle(&beta, p)).powi(2);
        ensure((claimed - oracle).abs() <= 1e-12 * oracle.max(1.0), || {
            format!("tuple {t}: closed form {claimed} vs oracle {oracle}")
        })?;
        for k in 0..10_000 {
            let mut d: Vec<f64> = if k % 3 == 0 {
                (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
            } else {
                gaussian_vector(m, &mut rng).iter().copied().collect()
            };
            let norm = vector_norm(&d, p);
            let radius = if k % 4 == 0 { delta } else { delta * rng.random::<f64>() };
            d.iter_mut().for_each(|v| *v *= radius / norm);
            let e = y0 - beta.iter().zip(x0.iter().zip(&d)).map(|(a, (x, dx))| a * (x + dx)).sum::<f64>();
            let loss = e * e;
            ensure(loss <= claimed * (1.0 + 1e-12) + 1e-14, || {
                format!("tuple {t}: perturbation {k} reaches {loss} > {claimed}")
            })?;
        }
        let attack = worst_case_attack(&beta, &x0, y0, &b).map_err(|e| e.to_string())?;
        ensure(vector_norm(&attack.perturbation, p) <= delta * (1.0 + 1e-12), || {
            format!("tuple {t}: attack leaves the ball")
        })?;
        let e = y0
            - beta
                .iter()
                .zip(x0.iter().zip(&attack.perturbation))
                .map(|(a, (x, dx))| a * (x + dx))
                .sum::<f64>();
        let gap = ((e * e - claimed) / claimed.max(1e-300)).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 1e-9, || format!("tuple {t}: attack loss {} vs {claimed}", e * e))?;
    }
    Ok(format!("200 tuples x 1e4 perturbations; worst relative attack gap {worst_gap:.1e}"))
}

fn gaussian_closed_form() -> Outcome {
    let mut rng = rng_from(202);
    let mut worst: f64 = 0.0;
    for c in 0..20 {
        let m = rng.random_range(4..=12);
        let variant = match c % 4 {
            0 => ModelFamily::Isotropic {
                m,
                r2: rng.random_range(0.5..2.0),
                sigma2: rng.random_range(0.1..1.0),
            },
            1 => ModelFamily::Equicorrelated {
                m,
                rho: rng.random_range(0.0..0.9),
                r2: rng.random_range(0.5..2.0),
                sigma2: rng.random_range(0.1..1.0),
            },
            2 => {
                let d = rng.random_range(1..=3);
                ModelFamily::Latent {
                    m,
                    d,
                    theta: gaussian_vector(d, &mut rng).iter().copied().collect(),
                    sigma_xi2: rng.random_range(0.05..0.5),
                }
            }
            _ => ModelFamily::WeakFeatures { m },
        };
        let scaling = [Scaling::Unit, Scaling::SqrtLog, Scaling::SqrtM][c % 3];
        let model = DataModel::new(variant, scaling).map_err(|e| e.to_string())?;
        let pop = Population::draw(&model, 1000 + c as u64).map_err(|e| e.to_string())?;
        let truth = pop.truth();
        let beta_hat = &truth.beta + gaussian_vector(m, &mut rng) * 0.3;
        let p = [Exponent::ONE, Exponent::TWO, Exponent::INF, Exponent::Finite(3.0)][c % 4];
        let b = budget(rng.random_range(0.05..1.0), p);
        let exact = adv_risk_gaussian(&beta_hat, &truth.beta, &truth.covariance, truth.sigma2, &b)
            .map_err(|e| e.to_string())?;
        let mc = adv_risk_monte_carlo(&beta_hat, &pop, &b, 1_000_000, 7 + c as u64).map_err(|e| e.to_string())?;
        let z = (mc.estimate - exact).abs() / mc.std_error;
        worst = worst.max(z);
        ensure(z <= 3.0, || {
            format!("config {c} ({}): exact {exact}, MC {} +- {}", model.family_name(), mc.estimate, mc.std_error)
        })?;
    }
    Ok(format!("20 configurations; largest deviation {worst:.2} standard errors"))
}

fn isotropic_limits(fig2: &SweepResult) -> Outcome {
    let zero = budget(0.0, 2.0);
    let two = budget(2.0, 2.0);
    let mut notes = Vec::new();
    for gamma in [0.5, 2.0, 4.0] {
        let limit = isotropic_asymptotics(gamma, 2.0, 1.0).map_err(|e| e.to_string())?;
        let c0 = fig2.cell(gamma, &Estimator::MinNorm, &zero).ok_or("missing cell")?;
        let risk = c0.median(|r| r.standard_risk);
        let norm_sq = c0.median(|r| r.norm_l2 * r.norm_l2);
        let rel_r = (risk / limit.risk - 1.0).abs();
        let rel_n = (norm_sq / limit.l2norm_sq - 1.0).abs();
        ensure(rel_r <= 0.15 && rel_n <= 0.15, || {
            format!("gamma {gamma}: risk {risk} vs {}, norm {norm_sq} vs {}", limit.risk, limit.l2norm_sq)
        })?;
        let c2 = fig2.cell(gamma, &Estimator::MinNorm, &two).ok_or("missing cell")?;
        let adv = c2.median(|r| r.adv_risk);
        let o = c2.overlay.ok_or("missing overlay")?;
        let (lo, hi) = (o.lower.unwrap(), o.upper.unwrap());
        ensure(lo <= adv && adv <= hi, || format!("gamma {gamma}: adversarial median {adv} outside [{lo}, {hi}]"))?;
        notes.push(format!("g={gamma}: dR={:.1}% dL={:.1}% adv {adv:.2} in [{lo:.2},{hi:.2}]", 100.0 * rel_r, 100.0 * rel_n));
    }
    Ok(notes.join("; "))
}

fn sandwich(runs: &[(&str, &SweepResult)]) -> Outcome {
    let mut total = 0;
    for (name, res) in runs {
        let v = res.sandwich_violations(1e-9);
        ensure(v == 0, || format!("{name}: {v} replicate(s) outside their bounds"))?;
        total += res.cells.iter().map(|c| c.replicates.len()).sum::<usize>();
    }
    Ok(format!("{total} replicate evaluations inside [R + d^2 Lq, (sqrt R + d sqrt Lq)^2]"))
}

fn norm_rate() -> Outcome {
    let grid: Vec<usize> = [2, 4, 8, 16, 32].iter().map(|k| 100 * k).collect();
    let t = theorem1_trace(100, &grid, 1.0, 1.0, 20, 303).map_err(|e| e.to_string())?;
    let s2 = t.l2.loglog_slope().map_err(|e| e.to_string())?;
    let s1 = t.l1_over_l2.loglog_slope().map_err(|e| e.to_string())?;
    ensure((s2 + 0.5).abs() <= 0.1, || format!("l2 slope {s2}"))?;
    ensure((s1 - 0.5).abs() <= 0.1, || format!("l1/l2 slope {s1}"))?;
    ensure(t.bound_violations == 0, || format!("{} perturbation-bound violations", t.bound_violations))?;
    Ok(format!(
        "slope |b|_2 {s2:.3}, slope |b|_1/|b|_2 {s1:.3}; perturbation bound held in {} replicates (max ratio {:.3})",
        t.bound_checks, t.bound_max_ratio
    ))
}

fn projection_norms() -> Outcome {
    let m = 2000;
    let grid: Vec<usize> = (1..=10).map(|k| 100 * k).collect();
    let est = estimate_conjecture_c(m, &grid, 50, 404).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, &n) in grid.iter().enumerate() {
        let target = (n as f64 / m as f64).sqrt();
        let rel = (est.l2_series.median[i] / target - 1.0).abs();
        worst = worst.max(rel);
        ensure(rel <= 0.05, || format!("n = {n}: median |Phi b|_2 {} vs {target}", est.l2_series.median[i]))?;
    }
    ensure((0.75..=0.85).contains(&est.c_hat), || format!("c_hat = {}", est.c_hat))?;
    Ok(format!("worst l2 deviation {:.2}%, c_hat = {:.4}", 100.0 * worst, est.c_hat))
}

fn equicorrelated_spectrum() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, rho) in [(3usize, 0.5), (50, 0.9)] {
        let (sigma, values, vectors) = equicorrelated_sigma(m, rho).map_err(|e| e.to_string())?;
        let mut expected = vec![1.0 - rho; m - 1];
        expected.push(1.0 + (m as f64 - 1.0) * rho);
        expected.sort_by(f64::total_cmp);
        let mut computed: Vec<f64> = sigma.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        computed.sort_by(f64::total_cmp);
        let mut reported: Vec<f64> = values.iter().copied().collect();
        reported.sort_by(f64::total_cmp);
        for k in 0..m {
            worst = worst.max((computed[k] - expected[k]).abs()).max((reported[k] - expected[k]).abs());
        }
        for k in 0..m {
            let v = vectors.column(k);
            worst = worst.max((&sigma * v - v * values[k]).amax());
        }
        ensure(worst <= 1e-10, || format!("(m, rho) = ({m}, {rho}): error {worst:e}"))?;
    }
    Ok(format!("max eigen error {worst:.1e}"))
}

fn latent_equivalence() -> Outcome {
    let (m, d, draws) = (20, 5, 100_000);
    let w = make_orthogonal_w(m, d, 505).map_err(|e| e.to_string())?;
    let mut rng = rng_from(506);
    let theta = gaussian_vector(d, &mut rng);
    let sigma_xi2 = 0.3;
    let (beta, cov, sigma2) = latent_to_linear(&w, &theta, sigma_xi2).map_err(|e| e.to_string())?;
    let sx = cov.to_dense();
    let k = m + 1;
    let mut target = DMatrix::zeros(k, k);
    target.view_mut((0, 0), (m, m)).copy_from(&sx);
    let sb = &sx * &beta;
    for i in 0..m {
        target[(i, m)] = sb[i];
        target[(m, i)] = sb[i];
    }
    target[(m, m)] = beta.dot(&sb) + sigma2;
    // Direct simulation of x = W z + u, y = theta^T z + xi.
    let mut acc = DMatrix::<f64>::zeros(k, k);
    let chunk = 5000;
    for _ in 0..draws / chunk {
        let z = gaussian_matrix(chunk, d, &mut rng);
        let x = gaussian_matrix(chunk, m, &mut rng) + &z * w.transpose();
        let y = &z * &theta + gaussian_vector(chunk, &mut rng) * sigma_xi2.sqrt();
        let mut joint = DMatrix::zeros(chunk, k);
        joint.view_mut((0, 0), (chunk, m)).copy_from(&x);
        joint.set_column(m, &y);
        acc += joint.tr_mul(&joint);
    }
    let sample = acc / draws as f64;
    let entries = k * (k + 1) / 2;
    // Each entry gets the 3-SE level, shared out over all entries.
    let normal = Normal::standard();
    let alpha = 2.0 * normal.cdf(-3.0);
    let limit = -normal.inverse_cdf(alpha / (2.0 * entries as f64));
    let mut worst: f64 = 0.0;
    let mut beyond3 = 0;
    for i in 0..k {
        for j in 0..=i {
            let se = ((target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)) / draws as f64).sqrt();
            let z = (sample[(i, j)] - target[(i, j)]).abs() / se;
            worst = worst.max(z);
            beyond3 += usize::from(z > 3.0);
        }
    }
    ensure(worst <= limit, || format!("largest deviation {worst:.2} standard errors (limit {limit:.2})"))?;
    Ok(format!(
        "{entries} entries, largest deviation {worst:.2} SE (family-wise limit {limit:.2}); \
         {beyond3} beyond 3 SE, {:.2} expected",
        entries as f64 * alpha
    ))
}

fn c0_solver() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let psi = 0.05 * (i + 1) as f64;
        for j in 0..20 {
            let gamma = 1.05 * (100.0f64 / 1.05).powf(j as f64 / 19.0);
            let c = solve_c0(psi, gamma).map_err(|e| e.to_string())?;
            let r = c0_residual(c, psi, gamma).abs();
            worst = worst.max(r);
            ensure(c > 0.0 && r <= 1e-12, || format!("psi {psi}, gamma {gamma}: residual {r:e}"))?;
        }
    }
    let mut worst_closed: f64 = 0.0;
    for gamma in [1.05, 1.5, 2.0, 5.0, 20.0, 100.0] {
        let c = solve_c0(1.0, gamma).map_err(|e| e.to_string())?;
        let closed = 1.0 / (2.0 * gamma * (gamma - 1.0));
        let rel = (c / closed - 1.0).abs();
        worst_closed = worst_closed.max(rel);
        ensure(rel <= 1e-10, || format!("psi = 1, gamma {gamma}: {c} vs {closed}"))?;
    }
    Ok(format!("max residual {worst:.1e}; psi = 1 closed form rel. error {worst_closed:.1e}"))
}

fn solvers() -> Outcome {
    let mut rng = rng_from(707);
    // Ridge against gradient descent polished from a perturbed start.
    let mut ridge_gap: f64 = 0.0;
    for &(n, m) in &[(30usize, 10usize), (20, 60), (40, 40)] {
        let x = gaussian_matrix(n, m, &mut rng);
        let y = gaussian_vector(n, &mut rng);
        let delta = 0.5;
        let closed = ridge_fit(&x, &y, delta).map_err(|e| e.to_string())?.beta_hat;
        let nf = n as f64;
        let lmax = (x.tr_mul(&x) / nf).symmetric_eigen().eigenvalues.max();
        let step = 1.0 / (2.0 * (lmax + delta));
        let mut b = &closed + gaussian_vector(m, &mut rng) * 1e-2;
        for _ in 0..100_000 {
            let grad = x.tr_mul(&(&x * &b - &y)) * (2.0 / nf) + &b * (2.0 * delta);
            let next = &b - grad * step;
            let moved = (&next - &b).amax();
            b = next;
            if moved < 1e-16 {
                break;
            }
        }
        ridge_gap = ridge_gap.max((b - &closed).amax());
    }
    ensure(ridge_gap <= 1e-8, || format!("ridge vs gradient polish differ by {ridge_gap:e}"))?;

    // Lasso: KKT on random instances, exact soft-threshold on an orthonormal design.
    let opts = SolverOptions::default();
    let mut kkt_worst: f64 = 0.0;
    for i in 0..20 {
        let (n, m) = [(20, 50), (40, 10), (30, 90), (25, 25)][i % 4];
        let x = gaussian_matrix(n, m, &mut rng);
        let y = gaussian_vector(n, &mut rng);
        let delta = [0.01, 0.05, 0.1, 0.3][i % 4];
        let fit = lasso_fit(&x, &y, delta, &opts).map_err(|e| e.to_string())?;
        let kkt = lasso_kkt_residual(&x, &y, &fit.beta_hat, delta);
        // Independent subgradient check.
        let g = x.tr_mul(&(&y - &x * &fit.beta_hat)) * (2.0 / n as f64);
        let own = g
            .iter()
            .zip(fit.beta_hat.iter())
            .map(|(gj, bj)| if *bj == 0.0 { (gj.abs() - delta).max(0.0) } else { (gj - delta * bj.signum()).abs() })
            .fold(0.0, f64::max);
        kkt_worst = kkt_worst.max(kkt).max(own);
    }
    ensure(kkt_worst <= 1e-6, || format!("lasso KKT residual {kkt_worst:e}"))?;
    let h = DMatrix::from_row_slice(4, 4, &[
        1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0,
    ]);
    let ls = DVector::from_vec(vec![1.2, -0.5, 0.15, -0.05]);
    let y = &h * &ls;
    let delta = 0.4;
    let fit = lasso_fit(&h, &y, delta, &opts).map_err(|e| e.to_string())?;
    // X^T X = n I: soft threshold of the least-squares solution at delta / 2.
    let expected = ls.map(|v: f64| v.signum() * (v.abs() - delta / 2.0).max(0.0));
    let st_gap = (&fit.beta_hat - &expected).amax();
    ensure(st_gap <= 1e-12, || format!("soft-threshold mismatch {st_gap:e}"))?;

    // Adversarial training: one-point oracles and grid search.
    let x1 = DMatrix::from_element(1, 1, 1.0);
    let y1 = DVector::from_element(1, 1.0);
    let mut oracle_gap: f64 = 0.0;
    for (delta, want_b, want_obj) in [(0.5, 1.0, 0.25), (2.0, 0.0, 1.0)] {
        let (gb, gobj) = (-40_000..=40_000)
            .map(|k| {
                let b = k as f64 * 5e-5;
                (b, ((1.0 - b).abs() + delta * b.abs()).powi(2))
            })
            .fold((0.0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
        ensure((gb - want_b).abs() < 1e-3 && (gobj - want_obj).abs() < 1e-3, || {
            format!("grid oracle at delta {delta}: ({gb}, {gobj})")
        })?;
        for p in [Exponent::TWO, Exponent::INF] {
            let fit = adv_train_fit(&x1, &y1, delta, p, &opts).map_err(|e| e.to_string())?;
            let b = fit.beta_hat[0];
            let obj = fit.diagnostics.objective;
            oracle_gap = oracle_gap.max((b - gb).abs()).max((obj - gobj).abs());
        }
    }
    ensure(oracle_gap <= 1e-3, || format!("adversarial training vs grid oracle {oracle_gap:e}"))?;

    let x = gaussian_matrix(15, 30, &mut rng);
    let y = gaussian_vector(15, &mut rng);
    let mut probes = 0;
    for p in [Exponent::ONE, Exponent::TWO, Exponent::INF] {
        let delta = 0.05;
        let fit = adv_train_fit(&x, &y, delta, p, &opts).map_err(|e| e.to_string())?;
        let f_hat = adv_train_objective(&x, &y, &fit.beta_hat, delta, p);
        for _ in 0..200 {
            let a = gaussian_vector(30, &mut rng);
            let b = gaussian_vector(30, &mut rng);
            let mid = (&a + &b) * 0.5;
            let fa = adv_train_objective(&x, &y, &a, delta, p);
            let fb = adv_train_objective(&x, &y, &b, delta, p);
            let fm = adv_train_objective(&x, &y, &mid, delta, p);
            ensure(fm <= 0.5 * (fa + fb) + 1e-12 * (fa + fb), || format!("midpoint convexity fails for p = {p}"))?;
            // The fit is not beaten at midpoints towards random points.
            let towards = (&fit.beta_hat + &a * 0.1) * 0.5 + &fit.beta_hat * 0.5;
            let ft = adv_train_objective(&x, &y, &towards, delta, p);
            ensure(f_hat <= ft + 1e-6 * (1.0 + f_hat), || format!("fit beaten at a midpoint for p = {p}"))?;
            probes += 1;
        }
    }
    Ok(format!(
        "ridge gap {ridge_gap:.1e}; lasso KKT {kkt_worst:.1e}; soft-threshold gap {st_gap:.1e}; \
         adv. training oracle gap {oracle_gap:.1e}; {probes} convexity probes"
    ))
}

fn figure1_shape(fig1: &SweepResult) -> Outcome {
    let l2 = budget(0.1, 2.0);
    let linf = budget(0.1, Exponent::INF);
    let mn = Estimator::MinNorm;
    let med = |g: f64, b: &AdversarialBudget, f: fn(&advreg_experiments::risk_experiments::ReplicateValues) -> f64| {
        fig1.cell(g, &mn, b).map(|c| c.median(f)).ok_or_else(|| format!("missing cell gamma {g}"))
    };
    let std_10 = med(10.0, &l2, |r| r.standard_risk)?;
    let std_05 = med(0.5, &l2, |r| r.standard_risk)?;
    ensure(std_10 < std_05, || format!("standard risk {std_10} at gamma 10 vs {std_05} at 0.5"))?;
    let linf_curve: Vec<f64> = [2.0, 4.0, 8.0, 10.0]
        .iter()
        .map(|&g| med(g, &linf, |r| r.adv_risk))
        .collect::<Result<_, _>>()?;
    ensure(linf_curve.windows(2).all(|w| w[1] > w[0]), || format!("l_inf medians {linf_curve:?}"))?;
    let l2_10 = med(10.0, &l2, |r| r.adv_risk)?;
    let l2_15 = med(1.5, &l2, |r| r.adv_risk)?;
    ensure(l2_10 < l2_15, || format!("l_2 median {l2_10} at gamma 10 vs {l2_15} at 1.5"))?;
    Ok(format!(
        "standard {std_05:.3} -> {std_10:.3}; l_inf {linf_curve:.3?}; l_2 {l2_15:.3} -> {l2_10:.3}"
    ))
}

fn regularization(res: &SweepResult) -> Outcome {
    let largest = REGULARIZATION_DELTAS.iter().copied().fold(0.0, f64::max);
    let norm_curve = |e: Estimator, d: f64, grid: &[f64]| -> Result<Vec<f64>, String> {
        let b = budget(d, Exponent::INF);
        grid.iter()
            .map(|&g| res.cell(g, &e, &b).map(|c| c.median(|r| r.norm_l1)).ok_or(format!("missing gamma {g}")))
            .collect()
    };
    let beyond = [4.0, 6.0, 8.0];
    let lasso = norm_curve(Estimator::Lasso { delta: largest }, largest, &beyond)?;
    let adv = norm_curve(
        Estimator::AdvTrain {
            delta: largest,
            p: NormOrder::LINF,
        },
        largest,
        &beyond,
    )?;
    ensure(lasso.windows(2).all(|w| w[1] <= w[0]), || format!("lasso |b|_1 at delta {largest}: {lasso:?}"))?;
    ensure(adv.windows(2).all(|w| w[1] <= w[0]), || format!("adv. training |b|_1 at delta {largest}: {adv:?}"))?;
    let mut ridge_notes = Vec::new();
    for &d in &REGULARIZATION_DELTAS {
        let r = norm_curve(Estimator::Ridge { delta: d }, d, &[2.0, 8.0])?;
        ensure(r[1] > r[0], || format!("ridge |b|_1 at delta {d}: {} (gamma 2) vs {} (gamma 8)", r[0], r[1]))?;
        ridge_notes.push(format!("{:.1}->{:.1}", r[0], r[1]));
    }
    let grid = &res.spec.gamma_grid;
    let mut rho = Vec::new();
    for &d in &REGULARIZATION_DELTAS {
        let a = norm_curve(Estimator::Lasso { delta: d }, d, grid)?;
        let b = norm_curve(Estimator::AdvTrain { delta: d, p: NormOrder::LINF }, d, grid)?;
        rho.push(spearman(&a, &b));
    }
    let failures: usize = res.cells.iter().map(|c| c.failures()).sum();
    Ok(format!(
        "delta {largest}: lasso {lasso:.3?}, adv-linf {adv:.3?}; ridge gamma 2->8 {ridge_notes:?}; \
         lasso/adv-linf rank correlation per delta {rho:.2?}; {failures} uncertified replicate fits"
    ))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let overrides = Overrides {
        seed: Some(11),
        replicates: Some(2),
        mc_samples: None,
    };
    let mut compared = 0;
    for id in ["fig2", "fig4", "fig8"] {
        let mut o = overrides;
        if id == "fig4" {
            o.replicates = Some(3);
        }
        with_threads(Some(1), || run_figure(id, a.path(), &o)).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        with_threads(Some(2), || run_figure(id, b.path(), &o)).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        let mut names: Vec<_> = std::fs::read_dir(a.path().join(id))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let x = std::fs::read(a.path().join(id).join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.path().join(id).join(&name)).map_err(|e| e.to_string())?;
            ensure(x == y, || format!("{id}/{name:?} differs between reruns"))?;
            compared += 1;
        }
    }
    // The header config alone reproduces a table.
    let path = a.path().join("fig2").join("fig2_l2_delta1.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let table = Table::parse(&text).map_err(|e| e.to_string())?;
    let panel: Panel = serde_json::from_str(table.meta("config").ok_or("no config")?).map_err(|e| e.to_string())?;
    let plan = FigurePlan {
        id: table.meta("figure").ok_or("no figure")?.to_string(),
        panels: vec![panel],
    };
    let rerun = plan.run().map_err(|e| e.to_string())?;
    let again = rerun
        .iter()
        .find(|(f, _)| f == "fig2_l2_delta1.csv")
        .ok_or("file missing from rerun")?
        .1
        .to_csv_string()
        .map_err(|e| e.to_string())?;
    ensure(again == text, || "header config does not reproduce the table".into())?;
    Ok(format!("{compared} files byte-identical across reruns and thread counts; header round trip reproduces fig2_l2_delta1.csv"))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match &outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{secs:.1}s]"),
            Err(msg) => println!("FAIL  {name}: {msg} [{secs:.1}s]"),
        }
        results.push((name, outcome, secs));
    };

    run("attack tightness", &mut attack_tightness);
    run("gaussian closed form", &mut gaussian_closed_form);

    let t = Instant::now();
    let fig2 = run_sweep(&sweep_spec("fig2", 0));
    let fig3 = run_sweep(&sweep_spec("fig3", 0));
    let fig6a = run_sweep(&sweep_spec("fig6", 0));
    let fig6b = run_sweep(&sweep_spec("fig6", 1));
    println!("      (fig2, fig3, fig6 sweeps: {:.1}s)", t.elapsed().as_secs_f64());
    match &fig2 {
        Ok(r) => run("isotropic limits (fig2 regime)", &mut || isotropic_limits(r)),
        Err(e) => run("isotropic limits (fig2 regime)", &mut || Err(e.to_string())),
    }
    match (&fig2, &fig3, &fig6a, &fig6b) {
        (Ok(a), Ok(b), Ok(c), Ok(d)) => run("bound sandwich", &mut || {
            sandwich(&[("fig2", a), ("fig3", b), ("fig6 sqrt(m)", c), ("fig6 sqrt(log m)", d)])
        }),
        _ => run("bound sandwich", &mut || Err("a sweep failed to run".into())),
    }
    run("norm rate", &mut norm_rate);
    run("random projection norms", &mut projection_norms);
    run("equicorrelated eigenstructure", &mut equicorrelated_spectrum);
    run("latent equivalence", &mut latent_equivalence);
    run("c0 solver", &mut c0_solver);
    run("solvers", &mut solvers);
    match run_sweep(&sweep_spec("fig1", 0)) {
        Ok(r) => run("figure 1 shape", &mut || figure1_shape(&r)),
        Err(e) => run("figure 1 shape", &mut || Err(e.to_string())),
    }
    run("regularization comparison", &mut || {
        let res = run_regularization_comparison(&sweep_spec("fig7", 0), &REGULARIZATION_DELTAS).map_err(|e| e.to_string())?;
        regularization(&res)
    });
    run("determinism", &mut determinism);

    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
