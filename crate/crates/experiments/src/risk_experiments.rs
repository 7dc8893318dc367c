//! Replicated sweeps over `gamma = m / n` with `n` fixed: sample, fit, and
//! evaluate exact Gaussian risks, norms and bounds per replicate, then
//! summarise by quartiles next to the large-system limits.

use advreg_core::adversarial_risk::{adv_risk_monte_carlo, lp_transfer_bounds, risk_bounds};
use advreg_core::asymptotics::{
    equicorrelated_asymptotics, isotropic_asymptotics, latent_asymptotics, AsymptoticPoint,
};
use advreg_core::data_models::{replicate_streams, weak_features_reference};
use advreg_core::estimators::{fit, SolverOptions};
use advreg_core::norm_geometry::{Exponent, NormOrder};
use advreg_core::rng::derive_seed;
use advreg_core::{AdversarialBudget, DataModel, Error, Estimator, ModelFamily, Population, RiskReport, Scaling};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ExpError, ExpResult};
use crate::stats::{mean, Quartiles};
use crate::table::{num, opt, Table};

const TAG_SOLVER: u64 = 0x501;
const TAG_MC: u64 = 0x3c;

/// A fixed-`n`, varying-`m` experiment. The `m` stored in `model` is ignored;
/// each grid point uses `m = round(gamma n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: DataModel,
    pub n: usize,
    pub gamma_grid: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub budgets: Vec<AdversarialBudget>,
    pub replicates: usize,
    pub seed: u64,
    /// Monte Carlo test samples per replicate and budget; 0 disables the
    /// cross-check.
    #[serde(default)]
    pub mc_samples: usize,
    #[serde(default = "SweepSpec::default_solver")]
    pub solver: SolverOptions,
}

impl SweepSpec {
    /// Solver settings used unless a spec says otherwise: one random restart
    /// besides the ridge warm start.
    pub fn default_solver() -> SolverOptions {
        SolverOptions {
            restarts: 1,
            ..SolverOptions::default()
        }
    }

    pub fn validate(&self) -> ExpResult<()> {
        let bad = |msg: String| Err(ExpError::Invalid(msg));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.gamma_grid.is_empty() {
            return bad("gamma_grid is empty".into());
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("gamma_grid entries must be finite and > 0, got {g}"));
        }
        if self.estimators.is_empty() {
            return bad("estimators is empty".into());
        }
        for e in &self.estimators {
            let d = e.delta();
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("estimator {} has invalid delta {d}", e.label()));
            }
        }
        for b in &self.budgets {
            b.validate()?;
        }
        for &gamma in &self.gamma_grid {
            let m = self.m_for(gamma)?;
            if gamma != 1.0 {
                self.model.with_m(m).validate()?;
                self.model.scaling.eta(m)?;
            }
        }
        Ok(())
    }

    pub fn m_for(&self, gamma: f64) -> ExpResult<usize> {
        let m = (gamma * self.n as f64).round();
        if m < 1.0 {
            return Err(ExpError::Invalid(format!("gamma = {gamma} gives m = 0 at n = {}", self.n)));
        }
        Ok(m as usize)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

/// Everything measured for one replicate of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateValues {
    pub standard_risk: f64,
    pub adv_risk: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `|beta_hat|_q` for the dual order of the cell's budget.
    pub dual_norm: f64,
    pub norm_l1: f64,
    pub norm_l2: f64,
    pub norm_linf: f64,
    /// The solver did not certify its solution; values refer to its best
    /// iterate, or are `NaN` if there was none.
    pub failed: bool,
    pub mc_estimate: Option<f64>,
    pub mc_std_error: Option<f64>,
}

impl ReplicateValues {
    fn missing() -> ReplicateValues {
        ReplicateValues {
            standard_risk: f64::NAN,
            adv_risk: f64::NAN,
            lower_bound: f64::NAN,
            upper_bound: f64::NAN,
            dual_norm: f64::NAN,
            norm_l1: f64::NAN,
            norm_l2: f64::NAN,
            norm_linf: f64::NAN,
            failed: true,
            mc_estimate: None,
            mc_std_error: None,
        }
    }
}

/// Large-system limit of the minimum-norm estimator for one cell, in the
/// coordinates of the scaled inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub risk: f64,
    pub l2norm_sq: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub m: usize,
    pub estimator: Estimator,
    pub budget: AdversarialBudget,
    pub replicates: Vec<ReplicateValues>,
    pub overlay: Option<Overlay>,
}

impl SweepCell {
    pub fn quartiles(&self, f: impl Fn(&ReplicateValues) -> f64) -> Quartiles {
        let values: Vec<f64> = self.replicates.iter().map(f).collect();
        Quartiles::of(&values)
    }

    pub fn median(&self, f: impl Fn(&ReplicateValues) -> f64) -> f64 {
        self.quartiles(f).median
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.failed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    /// Ordered by gamma, then estimator, then budget, as listed in the spec.
    pub cells: Vec<SweepCell>,
    pub skipped_gammas: Vec<f64>,
}

impl SweepResult {
    pub fn cell(&self, gamma: f64, estimator: &Estimator, budget: &AdversarialBudget) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.gamma == gamma && c.estimator == *estimator && c.budget == *budget)
    }

    /// Cells of one estimator and budget, in grid order.
    pub fn curve(&self, estimator: &Estimator, budget: &AdversarialBudget) -> Vec<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.estimator == *estimator && c.budget == *budget)
            .collect()
    }

    /// Replicates whose adversarial risk falls outside its own
    /// `[lower, upper]`, with relative slack `tol`.
    pub fn sandwich_violations(&self, tol: f64) -> usize {
        self.cells
            .iter()
            .flat_map(|c| c.replicates.iter())
            .filter(|r| r.adv_risk.is_finite())
            .filter(|r| {
                let slack = tol * r.upper_bound.abs().max(1.0);
                r.adv_risk < r.lower_bound - slack || r.adv_risk > r.upper_bound + slack
            })
            .count()
    }

    pub fn to_table(&self) -> Table {
        self.to_table_filtered(|_| true)
    }

    pub fn to_table_filtered(&self, keep: impl Fn(&SweepCell) -> bool) -> Table {
        let metrics = [
            "std_risk",
            "adv_risk",
            "lower_bound",
            "upper_bound",
            "dual_norm",
            "norm_l1",
            "norm_l2",
            "norm_linf",
        ];
        let mut columns: Vec<String> = ["gamma", "m", "estimator", "train_delta", "p", "delta", "replicates", "failures"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in metrics {
            for q in ["q25", "median", "q75"] {
                columns.push(format!("{m}_{q}"));
            }
        }
        columns.extend(
            ["mc_adv_risk", "mc_std_error", "asym_risk", "asym_l2norm_sq", "asym_lower", "asym_upper"]
                .iter()
                .map(|s| s.to_string()),
        );
        let mut table = Table::new(columns);
        for cell in self.cells.iter().filter(|c| keep(c)) {
            let mut row = vec![
                num(cell.gamma),
                cell.m.to_string(),
                cell.estimator.label(),
                num(cell.estimator.delta()),
                cell.budget.p.p().to_string(),
                num(cell.budget.delta),
                cell.replicates.len().to_string(),
                cell.failures().to_string(),
            ];
            let getters: [fn(&ReplicateValues) -> f64; 8] = [
                |r| r.standard_risk,
                |r| r.adv_risk,
                |r| r.lower_bound,
                |r| r.upper_bound,
                |r| r.dual_norm,
                |r| r.norm_l1,
                |r| r.norm_l2,
                |r| r.norm_linf,
            ];
            for g in getters {
                let q = cell.quartiles(g);
                row.extend([num(q.q25), num(q.median), num(q.q75)]);
            }
            let mc: Vec<f64> = cell.replicates.iter().filter_map(|r| r.mc_estimate).collect();
            let se: Vec<f64> = cell.replicates.iter().filter_map(|r| r.mc_std_error).collect();
            if mc.is_empty() {
                row.extend([String::new(), String::new()]);
            } else {
                row.extend([num(mean(&mc)), num(mean(&se))]);
            }
            let o = cell.overlay;
            row.extend([
                opt(o.map(|o| o.risk)),
                opt(o.map(|o| o.l2norm_sq)),
                opt(o.and_then(|o| o.lower)),
                opt(o.and_then(|o| o.upper)),
            ]);
            table.push(row);
        }
        let skipped: Vec<String> = self.skipped_gammas.iter().map(|g| num(*g)).collect();
        table
            .with_meta("kind", "sweep")
            .with_meta("skipped_gamma", skipped.join(" "))
            .with_meta("config", self.spec.to_json())
    }
}

/// Limit of the minimum-norm estimator's risk and squared norm for `model`
/// at `m` features and aspect ratio `gamma`, when one is known.
pub fn asymptotic_point(model: &DataModel, m: usize, gamma: f64) -> Option<AsymptoticPoint> {
    let point = match &model.variant {
        ModelFamily::Isotropic { r2, sigma2, .. } => isotropic_asymptotics(gamma, *r2, *sigma2),
        ModelFamily::Equicorrelated { rho, r2, sigma2, .. } => equicorrelated_asymptotics(gamma, *rho, *r2, *sigma2),
        ModelFamily::Latent { d, theta, sigma_xi2, .. } => {
            if *d > m {
                return None;
            }
            // Linear-equivalent parameters for W^T W = (m / d) I.
            let k = m as f64 / *d as f64;
            let t2: f64 = theta.iter().map(|t| t * t).sum();
            let r2 = k * t2 / (1.0 + k).powi(2);
            let sigma2 = sigma_xi2 + t2 / (1.0 + k);
            latent_asymptotics(1.0 / k, gamma, r2, sigma2).map(|(p, _)| p)
        }
        ModelFamily::WeakFeatures { .. } => return None,
    };
    point.ok()
}

fn overlay_for(model: &DataModel, m: usize, gamma: f64, budget: &AdversarialBudget) -> Option<Overlay> {
    let point = asymptotic_point(model, m, gamma)?;
    let eta = model.scaling.eta(m).ok()?;
    let l2 = point.l2norm_sq * eta * eta;
    let bounds = match budget.p.p() {
        Exponent::Finite(p) if p == 2.0 => risk_bounds(point.risk, l2, budget.delta).ok(),
        p @ (Exponent::Infinite | Exponent::Finite(_)) => lp_transfer_bounds(point.risk, l2, budget.delta, m, p).ok(),
    };
    Some(Overlay {
        risk: point.risk,
        l2norm_sq: l2,
        lower: bounds.map(|b| b.0),
        upper: bounds.map(|b| b.1),
    })
}

/// One replicate of one grid point: every estimator on the same data.
fn run_replicate(
    spec: &SweepSpec,
    gi: usize,
    rep: usize,
    m: usize,
) -> ExpResult<Vec<Vec<ReplicateValues>>> {
    let model = spec.model.with_m(m);
    let (pop_seed, data_seed) = replicate_streams(spec.seed, &[gi as u64, rep as u64]);
    let population = Population::draw(&model, pop_seed)?;
    let data = population.dataset(spec.n, data_seed)?;
    let mut out = Vec::with_capacity(spec.estimators.len());
    for (ei, estimator) in spec.estimators.iter().enumerate() {
        let options = SolverOptions {
            seed: derive_seed(spec.seed, &[gi as u64, rep as u64, ei as u64, TAG_SOLVER]),
            ..spec.solver
        };
        let (beta_hat, failed) = match fit(&data.x, &data.y, estimator, &options) {
            Ok(f) => (Some(f.beta_hat), false),
            Err(Error::NotConverged { best, residual, .. }) => {
                warn!(
                    "gamma index {gi}, replicate {rep}: {} stopped at residual {residual:e}; using its best iterate",
                    estimator.label()
                );
                (Some(best.beta_hat), true)
            }
            Err(e) => {
                warn!("gamma index {gi}, replicate {rep}: {} failed: {e}", estimator.label());
                (None, true)
            }
        };
        let Some(beta_hat) = beta_hat.filter(|b| b.iter().all(|v| v.is_finite())) else {
            out.push(vec![ReplicateValues::missing(); spec.budgets.len()]);
            continue;
        };
        let report = RiskReport::evaluate(&beta_hat, &data.truth, &spec.budgets)?;
        let mut per_budget = Vec::with_capacity(spec.budgets.len());
        for (bi, (budget, entry)) in spec.budgets.iter().zip(&report.adversarial).enumerate() {
            let (mc_estimate, mc_std_error) = if spec.mc_samples > 0 {
                let seed = derive_seed(spec.seed, &[gi as u64, rep as u64, ei as u64, bi as u64, TAG_MC]);
                let mc = adv_risk_monte_carlo(&beta_hat, &population, budget, spec.mc_samples, seed)?;
                (Some(mc.estimate), Some(mc.std_error))
            } else {
                (None, None)
            };
            per_budget.push(ReplicateValues {
                standard_risk: report.standard_risk,
                adv_risk: entry.adv_risk,
                lower_bound: entry.lower_bound,
                upper_bound: entry.upper_bound,
                dual_norm: budget.dual_norm(beta_hat.as_slice()),
                norm_l1: report.norm_l1,
                norm_l2: report.norm_l2,
                norm_linf: report.norm_linf,
                failed,
                mc_estimate,
                mc_std_error,
            });
        }
        out.push(per_budget);
    }
    Ok(out)
}

pub fn run_sweep(spec: &SweepSpec) -> ExpResult<SweepResult> {
    spec.validate()?;
    let mut grid = Vec::new();
    let mut skipped = Vec::new();
    for (gi, &gamma) in spec.gamma_grid.iter().enumerate() {
        if gamma == 1.0 {
            info!("skipping gamma = 1: the minimum-norm risk diverges there");
            skipped.push(gamma);
        } else {
            grid.push((gi, gamma, spec.m_for(gamma)?));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|k| (0..spec.replicates).map(move |r| (k, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(k, rep)| {
            let (gi, gamma, m) = grid[k];
            let out = run_replicate(spec, gi, rep, m);
            info!("gamma = {gamma} (m = {m}), replicate {rep} done");
            out
        })
        .collect::<ExpResult<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (k, &(_, gamma, m)) in grid.iter().enumerate() {
        let reps = &results[k * spec.replicates..(k + 1) * spec.replicates];
        for (ei, estimator) in spec.estimators.iter().enumerate() {
            for (bi, budget) in spec.budgets.iter().enumerate() {
                let overlay = if matches!(estimator, Estimator::MinNorm) {
                    overlay_for(&spec.model, m, gamma, budget)
                } else {
                    None
                };
                cells.push(SweepCell {
                    gamma,
                    m,
                    estimator: *estimator,
                    budget: *budget,
                    replicates: reps.iter().map(|r| r[ei][bi]).collect(),
                    overlay,
                });
            }
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        cells,
        skipped_gammas: skipped,
    })
}

/// The same estimator kind with regularisation `delta`.
pub fn with_delta(estimator: &Estimator, delta: f64) -> Estimator {
    match *estimator {
        Estimator::MinNorm => Estimator::MinNorm,
        Estimator::Ridge { .. } => Estimator::Ridge { delta },
        Estimator::Lasso { .. } => Estimator::Lasso { delta },
        Estimator::AdvTrain { p, .. } => Estimator::AdvTrain { delta, p },
    }
}

fn same_kind(a: &Estimator, b: &Estimator) -> bool {
    with_delta(a, 0.0) == with_delta(b, 0.0)
}

/// Every regularised estimator of `spec` refit for each `delta` in
/// `delta_grid`, evaluated under `l_inf` attacks of each grid radius, with
/// inputs scaled by `sqrt(m)`. The spec's own budgets are kept as well.
pub fn run_regularization_comparison(spec: &SweepSpec, delta_grid: &[f64]) -> ExpResult<SweepResult> {
    let required = [
        Estimator::Ridge { delta: 0.0 },
        Estimator::Lasso { delta: 0.0 },
        Estimator::AdvTrain {
            delta: 0.0,
            p: NormOrder::L2,
        },
        Estimator::AdvTrain {
            delta: 0.0,
            p: NormOrder::LINF,
        },
    ];
    for r in &required {
        if !spec.estimators.iter().any(|e| same_kind(e, r)) {
            return Err(ExpError::Invalid(format!("regularization comparison needs a {} estimator", r.label())));
        }
    }
    if delta_grid.is_empty() {
        return Err(ExpError::Invalid("delta_grid is empty".into()));
    }
    let mut full = spec.clone();
    if full.model.scaling != Scaling::SqrtM {
        info!("regularization comparison uses sqrt(m) input scaling");
        full.model.scaling = Scaling::SqrtM;
    }
    full.estimators = Vec::new();
    for e in &spec.estimators {
        if matches!(e, Estimator::MinNorm) {
            full.estimators.push(*e);
        }
    }
    for &delta in delta_grid {
        for e in spec.estimators.iter().filter(|e| !matches!(e, Estimator::MinNorm)) {
            let e = with_delta(e, delta);
            if !full.estimators.contains(&e) {
                full.estimators.push(e);
            }
        }
    }
    let mut budgets = Vec::new();
    for &delta in delta_grid {
        budgets.push(AdversarialBudget::new(delta, Exponent::INF)?);
    }
    for b in &spec.budgets {
        if !budgets.contains(b) {
            budgets.push(*b);
        }
    }
    full.budgets = budgets;
    run_sweep(&full)
}

/// Weak-features model: risk and `l_1` norm of the averaging predictor and
/// the lower bound on its `l_inf` adversarial risk, with a Monte Carlo check
/// of the risk when `mc_samples > 0`.
pub fn run_weak_features(m_grid: &[usize], delta: f64, mc_samples: usize, seed: u64) -> ExpResult<Table> {
    if m_grid.contains(&0) {
        return Err(ExpError::Invalid("m must be >= 1".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(ExpError::Invalid(format!("delta must be finite and >= 0, got {delta}")));
    }
    let zero = AdversarialBudget::new(0.0, Exponent::INF)?;
    let rows = m_grid
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let reference = weak_features_reference(m);
            let lower = reference.risk + delta * delta * reference.l1_norm * reference.l1_norm;
            let mc = if mc_samples > 0 {
                let model = DataModel::new(ModelFamily::WeakFeatures { m }, Scaling::Unit)?;
                let population = Population::draw(&model, derive_seed(seed, &[i as u64]))?;
                let est = adv_risk_monte_carlo(
                    &reference.beta,
                    &population,
                    &zero,
                    mc_samples,
                    derive_seed(seed, &[i as u64, TAG_MC]),
                )?;
                Some((est.estimate, est.std_error))
            } else {
                None
            };
            Ok(vec![
                m.to_string(),
                num(reference.risk),
                num(reference.l1_norm),
                num(lower),
                opt(mc.map(|v| v.0)),
                opt(mc.map(|v| v.1)),
            ])
        })
        .collect::<ExpResult<Vec<_>>>()?;
    let mut table = Table::new(["m", "risk", "norm_l1", "linf_lower_bound", "mc_risk", "mc_std_error"]);
    for row in rows {
        table.push(row);
    }
    let config = serde_json::json!({ "m_grid": m_grid, "delta": delta, "mc_samples": mc_samples, "seed": seed });
    Ok(table.with_meta("kind", "weak_features").with_meta("config", config.to_string()))
}
