//! Built-in experiment definitions behind `advreg figure <id>`, and the
//! writer for their CSV tables and `manifest.json`.

use std::path::{Path, PathBuf};

use advreg_core::norm_geometry::{Exponent, NormOrder};
use advreg_core::{AdversarialBudget, DataModel, Estimator, ModelFamily, Scaling};
use serde::{Deserialize, Serialize};

use crate::concentration_lab::{estimate_conjecture_c, series_table};
use crate::error::{ExpError, ExpResult};
use crate::risk_experiments::{run_regularization_comparison, run_sweep, SweepSpec};
use crate::stats::QuantileSeries;
use crate::table::{num, Table};

pub const FIGURE_IDS: [&str; 16] = [
    "fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9",
];

pub const DEFAULT_SEED: u64 = 1;

/// Regularisation strengths of the norm-versus-`gamma` comparison.
pub const REGULARIZATION_DELTAS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

const ISOTROPIC_GRID: [f64; 13] = [0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.2, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0];
const LATENT_GRID: [f64; 12] = [0.3, 0.5, 0.7, 0.9, 1.2, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0];
const REGULARIZATION_GRID: [f64; 5] = [0.5, 2.0, 4.0, 6.0, 8.0];
const LATENT_D: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Panel {
    /// One sweep; with `split_by_budget` each budget gets its own file
    /// `<name>_<p>_delta<delta>.csv`, otherwise everything goes to `<name>.csv`.
    Sweep {
        name: String,
        spec: SweepSpec,
        split_by_budget: bool,
    },
    /// Regularised fits for each delta, one file `<name>_delta<delta>.csv`
    /// per delta holding the `l_inf` attack of that same radius.
    Regularization {
        name: String,
        spec: SweepSpec,
        delta_grid: Vec<f64>,
    },
    /// Norms of a fixed unit vector under random projections:
    /// `<name>_l2.csv` and `<name>_l1.csv`.
    Projection {
        name: String,
        m: usize,
        n_grid: Vec<usize>,
        replicates: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub mc_samples: Option<usize>,
}

impl Panel {
    pub fn name(&self) -> &str {
        match self {
            Panel::Sweep { name, .. } | Panel::Regularization { name, .. } | Panel::Projection { name, .. } => name,
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        match self {
            Panel::Sweep { spec, .. } | Panel::Regularization { spec, .. } => {
                if let Some(s) = o.seed {
                    spec.seed = s;
                }
                if let Some(r) = o.replicates {
                    spec.replicates = r;
                }
                if let Some(mc) = o.mc_samples {
                    spec.mc_samples = mc;
                }
            }
            Panel::Projection { replicates, seed, .. } => {
                if let Some(s) = o.seed {
                    *seed = s;
                }
                if let Some(r) = o.replicates {
                    *replicates = r;
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("panel serializes")
    }

    /// Runs the panel and returns its tables keyed by file name. Every table
    /// records the panel itself as its `config`.
    pub fn run(&self) -> ExpResult<Vec<(String, Table)>> {
        let mut out = match self {
            Panel::Sweep {
                name,
                spec,
                split_by_budget,
            } => {
                let res = run_sweep(spec)?;
                if *split_by_budget {
                    spec.budgets
                        .iter()
                        .map(|b| {
                            let file = format!("{name}_{}_delta{}.csv", b.p, num(b.delta));
                            (file, res.to_table_filtered(|c| c.budget == *b))
                        })
                        .collect()
                } else {
                    vec![(format!("{name}.csv"), res.to_table())]
                }
            }
            Panel::Regularization { name, spec, delta_grid } => {
                let res = run_regularization_comparison(spec, delta_grid)?;
                delta_grid
                    .iter()
                    .map(|&d| {
                        let t = res.to_table_filtered(|c| {
                            c.budget.delta == d
                                && c.budget.p == NormOrder::LINF
                                && (matches!(c.estimator, Estimator::MinNorm) || c.estimator.delta() == d)
                        });
                        (format!("{name}_delta{}.csv", num(d)), t)
                    })
                    .collect()
            }
            Panel::Projection {
                name,
                m,
                n_grid,
                replicates,
                seed,
            } => {
                let est = estimate_conjecture_c(*m, n_grid, *replicates, *seed)?;
                let mf = *m as f64;
                let l2 = series_table(&est.l2_series, Some(("reference", &|n: f64| (n / mf).sqrt())));
                let l1_abs = scale_by_sqrt_x(&est.series);
                let l1 = series_table(&l1_abs, Some(("reference", &|n: f64| 0.8 * n.sqrt())))
                    .with_meta("c_hat", num(est.c_hat));
                vec![(format!("{name}_l2.csv"), l2), (format!("{name}_l1.csv"), l1)]
            }
        };
        for (_, t) in &mut out {
            t.set_meta("panel", self.name());
            t.set_meta("config", self.to_json());
        }
        Ok(out)
    }
}

/// `|Phi beta|_1` from the ratio `|Phi beta|_1 / sqrt(n)`.
fn scale_by_sqrt_x(s: &QuantileSeries) -> QuantileSeries {
    let f = |v: &Vec<f64>| -> Vec<f64> { v.iter().zip(&s.x_values).map(|(a, x)| a * x.sqrt()).collect() };
    QuantileSeries {
        x_values: s.x_values.clone(),
        median: f(&s.median),
        q25: f(&s.q25),
        q75: f(&s.q75),
        mean: f(&s.mean),
        replicates: s.replicates,
        seed: s.seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigurePlan {
    pub id: String,
    pub panels: Vec<Panel>,
}

impl FigurePlan {
    pub fn apply(&mut self, o: &Overrides) {
        for p in &mut self.panels {
            p.apply(o);
        }
    }

    pub fn run(&self) -> ExpResult<Vec<(String, Table)>> {
        let mut out = Vec::new();
        for p in &self.panels {
            for (file, mut t) in p.run()? {
                t.set_meta("figure", self.id.clone());
                // Keep `figure` first for readers skimming the header.
                t.meta.rotate_right(1);
                out.push((file, t));
            }
        }
        Ok(out)
    }
}

fn budgets(pairs: &[(f64, Exponent)]) -> Vec<AdversarialBudget> {
    pairs
        .iter()
        .map(|&(d, p)| AdversarialBudget::new(d, p).expect("built-in budgets are valid"))
        .collect()
}

fn isotropic(r2: f64, sigma2: f64, scaling: Scaling) -> DataModel {
    DataModel::isotropic(1, r2, sigma2).with_scaling(scaling)
}

fn equicorrelated(r2: f64, scaling: Scaling) -> DataModel {
    DataModel {
        variant: ModelFamily::Equicorrelated {
            m: 1,
            rho: 0.5,
            r2,
            sigma2: 1.0,
        },
        scaling,
    }
}

/// Latent-space model with `d = 20` and `theta = 1 / sqrt(d)`, so `|theta|_2 = 1`.
fn latent(sigma_xi2: f64, scaling: Scaling) -> DataModel {
    DataModel {
        variant: ModelFamily::Latent {
            m: LATENT_D,
            d: LATENT_D,
            theta: vec![1.0 / (LATENT_D as f64).sqrt(); LATENT_D],
            sigma_xi2,
        },
        scaling,
    }
}

fn scaling_tag(s: Scaling) -> &'static str {
    match s {
        Scaling::Unit => "unit",
        Scaling::SqrtLog => "sqrt_log",
        Scaling::SqrtM => "sqrt_m",
    }
}

fn sweep(
    name: String,
    model: DataModel,
    n: usize,
    grid: &[f64],
    budgets: Vec<AdversarialBudget>,
    replicates: usize,
    split_by_budget: bool,
) -> Panel {
    Panel::Sweep {
        name,
        spec: SweepSpec {
            model,
            n,
            gamma_grid: grid.to_vec(),
            estimators: vec![Estimator::MinNorm],
            budgets,
            replicates,
            seed: DEFAULT_SEED,
            mc_samples: 0,
            solver: SweepSpec::default_solver(),
        },
        split_by_budget,
    }
}

fn regularization(name: &str, model: DataModel, replicates: usize, delta_grid: &[f64], with_min_norm: bool) -> Panel {
    let mut estimators = vec![];
    if with_min_norm {
        estimators.push(Estimator::MinNorm);
    }
    estimators.extend([
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
    ]);
    Panel::Regularization {
        name: name.into(),
        spec: SweepSpec {
            model,
            n: 100,
            gamma_grid: REGULARIZATION_GRID.to_vec(),
            estimators,
            budgets: vec![],
            replicates,
            seed: DEFAULT_SEED,
            mc_samples: 0,
            solver: SweepSpec::default_solver(),
        },
        delta_grid: delta_grid.to_vec(),
    }
}

const SCALINGS: [Scaling; 3] = [Scaling::Unit, Scaling::SqrtLog, Scaling::SqrtM];
const GROWING_SCALINGS: [Scaling; 2] = [Scaling::SqrtM, Scaling::SqrtLog];

pub fn figure_plan(id: &str) -> ExpResult<FigurePlan> {
    use Exponent::Infinite as INF;
    let l2 = Exponent::TWO;
    let l1 = Exponent::ONE;
    let panels = match id {
        "fig1" => vec![sweep(
            "fig1".into(),
            latent(0.1, Scaling::SqrtM),
            200,
            &LATENT_GRID,
            budgets(&[(0.1, l2), (0.1, INF)]),
            6,
            false,
        )],
        "fig2" => vec![sweep(
            "fig2".into(),
            isotropic(2.0, 1.0, Scaling::Unit),
            300,
            &ISOTROPIC_GRID,
            budgets(&[(0.0, l2), (1.0, l2), (2.0, l2)]),
            10,
            true,
        )],
        "fig3" => vec![sweep(
            "fig3".into(),
            isotropic(1.0, 1.0, Scaling::Unit),
            100,
            &ISOTROPIC_GRID,
            budgets(&[(2.0, l1), (2.0, l2), (2.0, INF)]),
            10,
            true,
        )],
        "fig4" => vec![Panel::Projection {
            name: "fig4".into(),
            m: 2000,
            n_grid: (1..=10).map(|k| 100 * k).collect(),
            replicates: 100,
            seed: DEFAULT_SEED,
        }],
        "fig5" => GROWING_SCALINGS
            .iter()
            .map(|&s| {
                sweep(
                    format!("fig5_{}", scaling_tag(s)),
                    isotropic(1.0, 1.0, s),
                    100,
                    &ISOTROPIC_GRID,
                    budgets(&[(0.1, INF)]),
                    10,
                    false,
                )
            })
            .collect(),
        "fig6" | "s6" => GROWING_SCALINGS
            .iter()
            .map(|&s| {
                sweep(
                    format!("{id}_{}", scaling_tag(s)),
                    latent(0.1, s),
                    200,
                    &LATENT_GRID,
                    budgets(&[(0.1, l2), (0.1, INF)]),
                    10,
                    false,
                )
            })
            .collect(),
        "fig7" => vec![regularization("fig7", latent(0.1, Scaling::SqrtM), 6, &REGULARIZATION_DELTAS, false)],
        "fig8" => vec![regularization("fig8", latent(0.1, Scaling::SqrtM), 6, &[0.01], true)],
        "s2" => {
            let mut panels = Vec::new();
            for r2 in [0.5, 1.0, 2.0] {
                for s in SCALINGS {
                    panels.push(sweep(
                        format!("s2_r2_{}_{}", num(r2), scaling_tag(s)),
                        isotropic(r2, 1.0, s),
                        300,
                        &ISOTROPIC_GRID,
                        budgets(&[(0.0, l2), (1.0, l2), (2.0, l2)]),
                        10,
                        false,
                    ));
                }
            }
            // Prediction risk also at r2 = 4.
            panels.push(sweep(
                "s2_r2_4_unit".into(),
                isotropic(4.0, 1.0, Scaling::Unit),
                300,
                &ISOTROPIC_GRID,
                budgets(&[(0.0, l2)]),
                10,
                false,
            ));
            panels
        }
        "s3" | "s4" => SCALINGS
            .iter()
            .map(|&s| {
                let b = if id == "s3" {
                    budgets(&[(0.0, l2), (1.0, l2), (2.0, l2)])
                } else {
                    budgets(&[(2.0, l1), (2.0, l2), (2.0, INF)])
                };
                sweep(
                    format!("{id}_{}", scaling_tag(s)),
                    equicorrelated(4.0, s),
                    300,
                    &ISOTROPIC_GRID,
                    b,
                    10,
                    false,
                )
            })
            .collect(),
        "s5" => GROWING_SCALINGS
            .iter()
            .map(|&s| {
                sweep(
                    format!("s5_{}", scaling_tag(s)),
                    equicorrelated(1.0, s),
                    100,
                    &ISOTROPIC_GRID,
                    budgets(&[(0.1, INF)]),
                    10,
                    false,
                )
            })
            .collect(),
        "s7" => {
            let mut panels = Vec::new();
            for sxi2 in [0.01, 0.1, 1.0] {
                for s in GROWING_SCALINGS {
                    panels.push(sweep(
                        format!("s7_sxi2_{}_{}", num(sxi2), scaling_tag(s)),
                        latent(sxi2, s),
                        200,
                        &LATENT_GRID,
                        budgets(&[(0.1, l2), (0.1, INF)]),
                        10,
                        false,
                    ));
                }
            }
            panels
        }
        "s8" => GROWING_SCALINGS
            .iter()
            .map(|&s| {
                let mut pairs = Vec::new();
                for d in [0.0, 0.01, 0.1, 1.0] {
                    pairs.push((d, l2));
                    pairs.push((d, INF));
                }
                sweep(
                    format!("s8_{}", scaling_tag(s)),
                    latent(0.1, s),
                    200,
                    &LATENT_GRID,
                    budgets(&pairs),
                    10,
                    false,
                )
            })
            .collect(),
        "s9" => vec![regularization(
            "s9",
            isotropic(1.0, 1.0, Scaling::SqrtM),
            4,
            &REGULARIZATION_DELTAS,
            true,
        )],
        other => return Err(ExpError::UnknownFigure(other.to_string())),
    };
    Ok(FigurePlan { id: id.to_string(), panels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub panel: String,
    pub rows: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub figure: String,
    pub files: Vec<ManifestEntry>,
    pub config: serde_json::Value,
}

/// Writes each table to `dir` (created if needed) plus `manifest.json`.
pub fn write_outputs(
    dir: &Path,
    figure: &str,
    tables: &[(String, Table)],
    config: serde_json::Value,
) -> ExpResult<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))?;
    let mut files = Vec::with_capacity(tables.len());
    for (file, table) in tables {
        table.write(&dir.join(file))?;
        files.push(ManifestEntry {
            file: file.clone(),
            panel: table.meta("panel").unwrap_or(figure).to_string(),
            rows: table.rows.len(),
            columns: table.columns.clone(),
        });
    }
    let manifest = Manifest {
        figure: figure.to_string(),
        files,
        config,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| ExpError::io(&path, e))?;
    Ok(manifest)
}

/// Runs a built-in figure and writes it to `<out_dir>/<id>/`.
pub fn run_figure(id: &str, out_dir: &Path, overrides: &Overrides) -> ExpResult<(PathBuf, Manifest)> {
    let mut plan = figure_plan(id)?;
    plan.apply(overrides);
    let tables = plan.run()?;
    let dir = out_dir.join(id);
    let manifest = write_outputs(&dir, id, &tables, serde_json::to_value(&plan)?)?;
    Ok((dir, manifest))
}
