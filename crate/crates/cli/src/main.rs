//! `advreg`: run figures, sweeps, single fits, asymptotic curves and the
//! concentration experiments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advreg_core::adversarial_risk::{risk_bounds, RiskReport};
use advreg_core::asymptotics::{equicorrelated_asymptotics, isotropic_asymptotics, latent_asymptotics};
use advreg_core::estimators::{fit, FittedModel, SolverOptions};
use advreg_core::{AdversarialBudget, DataModel, Estimator, Exponent, ModelFamily, NormOrder, Population, Scaling};
use advreg_experiments::concentration_lab::{
    calibrate_spectrum_constants, estimate_conjecture_c, input_norm_scaling, series_table, spectrum_series,
    theorem1_trace, SpectrumConstants,
};
use advreg_experiments::figure_plans::{run_figure, Overrides};
use advreg_experiments::risk_experiments::{run_sweep, run_weak_features, SweepSpec};
use advreg_experiments::table::num;
use advreg_experiments::{with_threads, ExpError, Table};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

#[derive(Parser, Debug)]
#[command(name = "advreg", version, about = "Adversarial risk of linear regression")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Base seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo samples per cell; overrides the config value.
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    /// Replicates per cell; overrides the config value.
    #[arg(long, global = true)]
    replicates: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the built-in plan for a figure (fig1..fig8, s2..s9).
    Figure { id: String },
    /// Run a sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit one estimator and print the result as JSON.
    Fit(FitArgs),
    /// Evaluate limiting risk and norm curves on a gamma grid.
    Asymptote(AsymptoteArgs),
    /// Concentration experiments.
    Lab {
        #[command(subcommand)]
        experiment: LabCommand,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EstimatorKind {
    Minnorm,
    Ridge,
    Lasso,
    Advtrain,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Isotropic,
    Equicorrelated,
    Latent,
    Weak,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ScalingArg {
    Unit,
    SqrtLog,
    SqrtM,
}

impl From<ScalingArg> for Scaling {
    fn from(s: ScalingArg) -> Scaling {
        match s {
            ScalingArg::Unit => Scaling::Unit,
            ScalingArg::SqrtLog => Scaling::SqrtLog,
            ScalingArg::SqrtM => Scaling::SqrtM,
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "isotropic")]
    model: ModelKind,
    /// Number of features.
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    r2: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Latent dimension.
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma_xi2: f64,
    #[arg(long, value_enum, default_value = "unit")]
    scaling: ScalingArg,
}

impl ModelArgs {
    fn build(&self) -> Result<DataModel, Failure> {
        let variant = match self.model {
            ModelKind::Isotropic => ModelFamily::Isotropic {
                m: self.m,
                r2: self.r2,
                sigma2: self.sigma2,
            },
            ModelKind::Equicorrelated => ModelFamily::Equicorrelated {
                m: self.m,
                rho: self.rho,
                r2: self.r2,
                sigma2: self.sigma2,
            },
            ModelKind::Latent => ModelFamily::Latent {
                m: self.m,
                d: self.d,
                theta: vec![1.0 / (self.d.max(1) as f64).sqrt(); self.d],
                sigma_xi2: self.sigma_xi2,
            },
            ModelKind::Weak => ModelFamily::WeakFeatures { m: self.m },
        };
        Ok(DataModel::new(variant, self.scaling.into())?)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, value_enum, default_value = "minnorm")]
    estimator: EstimatorKind,
    /// Norm order of adversarial training (1, 2, inf, ...).
    #[arg(long, default_value = "2")]
    p: String,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Fixture CSV with feature columns and a final `y` column; replaces sampling.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON data model; replaces the model flags.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Training samples.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Attack radius for the report (default: --delta).
    #[arg(long)]
    attack_delta: Option<f64>,
}

#[derive(Args, Debug)]
struct AsymptoteArgs {
    #[arg(long, value_enum, default_value = "isotropic")]
    model: ModelKind,
    #[arg(long, default_value_t = 1.0)]
    r2: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Latent ratio d / m.
    #[arg(long, default_value_t = 0.1)]
    psi: f64,
    /// Comma-separated gamma grid.
    #[arg(long, value_delimiter = ',', required = true)]
    gamma: Vec<f64>,
    /// Adds l2-attack bound columns for this radius.
    #[arg(long)]
    delta: Option<f64>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum LabCommand {
    /// Norms of a random projection of a fixed unit vector.
    Projection {
        #[arg(long, default_value_t = 2000)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500,600,700,800,900,1000")]
        n: Vec<usize>,
    },
    /// Extreme eigenvalues of the sample-covariance pseudo-inverse.
    Spectrum {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        ratio: Vec<f64>,
    },
    /// Recalibrate the spectrum constants.
    Calibrate {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 4.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0.99)]
        coverage: f64,
    },
    /// Min-norm parameter norms against m.
    Norms {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "200,400,800,1600,3200")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Input norms of Gaussian vectors against m.
    Inputs {
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
        m: Vec<usize>,
    },
    /// Weak-features model with an l-inf attack.
    Weak {
        #[arg(long, value_delimiter = ',', default_value = "10,30,100,300,1000")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

/// Exit status 1 for usage errors, 2 for numeric or solver failures.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Numeric(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<ExpError> for Failure {
    fn from(e: ExpError) -> Failure {
        match &e {
            ExpError::Io { .. } => Failure::Usage(e.to_string()),
            _ if e.is_usage() => Failure::Usage(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<advreg_core::Error> for Failure {
    fn from(e: advreg_core::Error) -> Failure {
        ExpError::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn write_table(table: &Table, path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    table.write(path)?;
    println!("{}", path.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| usage(format!("{}: at '{}': {}", path.display(), e.path(), e.inner())))
}

fn config_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("configs serialize")
}

fn cmd_figure(id: &str, common: &Common) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: common.seed,
        replicates: common.replicates,
        mc_samples: common.mc_samples,
    };
    let (dir, manifest) = run_figure(id, &common.out, &overrides)?;
    for f in &manifest.files {
        println!("{}", dir.join(&f.file).display());
    }
    println!("{}", dir.join("manifest.json").display());
    Ok(())
}

fn cmd_sweep(config: &Path, common: &Common) -> Result<(), Failure> {
    let mut spec: SweepSpec = read_json(config)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(r) = common.replicates {
        spec.replicates = r;
    }
    if let Some(k) = common.mc_samples {
        spec.mc_samples = k;
    }
    let result = run_sweep(&spec)?;
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    write_table(&result.to_table(), &common.out.join(format!("{stem}.csv")))
}

/// Feature columns followed by a `y` column, in the shared CSV dialect.
fn read_fixture(path: &Path) -> Result<(DMatrix<f64>, DVector<f64>), Failure> {
    let table = Table::read(path)?;
    if table.columns.last().map(String::as_str) != Some("y") || table.columns.len() < 2 {
        return Err(usage(format!("{}: the last column must be 'y' after at least one feature", path.display())));
    }
    let n = table.rows.len();
    let m = table.columns.len() - 1;
    let mut values = Vec::with_capacity(n * (m + 1));
    for (i, row) in table.rows.iter().enumerate() {
        for field in row {
            values.push(field.parse::<f64>().map_err(|_| usage(format!("row {}: '{field}' is not a number", i + 1)))?);
        }
    }
    let all = DMatrix::from_row_slice(n, m + 1, &values);
    Ok((all.columns(0, m).into_owned(), all.column(m).into_owned()))
}

fn cmd_fit(args: &FitArgs, common: &Common) -> Result<(), Failure> {
    let p: Exponent = args.p.parse()?;
    let estimator = match args.estimator {
        EstimatorKind::Minnorm => Estimator::MinNorm,
        EstimatorKind::Ridge => Estimator::Ridge { delta: args.delta },
        EstimatorKind::Lasso => Estimator::Lasso { delta: args.delta },
        EstimatorKind::Advtrain => Estimator::AdvTrain {
            delta: args.delta,
            p: NormOrder::new(p)?,
        },
    };
    let seed = common.seed.unwrap_or(0);
    let (x, y, truth) = match &args.data {
        Some(path) => {
            let (x, y) = read_fixture(path)?;
            (x, y, None)
        }
        None => {
            let model: DataModel = match &args.model_config {
                Some(path) => read_json(path)?,
                None => args.model.build()?,
            };
            let pop = Population::draw(&model, seed)?;
            let data = pop.dataset(args.n, seed.wrapping_add(1))?;
            (data.x, data.y, Some(data.truth))
        }
    };
    let options = SolverOptions {
        seed,
        ..SolverOptions::default()
    };
    let (fitted, failure) = match fit(&x, &y, &estimator, &options) {
        Ok(f) => (f, None),
        Err(advreg_core::Error::NotConverged { best, .. }) => {
            let msg = best.diagnostics.warning.clone().unwrap_or_else(|| "solver did not converge".into());
            (*best, Some(Failure::Numeric(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    let report = match &truth {
        Some(t) => {
            let delta = args.attack_delta.unwrap_or(args.delta);
            let budgets = [
                AdversarialBudget::new(delta, Exponent::TWO)?,
                AdversarialBudget::new(delta, Exponent::INF)?,
            ];
            Some(RiskReport::evaluate(&fitted.beta_hat, t, &budgets)?)
        }
        None => None,
    };
    print_fit(&fitted, report.as_ref());
    failure.map_or(Ok(()), Err)
}

fn print_fit(fitted: &FittedModel, report: Option<&RiskReport>) {
    let out = serde_json::json!({
        "estimator": fitted.estimator,
        "beta_hat": fitted.beta_hat.as_slice(),
        "diagnostics": fitted.diagnostics,
        "report": report,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("fit output serializes"));
}

fn cmd_asymptote(args: &AsymptoteArgs) -> Result<(), Failure> {
    let mut columns = vec!["gamma", "regime", "risk", "excess_risk", "l2norm_sq"];
    if args.delta.is_some() {
        columns.extend(["adv_lower_l2", "adv_upper_l2"]);
    }
    let config = serde_json::json!({
        "model": format!("{:?}", args.model).to_lowercase(),
        "r2": args.r2,
        "sigma2": args.sigma2,
        "rho": args.rho,
        "psi": args.psi,
        "gamma": args.gamma,
        "delta": args.delta,
    });
    let mut table = Table::new(columns).with_meta("kind", "asymptote").with_meta("config", config.to_string());
    for &gamma in &args.gamma {
        let point = match args.model {
            ModelKind::Isotropic => isotropic_asymptotics(gamma, args.r2, args.sigma2)?,
            ModelKind::Equicorrelated => equicorrelated_asymptotics(gamma, args.rho, args.r2, args.sigma2)?,
            ModelKind::Latent => latent_asymptotics(args.psi, gamma, args.r2, args.sigma2)?.0,
            ModelKind::Weak => return Err(usage("no limiting curve for the weak-features model")),
        };
        let regime = serde_json::to_value(point.regime).expect("regime serializes");
        let mut row = vec![
            num(gamma),
            regime.as_str().unwrap_or_default().to_lowercase(),
            num(point.risk),
            num(point.excess_risk),
            num(point.l2norm_sq),
        ];
        if let Some(delta) = args.delta {
            let (lo, hi) = risk_bounds(point.risk, point.l2norm_sq, delta)?;
            row.extend([num(lo), num(hi)]);
        }
        table.push(row);
    }
    match &args.file {
        Some(path) => write_table(&table, path),
        None => {
            print!("{}", table.to_csv_string()?);
            Ok(())
        }
    }
}

fn cmd_lab(experiment: &LabCommand, common: &Common) -> Result<(), Failure> {
    let seed = common.seed.unwrap_or(1);
    let reps = common.replicates;
    let dir = common.out.join("lab");
    let config = |extra: serde_json::Value| -> String {
        let mut v = extra;
        v["seed"] = seed.into();
        config_json(&v)
    };
    match experiment {
        LabCommand::Projection { m, n } => {
            let reps = reps.unwrap_or(100);
            let est = estimate_conjecture_c(*m, n, reps, seed)?;
            let cfg = config(serde_json::json!({"experiment": "projection", "m": m, "n": n, "replicates": reps}));
            let mf = *m as f64;
            let mut l2 = series_table(&est.l2_series, Some(("sqrt_n_over_m", &|x: f64| (x / mf).sqrt())));
            l2.set_meta("config", cfg.clone());
            write_table(&l2, &dir.join("projection_l2.csv"))?;
            let mut l1 = series_table(&est.series, None);
            l1.set_meta("c_hat", num(est.c_hat));
            l1.set_meta("config", cfg);
            write_table(&l1, &dir.join("projection_l1_over_sqrt_n.csv"))?;
            println!("c_hat = {}", est.c_hat);
        }
        LabCommand::Spectrum { n, ratio } => {
            let reps = reps.unwrap_or(100);
            let constants = SpectrumConstants::frozen();
            let (lo, hi, reports) = spectrum_series(*n, ratio, reps, seed, &constants)?;
            let cfg = config(serde_json::json!({"experiment": "spectrum", "n": n, "ratio": ratio, "replicates": reps}));
            let mut t_lo = series_table(&lo, Some(("lower_bound", &|r: f64| constants.bounds(r).0)));
            t_lo.set_meta("config", cfg.clone());
            write_table(&t_lo, &dir.join("spectrum_min.csv"))?;
            let mut t_hi = series_table(&hi, Some(("upper_bound", &|r: f64| constants.bounds(r).1)));
            t_hi.set_meta("config", cfg);
            write_table(&t_hi, &dir.join("spectrum_max.csv"))?;
            for r in &reports {
                log::info!("m = {}, n = {}: coverage {}", r.m, r.n, r.coverage());
            }
        }
        LabCommand::Calibrate { n, ratio, coverage } => {
            let reps = reps.unwrap_or(1000);
            let c = calibrate_spectrum_constants(*n, *ratio, reps, *coverage, seed)?;
            println!("{}", serde_json::to_string_pretty(&c).expect("constants serialize"));
        }
        LabCommand::Norms { n, m, r, sigma } => {
            let reps = reps.unwrap_or(20);
            let t = theorem1_trace(*n, m, *r, *sigma, reps, seed)?;
            let cfg = config(serde_json::json!({
                "experiment": "norms", "n": n, "m": m, "r": r, "sigma": sigma, "replicates": reps
            }));
            for (name, series) in [("norms_l2", &t.l2), ("norms_l1_over_l2", &t.l1_over_l2), ("norms_phi_beta_l2", &t.phi_beta_l2)] {
                let mut table = series_table(series, None);
                table.set_meta("config", cfg.clone());
                write_table(&table, &dir.join(format!("{name}.csv")))?;
            }
            if t.bound_violations > 0 {
                return Err(Failure::Numeric(format!(
                    "{} of {} replicates violate the perturbation bound",
                    t.bound_violations, t.bound_checks
                )));
            }
        }
        LabCommand::Inputs { m } => {
            let reps = reps.unwrap_or(20);
            let (l2sq, linf) = input_norm_scaling(m, reps, seed)?;
            let cfg = config(serde_json::json!({"experiment": "inputs", "m": m, "replicates": reps}));
            let mut a = series_table(&l2sq, Some(("m", &|x: f64| x)));
            a.set_meta("config", cfg.clone());
            write_table(&a, &dir.join("inputs_l2sq.csv"))?;
            let mut b = series_table(&linf, Some(("sqrt_2_log_m", &|x: f64| (2.0 * x.ln()).sqrt())));
            b.set_meta("config", cfg);
            write_table(&b, &dir.join("inputs_linf.csv"))?;
        }
        LabCommand::Weak { m, delta } => {
            let samples = common.mc_samples.unwrap_or(0);
            let mut table = run_weak_features(m, *delta, samples, seed)?;
            table.set_meta(
                "config",
                config(serde_json::json!({"experiment": "weak", "m": m, "delta": delta, "mc_samples": samples})),
            );
            write_table(&table, &dir.join("weak_features.csv"))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.common.clone();
    let command = cli.command;
    let outcome = with_threads(common.threads, move || match &command {
        Command::Figure { id } => cmd_figure(id, &common),
        Command::Sweep { config } => cmd_sweep(config, &common),
        Command::Fit(args) => cmd_fit(args, &common),
        Command::Asymptote(args) => cmd_asymptote(args),
        Command::Lab { experiment } => cmd_lab(experiment, &common),
    });
    outcome.map_err(Failure::from)?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(match f {
                Failure::Usage(_) => 1,
                Failure::Numeric(_) => 2,
            })
        }
    }
}
