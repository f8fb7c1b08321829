//! Command-line interface.
//!
//! Exit codes: 0 success, 1 configuration or IO error, 2 numerical failure,
//! 3 an equivalence check exceeded its tolerance.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use clusterfuse_core::complexity::{state_fusion_crossover, ComplexityParams, Method};
use clusterfuse_core::equivalence::{
    four_way, measurement_fusion_cases, state_fusion_cases, state_fusion_run, Deviation,
};
use clusterfuse_core::pipeline::{monte_carlo_rmse_variants, run_two_stage, MeasurementMethod, ScenarioConfig};

use crate::config::{self, ConfigError};
use crate::output::{Cell, Format, Table};

#[derive(Debug, Parser)]
#[command(
    name = "clusterfuse",
    version,
    about = "Two-stage sensor-cluster estimation: simulate, evaluate, check"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Scenario file; the built-in scenario when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One run: truth, local and fused estimates, covariance traces per step.
    Simulate {
        /// Monte Carlo run index whose seed is used.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Position RMSE per step over the scenario's Monte Carlo runs.
    Rmse {
        /// Comma-separated stage-one methods (smf, bmf, sk, ma); the
        /// scenario's method when omitted.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<MeasurementMethod>,
        /// Overrides the scenario's number of runs.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Largest deviations between the alternative fusion routes.
    Equivalence {
        /// Random cases for the measurement fusion check.
        #[arg(long, default_value_t = 1000)]
        measurement_cases: usize,
        /// Random joint covariances for the state fusion check.
        #[arg(long, default_value_t = 500)]
        state_cases: usize,
    },
    /// Multiplication/division counts of every method.
    Complexity {
        #[arg(long, default_value_t = 2)]
        nx: u64,
        #[arg(long, default_value_t = 1)]
        q: u64,
        /// Sensors per cluster, swept 1..=n-max for the measurement methods.
        #[arg(long, default_value_t = 10)]
        n_max: u64,
        /// Estimates fused, swept 1..=m-max for the state methods.
        #[arg(long, default_value_t = 10)]
        m_max: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("numerical failure: {0}")]
    Numeric(#[from] clusterfuse_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("equivalence violated: {0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Violation(_) => 3,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.global.config {
        Some(path) => config::load(path)?,
        None => ScenarioConfig::builtin(),
    };
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }

    let (table, violation) = match cli.command {
        Command::Simulate { run } => (simulate(&config, run)?, None),
        Command::Rmse { methods, runs } => {
            if let Some(runs) = runs {
                config.runs = runs;
            }
            let methods = if methods.is_empty() {
                vec![config.stage1]
            } else {
                methods
            };
            (rmse(&config, &methods)?, None)
        }
        Command::Equivalence {
            measurement_cases,
            state_cases,
        } => equivalence(&config, measurement_cases, state_cases)?,
        Command::Complexity { nx, q, n_max, m_max } => (complexity(nx, q, n_max, m_max)?, None),
    };

    write(&table, &cli.global)?;
    match violation {
        Some(message) => Err(CliError::Violation(message)),
        None => Ok(()),
    }
}

fn write(table: &Table, global: &Global) -> Result<(), CliError> {
    match &global.out {
        Some(path) => {
            let io_err = |source| CliError::Io {
                path: path.display().to_string(),
                source,
            };
            let file = File::create(path).map_err(io_err)?;
            let mut w = BufWriter::new(file);
            table.write(global.format, &mut w).map_err(io_err)?;
            w.flush().map_err(io_err)
        }
        None => match table.write(global.format, io::stdout().lock()) {
            // the reader went away, e.g. `| head`
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            other => other.map_err(|source| CliError::Io {
                path: "standard output".into(),
                source,
            }),
        },
    }
}

pub fn simulate(config: &ScenarioConfig, run: usize) -> Result<Table, CliError> {
    let record = run_two_stage(config, config.run_seed(run))?;
    let m = config.clusters.len();
    let mut columns = vec!["k".to_string(), "truth_pos".into(), "truth_vel".into()];
    for c in 1..=m {
        columns.extend([format!("c{c}_pos"), format!("c{c}_vel"), format!("c{c}_trace")]);
    }
    columns.extend(["fused_pos".into(), "fused_vel".into(), "fused_trace".into()]);

    let mut table = Table::new(columns);
    for step in &record.steps {
        let mut row: Vec<Cell> = vec![step.k.into(), step.truth[0].into(), step.truth[1].into()];
        for local in &step.locals {
            row.extend([local.x[0].into(), local.x[1].into(), local.p.trace().into()]);
        }
        row.extend([
            step.fused.x[0].into(),
            step.fused.x[1].into(),
            step.fused.p.trace().into(),
        ]);
        table.push(row);
    }
    Ok(table)
}

pub fn rmse(config: &ScenarioConfig, methods: &[MeasurementMethod]) -> Result<Table, CliError> {
    let report = monte_carlo_rmse_variants(config, methods)?;
    let m = config.clusters.len();
    let prefix = |method: MeasurementMethod| {
        if methods.len() > 1 {
            format!("{method}_")
        } else {
            String::new()
        }
    };
    let mut columns = vec!["k".to_string()];
    for v in &report.variants {
        let p = prefix(v.method);
        columns.extend((1..=m).map(|c| format!("{p}rmse_cluster_{c}")));
        columns.push(format!("{p}rmse_fused"));
    }
    let mut table = Table::new(columns);
    for k in 0..report.horizon {
        let mut row: Vec<Cell> = vec![(k + 1).into()];
        for v in &report.variants {
            row.extend(v.local.iter().map(|c| Cell::from(c[k])));
            row.push(v.fused[k].into());
        }
        table.push(row);
    }
    Ok(table)
}

const MEASUREMENT_TOLERANCE: f64 = 1e-10;
const ESTIMATE_TOLERANCE: f64 = 1e-8;
const WEIGHT_TOLERANCE: f64 = 1e-10;

/// Runs every check; the second value names the failed ones, if any.
pub fn equivalence(
    config: &ScenarioConfig,
    measurement_cases: usize,
    state_cases: usize,
) -> Result<(Table, Option<String>), CliError> {
    let mut table = Table::new([
        "check",
        "cases",
        "mean_deviation",
        "covariance_deviation",
        "tolerance",
        "pass",
    ]);
    let mut failed = Vec::new();
    let mut row = |name: &str, cases: usize, dev: Deviation, tol: f64| {
        let pass = dev.within(tol);
        if !pass {
            failed.push(name.to_string());
        }
        table.push(vec![
            name.into(),
            cases.into(),
            dev.mean.into(),
            dev.covariance.into(),
            tol.into(),
            pass.into(),
        ]);
    };

    let seed = config.run_seed(0);
    row(
        "smf_vs_bmf_random",
        measurement_cases,
        measurement_fusion_cases(measurement_cases, config.seed)?,
        MEASUREMENT_TOLERANCE,
    );
    for c in 0..config.clusters.len() {
        let r = four_way(config, c, seed)?;
        row(
            &format!("bmf_vs_smf_cluster_{}", c + 1),
            r.steps,
            r.bmf,
            ESTIMATE_TOLERANCE,
        );
        row(
            &format!("sk_vs_smf_cluster_{}", c + 1),
            r.steps,
            r.sk,
            ESTIMATE_TOLERANCE,
        );
        row(
            &format!("ma_vs_smf_cluster_{}", c + 1),
            r.steps,
            r.ma,
            ESTIMATE_TOLERANCE,
        );
    }
    if config.clusters.len() > 1 {
        let on_run = state_fusion_run(config, seed)?;
        let random = state_fusion_cases(state_cases, 2, config.clusters.len(), config.seed)?;
        for (name, r) in [("run", on_run), ("random", random)] {
            row(&format!("ssf_vs_bsf_{name}"), r.cases, r.deviation, ESTIMATE_TOLERANCE);
            // weight blocks summing to I, and P equal to W Omega W^T
            let weights = Deviation {
                mean: r.weight_sum_error,
                covariance: r.covariance_consistency,
            };
            row(
                &format!("ssf_self_consistency_{name}"),
                r.cases,
                weights,
                WEIGHT_TOLERANCE,
            );
        }
    }

    let violation = (!failed.is_empty()).then(|| failed.join(", "));
    Ok((table, violation))
}

pub fn complexity(nx: u64, q: u64, n_max: u64, m_max: u64) -> Result<Table, CliError> {
    let params = |n, m| {
        ComplexityParams::new(nx, q, n, m)
            .ok_or_else(|| CliError::Usage("complexity parameters must be at least 1".into()))
    };
    let mut table = Table::new(["method", "n_x", "q", "n", "m", "count"]);
    let mut push = |method: Method, p: ComplexityParams| {
        let count = method.count(&p);
        table.push(vec![
            method.short_name().into(),
            Cell::Int(p.n_x as i64),
            Cell::Int(p.q as i64),
            Cell::Int(p.n as i64),
            Cell::Int(p.m as i64),
            Cell::Text(count.to_string()),
        ]);
    };
    let measurement = [
        Method::BatchMeasurement,
        Method::SequentialMeasurement,
        Method::SequentialKalman,
        Method::MeasurementAugmentation,
    ];
    for method in measurement {
        for n in 1..=n_max {
            push(method, params(n, 1)?);
        }
    }
    for method in [Method::BatchState, Method::SequentialState] {
        for m in 1..=m_max {
            push(method, params(1, m)?);
        }
    }
    params(1, 1)?;
    match state_fusion_crossover(nx, m_max.max(1)) {
        Some(m) => eprintln!("ssf is cheaper than bsf for every m from {m} to {m_max}"),
        None => eprintln!("ssf is not cheaper than bsf at m = {m_max}"),
    }
    Ok(table)
}
