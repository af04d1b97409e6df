//! Command-line front end: `train`, `theory` and `cost-table`.
//!
//! [`run`] takes its arguments and output sinks explicitly so the exit-code
//! contract can be exercised in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::mrc::prop_bound_rational;
use crate::protocol::{
    analytic_report, render_csv, render_table, LedgerReport, Simulation, Variant, DEFAULT_COST_DIM,
    TABLE_VARIANTS,
};
use crate::theory::{run_all, ExactBound, TheoryConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "mrcfl",
    version,
    about = "Federated learning with minimal random coding in both directions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one federated experiment and write per-round metrics as CSV.
    Train(RunArgs),
    /// Run the bound checks and print the theory report.
    Theory(TheoryArgs),
    /// Print the analytic communication cost of each variant.
    CostTable(CostArgs),
}

/// Flags shared by `train` and `cost-table`; each overrides the config file.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Metrics CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `blobs` or `idx:<dir>`.
    #[arg(long)]
    dataset: Option<String>,
    /// Dirichlet concentration for non-iid shards, or `iid`.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    n_clients: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    masks_ul: Option<usize>,
    /// Downlink samples, or `auto` for n_clients * masks_ul.
    #[arg(long)]
    masks_dl: Option<String>,
    /// Prior mixing weight in [0,1], or `auto`.
    #[arg(long)]
    lambda: Option<String>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Parameter count of the costed model.
    #[arg(long, default_value_t = DEFAULT_COST_DIM)]
    dim: usize,
    /// Variants to tabulate (repeatable); defaults to the standard set.
    #[arg(long = "row")]
    rows: Vec<String>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// Comma-separated posterior values.
    #[arg(long, value_delimiter = ',')]
    q: Vec<f64>,
    /// Comma-separated prior values.
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    /// Candidate counts for the exact bound check.
    #[arg(long, value_delimiter = ',')]
    n_values: Vec<usize>,
    /// Candidate counts for the decay check.
    #[arg(long, value_delimiter = ',')]
    trend_n_values: Vec<usize>,
    /// Trials per setting of the divergence experiment.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta_prime: Option<f64>,
    /// Vector length for the contraction check.
    #[arg(long)]
    dim: Option<usize>,
    /// Quantization levels for the contraction check.
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    contraction_candidates: Option<usize>,
    #[arg(long)]
    contraction_vectors: Option<usize>,
    #[arg(long)]
    contraction_trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_ul_values: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Hooks replaceable by tests.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub error_bound: ExactBound,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            error_bound: prop_bound_rational as fn(&BigRational, &BigRational) -> BigRational,
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Io { .. } | Error::Idx { .. } => {
            EXIT_CONFIG
        }
        _ => EXIT_CHECK_FAILED,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, hooks: &Hooks) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Theory(a) => cmd_theory(&a, out, hooks),
        Command::CostTable(a) => cmd_cost_table(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code_for(&e)
        }
    }
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let flags: [(&str, Option<String>); 12] = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("variant", a.variant.clone()),
        ("rounds", a.rounds.map(|v| v.to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ("dataset", a.dataset.clone()),
        ("alpha", a.alpha.clone()),
        ("n_clients", a.n_clients.map(|v| v.to_string())),
        ("candidates", a.candidates.map(|v| v.to_string())),
        ("block_size", a.block_size.map(|v| v.to_string())),
        ("masks_ul", a.masks_ul.map(|v| v.to_string())),
        ("masks_dl", a.masks_dl.clone()),
        ("lambda", a.lambda.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = build_config(a)?;
    let mut sim = Simulation::new(&cfg)?;
    let rows = sim.run(cfg.rounds)?;
    let csv = render_csv(&rows);
    let report = sim.ledger().report();
    let max_acc = rows
        .iter()
        .map(|r| r.accuracy)
        .filter(|a| a.is_finite())
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    let summary = summary_line(&cfg, max_acc, &report);
    let io = |e: std::io::Error, path: PathBuf| Error::Io { path, source: e };
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| io(e, path.clone()))?;
            writeln!(out, "{summary}").map_err(|e| io(e, "<stdout>".into()))?;
        }
        None => {
            out.write_all(csv.as_bytes())
                .map_err(|e| io(e, "<stdout>".into()))?;
            writeln!(err, "{summary}").map_err(|e| io(e, "<stderr>".into()))?;
        }
    }
    Ok(EXIT_OK)
}

fn summary_line(cfg: &ExperimentConfig, max_acc: Option<f64>, r: &LedgerReport) -> String {
    let [total, bc, up, down] = r.as_f64();
    let acc = max_acc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    format!(
        "summary variant={} rounds={} seed={} max_accuracy={acc} bpp_total={total:.6} bpp_broadcast={bc:.6} bpp_uplink={up:.6} bpp_downlink={down:.6} bpp_setup={:.6}",
        cfg.round.variant,
        cfg.rounds,
        cfg.seed,
        crate::protocol::ratio_to_f64(r.bpp_setup)
    )
}

fn cmd_cost_table(a: &CostArgs, out: &mut dyn Write) -> Result<i32> {
    let base = build_config(&a.run)?;
    let variants: Vec<Variant> = if a.rows.is_empty() {
        TABLE_VARIANTS.to_vec()
    } else {
        a.rows.iter().map(|r| r.parse()).collect::<Result<_>>()?
    };
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut cfg = base.round.clone();
        cfg.variant = v;
        if !v.is_private() {
            cfg.lambda = crate::protocol::LambdaMixing::Fixed(1.0);
        }
        rows.push((v.name().to_string(), analytic_report(&cfg, a.dim)?));
    }
    out.write_all(render_table(&rows).as_bytes())
        .map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })?;
    Ok(EXIT_OK)
}

fn cmd_theory(a: &TheoryArgs, out: &mut dyn Write, hooks: &Hooks) -> Result<i32> {
    let mut cfg = TheoryConfig {
        seed: a.seed,
        ..Default::default()
    };
    let g = &mut cfg.grid;
    if !a.q.is_empty() {
        g.q_values = a.q.clone();
    }
    if !a.p.is_empty() {
        g.p_values = a.p.clone();
    }
    if !a.n_values.is_empty() {
        g.n_values = a.n_values.clone();
    }
    if !a.trend_n_values.is_empty() {
        g.trend_n_values = a.trend_n_values.clone();
    }
    if let Some(t) = a.trials {
        g.trials = t;
    }
    if let Some(z) = a.zeta {
        g.zeta = z;
    }
    if let Some(e) = a.epsilon {
        g.epsilon_ball = e;
    }
    if let Some(d) = a.delta_prime {
        g.delta_prime = d;
    }
    let c = &mut cfg.contraction;
    if let Some(d) = a.dim {
        c.dim = d;
    }
    if let Some(s) = a.levels {
        c.levels = s;
    }
    if let Some(n) = a.contraction_candidates {
        c.candidates = n;
    }
    if let Some(v) = a.contraction_vectors {
        c.vectors = v;
    }
    if let Some(t) = a.contraction_trials {
        c.trials = t;
    }
    if !a.n_ul_values.is_empty() {
        cfg.averaging.n_ul_values = a.n_ul_values.clone();
    }
    let report = run_all(&cfg, hooks.error_bound)?;
    write!(out, "{report}").map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    })?;
    Ok(if report.failed() {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    })
}
