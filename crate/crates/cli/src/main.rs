//! `stocontract`: certify, bound and simulate built-in stochastic systems.
//!
//! stdout carries data only (JSON or CSV). Diagnostics and error JSON go to
//! stderr. Exit codes: 0 ok, 2 bad input, 3 numerical failure, 4 a bound
//! was violated.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stocontract_core::bounds::{
    apply_noisefree_corollary, continuous_bound, discrete_distance_bound, discrete_ms_bound, hybrid_bound, BoundReport,
};
use stocontract_core::cpg::{self, CpgExperiment};
use stocontract_core::experiment::{CertifyOutput, ExperimentConfig};
use stocontract_core::simulate::PairingMode;
use stocontract_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_VIOLATION: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "stocontract", version, about = "Stochastic contraction certificates, bounds and simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate contraction rates and noise bounds of a system.
    Certify(ConfigArgs),
    /// Evaluate a closed-form mean-square bound.
    Bounds(BoundsArgs),
    /// Simulate trajectory pairs and compare with the certified bound.
    Simulate(ConfigArgs),
    /// Run the coupled-oscillator experiment.
    Cpg(CpgArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in system, used when no config is given.
    #[arg(long, default_value = "ou1d")]
    system: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectory pairs (or runs).
    #[arg(long)]
    ensemble: Option<usize>,
    /// SDE step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Output directory; data goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare a noisy trajectory with a noise-free one.
    #[arg(long)]
    noise_free: bool,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundKind {
    Discrete,
    DiscreteDistance,
    Continuous,
    Hybrid,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Certificate JSON written by `certify`; replaces the raw constants.
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// Bound family; inferred from the certificate when one is given.
    #[arg(long, value_enum)]
    kind: Option<BoundKind>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    c_d: Option<f64>,
    #[arg(long)]
    c_c: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Initial mean-square distance (mean distance for discrete-distance).
    #[arg(long, default_value_t = 0.0)]
    e0: f64,
    #[arg(long)]
    noise_free: bool,
    /// Emit the full report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CpgArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    sigma_c: Option<f64>,
    #[arg(long)]
    sigma_d: Option<f64>,
    /// Run both the weak and the strong coupling strength.
    #[arg(long)]
    both: bool,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_input_error() { EXIT_CONFIG } else { EXIT_NUMERIC },
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

fn input_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        kind: "config".into(),
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_NUMERIC,
        kind: "io".into(),
        message: format!("{}: {e}", path.display()),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Certify(a) => cmd_certify(&a),
        Command::Bounds(a) => cmd_bounds(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Cpg(a) => cmd_cpg(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_failure(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::builtin(&args.system)?,
    };
    if let Some(seed) = args.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(n) = args.ensemble {
        cfg.ensemble.pairs = n;
    }
    if let Some(h) = args.dt {
        cfg.ensemble.h = Some(h);
    }
    if let Some(t) = args.horizon {
        cfg.ensemble.horizon = t;
    }
    if args.noise_free {
        cfg.ensemble.pairing_mode = PairingMode::NoisyVsNoiseFree;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<Option<PathBuf>, Failure> {
    match &cfg.output_dir {
        Some(d) => {
            let p = PathBuf::from(d);
            fs::create_dir_all(&p).map_err(|e| io_failure(&p, e))?;
            Ok(Some(p))
        }
        None => Ok(None),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

/// Echoes the config when requested; returns whether the command is done.
fn print_config(args: &ConfigArgs, cfg: &ExperimentConfig) -> Result<bool, Failure> {
    if args.print_config {
        cfg.validate()?;
        println!("{}", cfg.to_json());
    }
    Ok(args.print_config)
}

fn cmd_certify(args: &ConfigArgs) -> CmdResult {
    let cfg = load_config(args)?;
    if print_config(args, &cfg)? {
        return Ok(0);
    }
    let out = cfg.certify()?;
    let text = serde_json::to_string_pretty(&out).expect("certificates serialize");
    match out_dir(&cfg)? {
        Some(dir) => write_file(&dir.join("certificate.json"), &text)?,
        None => println!("{text}"),
    }
    Ok(0)
}

fn required(name: &str, v: Option<f64>) -> Result<f64, Failure> {
    v.ok_or_else(|| input_failure(format!("--{name} is required for this bound")))
}

fn bound_from_args(args: &BoundsArgs) -> Result<BoundReport, Failure> {
    let mut args_beta = args.beta;
    let mut args_lambda = args.lambda;
    let (mut c, mut c_d, mut c_c) = (args.c, args.c_d, args.c_c);
    let mut tau = args.tau;
    let mut kind = args.kind;
    if let Some(path) = &args.certificate {
        let text = fs::read_to_string(path).map_err(|e| input_failure(format!("{}: {e}", path.display())))?;
        let certs: CertifyOutput =
            serde_json::from_str(&text).map_err(|e| input_failure(format!("{}: {e}", path.display())))?;
        match certs.certificates.as_slice() {
            [d] if d.kind == stocontract_core::certify::CertificateKind::Discrete => {
                args_beta = Some(d.rate);
                c = Some(d.noise_bound);
                kind = kind.or(Some(BoundKind::Discrete));
            }
            [cc] => {
                args_lambda = Some(cc.rate);
                c_c = Some(cc.noise_bound);
                kind = Some(BoundKind::Continuous);
            }
            [d, cc] => {
                args_beta = Some(d.rate);
                args_lambda = Some(cc.rate);
                c_d = Some(d.noise_bound);
                c_c = Some(cc.noise_bound);
                tau = tau.or(certs.dwell_time);
                kind = Some(BoundKind::Hybrid);
            }
            _ => return Err(input_failure("certificate file holds no certificates")),
        }
    }
    let kind = kind.unwrap_or(if args_lambda.is_some() || tau.is_some() {
        BoundKind::Hybrid
    } else {
        BoundKind::Discrete
    });
    let report = match kind {
        BoundKind::Discrete => discrete_ms_bound(required("beta", args_beta)?, c.unwrap_or(0.0), args.e0)?,
        BoundKind::DiscreteDistance => discrete_distance_bound(required("beta", args_beta)?, c.unwrap_or(0.0), args.e0)?,
        BoundKind::Continuous => continuous_bound(required("lambda", args_lambda)?, c_c.unwrap_or(0.0), args.e0)?,
        BoundKind::Hybrid => hybrid_bound(
            required("beta", args_beta)?,
            required("lambda", args_lambda)?,
            c_d.unwrap_or(0.0),
            c_c.unwrap_or(0.0),
            required("tau", tau)?,
            args.e0,
        )?,
    };
    Ok(if args.noise_free {
        apply_noisefree_corollary(&report)?
    } else {
        report
    })
}

fn cmd_bounds(args: &BoundsArgs) -> CmdResult {
    let report = bound_from_args(args)?;
    if args.json {
        println!("{}", report.to_json());
        return Ok(0);
    }
    let fmt = |v: f64| if v.is_finite() { format!("{v}") } else { "inf".into() };
    println!("theorem_tag\t{}", report.theorem_tag);
    if let Some(base) = report.base_tag {
        println!("base_tag\t{base}");
    }
    println!("asymptotic_bound\t{}", fmt(report.asymptotic_bound));
    println!("transient_rate_per_step\t{}", fmt(report.transient_rate_per_step));
    println!("transient_prefactor\t{}", fmt(report.transient_prefactor));
    if let Some(g) = report.growth_factor_per_step {
        println!("growth_factor_per_step\t{}", fmt(g));
    }
    println!("noise_free\t{}", report.noise_free);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

fn cmd_simulate(args: &ConfigArgs) -> CmdResult {
    let cfg = load_config(args)?;
    if print_config(args, &cfg)? {
        return Ok(0);
    }
    let out = cfg.simulate()?;
    let csv = out.to_csv();
    let summary = json!({
        "system": cfg.system.name(),
        "pairs": out.stats.pair_count,
        "failures": out.stats.failures.len(),
        "bound": out.bound,
        "verdict": out.verdict.map(|ok| if ok { "PASS" } else { "FAIL" }),
        "failed_points": out.checks.iter().filter(|c| !c.pass).count(),
        "growth": out.growth,
    });
    match out_dir(&cfg)? {
        Some(dir) => {
            write_file(&dir.join("ensemble.csv"), &csv)?;
            write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
        }
        None => print!("{csv}"),
    }
    match out.verdict {
        Some(true) => eprintln!("verdict: PASS"),
        Some(false) => eprintln!("verdict: FAIL ({} grid points above bound)", summary["failed_points"]),
        None => eprintln!("no finite bound; growth factor {:?}", out.growth),
    }
    if !out.stats.failures.is_empty() {
        eprintln!("{} trajectory failures", out.stats.failures.len());
    }
    Ok(if out.verdict == Some(false) { EXIT_VIOLATION } else { 0 })
}

fn write_cpg_bundle(dir: &Path, exp: &CpgExperiment) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    write_file(&dir.join("trace.csv"), &exp.trace_csv())?;
    write_file(&dir.join("aligned.csv"), &exp.aligned_csv())?;
    write_file(&dir.join("delta.csv"), &exp.delta_csv())?;
    write_file(&dir.join("delta_mean.csv"), &exp.delta_stats_csv())?;
    write_file(&dir.join("summary.json"), &exp.summary_json())
}

fn cmd_cpg(args: &CpgArgs) -> CmdResult {
    let mut common = args.common.clone();
    if common.config.is_none() {
        common.system = "hopf-cpg".into();
    }
    let mut cfg = load_config(&common)?;
    if let stocontract_core::experiment::SystemSpec::HopfCpg {
        gamma,
        tau,
        sigma_c,
        sigma_d,
    } = &mut cfg.system
    {
        *gamma = args.gamma.unwrap_or(*gamma);
        *tau = args.tau.unwrap_or(*tau);
        *sigma_c = args.sigma_c.unwrap_or(*sigma_c);
        *sigma_d = args.sigma_d.unwrap_or(*sigma_d);
    } else {
        return Err(input_failure(format!("cpg needs a hopf-cpg config, got {}", cfg.system.name())));
    }
    if print_config(&common, &cfg)? {
        return Ok(0);
    }
    let base = cfg.cpg_config()?;
    let dir = out_dir(&cfg)?;
    let mut violated = false;
    let summary = if args.both {
        let mut parts = serde_json::Map::new();
        let mut means = Vec::new();
        for (label, gamma) in [("weak", cpg::GAMMA_WEAK), ("strong", cpg::GAMMA_STRONG)] {
            let mut run = base.clone();
            run.params.gamma = gamma;
            let exp = cpg::run_cpg_experiment(&run)?;
            if let Some(d) = &dir {
                write_cpg_bundle(&d.join(label), &exp)?;
            }
            violated |= exp.summary.bound_respected == Some(false);
            means.push(exp.summary.steady_state_mean);
            parts.insert(label.into(), serde_json::to_value(&exp.summary).unwrap());
        }
        parts.insert("weak_over_strong".into(), json!(means[0] / means[1]));
        serde_json::Value::Object(parts)
    } else {
        let exp = cpg::run_cpg_experiment(&base)?;
        if let Some(d) = &dir {
            write_cpg_bundle(d, &exp)?;
        }
        violated = exp.summary.bound_respected == Some(false);
        serde_json::to_value(&exp.summary).unwrap()
    };
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    if violated {
        eprintln!("verdict: FAIL (steady-state mean above the bound)");
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}
