use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sde_qbic::harness::{
    run_experiment, verify_expansion, write_expansion_csv, AggregateReport, ExpansionStudy, ExpansionTarget,
    ExperimentConfig, FisherSource, Workers, WORKERS_ENV,
};
use sde_qbic::limits::{optimal_model, LimitReport};
use sde_qbic::optim::OptimOptions;
use sde_qbic::simulate::{euler_path, read_path_csv, write_path_csv};
use sde_qbic::{gql, registry, Error, FitOptions, ModelSpec, RngStream, SamplingScheme};

#[derive(Debug, Parser)]
#[command(name = "sde-qbic", version, about = "Stepwise QBIC model selection for ergodic SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo selection experiment.
    Run(RunArgs),
    /// Print the limit contrasts and the optimal model of a named experiment.
    Limits(LimitsArgs),
    /// Compare quadrature log-marginals with the Laplace-type expansion.
    VerifyExpansion(ExpansionArgs),
    /// Simulate one path of a named experiment's true model as CSV.
    Simulate(SimulateArgs),
    /// Fit one scale/drift pair to a path CSV and print the result as JSON.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named experiment, used when no config is given or to override it.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, or `auto`.
    #[arg(long, env = WORKERS_ENV, value_parser = parse_workers)]
    workers: Option<Workers>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Sampling scheme `h,T`; repeatable.
    #[arg(long = "scheme", value_parser = parse_scheme)]
    schemes: Vec<(f64, f64)>,
    /// Also write per-replicate selection reports.
    #[arg(long)]
    keep_replicates: bool,
}

#[derive(Debug, Args)]
struct LimitsArgs {
    #[arg(long, default_value = registry::DIFFUSION_EXPERIMENT)]
    experiment: String,
    /// Print the full report as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fisher {
    Population,
    Data,
}

#[derive(Debug, Args)]
struct ExpansionArgs {
    #[arg(long, default_value = registry::DIFFUSION_EXPERIMENT)]
    experiment: String,
    /// `scale:K` or `drift:K`, 1-based.
    #[arg(long, default_value = "scale:1", value_parser = parse_target)]
    target: ExpansionTarget,
    #[arg(long = "scheme", value_parser = parse_scheme, required = true)]
    schemes: Vec<(f64, f64)>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = WORKERS_ENV, value_parser = parse_workers)]
    workers: Option<Workers>,
    #[arg(long, value_enum, default_value = "population")]
    fisher: Fisher,
    /// CSV file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = registry::DIFFUSION_EXPERIMENT)]
    experiment: String,
    #[arg(long, value_parser = parse_scheme)]
    scheme: (f64, f64),
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long, default_value_t = 10)]
    refine: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Path CSV with columns `t,x`.
    #[arg(long)]
    path: PathBuf,
    #[arg(long)]
    scale: String,
    #[arg(long)]
    drift: String,
}

fn parse_scheme(s: &str) -> Result<(f64, f64), String> {
    let (h, t) = s.split_once(',').ok_or_else(|| format!("expected `h,T`, got `{s}`"))?;
    let h: f64 = h.trim().parse().map_err(|e| format!("step `{h}`: {e}"))?;
    let t: f64 = t.trim().parse().map_err(|e| format!("horizon `{t}`: {e}"))?;
    SamplingScheme::from_horizon(h, t).map_err(|e| e.to_string())?;
    Ok((h, t))
}

fn parse_workers(s: &str) -> Result<Workers, String> {
    Workers::parse(s).map_err(|e| e.to_string())
}

fn parse_target(s: &str) -> Result<ExpansionTarget, String> {
    let (kind, k) = s.split_once(':').ok_or_else(|| format!("expected `scale:K` or `drift:K`, got `{s}`"))?;
    let k: usize = k.parse().map_err(|e| format!("index `{k}`: {e}"))?;
    if k == 0 {
        return Err("candidate indices are 1-based".into());
    }
    match kind {
        "scale" => Ok(ExpansionTarget::Scale(k - 1)),
        "drift" => Ok(ExpansionTarget::Drift(k - 1)),
        _ => Err(format!("unknown target kind `{kind}`")),
    }
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::UnknownName(_) | Error::Parse(_) | Error::Json(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Numeric(e.to_string())
    }
}

fn output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = match (&args.config, &args.experiment) {
        (Some(p), _) => ExperimentConfig::load(p)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        (None, Some(name)) => ExperimentConfig::named(name),
        (None, None) => return Err(Failure::Usage("run needs --config or --experiment".into())),
    };
    if args.config.is_some() {
        if let Some(name) = args.experiment {
            config.experiment = Some(name);
        }
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(o) = args.output {
        config.output_dir = Some(o);
    }
    if !args.schemes.is_empty() {
        config.schemes = args.schemes;
    }
    config.keep_replicates |= args.keep_replicates;
    let report = run_experiment(&config)?;
    print_aggregate(&report)?;
    Ok(())
}

fn print_aggregate(report: &AggregateReport) -> io::Result<()> {
    let mut out = io::stdout().lock();
    for agg in &report.schemes {
        writeln!(
            out,
            "(h, T) = ({}, {}), n = {}: {} completed, {} failed",
            agg.h, agg.horizon, agg.n, agg.completed, agg.failed
        )?;
        write!(out, "{:>14}", "")?;
        for d in &report.drift_labels {
            write!(out, "{d:>14}")?;
        }
        writeln!(out)?;
        for (i, s) in report.scale_labels.iter().enumerate() {
            write!(out, "{s:>14}")?;
            for j in 0..report.drift_labels.len() {
                write!(out, "{:>14}", format!("{} ({:.1})", agg.counts[i][j], agg.mean_weights[i][j]))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn limits(args: LimitsArgs) -> Result<(), Failure> {
    let exp = registry::experiment(&args.experiment)?;
    let pi0 = exp.stationary.build(&exp.truth)?;
    let report = optimal_model(&exp.candidates, &exp.truth, &pi0, &OptimOptions::default())?;
    let mut out = io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    } else {
        print_limits(&mut out, &report)?;
    }
    Ok(())
}

fn fmt_params(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|&v| format!("{:.4}", if v.abs() < 5e-5 { 0.0 } else { v })).collect();
    format!("({})", parts.join(", "))
}

fn print_limits(out: &mut impl Write, r: &LimitReport) -> io::Result<()> {
    writeln!(out, "{:<14}{:>12}  {:<28}{:>6}", "scale", "G1", "gamma*", "PD")?;
    for (i, label) in r.scale_labels.iter().enumerate() {
        let mark = if i == r.m1_star { "*" } else { "" };
        writeln!(out, "{:<14}{:>12.4}  {:<28}{:>6}{mark}", label, r.g1_star[i], fmt_params(&r.gamma_star[i]), r.pd_gamma[i])?;
    }
    writeln!(out)?;
    writeln!(out, "drift contrasts under {}", r.scale_labels[r.m1_star])?;
    writeln!(out, "{:<14}{:>12}  {:<28}{:>6}", "drift", "G2", "alpha*", "PD")?;
    for (j, label) in r.drift_labels.iter().enumerate() {
        let mark = if j == r.m2_star { "*" } else { "" };
        writeln!(out, "{:<14}{:>12.4}  {:<28}{:>6}{mark}", label, r.g2_star[j], fmt_params(&r.alpha_star[j]), r.pd_alpha[j])?;
    }
    writeln!(out)?;
    writeln!(out, "optimal model: ({}, {})", r.scale_labels[r.m1_star], r.drift_labels[r.m2_star])?;
    Ok(())
}

fn expansion(args: ExpansionArgs) -> Result<(), Failure> {
    let mut study = ExpansionStudy::new(&args.experiment, args.target, args.schemes, args.replicates);
    study.base_seed = args.seed;
    study.fisher = match args.fisher {
        Fisher::Population => FisherSource::Population,
        Fisher::Data => FisherSource::Data,
    };
    if let Some(w) = args.workers {
        study.workers = w;
    }
    let records = verify_expansion(&study)?;
    let mut out = output(args.output.as_ref())?;
    write_expansion_csv(&records, &mut out)?;
    out.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let truth = registry::truth(&args.experiment)?;
    let scheme = SamplingScheme::from_horizon(args.scheme.0, args.scheme.1)?;
    let rng = RngStream::for_replicate(args.seed, &args.experiment, scheme.h(), scheme.horizon(), args.replicate);
    let path = euler_path(&truth, &scheme, args.refine, &rng)?;
    let mut out = output(args.output.as_ref())?;
    write_path_csv(&path, &mut out)?;
    out.flush()?;
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    let file = File::open(&args.path).map_err(|e| Failure::Usage(format!("{}: {e}", args.path.display())))?;
    let path = read_path_csv(BufReader::new(file))?;
    let scale = registry::candidate(&args.scale)?;
    let drift = registry::candidate(&args.drift)?;
    let model = ModelSpec::new(drift, scale);
    let result = gql::fit_model(&path, &model, &FitOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&result).map_err(Error::from)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Limits(a) => limits(a),
        Command::VerifyExpansion(a) => expansion(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
