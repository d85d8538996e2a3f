//! The `dpwo` command line: workload generation, covariance optimization,
//! single mechanism runs, benchmarks, and lower bounds.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::covariance::{self, CovarianceDesign, SolverOptions};
use crate::error::{Error, Result};
use crate::harness::{self, BenchConfig, ReportFormat};
use crate::lower_bound;
use crate::mechanism::{self, MechanismOptions, PrivacyParams};
use crate::workload::{self, HistogramMode, MatrixFormat};

#[derive(Parser)]
#[command(
    name = "dpwo",
    version,
    about = "Answer linear query workloads under (ε, δ)-differential privacy \
             with the projection mechanism and optimized Gaussian noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload or histogram file
    Gen(GenArgs),
    /// Optimize the noise covariance for a workload and size bound
    Optimize(OptimizeArgs),
    /// Run the projection mechanism once on a histogram
    Run(RunArgs),
    /// Compare the projection mechanism against the plain Gaussian baseline
    Bench(BenchArgs),
    /// Compute the spectral lower bound of a workload
    Lowerbound(LowerboundArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Intervals,
    Counting,
    Histogram,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Csv,
    Json,
}

impl From<FileFormat> for MatrixFormat {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Csv => MatrixFormat::Csv,
            FileFormat::Json => MatrixFormat::Json,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// What to generate
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Universe size
    #[arg(long)]
    universe: usize,
    /// Number of queries (counting workloads)
    #[arg(long, required_if_eq("kind", "counting"))]
    queries: Option<usize>,
    /// Entry probability for counting workloads
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Histogram mass (histogram kind)
    #[arg(long, required_if_eq("kind", "histogram"))]
    n: Option<u64>,
    /// Histogram mode: "uniform" or "point:J" with a 1-based element J
    #[arg(long, default_value = "uniform")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FileFormat::Csv)]
    format: FileFormat,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Workload file (CSV, or JSON when the extension is .json)
    #[arg(long)]
    workload: PathBuf,
    /// Database size bound
    #[arg(long)]
    n: u64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Relative dual stopping tolerance
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Output design JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Histogram CSV: one line of universe-size integers
    #[arg(long)]
    histogram: PathBuf,
    /// Database size bound (must be at least the histogram total)
    #[arg(long)]
    n: u64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reuse a design produced by `optimize` instead of re-optimizing
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Absolute Frank-Wolfe gap tolerance (default is scale-aware)
    #[arg(long)]
    tol: Option<f64>,
    /// Output JSON (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include the noise and regression vectors in the output
    #[arg(long, default_value_t = false)]
    emit_intermediates: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long)]
    tol: Option<f64>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FileFormat::Json)]
    format: FileFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum LbMethod {
    Auto,
    Brute,
    Greedy,
}

#[derive(Args)]
struct LowerboundArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Subset size bound; alternatively give --n and --epsilon for ⌊εn⌋
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = LbMethod::Auto)]
    method: LbMethod,
    #[arg(long, default_value_t = lower_bound::DEFAULT_MAX_UNIVERSE)]
    max_universe: usize,
    /// Output JSON (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses and executes; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn matrix_format_for(path: &Path) -> MatrixFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => MatrixFormat::Json,
        _ => MatrixFormat::Csv,
    }
}

fn parse_histogram_mode(mode: &str) -> Result<HistogramMode> {
    if mode == "uniform" {
        return Ok(HistogramMode::UniformRandom);
    }
    if let Some(rest) = mode.strip_prefix("point:") {
        let element: usize = rest
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad point mass element '{rest}'")))?;
        return Ok(HistogramMode::PointMass { element });
    }
    Err(Error::InvalidInput(format!(
        "unknown histogram mode '{mode}' (expected 'uniform' or 'point:J')"
    )))
}

fn write_or_print(out: &Option<PathBuf>, body: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, body)?;
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(args) => {
            match args.kind {
                GenKind::Intervals => {
                    let a = workload::gen_interval_queries(args.universe)?;
                    workload::save_matrix(&a, &args.out, args.format.into())?;
                    eprintln!(
                        "wrote {} interval queries over {} elements to {}",
                        a.num_queries(),
                        a.universe_size(),
                        args.out.display()
                    );
                }
                GenKind::Counting => {
                    let m = args.queries.ok_or_else(|| {
                        Error::InvalidInput("--queries is required for counting workloads".into())
                    })?;
                    let a =
                        workload::gen_random_counting(m, args.universe, args.density, args.seed)?;
                    workload::save_matrix(&a, &args.out, args.format.into())?;
                    eprintln!(
                        "wrote {}x{} counting workload to {}",
                        m,
                        args.universe,
                        args.out.display()
                    );
                }
                GenKind::Histogram => {
                    let n = args.n.ok_or_else(|| {
                        Error::InvalidInput("--n is required for histograms".into())
                    })?;
                    let mode = parse_histogram_mode(&args.mode)?;
                    let h = workload::gen_histogram(args.universe, n, mode, args.seed)?;
                    workload::save_histogram(&h, &args.out)?;
                    eprintln!("wrote histogram with mass {n} to {}", args.out.display());
                }
            }
            Ok(())
        }
        Command::Optimize(args) => {
            let a = workload::load_matrix(&args.workload, matrix_format_for(&args.workload))?;
            let opts = SolverOptions {
                max_iters: args.max_iters,
                tol: args.tol,
            };
            let design = covariance::optimize_covariance(&a, args.n, args.epsilon, &opts)?;
            design.save(&args.out)?;
            eprintln!(
                "k = {}, kyfan = {:.6}, hk² = {:.6}, gap = {:.3e}, rescale = {:.6}",
                design.k,
                design.kyfan_value,
                design.dual.hk_value * design.dual.hk_value,
                covariance::duality_gap(&design),
                design.rescale_factor
            );
            Ok(())
        }
        Command::Run(args) => {
            let a = workload::load_matrix(&args.workload, matrix_format_for(&args.workload))?;
            let x = workload::load_histogram(&args.histogram, args.n)?;
            let pp = PrivacyParams::new(args.epsilon, args.delta)?;
            let design = match &args.design {
                Some(path) => CovarianceDesign::load(path, &a)?,
                None => covariance::optimize_covariance(
                    &a,
                    args.n,
                    args.epsilon,
                    &SolverOptions {
                        max_iters: args.max_iters,
                        tol: 1e-7,
                    },
                )?,
            };
            let opts = MechanismOptions {
                max_iters: args.max_iters,
                tol: args.tol,
                #[cfg(feature = "diagnostics")]
                scale_override: None,
            };
            let out =
                mechanism::run_projection_mechanism(&a, &x, &design, &pp, args.seed, &opts)?;
            let mut body =
                serde_json::to_string_pretty(&out.to_json(args.emit_intermediates))?;
            body.push('\n');
            write_or_print(&args.out, &body)
        }
        Command::Bench(args) => {
            let a = workload::load_matrix(&args.workload, matrix_format_for(&args.workload))?;
            let cfg = BenchConfig {
                n: args.n,
                epsilon: args.epsilon,
                delta: args.delta,
                seed: args.seed,
                trials: args.trials,
                max_iters: args.max_iters,
                tol: args.tol,
            };
            let report = harness::run_benchmark(&a, &cfg)?;
            let times = &report.wall_times;
            eprintln!(
                "stages (s): optimize {:.2}, projection {:.2}, baseline {:.2}, certificate {:.2}",
                times.optimize_s, times.projection_s, times.plain_s, times.certificate_s
            );
            let format = match args.format {
                FileFormat::Csv => ReportFormat::Csv,
                FileFormat::Json => ReportFormat::Json,
            };
            let body = harness::report_to_string(&report, format)?;
            write_or_print(&args.out, &body)
        }
        Command::Lowerbound(args) => {
            let a = workload::load_matrix(&args.workload, matrix_format_for(&args.workload))?;
            let k = match (args.k, args.n, args.epsilon) {
                (Some(k), _, _) => k,
                (None, Some(n), Some(eps)) => {
                    let k = (eps * n as f64).floor();
                    if k < 1.0 {
                        return Err(Error::InvalidInput("k must be ≥ 1".into()));
                    }
                    k as usize
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "give --k, or both --n and --epsilon".into(),
                    ))
                }
            };
            let report = match args.method {
                LbMethod::Brute => lower_bound::spec_lb_bruteforce(&a, k, args.max_universe)?,
                LbMethod::Greedy => lower_bound::spec_lb_greedy(&a, k.min(a.universe_size()))?,
                LbMethod::Auto => {
                    if a.universe_size() <= args.max_universe {
                        lower_bound::spec_lb_bruteforce(&a, k, args.max_universe)?
                    } else {
                        lower_bound::spec_lb_greedy(&a, k.min(a.universe_size()))?
                    }
                }
            };
            let mut body = serde_json::to_string_pretty(&report)?;
            body.push('\n');
            write_or_print(&args.out, &body)
        }
    }
}
