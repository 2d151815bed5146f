//! Command-line front end for the iterated-integral samplers: simulation
//! batches, validation suites, cost tables, convergence studies and the
//! strong-order demonstration.
//!
//! Every command is a pure function of its flags and seed: reruns produce
//! byte-identical primary output regardless of the worker count (capped by
//! the LEVYSIM_THREADS environment variable). Exit codes: 0 when all
//! checks pass, 1 on a statistical failure, 2 on a usage error.

mod output;
mod suites;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use levysim::demo::{run_demo, DemoConfig};
use levysim::error_model::{cost, Algorithm};
use levysim::rng::{open_stream, StreamSpec};
use levysim::sim::{convert, simulate_fs, simulate_ia, Calculus, Sampler};

use output::{
    emit, fmt_float, report_to_json, reports_to_csv, reports_to_json, RunClock, RunManifest,
};
use suites::GridOverrides;

#[derive(Parser)]
#[command(
    name = "levysim",
    version,
    about = "Levy area and iterated stochastic integral simulation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample increments and integral matrices as CSV rows.
    Simulate(SimulateArgs),
    /// Run a named validation suite and report pass/fail rows.
    Validate(ValidateArgs),
    /// Print the per-realization draw-count table for all algorithms.
    Cost(CostArgs),
    /// Measure coupled errors over a truncation-level grid and fit slopes.
    Convergence(ConvergenceArgs),
    /// Strong-order demonstration on the non-commutative test equation.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    /// Corrected sampler (exact joint second moments).
    Ia,
    /// Plain truncated sampler.
    Fs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CalculusArg {
    Ito,
    Strat,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    /// Unbiasedness, second moments, cross moments, pair identity.
    Moments,
    /// Exact truncation-error law of the plain sampler.
    FsError,
    /// Coupled-error bound of the corrected sampler.
    IaError,
    /// Conditional covariance oracles and fluctuation statistics.
    Cov,
    /// Square-root Lipschitz inequality property test.
    Lemma43,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the primary output here; a manifest sidecar
    /// <out>.manifest.json records the full parameter set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Payload format.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args)]
#[command(group(ArgGroup::new("level").required(true).args(["eps", "n"])))]
struct SimulateArgs {
    /// Brownian dimension m >= 1.
    #[arg(long)]
    m: usize,
    /// Step size h > 0.
    #[arg(long)]
    h: f64,
    /// L^p accuracy target; resolves the truncation level through the
    /// algorithm's schedule.
    #[arg(long)]
    eps: Option<f64>,
    /// Explicit truncation level (mutually exclusive with --eps).
    #[arg(long)]
    n: Option<usize>,
    /// Moment order of the accuracy target.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Sampler.
    #[arg(long, value_enum, default_value_t = AlgoArg::Ia)]
    algo: AlgoArg,
    /// Calculus convention of the emitted integrals.
    #[arg(long, value_enum, default_value_t = CalculusArg::Ito)]
    calculus: CalculusArg,
    /// Number of realizations.
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// Base seed; realization j uses substream j.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ValidateArgs {
    /// Suite to run.
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// Override the suite's dimension grid (comma-separated); the lemma43
    /// suite reads its matrix size from the first entry.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Override the suite's truncation levels (comma-separated,
    /// strictly increasing).
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Override the suite's step size.
    #[arg(long)]
    h: Option<f64>,
    /// Override the tail cutoff K.
    #[arg(long)]
    k_max: Option<usize>,
    /// Override the realization or trial count.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CostArgs {
    /// Brownian dimension m >= 2.
    #[arg(long)]
    m: usize,
    /// Step size h > 0.
    #[arg(long)]
    h: f64,
    /// Accuracy target.
    #[arg(long)]
    eps: f64,
    /// Moment order; the reference method's schedule exists only at p = 2.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Sampler to study.
    #[arg(long, value_enum)]
    algo: AlgoArg,
    /// Truncation levels (comma-separated, strictly increasing, >= 3).
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    n_list: Vec<usize>,
    /// Brownian dimension.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Step size.
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    /// Realizations per level.
    #[arg(long, default_value_t = 20_000)]
    paths: usize,
    /// Tail cutoff; defaults to max(10^4, 100 max n).
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct DemoArgs {
    /// Time horizon.
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Coarse step sizes (comma-separated, >= 3, each dividing T).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.125,0.0625,0.03125,0.015625,0.0078125"
    )]
    h_list: Vec<f64>,
    /// Monte Carlo path count.
    #[arg(long, default_value_t = 1_000)]
    paths: usize,
    /// Budget scale: eps(h) = eps_scale * h^(3/2).
    #[arg(long, default_value_t = 0.0625)]
    eps_scale: f64,
    /// Lower bound on the reference tail cutoff.
    #[arg(long, default_value_t = 1_000)]
    k_min: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug)]
enum CliError {
    Domain(levysim::Error),
    Io(std::io::Error),
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<levysim::Error> for CliError {
    fn from(e: levysim::Error) -> CliError {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e)
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return 2;
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Cost(args) => cmd_cost(&args),
        Command::Convergence(args) => cmd_convergence(&args),
        Command::Demo(args) => cmd_demo(&args),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("LEVYSIM_THREADS") else {
        return Ok(());
    };
    let workers: usize = raw
        .parse()
        .map_err(|_| format!("LEVYSIM_THREADS must be a positive integer, got {raw:?}"))?;
    if workers == 0 {
        return Err("LEVYSIM_THREADS must be at least 1".to_string());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| format!("failed to configure the worker pool: {e}"))
}

/// Resolves the truncation level from an accuracy target: the corrected
/// sampler uses its L^p schedule; the plain sampler needs the far larger
/// level of its own error law. A single component (m = 1) has no areas and
/// any level gives exact output, so the minimum is used.
fn resolve_level(args: &SimulateArgs) -> Result<usize, CliError> {
    if let Some(n) = args.n {
        if n == 0 {
            return Err(CliError::Usage("--n must be at least 1".to_string()));
        }
        return Ok(n);
    }
    let eps = args.eps.expect("clap enforces exactly one of --eps/--n");
    if args.m == 1 {
        return Ok(1);
    }
    let algo = match args.algo {
        AlgoArg::Ia => Algorithm::Ia,
        AlgoArg::Fs => Algorithm::Fs,
    };
    Ok(cost(algo, args.m, args.p, args.h, eps)?.n)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<bool, CliError> {
    let clock = RunClock::start();
    let n = resolve_level(args)?;
    let calculus = match args.calculus {
        CalculusArg::Ito => Calculus::Ito,
        CalculusArg::Strat => Calculus::Stratonovich,
    };
    let mut columns = vec!["realization".to_string()];
    for i in 1..=args.m {
        columns.push(format!("dw_{i}"));
    }
    for i in 1..=args.m {
        for j in 1..=args.m {
            columns.push(format!("I_{i}_{j}"));
        }
    }
    let mut realizations: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(args.batch);
    for realization in 0..args.batch {
        let mut stream = open_stream(StreamSpec::new(args.seed, realization as u64));
        let (inc, mat) = match args.algo {
            AlgoArg::Ia => simulate_ia(args.m, args.h, n, &mut stream),
            AlgoArg::Fs => simulate_fs(args.m, args.h, n, &mut stream),
        }?;
        let mat = convert(&mat, calculus);
        realizations.push((inc.dw, mat.values));
    }
    let payload = match args.output.format {
        FormatArg::Csv => {
            let mut text = columns.join(",");
            text.push('\n');
            for (realization, (dw, values)) in realizations.iter().enumerate() {
                let rendered: Vec<String> = std::iter::once(realization.to_string())
                    .chain(dw.iter().chain(values.iter()).map(|v| fmt_float(*v)))
                    .collect();
                text.push_str(&rendered.join(","));
                text.push('\n');
            }
            text
        }
        FormatArg::Json => {
            let rows: Vec<serde_json::Value> = realizations
                .iter()
                .enumerate()
                .map(|(realization, (dw, values))| {
                    serde_json::json!({
                        "realization": realization,
                        "dw": dw,
                        "integrals": values,
                    })
                })
                .collect();
            format!(
                "{}\n",
                serde_json::json!({ "columns": columns, "rows": rows })
            )
        }
    };
    let mut manifest = RunManifest::new("simulate", args.seed);
    manifest.set("m", args.m);
    manifest.set("h", args.h);
    manifest.set("eps", args.eps);
    manifest.set("p", args.p);
    manifest.set("n", n);
    manifest.set("algo", algo_name(args.algo));
    manifest.set(
        "calculus",
        match args.calculus {
            CalculusArg::Ito => "ito",
            CalculusArg::Strat => "strat",
        },
    );
    manifest.set("batch", args.batch);
    manifest.set("format", format_name(args.output.format));
    emit(&payload, &args.output.out, &mut manifest, &clock)?;
    Ok(true)
}

fn algo_name(algo: AlgoArg) -> &'static str {
    match algo {
        AlgoArg::Ia => "ia",
        AlgoArg::Fs => "fs",
    }
}

fn format_name(format: FormatArg) -> &'static str {
    match format {
        FormatArg::Csv => "csv",
        FormatArg::Json => "json",
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool, CliError> {
    let clock = RunClock::start();
    let grid = GridOverrides {
        m_list: args.m.clone(),
        n_list: args.n_list.clone(),
        h: args.h,
        k_max: args.k_max,
        paths: args.paths,
    };
    let suite_name = match args.suite {
        SuiteArg::Moments => "moments",
        SuiteArg::FsError => "fs-error",
        SuiteArg::IaError => "ia-error",
        SuiteArg::Cov => "cov",
        SuiteArg::Lemma43 => "lemma43",
    };
    let reports = match args.suite {
        SuiteArg::Moments => suites::run_moments(&grid, args.seed),
        SuiteArg::FsError => suites::run_fs_error(&grid, args.seed),
        SuiteArg::IaError => suites::run_ia_error(&grid, args.seed),
        SuiteArg::Cov => suites::run_cov(&grid, args.seed),
        SuiteArg::Lemma43 => suites::run_lemma43(&grid, args.seed),
    }?;
    let all_pass = reports.iter().all(|r| r.pass);
    let payload = match args.output.format {
        FormatArg::Csv => reports_to_csv(&reports),
        FormatArg::Json => format!(
            "{}\n",
            serde_json::json!({
                "suite": suite_name,
                "reports": reports_to_json(&reports),
                "all_pass": all_pass,
            })
        ),
    };
    let mut manifest = RunManifest::new("validate", args.seed);
    manifest.set("suite", suite_name);
    manifest.set("m", args.m.clone());
    manifest.set("n_list", args.n_list.clone());
    manifest.set("h", args.h);
    manifest.set("k_max", args.k_max.map(|v| v as u64));
    manifest.set("paths", args.paths.map(|v| v as u64));
    manifest.set("format", format_name(args.output.format));
    emit(&payload, &args.output.out, &mut manifest, &clock)?;
    Ok(all_pass)
}

fn cmd_cost(args: &CostArgs) -> Result<bool, CliError> {
    let clock = RunClock::start();
    let ia = cost(Algorithm::Ia, args.m, args.p, args.h, args.eps)?;
    let fs = cost(Algorithm::Fs, args.m, args.p, args.h, args.eps)?;
    let wik = if args.p == 2.0 {
        Some(cost(Algorithm::Wik, args.m, args.p, args.h, args.eps)?)
    } else {
        None
    };
    let ratio = |draws: u64| draws as f64 / ia.draws as f64;
    let mut records: Vec<(String, String, String, String, String)> = vec![(
        "IA".to_string(),
        ia.n.to_string(),
        ia.draws.to_string(),
        fmt_float(1.0),
        String::new(),
    )];
    match &wik {
        Some(w) => records.push((
            "WIK".to_string(),
            w.n.to_string(),
            w.draws.to_string(),
            fmt_float(ratio(w.draws)),
            String::new(),
        )),
        None => records.push((
            "WIK".to_string(),
            String::new(),
            String::new(),
            String::new(),
            "n/a (L² schedule only)".to_string(),
        )),
    }
    records.push((
        "FS".to_string(),
        fs.n.to_string(),
        fs.draws.to_string(),
        fmt_float(ratio(fs.draws)),
        String::new(),
    ));
    let payload = match args.output.format {
        FormatArg::Csv => {
            let mut text = String::from("algo,n,draws,ratio_vs_ia,note\n");
            for (algo, n, draws, ratio, note) in &records {
                text.push_str(&format!("{algo},{n},{draws},{ratio},{note}\n"));
            }
            text
        }
        FormatArg::Json => {
            let rows: Vec<serde_json::Value> = records
                .iter()
                .map(|(algo, n, draws, ratio, note)| {
                    serde_json::json!({
                        "algo": algo,
                        "n": n.parse::<u64>().ok(),
                        "draws": draws.parse::<u64>().ok(),
                        "ratio_vs_ia": ratio.parse::<f64>().ok(),
                        "note": if note.is_empty() { None } else { Some(note.clone()) },
                    })
                })
                .collect();
            format!("{}\n", serde_json::json!({ "rows": rows }))
        }
    };
    let mut manifest = RunManifest::new("cost", 0);
    manifest.set("m", args.m);
    manifest.set("h", args.h);
    manifest.set("eps", args.eps);
    manifest.set("p", args.p);
    manifest.set("format", format_name(args.output.format));
    emit(&payload, &args.output.out, &mut manifest, &clock)?;
    Ok(true)
}

fn cmd_convergence(args: &ConvergenceArgs) -> Result<bool, CliError> {
    let clock = RunClock::start();
    if args.n_list.len() < 3 {
        return Err(CliError::Usage(format!(
            "--n-list needs at least 3 levels for a slope fit, got {}",
            args.n_list.len()
        )));
    }
    let max_n = *args.n_list.iter().max().unwrap();
    let k_max = args.k_max.unwrap_or_else(|| 10_000.max(100 * max_n));
    let sampler = match args.algo {
        AlgoArg::Ia => Sampler::Ia,
        AlgoArg::Fs => Sampler::Fs,
    };
    let reports = suites::run_convergence(
        sampler,
        args.m,
        args.h,
        &args.n_list,
        k_max,
        args.paths,
        args.seed,
    )?;
    let all_pass = reports.iter().all(|r| r.pass);
    let slope_summary: Vec<serde_json::Value> = reports
        .iter()
        .filter(|r| r.statistic.starts_with("slope"))
        .map(report_to_json)
        .collect();
    let payload = match args.output.format {
        FormatArg::Csv => reports_to_csv(&reports),
        FormatArg::Json => format!(
            "{}\n",
            serde_json::json!({
                "algo": algo_name(args.algo),
                "reports": reports_to_json(&reports),
                "all_pass": all_pass,
            })
        ),
    };
    let mut manifest = RunManifest::new("convergence", args.seed);
    manifest.set("algo", algo_name(args.algo));
    manifest.set(
        "n_list",
        args.n_list.iter().map(|&n| n as u64).collect::<Vec<u64>>(),
    );
    manifest.set("m", args.m);
    manifest.set("h", args.h);
    manifest.set("paths", args.paths);
    manifest.set("k_max", k_max);
    manifest.set("format", format_name(args.output.format));
    emit(&payload, &args.output.out, &mut manifest, &clock)?;
    if matches!(args.output.format, FormatArg::Csv) && args.output.out.is_some() {
        println!("{}", serde_json::json!({ "slopes": slope_summary }));
    }
    Ok(all_pass)
}

fn cmd_demo(args: &DemoArgs) -> Result<bool, CliError> {
    let clock = RunClock::start();
    let cfg = DemoConfig {
        t: args.t,
        h_list: args.h_list.clone(),
        paths: args.paths,
        eps_scale: args.eps_scale,
        k_min: args.k_min,
        seed: args.seed,
    };
    let report = run_demo(&cfg)?;
    let slopes = serde_json::json!({
        "slope_milstein_ia": report.slope_milstein_ia,
        "slope_milstein_fs": report.slope_milstein_fs,
        "slope_euler": report.slope_euler,
    });
    let payload = match args.output.format {
        FormatArg::Csv => {
            let mut text = String::from("h,n,rmse_milstein_ia,rmse_milstein_fs,rmse_euler\n");
            for row in &report.rows {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_float(row.h),
                    row.n,
                    fmt_float(row.rmse_milstein_ia),
                    fmt_float(row.rmse_milstein_fs),
                    fmt_float(row.rmse_euler)
                ));
            }
            text
        }
        FormatArg::Json => {
            let rows: Vec<serde_json::Value> = report
                .rows
                .iter()
                .map(|row| {
                    serde_json::json!({
                        "h": row.h,
                        "n": row.n,
                        "k": row.k,
                        "steps": row.steps,
                        "rmse_milstein_ia": row.rmse_milstein_ia,
                        "rmse_milstein_fs": row.rmse_milstein_fs,
                        "rmse_euler": row.rmse_euler,
                    })
                })
                .collect();
            format!(
                "{}\n",
                serde_json::json!({ "rows": rows, "slopes": slopes })
            )
        }
    };
    let mut manifest = RunManifest::new("demo", args.seed);
    manifest.set("t", args.t);
    manifest.set("h_list", args.h_list.clone());
    manifest.set("paths", args.paths);
    manifest.set("eps_scale", args.eps_scale);
    manifest.set("k_min", args.k_min);
    manifest.set(
        "n_per_level",
        report.rows.iter().map(|r| r.n as u64).collect::<Vec<u64>>(),
    );
    manifest.set("format", format_name(args.output.format));
    emit(&payload, &args.output.out, &mut manifest, &clock)?;
    if matches!(args.output.format, FormatArg::Csv) {
        println!("{}", serde_json::json!({ "slopes": slopes }));
    }
    Ok(true)
}
