//! `ldp-gradtrack`: run experiments, compare algorithms, account budgets, plot.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ldp_gradtrack::metrics::{emit_metrics, emit_trace, MetricRow};
use ldp_gradtrack::privacy::{budget_curve, BudgetReport};
use ldp_gradtrack::{prepare, run_experiment, Algorithm, Error, Prepared, Result, RunConfig};

const OUT_ENV: &str = "LDP_GRADTRACK_OUT";

#[derive(Parser)]
#[command(name = "ldp-gradtrack", version, about = "Differentially private online learning over directed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm; writes trace.csv, metrics.csv, summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (falls back to $LDP_GRADTRACK_OUT, the config, then ./out).
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Run both algorithms on identical streams and noise; writes compare.csv.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Per-learner privacy budgets at the given horizons; writes budget.json, budget.csv.
    Budget {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Plot columns of a metrics CSV against round as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Columns to plot; defaults to every numeric column.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        loglog: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Csv { .. } => 1,
        Error::Divergence { .. }
        | Error::CorruptedEstimate { .. }
        | Error::NonConvergence { .. }
        | Error::NoGeometricDecay { .. } => 3,
        _ => 2,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::NonConvergence { .. } => "non_convergence",
        Error::NoGeometricDecay { .. } => "no_geometric_decay",
        Error::CorruptedEstimate { .. } => "corrupted_estimate",
        Error::Divergence { .. } => "divergence",
        Error::DiagonalFree(_) => "diagonal_free",
        Error::EmptyBuffer(_) => "empty_buffer",
        Error::Validation(_) => "validation",
        Error::TraceShape(_) => "trace_shape",
        Error::Data(_) => "data",
        Error::Io { .. } => "io",
        Error::Csv { .. } => "csv",
        Error::Config(_) => "config",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let mut body = json!({ "error": kind(&e), "message": e.to_string(), "exit_code": code });
            if let Error::Validation(list) = &e {
                body["violations"] = json!(list);
            }
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Compare { config, out } => cmd_compare(&config, out),
        Command::Budget { config, horizons, out } => cmd_budget(&config, &horizons, out),
        Command::Plot { csv, out, columns, loglog } => cmd_plot(&csv, &out, &columns, loglog),
    }
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<(Prepared, PathBuf)> {
    let cfg = RunConfig::load(config)?;
    let prep = prepare(&cfg)?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((prep, dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let (prep, dir) = load(config, out)?;
    let exp = run_experiment(&prep, prep.config.algorithm)?;
    emit_trace(&exp.trace, &exp.oracle.theta_star, &dir.join("trace.csv"))?;
    emit_metrics(&exp.rows, &dir.join("metrics.csv"))?;
    write_json(&dir.join("summary.json"), &exp.summary)?;
    println!("{}", dir.join("metrics.csv").display());
    Ok(())
}

fn cmd_compare(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let (prep, dir) = load(config, out)?;
    let algorithms = [Algorithm::LdpGradtrack, Algorithm::PushpullNoisy];
    let mut runs = Vec::new();
    for alg in algorithms {
        runs.push(run_experiment(&prep, alg)?);
    }
    let path = dir.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "algorithm",
        "round",
        "avg_tracking_error",
        "avg_loss_gap",
        "consensus_gap",
        "eps_s_max",
        "eps_theta_max",
    ])
    .map_err(csv_err(&path))?;
    for exp in &runs {
        for r in &exp.rows {
            let MetricRow { round, avg_tracking_error, avg_loss_gap, consensus_gap, eps_s_max, eps_theta_max } = r;
            w.write_record([
                exp.summary.algorithm.name().to_string(),
                round.to_string(),
                avg_tracking_error.to_string(),
                avg_loss_gap.to_string(),
                consensus_gap.to_string(),
                opt(*eps_s_max),
                opt(*eps_theta_max),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let summaries: Vec<_> = runs.iter().map(|e| &e.summary).collect();
    write_json(&dir.join("compare_summary.json"), &summaries)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct BudgetFile<'a> {
    c_l: f64,
    c_z: f64,
    gamma_z: f64,
    reports: &'a [BudgetReport],
}

fn cmd_budget(config: &Path, horizons: &[usize], out: Option<PathBuf>) -> Result<()> {
    let (prep, dir) = load(config, out)?;
    let max_t = horizons.iter().copied().max().unwrap_or(0);
    let series = prep.sensitivity(max_t)?;
    let reports = budget_curve(&series, &prep.noise, horizons)?;
    write_json(
        &dir.join("budget.json"),
        &BudgetFile {
            c_l: series.params.c_l,
            c_z: series.params.c_z,
            gamma_z: series.params.gamma_z,
            reports: &reports,
        },
    )?;
    let path = dir.join("budget.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["horizon", "learner", "eps_s", "eps_theta", "eps_total", "increment"]).map_err(csv_err(&path))?;
    for rep in &reports {
        for l in &rep.learners {
            w.write_record([
                rep.horizon.to_string(),
                l.learner.to_string(),
                l.eps_s.to_string(),
                l.eps_theta.to_string(),
                l.eps_total.to_string(),
                l.increment.to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_plot(csv: &Path, out: &Path, columns: &[String], loglog: bool) -> Result<()> {
    let series = plot::load_series(csv, columns)?;
    let title = csv.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = plot::render_svg(&series, loglog, &title)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(out, svg).map_err(|e| Error::io(out, e))?;
    println!("{}", out.display());
    Ok(())
}
