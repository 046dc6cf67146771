use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbcbf::harness::{
    linspace, run_scenario, safe_set_slice, slice::slice_to_csv, write_metrics_json, write_trace_csv, Metrics,
    Scenario, ScenarioFile, SliceSpec,
};
use pbcbf::qpfilter::FilterMode;
use pbcbf::Error;

#[derive(Parser)]
#[command(name = "pbcbf", version, about = "Prediction-based CBF safety filter simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and metrics.
    Run {
        scenario: PathBuf,
        /// Override the filter mode (none, base, pb).
        #[arg(long)]
        mode: Option<FilterMode>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the same scenario under several filter modes.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "none,base,pb")]
        modes: Vec<FilterMode>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Evaluate h and h + delta_h of one barrier on a 2-D state grid.
    Slice {
        scenario: PathBuf,
        /// Two state indices, e.g. `0,2`.
        #[arg(long, value_delimiter = ',', default_value = "0,2")]
        axes: Vec<usize>,
        /// `lo:hi:count,lo:hi:count` for the two axes.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 0)]
        barrier: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a scenario for several values of one parameter.
    Sweep {
        scenario: PathBuf,
        /// gamma, dt_prediction or duration.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        mode: Option<FilterMode>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

/// An error together with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn load_failure(error: Error) -> Failure {
    let code = match error {
        Error::Io { .. } => 4,
        _ => 2,
    };
    Failure { code, error }
}

fn run_failure(error: Error) -> Failure {
    let code = match error {
        Error::Io { .. } => 4,
        Error::Invalid(_) => 2,
        _ => 3,
    };
    Failure { code, error }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

fn load(path: &Path, mode: Option<FilterMode>) -> Result<Scenario, Failure> {
    let mut spec = ScenarioFile::load(path).map_err(load_failure)?;
    if let Some(mode) = mode {
        spec.filter.mode = mode;
    }
    Scenario::build(spec, base_dir(path)).map_err(load_failure)
}

fn simulate(scenario: &Scenario, trace: &Path, metrics: &Path) -> Result<Metrics, Failure> {
    let (tr, m) = run_scenario(scenario).map_err(run_failure)?;
    write_trace_csv(&tr, scenario.system(), scenario.barriers.len(), trace).map_err(run_failure)?;
    write_metrics_json(&m, metrics).map_err(run_failure)?;
    log::info!("{}: wrote {} and {}", scenario.name, trace.display(), metrics.display());
    Ok(m)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn print_table(rows: &[(String, Metrics)]) {
    println!(
        "{:<16} {:>12} {:>9} {:>12} {:>10} {:>11}",
        "run", "min_margin", "violated", "activation", "saturated", "infeasible"
    );
    for (label, m) in rows {
        println!(
            "{:<16} {:>12.6} {:>9} {:>12} {:>10} {:>11}",
            label,
            m.min_margin,
            m.violated,
            fmt_opt(m.first_activation_time),
            m.saturation_steps,
            m.qp_infeasible_steps
        );
    }
}

fn parse_axis(text: &str) -> Result<(f64, f64, usize), Failure> {
    let bad = || load_failure(Error::Invalid(format!("grid axis '{text}' is not lo:hi:count")));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else { return Err(bad()) };
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
        count.trim().parse().map_err(|_| bad())?,
    ))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { scenario, mode, trace, metrics } => {
            let sc = load(&scenario, mode)?;
            let stem = format!("{}_{}", sc.name, sc.filter.mode.label());
            let trace =
                trace.or_else(|| sc.outputs.trace.clone()).unwrap_or_else(|| PathBuf::from(format!("{stem}.csv")));
            let metrics = metrics
                .or_else(|| sc.outputs.metrics.clone())
                .unwrap_or_else(|| PathBuf::from(format!("{stem}_metrics.json")));
            let m = simulate(&sc, &trace, &metrics)?;
            print_table(&[(sc.filter.mode.label().to_string(), m)]);
        }
        Command::Compare { scenario, modes, out_dir } => {
            let mut rows = Vec::new();
            for mode in modes {
                let sc = load(&scenario, Some(mode))?;
                let stem = out_dir.join(format!("{}_{}", sc.name, mode.label()));
                let m = simulate(
                    &sc,
                    &stem.with_extension("csv"),
                    &out_dir.join(format!("{}_{}_metrics.json", sc.name, mode.label())),
                )?;
                rows.push((mode.label().to_string(), m));
            }
            print_table(&rows);
        }
        Command::Slice { scenario, axes, grid, barrier, out } => {
            let sc = load(&scenario, None)?;
            let [a0, a1] = axes.as_slice() else {
                return Err(load_failure(Error::Invalid("--axes needs exactly two indices".into())));
            };
            let specs: Vec<&str> = grid.split(',').collect();
            let [g0, g1] = specs.as_slice() else {
                return Err(load_failure(Error::Invalid("--grid needs two axis specs".into())));
            };
            let (lo0, hi0, n0) = parse_axis(g0)?;
            let (lo1, hi1, n1) = parse_axis(g1)?;
            let Some(entry) = sc.barriers.get(barrier) else {
                return Err(load_failure(Error::Invalid(format!("no barrier with index {barrier}"))));
            };
            let spec = SliceSpec {
                base: sc.x0.clone(),
                axes: (*a0, *a1),
                first: linspace(lo0, hi0, n0),
                second: linspace(lo1, hi1, n1),
                dt: sc.filter.dt_prediction,
                t_max: sc.filter.t_max_prediction,
            };
            let cells =
                safe_set_slice(sc.system(), entry.barrier.as_ref(), &entry.policy, &spec).map_err(run_failure)?;
            let labels = sc.system().state_labels();
            let names =
                (labels.get(*a0).map_or("x", |l| l.name.as_str()), labels.get(*a1).map_or("y", |l| l.name.as_str()));
            let csv = slice_to_csv(&cells, names);
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| run_failure(Error::Io { path, source: e }))?,
                None => print!("{csv}"),
            }
        }
        Command::Sweep { scenario, param, values, mode, out_dir } => {
            let base = ScenarioFile::load(&scenario).map_err(load_failure)?;
            let mut rows = Vec::new();
            for value in values {
                let mut spec = base.clone();
                if let Some(mode) = mode {
                    spec.filter.mode = mode;
                }
                match param.as_str() {
                    "gamma" | "γ" => spec.filter.gamma = value,
                    "dt_prediction" => spec.filter.dt_prediction = value,
                    "duration" => spec.duration = value,
                    other => return Err(load_failure(Error::Invalid(format!("unknown sweep parameter '{other}'")))),
                }
                let label = format!("{param}={value}");
                spec.name = format!("{}_{}{}", base.name, param, value);
                let sc = Scenario::build(spec, base_dir(&scenario)).map_err(load_failure)?;
                let stem = format!("{}_{}", sc.name, sc.filter.mode.label());
                let m =
                    simulate(&sc, &out_dir.join(format!("{stem}.csv")), &out_dir.join(format!("{stem}_metrics.json")))?;
                rows.push((label, m));
            }
            print_table(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PBCBF_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            log::error!("{error}");
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}
