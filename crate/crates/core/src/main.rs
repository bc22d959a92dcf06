use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use dagvc::baselines::brute_force_schedule;
use dagvc::bench::{run_sweep, write_outputs, BenchError, ExperimentConfig};
use dagvc::dag::{generate_random_dag, load_dag, save_dag, validate, Dag, DagError, DagGenParams};
use dagvc::mobility::{
    generate_synthetic_trace, load_trace_csv, load_vehicles_csv, save_trace_csv, save_vehicles_csv, MobilityError,
    MobilityTrace, SyntheticTraceParams,
};
use dagvc::sched::{run_trial, validate_schedule, Problem, ScheduleFile, SimRng};

#[derive(Parser)]
#[command(name = "dagvc", version, about = "DAG task scheduling over vehicular clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of rfid,heft,la,mga,brute_force.
        #[arg(long, value_delimiter = ',')]
        schedulers: Option<Vec<String>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Generate a random layered DAG as JSON.
    GenDag {
        #[arg(long, default_value_t = 50)]
        n_subtasks: usize,
        #[arg(long, default_value_t = 10)]
        n_layers: usize,
        #[arg(long, default_value_t = 1.0)]
        ccr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic mobility trace (trace.csv and vehicles.csv).
    GenTrace {
        #[arg(long, default_value_t = 30)]
        n_vehicles: usize,
        #[arg(long, default_value_t = 300.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Schedule one DAG on one trace and write the schedule as JSON.
    Schedule {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, default_value = "rfid")]
        scheduler: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a DAG, and optionally a schedule of it against a trace.
    Validate {
        #[arg(long)]
        dag: PathBuf,
        #[arg(long, requires_all = ["vehicles"])]
        trace: Option<PathBuf>,
        #[arg(long)]
        vehicles: Option<PathBuf>,
        #[arg(long, requires_all = ["trace"])]
        schedule: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Exhaustively search the optimal schedule of a small instance.
    Oracle {
        #[command(flatten)]
        inst: InstanceArgs,
    },
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long)]
    dag: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    vehicles: PathBuf,
    /// Experiment config supplying channel and scheduler settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

struct Fail(i32, String);

impl From<BenchError> for Fail {
    fn from(e: BenchError) -> Self {
        Fail(e.exit_code(), e.to_string())
    }
}

impl From<DagError> for Fail {
    fn from(e: DagError) -> Self {
        BenchError::from(e).into()
    }
}

impl From<MobilityError> for Fail {
    fn from(e: MobilityError) -> Self {
        BenchError::from(e).into()
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(2, e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Fail> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn load_valid_dag(path: &Path) -> Result<Dag, Fail> {
    Ok(validate(&load_dag(path)?)?)
}

fn load_trace(trace: &Path, vehicles: &Path) -> Result<MobilityTrace, Fail> {
    Ok(load_trace_csv(trace, load_vehicles_csv(vehicles)?)?)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn run(cli: Cli) -> Result<(), Fail> {
    match cli.command {
        Command::Run { config, out, seed, schedulers, trials } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.experiment.base_seed = s;
            }
            if let Some(s) = schedulers {
                cfg.experiment.schedulers = s;
            }
            if let Some(t) = trials {
                cfg.experiment.trials = t;
            }
            cfg.check()?;
            let rows = run_sweep(&cfg)?;
            let summary = write_outputs(&rows, &out)?;
            for (sched, cells) in &summary {
                for (value, c) in cells {
                    let otc = c.mean_otc.map_or("-".into(), |m| format!("{m:.4}"));
                    println!("{sched:>11} {}={value:<6} success={:.3} mean_otc={otc}", cfg.experiment.axis, c.success_rate);
                }
            }
            eprintln!("wrote {} rows to {}", rows.len(), out.join("results.csv").display());
        }
        Command::GenDag { n_subtasks, n_layers, ccr, seed, out } => {
            let params = DagGenParams { n_subtasks, n_layers, ccr, ..Default::default() };
            let task = generate_random_dag(&params, &mut SimRng::seed_from_u64(seed))?;
            save_dag(&task, &out)?;
        }
        Command::GenTrace { n_vehicles, horizon, seed, out } => {
            let params = SyntheticTraceParams { n_vehicles, horizon_s: horizon, ..Default::default() };
            let trace = generate_synthetic_trace(&params, &mut SimRng::seed_from_u64(seed))?;
            fs::create_dir_all(&out)?;
            save_trace_csv(&trace, out.join("trace.csv"))?;
            save_vehicles_csv(trace.vehicles(), out.join("vehicles.csv"))?;
        }
        Command::Schedule { inst, scheduler, out } => {
            let cfg = load_config(inst.config.as_deref())?;
            let dag = load_valid_dag(&inst.dag)?;
            let trace = load_trace(&inst.trace, &inst.vehicles)?;
            let channel = cfg.channel.channel();
            let sched = cfg.scheduler(&scheduler)?;
            let problem = Problem::new(&dag, &trace, &channel);
            let outcome = run_trial(&problem, sched.as_ref(), &mut SimRng::seed_from_u64(cfg.experiment.base_seed));
            match (&outcome.assignment, outcome.failure) {
                (Some(a), _) => {
                    let text = to_json(&ScheduleFile::from_assignment(a, &dag, &trace));
                    match out {
                        Some(p) => fs::write(p, text)?,
                        None => print!("{text}"),
                    }
                    eprintln!("otc = {:.6} s", outcome.otc.unwrap_or(f64::NAN));
                }
                (None, Some(f)) => {
                    println!("failed at {} (t = {:.6}): {}", dag.id(f.subtask), f.time, f.cause);
                }
                (None, None) => unreachable!("outcome is either a schedule or a failure"),
            }
        }
        Command::Validate { dag, trace, vehicles, schedule, config } => {
            let d = load_valid_dag(&dag)?;
            println!("dag ok: {} subtasks, entry {}, exit {}", d.len(), d.id(d.entry()), d.id(d.exit()));
            if let (Some(t), Some(v)) = (trace, vehicles) {
                let tr = load_trace(&t, &v)?;
                println!("trace ok: {} vehicles", tr.len());
                if let Some(s) = schedule {
                    let cfg = load_config(config.as_deref())?;
                    let text = fs::read_to_string(&s)?;
                    let file: ScheduleFile = serde_json::from_str(&text).map_err(|e| Fail(1, e.to_string()))?;
                    let a = file.to_assignment(&d, &tr).map_err(|e| Fail(1, e))?;
                    let report = validate_schedule(&a, &d, &tr, &cfg.channel.channel());
                    if !report.is_valid() {
                        for v in &report.violations {
                            println!("violation: {v:?}");
                        }
                        return Err(Fail(1, format!("{} constraint violations", report.violations.len())));
                    }
                    println!("schedule ok: otc = {:.6} s", report.otc(&d).unwrap_or(f64::NAN));
                }
            }
        }
        Command::Oracle { inst } => {
            let cfg = load_config(inst.config.as_deref())?;
            let dag = load_valid_dag(&inst.dag)?;
            let trace = load_trace(&inst.trace, &inst.vehicles)?;
            let channel = cfg.channel.channel();
            let problem = Problem::new(&dag, &trace, &channel);
            match brute_force_schedule(&problem).map_err(|e| Fail(1, e.to_string()))? {
                Ok(a) => {
                    print!("{}", to_json(&ScheduleFile::from_assignment(&a, &dag, &trace)));
                    eprintln!("optimal otc = {:.6} s", a.otc(&dag).unwrap_or(f64::NAN));
                }
                Err(f) => println!("infeasible: {} ({})", dag.id(f.subtask), f.cause),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
