//! Monte Carlo sweep harness: configuration, paired instance generation, parallel trial
//! execution and result aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BruteForce, Heft, Lookahead, Mga, MgaConfig};
use crate::channel::{Channel, ChannelParams};
use crate::dag::{generate_random_dag, validate, Dag, DagError, DagGenParams};
use crate::mobility::{
    generate_synthetic_trace, load_trace_csv, load_vehicles_csv, ContactModel, MobilityError, MobilityTrace,
    SyntheticTraceParams,
};
use crate::rfid::{Rfid, RfidConfig};
use crate::sched::{run_trial, Problem, Scheduler, SimRng};

pub const THREADS_ENV: &str = "DAGVC_THREADS";

pub const CSV_HEADER: [&str; 11] = [
    "scheduler",
    "axis",
    "value",
    "seed",
    "n_subtasks",
    "n_vehicles",
    "n_layers",
    "ccr",
    "otc_s",
    "success",
    "sched_runtime_ms",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no rows to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("data error: {0}")]
    Data(String),
}

impl BenchError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Io(_) => 2,
            _ => 1,
        }
    }
}

impl From<DagError> for BenchError {
    fn from(e: DagError) -> Self {
        match e {
            DagError::Io(io) => BenchError::Io(io),
            DagError::InvalidParams(_) | DagError::InfeasibleLayering { .. } => BenchError::Config(e.to_string()),
            other => BenchError::Data(other.to_string()),
        }
    }
}

impl From<MobilityError> for BenchError {
    fn from(e: MobilityError) -> Self {
        match e {
            MobilityError::Io(io) => BenchError::Io(io),
            MobilityError::InvalidParams(m) => BenchError::Config(m),
            other => BenchError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NSubtasks,
    NVehicles,
    NLayers,
    Ccr,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::NSubtasks => "n_subtasks",
            Axis::NVehicles => "n_vehicles",
            Axis::NLayers => "n_layers",
            Axis::Ccr => "ccr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub schedulers: Vec<String>,
    pub base_seed: u64,
    /// When off, the runtime column is left empty so that outputs are byte-reproducible.
    pub record_runtime: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            axis: Axis::NSubtasks,
            values: vec![50.0],
            trials: 200,
            schedulers: ["rfid", "heft", "la", "mga"].map(String::from).to_vec(),
            base_seed: 1,
            record_runtime: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VcSection {
    #[serde(flatten)]
    pub synthetic: SyntheticTraceParams,
    /// Recorded trace to use instead of synthetic mobility; needs `vehicles_csv` too.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vehicles_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSection {
    #[serde(flatten)]
    pub params: ChannelParams,
    pub contact: ContactModel,
}

impl ChannelSection {
    pub fn channel(&self) -> Channel {
        Channel::new(self.params.clone(), self.contact)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dag: DagGenParams,
    pub vc: VcSection,
    pub channel: ChannelSection,
    pub rfid: RfidConfig,
    pub mga: MgaConfig,
}

pub const SCHEDULER_NAMES: [&str; 5] = ["rfid", "heft", "la", "mga", "brute_force"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        let cfg: ExperimentConfig =
            toml::Value::Table(raw.clone()).try_into().map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        let known = toml::Value::try_from(&cfg).map_err(|e| BenchError::Config(e.to_string()))?;
        unknown_keys(&toml::Value::Table(raw), &known, "")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.vc.trace_csv, &mut cfg.vc.vehicles_csv].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), BenchError> {
        let e = &self.experiment;
        let bad = |m: String| Err(BenchError::Config(m));
        if e.trials == 0 {
            return bad("experiment.trials must be at least 1".into());
        }
        if e.values.is_empty() {
            return bad("experiment.values must not be empty".into());
        }
        if e.schedulers.is_empty() {
            return bad("experiment.schedulers must not be empty".into());
        }
        for s in &e.schedulers {
            if !SCHEDULER_NAMES.contains(&s.as_str()) {
                return bad(format!("unknown scheduler {s:?}; expected one of {SCHEDULER_NAMES:?}"));
            }
        }
        for &v in &e.values {
            let integral = matches!(e.axis, Axis::NSubtasks | Axis::NVehicles | Axis::NLayers);
            if !(v.is_finite() && v > 0.0) || (integral && v.fract() != 0.0) {
                return bad(format!("invalid {} value {v}", e.axis));
            }
            let (dag, vc) = self.cell(v);
            dag.check()?;
            if self.vc.trace_csv.is_none() {
                vc.check()?;
            }
        }
        if self.vc.trace_csv.is_some() != self.vc.vehicles_csv.is_some() {
            return bad("vc.trace_csv and vc.vehicles_csv must be given together".into());
        }
        self.channel.params.check().map_err(|e| BenchError::Config(e.to_string()))?;
        self.rfid.check().map_err(|e| BenchError::Config(e.to_string()))?;
        self.mga.check().map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    /// Generator settings with the sweep axis set to `value`.
    pub fn cell(&self, value: f64) -> (DagGenParams, SyntheticTraceParams) {
        let mut dag = self.dag.clone();
        let mut vc = self.vc.synthetic.clone();
        match self.experiment.axis {
            Axis::NSubtasks => dag.n_subtasks = value as usize,
            Axis::NVehicles => vc.n_vehicles = value as usize,
            Axis::NLayers => dag.n_layers = value as usize,
            Axis::Ccr => dag.ccr = value,
        }
        (dag, vc)
    }

    pub fn scheduler(&self, name: &str) -> Result<Box<dyn Scheduler>, BenchError> {
        Ok(match name {
            "rfid" => Box::new(Rfid::new(self.rfid.clone())),
            "heft" => Box::new(Heft),
            "la" => Box::new(Lookahead),
            "mga" => Box::new(Mga::new(self.mga.clone())),
            "brute_force" => Box::new(BruteForce),
            other => return Err(BenchError::Config(format!("unknown scheduler {other:?}"))),
        })
    }
}

fn unknown_keys(raw: &toml::Value, known: &toml::Value, prefix: &str) -> Result<(), BenchError> {
    if let (toml::Value::Table(r), toml::Value::Table(k)) = (raw, known) {
        for (key, value) in r {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                None => return Err(BenchError::Config(format!("unknown config key {path}"))),
                Some(inner) => unknown_keys(value, inner, &path)?,
            }
        }
    }
    Ok(())
}

/// Mixes a base seed with a cell and trial index into an independent 64-bit seed.
pub fn derive_seed(base: u64, cell: usize, trial: usize) -> u64 {
    let mut z = base ^ (cell as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (trial as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// One generated problem instance shared by every scheduler of a trial.
#[derive(Debug, Clone)]
pub struct Instance {
    pub value: f64,
    pub seed: u64,
    pub dag: Dag,
    pub trace: MobilityTrace,
    pub dag_params: DagGenParams,
}

impl Instance {
    /// Random stream handed to the scheduler; independent of the instance stream.
    pub fn scheduler_rng(&self) -> SimRng {
        SimRng::seed_from_u64(derive_seed(self.seed, usize::MAX, 0))
    }
}

/// Builds the instance of trial `trial` in cell `cell`. A recorded trace, when configured, is
/// shared by all instances.
pub fn build_instance(
    cfg: &ExperimentConfig,
    cell: usize,
    trial: usize,
    recorded: Option<&MobilityTrace>,
) -> Result<Instance, BenchError> {
    let value = cfg.experiment.values[cell];
    let seed = derive_seed(cfg.experiment.base_seed, cell, trial);
    let (dag_params, vc) = cfg.cell(value);
    let mut rng = SimRng::seed_from_u64(seed);
    let dag = validate(&generate_random_dag(&dag_params, &mut rng)?)?;
    let trace = match recorded {
        Some(t) => t.clone(),
        None => generate_synthetic_trace(&vc, &mut rng)?,
    };
    Ok(Instance { value, seed, dag, trace, dag_params })
}

pub fn load_recorded_trace(cfg: &ExperimentConfig) -> Result<Option<MobilityTrace>, BenchError> {
    match (&cfg.vc.trace_csv, &cfg.vc.vehicles_csv) {
        (Some(t), Some(v)) => {
            let vehicles = load_vehicles_csv(v)?;
            Ok(Some(load_trace_csv(t, vehicles)?))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheduler: String,
    pub axis: Axis,
    pub value: f64,
    pub seed: u64,
    pub n_subtasks: usize,
    pub n_vehicles: usize,
    pub n_layers: usize,
    pub ccr: f64,
    pub otc_s: Option<f64>,
    pub success: u8,
    pub sched_runtime_ms: Option<f64>,
}

/// Runs every scheduler of the config on every instance of the sweep. Rows come out in
/// (cell, trial, scheduler) order whatever the thread count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>, BenchError> {
    cfg.check()?;
    let recorded = load_recorded_trace(cfg)?;
    let schedulers: Vec<Box<dyn Scheduler>> =
        cfg.experiment.schedulers.iter().map(|s| cfg.scheduler(s)).collect::<Result<_, _>>()?;
    let channel = cfg.channel.channel();
    let jobs: Vec<(usize, usize)> = (0..cfg.experiment.values.len())
        .flat_map(|c| (0..cfg.experiment.trials).map(move |t| (c, t)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(cell, trial)| {
                let inst = build_instance(cfg, cell, trial, recorded.as_ref())?;
                let problem = Problem::new(&inst.dag, &inst.trace, &channel);
                Ok(schedulers
                    .iter()
                    .map(|s| {
                        let mut rng = inst.scheduler_rng();
                        let out = run_trial(&problem, s.as_ref(), &mut rng);
                        MetricsRow {
                            scheduler: s.name().to_string(),
                            axis: cfg.experiment.axis,
                            value: inst.value,
                            seed: inst.seed,
                            n_subtasks: inst.dag.len(),
                            n_vehicles: inst.trace.len(),
                            n_layers: inst.dag_params.n_layers,
                            ccr: inst.dag_params.ccr,
                            otc_s: out.otc,
                            success: out.success as u8,
                            sched_runtime_ms: cfg.experiment.record_runtime.then_some(out.sched_runtime_s * 1e3),
                        }
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, BenchError>>()
    };
    let nested = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BenchError::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(nested.into_iter().flatten().collect())
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_otc: Option<f64>,
    pub ci95_otc: Option<f64>,
    pub mean_runtime_ms: Option<f64>,
}

/// Summary keyed by scheduler, then axis value.
pub type Summary = BTreeMap<String, BTreeMap<String, CellSummary>>;

fn sorted_mean(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-cell statistics. Values are sorted before summation, so the result does not depend
/// on row order.
pub fn aggregate(rows: &[MetricsRow]) -> Result<Summary, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<&MetricsRow>>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.scheduler.clone()).or_default().entry(value_key(r.value)).or_default().push(r);
    }
    let mut out = Summary::new();
    for (sched, cells) in groups {
        let entry = out.entry(sched).or_default();
        for (value, rs) in cells {
            let otcs: Vec<f64> = rs.iter().filter(|r| r.success == 1).filter_map(|r| r.otc_s).collect();
            let k = otcs.len();
            let mean = sorted_mean(otcs.clone());
            let ci = mean.map(|m| {
                if k < 2 {
                    0.0
                } else {
                    let mut sq: Vec<f64> = otcs.iter().map(|x| (x - m).powi(2)).collect();
                    sq.sort_by(f64::total_cmp);
                    let var = sq.iter().sum::<f64>() / (k - 1) as f64;
                    1.96 * var.sqrt() / (k as f64).sqrt()
                }
            });
            let runtime = sorted_mean(rs.iter().filter_map(|r| r.sched_runtime_ms).collect());
            entry.insert(
                value,
                CellSummary {
                    trials: rs.len(),
                    successes: k,
                    success_rate: k as f64 / rs.len() as f64,
                    mean_otc: mean,
                    ci95_otc: ci,
                    mean_runtime_ms: runtime,
                },
            );
        }
    }
    Ok(out)
}

pub fn value_key(v: f64) -> String {
    format!("{v}")
}

pub fn write_results_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.scheduler.clone(),
            r.axis.to_string(),
            r.value.to_string(),
            r.seed.to_string(),
            r.n_subtasks.to_string(),
            r.n_vehicles.to_string(),
            r.n_layers.to_string(),
            r.ccr.to_string(),
            opt(r.otc_s),
            r.success.to_string(),
            opt(r.sched_runtime_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(BenchError::Data(format!("unexpected results header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> BenchError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => BenchError::Io(io),
            other => BenchError::Data(format!("{other:?}")),
        }
    } else {
        BenchError::Data(e.to_string())
    }
}

pub fn write_summary_json(summary: &Summary, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| BenchError::Data(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `results.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_outputs(rows: &[MetricsRow], dir: impl AsRef<Path>) -> Result<Summary, BenchError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_results_csv(rows, dir.join("results.csv"))?;
    let summary = aggregate(rows)?;
    write_summary_json(&summary, dir.join("summary.json"))?;
    Ok(summary)
}
