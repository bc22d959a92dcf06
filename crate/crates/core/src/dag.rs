//! Application task graphs: structure, validation, random generation and file I/O.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DagError {
    #[error("cycle detected through subtasks {0:?}")]
    CycleDetected(Vec<String>),
    #[error("multiple entry subtasks {0:?}")]
    MultipleEntries(Vec<String>),
    #[error("multiple exit subtasks {0:?}")]
    MultipleExits(Vec<String>),
    #[error("subtasks {0:?} are disconnected from the entry/exit")]
    DisconnectedSubtask(Vec<String>),
    #[error("empty task graph")]
    Empty,
    #[error("invalid weight on {what}: {reason}")]
    InvalidWeight { what: String, reason: String },
    #[error("cannot place {n_subtasks} subtasks into {n_layers} layers")]
    InfeasibleLayering { n_subtasks: usize, n_layers: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    /// CPU cycles. Zero only for virtual entry/exit subtasks.
    #[serde(rename = "workload_cycles")]
    pub workload: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagEdge {
    pub src: String,
    pub dst: String,
    /// Output data carried from `src` to `dst`.
    pub bits: f64,
}

/// Raw task graph as authored or loaded from disk. See [`validate`] for the checked form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DagTask {
    #[serde(rename = "nodes")]
    pub subtasks: Vec<Subtask>,
    pub edges: Vec<DagEdge>,
}

impl DagTask {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_subtask(mut self, id: &str, workload: f64) -> Self {
        self.subtasks.push(Subtask { id: id.to_string(), workload });
        self
    }

    pub fn with_edge(mut self, src: &str, dst: &str, bits: f64) -> Self {
        self.edges.push(DagEdge { src: src.to_string(), dst: dst.to_string(), bits });
        self
    }

    /// Edge set as sorted `(src, dst, bits)` triples, for structural comparison.
    pub fn edge_set(&self) -> Vec<(String, String, u64)> {
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| (e.src.clone(), e.dst.clone(), e.bits.to_bits()))
            .collect();
        edges.sort();
        edges
    }
}

/// A task graph whose structural invariants have been checked. Subtasks are addressed by
/// dense indices in authoring order.
#[derive(Debug, Clone)]
pub struct Dag {
    ids: Vec<String>,
    workloads: Vec<f64>,
    preds: Vec<Vec<(usize, f64)>>,
    succs: Vec<Vec<(usize, f64)>>,
    entry: usize,
    exit: usize,
    topo: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Dag {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, n: usize) -> &str {
        &self.ids[n]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn workload(&self, n: usize) -> f64 {
        self.workloads[n]
    }

    /// Immediate predecessors with the bits each one sends to `n`.
    pub fn preds(&self, n: usize) -> &[(usize, f64)] {
        &self.preds[n]
    }

    /// Immediate successors with the bits `n` sends to each.
    pub fn succs(&self, n: usize) -> &[(usize, f64)] {
        &self.succs[n]
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    pub fn exit(&self) -> usize {
        self.exit
    }

    /// A topological order (Kahn's algorithm, smallest index first).
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn edge_bits(&self, src: usize, dst: usize) -> Option<f64> {
        self.succs[src].iter().find(|(d, _)| *d == dst).map(|(_, b)| *b)
    }

    /// Largest number of immediate successors of any subtask.
    pub fn max_out_degree(&self) -> usize {
        self.succs.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn to_task(&self) -> DagTask {
        let mut task = DagTask::new();
        for n in 0..self.len() {
            task.subtasks.push(Subtask { id: self.ids[n].clone(), workload: self.workloads[n] });
        }
        for n in 0..self.len() {
            for &(d, bits) in &self.succs[n] {
                task.edges.push(DagEdge { src: self.ids[n].clone(), dst: self.ids[d].clone(), bits });
            }
        }
        task
    }

    /// Transposed graph (edges reversed); entry and exit swap roles.
    pub fn transpose(&self) -> Dag {
        let mut t = self.clone();
        std::mem::swap(&mut t.preds, &mut t.succs);
        std::mem::swap(&mut t.entry, &mut t.exit);
        t.topo = kahn(&t.preds, &t.succs).expect("transpose of a DAG is acyclic");
        t
    }
}

struct Indexed {
    index: HashMap<String, usize>,
    preds: Vec<Vec<(usize, f64)>>,
    succs: Vec<Vec<(usize, f64)>>,
}

fn index_task(task: &DagTask) -> Result<Indexed, DagError> {
    let mut index = HashMap::new();
    for (i, s) in task.subtasks.iter().enumerate() {
        if index.insert(s.id.clone(), i).is_some() {
            return Err(DagError::Parse {
                location: format!("nodes[{i}].id"),
                message: format!("duplicate subtask id {:?}", s.id),
            });
        }
    }
    let n = task.subtasks.len();
    let mut preds = vec![Vec::new(); n];
    let mut succs = vec![Vec::new(); n];
    for (k, e) in task.edges.iter().enumerate() {
        let lookup = |id: &str, field: &str| {
            index.get(id).copied().ok_or_else(|| DagError::Parse {
                location: format!("edges[{k}].{field}"),
                message: format!("unknown subtask id {id:?}"),
            })
        };
        let s = lookup(&e.src, "src")?;
        let d = lookup(&e.dst, "dst")?;
        if s == d {
            return Err(DagError::CycleDetected(vec![e.src.clone()]));
        }
        if succs[s].iter().any(|(x, _)| *x == d) {
            return Err(DagError::Parse {
                location: format!("edges[{k}]"),
                message: format!("duplicate edge {} -> {}", e.src, e.dst),
            });
        }
        succs[s].push((d, e.bits));
        preds[d].push((s, e.bits));
    }
    Ok(Indexed { index, preds, succs })
}

fn kahn(preds: &[Vec<(usize, f64)>], succs: &[Vec<(usize, f64)>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = preds.len();
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut frontier: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = frontier.pop_first() {
        order.push(u);
        for &(v, _) in &succs[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                frontier.insert(v);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&i| indeg[i] > 0).collect())
    }
}

fn names(task: &DagTask, idx: impl IntoIterator<Item = usize>) -> Vec<String> {
    idx.into_iter().map(|i| task.subtasks[i].id.clone()).collect()
}

/// Checks every structural invariant of the task graph and returns the indexed form.
pub fn validate(task: &DagTask) -> Result<Dag, DagError> {
    if task.subtasks.is_empty() {
        return Err(DagError::Empty);
    }
    let Indexed { index, preds, succs } = index_task(task)?;
    let n = task.subtasks.len();

    let topo = kahn(&preds, &succs).map_err(|stuck| DagError::CycleDetected(names(task, stuck)))?;

    if n > 1 {
        let isolated: Vec<usize> = (0..n).filter(|&i| preds[i].is_empty() && succs[i].is_empty()).collect();
        if !isolated.is_empty() {
            return Err(DagError::DisconnectedSubtask(names(task, isolated)));
        }
    }
    let sources: Vec<usize> = (0..n).filter(|&i| preds[i].is_empty()).collect();
    if sources.len() > 1 {
        return Err(DagError::MultipleEntries(names(task, sources)));
    }
    let sinks: Vec<usize> = (0..n).filter(|&i| succs[i].is_empty()).collect();
    if sinks.len() > 1 {
        return Err(DagError::MultipleExits(names(task, sinks)));
    }
    let (entry, exit) = (sources[0], sinks[0]);

    let forward = reach(entry, &succs);
    let backward = reach(exit, &preds);
    let stray: Vec<usize> = (0..n).filter(|&i| !forward[i] || !backward[i]).collect();
    if !stray.is_empty() {
        return Err(DagError::DisconnectedSubtask(names(task, stray)));
    }

    let endpoint = |i: usize| i == entry || i == exit;
    for (i, s) in task.subtasks.iter().enumerate() {
        if !s.workload.is_finite() || s.workload < 0.0 {
            return Err(DagError::InvalidWeight {
                what: format!("subtask {}", s.id),
                reason: format!("workload {} is not a non-negative finite number", s.workload),
            });
        }
        if s.workload == 0.0 && !endpoint(i) {
            return Err(DagError::InvalidWeight {
                what: format!("subtask {}", s.id),
                reason: "zero workload is reserved for virtual entry/exit subtasks".into(),
            });
        }
    }
    let is_virtual = |i: usize| endpoint(i) && task.subtasks[i].workload == 0.0;
    for e in &task.edges {
        let (s, d) = (index[&e.src], index[&e.dst]);
        if !e.bits.is_finite() || e.bits < 0.0 {
            return Err(DagError::InvalidWeight {
                what: format!("edge {} -> {}", e.src, e.dst),
                reason: format!("data size {} is not a non-negative finite number", e.bits),
            });
        }
        if e.bits == 0.0 && !is_virtual(s) && !is_virtual(d) {
            return Err(DagError::InvalidWeight {
                what: format!("edge {} -> {}", e.src, e.dst),
                reason: "zero data size is reserved for edges of virtual entry/exit subtasks".into(),
            });
        }
    }

    Ok(Dag {
        ids: task.subtasks.iter().map(|s| s.id.clone()).collect(),
        workloads: task.subtasks.iter().map(|s| s.workload).collect(),
        preds,
        succs,
        entry,
        exit,
        topo,
        index,
    })
}

fn reach(start: usize, adj: &[Vec<(usize, f64)>]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

pub const VIRTUAL_ENTRY: &str = "__entry";
pub const VIRTUAL_EXIT: &str = "__exit";

/// Joins multiple sources (sinks) under one zero-workload virtual entry (exit) connected by
/// zero-data edges. Single-source single-sink graphs come back unchanged.
pub fn normalize_endpoints(task: &DagTask) -> Result<DagTask, DagError> {
    if task.subtasks.is_empty() {
        return Err(DagError::Empty);
    }
    let Indexed { preds, succs, .. } = index_task(task)?;
    kahn(&preds, &succs).map_err(|stuck| DagError::CycleDetected(names(task, stuck)))?;

    let n = task.subtasks.len();
    let sources: Vec<usize> = (0..n).filter(|&i| preds[i].is_empty()).collect();
    let sinks: Vec<usize> = (0..n).filter(|&i| succs[i].is_empty()).collect();

    let mut out = task.clone();
    if sources.len() > 1 {
        let id = fresh_id(task, VIRTUAL_ENTRY);
        out.subtasks.insert(0, Subtask { id: id.clone(), workload: 0.0 });
        for &s in &sources {
            out.edges.push(DagEdge { src: id.clone(), dst: task.subtasks[s].id.clone(), bits: 0.0 });
        }
    }
    if sinks.len() > 1 {
        let id = fresh_id(task, VIRTUAL_EXIT);
        out.subtasks.push(Subtask { id: id.clone(), workload: 0.0 });
        for &s in &sinks {
            out.edges.push(DagEdge { src: task.subtasks[s].id.clone(), dst: id.clone(), bits: 0.0 });
        }
    }
    Ok(out)
}

fn fresh_id(task: &DagTask, base: &str) -> String {
    let taken = |c: &str| task.subtasks.iter().any(|s| s.id == c);
    let mut id = base.to_string();
    let mut k = 1;
    while taken(&id) {
        id = format!("{base}{k}");
        k += 1;
    }
    id
}

/// Random layered DAG generator settings. Variances are relative: the standard deviation of
/// a draw is `var * mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DagGenParams {
    pub n_subtasks: usize,
    pub n_layers: usize,
    pub ccr: f64,
    pub workload_mean: f64,
    pub workload_var: f64,
    /// Mean edge data size at `ccr = 1`; sizes scale linearly with `ccr`.
    pub data_mean: f64,
    pub data_var: f64,
    pub max_preds: usize,
}

impl Default for DagGenParams {
    fn default() -> Self {
        Self {
            n_subtasks: 50,
            n_layers: 10,
            ccr: 1.0,
            workload_mean: 3.0e6,
            workload_var: 0.2,
            data_mean: 1.2e6,
            data_var: 0.2,
            max_preds: 3,
        }
    }
}

impl DagGenParams {
    pub fn check(&self) -> Result<(), DagError> {
        if self.n_layers < 2 {
            return Err(DagError::InvalidParams("n_layers must be at least 2".into()));
        }
        if self.n_subtasks < self.n_layers || (self.n_layers == 2 && self.n_subtasks != 2) {
            return Err(DagError::InfeasibleLayering { n_subtasks: self.n_subtasks, n_layers: self.n_layers });
        }
        let positive = [
            ("ccr", self.ccr),
            ("workload_mean", self.workload_mean),
            ("data_mean", self.data_mean),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DagError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("workload_var", self.workload_var), ("data_var", self.data_var)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DagError::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.max_preds == 0 {
            return Err(DagError::InvalidParams("max_preds must be at least 1".into()));
        }
        Ok(())
    }

    /// Transfer rate under which a `data_mean` payload takes as long as a `workload_mean`
    /// computation on a `cpu_hz` processor, i.e. the rate that makes `ccr` literal.
    pub fn reference_rate_bps(&self, cpu_hz: f64) -> f64 {
        self.data_mean * cpu_hz / self.workload_mean
    }
}

/// Draws from `Normal(mean, rel_std * mean)`, resampling until the value is positive.
pub fn positive_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, rel_std: f64) -> f64 {
    if rel_std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, rel_std * mean).expect("finite positive std");
    loop {
        let v = normal.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Generates a layered random DAG. Layer 1 holds only the entry and the last layer only the
/// exit; every other subtask draws 1..=`max_preds` predecessors from the layer right above it,
/// and subtasks left without a successor get one edge into the next layer.
pub fn generate_random_dag<R: Rng + ?Sized>(params: &DagGenParams, rng: &mut R) -> Result<DagTask, DagError> {
    params.check()?;
    let layers = layer_sizes(params.n_subtasks, params.n_layers, rng);

    let mut layer_of = Vec::with_capacity(params.n_subtasks);
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
    for (k, &size) in layers.iter().enumerate() {
        let start = layer_of.len();
        members.push((start..start + size).collect());
        layer_of.extend(std::iter::repeat_n(k, size));
    }

    let n = params.n_subtasks;
    let mut pred_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut has_succ = vec![false; n];
    let last = layers.len() - 1;
    for k in 1..layers.len() {
        let above = &members[k - 1];
        for &v in &members[k] {
            let chosen: Vec<usize> = if k == last {
                above.clone()
            } else {
                let count = rng.random_range(1..=params.max_preds.min(above.len()));
                sample(rng, above.len(), count).into_iter().map(|i| above[i]).collect()
            };
            for &u in &chosen {
                has_succ[u] = true;
            }
            pred_sets[v] = chosen;
        }
    }
    for k in 1..last {
        for &u in &members[k] {
            if has_succ[u] {
                continue;
            }
            let below = &members[k + 1];
            let roomy: Vec<usize> = below.iter().copied().filter(|&v| pred_sets[v].len() < params.max_preds).collect();
            let pool = if roomy.is_empty() { below } else { &roomy };
            let v = pool[rng.random_range(0..pool.len())];
            pred_sets[v].push(u);
            has_succ[u] = true;
        }
    }

    let mut task = DagTask::new();
    for i in 0..n {
        let w = positive_normal(rng, params.workload_mean, params.workload_var);
        task.subtasks.push(Subtask { id: format!("n{}", i + 1), workload: w });
    }
    for v in 0..n {
        let mut ps = pred_sets[v].clone();
        ps.sort_unstable();
        for u in ps {
            let bits = positive_normal(rng, params.data_mean, params.data_var) * params.ccr;
            task.edges.push(DagEdge { src: format!("n{}", u + 1), dst: format!("n{}", v + 1), bits });
        }
    }
    Ok(task)
}

fn layer_sizes<R: Rng + ?Sized>(n: usize, layers: usize, rng: &mut R) -> Vec<usize> {
    let mut sizes = vec![1; layers];
    if layers > 2 {
        for _ in 0..(n - layers) {
            let k = rng.random_range(1..layers - 1);
            sizes[k] += 1;
        }
    }
    sizes
}

/// Longest-path layer index of every subtask (entry = 0).
pub fn layer_index(dag: &Dag) -> Vec<usize> {
    let mut layer = vec![0; dag.len()];
    for &u in dag.topo_order() {
        for &(v, _) in dag.succs(u) {
            layer[v] = layer[v].max(layer[u] + 1);
        }
    }
    layer
}

/// Communication-to-computation ratio: mean edge transfer time at `rate_bps` over mean
/// computation time at `cpu_hz`.
pub fn realized_ccr(dag: &Dag, rate_bps: f64, cpu_hz: f64) -> f64 {
    let edges: Vec<f64> = (0..dag.len()).flat_map(|u| dag.succs(u).iter().map(|&(_, b)| b)).collect();
    if edges.is_empty() {
        return 0.0;
    }
    let mean_bits = edges.iter().sum::<f64>() / edges.len() as f64;
    let mean_cycles = (0..dag.len()).map(|n| dag.workload(n)).sum::<f64>() / dag.len() as f64;
    (mean_bits / rate_bps) / (mean_cycles / cpu_hz)
}

pub fn load_dag(path: impl AsRef<Path>) -> Result<DagTask, DagError> {
    let text = fs::read_to_string(path)?;
    parse_dag(&text)
}

/// Parses the JSON task-graph format and checks it structurally.
pub fn parse_dag(text: &str) -> Result<DagTask, DagError> {
    let task: DagTask = serde_json::from_str(text).map_err(|e| DagError::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    validate(&normalize_endpoints(&task)?)?;
    Ok(task)
}

pub fn save_dag(task: &DagTask, path: impl AsRef<Path>) -> Result<(), DagError> {
    let text = serde_json::to_string_pretty(task).expect("task graph serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}
