use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::{VehicleId, OWNER};
use crate::sched::{
    commit_or_fail, scheduling_time, start, Assignment, Failure, FailureCause, Problem, ScheduleState, Scheduler,
    SimRng,
};

#[derive(Debug, Error, PartialEq)]
pub enum MgaError {
    #[error("invalid genetic algorithm configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MgaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elite: usize,
}

impl Default for MgaConfig {
    fn default() -> Self {
        Self { population: 50, generations: 100, crossover_rate: 0.8, mutation_rate: 0.1, elite: 2 }
    }
}

impl MgaConfig {
    pub fn check(&self) -> Result<(), MgaError> {
        if self.population < 2 {
            return Err(MgaError::InvalidConfig("population must be at least 2".into()));
        }
        if self.elite >= self.population {
            return Err(MgaError::InvalidConfig("elite must be smaller than the population".into()));
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(MgaError::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Vehicle per subtask, indexed by position in the topological order.
pub type Chromosome = Vec<VehicleId>;

/// Genetic search over subtask-to-vehicle maps. Chromosomes are decoded in topological order
/// with the shared scheduling calculus; fitness is the completion time, infinite when a gene
/// violates a link or presence constraint.
#[derive(Debug, Clone, Default)]
pub struct Mga {
    pub config: MgaConfig,
    /// Chromosomes placed in the initial population before random ones.
    pub seeds: Vec<Chromosome>,
}

impl Mga {
    pub fn new(config: MgaConfig) -> Self {
        Self { config, seeds: Vec::new() }
    }

    pub fn with_seeds(mut self, seeds: Vec<Chromosome>) -> Self {
        self.seeds = seeds;
        self
    }

    /// Decodes a chromosome into a schedule, stopping at the first infeasible gene.
    pub fn decode(problem: &Problem<'_>, genes: &[VehicleId]) -> Result<Assignment, Failure> {
        let Problem { dag, trace, channel } = *problem;
        let mut state = ScheduleState::new(dag, trace);
        start(&mut state, channel)?;
        for (pos, &n) in dag.topo_order().iter().enumerate() {
            if n == dag.entry() {
                continue;
            }
            let st = scheduling_time(n, &state).expect("topological order");
            let snap = problem.snapshot(st);
            commit_or_fail(n, genes[pos], &mut state, &snap, channel)?;
        }
        Ok(state.into_assignment())
    }

    fn fitness(problem: &Problem<'_>, genes: &[VehicleId]) -> f64 {
        match Self::decode(problem, genes) {
            Ok(a) => a.otc(problem.dag).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    }

    fn run(&self, problem: &Problem<'_>, rng: &mut SimRng) -> Result<Assignment, Failure> {
        let dag = problem.dag;
        let cfg = &self.config;
        let snap0 = problem.snapshot(0.0);
        let present = snap0.present();
        if !snap0.is_present(OWNER) {
            return Err(Failure::new(dag.entry(), 0.0, FailureCause::OwnerAbsent));
        }
        let len = dag.len();
        let pos_of: Vec<usize> = {
            let mut v = vec![0; len];
            for (i, &n) in dag.topo_order().iter().enumerate() {
                v[n] = i;
            }
            v
        };
        let entry_pos = pos_of[dag.entry()];
        let random = |rng: &mut SimRng| -> Chromosome {
            (0..len).map(|i| if i == entry_pos { OWNER } else { *present.choose(rng).expect("owner present") }).collect()
        };

        let mut pop: Vec<Chromosome> = self.seeds.iter().filter(|c| c.len() == len).take(cfg.population).cloned().collect();
        while pop.len() < cfg.population {
            pop.push(random(rng));
        }
        let mut fit: Vec<f64> = pop.iter().map(|c| Self::fitness(problem, c)).collect();

        // One-hop adjacency at time zero, self included.
        let n_veh = problem.trace.len();
        let mut adj = vec![false; n_veh * n_veh];
        for &a in &present {
            for &b in &present {
                adj[a.0 * n_veh + b.0] = a == b || snap0.is_linked(a, b);
            }
        }
        // Inherited genes that lost range to a changed predecessor host are redrawn among
        // vehicles in range of all predecessor hosts.
        let repair = |child: &mut Chromosome, source: &Chromosome, from: usize, rng: &mut SimRng| {
            for i in from..len {
                let n = dag.topo_order()[i];
                let preds = dag.preds(n);
                let changed = preds.iter().any(|&(j, _)| child[pos_of[j]] != source[pos_of[j]]);
                let in_range = |q: VehicleId| preds.iter().all(|&(j, _)| adj[child[pos_of[j]].0 * n_veh + q.0]);
                if !changed || in_range(child[i]) {
                    continue;
                }
                let count = present.iter().filter(|&&q| in_range(q)).count();
                child[i] = if count == 0 {
                    *present.choose(rng).expect("owner present")
                } else {
                    let k = rng.random_range(0..count);
                    present.iter().copied().filter(|&q| in_range(q)).nth(k).expect("k < count")
                };
            }
        };

        for _ in 0..cfg.generations {
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
            let mut next: Vec<Chromosome> = order.iter().take(cfg.elite).map(|&i| pop[i].clone()).collect();
            let tournament = |rng: &mut SimRng| -> usize {
                let (a, b) = (rng.random_range(0..pop.len()), rng.random_range(0..pop.len()));
                if fit[b] < fit[a] { b } else { a }
            };
            while next.len() < cfg.population {
                let (pa, pb) = (tournament(rng), tournament(rng));
                let (mut c1, mut c2) = (pop[pa].clone(), pop[pb].clone());
                if len > 2 && rng.random_bool(cfg.crossover_rate) {
                    let cut = rng.random_range(1..len);
                    for i in cut..len {
                        std::mem::swap(&mut c1[i], &mut c2[i]);
                    }
                    repair(&mut c1, &pop[pb], cut, rng);
                    repair(&mut c2, &pop[pa], cut, rng);
                }
                for c in [&mut c1, &mut c2] {
                    for (i, g) in c.iter_mut().enumerate() {
                        if i != entry_pos && rng.random_bool(cfg.mutation_rate) {
                            *g = *present.choose(rng).expect("owner present");
                        }
                    }
                }
                next.push(c1);
                if next.len() < cfg.population {
                    next.push(c2);
                }
            }
            fit = next.iter().map(|c| Self::fitness(problem, c)).collect();
            pop = next;
        }
        let best = (0..pop.len()).min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b))).expect("population");
        Self::decode(problem, &pop[best])
    }
}

impl Scheduler for Mga {
    fn name(&self) -> &str {
        "mga"
    }

    fn schedule(&self, problem: &Problem<'_>, rng: &mut SimRng) -> Result<Assignment, Failure> {
        self.run(problem, rng)
    }
}
