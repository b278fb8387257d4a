//! Monte-Carlo execution of the team lifecycle: agents act, the supervisor
//! scores their paths, eliminates a subset, and the survivors attempt the
//! covert task.
//!
//! Randomness comes from ChaCha8 with one stream per (episode, agent,
//! round), so results do not depend on scheduling or thread count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use shotgun_core::path::LlrTable;
use shotgun_core::supervisor::{belief_update_with, eliminate_general, eliminate_greedy};
use shotgun_core::synthesis::Parallel;
use shotgun_core::{Mdp, PathRecord, Result, StateId, StationaryPolicy, TeamProblem};

pub const DEFAULT_MAX_STEPS: usize = 100_000;

/// Trials per random stream in [`empirical_kl`] and per reduction chunk.
const CHUNK: usize = 1024;

/// Uniform draw in `[0, 1)` with 53 random bits.
fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick(rng: &mut impl RngCore, weights: impl Iterator<Item = f64>) -> usize {
    let u = unit(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    last
}

/// Generator for one substream.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Sample a path: draw an action from the policy, then a successor, until
/// an absorbing state or `max_steps` transitions.
pub fn sample_path_with(m: &Mdp, pol: &StationaryPolicy, rng: &mut impl RngCore, max_steps: usize) -> PathRecord {
    let mut s = m.initial();
    let mut states = vec![s];
    for _ in 0..max_steps {
        if m.is_absorbing(s) {
            return PathRecord::new(states, false);
        }
        let a = pick(rng, pol.dist(s).iter().copied());
        let succ = &m.actions(s)[a].successors;
        let q = succ[pick(rng, succ.iter().map(|e| e.1))].0;
        states.push(q);
        s = q;
    }
    let truncated = !m.is_absorbing(s);
    PathRecord::new(states, truncated)
}

pub fn sample_path(m: &Mdp, pol: &StationaryPolicy, seed: u64, max_steps: usize) -> PathRecord {
    sample_path_with(m, pol, &mut stream(seed, 0), max_steps)
}

/// Mean and standard error of the path log-likelihood ratio between `dec`
/// and `reference` over `trials` paths drawn under `dec`.
///
/// Errors with `InfeasibleUnderReference` if a sampled transition has zero
/// reference probability.
pub fn empirical_kl<P: Parallel>(
    dec: &StationaryPolicy,
    reference: &StationaryPolicy,
    m: &Mdp,
    trials: usize,
    seed: u64,
    exec: &P,
) -> Result<(f64, f64)> {
    let table = LlrTable::new(m, dec, reference)?;
    let chunks = trials.div_ceil(CHUNK);
    let partial = exec.map_indexed(chunks, &|c| -> Result<Moments> {
        let mut rng = stream(seed, c as u64);
        let count = CHUNK.min(trials - c * CHUNK);
        let mut acc = Moments::default();
        for _ in 0..count {
            let path = sample_path_with(m, dec, &mut rng, DEFAULT_MAX_STEPS);
            acc.push(path.llr(&table)?);
        }
        Ok(acc)
    });
    let mut total = Moments::default();
    for p in partial {
        total.merge(&p?);
    }
    Ok(total.mean_and_error())
}

/// Running count, mean and centered sum of squares (Welford), mergeable
/// across chunks.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn mean_and_error(&self) -> (f64, f64) {
        if self.n < 2.0 {
            return (self.mean, 0.0);
        }
        let var = (self.m2 / (self.n - 1.0)).max(0.0);
        (self.mean, (var / self.n).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// `m_r` observed paths per agent.
    pub paths: Vec<Vec<PathRecord>>,
    /// Posterior honesty belief per agent.
    pub beliefs: Vec<f64>,
    pub eliminated: Vec<usize>,
    /// Whether some surviving agent reached its targets while executing.
    pub survivor_success: bool,
    /// Per-agent flag: the execution path reached the agent's targets.
    pub reached: Vec<bool>,
    /// Observed paths that hit the step cap and were left out of beliefs.
    pub truncated: usize,
    pub seed: u64,
    pub episode: u64,
}

/// Shared, precomputed state for running many episodes.
pub struct EpisodeRunner<'a> {
    problem: &'a TeamProblem,
    policies: &'a [StationaryPolicy],
    tables: Vec<LlrTable>,
    capacity: f64,
    max_steps: usize,
}

impl<'a> EpisodeRunner<'a> {
    /// The supervisor scores each agent against the policy it actually runs.
    pub fn new(problem: &'a TeamProblem, policies: &'a [StationaryPolicy], capacity: f64, max_steps: usize) -> Result<Self> {
        Self::with_hypotheses(problem, policies, policies, capacity, max_steps)
    }

    /// Score paths against user-supplied alternative hypotheses instead.
    pub fn with_hypotheses(
        problem: &'a TeamProblem,
        policies: &'a [StationaryPolicy],
        hypotheses: &[StationaryPolicy],
        capacity: f64,
        max_steps: usize,
    ) -> Result<Self> {
        let n = problem.agents.len();
        if policies.len() != n || hypotheses.len() != n {
            return Err(shotgun_core::Error::InvalidParams(format!(
                "{n} agents but {} policies and {} hypotheses",
                policies.len(),
                hypotheses.len()
            )));
        }
        let mut tables = Vec::with_capacity(n);
        for (i, agent) in problem.agents.iter().enumerate() {
            policies[i].validate_for(&agent.mdp)?;
            tables.push(LlrTable::new(&agent.mdp, &hypotheses[i], &agent.reference)?);
        }
        Ok(Self { problem, policies, tables, capacity, max_steps })
    }

    fn stream_id(&self, episode: u64, agent: usize, round: u32) -> u64 {
        let rounds = self.problem.m_r as u64 + 1;
        (episode * self.problem.agents.len() as u64 + agent as u64) * rounds + round as u64
    }

    pub fn run(&self, seed: u64, episode: u64) -> Result<EpisodeOutcome> {
        let agents = &self.problem.agents;
        let n = agents.len();
        let mut paths = Vec::with_capacity(n);
        let mut beliefs = Vec::with_capacity(n);
        let mut truncated = 0;
        for (i, agent) in agents.iter().enumerate() {
            let mut observed = Vec::with_capacity(self.problem.m_r as usize);
            for r in 0..self.problem.m_r {
                let mut rng = stream(seed, self.stream_id(episode, i, r));
                observed.push(sample_path_with(&agent.mdp, &self.policies[i], &mut rng, self.max_steps));
            }
            let complete: Vec<PathRecord> = observed.iter().filter(|p| !p.truncated).cloned().collect();
            truncated += observed.len() - complete.len();
            beliefs.push(belief_update_with(agent.prior, &complete, &self.tables[i])?);
            paths.push(observed);
        }
        let eliminated = self.eliminate(&beliefs)?;
        let mut reached = Vec::with_capacity(n);
        for (i, agent) in agents.iter().enumerate() {
            let mut rng = stream(seed, self.stream_id(episode, i, self.problem.m_r));
            let exec = sample_path_with(&agent.mdp, &self.policies[i], &mut rng, self.max_steps);
            reached.push(!exec.truncated && reached_targets(&exec, &agent.targets));
        }
        let survivor_success = (0..n).any(|i| reached[i] && !eliminated.contains(&i));
        Ok(EpisodeOutcome { paths, beliefs, eliminated, survivor_success, reached, truncated, seed, episode })
    }

    fn eliminate(&self, beliefs: &[f64]) -> Result<Vec<usize>> {
        let utilities: Vec<f64> = self.problem.agents.iter().map(|a| a.utility).collect();
        let v = utilities[0];
        if utilities.iter().all(|&u| u == v) {
            if v == 0.0 {
                return Ok((0..beliefs.len()).collect());
            }
            Ok(eliminate_greedy(beliefs, self.capacity / v))
        } else {
            eliminate_general(beliefs, &utilities, self.capacity)
        }
    }
}

fn reached_targets(path: &PathRecord, targets: &[StateId]) -> bool {
    path.visits(targets)
}

/// Run one episode with a fresh runner.
pub fn run_episode(
    problem: &TeamProblem,
    policies: &[StationaryPolicy],
    capacity: f64,
    seed: u64,
) -> Result<EpisodeOutcome> {
    EpisodeRunner::new(problem, policies, capacity, DEFAULT_MAX_STEPS)?.run(seed, 0)
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentAggregate {
    pub agent: usize,
    pub mean_belief: f64,
    pub elimination_frequency: f64,
    pub reach_frequency: f64,
    /// Counts of final beliefs in equal-width bins over `[0, 1]`.
    pub belief_histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub seed: u64,
    pub capacity: f64,
    pub successes: u64,
    pub success_rate: f64,
    pub success_std_err: f64,
    pub truncated_paths: u64,
    pub agents: Vec<AgentAggregate>,
}

#[derive(Clone)]
struct Partial {
    successes: u64,
    truncated: u64,
    belief_sum: Vec<f64>,
    eliminated: Vec<u64>,
    reached: Vec<u64>,
    hist: Vec<Vec<u64>>,
}

impl Partial {
    fn new(n: usize) -> Self {
        Self {
            successes: 0,
            truncated: 0,
            belief_sum: vec![0.0; n],
            eliminated: vec![0; n],
            reached: vec![0; n],
            hist: vec![vec![0; HISTOGRAM_BINS]; n],
        }
    }

    fn add(&mut self, o: &EpisodeOutcome) {
        self.successes += o.survivor_success as u64;
        self.truncated += o.truncated as u64;
        for (i, &b) in o.beliefs.iter().enumerate() {
            self.belief_sum[i] += b;
            let bin = ((b * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            self.hist[i][bin] += 1;
            self.reached[i] += o.reached[i] as u64;
        }
        for &i in &o.eliminated {
            self.eliminated[i] += 1;
        }
    }

    fn merge(&mut self, other: &Partial) {
        self.successes += other.successes;
        self.truncated += other.truncated;
        for i in 0..self.belief_sum.len() {
            self.belief_sum[i] += other.belief_sum[i];
            self.eliminated[i] += other.eliminated[i];
            self.reached[i] += other.reached[i];
            for b in 0..HISTOGRAM_BINS {
                self.hist[i][b] += other.hist[i][b];
            }
        }
    }
}

/// Run `trials` episodes and reduce them in episode order.
pub fn simulate<P: Parallel>(
    runner: &EpisodeRunner<'_>,
    trials: usize,
    seed: u64,
    exec: &P,
) -> Result<Aggregates> {
    let n = runner.problem.agents.len();
    let chunks = trials.div_ceil(CHUNK);
    let partial = exec.map_indexed(chunks, &|c| -> Result<Partial> {
        let mut acc = Partial::new(n);
        let end = trials.min((c + 1) * CHUNK);
        for e in c * CHUNK..end {
            acc.add(&runner.run(seed, e as u64)?);
        }
        Ok(acc)
    });
    let mut total = Partial::new(n);
    for p in partial {
        total.merge(&p?);
    }
    let denom = trials.max(1) as f64;
    let rate = total.successes as f64 / denom;
    let std_err = if trials > 0 { (rate * (1.0 - rate) / denom).sqrt() } else { 0.0 };
    let agents = (0..n)
        .map(|i| AgentAggregate {
            agent: i,
            mean_belief: if trials > 0 { total.belief_sum[i] / denom } else { 0.0 },
            elimination_frequency: total.eliminated[i] as f64 / denom,
            reach_frequency: total.reached[i] as f64 / denom,
            belief_histogram: total.hist[i].clone(),
        })
        .collect();
    Ok(Aggregates {
        episodes: trials,
        seed,
        capacity: runner.capacity,
        successes: total.successes,
        success_rate: if trials > 0 { rate } else { 0.0 },
        success_std_err: std_err,
        truncated_paths: total.truncated,
        agents,
    })
}
