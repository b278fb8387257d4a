//! The work behind each subcommand, kept out of the binary so it can be
//! driven from tests.

use std::path::Path;

use serde::Serialize;
use shotgun_core::delivery::{node_heat, NodeHeat};
use shotgun_core::refpol::synthesize_reference;
use shotgun_core::synthesis::{deceptive_subset_selection_with, deceptive_synthesis_with, Parallel};
use shotgun_core::{AgentSpec, TeamProblem};

use crate::backend::{ClarabelSolver, Rayon};
use crate::config::{ConfigError, Experiment};
use crate::error::{Result, ShotgunError};
use crate::result::{write_atomic, DecoyReport, RefpolReport, ResultDocument};
use crate::simulate::{simulate, Aggregates, EpisodeRunner, DEFAULT_MAX_STEPS, HISTOGRAM_BINS};

pub fn worst_case<P: Parallel>(exp: &Experiment, solver: &ClarabelSolver, exec: P) -> Result<ResultDocument> {
    let r = deceptive_synthesis_with(&exp.problem, solver, exec)?;
    Ok(ResultDocument::worst_case(&exp.config, &exp.problem.agents, &r))
}

pub fn decoys<P: Parallel>(exp: &Experiment, solver: &ClarabelSolver, exec: P) -> Result<ResultDocument> {
    let r = deceptive_subset_selection_with(&exp.problem, solver, exec)?;
    Ok(ResultDocument::decoys(&exp.config, &exp.problem.agents, &r))
}

pub fn refpol(exp: &Experiment, solver: &ClarabelSolver, exec: Rayon<'_>) -> Result<ResultDocument> {
    let task = exp.task.as_ref().ok_or_else(|| {
        ConfigError::Reference { context: "supervisor".into(), message: "refpol needs a `supervisor` section".into() }
    })?;
    let r = synthesize_reference(&exp.problem, task, solver, exec)?;
    let agents = exp
        .problem
        .agents
        .iter()
        .zip(&r.references)
        .map(|(a, p)| AgentSpec::new(a.mdp.clone(), p.clone(), a.targets.clone(), a.prior, a.utility))
        .collect::<shotgun_core::Result<Vec<_>>>()?;
    let inner = if r.unbounded {
        None
    } else {
        let mut problem = TeamProblem::new(agents.clone(), exp.problem.nu_a);
        problem.epsilon = exp.problem.epsilon;
        problem.gamma_prime = exp.problem.gamma_prime;
        problem.m_r = exp.problem.m_r;
        problem.delta_margin = exp.problem.delta_margin;
        problem.tol = exp.problem.tol;
        Some(deceptive_synthesis_with(&problem, solver, exec)?)
    };
    Ok(ResultDocument::refpol(&exp.config, &agents, &r, inner.as_ref()))
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| ShotgunError::Csv(e.into_error().into()))
}

#[derive(Serialize)]
struct BRow {
    k: usize,
    #[serde(rename = "B_k")]
    b_k: Option<f64>,
    #[serde(rename = "K_k")]
    kl: f64,
    #[serde(rename = "Fail_k")]
    fail: bool,
}

/// `k,B_k,K_k,Fail_k`; failed rows leave `B_k` empty.
pub fn write_b_table(path: &Path, report: &DecoyReport) -> Result<()> {
    let rows = report.b_table.iter().map(|r| BRow { k: r.k, b_k: r.b_k, kl: r.kl_bound, fail: r.fail });
    write_atomic(path, &csv_bytes(rows)?)
}

#[derive(Serialize)]
struct HeatRow<'a> {
    node: &'a str,
    flight_occupancy: f64,
    landed_flow: f64,
}

/// `node,flight_occupancy,landed_flow`.
pub fn write_heat(path: &Path, heat: &[NodeHeat]) -> Result<()> {
    let rows = heat.iter().map(|h| HeatRow { node: &h.node, flight_occupancy: h.flight_occupancy, landed_flow: h.landed_flow });
    write_atomic(path, &csv_bytes(rows)?)
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    objective: Option<f64>,
    accepted: bool,
    step: f64,
}

/// `iteration,objective,accepted,step`.
pub fn write_trace(path: &Path, report: &RefpolReport) -> Result<()> {
    let rows = report.trace.iter().map(|t| TraceRow { iteration: t.iteration, objective: t.objective, accepted: t.accepted, step: t.step });
    write_atomic(path, &csv_bytes(rows)?)
}

/// Heat data for every delivery agent: under its recorded policy and, for
/// reference-design runs, under its synthesized reference.
pub fn heat_tables(doc: &ResultDocument) -> Result<Vec<(String, Vec<NodeHeat>)>> {
    let exp = doc.config.build()?;
    let agents = doc.agents_from_config()?;
    let policies = doc.policies(&agents)?;
    let Some(g) = exp.graph.as_ref() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for (i, dm) in exp.delivery.iter().enumerate() {
        let Some(dm) = dm else { continue };
        out.push((format!("heat_agent{i}.csv"), node_heat(dm, g, &policies[i])?));
        if doc.refpol.is_some() {
            out.push((format!("reference_heat_agent{i}.csv"), node_heat(dm, g, &agents[i].reference)?));
        }
    }
    Ok(out)
}

/// Monte-Carlo aggregates for the policies recorded in `doc`.
pub fn simulate_document<P: Parallel>(
    doc: &ResultDocument,
    exp: &Experiment,
    trials: usize,
    seed: u64,
    capacity: f64,
    exec: &P,
) -> Result<Aggregates> {
    let agents = if doc.refpol.is_some() { doc.agents_from_config()? } else { exp.problem.agents.clone() };
    let policies = doc.policies(&agents)?;
    let mut problem = exp.problem.clone();
    problem.agents = agents;
    let runner = EpisodeRunner::new(&problem, &policies, capacity, exp.config.max_steps.unwrap_or(DEFAULT_MAX_STEPS))?;
    Ok(simulate(&runner, trials, seed, exec)?)
}

#[derive(Serialize)]
struct AgentRow {
    agent: usize,
    mean_belief: f64,
    elimination_frequency: f64,
    reach_frequency: f64,
}

#[derive(Serialize)]
struct HistRow {
    agent: usize,
    bin_lo: f64,
    bin_hi: f64,
    count: u64,
}

/// Writes `agents.csv`, `belief_histogram.csv` and `summary.json` into `dir`.
pub fn write_aggregates(dir: &Path, agg: &Aggregates) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(ShotgunError::io(dir))?;
    let rows = agg.agents.iter().map(|a| AgentRow {
        agent: a.agent,
        mean_belief: a.mean_belief,
        elimination_frequency: a.elimination_frequency,
        reach_frequency: a.reach_frequency,
    });
    write_atomic(&dir.join("agents.csv"), &csv_bytes(rows)?)?;
    let width = 1.0 / HISTOGRAM_BINS as f64;
    let hist = agg.agents.iter().flat_map(|a| {
        a.belief_histogram.iter().enumerate().map(move |(b, &count)| HistRow {
            agent: a.agent,
            bin_lo: b as f64 * width,
            bin_hi: (b + 1) as f64 * width,
            count,
        })
    });
    write_atomic(&dir.join("belief_histogram.csv"), &csv_bytes(hist)?)?;
    let mut summary = serde_json::to_string_pretty(agg).expect("aggregates serialize");
    summary.push('\n');
    write_atomic(&dir.join("summary.json"), summary.as_bytes())
}
