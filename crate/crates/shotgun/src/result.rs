//! Result documents: self-contained JSON records of a synthesis run that
//! embed the configuration they came from.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shotgun_core::synthesis::{EliminationResult, SynthesisResult};
use shotgun_core::refpol::RefpolResult;
use shotgun_core::{disjunctive_reach, AgentSpec, StationaryPolicy};

use crate::config::{policy_from_table, policy_to_table, ExperimentConfig, Mode, PolicyTable};
use crate::error::{Result, ShotgunError};

pub const TOOL_NAME: &str = "shotgun";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tolerance used when re-checking recorded metrics.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentReport {
    pub index: usize,
    pub policy: PolicyTable,
    pub kl: f64,
    pub reach: f64,
    pub decoy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamReport {
    pub kl_bound: f64,
    pub disjunctive_reach: f64,
    pub k_max: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyRowReport {
    pub k: usize,
    #[serde(rename = "B_k")]
    pub b_k: Option<f64>,
    #[serde(rename = "K_k")]
    pub kl_bound: f64,
    #[serde(rename = "Fail_k")]
    pub fail: bool,
    pub decoys: Vec<usize>,
    pub survivor_reach: f64,
    pub capacity_sup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyReport {
    pub b_table: Vec<DecoyRowReport>,
    pub k_star: usize,
    pub decoy_set: Vec<usize>,
    pub non_decoy_kl: f64,
    pub decoy_kl: f64,
    pub survivor_reach: f64,
    /// Supremum of the supervisor budgets that eliminate only decoys.
    pub capacity_sup: f64,
    pub k_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceReport {
    pub iteration: usize,
    /// `None` when the inner synthesis is unbounded.
    pub objective: Option<f64>,
    pub accepted: bool,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefpolReport {
    pub references: Vec<PolicyTable>,
    pub objective: Option<f64>,
    pub initial_objective: Option<f64>,
    pub unbounded: bool,
    pub trace: Vec<TraceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub tool: String,
    pub version: String,
    pub command: Mode,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub agents: Vec<AgentReport>,
    pub team: Option<TeamReport>,
    pub decoys: Option<DecoyReport>,
    pub refpol: Option<RefpolReport>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(config.canonical_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn agent_reports(agents: &[AgentSpec], policies: &[StationaryPolicy], kl: &[f64], reach: &[f64], decoys: &[usize]) -> Vec<AgentReport> {
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentReport {
            index: i,
            policy: policy_to_table(&a.mdp, &policies[i]),
            kl: kl[i],
            reach: reach[i],
            decoy: decoys.contains(&i),
        })
        .collect()
}

fn team_report(r: &SynthesisResult) -> TeamReport {
    TeamReport {
        kl_bound: r.kl_bound,
        disjunctive_reach: r.disjunctive_reach,
        k_max: r.k_max,
        iterations: r.iterations,
    }
}

impl ResultDocument {
    fn base(config: &ExperimentConfig, command: Mode, agents: Vec<AgentReport>) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command,
            config_sha256: config_hash(config),
            config: config.clone(),
            agents,
            team: None,
            decoys: None,
            refpol: None,
        }
    }

    pub fn worst_case(config: &ExperimentConfig, agents: &[AgentSpec], r: &SynthesisResult) -> Self {
        let reports = agent_reports(agents, &r.policies, &r.per_agent_kl, &r.per_agent_reach, &[]);
        let mut doc = Self::base(config, Mode::WorstCase, reports);
        doc.team = Some(team_report(r));
        doc
    }

    pub fn decoys(config: &ExperimentConfig, agents: &[AgentSpec], r: &EliminationResult) -> Self {
        let reports = agent_reports(agents, &r.policies, &r.per_agent_kl, &r.per_agent_reach, &r.decoy_set);
        let mut doc = Self::base(config, Mode::Decoys, reports);
        doc.decoys = Some(DecoyReport {
            b_table: r
                .b_table
                .iter()
                .map(|row| DecoyRowReport {
                    k: row.k,
                    b_k: row.b_k,
                    kl_bound: row.kl_bound,
                    fail: row.fail,
                    decoys: row.decoys.clone(),
                    survivor_reach: row.survivor_reach,
                    capacity_sup: row.capacity_sup,
                })
                .collect(),
            k_star: r.k_star,
            decoy_set: r.decoy_set.clone(),
            non_decoy_kl: r.non_decoy_kl,
            decoy_kl: r.decoy_kl,
            survivor_reach: r.survivor_reach,
            capacity_sup: r.capacity_sup,
            k_max: r.k_max,
        });
        doc
    }

    /// `inner` is the team synthesis against the returned references, absent
    /// when it is unbounded.
    pub fn refpol(
        config: &ExperimentConfig,
        agents: &[AgentSpec],
        r: &RefpolResult,
        inner: Option<&SynthesisResult>,
    ) -> Self {
        let reports = match inner {
            Some(s) => agent_reports(agents, &s.policies, &s.per_agent_kl, &s.per_agent_reach, &[]),
            None => {
                let zeros = vec![0.0; agents.len()];
                let reach: Vec<f64> = agents.iter().map(|a| a.reference_reach()).collect();
                agent_reports(agents, &r.references, &zeros, &reach, &[])
            }
        };
        let mut doc = Self::base(config, Mode::Refpol, reports);
        doc.team = inner.map(team_report);
        doc.refpol = Some(RefpolReport {
            references: agents.iter().zip(&r.references).map(|(a, p)| policy_to_table(&a.mdp, p)).collect(),
            objective: finite(r.objective),
            initial_objective: finite(r.initial_objective),
            unbounded: r.unbounded,
            trace: r
                .trace
                .iter()
                .map(|t| TraceReport { iteration: t.iteration, objective: finite(t.objective), accepted: t.accepted, step: t.step })
                .collect(),
        });
        doc
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(ShotgunError::io(path))?;
        serde_json::from_str(&text).map_err(|source| ShotgunError::Document { path: path.display().to_string(), source })
    }

    /// Write through a temporary file in the same directory, then rename.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// Per-agent policies as recorded.
    pub fn policies(&self, agents: &[AgentSpec]) -> Result<Vec<StationaryPolicy>> {
        if self.agents.len() != agents.len() {
            return Err(ShotgunError::Mismatch(format!(
                "{} agent reports for {} configured agents",
                self.agents.len(),
                agents.len()
            )));
        }
        agents
            .iter()
            .zip(&self.agents)
            .map(|(a, r)| policy_from_table(&a.mdp, &r.policy).map_err(ShotgunError::from))
            .collect()
    }

    /// The team as the document sees it: the configured agents, with
    /// references replaced by synthesized ones for reference-design runs.
    pub fn agents_from_config(&self) -> Result<Vec<AgentSpec>> {
        let exp = self.config.build()?;
        let mut agents = exp.problem.agents;
        if let Some(rp) = &self.refpol {
            if rp.references.len() != agents.len() {
                return Err(ShotgunError::Mismatch("reference count differs from agent count".into()));
            }
            for (a, table) in agents.iter_mut().zip(&rp.references) {
                let reference = policy_from_table(&a.mdp, table)?;
                *a = AgentSpec::new(a.mdp.clone(), reference, a.targets.clone(), a.prior, a.utility)?;
            }
        }
        Ok(agents)
    }

    /// Re-evaluate every recorded metric from the embedded config and
    /// policies. Returns the largest discrepancy found.
    pub fn verify(&self) -> Result<f64> {
        if self.config_sha256 != config_hash(&self.config) {
            return Err(ShotgunError::Mismatch("config hash differs from embedded config".into()));
        }
        let agents = self.agents_from_config()?;
        let policies = self.policies(&agents)?;
        let mut worst: f64 = 0.0;
        let mut reach = Vec::with_capacity(agents.len());
        for (i, (a, pol)) in agents.iter().zip(&policies).enumerate() {
            let eval = a.evaluate(pol)?;
            let rep = &self.agents[i];
            let d = (eval.kl_value - rep.kl).abs().max((eval.reach_value - rep.reach).abs());
            if !(d <= VERIFY_TOL) {
                return Err(ShotgunError::Mismatch(format!(
                    "agent {i}: recorded KL {} reach {}, re-evaluated KL {} reach {}",
                    rep.kl, rep.reach, eval.kl_value, eval.reach_value
                )));
            }
            worst = worst.max(d);
            reach.push(eval.reach_value.clamp(0.0, 1.0));
        }
        let mut check = |label: &str, recorded: f64, actual: f64| -> Result<()> {
            let d = (recorded - actual).abs();
            if !(d <= VERIFY_TOL) {
                return Err(ShotgunError::Mismatch(format!("{label}: recorded {recorded}, re-evaluated {actual}")));
            }
            worst = worst.max(d);
            Ok(())
        };
        if let Some(team) = &self.team {
            check("disjunctive reach", team.disjunctive_reach, disjunctive_reach(&reach)?)?;
        }
        if let Some(dec) = &self.decoys {
            let survivors: Vec<f64> =
                (0..reach.len()).filter(|i| !dec.decoy_set.contains(i)).map(|i| reach[i]).collect();
            check("survivor reach", dec.survivor_reach, disjunctive_reach(&survivors)?)?;
        }
        Ok(worst)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(ShotgunError::io(path))
}
