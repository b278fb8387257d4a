use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shotgun::config::ExperimentConfig;
use shotgun::result::ResultDocument;
use shotgun::{run, ClarabelSolver, Experiment, Rayon, Result, ShotgunError};

/// Deceptive policy synthesis for teams of MDP agents.
#[derive(Parser)]
#[command(name = "shotgun", version)]
struct Cli {
    /// Worker threads for parallel solves (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Synth {
    #[arg(long)]
    config: PathBuf,
    /// Where to write the result document.
    #[arg(long)]
    out: PathBuf,
    /// Override the bisection tolerance.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and report every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimize the worst-case KL divergence subject to the team threshold.
    WorstCase(Synth),
    /// Sweep decoy counts and allocate decoys against the supervisor.
    Decoys(Synth),
    /// Design reference policies that make deception expensive.
    Refpol(Synth),
    /// Monte-Carlo run of the recorded policies against the supervisor.
    Simulate {
        /// Result document whose policies are simulated.
        #[arg(long)]
        result: PathBuf,
        /// Config overriding the one embedded in the result.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Supervisor elimination budget.
        #[arg(long)]
        capacity: Option<f64>,
        /// Output directory for CSV files and the summary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write CSV plot data for a result document.
    EmitPlotData {
        #[arg(long)]
        result: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Print a line, ignoring a closed stdout so piping into `head` is quiet.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn load(path: &Path, eps: Option<f64>) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(e) = eps {
        cfg.epsilon = e;
    }
    Ok(cfg.build()?)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
    out.with_file_name(format!("{stem}{suffix}"))
}

fn print_agents(doc: &ResultDocument) {
    out!("{:>5}  {:>12}  {:>10}  role", "agent", "KL", "reach");
    for a in &doc.agents {
        out!("{:>5}  {:>12.6}  {:>10.6}  {}", a.index, a.kl, a.reach, if a.decoy { "decoy" } else { "" });
    }
}

fn execute(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .expect("thread pool");
    let exec = Rayon::in_pool(&pool);
    let solver = ClarabelSolver::default();
    match cli.command {
        Command::Validate { config } => {
            let exp = load(&config, None)?;
            out!("{}: valid", config.display());
            for (i, a) in exp.problem.agents.iter().enumerate() {
                out!(
                    "  agent {i}: {} states, {} deviation states, reference reach {:.6}, max reach {:.6}",
                    a.mdp.num_states(),
                    a.decomposition().deviation_states().len(),
                    a.reference_reach(),
                    a.ceiling().reach
                );
            }
        }
        Command::WorstCase(s) => {
            let exp = load(&s.config, s.eps)?;
            let doc = run::worst_case(&exp, &solver, exec)?;
            doc.write_atomic(&s.out)?;
            print_agents(&doc);
            if let Some(t) = &doc.team {
                out!("K_bar = {:.6}  disjunctive reach = {:.6}  K_max = {:.6}", t.kl_bound, t.disjunctive_reach, t.k_max);
            }
        }
        Command::Decoys(s) => {
            let exp = load(&s.config, s.eps)?;
            let doc = run::decoys(&exp, &solver, exec)?;
            doc.write_atomic(&s.out)?;
            let rep = doc.decoys.as_ref().expect("decoy report");
            let csv = sibling(&s.out, "_b_k.csv");
            run::write_b_table(&csv, rep)?;
            out!("{:>3}  {:>10}  {:>10}  fail", "k", "B_k", "K_k");
            for r in &rep.b_table {
                let b = r.b_k.map(|b| format!("{b:.6}")).unwrap_or_else(|| "-".into());
                out!("{:>3}  {:>10}  {:>10.6}  {}", r.k, b, r.kl_bound, r.fail);
            }
            print_agents(&doc);
            out!(
                "k* = {}  decoys = {:?}  survivor reach = {:.6}  capacity sup = {:.6}",
                rep.k_star, rep.decoy_set, rep.survivor_reach, rep.capacity_sup
            );
        }
        Command::Refpol(s) => {
            let exp = load(&s.config, s.eps)?;
            let doc = run::refpol(&exp, &solver, exec)?;
            doc.write_atomic(&s.out)?;
            let rep = doc.refpol.as_ref().expect("refpol report");
            run::write_trace(&sibling(&s.out, "_trace.csv"), rep)?;
            let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "unbounded".into());
            out!("objective {} -> {}", fmt(rep.initial_objective), fmt(rep.objective));
            print_agents(&doc);
        }
        Command::Simulate { result, config, trials, seed, capacity, out } => {
            let doc = ResultDocument::load(&result)?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => doc.config.clone(),
            };
            let exp = cfg.build()?;
            let seed = seed.or(cfg.seed).ok_or(ShotgunError::SeedMissing)?;
            let capacity = capacity.or(cfg.capacity).unwrap_or(0.0);
            let agg = run::simulate_document(&doc, &exp, trials, seed, capacity, &exec)?;
            run::write_aggregates(&out, &agg)?;
            out!(
                "episodes = {}  success rate = {:.6} +/- {:.6}  truncated paths = {}",
                agg.episodes, agg.success_rate, agg.success_std_err, agg.truncated_paths
            );
            out!("{:>5}  {:>12}  {:>12}", "agent", "mean belief", "eliminated");
            for a in &agg.agents {
                out!("{:>5}  {:>12.6}  {:>12.6}", a.agent, a.mean_belief, a.elimination_frequency);
            }
        }
        Command::EmitPlotData { result, out } => {
            let doc = ResultDocument::load(&result)?;
            std::fs::create_dir_all(&out).map_err(ShotgunError::io(&out))?;
            let mut written = Vec::new();
            if let Some(rep) = &doc.decoys {
                let p = out.join("b_k.csv");
                run::write_b_table(&p, rep)?;
                written.push(p);
            }
            if let Some(rep) = &doc.refpol {
                let p = out.join("trace.csv");
                run::write_trace(&p, rep)?;
                written.push(p);
            }
            for (name, heat) in run::heat_tables(&doc)? {
                let p = out.join(name);
                run::write_heat(&p, &heat)?;
                written.push(p);
            }
            for p in written {
                out!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
