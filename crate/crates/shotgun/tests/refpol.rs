#[path = "oracle/small.rs"]
mod small;

use proptest::prelude::*;
use shotgun::ClarabelSolver;
use shotgun_core::refpol::{synthesize_reference, SupervisorTask};
use shotgun_core::synthesis::Sequential;
use shotgun_core::{deceptive_synthesis, reach_probability, AgentSpec, TeamProblem};

fn sink(a: &AgentSpec) -> usize {
    a.mdp.state_index("Z").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reference_design_invariants(seed in 0u64..1000, slack in 0.5f64..0.95) {
        let inst = small::Instance::random(seed);
        let agents = vec![inst.agents[0].agent(), inst.agents[1].agent()];
        let thresholds: Vec<f64> = agents
            .iter()
            .map(|a| slack * reach_probability(&a.mdp, &a.reference, &[sink(a)]).unwrap())
            .collect();
        let targets = agents.iter().map(|a| vec![sink(a)]).collect();
        let mut task = SupervisorTask::new(targets, thresholds.clone());
        task.iterations = 6;
        let problem = TeamProblem::new(agents, inst.nu);
        let solver = ClarabelSolver::default();
        let r = synthesize_reference(&problem, &task, &solver, Sequential).unwrap();
        prop_assert!(!r.unbounded);
        for (i, (a, pol)) in problem.agents.iter().zip(&r.references).enumerate() {
            let v = reach_probability(&a.mdp, pol, &[sink(a)]).unwrap();
            prop_assert!(v >= thresholds[i] - 1e-6, "agent {i}: {v} < {}", thresholds[i]);
        }
        prop_assert!(r.objective >= r.initial_objective - 1e-9);
        let accepted: Vec<f64> = r.trace.iter().filter(|t| t.accepted).map(|t| t.objective).collect();
        prop_assert!(accepted.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        // the reported objective is the team optimum against the new references
        let agents: Vec<AgentSpec> = problem
            .agents
            .iter()
            .zip(&r.references)
            .map(|(a, p)| AgentSpec::new(a.mdp.clone(), p.clone(), a.targets.clone(), a.prior, a.utility).unwrap())
            .collect();
        let again = deceptive_synthesis(&TeamProblem::new(agents, inst.nu), &solver).unwrap();
        prop_assert!((again.kl_bound - r.objective).abs() <= 2.0 * problem.epsilon);
    }
}
