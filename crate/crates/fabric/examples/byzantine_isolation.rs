//! Two liars pose as solvers among three truthful agents. Watch the
//! analyst's merged reputation for each liar cross the routing threshold
//! after two bad interactions, after which the broker never routes to them
//! again.

use agent_fabric::{isolation_summary, reputation_trajectory, run, AgentId, Scenario};

fn main() {
    let scenario = Scenario::byzantine(42, 20);
    let artifacts = run(&scenario).unwrap();
    let analyst = AgentId::from_index(0);

    println!(
        "accuracy {:.2} over {} tasks",
        artifacts.metrics.accuracy, artifacts.metrics.tasks
    );
    for liar in [AgentId::from_index(1), AgentId::from_index(2)] {
        let trajectory = reputation_trajectory(&artifacts.trace, analyst, liar);
        let summary = isolation_summary(
            &artifacts.trace,
            analyst,
            liar,
            scenario.reputation.tau_rep,
        );
        println!("\nliar {liar}: E[P] trajectory as seen by {analyst}:");
        for (i, mean) in trajectory.iter().enumerate() {
            let marker = if *mean >= scenario.reputation.tau_rep {
                "  <- above threshold"
            } else {
                ""
            };
            println!("  evaluation {}: {mean:.4}{marker}", i + 1);
        }
        println!(
            "  isolated after {:?} evaluations; {} routed packets afterwards",
            summary.evaluations_to_isolation, summary.routes_after
        );
    }
}
