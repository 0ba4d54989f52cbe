//! Runs the clean five-agent pipeline and walks through one task's trace:
//! publication, brokerage, and the final verdict.

use agent_fabric::{run, EventKind, Scenario};

fn main() {
    let scenario = Scenario::clean_pipeline(7, 5);
    let artifacts = run(&scenario).unwrap();

    println!("scenario: {}", scenario.name);
    for outcome in &artifacts.outcomes {
        println!(
            "task {}: answer {:?} ({}) in {} rounds, {} routed messages",
            outcome.task,
            outcome.answer,
            if outcome.correct { "correct" } else { "wrong" },
            outcome.rounds,
            outcome.routed_messages
        );
    }
    println!(
        "\naccuracy {:.2}, routing accuracy {:.2}",
        artifacts.metrics.accuracy, artifacts.metrics.routing_accuracy
    );

    println!("\ntrace of task 0:");
    for event in artifacts.trace.events.iter().filter(|e| e.task == 0) {
        match &event.kind {
            EventKind::Publish { agent, payload, finish, .. } => {
                println!(
                    "  round {}: {agent} publishes {payload:?}{}",
                    event.round,
                    if *finish { " [finish]" } else { "" }
                );
            }
            EventKind::Route { producer, recipient, score, .. } => {
                println!(
                    "  round {}: broker routes {producer} -> {recipient} (score {score:.3})",
                    event.round
                );
            }
            EventKind::Final { answer, correct, .. } => {
                println!("  final: answer {answer:?}, correct = {correct}");
            }
            _ => {}
        }
    }
}
