//! Saves a run's trace to disk, reloads it, replays it, and shows that
//! tampering with a single recorded score is detected at the exact event.

use agent_fabric::{replay, run, EventKind, Scenario, Trace};

fn main() {
    let artifacts = run(&Scenario::byzantine(11, 5)).unwrap();
    let dir = std::env::temp_dir().join("fabric-replay-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("byzantine.trace.jsonl");
    artifacts.trace.save(&path).unwrap();
    println!("saved {} events to {}", artifacts.trace.events.len(), path.display());

    let loaded = Trace::load(&path).unwrap();
    let report = replay(&loaded).unwrap();
    println!(
        "replay of untouched trace: matched = {}, {} events checked",
        report.matched, report.events_checked
    );

    let mut tampered = loaded.clone();
    let index = tampered
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Route { .. }))
        .unwrap();
    if let EventKind::Route { score, .. } = &mut tampered.events[index].kind {
        *score *= 0.99;
    }
    let report = replay(&tampered).unwrap();
    println!(
        "replay after nudging the score of event {index}: matched = {}, divergence = {:?}",
        report.matched, report.divergence
    );
}
