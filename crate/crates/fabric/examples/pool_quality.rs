//! Crafted versus naive subscription pools, with reactive refinement on and
//! off. In the naive pool a persuasive but useless agent joins mid-run; the
//! refined-and-promoted solver keeps its slot only when refinement is on.

use agent_fabric::{pool_quality_compare, Scenario};

fn main() {
    let report = pool_quality_compare(
        &Scenario::crafted_pool(42, true),
        &Scenario::naive_pool(42, true),
    )
    .unwrap();

    println!("pool     refinement  routing-acc  task-acc");
    for (label, cells) in [("crafted", &report.crafted), ("naive", &report.naive)] {
        for cell in cells {
            println!(
                "{label:<8} {:<11} {:<12.3} {:.3}",
                if cell.refinement { "on" } else { "off" },
                cell.routing_accuracy,
                cell.task_accuracy
            );
        }
    }
}
