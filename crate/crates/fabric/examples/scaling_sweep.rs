//! Message-complexity sweep: total routed messages under top-k brokerage
//! grow linearly with the population, while the broadcast control grows
//! polynomially. Fits both curves.

use agent_fabric::{linear_fit, power_fit_exponent, sweep, BrokerMode};

fn main() {
    let sizes = [5, 10, 20, 50];
    let seeds = [0, 1, 2];

    let topk = sweep(&sizes, &seeds, BrokerMode::TopK).unwrap();
    let broadcast = sweep(&sizes, &seeds, BrokerMode::Broadcast).unwrap();

    println!("n    top-k msgs   broadcast msgs");
    for &n in &sizes {
        let t = mean_messages(&topk, n);
        let b = mean_messages(&broadcast, n);
        println!("{n:<4} {t:<12.1} {b:.1}");
    }

    let points = |rows: &[agent_fabric::SweepRow]| {
        rows.iter()
            .map(|r| (r.n as f64, r.total_messages as f64))
            .collect::<Vec<_>>()
    };
    let (slope, intercept, r2) = linear_fit(&points(&topk));
    println!("\ntop-k linear fit: slope {slope:.3}, intercept {intercept:.3}, r2 {r2:.6}");
    println!(
        "broadcast power-law exponent: {:.3}",
        power_fit_exponent(&points(&broadcast))
    );
}

fn mean_messages(rows: &[agent_fabric::SweepRow], n: usize) -> f64 {
    let group: Vec<_> = rows.iter().filter(|r| r.n == n).collect();
    group.iter().map(|r| r.total_messages as f64).sum::<f64>() / group.len() as f64
}
