//! Colluding witnesses report inverted posteriors about a misbehaving
//! subject. The deviation-tested trust gate rules them inadmissible, so the
//! owner's merged reputation stays glued to its first-hand view.

use agent_fabric::witness_poisoning_study;

fn main() {
    println!("seed  max |merged - first-hand|  liar inadmissible rate");
    for seed in 0..20u64 {
        let outcome = witness_poisoning_study(seed, 200, 10).unwrap();
        println!(
            "{seed:<5} {:<26.4} {:.3}",
            outcome.max_gap_after_warmup, outcome.liar_inadmissible_rate
        );
    }
}
