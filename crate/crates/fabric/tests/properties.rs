//! Property-based checks of the protocol invariants.

use proptest::prelude::*;

use agent_fabric::{
    broker_select, cosine, deviation_statistic, substream, AgentId, BetaRating, BrokerConfig,
    BrokerMode, EmbeddingProvider, Evidence, HashBagEmbedder, MessagePacket, PacketId,
    PeerLedger, Subscription,
};
use rand::RngCore;

fn rating_strategy() -> impl Strategy<Value = BetaRating> {
    (0.0f64..50.0, 0.0f64..50.0)
        .prop_map(|(a, b)| BetaRating::from_counts(1.0 + a, 1.0 + b).unwrap())
}

fn evidence_strategy() -> impl Strategy<Value = Evidence> {
    prop_oneof![Just(Evidence::Behaved), Just(Evidence::Misbehaved)]
}

proptest! {
    // Pseudo-counts never go negative; moments stay in range.
    #[test]
    fn update_preserves_rating_bounds(
        rating in rating_strategy(),
        s in evidence_strategy(),
        lambda in 0.01f64..=1.0,
    ) {
        let updated = rating.discounted_update(s, lambda).unwrap();
        prop_assert!(updated.x() >= 0.0 && updated.y() >= 0.0);
        prop_assert!((0.0..=1.0).contains(&updated.mean()));
        prop_assert!((0.0..=0.25).contains(&updated.variance()));
    }

    #[test]
    fn deviation_is_symmetric_and_zero_iff_equal_means(
        a in rating_strategy(),
        b in rating_strategy(),
    ) {
        let ab = deviation_statistic(&a, &b).unwrap();
        let ba = deviation_statistic(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        if (a.mean() - b.mean()).abs() < 1e-15 {
            prop_assert!(ab < 1e-9);
        } else {
            prop_assert!(ab > 0.0);
        }
    }

    // Merging moves the mean strictly toward the reported mean.
    #[test]
    fn merge_moves_mean_toward_report(
        local in rating_strategy(),
        reported in rating_strategy(),
        omega in 0.01f64..=0.99,
    ) {
        let merged = local.merge_testimony(&reported, omega).unwrap();
        let sign = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
        prop_assert_eq!(
            sign(merged.mean() - local.mean()),
            sign(reported.mean() - local.mean())
        );
    }

    // Embeddings are unit length (or zero) and cosine stays in [-1, 1].
    #[test]
    fn embeddings_are_normalized(text in ".{0,80}", other in ".{0,80}") {
        let e = HashBagEmbedder::default();
        let v = e.embed(&text);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm < 1e-9 || (norm - 1.0).abs() < 1e-9);
        let c = cosine(&v, &e.embed(&other)).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
    }

    // Substreams are reproducible and unaffected by other agents' draws.
    #[test]
    fn substreams_are_stable(seed in any::<u64>(), agent in 0u32..100, round in 0u32..50) {
        let id = AgentId::from_index(agent);
        let a = substream(seed, id, 0, round).next_u64();
        let b = substream(seed, id, 0, round).next_u64();
        prop_assert_eq!(a, b);
        let other = substream(seed, AgentId::from_index(agent + 1), 0, round).next_u64();
        prop_assert_ne!(a, other);
    }
}

fn pool(profiles: &[&str]) -> std::collections::BTreeMap<AgentId, Subscription> {
    let e = HashBagEmbedder::default();
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = AgentId::from_index(i as u32);
            (id, Subscription::new(id, p, &e))
        })
        .collect()
}

fn packet(producer: u32, plan: &str) -> MessagePacket {
    MessagePacket {
        id: PacketId(0),
        producer: AgentId::from_index(producer),
        round: 1,
        payload: "task=0".into(),
        plan: Some(plan.to_string()),
        parents: vec![],
        finish: false,
    }
}

proptest! {
    // Brokerage invariants: size bound, no self-delivery, similarity floor,
    // descending scores with id tie-break.
    #[test]
    fn broker_selection_invariants(
        top_k in 1usize..5,
        tau_sim in -0.2f64..0.9,
        producer in 0u32..6,
        plan in "[a-z ]{1,40}",
    ) {
        let subscriptions = pool(&[
            "solver compute outbound return answer distance",
            "analyst decompose parse task query statement fields",
            "finalizer final answer verdict report conclude",
            "inspector verify check consistency answer verdict",
            "helper agent good with sums",
            "solver compute outbound return answer distance",
        ]);
        let cfg = BrokerConfig { top_k, tau_sim, tau_rep: 0.7, mode: BrokerMode::TopK };
        let ledger = PeerLedger::new(AgentId::from_index(producer));
        let embedder = HashBagEmbedder::default();
        let selections = broker_select(
            &packet(producer, &plan),
            &subscriptions,
            &ledger,
            &cfg,
            &embedder,
        ).unwrap();

        prop_assert!(selections.len() <= top_k);
        for s in &selections {
            prop_assert!(s.recipient != AgentId::from_index(producer));
            prop_assert!(s.score >= tau_sim);
        }
        for pair in selections.windows(2) {
            prop_assert!(
                pair[0].score > pair[1].score
                    || (pair[0].score == pair[1].score
                        && pair[0].recipient < pair[1].recipient)
            );
        }

        // Tightening the similarity gate only shrinks the selection.
        let tighter = BrokerConfig { tau_sim: tau_sim + 0.1, ..cfg };
        let smaller = broker_select(
            &packet(producer, &plan),
            &subscriptions,
            &ledger,
            &tighter,
            &embedder,
        ).unwrap();
        prop_assert!(smaller.len() <= selections.len());
    }
}
