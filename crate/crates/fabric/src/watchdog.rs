//! Per-agent local watchdog: first-hand evaluation, witness solicitation,
//! deviation-tested trust updates, and trust-gated reputation merging.
//!
//! Every agent owns exactly one [`PeerLedger`]; nothing outside the owner's
//! own feedback step ever writes it. Witness reads during solicitation take
//! an immutable snapshot from the previous round boundary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FabricError, Result};
use crate::reputation::{deviation_statistic, BetaRating, Evidence, ReputationConfig};
use crate::types::{AgentId, AgentContext, MessagePacket, Subscription};

/// The three ratings an owner keeps about one peer, plus recency metadata
/// used to pick witnesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PeerRatings {
    /// First-hand misbehavior posterior, from the owner's own evaluations.
    pub first_hand: BetaRating,
    /// Witness-unreliability posterior, from deviation-test outcomes.
    pub trust: BetaRating,
    /// Merged reputation posterior gating the broker.
    pub reputation: BetaRating,
    /// Global round of the owner's latest first-hand evaluation of this peer.
    pub last_interaction: u64,
}

/// One agent's private view of its peers. Entries appear lazily on first
/// contact, initialized to the non-informative prior for all three ratings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeerLedger {
    pub owner: AgentId,
    entries: BTreeMap<AgentId, PeerRatings>,
}

impl PeerLedger {
    pub fn new(owner: AgentId) -> Self {
        PeerLedger {
            owner,
            entries: BTreeMap::new(),
        }
    }

    pub fn entry(&mut self, peer: AgentId) -> &mut PeerRatings {
        self.entries.entry(peer).or_default()
    }

    pub fn get(&self, peer: AgentId) -> Option<&PeerRatings> {
        self.entries.get(&peer)
    }

    /// Reputation mean used by the broker; peers never seen keep the prior
    /// mean 0.5.
    pub fn reputation_mean(&self, peer: AgentId) -> f64 {
        self.entries
            .get(&peer)
            .map(|r| r.reputation.mean())
            .unwrap_or(0.5)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentId, &PeerRatings)> {
        self.entries.iter()
    }
}

/// A witness's first-hand posterior about a subject, as reported to a
/// soliciting owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Testimony {
    pub witness: AgentId,
    pub subject: AgentId,
    pub reported: BetaRating,
}

/// Binary on-the-fly verification of a received packet.
pub trait EvaluationPolicy: Send + Sync {
    fn evaluate(
        &self,
        packet: &MessagePacket,
        subscription: &Subscription,
        history: &[MessagePacket],
    ) -> Result<Evidence>;
}

/// Records which producer routed to each recipient in the most recent
/// brokerage phase; that producer evaluates the recipient's next packet.
#[derive(Debug, Clone, Default)]
pub struct UpstreamMap {
    map: BTreeMap<AgentId, AgentId>,
}

impl UpstreamMap {
    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn record(&mut self, recipient: AgentId, producer: AgentId) {
        self.map.insert(recipient, producer);
    }

    pub fn supervisor_of(&self, recipient: AgentId) -> Option<AgentId> {
        self.map.get(&recipient).copied()
    }
}

/// Outcome of processing one testimony against the owner's local belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestimonyOutcome {
    /// Deviation-test evidence: `Misbehaved` means incompatible.
    pub s_trust: Evidence,
    /// Deviation statistic, or `None` for the degenerate zero-variance case
    /// (treated as incompatible).
    pub statistic: Option<f64>,
    /// Witness distrust mean before this update, used for the admissibility
    /// gate.
    pub prior_trust_mean: f64,
    /// Whether the testimony may be merged into the reputation posterior.
    pub admissible: bool,
}

/// Evaluates a received packet and folds the verdict into the owner's
/// first-hand rating for the producer. A policy failure leaves the ledger
/// untouched; evidence is never fabricated.
pub fn first_hand_evaluate(
    ledger: &mut PeerLedger,
    ctx: &AgentContext,
    packet: &MessagePacket,
    policy: &dyn EvaluationPolicy,
    cfg: &ReputationConfig,
    global_round: u64,
) -> Result<Evidence> {
    if packet.producer == ledger.owner {
        return Err(FabricError::InvalidConfig(
            "an agent does not evaluate its own packets".into(),
        ));
    }
    let s = policy.evaluate(packet, &ctx.subscription, &ctx.history)?;
    let entry = ledger.entry(packet.producer);
    entry.first_hand = entry.first_hand.discounted_update(s, cfg.lambda)?;
    entry.last_interaction = global_round;
    Ok(s)
}

/// Picks up to `w_max` witnesses about `subject`: agents other than the
/// owner and the subject whose ledgers hold a non-prior first-hand entry
/// for the subject, most recent interaction first, ties by ascending id.
pub fn solicit(
    owner: AgentId,
    subject: AgentId,
    ledgers: &BTreeMap<AgentId, PeerLedger>,
    w_max: usize,
) -> Vec<Testimony> {
    let mut candidates: Vec<(u64, AgentId, BetaRating)> = ledgers
        .iter()
        .filter(|(id, _)| **id != owner && **id != subject)
        .filter_map(|(id, ledger)| {
            ledger.get(subject).and_then(|ratings| {
                if ratings.first_hand.is_prior() {
                    None
                } else {
                    Some((ratings.last_interaction, *id, ratings.first_hand))
                }
            })
        })
        .collect();
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    candidates
        .into_iter()
        .take(w_max)
        .map(|(_, witness, reported)| Testimony {
            witness,
            subject,
            reported,
        })
        .collect()
}

/// Runs the deviation test for one testimony, updates the owner's trust
/// rating for the witness, and decides admissibility.
///
/// A witness is admissible when it was already locally trusted walking in
/// (distrust mean at most `tau_trust` before this update) or its testimony
/// passes the deviation test. The degenerate zero-variance case fails safe
/// as incompatible.
pub fn process_testimony(
    ledger: &mut PeerLedger,
    testimony: &Testimony,
    cfg: &ReputationConfig,
) -> Result<TestimonyOutcome> {
    let local = ledger.entry(testimony.subject).reputation;
    let (s_trust, statistic) = match deviation_statistic(&testimony.reported, &local) {
        Ok(d) if d >= cfg.delta => (Evidence::Misbehaved, Some(d)),
        Ok(d) => (Evidence::Behaved, Some(d)),
        Err(FabricError::DegenerateDeviation) => (Evidence::Misbehaved, None),
        Err(e) => return Err(e),
    };
    let entry = ledger.entry(testimony.witness);
    let prior_trust_mean = entry.trust.mean();
    entry.trust = entry.trust.discounted_update(s_trust, cfg.lambda)?;
    let admissible = prior_trust_mean <= cfg.tau_trust || s_trust == Evidence::Behaved;
    Ok(TestimonyOutcome {
        s_trust,
        statistic,
        prior_trust_mean,
        admissible,
    })
}

/// Anchors the reputation posterior to the first-hand verdict, then merges
/// each admissible testimony as weak pseudo-counts. Returns the means
/// before and after.
pub fn reputation_update(
    ledger: &mut PeerLedger,
    subject: AgentId,
    s_first_hand: Evidence,
    admissible: &[Testimony],
    cfg: &ReputationConfig,
) -> Result<(f64, f64)> {
    let entry = ledger.entry(subject);
    let before = entry.reputation.mean();
    let mut updated = entry.reputation.discounted_update(s_first_hand, cfg.lambda)?;
    for testimony in admissible {
        updated = updated.merge_testimony(&testimony.reported, cfg.omega)?;
    }
    entry.reputation = updated;
    Ok((before, updated.mean()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashBagEmbedder;
    use crate::types::{PacketId, Subscription};

    fn agent(i: u32) -> AgentId {
        AgentId::from_index(i)
    }

    fn packet(producer: AgentId, payload: &str) -> MessagePacket {
        MessagePacket {
            id: PacketId(1),
            producer,
            round: 1,
            payload: payload.into(),
            plan: None,
            parents: vec![],
            finish: false,
        }
    }

    fn ctx(id: AgentId) -> AgentContext {
        let e = HashBagEmbedder::default();
        AgentContext {
            agent: id,
            subscription: Subscription::new(id, "auditor", &e),
            history: vec![],
            toolset: vec![],
            inbox: vec![],
        }
    }

    struct FixedVerdict(Evidence);
    impl EvaluationPolicy for FixedVerdict {
        fn evaluate(
            &self,
            _packet: &MessagePacket,
            _sub: &Subscription,
            _history: &[MessagePacket],
        ) -> Result<Evidence> {
            Ok(self.0)
        }
    }

    struct FailingPolicy;
    impl EvaluationPolicy for FailingPolicy {
        fn evaluate(
            &self,
            _packet: &MessagePacket,
            _sub: &Subscription,
            _history: &[MessagePacket],
        ) -> Result<Evidence> {
            Err(FabricError::PolicyFailure("judge offline".into()))
        }
    }

    #[test]
    fn first_hand_evaluate_updates_f() {
        let owner = agent(0);
        let producer = agent(1);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        let s = first_hand_evaluate(
            &mut ledger,
            &ctx(owner),
            &packet(producer, "outbound=180"),
            &FixedVerdict(Evidence::Behaved),
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(s, Evidence::Behaved);
        let f = ledger.get(producer).unwrap().first_hand;
        assert!((f.x() - 0.9).abs() < 1e-12);
        assert!((f.y() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn repeated_corruption_drives_f_high() {
        let owner = agent(0);
        let producer = agent(1);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        for round in 1..=10 {
            first_hand_evaluate(
                &mut ledger,
                &ctx(owner),
                &packet(producer, "outbound=999"),
                &FixedVerdict(Evidence::Misbehaved),
                &cfg,
                round,
            )
            .unwrap();
        }
        assert!(ledger.get(producer).unwrap().first_hand.mean() > 0.9);
    }

    #[test]
    fn policy_failure_leaves_ledger_untouched() {
        let owner = agent(0);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        let err = first_hand_evaluate(
            &mut ledger,
            &ctx(owner),
            &packet(agent(1), "x"),
            &FailingPolicy,
            &cfg,
            1,
        );
        assert!(err.is_err());
        assert!(ledger.get(agent(1)).is_none());
    }

    #[test]
    fn solicit_orders_by_recency_and_excludes_parties() {
        let owner = agent(0);
        let subject = agent(9);
        let cfg = ReputationConfig::default();
        let mut ledgers = BTreeMap::new();
        for (witness, round) in [(1u32, 5u64), (2, 7), (3, 6)] {
            let id = agent(witness);
            let mut ledger = PeerLedger::new(id);
            let entry = ledger.entry(subject);
            entry.first_hand = entry
                .first_hand
                .discounted_update(Evidence::Misbehaved, cfg.lambda)
                .unwrap();
            entry.last_interaction = round;
            ledgers.insert(id, ledger);
        }
        // Owner and subject ledgers must never yield testimonies.
        ledgers.insert(owner, PeerLedger::new(owner));
        let mut subject_ledger = PeerLedger::new(subject);
        let entry = subject_ledger.entry(subject);
        entry.first_hand = entry
            .first_hand
            .discounted_update(Evidence::Behaved, cfg.lambda)
            .unwrap();
        entry.last_interaction = 9;
        ledgers.insert(subject, subject_ledger);

        let testimonies = solicit(owner, subject, &ledgers, 2);
        assert_eq!(testimonies.len(), 2);
        assert_eq!(testimonies[0].witness, agent(2));
        assert_eq!(testimonies[1].witness, agent(3));
    }

    #[test]
    fn solicit_empty_when_nobody_interacted() {
        let mut ledgers = BTreeMap::new();
        ledgers.insert(agent(1), PeerLedger::new(agent(1)));
        assert!(solicit(agent(0), agent(9), &ledgers, 3).is_empty());
    }

    #[test]
    fn deviation_test_flags_inverted_report() {
        let owner = agent(0);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        ledger.entry(agent(9)).reputation = BetaRating::from_counts(1.0, 3.0).unwrap();
        let t = Testimony {
            witness: agent(1),
            subject: agent(9),
            reported: BetaRating::from_counts(3.0, 1.0).unwrap(),
        };
        let outcome = process_testimony(&mut ledger, &t, &cfg).unwrap();
        assert_eq!(outcome.s_trust, Evidence::Misbehaved);
        assert!(outcome.statistic.unwrap() >= 1.0);
        // Fresh witness walks in at the prior, so it is still admissible.
        assert!(outcome.admissible);
        assert!(ledger.get(agent(1)).unwrap().trust.mean() > 0.5);
    }

    #[test]
    fn matching_report_accepted_and_builds_trust() {
        let owner = agent(0);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        let t = Testimony {
            witness: agent(1),
            subject: agent(9),
            reported: BetaRating::new(),
        };
        let outcome = process_testimony(&mut ledger, &t, &cfg).unwrap();
        assert_eq!(outcome.s_trust, Evidence::Behaved);
        assert_eq!(outcome.statistic, Some(0.0));
        assert!(outcome.admissible);
        assert!(ledger.get(agent(1)).unwrap().trust.mean() < 0.5);
    }

    #[test]
    fn degenerate_variance_fails_safe() {
        let owner = agent(0);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        ledger.entry(agent(9)).reputation = BetaRating::from_counts(4.0, 0.0).unwrap();
        let t = Testimony {
            witness: agent(1),
            subject: agent(9),
            reported: BetaRating::from_counts(0.0, 4.0).unwrap(),
        };
        let outcome = process_testimony(&mut ledger, &t, &cfg).unwrap();
        assert_eq!(outcome.s_trust, Evidence::Misbehaved);
        assert_eq!(outcome.statistic, None);
    }

    #[test]
    fn distrusted_witness_gates() {
        let owner = agent(0);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        ledger.entry(agent(1)).trust = BetaRating::from_counts(4.0, 1.0).unwrap();
        ledger.entry(agent(9)).reputation = BetaRating::from_counts(1.0, 3.0).unwrap();
        // Incompatible report from a distrusted witness: both gates fail.
        let t = Testimony {
            witness: agent(1),
            subject: agent(9),
            reported: BetaRating::from_counts(3.0, 1.0).unwrap(),
        };
        let outcome = process_testimony(&mut ledger, &t, &cfg).unwrap();
        assert!(!outcome.admissible);
        // Compatible report from the same distrusted witness: deviation gate passes.
        let mut ledger2 = PeerLedger::new(owner);
        ledger2.entry(agent(1)).trust = BetaRating::from_counts(4.0, 1.0).unwrap();
        ledger2.entry(agent(9)).reputation = BetaRating::from_counts(1.0, 3.0).unwrap();
        let t2 = Testimony {
            witness: agent(1),
            subject: agent(9),
            reported: BetaRating::from_counts(1.0, 3.0).unwrap(),
        };
        let outcome2 = process_testimony(&mut ledger2, &t2, &cfg).unwrap();
        assert!(outcome2.admissible);
    }

    #[test]
    fn reputation_update_anchors_then_merges() {
        let owner = agent(0);
        let mut ledger = PeerLedger::new(owner);
        let cfg = ReputationConfig::default();
        let t = Testimony {
            witness: agent(1),
            subject: agent(9),
            reported: BetaRating::from_counts(4.0, 2.0).unwrap(),
        };
        let (before, after) =
            reputation_update(&mut ledger, agent(9), Evidence::Misbehaved, &[t], &cfg).unwrap();
        assert!((before - 0.5).abs() < 1e-12);
        let p = ledger.get(agent(9)).unwrap().reputation;
        assert!((p.x() - 2.3).abs() < 1e-12);
        assert!((p.y() - 1.1).abs() < 1e-12);
        assert!((after - 2.3 / 3.4).abs() < 1e-12);
    }

    #[test]
    fn no_testimonies_equals_first_hand_only() {
        let owner = agent(0);
        let cfg = ReputationConfig::default();
        let mut ledger = PeerLedger::new(owner);
        reputation_update(&mut ledger, agent(9), Evidence::Misbehaved, &[], &cfg).unwrap();
        let p = ledger.get(agent(9)).unwrap().reputation;
        assert!((p.x() - 1.9).abs() < 1e-12);
        assert!((p.y() - 0.9).abs() < 1e-12);
    }
}
