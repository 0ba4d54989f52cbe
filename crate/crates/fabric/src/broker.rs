//! Decentralized semantic brokerage: matching publications against the
//! subscription pool, gated by the producer's local reputation table.

use std::collections::BTreeMap;

use crate::embedding::{cosine, EmbeddingProvider};
use crate::error::Result;
use crate::types::{AgentId, BrokerConfig, BrokerMode, MessagePacket, Subscription};
use crate::watchdog::PeerLedger;

/// A selected recipient together with the similarity score that ranked it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub recipient: AgentId,
    pub score: f64,
}

/// Cosine similarity between the packet's routing text and a subscription.
/// Zero-vector operands (empty profiles or token-free packets) score −1 and
/// therefore never match.
pub fn match_score(
    packet: &MessagePacket,
    subscription: &Subscription,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64> {
    let query = embedder.embed(packet.routing_text());
    cosine(&query, &subscription.embedding)
}

/// Selects recipients for a publication.
///
/// TopK mode: rank candidates by score descending (ties by ascending agent
/// id), keep the top `top_k`, drop those below `tau_sim`, then drop those
/// whose reputation mean in the producer's ledger is at or above `tau_rep`.
/// The producer itself is never a candidate. An empty result is valid.
pub fn broker_select(
    packet: &MessagePacket,
    pool: &BTreeMap<AgentId, Subscription>,
    ledger: &PeerLedger,
    cfg: &BrokerConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<Selection>> {
    if cfg.mode == BrokerMode::Broadcast {
        return Ok(pool
            .keys()
            .filter(|id| **id != packet.producer)
            .map(|id| Selection {
                recipient: *id,
                score: 1.0,
            })
            .collect());
    }
    let query = embedder.embed(packet.routing_text());
    let mut ranked: Vec<Selection> = Vec::with_capacity(pool.len());
    for (id, sub) in pool {
        if *id == packet.producer {
            continue;
        }
        ranked.push(Selection {
            recipient: *id,
            score: cosine(&query, &sub.embedding)?,
        });
    }
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.recipient.cmp(&b.recipient))
    });
    ranked.truncate(cfg.top_k);
    ranked.retain(|s| s.score >= cfg.tau_sim);
    ranked.retain(|s| ledger.reputation_mean(s.recipient) < cfg.tau_rep);
    Ok(ranked)
}
