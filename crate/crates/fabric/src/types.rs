//! Core domain types shared across the substrate and overlays.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{FabricError, Result};

/// Dense agent identifier assigned at registration, in roster order.
/// Ordering by id is the deterministic tie-break used everywhere.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct AgentId(u32);

impl AgentId {
    pub const fn from_index(i: u32) -> Self {
        AgentId(i)
    }

    pub const fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // The reserved top index is the external querier, not a pool agent.
        if self.0 == u32::MAX {
            write!(f, "user")
        } else {
            write!(f, "a{}", self.0)
        }
    }
}

/// Unique packet identifier within a run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PacketId(pub u64);

/// An agent's standing declaration of intent: profile text plus its
/// embedding, versioned so refinements are strictly ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub agent: AgentId,
    pub profile_text: String,
    pub embedding: Vec<f64>,
    pub version: u32,
}

impl Subscription {
    pub fn new(agent: AgentId, profile_text: &str, embedder: &dyn EmbeddingProvider) -> Self {
        Subscription {
            agent,
            profile_text: profile_text.to_string(),
            embedding: embedder.embed(profile_text),
            version: 0,
        }
    }

    /// Next version of this subscription with a new profile text.
    pub fn refined(&self, profile_text: &str, embedder: &dyn EmbeddingProvider) -> Self {
        Subscription {
            agent: self.agent,
            profile_text: profile_text.to_string(),
            embedding: embedder.embed(profile_text),
            version: self.version + 1,
        }
    }
}

/// A publication: a semantic packet broadcast for brokerage rather than
/// addressed to named recipients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePacket {
    pub id: PacketId,
    pub producer: AgentId,
    pub round: u32,
    pub payload: String,
    pub plan: Option<String>,
    pub parents: Vec<PacketId>,
    pub finish: bool,
}

impl MessagePacket {
    /// Text the broker matches against subscriptions: the plan names the
    /// intended next step when present, otherwise the payload itself.
    pub fn routing_text(&self) -> &str {
        match &self.plan {
            Some(plan) if !plan.is_empty() => plan,
            _ => &self.payload,
        }
    }
}

/// Per-agent execution context: the configuration tuple plus the message
/// buffers the round loop maintains.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub agent: AgentId,
    /// The agent's current local subscription (may be ahead of the pool
    /// entry until a refinement is promoted).
    pub subscription: Subscription,
    /// Append-only within a run.
    pub history: Vec<MessagePacket>,
    /// Descriptive tool metadata; execution is out of scope.
    pub toolset: Vec<String>,
    /// Packets received in the latest brokerage, folded into `history` at
    /// the start of the next round.
    pub inbox: Vec<MessagePacket>,
}

/// How the broker turns a publication into a recipient set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BrokerMode {
    /// Rank by similarity, keep top-k, then apply similarity and reputation
    /// gates.
    #[default]
    TopK,
    /// Control variant: deliver to every other agent, no gates. Used to
    /// measure the message-complexity gap.
    Broadcast,
}

/// Broker parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrokerConfig {
    pub top_k: usize,
    pub tau_sim: f64,
    pub tau_rep: f64,
    #[serde(default)]
    pub mode: BrokerMode,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            top_k: 2,
            tau_sim: 0.5,
            tau_rep: 0.7,
            mode: BrokerMode::TopK,
        }
    }
}

impl BrokerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(FabricError::InvalidConfig("top_k must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau_sim) {
            return Err(FabricError::InvalidConfig(format!(
                "tau_sim must lie in [-1, 1], got {}",
                self.tau_sim
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_rep) {
            return Err(FabricError::InvalidConfig(format!(
                "tau_rep must lie in [0, 1], got {}",
                self.tau_rep
            )));
        }
        Ok(())
    }
}
