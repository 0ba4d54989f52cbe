//! Decentralized coordination fabric for agent populations.
//!
//! Agents publish semantic packets to an intent broker instead of addressing
//! peers directly. A shared subscription pool matches packets to recipients
//! by embedding similarity, agents refine their own subscriptions in reaction
//! to the traffic they receive, and every agent maintains local Bayesian
//! ratings of its peers — first-hand evidence, witness trust, and merged
//! reputation — so misbehaving agents lose routes without any central
//! authority. A deterministic simulation harness drives full populations and
//! records every protocol event in a replayable trace.

pub mod broker;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod policy;
pub mod refine;
pub mod reputation;
pub mod rng;
pub mod scenario;
pub mod task;
pub mod trace;
pub mod types;
pub mod watchdog;

pub use broker::{broker_select, match_score, Selection};
pub use embedding::{cosine, HashBagEmbedder, EmbeddingProvider, DEFAULT_DIM};
pub use engine::{AgentSpec, Engine, EngineConfig, EpisodeOutcome, USER};
pub use error::{FabricError, Result};
pub use policy::{
    AgentPolicy, LiarPolicy, NoisyPolicy, Pipeline, Publication, RemoteChatPolicy,
    RemoteChatSpec, ScriptedSolver, StallPolicy,
};
pub use refine::{IdentityRefiner, KeywordRefiner, RefinementPolicy, MAX_PROFILE_LEN};
pub use reputation::{deviation_statistic, BetaRating, Evidence, ReputationConfig};
pub use rng::substream;
pub use scenario::{
    compute_metrics, isolation_summary, linear_fit, pool_quality_compare, power_fit_exponent,
    replay, reputation_trajectory, run, steady_state_mean, sweep, witness_poisoning_study,
    IsolationSummary, Metrics, PoisoningOutcome, PolicySpec, PoolQualityCell, PoolQualityReport,
    ReplayReport, RosterEntry, RunArtifacts, Scenario, SweepRow,
};
pub use task::{GroundTruth, OracleEvaluator, Stage, TripTask};
pub use trace::{
    payload_digest, EventKind, TerminateReason, Trace, TraceEvent, TraceHeader, TRACE_VERSION,
};
pub use types::{
    AgentContext, AgentId, BrokerConfig, BrokerMode, MessagePacket, PacketId, Subscription,
};
pub use watchdog::{
    first_hand_evaluate, process_testimony, reputation_update, solicit, EvaluationPolicy,
    PeerLedger, PeerRatings, Testimony, TestimonyOutcome, UpstreamMap,
};
