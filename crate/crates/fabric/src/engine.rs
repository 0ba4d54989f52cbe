//! The coordination engine: a four-phase round loop over a shared
//! subscription pool, per-agent ledgers, and a broker.
//!
//! One engine instance lives for a whole run; each task is an episode that
//! resets message state but keeps the pool, the ledgers, and every agent's
//! local profile. Per round:
//!
//! 1. feedback — each supervisor (the producer that routed to an agent last
//!    round) evaluates that agent's newest packet, solicits testimony, and
//!    updates its ledger; fresh inboxes fold into histories
//! 2. refinement — active agents may rewrite their profiles; confirmed
//!    agents' newer profiles are promoted to the shared pool
//! 3. publication — active agents publish, in ascending id order
//! 4. brokerage — each packet is matched against the pool and delivered;
//!    recipients become the next active set
//!
//! An episode terminates when every packet of a round carries `finish`, or
//! at the round cap. If routing dead-ends earlier, the terminal agent is
//! activated with the stranded packets as a fallback.

use std::collections::{BTreeMap, BTreeSet};

use crate::broker::{broker_select, match_score};
use crate::embedding::{EmbeddingProvider, HashBagEmbedder};
use crate::error::{FabricError, Result};
use crate::policy::AgentPolicy;
use crate::refine::RefinementPolicy;
use crate::reputation::{Evidence, ReputationConfig};
use crate::task::{parse_fields, TripTask};
use crate::trace::{payload_digest, EventKind, TerminateReason, Trace, TraceEvent};
use crate::types::{
    AgentContext, AgentId, BrokerConfig, MessagePacket, PacketId, Subscription,
};
use crate::watchdog::{
    first_hand_evaluate, process_testimony, reputation_update, solicit, EvaluationPolicy,
    PeerLedger, UpstreamMap,
};

/// Producer id of query packets; never a registered agent.
pub const USER: AgentId = AgentId::from_index(u32::MAX);

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub seed: u64,
    pub broker: BrokerConfig,
    pub reputation: ReputationConfig,
    pub refinement: bool,
    pub t_max: u32,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.broker.validate()?;
        self.reputation.validate()?;
        if self.t_max == 0 {
            return Err(FabricError::InvalidConfig("t_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to register one agent.
pub struct AgentSpec {
    pub name: String,
    pub profile: String,
    pub policy: Box<dyn AgentPolicy>,
    pub terminal: bool,
}

struct AgentRuntime {
    name: String,
    ctx: AgentContext,
    policy: Box<dyn AgentPolicy>,
    terminal: bool,
}

/// Result of one task episode, derived from the same data the trace holds.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub task: u32,
    pub answer: Option<i64>,
    pub correct: bool,
    pub rounds: u32,
    pub routed_messages: usize,
    pub fallback: bool,
}

pub struct Engine {
    cfg: EngineConfig,
    embedder: Box<dyn EmbeddingProvider>,
    refiner: Box<dyn RefinementPolicy>,
    evaluator: Box<dyn EvaluationPolicy>,
    agents: BTreeMap<AgentId, AgentRuntime>,
    pool: BTreeMap<AgentId, Subscription>,
    ledgers: BTreeMap<AgentId, PeerLedger>,
    /// Agents that have ever received a good first-hand verdict; only their
    /// refinements may reach the shared pool.
    confirmed: BTreeSet<AgentId>,
    next_packet: u64,
    /// Monotone across episodes; witness recency keys off it.
    global_round: u64,
}

impl Engine {
    pub fn new(
        cfg: EngineConfig,
        refiner: Box<dyn RefinementPolicy>,
        evaluator: Box<dyn EvaluationPolicy>,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Engine {
            cfg,
            embedder: Box::new(HashBagEmbedder::default()),
            refiner,
            evaluator,
            agents: BTreeMap::new(),
            pool: BTreeMap::new(),
            ledgers: BTreeMap::new(),
            confirmed: BTreeSet::new(),
            next_packet: 0,
            global_round: 0,
        })
    }

    pub fn register(&mut self, spec: AgentSpec, trace: &mut Trace) -> Result<AgentId> {
        let id = AgentId::from_index(self.agents.len() as u32);
        if self.agents.contains_key(&id) {
            return Err(FabricError::DuplicateRegistration(id.to_string()));
        }
        let subscription = Subscription::new(id, &spec.profile, self.embedder.as_ref());
        self.pool.insert(id, subscription.clone());
        self.ledgers.insert(id, PeerLedger::new(id));
        trace.push(TraceEvent {
            task: 0,
            round: 0,
            kind: EventKind::Register {
                agent: id,
                profile: spec.profile.clone(),
                version: 0,
            },
        });
        self.agents.insert(
            id,
            AgentRuntime {
                name: spec.name,
                ctx: AgentContext {
                    agent: id,
                    subscription,
                    history: Vec::new(),
                    toolset: Vec::new(),
                    inbox: Vec::new(),
                },
                policy: spec.policy,
                terminal: spec.terminal,
            },
        );
        Ok(id)
    }

    /// Removes an agent from the pool and the roster; its ids never recycle
    /// and other agents keep their ledger entries about it.
    pub fn deregister(&mut self, id: AgentId) -> Result<()> {
        if self.agents.remove(&id).is_none() {
            return Err(FabricError::UnknownAgent(id.to_string()));
        }
        self.pool.remove(&id);
        Ok(())
    }

    pub fn agent_name(&self, id: AgentId) -> Option<&str> {
        self.agents.get(&id).map(|a| a.name.as_str())
    }

    pub fn ledger(&self, id: AgentId) -> Option<&PeerLedger> {
        self.ledgers.get(&id)
    }

    pub fn pool(&self) -> &BTreeMap<AgentId, Subscription> {
        &self.pool
    }

    fn terminal_agent(&self) -> Option<AgentId> {
        self.agents
            .iter()
            .find(|(_, a)| a.terminal)
            .map(|(id, _)| *id)
    }

    fn fresh_packet_id(&mut self) -> PacketId {
        let id = PacketId(self.next_packet);
        self.next_packet += 1;
        id
    }

    /// Runs one task episode. `entry` names the agents that receive the
    /// query packet and act in round 1.
    pub fn run_episode(
        &mut self,
        task: &TripTask,
        entry: &[AgentId],
        trace: &mut Trace,
    ) -> Result<EpisodeOutcome> {
        for id in entry {
            if !self.agents.contains_key(id) {
                return Err(FabricError::UnknownAgent(id.to_string()));
            }
        }
        for agent in self.agents.values_mut() {
            agent.ctx.history.clear();
            agent.ctx.inbox.clear();
        }

        let query = MessagePacket {
            id: self.fresh_packet_id(),
            producer: USER,
            round: 0,
            payload: task.query_text(),
            plan: None,
            parents: vec![],
            finish: false,
        };
        trace.push(TraceEvent {
            task: task.id,
            round: 0,
            kind: EventKind::Publish {
                agent: USER,
                packet: query.id,
                payload: query.payload.clone(),
                plan: None,
                finish: false,
                digest: payload_digest(&query.payload),
            },
        });
        let mut active: BTreeSet<AgentId> = BTreeSet::new();
        for id in entry {
            self.agents.get_mut(id).unwrap().ctx.inbox.push(query.clone());
            active.insert(*id);
        }

        let mut prev_upstream = UpstreamMap::default();
        // Packets awaiting supervisor evaluation at the next round boundary.
        let mut pending_eval: Vec<(AgentId, MessagePacket)> = Vec::new();
        let mut routed_messages = 0usize;
        let mut last_finish: Option<(AgentId, PacketId, String)> = None;
        let mut last_any: Option<(AgentId, PacketId, String)> = None;
        let mut rounds_run = 0;

        for round in 1..=self.cfg.t_max {
            rounds_run = round;
            self.global_round += 1;

            // Phase 1: feedback. Witness reads use the round-boundary
            // snapshot so this phase's own updates cannot feed back into it.
            let snapshot = self.ledgers.clone();
            for (supervisor, packet) in pending_eval.drain(..) {
                let ledger = self.ledgers.get_mut(&supervisor).unwrap();
                let ctx = &self.agents[&supervisor].ctx;
                let s = match first_hand_evaluate(
                    ledger,
                    ctx,
                    &packet,
                    self.evaluator.as_ref(),
                    &self.cfg.reputation,
                    self.global_round,
                ) {
                    Ok(s) => s,
                    Err(FabricError::PolicyFailure(message)) => {
                        trace.push(TraceEvent {
                            task: task.id,
                            round,
                            kind: EventKind::PolicyFailure {
                                agent: supervisor,
                                message,
                            },
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                trace.push(TraceEvent {
                    task: task.id,
                    round,
                    kind: EventKind::Evaluate {
                        evaluator: supervisor,
                        subject: packet.producer,
                        packet: packet.id,
                        s: s.value() as u8,
                    },
                });
                if s == Evidence::Behaved {
                    self.confirmed.insert(packet.producer);
                }
                let testimonies = solicit(
                    supervisor,
                    packet.producer,
                    &snapshot,
                    self.cfg.reputation.w_max,
                );
                let mut admissible = Vec::new();
                let ledger = self.ledgers.get_mut(&supervisor).unwrap();
                for testimony in testimonies {
                    let outcome = process_testimony(ledger, &testimony, &self.cfg.reputation)?;
                    trace.push(TraceEvent {
                        task: task.id,
                        round,
                        kind: EventKind::TrustUpdate {
                            owner: supervisor,
                            witness: testimony.witness,
                            s: outcome.s_trust.value() as u8,
                            statistic: outcome.statistic,
                            admissible: outcome.admissible,
                        },
                    });
                    if outcome.admissible {
                        admissible.push(testimony);
                    }
                }
                let (before, after) = reputation_update(
                    ledger,
                    packet.producer,
                    s,
                    &admissible,
                    &self.cfg.reputation,
                )?;
                let merged = ledger.get(packet.producer).unwrap().reputation;
                trace.push(TraceEvent {
                    task: task.id,
                    round,
                    kind: EventKind::ReputationUpdate {
                        owner: supervisor,
                        subject: packet.producer,
                        before,
                        after,
                        x: merged.x(),
                        y: merged.y(),
                    },
                });
            }
            for id in &active {
                let ctx = &mut self.agents.get_mut(id).unwrap().ctx;
                let fresh: Vec<MessagePacket> = ctx.inbox.clone();
                ctx.history.extend(fresh);
            }

            // Phase 2: refinement and promotion.
            if self.cfg.refinement {
                for id in &active {
                    let runtime = self.agents.get_mut(id).unwrap();
                    if let Some(text) = self.refiner.refine(
                        &runtime.ctx.subscription,
                        &runtime.ctx.history,
                        &runtime.ctx.inbox,
                    ) {
                        runtime.ctx.subscription = runtime
                            .ctx
                            .subscription
                            .refined(&text, self.embedder.as_ref());
                        trace.push(TraceEvent {
                            task: task.id,
                            round,
                            kind: EventKind::Refine {
                                agent: *id,
                                profile: text,
                                version: runtime.ctx.subscription.version,
                            },
                        });
                    }
                }
                for (id, runtime) in &self.agents {
                    if !self.confirmed.contains(id) {
                        continue;
                    }
                    let pool_version = self.pool.get(id).map(|s| s.version).unwrap_or(0);
                    if runtime.ctx.subscription.version > pool_version {
                        self.pool.insert(*id, runtime.ctx.subscription.clone());
                        trace.push(TraceEvent {
                            task: task.id,
                            round,
                            kind: EventKind::Promote {
                                agent: *id,
                                version: runtime.ctx.subscription.version,
                            },
                        });
                    }
                }
            }

            // Phase 3: publication.
            let mut round_packets: Vec<MessagePacket> = Vec::new();
            let active_ids: Vec<AgentId> = active.iter().copied().collect();
            for id in &active_ids {
                let packet_id = self.fresh_packet_id();
                let runtime = self.agents.get_mut(id).unwrap();
                let parents: Vec<PacketId> = runtime.ctx.inbox.iter().map(|p| p.id).collect();
                let mut rng = crate::rng::substream(self.cfg.seed, *id, task.id, round);
                let publication = match runtime.policy.act(&runtime.ctx, &mut rng) {
                    Ok(p) => p,
                    Err(e) => {
                        trace.push(TraceEvent {
                            task: task.id,
                            round,
                            kind: EventKind::PolicyFailure {
                                agent: *id,
                                message: e.to_string(),
                            },
                        });
                        runtime.ctx.inbox.clear();
                        continue;
                    }
                };
                let packet = MessagePacket {
                    id: packet_id,
                    producer: *id,
                    round,
                    payload: publication.payload,
                    plan: publication.plan,
                    parents,
                    finish: publication.finish,
                };
                runtime.ctx.inbox.clear();
                runtime.ctx.history.push(packet.clone());
                trace.push(TraceEvent {
                    task: task.id,
                    round,
                    kind: EventKind::Publish {
                        agent: *id,
                        packet: packet.id,
                        payload: packet.payload.clone(),
                        plan: packet.plan.clone(),
                        finish: packet.finish,
                        digest: payload_digest(&packet.payload),
                    },
                });
                last_any = Some((*id, packet.id, packet.payload.clone()));
                if packet.finish {
                    last_finish = Some((*id, packet.id, packet.payload.clone()));
                }
                round_packets.push(packet);
            }

            // Phase 4: brokerage.
            let mut upstream = UpstreamMap::default();
            let mut next_active: BTreeSet<AgentId> = BTreeSet::new();
            for packet in &round_packets {
                if packet.finish {
                    continue;
                }
                let ledger = &self.ledgers[&packet.producer];
                let selections = broker_select(
                    packet,
                    &self.pool,
                    ledger,
                    &self.cfg.broker,
                    self.embedder.as_ref(),
                )?;
                for selection in selections {
                    self.agents
                        .get_mut(&selection.recipient)
                        .unwrap()
                        .ctx
                        .inbox
                        .push(packet.clone());
                    trace.push(TraceEvent {
                        task: task.id,
                        round,
                        kind: EventKind::Route {
                            producer: packet.producer,
                            packet: packet.id,
                            recipient: selection.recipient,
                            score: selection.score,
                        },
                    });
                    routed_messages += 1;
                    if upstream.supervisor_of(selection.recipient).is_none() {
                        upstream.record(selection.recipient, packet.producer);
                    }
                    next_active.insert(selection.recipient);
                }
            }
            for packet in &round_packets {
                if let Some(supervisor) = prev_upstream.supervisor_of(packet.producer) {
                    pending_eval.push((supervisor, packet.clone()));
                }
            }
            prev_upstream = upstream;

            // Termination / fallback.
            let all_finished =
                !round_packets.is_empty() && round_packets.iter().all(|p| p.finish);
            if all_finished {
                trace.push(TraceEvent {
                    task: task.id,
                    round,
                    kind: EventKind::Terminate {
                        reason: TerminateReason::Finished,
                    },
                });
                break;
            }
            if round == self.cfg.t_max || round_packets.is_empty() {
                trace.push(TraceEvent {
                    task: task.id,
                    round,
                    kind: EventKind::Terminate {
                        reason: TerminateReason::RoundLimit,
                    },
                });
                break;
            }
            if next_active.is_empty() {
                // Routing dead-ended with unfinished work: hand everything
                // to the terminal agent so the episode can still conclude.
                let Some(terminal) = self.terminal_agent() else {
                    trace.push(TraceEvent {
                        task: task.id,
                        round,
                        kind: EventKind::Terminate {
                            reason: TerminateReason::RoundLimit,
                        },
                    });
                    break;
                };
                let stranded: Vec<MessagePacket> = round_packets
                    .iter()
                    .filter(|p| p.producer != terminal)
                    .cloned()
                    .collect();
                if stranded.is_empty() {
                    trace.push(TraceEvent {
                        task: task.id,
                        round,
                        kind: EventKind::Terminate {
                            reason: TerminateReason::RoundLimit,
                        },
                    });
                    break;
                }
                for packet in stranded {
                    let score = match_score(
                        &packet,
                        &self.pool[&terminal],
                        self.embedder.as_ref(),
                    )?;
                    trace.push(TraceEvent {
                        task: task.id,
                        round,
                        kind: EventKind::Route {
                            producer: packet.producer,
                            packet: packet.id,
                            recipient: terminal,
                            score,
                        },
                    });
                    routed_messages += 1;
                    self.agents
                        .get_mut(&terminal)
                        .unwrap()
                        .ctx
                        .inbox
                        .push(packet);
                }
                next_active.insert(terminal);
            }
            active = next_active;
        }

        let truth = task.truth();
        let (agent, packet, payload, fallback) = match (&last_finish, &last_any) {
            (Some((a, p, text)), _) => (*a, Some(*p), Some(text.clone()), false),
            (None, Some((a, p, text))) => (*a, Some(*p), Some(text.clone()), true),
            (None, None) => (USER, None, None, true),
        };
        let answer = payload
            .as_deref()
            .and_then(|p| parse_fields(p).get("answer")?.parse::<i64>().ok());
        let correct = answer == Some(truth.answer);
        trace.push(TraceEvent {
            task: task.id,
            round: rounds_run,
            kind: EventKind::Final {
                agent,
                packet,
                answer,
                correct,
                fallback,
            },
        });
        Ok(EpisodeOutcome {
            task: task.id,
            answer,
            correct,
            rounds: rounds_run,
            routed_messages,
            fallback,
        })
    }
}
