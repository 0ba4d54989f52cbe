//! Scenario harness: declarative run configurations, the episode driver,
//! trace-derived metrics, deterministic replay, and population sweeps.
//!
//! A scenario is fully serializable and is embedded in every trace header,
//! so any trace can be re-run and verified from the file alone.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{AgentSpec, Engine, EngineConfig, EpisodeOutcome, USER};
use crate::error::{FabricError, Result};
use crate::policy::{
    AgentPolicy, LiarPolicy, NoisyPolicy, Pipeline, RemoteChatPolicy, RemoteChatSpec,
    ScriptedSolver, StallPolicy,
};
use crate::refine::{IdentityRefiner, KeywordRefiner, RefinementPolicy};
use crate::reputation::{Evidence, ReputationConfig};
use crate::rng::substream;
use crate::task::{OracleEvaluator, Stage, TripTask};
use crate::trace::{EventKind, Trace, TraceHeader, TRACE_VERSION};
use crate::types::{AgentId, BrokerConfig, BrokerMode};
use crate::watchdog::{process_testimony, reputation_update, PeerLedger, Testimony};

/// How an agent behaves. Scripted kinds derive their behavior from the
/// entry's stage; `Remote` delegates payload text to a chat endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Scripted,
    Liar,
    Noisy { p: f64 },
    Stall,
    Remote { spec: RemoteChatSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub name: String,
    pub profile: String,
    pub stage: Stage,
    pub policy: PolicySpec,
    #[serde(default)]
    pub adversarial: bool,
    #[serde(default)]
    pub terminal: bool,
    #[serde(default)]
    pub entry: bool,
    /// Task index at which this agent registers; 0 = present from the start.
    #[serde(default)]
    pub joins_at_task: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub t_max: u32,
    pub broker: BrokerConfig,
    pub reputation: ReputationConfig,
    pub refinement: bool,
    pub pipeline: Pipeline,
    pub roster: Vec<RosterEntry>,
    /// Number of generated tasks when `explicit_tasks` is empty.
    pub task_count: u32,
    #[serde(default)]
    pub explicit_tasks: Vec<TripTask>,
    /// Replace scripted honest policies with remote chat agents.
    #[serde(default)]
    pub live: bool,
    #[serde(default)]
    pub remote: Option<RemoteChatSpec>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.broker.validate()?;
        self.reputation.validate()?;
        if self.t_max == 0 {
            return Err(FabricError::Scenario("t_max must be >= 1".into()));
        }
        if self.roster.iter().all(|r| r.adversarial) {
            return Err(FabricError::Scenario(
                "at least one truthful agent is required".into(),
            ));
        }
        if !self.roster.iter().any(|r| r.terminal) {
            return Err(FabricError::Scenario("a terminal agent is required".into()));
        }
        if !self
            .roster
            .iter()
            .any(|r| r.entry && r.joins_at_task == 0)
        {
            return Err(FabricError::Scenario(
                "an entry agent present from task 0 is required".into(),
            ));
        }
        if self.tasks().is_empty() {
            return Err(FabricError::Scenario("no tasks configured".into()));
        }
        Ok(())
    }

    pub fn tasks(&self) -> Vec<TripTask> {
        if self.explicit_tasks.is_empty() {
            (0..self.task_count).map(TripTask::generate).collect()
        } else {
            self.explicit_tasks.clone()
        }
    }

    /// Roster indices in registration order: by join task, then roster
    /// position. Agent ids are assigned in exactly this order.
    fn registration_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.roster.len()).collect();
        order.sort_by_key(|i| (self.roster[*i].joins_at_task, *i));
        order
    }

    /// The id each roster entry will receive, and its designated stage.
    pub fn agent_stages(&self) -> BTreeMap<AgentId, Stage> {
        self.registration_order()
            .iter()
            .enumerate()
            .map(|(id, idx)| (AgentId::from_index(id as u32), self.roster[*idx].stage))
            .collect()
    }

    /// Entry agent for a task: entry agents split the task list into
    /// contiguous blocks, in roster order.
    fn entry_for_task(&self, task_index: usize, task_total: usize) -> AgentId {
        let order = self.registration_order();
        let entries: Vec<AgentId> = order
            .iter()
            .enumerate()
            .filter(|(_, idx)| self.roster[**idx].entry)
            .map(|(id, _)| AgentId::from_index(id as u32))
            .collect();
        let slot = task_index * entries.len() / task_total.max(1);
        entries[slot.min(entries.len() - 1)]
    }

    fn run_id(&self) -> String {
        format!("{}-s{}", self.name, self.seed)
    }
}

fn build_policy(entry: &RosterEntry, scenario: &Scenario) -> Box<dyn AgentPolicy> {
    let scripted = ScriptedSolver::new(entry.stage, scenario.pipeline);
    match &entry.policy {
        PolicySpec::Scripted if scenario.live => Box::new(RemoteChatPolicy {
            spec: scenario.remote.clone().unwrap_or_default(),
            system_prompt: entry.profile.clone(),
            plan: scenario
                .pipeline
                .next(entry.stage)
                .map(|s| s.plan().to_string()),
            terminal: entry.terminal,
        }),
        PolicySpec::Scripted => Box::new(scripted),
        PolicySpec::Liar => Box::new(LiarPolicy(scripted)),
        PolicySpec::Noisy { p } => Box::new(NoisyPolicy {
            inner: scripted,
            p: *p,
        }),
        PolicySpec::Stall => Box::new(StallPolicy),
        PolicySpec::Remote { spec } => Box::new(RemoteChatPolicy {
            spec: spec.clone(),
            system_prompt: entry.profile.clone(),
            plan: scenario
                .pipeline
                .next(entry.stage)
                .map(|s| s.plan().to_string()),
            terminal: entry.terminal,
        }),
    }
}

/// Summary quantities, all recomputable from the trace alone except wall
/// time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub tasks: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub total_routed: usize,
    pub fallback_tasks: usize,
    /// Fraction of routed packets delivered to the stage their plan names.
    pub routing_accuracy: f64,
    /// Routed packets per round never exceed publications × top_k.
    pub route_bound_ok: bool,
    /// Routed packet count per (task, round), in execution order.
    pub messages_per_round: Vec<usize>,
    pub wall_ms: u128,
}

/// Stage whose routing plan equals this text, if any.
fn stage_for_plan(plan: &str) -> Option<Stage> {
    [
        Stage::Decompose,
        Stage::Outbound,
        Stage::Return,
        Stage::Verify,
        Stage::Solve,
        Stage::Final,
    ]
    .into_iter()
    .find(|s| s.plan() == plan)
}

pub fn compute_metrics(trace: &Trace) -> Metrics {
    let stages = trace.header.scenario.agent_stages();
    let top_k = trace.header.scenario.broker.top_k;
    let topk_mode = trace.header.scenario.broker.mode == BrokerMode::TopK;
    let mut tasks = 0;
    let mut correct = 0;
    let mut fallback_tasks = 0;
    let mut total_routed = 0;
    let mut good_routes = 0;
    // plan text per live packet id, for routing-accuracy attribution
    let mut plans: BTreeMap<u64, Option<String>> = BTreeMap::new();
    let mut messages_per_round = Vec::new();
    let mut round_key = None;
    let mut round_published = 0usize;
    let mut round_routed = 0usize;
    let mut route_bound_ok = true;

    for event in &trace.events {
        let key = (event.task, event.round);
        if round_key != Some(key) {
            if round_key.is_some() {
                messages_per_round.push(round_routed);
                route_bound_ok &= !topk_mode || round_routed <= round_published * top_k;
            }
            round_key = Some(key);
            round_published = 0;
            round_routed = 0;
        }
        match &event.kind {
            EventKind::Publish { agent, packet, plan, .. } => {
                if *agent != USER {
                    round_published += 1;
                }
                plans.insert(packet.0, plan.clone());
            }
            EventKind::Route { packet, recipient, .. } => {
                total_routed += 1;
                round_routed += 1;
                let planned = plans.get(&packet.0).and_then(|p| p.as_deref());
                let designated = planned.and_then(stage_for_plan);
                if designated.is_some() && designated == stages.get(recipient).copied() {
                    good_routes += 1;
                }
            }
            EventKind::Final { correct: c, fallback, .. } => {
                tasks += 1;
                if *c {
                    correct += 1;
                }
                if *fallback {
                    fallback_tasks += 1;
                }
            }
            _ => {}
        }
    }
    if round_key.is_some() {
        messages_per_round.push(round_routed);
        route_bound_ok &= !topk_mode || round_routed <= round_published * top_k;
    }
    Metrics {
        tasks,
        correct,
        accuracy: if tasks == 0 {
            0.0
        } else {
            correct as f64 / tasks as f64
        },
        total_routed,
        fallback_tasks,
        routing_accuracy: if total_routed == 0 {
            0.0
        } else {
            good_routes as f64 / total_routed as f64
        },
        route_bound_ok,
        messages_per_round,
        wall_ms: 0,
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub trace: Trace,
    pub outcomes: Vec<EpisodeOutcome>,
    pub metrics: Metrics,
}

/// Executes a scenario end to end: registration (including late joiners),
/// one episode per task, metrics from the resulting trace.
pub fn run(scenario: &Scenario) -> Result<RunArtifacts> {
    scenario.validate()?;
    let started = Instant::now();
    let tasks = scenario.tasks();
    let refiner: Box<dyn RefinementPolicy> = if scenario.refinement {
        Box::new(KeywordRefiner)
    } else {
        Box::new(IdentityRefiner)
    };
    let mut engine = Engine::new(
        EngineConfig {
            seed: scenario.seed,
            broker: scenario.broker,
            reputation: scenario.reputation,
            refinement: scenario.refinement,
            t_max: scenario.t_max,
        },
        refiner,
        Box::new(OracleEvaluator::new(tasks.clone())),
    )?;
    let mut trace = Trace::new(TraceHeader {
        version: TRACE_VERSION,
        run_id: scenario.run_id(),
        seed: scenario.seed,
        scenario: scenario.clone(),
    });

    let order = scenario.registration_order();
    let mut next_join = 0usize;
    let mut outcomes = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        while next_join < order.len()
            && scenario.roster[order[next_join]].joins_at_task as usize <= i
        {
            let entry = &scenario.roster[order[next_join]];
            engine.register(
                AgentSpec {
                    name: entry.name.clone(),
                    profile: entry.profile.clone(),
                    policy: build_policy(entry, scenario),
                    terminal: entry.terminal,
                },
                &mut trace,
            )?;
            next_join += 1;
        }
        let entry = scenario.entry_for_task(i, tasks.len());
        outcomes.push(engine.run_episode(task, &[entry], &mut trace)?);
    }
    let mut metrics = compute_metrics(&trace);
    metrics.wall_ms = started.elapsed().as_millis();
    Ok(RunArtifacts {
        trace,
        outcomes,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub matched: bool,
    pub divergence: Option<usize>,
    pub events_checked: usize,
}

/// Re-runs the scenario embedded in a trace and compares event streams.
pub fn replay(trace: &Trace) -> Result<ReplayReport> {
    let rerun = run(&trace.header.scenario)?;
    let divergence = trace.first_divergence(&rerun.trace);
    Ok(ReplayReport {
        matched: divergence.is_none(),
        divergence,
        events_checked: trace.events.len().min(rerun.trace.events.len()),
    })
}

/// First-isolation analysis of one (evaluator, subject) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsolationSummary {
    pub owner: AgentId,
    pub subject: AgentId,
    /// Evaluations the owner needed before the subject's reputation mean
    /// crossed the threshold; `None` if it never crossed.
    pub evaluations_to_isolation: Option<usize>,
    /// Packets routed to the subject after the crossing.
    pub routes_after: usize,
}

pub fn isolation_summary(
    trace: &Trace,
    owner: AgentId,
    subject: AgentId,
    tau_rep: f64,
) -> IsolationSummary {
    let mut evaluations = 0usize;
    let mut crossed_at = None;
    let mut routes_after = 0usize;
    for (i, event) in trace.events.iter().enumerate() {
        match &event.kind {
            EventKind::Evaluate {
                evaluator, subject: s, ..
            } if *evaluator == owner && *s == subject && crossed_at.is_none() => {
                evaluations += 1;
            }
            EventKind::ReputationUpdate {
                owner: o,
                subject: s,
                after,
                ..
            } if *o == owner && *s == subject && crossed_at.is_none() && *after >= tau_rep => {
                crossed_at = Some(i);
            }
            EventKind::Route { recipient, .. }
                if *recipient == subject && crossed_at.is_some() =>
            {
                routes_after += 1;
            }
            _ => {}
        }
    }
    IsolationSummary {
        owner,
        subject,
        evaluations_to_isolation: crossed_at.map(|_| evaluations),
        routes_after,
    }
}

/// Reputation-mean trajectory (values after each update) for a pair.
pub fn reputation_trajectory(trace: &Trace, owner: AgentId, subject: AgentId) -> Vec<f64> {
    trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ReputationUpdate {
                owner: o,
                subject: s,
                after,
                ..
            } if *o == owner && *s == subject => Some(*after),
            _ => None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scenario builders
// ---------------------------------------------------------------------------

fn worker(name: &str, stage: Stage) -> RosterEntry {
    RosterEntry {
        name: name.into(),
        profile: stage.profile().into(),
        stage,
        policy: PolicySpec::Scripted,
        adversarial: false,
        terminal: stage == Stage::Final,
        entry: stage == Stage::Decompose,
        joins_at_task: 0,
    }
}

impl Scenario {
    /// Five crafted truthful agents on the long pipeline; the clean
    /// baseline.
    pub fn clean_pipeline(seed: u64, task_count: u32) -> Self {
        Scenario {
            name: "clean-pipeline".into(),
            seed,
            t_max: 5,
            broker: BrokerConfig::default(),
            reputation: ReputationConfig::default(),
            refinement: false,
            pipeline: Pipeline::Long,
            roster: Pipeline::Long
                .stages()
                .iter()
                .map(|s| worker(&format!("{s:?}").to_lowercase(), *s))
                .collect(),
            task_count,
            explicit_tasks: vec![],
            live: false,
            remote: None,
        }
    }

    /// Three truthful agents plus two liars posing as solvers. The liars
    /// take the low solver ids, so the terminal agent's tie-break prefers
    /// their answers until the analyst isolates them.
    pub fn byzantine(seed: u64, task_count: u32) -> Self {
        let liar = |name: &str| RosterEntry {
            name: name.into(),
            profile: "solver compute outbound return answer distance expert".into(),
            stage: Stage::Solve,
            policy: PolicySpec::Liar,
            adversarial: true,
            terminal: false,
            entry: false,
            joins_at_task: 0,
        };
        Scenario {
            name: "byzantine".into(),
            seed,
            t_max: 5,
            broker: BrokerConfig {
                top_k: 3,
                ..Default::default()
            },
            reputation: ReputationConfig::default(),
            refinement: false,
            pipeline: Pipeline::Short,
            roster: vec![
                worker("analyst", Stage::Decompose),
                liar("liar-1"),
                liar("liar-2"),
                worker("solver", Stage::Solve),
                worker("final", Stage::Final),
            ],
            task_count,
            explicit_tasks: vec![],
            live: false,
            remote: None,
        }
    }

    /// Minimal three-agent instance used for line-by-line conformance
    /// checking against an independent implementation of the round loop.
    pub fn conformance(seed: u64) -> Self {
        Scenario {
            name: "conformance".into(),
            seed,
            t_max: 3,
            broker: BrokerConfig::default(),
            reputation: ReputationConfig::default(),
            refinement: false,
            pipeline: Pipeline::Short,
            roster: vec![
                worker("analyst", Stage::Decompose),
                worker("solver", Stage::Solve),
                worker("final", Stage::Final),
            ],
            task_count: 1,
            explicit_tasks: vec![TripTask::showcase()],
            live: false,
            remote: None,
        }
    }

    /// Population-scaling instance: one analyst, `n - 2` solvers, one
    /// terminal agent; the task list grows with the population.
    pub fn sweep_instance(n: usize, seed: u64, mode: BrokerMode) -> Result<Self> {
        if n < 3 {
            return Err(FabricError::InvalidConfig(format!(
                "population {n} is below the roster minimum of 3"
            )));
        }
        let mut roster = vec![worker("analyst", Stage::Decompose)];
        for i in 0..n - 2 {
            roster.push(worker(&format!("solver-{i}"), Stage::Solve));
        }
        roster.push(worker("final", Stage::Final));
        Ok(Scenario {
            name: format!("sweep-n{n}"),
            seed,
            t_max: 3,
            broker: BrokerConfig {
                top_k: 1,
                mode,
                ..Default::default()
            },
            reputation: ReputationConfig::default(),
            refinement: false,
            pipeline: Pipeline::Short,
            roster,
            task_count: n as u32,
            explicit_tasks: vec![],
            live: false,
            remote: None,
        })
    }

    /// Pool-quality scenario. The solver starts with a weak generic profile;
    /// at task 10 a persuasive but useless competitor joins whose static
    /// profile outscores the solver's. With refinement the solver's profile
    /// has been promoted well above the newcomer's by then; without it the
    /// newcomer captures the single brokerage slot and, once isolated,
    /// leaves it empty.
    pub fn naive_pool(seed: u64, refinement: bool) -> Self {
        Scenario {
            name: if refinement {
                "naive-pool-refine-on".into()
            } else {
                "naive-pool-refine-off".into()
            },
            seed,
            t_max: 5,
            broker: BrokerConfig {
                top_k: 1,
                tau_sim: 0.2,
                ..Default::default()
            },
            reputation: ReputationConfig::default(),
            refinement,
            pipeline: Pipeline::Short,
            roster: vec![
                worker("analyst", Stage::Decompose),
                RosterEntry {
                    name: "solver".into(),
                    profile: "helper agent good with answer distance sums".into(),
                    stage: Stage::Solve,
                    policy: PolicySpec::Scripted,
                    adversarial: false,
                    terminal: false,
                    entry: false,
                    joins_at_task: 0,
                },
                worker("final", Stage::Final),
                RosterEntry {
                    name: "impostor".into(),
                    profile: "clever helper knows compute outbound return tricks".into(),
                    stage: Stage::Verify,
                    policy: PolicySpec::Stall,
                    adversarial: false,
                    terminal: false,
                    entry: false,
                    joins_at_task: 10,
                },
            ],
            task_count: 30,
            explicit_tasks: vec![],
            live: false,
            remote: None,
        }
    }

    /// Same shape as [`Scenario::naive_pool`] with expert profiles: the
    /// crafted solver outranks the newcomer with or without refinement.
    pub fn crafted_pool(seed: u64, refinement: bool) -> Self {
        let mut scenario = Self::naive_pool(seed, refinement);
        scenario.name = if refinement {
            "crafted-pool-refine-on".into()
        } else {
            "crafted-pool-refine-off".into()
        };
        scenario.roster[1].profile = Stage::Solve.profile().into();
        scenario
    }
}

/// One cell of the pool-quality comparison grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoolQualityCell {
    pub refinement: bool,
    pub routing_accuracy: f64,
    pub task_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolQualityReport {
    pub crafted: [PoolQualityCell; 2],
    pub naive: [PoolQualityCell; 2],
}

fn pool_cell(scenario: &Scenario, refinement: bool) -> Result<PoolQualityCell> {
    let mut scenario = scenario.clone();
    scenario.refinement = refinement;
    let artifacts = run(&scenario)?;
    Ok(PoolQualityCell {
        refinement,
        routing_accuracy: artifacts.metrics.routing_accuracy,
        task_accuracy: artifacts.metrics.accuracy,
    })
}

/// Runs the crafted and naive scenarios each with refinement off and on and
/// reports routing and task accuracy for all four cells.
pub fn pool_quality_compare(crafted: &Scenario, naive: &Scenario) -> Result<PoolQualityReport> {
    Ok(PoolQualityReport {
        crafted: [pool_cell(crafted, false)?, pool_cell(crafted, true)?],
        naive: [pool_cell(naive, false)?, pool_cell(naive, true)?],
    })
}

// ---------------------------------------------------------------------------
// Sweeps and fits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub total_messages: usize,
    pub wall_ms: u128,
}

pub fn sweep(ns: &[usize], seeds: &[u64], mode: BrokerMode) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        for &seed in seeds {
            let scenario = Scenario::sweep_instance(n, seed, mode)?;
            let artifacts = run(&scenario)?;
            rows.push(SweepRow {
                n,
                seed,
                accuracy: artifacts.metrics.accuracy,
                total_messages: artifacts.metrics.total_routed,
                wall_ms: artifacts.metrics.wall_ms,
            });
        }
    }
    Ok(rows)
}

/// Least-squares line through the points: (slope, intercept, r_squared).
/// An exact fit of constant data reports r_squared = 1.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    (slope, intercept, r2)
}

/// Exponent of the best-fit power law `y = c·x^k` via log-log regression.
pub fn power_fit_exponent(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.0.ln(), p.1.ln())).collect();
    linear_fit(&logs).0
}

// ---------------------------------------------------------------------------
// Watchdog-level studies
// ---------------------------------------------------------------------------

/// One agent's discounted first-hand posterior tracking a peer that lies
/// with probability `p`; returns the time-averaged misbehavior mean over
/// rounds 100..=500.
pub fn steady_state_mean(p: f64, seed: u64) -> f64 {
    use rand::Rng;
    let mut rating = crate::reputation::BetaRating::new();
    let lambda = 0.9;
    let mut acc = 0.0;
    let mut count = 0usize;
    for round in 1..=500u32 {
        let mut rng = substream(seed, AgentId::from_index(1), 0, round);
        let s = if rng.gen_bool(p) {
            Evidence::Misbehaved
        } else {
            Evidence::Behaved
        };
        rating = rating.discounted_update(s, lambda).unwrap();
        if round >= 100 {
            acc += rating.mean();
            count += 1;
        }
    }
    acc / count as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisoningOutcome {
    /// Largest |merged − first-hand-only| reputation-mean gap after warm-up.
    pub max_gap_after_warmup: f64,
    /// Fraction of post-warm-up solicitations in which each lying witness
    /// was ruled inadmissible (worst witness).
    pub liar_inadmissible_rate: f64,
}

/// Probability that a witness has a private interaction with the subject
/// in a given round, on top of the shared one everyone observes. Witness
/// posteriors therefore genuinely differ across witnesses and seeds.
const WITNESS_EXTRA_OBSERVE_RATE: f64 = 0.5;

/// Witness-poisoning study: a consistently misbehaving subject is watched
/// by the owner and four witnesses, each of which also sees its own random
/// extra interactions. Two witnesses report their posteriors honestly; two
/// collude with the subject and report them inverted, trying to whitewash
/// it.
pub fn witness_poisoning_study(seed: u64, rounds: u32, warmup: u32) -> Result<PoisoningOutcome> {
    use crate::reputation::BetaRating;
    use rand::Rng;

    let cfg = ReputationConfig::default();
    let owner = AgentId::from_index(0);
    let subject = AgentId::from_index(9);
    let honest = [AgentId::from_index(1), AgentId::from_index(2)];
    let liars = [AgentId::from_index(3), AgentId::from_index(4)];
    let mut ledger = PeerLedger::new(owner);
    let mut witness_f = [BetaRating::new(); 4];
    let mut first_hand_only = BetaRating::new();
    let mut max_gap = 0.0f64;
    let mut liar_solicitations = [0usize; 2];
    let mut liar_inadmissible = [0usize; 2];

    for round in 1..=rounds {
        let s = Evidence::Misbehaved;
        for (i, w) in honest.iter().chain(liars.iter()).enumerate() {
            let mut rng = substream(seed, *w, 0, round);
            witness_f[i] = witness_f[i].discounted_update(s, cfg.lambda)?;
            if rng.gen_bool(WITNESS_EXTRA_OBSERVE_RATE) {
                witness_f[i] = witness_f[i].discounted_update(s, cfg.lambda)?;
            }
        }
        let entry = ledger.entry(subject);
        entry.first_hand = entry.first_hand.discounted_update(s, cfg.lambda)?;
        first_hand_only = first_hand_only.discounted_update(s, cfg.lambda)?;

        let mut admissible = Vec::new();
        for (i, w) in honest.into_iter().enumerate() {
            let testimony = Testimony {
                witness: w,
                subject,
                reported: witness_f[i],
            };
            if process_testimony(&mut ledger, &testimony, &cfg)?.admissible {
                admissible.push(testimony);
            }
        }
        for (i, w) in liars.into_iter().enumerate() {
            let f = witness_f[2 + i];
            let testimony = Testimony {
                witness: w,
                subject,
                reported: BetaRating::from_counts(f.y(), f.x())?,
            };
            let outcome = process_testimony(&mut ledger, &testimony, &cfg)?;
            if round > warmup {
                liar_solicitations[i] += 1;
                if !outcome.admissible {
                    liar_inadmissible[i] += 1;
                }
            }
            if outcome.admissible {
                admissible.push(testimony);
            }
        }
        reputation_update(&mut ledger, subject, s, &admissible, &cfg)?;
        if round > warmup {
            let gap =
                (ledger.get(subject).unwrap().reputation.mean() - first_hand_only.mean()).abs();
            max_gap = max_gap.max(gap);
        }
    }
    let liar_inadmissible_rate = (0..2)
        .map(|i| liar_inadmissible[i] as f64 / liar_solicitations[i].max(1) as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(PoisoningOutcome {
        max_gap_after_warmup: max_gap,
        liar_inadmissible_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_roundtrips_through_json() {
        let scenario = Scenario::byzantine(7, 5);
        let json = serde_json::to_string(&scenario).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(scenario, back);
    }

    #[test]
    fn validation_rejects_degenerate_rosters() {
        let mut s = Scenario::clean_pipeline(1, 1);
        s.roster.retain(|r| !r.terminal);
        assert!(s.validate().is_err());
        let mut s = Scenario::clean_pipeline(1, 1);
        for r in &mut s.roster {
            r.adversarial = true;
        }
        assert!(s.validate().is_err());
        let mut s = Scenario::clean_pipeline(1, 1);
        s.task_count = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn clean_pipeline_full_accuracy() {
        let artifacts = run(&Scenario::clean_pipeline(11, 10)).unwrap();
        assert_eq!(artifacts.metrics.accuracy, 1.0);
        assert_eq!(artifacts.metrics.fallback_tasks, 0);
        assert!(artifacts.metrics.route_bound_ok);
        assert_eq!(artifacts.metrics.routing_accuracy, 1.0);
    }

    #[test]
    fn byzantine_liars_get_isolated() {
        let scenario = Scenario::byzantine(3, 10);
        let artifacts = run(&scenario).unwrap();
        let analyst = AgentId::from_index(0);
        for liar in [AgentId::from_index(1), AgentId::from_index(2)] {
            let summary =
                isolation_summary(&artifacts.trace, analyst, liar, scenario.reputation.tau_rep);
            assert_eq!(summary.evaluations_to_isolation, Some(2));
            assert_eq!(summary.routes_after, 0, "liar routed after isolation");
        }
        // Exactly the first two tasks fall to the tie-break toward liar ids.
        let wrong: Vec<u32> = artifacts
            .outcomes
            .iter()
            .filter(|o| !o.correct)
            .map(|o| o.task)
            .collect();
        assert_eq!(wrong, vec![0, 1]);
    }

    #[test]
    fn replay_matches_and_detects_tampering() {
        let artifacts = run(&Scenario::conformance(5)).unwrap();
        let report = replay(&artifacts.trace).unwrap();
        assert!(report.matched, "divergence at {:?}", report.divergence);
        let mut tampered = artifacts.trace.clone();
        for event in tampered.events.iter_mut() {
            if let EventKind::Route { score, .. } = &mut event.kind {
                *score += 0.25;
                break;
            }
        }
        let report = replay(&tampered).unwrap();
        assert!(!report.matched);
        assert!(report.divergence.is_some());
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let a = run(&Scenario::byzantine(9, 5)).unwrap();
        let b = run(&Scenario::byzantine(9, 5)).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.trace.write_jsonl(&mut buf_a).unwrap();
        b.trace.write_jsonl(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn sweep_rows_and_minimum() {
        let rows = sweep(&[5], &[1, 2, 3], BrokerMode::TopK).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.accuracy == 1.0));
        assert!(Scenario::sweep_instance(2, 1, BrokerMode::TopK).is_err());
    }

    #[test]
    fn fits_recover_known_laws() {
        let line: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 3.0 * i as f64 + 2.0)).collect();
        let (slope, intercept, r2) = linear_fit(&line);
        assert!((slope - 3.0).abs() < 1e-9);
        assert!((intercept - 2.0).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-9);
        let square: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, (i * i) as f64)).collect();
        assert!((power_fit_exponent(&square) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn steady_state_tracks_lie_rate() {
        for p in [0.1, 0.3, 0.7] {
            let mean: f64 = (0..20).map(|s| steady_state_mean(p, s)).sum::<f64>() / 20.0;
            assert!((mean - p).abs() < 0.05, "p={p} mean={mean}");
        }
    }

    #[test]
    fn poisoned_witnesses_are_contained() {
        let outcome = witness_poisoning_study(17, 200, 10).unwrap();
        assert!(outcome.max_gap_after_warmup <= 0.05, "{outcome:?}");
        assert!(outcome.liar_inadmissible_rate >= 0.9, "{outcome:?}");
    }

    #[test]
    fn naive_pool_refinement_gap() {
        let on = run(&Scenario::naive_pool(21, true)).unwrap();
        let off = run(&Scenario::naive_pool(21, false)).unwrap();
        let crafted = run(&Scenario::crafted_pool(21, true)).unwrap();
        assert!(
            on.metrics.routing_accuracy > off.metrics.routing_accuracy,
            "on={} off={}",
            on.metrics.routing_accuracy,
            off.metrics.routing_accuracy
        );
        assert!(
            on.metrics.routing_accuracy >= 0.9 * crafted.metrics.routing_accuracy,
            "on={} crafted={}",
            on.metrics.routing_accuracy,
            crafted.metrics.routing_accuracy
        );
    }
}
