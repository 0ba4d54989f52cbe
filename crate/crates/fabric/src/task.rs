//! The benchmark task family and its ground-truth oracle.
//!
//! Tasks are small arithmetic trip problems: an outbound leg at constant
//! speed, a multi-leg return, and a net remaining distance. Agents exchange
//! machine-parsable `key=value` payloads, which lets an oracle verify any
//! recognized field of any packet exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::reputation::Evidence;
use crate::types::{MessagePacket, Subscription};
use crate::watchdog::EvaluationPolicy;

/// One trip problem. All quantities are integers so equality is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripTask {
    pub id: u32,
    pub out_speed: i64,
    pub out_time: i64,
    /// Return legs as (speed, time) pairs.
    pub legs: Vec<(i64, i64)>,
}

/// Exact expected values for every derived field of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruth {
    pub outbound: i64,
    pub return_total: i64,
    pub answer: i64,
}

impl TripTask {
    pub fn new(id: u32, out_speed: i64, out_time: i64, legs: Vec<(i64, i64)>) -> Self {
        TripTask {
            id,
            out_speed,
            out_time,
            legs,
        }
    }

    /// Deterministic task family indexed by id; parameters cycle through
    /// small coprime ranges so consecutive tasks differ in every field.
    pub fn generate(id: u32) -> Self {
        let k = i64::from(id);
        TripTask {
            id,
            out_speed: 8 + k % 9,
            out_time: 5 + k % 6,
            legs: vec![(2 + k % 4, 2 + k % 3), (1 + k % 3, 2 + k % 4)],
        }
    }

    /// The worked demonstration instance: 180 out, 135 back, 45 remaining.
    pub fn showcase() -> Self {
        TripTask::new(0, 12, 15, vec![(9, 10), (5, 9)])
    }

    pub fn truth(&self) -> GroundTruth {
        let outbound = self.out_speed * self.out_time;
        let return_total = self.legs.iter().map(|(v, t)| v * t).sum();
        GroundTruth {
            outbound,
            return_total,
            answer: outbound - return_total,
        }
    }

    pub fn legs_text(&self) -> String {
        self.legs
            .iter()
            .map(|(v, t)| format!("{v}x{t}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// The query packet payload that seeds an episode.
    pub fn query_text(&self) -> String {
        format!(
            "task={} out_speed={} out_time={} legs={} find the remaining distance",
            self.id,
            self.out_speed,
            self.out_time,
            self.legs_text()
        )
    }
}

/// Parses `key=value` pairs from a payload. Later duplicates win. Tokens
/// without `=` are ignored (free text around the fields is allowed).
pub fn parse_fields(payload: &str) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    for token in payload.split_whitespace() {
        if let Some((key, value)) = token.split_once('=') {
            if !key.is_empty() && !value.is_empty() {
                fields.insert(key.to_string(), value.to_string());
            }
        }
    }
    fields
}

pub fn parse_legs(text: &str) -> Option<Vec<(i64, i64)>> {
    text.split(';')
        .map(|leg| {
            let (v, t) = leg.split_once('x')?;
            Some((v.parse().ok()?, t.parse().ok()?))
        })
        .collect()
}

/// Pipeline stages. A scenario assigns each worker agent one stage; the
/// stage fixes both its pool profile and the plan text that routes to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Entry: parse the query into fields.
    Decompose,
    /// Outbound distance (long pipeline).
    Outbound,
    /// Return distance over the legs (long pipeline).
    Return,
    /// Recompute everything from the raw fields and pass verdict (long
    /// pipeline).
    Verify,
    /// All three derived quantities at once (short pipeline).
    Solve,
    /// Terminal: merge received results and finish.
    Final,
}

impl Stage {
    /// Profile text an agent serving this stage registers with.
    pub fn profile(self) -> &'static str {
        match self {
            Stage::Decompose => "analyst decompose parse task query statement fields",
            Stage::Outbound => "solver outbound distance speed time multiply",
            Stage::Return => "solver return legs sum segments multiply",
            Stage::Verify => "inspector verify check outbound return answer consistency",
            Stage::Solve => "solver compute outbound return answer distance",
            Stage::Final => "finalizer final answer verdict report conclude",
        }
    }

    /// Plan text a producer attaches to steer the broker toward this stage.
    /// Engineered to overlap its own profile heavily and the others barely.
    pub fn plan(self) -> &'static str {
        match self {
            Stage::Decompose => "decompose parse task query statement",
            Stage::Outbound => "outbound travel speed time multiply",
            Stage::Return => "compute return legs sum segments",
            Stage::Verify => "verify check consistency answer verdict",
            Stage::Solve => "solve compute outbound return answer distance",
            Stage::Final => "final answer verdict report",
        }
    }
}

/// Ground-truth packet verifier: every recognized field must match the task
/// exactly. Packets carrying no recognized progress at all are judged
/// misbehaved, as are packets for unknown tasks.
#[derive(Debug, Clone)]
pub struct OracleEvaluator {
    tasks: BTreeMap<u32, TripTask>,
}

impl OracleEvaluator {
    pub fn new(tasks: impl IntoIterator<Item = TripTask>) -> Self {
        OracleEvaluator {
            tasks: tasks.into_iter().map(|t| (t.id, t)).collect(),
        }
    }

    pub fn judge(&self, payload: &str) -> Evidence {
        let fields = parse_fields(payload);
        let task = match fields.get("task").and_then(|v| v.parse::<u32>().ok()) {
            Some(id) => match self.tasks.get(&id) {
                Some(task) => task,
                None => return Evidence::Misbehaved,
            },
            None => return Evidence::Misbehaved,
        };
        let truth = task.truth();
        let mut recognized = 0usize;
        for (key, value) in &fields {
            let ok = match key.as_str() {
                "task" => continue,
                "out_speed" => value.parse() == Ok(task.out_speed),
                "out_time" => value.parse() == Ok(task.out_time),
                "legs" => parse_legs(value).as_ref() == Some(&task.legs),
                "outbound" => value.parse() == Ok(truth.outbound),
                "return" => value.parse() == Ok(truth.return_total),
                "answer" => value.parse() == Ok(truth.answer),
                "verdict" => value == "correct",
                _ => continue,
            };
            recognized += 1;
            if !ok {
                return Evidence::Misbehaved;
            }
        }
        if recognized == 0 {
            return Evidence::Misbehaved;
        }
        Evidence::Behaved
    }
}

impl EvaluationPolicy for OracleEvaluator {
    fn evaluate(
        &self,
        packet: &MessagePacket,
        _subscription: &Subscription,
        _history: &[MessagePacket],
    ) -> Result<Evidence> {
        Ok(self.judge(&packet.payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, EmbeddingProvider, HashBagEmbedder};

    #[test]
    fn showcase_arithmetic() {
        let truth = TripTask::showcase().truth();
        assert_eq!(truth.outbound, 180);
        assert_eq!(truth.return_total, 135);
        assert_eq!(truth.answer, 45);
    }

    #[test]
    fn generated_tasks_vary_and_stay_positive() {
        for id in 0..100 {
            let t = TripTask::generate(id);
            let truth = t.truth();
            assert!(truth.outbound > truth.return_total, "task {id} degenerate");
        }
        assert_ne!(TripTask::generate(1), TripTask::generate(2));
        assert_eq!(TripTask::generate(7), TripTask::generate(7));
    }

    #[test]
    fn field_and_leg_parsing_roundtrip() {
        let t = TripTask::generate(11);
        let fields = parse_fields(&t.query_text());
        assert_eq!(fields["task"], "11");
        assert_eq!(fields["out_speed"].parse::<i64>().unwrap(), t.out_speed);
        assert_eq!(parse_legs(&fields["legs"]).unwrap(), t.legs);
        assert!(!fields.contains_key("find"));
    }

    #[test]
    fn malformed_legs_rejected() {
        assert!(parse_legs("3x").is_none());
        assert!(parse_legs("3x4;x5").is_none());
        assert!(parse_legs("abc").is_none());
        assert_eq!(parse_legs("3x4").unwrap(), vec![(3, 4)]);
    }

    #[test]
    fn oracle_accepts_truth_rejects_corruption() {
        let t = TripTask::showcase();
        let oracle = OracleEvaluator::new([t.clone()]);
        assert_eq!(
            oracle.judge("task=0 outbound=180 return=135 answer=45 verdict=correct"),
            Evidence::Behaved
        );
        assert_eq!(
            oracle.judge("task=0 outbound=181 return=135"),
            Evidence::Misbehaved
        );
        assert_eq!(
            oracle.judge("task=0 verdict=incorrect"),
            Evidence::Misbehaved
        );
        // No task field, no recognized progress, unknown task: all misbehaved.
        assert_eq!(oracle.judge("outbound=180"), Evidence::Misbehaved);
        assert_eq!(oracle.judge("task=0 color=blue"), Evidence::Misbehaved);
        assert_eq!(oracle.judge("task=5 outbound=180"), Evidence::Misbehaved);
    }

    #[test]
    fn oracle_ignores_unrecognized_fields_alongside_real_ones() {
        let oracle = OracleEvaluator::new([TripTask::showcase()]);
        assert_eq!(
            oracle.judge("task=0 outbound=180 mood=great"),
            Evidence::Behaved
        );
    }

    #[test]
    fn stage_plans_route_to_their_own_profiles() {
        let e = HashBagEmbedder::default();
        let stages = [
            Stage::Decompose,
            Stage::Outbound,
            Stage::Return,
            Stage::Verify,
            Stage::Solve,
            Stage::Final,
        ];
        for plan_stage in stages {
            let plan = e.embed(plan_stage.plan());
            let own = cosine(&plan, &e.embed(plan_stage.profile())).unwrap();
            assert!(own > 0.5, "{plan_stage:?} plan misses its own profile: {own}");
            for other in stages {
                if other == plan_stage {
                    continue;
                }
                let cross = cosine(&plan, &e.embed(other.profile())).unwrap();
                assert!(
                    cross < 0.5,
                    "{plan_stage:?} plan leaks into {other:?}: {cross}"
                );
            }
        }
    }
}
