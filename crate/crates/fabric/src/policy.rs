//! Agent behavior policies: what an activated agent publishes given its
//! accumulated context.
//!
//! The scripted policies implement the trip-task pipeline exactly, which
//! gives the simulation a known-correct backbone; the adversarial wrappers
//! corrupt that backbone in controlled ways.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FabricError, Result};
use crate::task::{parse_fields, parse_legs, Stage};
use crate::types::{AgentContext, AgentId};

/// What an activated agent hands to the broker.
#[derive(Debug, Clone, PartialEq)]
pub struct Publication {
    pub payload: String,
    pub plan: Option<String>,
    pub finish: bool,
}

pub trait AgentPolicy: Send + Sync {
    fn act(&self, ctx: &AgentContext, rng: &mut ChaCha8Rng) -> Result<Publication>;
}

/// Which stage sequence a scripted agent assumes when naming its next step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Pipeline {
    /// Decompose → Outbound → Return → Verify → Final.
    #[default]
    Long,
    /// Decompose → Solve → Final.
    Short,
}

impl Pipeline {
    pub fn next(self, stage: Stage) -> Option<Stage> {
        match (self, stage) {
            (Pipeline::Long, Stage::Decompose) => Some(Stage::Outbound),
            (Pipeline::Long, Stage::Outbound) => Some(Stage::Return),
            (Pipeline::Long, Stage::Return) => Some(Stage::Verify),
            (Pipeline::Long, Stage::Verify) => Some(Stage::Final),
            (Pipeline::Short, Stage::Decompose) => Some(Stage::Solve),
            (Pipeline::Short, Stage::Solve) => Some(Stage::Final),
            (_, Stage::Final) => None,
            _ => None,
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        match self {
            Pipeline::Long => &[
                Stage::Decompose,
                Stage::Outbound,
                Stage::Return,
                Stage::Verify,
                Stage::Final,
            ],
            Pipeline::Short => &[Stage::Decompose, Stage::Solve, Stage::Final],
        }
    }
}

/// Folds every packet's fields in history order; later values override.
fn known_fields(ctx: &AgentContext) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    for pkt in &ctx.history {
        fields.append(&mut parse_fields(&pkt.payload));
    }
    fields
}

fn get_i64(fields: &BTreeMap<String, String>, key: &str) -> Option<i64> {
    fields.get(key)?.parse().ok()
}

/// Deterministic worker for one pipeline stage. Emits exact arithmetic in
/// canonical field order; when required inputs are missing it publishes an
/// unroutable error payload instead of guessing.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedSolver {
    pub stage: Stage,
    pub pipeline: Pipeline,
}

impl ScriptedSolver {
    pub fn new(stage: Stage, pipeline: Pipeline) -> Self {
        ScriptedSolver { stage, pipeline }
    }

    fn stalled(fields: &BTreeMap<String, String>) -> Publication {
        let task = fields.get("task").map(String::as_str).unwrap_or("unknown");
        Publication {
            payload: format!("task={task} error=missing required inputs"),
            plan: None,
            finish: false,
        }
    }

    fn emit(&self, fields: BTreeMap<String, String>) -> Publication {
        const ORDER: [&str; 8] = [
            "task",
            "out_speed",
            "out_time",
            "legs",
            "outbound",
            "return",
            "answer",
            "verdict",
        ];
        let payload = ORDER
            .iter()
            .filter_map(|k| fields.get(*k).map(|v| format!("{k}={v}")))
            .collect::<Vec<_>>()
            .join(" ");
        Publication {
            payload,
            plan: self.pipeline.next(self.stage).map(|s| s.plan().to_string()),
            finish: self.stage == Stage::Final,
        }
    }
}

impl AgentPolicy for ScriptedSolver {
    fn act(&self, ctx: &AgentContext, _rng: &mut ChaCha8Rng) -> Result<Publication> {
        let mut fields = known_fields(ctx);
        match self.stage {
            Stage::Decompose => {
                for key in ["task", "out_speed", "out_time", "legs"] {
                    if !fields.contains_key(key) {
                        return Ok(Self::stalled(&fields));
                    }
                }
                fields.retain(|k, _| ["task", "out_speed", "out_time", "legs"].contains(&k.as_str()));
            }
            Stage::Outbound => {
                let (Some(v), Some(t)) = (get_i64(&fields, "out_speed"), get_i64(&fields, "out_time"))
                else {
                    return Ok(Self::stalled(&fields));
                };
                fields.insert("outbound".into(), (v * t).to_string());
            }
            Stage::Return => {
                let Some(legs) = fields.get("legs").and_then(|l| parse_legs(l)) else {
                    return Ok(Self::stalled(&fields));
                };
                let total: i64 = legs.iter().map(|(v, t)| v * t).sum();
                fields.insert("return".into(), total.to_string());
            }
            Stage::Verify => {
                let (Some(v), Some(t), Some(legs), Some(outbound), Some(ret)) = (
                    get_i64(&fields, "out_speed"),
                    get_i64(&fields, "out_time"),
                    fields.get("legs").and_then(|l| parse_legs(l)),
                    get_i64(&fields, "outbound"),
                    get_i64(&fields, "return"),
                ) else {
                    return Ok(Self::stalled(&fields));
                };
                let consistent =
                    outbound == v * t && ret == legs.iter().map(|(v, t)| v * t).sum::<i64>();
                fields.insert("answer".into(), (outbound - ret).to_string());
                fields.insert(
                    "verdict".into(),
                    if consistent { "correct" } else { "incorrect" }.into(),
                );
            }
            Stage::Solve => {
                let (Some(v), Some(t), Some(legs)) = (
                    get_i64(&fields, "out_speed"),
                    get_i64(&fields, "out_time"),
                    fields.get("legs").and_then(|l| parse_legs(l)),
                ) else {
                    return Ok(Self::stalled(&fields));
                };
                let outbound = v * t;
                let ret: i64 = legs.iter().map(|(v, t)| v * t).sum();
                fields.insert("outbound".into(), outbound.to_string());
                fields.insert("return".into(), ret.to_string());
                fields.insert("answer".into(), (outbound - ret).to_string());
            }
            Stage::Final => {
                let merged = majority_fields(ctx);
                if merged.is_empty() {
                    return Ok(Self::stalled(&fields));
                }
                fields = merged;
            }
        }
        Ok(self.emit(fields))
    }
}

/// Field-wise majority vote over the context history; ties go to the value
/// backed by the lowest producer id, so the outcome is deterministic.
fn majority_fields(ctx: &AgentContext) -> BTreeMap<String, String> {
    const KEYS: [&str; 5] = ["task", "outbound", "return", "answer", "verdict"];
    let mut merged = BTreeMap::new();
    for key in KEYS {
        // value -> (count, lowest supporting producer id)
        let mut votes: BTreeMap<String, (usize, AgentId)> = BTreeMap::new();
        for pkt in &ctx.history {
            if let Some(value) = parse_fields(&pkt.payload).remove(key) {
                let slot = votes.entry(value).or_insert((0, pkt.producer));
                slot.0 += 1;
                slot.1 = slot.1.min(pkt.producer);
            }
        }
        let winner = votes
            .into_iter()
            .max_by(|a, b| (a.1 .0, b.1 .1).cmp(&(b.1 .0, a.1 .1)));
        if let Some((value, _)) = winner {
            merged.insert(key.to_string(), value);
        }
    }
    merged
}

/// Rewrites a payload the way a liar would: every integer shifted by a
/// nonzero offset in ±1..9, every verdict token inverted. Structure (keys,
/// ordering, separators) is preserved so the packet still routes and parses.
pub fn corrupt_payload(payload: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(payload.len() + 8);
    let mut chars = payload.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_ascii_digit() {
            let mut digits = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_ascii_digit() {
                    digits.push(d);
                    chars.next();
                } else {
                    break;
                }
            }
            let offset = rng.gen_range(1..=9) * if rng.gen_bool(0.5) { 1 } else { -1 };
            match digits.parse::<i64>() {
                Ok(n) => out.push_str(&(n + offset).to_string()),
                Err(_) => out.push_str(&digits),
            }
        } else if c.is_alphabetic() {
            let mut word = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_alphabetic() {
                    word.push(d);
                    chars.next();
                } else {
                    break;
                }
            }
            match word.as_str() {
                "correct" => out.push_str("incorrect"),
                "incorrect" => out.push_str("correct"),
                _ => out.push_str(&word),
            }
        } else {
            out.push(c);
            chars.next();
        }
    }
    out
}

/// Always corrupts the wrapped policy's output.
pub struct LiarPolicy<P>(pub P);

impl<P: AgentPolicy> AgentPolicy for LiarPolicy<P> {
    fn act(&self, ctx: &AgentContext, rng: &mut ChaCha8Rng) -> Result<Publication> {
        let honest = self.0.act(ctx, rng)?;
        Ok(Publication {
            payload: corrupt_payload(&honest.payload, rng),
            ..honest
        })
    }
}

/// Corrupts the wrapped policy's output with probability `p` per activation.
pub struct NoisyPolicy<P> {
    pub inner: P,
    pub p: f64,
}

impl<P: AgentPolicy> AgentPolicy for NoisyPolicy<P> {
    fn act(&self, ctx: &AgentContext, rng: &mut ChaCha8Rng) -> Result<Publication> {
        let honest = self.inner.act(ctx, rng)?;
        // Draw the coin before any corruption draws so the decision stream
        // is identical whichever way the coin lands.
        let lie = rng.gen_bool(self.p);
        if lie {
            Ok(Publication {
                payload: corrupt_payload(&honest.payload, rng),
                ..honest
            })
        } else {
            Ok(honest)
        }
    }
}

/// Publishes busywork with no recognizable fields: an agent whose profile
/// promises more than its output delivers.
#[derive(Debug, Clone, Copy, Default)]
pub struct StallPolicy;

impl AgentPolicy for StallPolicy {
    fn act(&self, _ctx: &AgentContext, _rng: &mut ChaCha8Rng) -> Result<Publication> {
        Ok(Publication {
            payload: "status=thinking still working on it".into(),
            plan: None,
            finish: false,
        })
    }
}

/// Connection settings for a chat-completion backed policy. The credential
/// is read from the named environment variable at call time and never
/// stored or logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatSpec {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub api_key_env: String,
}

impl Default for RemoteChatSpec {
    fn default() -> Self {
        RemoteChatSpec {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 0.0,
            timeout_secs: 30,
            max_retries: 2,
            api_key_env: "FABRIC_API_KEY".into(),
        }
    }
}

/// Delegates the publication text to a remote chat model. The surrounding
/// protocol (brokerage, evaluation, reputation) is unchanged; only the
/// payload author differs.
pub struct RemoteChatPolicy {
    pub spec: RemoteChatSpec,
    pub system_prompt: String,
    pub plan: Option<String>,
    pub terminal: bool,
}

impl RemoteChatPolicy {
    fn request_once(&self, prompt: &str) -> Result<String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(self.spec.timeout_secs))
            .build()
            .map_err(|e| FabricError::Remote(e.to_string()))?;
        let body = serde_json::json!({
            "model": self.spec.model,
            "temperature": self.spec.temperature,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": prompt},
            ],
        });
        let mut request = client.post(&self.spec.endpoint).json(&body);
        if let Ok(key) = std::env::var(&self.spec.api_key_env) {
            request = request.bearer_auth(key);
        }
        let response: serde_json::Value = request
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| FabricError::Remote(e.to_string()))?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.trim().to_string())
            .ok_or_else(|| FabricError::Remote("response missing choices[0].message.content".into()))
    }
}

impl AgentPolicy for RemoteChatPolicy {
    fn act(&self, ctx: &AgentContext, _rng: &mut ChaCha8Rng) -> Result<Publication> {
        let mut prompt = String::from(
            "Packets so far, one per line. Reply with one line of key=value fields.\n",
        );
        for pkt in &ctx.history {
            prompt.push_str(&pkt.payload);
            prompt.push('\n');
        }
        let mut last_err = None;
        for _ in 0..=self.spec.max_retries {
            match self.request_once(&prompt) {
                Ok(payload) => {
                    return Ok(Publication {
                        payload,
                        plan: self.plan.clone(),
                        finish: self.terminal,
                    })
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| FabricError::Remote("no attempts made".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashBagEmbedder;
    use crate::rng::substream;
    use crate::task::{OracleEvaluator, TripTask};
    use crate::types::{MessagePacket, PacketId, Subscription};

    fn ctx_with(history: Vec<(u32, String)>) -> AgentContext {
        let e = HashBagEmbedder::default();
        let id = AgentId::from_index(50);
        AgentContext {
            agent: id,
            subscription: Subscription::new(id, "worker", &e),
            history: history
                .into_iter()
                .enumerate()
                .map(|(i, (producer, payload))| MessagePacket {
                    id: PacketId(i as u64),
                    producer: AgentId::from_index(producer),
                    round: 1,
                    payload,
                    plan: None,
                    parents: vec![],
                    finish: false,
                })
                .collect(),
            toolset: vec![],
            inbox: vec![],
        }
    }

    fn rng() -> ChaCha8Rng {
        substream(7, AgentId::from_index(50), 0, 1)
    }

    #[test]
    fn long_pipeline_end_to_end_by_hand() {
        let task = TripTask::showcase();
        let mut history = vec![(99u32, task.query_text())];
        let stages = [Stage::Decompose, Stage::Outbound, Stage::Return, Stage::Verify];
        for (i, stage) in stages.iter().enumerate() {
            let solver = ScriptedSolver::new(*stage, Pipeline::Long);
            let out = solver.act(&ctx_with(history.clone()), &mut rng()).unwrap();
            history.push((i as u32, out.payload));
        }
        let finalizer = ScriptedSolver::new(Stage::Final, Pipeline::Long);
        let out = finalizer.act(&ctx_with(history), &mut rng()).unwrap();
        assert!(out.finish);
        assert_eq!(
            out.payload,
            "task=0 outbound=180 return=135 answer=45 verdict=correct"
        );
    }

    #[test]
    fn solve_stage_computes_all_fields() {
        let task = TripTask::showcase();
        let solver = ScriptedSolver::new(Stage::Solve, Pipeline::Short);
        let out = solver
            .act(&ctx_with(vec![(99, task.query_text())]), &mut rng())
            .unwrap();
        assert_eq!(
            out.payload,
            "task=0 out_speed=12 out_time=15 legs=9x10;5x9 outbound=180 return=135 answer=45"
        );
        assert_eq!(out.plan.as_deref(), Some(Stage::Final.plan()));
        assert!(!out.finish);
    }

    #[test]
    fn missing_inputs_stall_without_guessing() {
        let solver = ScriptedSolver::new(Stage::Outbound, Pipeline::Long);
        let out = solver
            .act(&ctx_with(vec![(99, "task=3 legs=1x1".into())]), &mut rng())
            .unwrap();
        assert!(out.payload.contains("error=missing"));
        assert!(out.plan.is_none());
        let oracle = OracleEvaluator::new([TripTask::generate(3)]);
        assert_eq!(
            oracle.judge(&out.payload),
            crate::reputation::Evidence::Misbehaved
        );
    }

    #[test]
    fn final_majority_breaks_ties_toward_lowest_id() {
        let finalizer = ScriptedSolver::new(Stage::Final, Pipeline::Short);
        let ctx = ctx_with(vec![
            (99, "task=0 out_speed=12 out_time=15 legs=9x10;5x9".into()),
            (1, "task=0 answer=50".into()),
            (2, "task=0 answer=41".into()),
            (3, "task=0 answer=45".into()),
        ]);
        let out = finalizer.act(&ctx, &mut rng()).unwrap();
        // Three-way tie on answer: producer 1's value wins.
        assert!(out.payload.contains("answer=50"), "{}", out.payload);
        let ctx = ctx_with(vec![
            (99, "task=0".into()),
            (1, "task=0 answer=50".into()),
            (2, "task=0 answer=45".into()),
            (3, "task=0 answer=45".into()),
        ]);
        let out = finalizer.act(&ctx, &mut rng()).unwrap();
        assert!(out.payload.contains("answer=45"), "{}", out.payload);
    }

    #[test]
    fn corruption_shifts_every_number_and_inverts_verdicts() {
        let mut r = rng();
        let payload = "task=0 outbound=180 return=135 answer=45 verdict=correct legs=9x10";
        let corrupted = corrupt_payload(payload, &mut r);
        let honest = parse_fields(payload);
        let bad = parse_fields(&corrupted);
        assert_eq!(honest.len(), bad.len(), "structure must survive");
        for key in ["outbound", "return", "answer", "task"] {
            assert_ne!(honest[key], bad[key], "{key} untouched");
            let h: i64 = honest[key].parse().unwrap();
            let b: i64 = bad[key].parse().unwrap();
            assert!((b - h).abs() <= 9 && b != h);
        }
        assert_eq!(bad["verdict"], "incorrect");
        assert_eq!(
            corrupt_payload("verdict=incorrect", &mut r),
            "verdict=correct"
        );
    }

    #[test]
    fn corruption_is_deterministic_per_substream() {
        let payload = "task=0 answer=45";
        let a = corrupt_payload(payload, &mut rng());
        let b = corrupt_payload(payload, &mut rng());
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_policy_rate_tracks_p() {
        let task = TripTask::showcase();
        let noisy = NoisyPolicy {
            inner: ScriptedSolver::new(Stage::Solve, Pipeline::Short),
            p: 0.3,
        };
        let oracle = OracleEvaluator::new([task.clone()]);
        let ctx = ctx_with(vec![(99, task.query_text())]);
        let mut bad = 0;
        let n = 2000;
        for round in 0..n {
            let mut r = substream(11, AgentId::from_index(50), 0, round);
            let out = noisy.act(&ctx, &mut r).unwrap();
            if oracle.judge(&out.payload) == crate::reputation::Evidence::Misbehaved {
                bad += 1;
            }
        }
        let rate = f64::from(bad) / f64::from(n);
        assert!((rate - 0.3).abs() < 0.03, "observed corruption rate {rate}");
    }

    #[test]
    fn remote_policy_against_local_mock() {
        use std::io::{Read, Write};
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let mut read = 0;
            // Read until the JSON body is complete enough to inspect.
            loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]);
                if text.contains("\r\n\r\n") && text.trim_end().ends_with('}') {
                    break;
                }
            }
            let request = String::from_utf8_lossy(&buf[..read]).to_string();
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": "task=0 answer=45"}}]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
            request
        });

        let policy = RemoteChatPolicy {
            spec: RemoteChatSpec {
                endpoint: format!("http://{addr}/v1/chat/completions"),
                max_retries: 0,
                ..Default::default()
            },
            system_prompt: "answer with fields".into(),
            plan: Some(Stage::Final.plan().into()),
            terminal: false,
        };
        let out = policy
            .act(
                &ctx_with(vec![(99, "task=0 out_speed=12 out_time=15 legs=9x10;5x9".into())]),
                &mut rng(),
            )
            .unwrap();
        assert_eq!(out.payload, "task=0 answer=45");
        let request = server.join().unwrap();
        assert!(request.contains("\"model\""));
        assert!(request.contains("out_speed=12"));
    }

    #[test]
    fn remote_policy_reports_unreachable_endpoint() {
        let policy = RemoteChatPolicy {
            spec: RemoteChatSpec {
                endpoint: "http://127.0.0.1:1/v1/chat/completions".into(),
                timeout_secs: 1,
                max_retries: 1,
                ..Default::default()
            },
            system_prompt: String::new(),
            plan: None,
            terminal: false,
        };
        assert!(policy.act(&ctx_with(vec![]), &mut rng()).is_err());
    }
}
