//! Append-only run traces.
//!
//! A trace is one JSON object per line: a header first (run identity, seed,
//! and the complete scenario, so a trace is self-describing), then every
//! protocol event in execution order. Serialization is deterministic, so an
//! identical rerun yields a byte-identical file; replay verification and all
//! metrics are computed from the trace alone.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FabricError, Result};
use crate::scenario::Scenario;
use crate::types::{AgentId, PacketId};

pub const TRACE_VERSION: u32 = 1;

/// First hex bytes of the payload's SHA-256; enough to spot divergence at a
/// glance without scanning full payloads.
pub fn payload_digest(payload: &str) -> String {
    let digest = Sha256::digest(payload.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub run_id: String,
    pub seed: u64,
    pub scenario: Scenario,
}

/// One protocol event. `task` and `round` locate it; `kind` carries the
/// event-specific fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub task: u32,
    pub round: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Agent entered the shared pool.
    Register {
        agent: AgentId,
        profile: String,
        version: u32,
    },
    /// Agent rewrote its local profile.
    Refine {
        agent: AgentId,
        profile: String,
        version: u32,
    },
    /// A refined profile replaced the agent's pool entry.
    Promote { agent: AgentId, version: u32 },
    Publish {
        agent: AgentId,
        packet: PacketId,
        payload: String,
        plan: Option<String>,
        finish: bool,
        digest: String,
    },
    Route {
        producer: AgentId,
        packet: PacketId,
        recipient: AgentId,
        score: f64,
    },
    /// First-hand verdict: `s = 1` means misbehaved.
    Evaluate {
        evaluator: AgentId,
        subject: AgentId,
        packet: PacketId,
        s: u8,
    },
    /// Deviation-test outcome for one testimony.
    TrustUpdate {
        owner: AgentId,
        witness: AgentId,
        s: u8,
        statistic: Option<f64>,
        admissible: bool,
    },
    ReputationUpdate {
        owner: AgentId,
        subject: AgentId,
        before: f64,
        after: f64,
        /// Merged pseudo-counts after the update, for offline inspection.
        x: f64,
        y: f64,
    },
    PolicyFailure { agent: AgentId, message: String },
    Terminate { reason: TerminateReason },
    /// Episode verdict, after termination.
    Final {
        agent: AgentId,
        packet: Option<PacketId>,
        answer: Option<i64>,
        correct: bool,
        fallback: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminateReason {
    Finished,
    RoundLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer(&mut writer, &self.header)
            .map_err(|e| FabricError::Io(e.into()))?;
        writer.write_all(b"\n")?;
        for event in &self.events {
            serde_json::to_writer(&mut writer, event).map_err(|e| FabricError::Io(e.into()))?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines.next().ok_or(FabricError::TraceParse {
            line: 1,
            message: "empty trace".into(),
        })?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|e| FabricError::TraceParse {
                line: 1,
                message: e.to_string(),
            })?;
        if header.version != TRACE_VERSION {
            return Err(FabricError::TraceParse {
                line: 1,
                message: format!(
                    "unsupported trace version {} (expected {TRACE_VERSION})",
                    header.version
                ),
            });
        }
        let mut events = Vec::new();
        for (index, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| FabricError::TraceParse {
                line: index + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(Trace { header, events })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    /// Index of the first event where the two traces disagree, or the length
    /// of the shorter trace if one is a prefix of the other.
    pub fn first_divergence(&self, other: &Trace) -> Option<usize> {
        for (i, (a, b)) in self.events.iter().zip(&other.events).enumerate() {
            if a != b {
                return Some(i);
            }
        }
        if self.events.len() != other.events.len() {
            return Some(self.events.len().min(other.events.len()));
        }
        None
    }
}
