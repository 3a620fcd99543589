use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, Completion, EndpointRole, GatewayError, Message};
use crate::model::SCHEMA_VERSION;

/// SHA-256 over the role and the full message text.
pub fn request_digest(role: EndpointRole, messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(role.to_string().as_bytes());
    for m in messages {
        hasher.update([0u8]);
        hasher.update(m.role.as_str().as_bytes());
        hasher.update(b":");
        hasher.update(m.content.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub schema_version: u32,
    pub run_id: String,
    pub seq: usize,
    pub digest: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub timestamp: DateTime<Utc>,
}

/// Append-only log of one run's exchanges, persisted as JSON lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    pub run_id: String,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn append(&mut self, request: ChatRequest, response: ChatResponse, timestamp: DateTime<Utc>) {
        let digest = request.digest();
        self.entries.push(TranscriptEntry {
            schema_version: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            seq: self.entries.len(),
            digest,
            request,
            response,
            timestamp,
        });
    }

    pub fn count_role(&self, role: EndpointRole) -> usize {
        self.entries
            .iter()
            .filter(|e| e.request.endpoint_role == role)
            .count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entry serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Transcript(format!("line {}: {e}", n + 1)))?;
            if entry.schema_version > SCHEMA_VERSION {
                return Err(GatewayError::Transcript(format!(
                    "line {}: unsupported schema_version {}",
                    n + 1,
                    entry.schema_version
                )));
            }
            entries.push(entry);
        }
        let run_id = entries.first().map(|e| e.run_id.clone()).unwrap_or_default();
        Ok(Self { run_id, entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), GatewayError> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| GatewayError::Transcript(format!("{}: {e}", path.display())))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| GatewayError::Transcript(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Transcript(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }
}

/// Answers requests from a recorded transcript, matching on the request
/// digest. Repeated identical requests consume the recorded entries in
/// order; once exhausted the last one is served again.
pub struct ReplayProvider {
    slots: Mutex<HashMap<String, ReplaySlot>>,
}

struct ReplaySlot {
    pending: VecDeque<TranscriptEntry>,
    last: TranscriptEntry,
}

impl ReplayProvider {
    pub fn new(transcript: &Transcript) -> Self {
        let mut slots: HashMap<String, ReplaySlot> = HashMap::new();
        for e in &transcript.entries {
            slots
                .entry(e.digest.clone())
                .and_modify(|s| s.pending.push_back(e.clone()))
                .or_insert_with(|| ReplaySlot {
                    pending: VecDeque::from([e.clone()]),
                    last: e.clone(),
                });
            if let Some(slot) = slots.get_mut(&e.digest) {
                slot.last = e.clone();
            }
        }
        Self {
            slots: Mutex::new(slots),
        }
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let digest = request.digest();
        let mut slots = self.slots.lock().expect("replay lock poisoned");
        let slot = slots.get_mut(&digest).ok_or_else(|| GatewayError::ReplayMiss {
            role: request.endpoint_role,
            digest: digest.clone(),
        })?;
        let entry = slot.pending.pop_front().unwrap_or_else(|| slot.last.clone());
        Ok(Completion {
            response: entry.response,
            recorded_at: Some(entry.timestamp),
        })
    }
}
