//! Wire format of the environment server.
//!
//! Every frame is one JSON object on one line:
//! `{"kind": ..., "session": ..., "seq": ..., "payload": {...}}`.
//! Unknown fields are ignored. See `docs/protocol.md` for the field list.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rmfs_core::datagen::{Dataset, Scale, ScenarioConfig};
use rmfs_core::env::{EnvConfig, Transition};
use rmfs_core::obs::PruneConfig;
use rmfs_core::rl_math::ShapingConfig;
use rmfs_core::sim::{EpisodeMetrics, LogRecord, SimConfig};
use rmfs_core::soft_alloc::{DEFAULT_EPSILON, DEFAULT_K};
use rmfs_core::AllocatorKind;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Hello,
    Reset,
    State,
    Action,
    Result,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    #[serde(default)]
    pub session: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Frame {
    pub fn new(kind: FrameKind, session: &str, seq: u64, payload: impl Serialize) -> Self {
        Self {
            kind,
            session: session.to_string(),
            seq,
            payload: serde_json::to_value(payload).expect("payload serialises"),
        }
    }

    pub fn error(session: &str, seq: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        Self::new(
            FrameKind::Error,
            session,
            seq,
            ErrorPayload {
                code,
                message: message.into(),
                state: None,
            },
        )
    }

    /// Serialises a frame without building an intermediate JSON tree.
    pub fn encode<T: Serialize>(kind: FrameKind, session: &str, seq: u64, payload: &T) -> String {
        #[derive(Serialize)]
        struct Out<'a, T> {
            kind: FrameKind,
            session: &'a str,
            seq: u64,
            payload: &'a T,
        }
        let mut s = serde_json::to_string(&Out {
            kind,
            session,
            seq,
            payload,
        })
        .expect("frame serialises");
        s.push('\n');
        s
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frame serialises");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_value(self.payload.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    #[serde(default)]
    pub server: Option<String>,
}

/// Where a reset takes its instance from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Path {
        path: String,
    },
    Scenario {
        scenario: String,
        #[serde(default = "default_scale")]
        scale: Scale,
        #[serde(default)]
        seed: u64,
        /// Overrides the preset's order count.
        #[serde(default)]
        orders: Option<usize>,
    },
}

fn default_scale() -> Scale {
    Scale::Small
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, String> {
        match self {
            DatasetSource::Path { path } => Dataset::load(path).map_err(|e| e.to_string()),
            DatasetSource::Scenario {
                scenario,
                scale,
                seed,
                orders,
            } => {
                let mut cfg = ScenarioConfig::preset(scenario, *scale, *seed)
                    .ok_or_else(|| format!("unknown scenario `{scenario}`"))?;
                if let Some(n) = orders {
                    cfg.num_orders = *n;
                }
                rmfs_core::gen_instance(&cfg).map_err(|e| e.to_string())
            }
        }
    }
}

fn default_allocator() -> AllocatorKind {
    AllocatorKind::Soft
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_prune() -> Option<PruneConfig> {
    Some(PruneConfig::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetRequest {
    pub dataset: DatasetSource,
    #[serde(default = "default_allocator")]
    pub allocator: AllocatorKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub shaping: ShapingConfig,
    /// `null` disables pruning.
    #[serde(default = "default_prune")]
    pub prune: Option<PruneConfig>,
}

impl ResetRequest {
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            sim: SimConfig {
                allocator: self.allocator,
                k: self.k,
                epsilon: DEFAULT_EPSILON,
                shaping: self.shaping,
                seed: self.seed,
                ..SimConfig::default()
            },
            prune: self.prune,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRequest {
    #[serde(default)]
    pub include_log: bool,
}

/// Payload of a `state` frame.
pub type StatePayload = Transition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultPayload {
    pub metrics: EpisodeMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<LogRecord>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a frame at all.
    Malformed,
    /// A frame that does not fit the session's current state.
    Protocol,
    /// Sequence number other than the one expected.
    Sequence,
    /// Masked, out-of-range or unknown action index.
    InvalidAction,
    /// The episode could not be created or advanced.
    Simulation,
    Version,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    /// The unchanged pending state, re-sent after an invalid action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StatePayload>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_ignored() {
        let f = Frame::parse(r#"{"kind":"action","session":"a","seq":3,"payload":{"index":2,"extra":1},"x":0}"#).unwrap();
        assert_eq!(f.kind, FrameKind::Action);
        assert_eq!(f.payload_as::<ActionRequest>().unwrap().index, 2);
    }

    #[test]
    fn reset_defaults() {
        let r: ResetRequest = serde_json::from_str(r#"{"dataset":{"scenario":"micro"}}"#).unwrap();
        assert_eq!(r.allocator, AllocatorKind::Soft);
        assert_eq!(r.k, DEFAULT_K);
        assert_eq!(r.prune, Some(PruneConfig::default()));
        let r: ResetRequest = serde_json::from_str(r#"{"dataset":{"path":"x.jsonl"},"prune":null}"#).unwrap();
        assert_eq!(r.prune, None);
        assert_eq!(r.dataset, DatasetSource::Path { path: "x.jsonl".into() });
    }

    #[test]
    fn frames_round_trip() {
        let f = Frame::error("s", 4, ErrorCode::Sequence, "expected 3");
        assert_eq!(Frame::parse(f.to_line().trim_end()).unwrap(), f);
    }
}
