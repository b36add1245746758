//! Versioned JSON wrapper around every report the tool emits.

use serde::{Deserialize, Serialize};

use crate::extests::ExclusionVerdict;
use crate::protocol::{MultiIvReport, ProtocolReport};
use crate::simulate::PowerTable;

pub const SCHEMA: &str = "ivlingam/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "report")]
pub enum Body {
    Exclusion(ExclusionVerdict),
    Protocol(Box<ProtocolReport>),
    MultiInstrument(MultiIvReport),
    Power(PowerTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub timestamp: String,
    pub master_seed: u64,
    pub command: String,
    /// Every option the run used, enough to repeat it on the same input.
    pub config: serde_json::Value,
    pub body: Body,
}

impl Envelope {
    pub fn new(command: &str, master_seed: u64, config: serde_json::Value, body: Body) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            master_seed,
            command: command.to_string(),
            config,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Canonical text of a body alone, for comparing runs.
pub fn body_json(body: &Body) -> String {
    serde_json::to_string_pretty(body).expect("reports serialize")
}
