//! Response shapes expected from the model, one per request kind.
//!
//! Validation is structural: a reply is valid when it deserializes into the
//! typed shape for its schema id. Unknown extra fields are ignored.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaId {
    ModeDecision,
    Decomposition,
    Ranking,
    Enrichment,
    LayoutProposal,
    CheckerAdvisory,
}

impl SchemaId {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemaId::ModeDecision => "mode-decision",
            SchemaId::Decomposition => "decomposition",
            SchemaId::Ranking => "ranking",
            SchemaId::Enrichment => "enrichment",
            SchemaId::LayoutProposal => "layout-proposal",
            SchemaId::CheckerAdvisory => "checker-advisory",
        }
    }

    /// Checks `value` against the shape registered for this id.
    pub fn validate(&self, value: &Value) -> Result<(), String> {
        match self {
            SchemaId::ModeDecision => check::<ModeDecisionReply>(value),
            SchemaId::Decomposition => check::<DecompositionReply>(value),
            SchemaId::Ranking => check::<RankingReply>(value),
            SchemaId::Enrichment => check::<EnrichmentReply>(value),
            SchemaId::LayoutProposal => check::<LayoutProposalReply>(value),
            SchemaId::CheckerAdvisory => check::<CheckerAdvisoryReply>(value),
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check<T: DeserializeOwned>(value: &Value) -> Result<(), String> {
    T::deserialize(value).map(|_| ()).map_err(|e| e.to_string())
}

/// Pulls a JSON object out of a model reply: the whole text, a fenced
/// block, or the outermost brace span.
pub fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        if let Some(end) = after[body_start..].find("```") {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(after[body_start..body_start + end].trim())
            {
                return Some(v);
            }
        }
    }
    let open = trimmed.find('{')?;
    let close = trimmed.rfind('}')?;
    if close <= open {
        return None;
    }
    match serde_json::from_str::<Value>(&trimmed[open..=close]) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDecisionReply {
    pub object_count: u32,
    #[serde(default)]
    pub spatial_cue: bool,
    #[serde(default)]
    pub count_cue: bool,
    #[serde(default)]
    pub attribute_binding_cue: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReply {
    pub objects: Vec<DecomposedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedObject {
    pub name: String,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub relations: Vec<DecomposedRelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedRelation {
    /// Free-text relation phrase, mapped onto the closed vocabulary when possible.
    pub relation: String,
    /// Name of the related object as it appears in `objects`.
    pub target: String,
    #[serde(default)]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReply {
    /// Descriptor id to priority level (1 = first).
    pub priorities: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentReply {
    pub background: String,
    #[serde(default)]
    pub captions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutProposalReply {
    pub objects: Vec<ProposedBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedBox {
    #[serde(default)]
    pub id: Option<String>,
    /// `[x_min, y_min, x_max, y_max]` as canvas fractions.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub z_order: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerAdvisoryReply {
    #[serde(default)]
    pub mismatches: Vec<AdvisoryMismatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryMismatch {
    pub id: String,
    pub note: String,
}
