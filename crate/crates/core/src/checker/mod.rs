//! Deterministic two-stage layout check and repair.
//!
//! Stage 1 fixes the current proposal: every box is made valid, sized and
//! shaped within bounds, then subjects are nudged until their relations to
//! already-placed objects hold. Stage 2 looks across all iterations for
//! excess overlap, depth-order conflicts and size drift between objects of
//! the same name.
//!
//! Clamping a proposal box into the canvas is always applied. Every other
//! edit is kept only when it lowers the violation count of its own kind for
//! the object it moves and raises no (kind, object) count anywhere. Because each kept
//! edit strictly lowers that vector, repeated sweeps settle, and a layout
//! that settled within the pass budget admits no further repair.

mod engine;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::schema::CheckerAdvisoryReply;
use crate::gateway::{Exchange, GatewayError, ModelAccess, ModelRequest, RoleTag, SchemaId};
use crate::scene::{LayoutSet, PlacedObject, ProposedObject, RawBox, Relation, ScenePlan};

pub use engine::Engine;

/// Slack for threshold comparisons so that a box repaired exactly onto a
/// bound is not flagged again because of rounding.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckerConfig {
    pub min_area: f64,
    pub max_area: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub max_iou: f64,
    pub max_drift_ratio: f64,
    pub max_passes: u32,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        Self {
            min_area: 0.002,
            max_area: 0.95,
            min_aspect: 1.0 / 8.0,
            max_aspect: 8.0,
            max_iou: 0.4,
            max_drift_ratio: 2.0,
            max_passes: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    TooSmall,
    TooLarge,
    OutOfBounds,
    AspectExtreme,
    RelationUnsatisfied,
    OverlapExcess,
    OcclusionOrderConflict,
    ScaleDrift,
}

impl ViolationKind {
    pub fn stage(&self) -> u8 {
        match self {
            ViolationKind::OverlapExcess | ViolationKind::OcclusionOrderConflict | ViolationKind::ScaleDrift => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subjects: Vec<String>,
    /// Area fraction, IoU, ratio, or 0/1 for boolean checks.
    pub measured: f64,
    pub threshold: f64,
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Violation {
    pub fn new(kind: ViolationKind, subjects: Vec<String>, measured: f64, threshold: f64) -> Self {
        Self {
            kind,
            subjects,
            measured,
            threshold,
            stage: kind.stage(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn describe(&self) -> String {
        let subjects = self.subjects.join(", ");
        let detail = self.detail.as_deref().map(|d| format!(" [{d}]")).unwrap_or_default();
        format!(
            "stage {} {:?} on {}{}: measured {:.4}, threshold {:.4}",
            self.stage, self.kind, subjects, detail, self.measured, self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Edit {
    Clamp {
        id: String,
        from: RawBox,
        to: RawBox,
    },
    Resize {
        id: String,
        from: RawBox,
        to: RawBox,
    },
    Translate {
        id: String,
        from: RawBox,
        to: RawBox,
    },
    SwapZ {
        a: String,
        b: String,
        from: [i64; 2],
        to: [i64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub violation: Violation,
    pub edit: Edit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub violations_before: Vec<Violation>,
    pub repairs_applied: Vec<Repair>,
    pub violations_after: Vec<Violation>,
    pub passes_used: u32,
    pub accepted_with_warnings: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.violations_before.is_empty() && self.repairs_applied.is_empty()
    }

    fn only_stage(mut self, stage: u8) -> Self {
        self.violations_before.retain(|v| v.stage == stage);
        self.violations_after.retain(|v| v.stage == stage);
        self.repairs_applied.retain(|r| r.violation.stage == stage);
        self.accepted_with_warnings = !self.violations_after.is_empty();
        self
    }
}

/// What the checker needs from a plan: object names and relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    pub names: BTreeMap<String, String>,
    pub relations: Vec<Relation>,
}

impl Constraints {
    pub fn from_plan(plan: &ScenePlan) -> Self {
        Self {
            names: plan.descriptors().map(|d| (d.id.clone(), d.name.clone())).collect(),
            relations: plan.descriptors().flat_map(|d| d.relations.iter().cloned()).collect(),
        }
    }
}

/// Stage 1 on the proposal only. History is never moved.
pub fn check_stage1(
    proposal: &[ProposedObject],
    plan: &ScenePlan,
    history: &LayoutSet,
    cfg: &CheckerConfig,
) -> (Vec<PlacedObject>, CheckReport) {
    let mut e = Engine::new(cfg, Constraints::from_plan(plan), history, proposal);
    e.run(true, false);
    let (layout, report) = e.finish();
    let proposal_ids: Vec<&str> = proposal.iter().map(|p| p.descriptor_id.as_str()).collect();
    let repaired = layout
        .placed
        .into_iter()
        .filter(|p| proposal_ids.contains(&p.descriptor_id.as_str()))
        .collect();
    (repaired, report.only_stage(1))
}

/// Stage 2 over every placed object.
pub fn check_stage2(all: &LayoutSet, plan: &ScenePlan, cfg: &CheckerConfig) -> (LayoutSet, CheckReport) {
    let mut e = Engine::new(
        cfg,
        Constraints::from_plan(plan),
        &LayoutSet::empty(all.canvas_aspect),
        &[],
    );
    e.make_all_movable_in_stage2(all);
    e.run(false, true);
    let (layout, report) = e.finish();
    (layout, report.only_stage(2))
}

/// Stage 1, merge, stage 2; the two stages alternate until neither finds
/// an acceptable edit or the pass budget runs out.
pub fn full_check(
    proposal: &[ProposedObject],
    plan: &ScenePlan,
    history: &LayoutSet,
    cfg: &CheckerConfig,
) -> (LayoutSet, CheckReport) {
    full_check_with(proposal, &Constraints::from_plan(plan), history, cfg)
}

pub fn full_check_with(
    proposal: &[ProposedObject],
    constraints: &Constraints,
    history: &LayoutSet,
    cfg: &CheckerConfig,
) -> (LayoutSet, CheckReport) {
    let mut e = Engine::new(cfg, constraints.clone(), history, proposal);
    e.run(true, true);
    e.finish()
}

/// Pass-through used when the checker is switched off: boxes are made valid
/// so the painter can use them, nothing else changes.
pub fn pass_through(proposal: &[ProposedObject]) -> Vec<PlacedObject> {
    proposal.iter().cloned().map(ProposedObject::into_placed).collect()
}

pub const ADVISORY_SYSTEM: &str = "You compare a planned layout with the object descriptions it must depict. \
List objects whose box size, position or caption looks inconsistent with the prompt. \
Reply with JSON: {\"mismatches\": [{\"id\": str, \"note\": str}]}.";

/// Optional model review of a finished layout. It never changes the layout;
/// its notes are only recorded.
pub fn advisory_review(
    plan: &ScenePlan,
    layout: &LayoutSet,
    access: ModelAccess,
    log: &mut Vec<Exchange>,
) -> Result<Vec<(String, String)>, GatewayError> {
    let objects: Vec<_> = layout
        .placed
        .iter()
        .map(|p| {
            let caption = plan
                .descriptor(&p.descriptor_id)
                .map(|d| d.enriched_caption.clone())
                .unwrap_or_default();
            serde_json::json!({"id": p.descriptor_id, "bbox": p.bbox.as_array(), "caption": caption})
        })
        .collect();
    let user = serde_json::json!({"background": plan.background, "objects": objects}).to_string();
    let req = ModelRequest::new(
        RoleTag::CheckerAdvisory,
        ADVISORY_SYSTEM,
        user,
        SchemaId::CheckerAdvisory,
    );
    Ok(access
        .ask_or_fallback(&req, log)?
        .and_then(|r| r.parsed_as::<CheckerAdvisoryReply>())
        .map(|r| r.mismatches.into_iter().map(|m| (m.id, m.note)).collect())
        .unwrap_or_default())
}

#[cfg(test)]
mod tests;
