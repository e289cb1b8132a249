use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LayoutSet, PlacedObject, SceneError};

/// Vertical tolerance between a subject's bottom edge and the supporting
/// object's top edge for `on-top-of`.
pub const ON_TOP_EDGE_TOLERANCE: f64 = 0.03;
/// Minimum horizontal overlap, as a fraction of the subject width, for `on-top-of`.
pub const ON_TOP_MIN_OVERLAP: f64 = 0.2;
/// Largest facing-edge gap still counted as `next-to`.
pub const NEXT_TO_MAX_GAP: f64 = 0.05;
/// Largest IoU still counted as `next-to` rather than overlapping.
pub const NEXT_TO_MAX_IOU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    LeftOf,
    RightOf,
    Above,
    Below,
    OnTopOf,
    Inside,
    NextTo,
    Behind,
    InFrontOf,
}

impl RelationKind {
    pub const ALL: [RelationKind; 9] = [
        RelationKind::LeftOf,
        RelationKind::RightOf,
        RelationKind::Above,
        RelationKind::Below,
        RelationKind::OnTopOf,
        RelationKind::Inside,
        RelationKind::NextTo,
        RelationKind::Behind,
        RelationKind::InFrontOf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::LeftOf => "left-of",
            RelationKind::RightOf => "right-of",
            RelationKind::Above => "above",
            RelationKind::Below => "below",
            RelationKind::OnTopOf => "on-top-of",
            RelationKind::Inside => "inside",
            RelationKind::NextTo => "next-to",
            RelationKind::Behind => "behind",
            RelationKind::InFrontOf => "in-front-of",
        }
    }

    /// The relation that holds with subject and object swapped, when the
    /// vocabulary has one.
    pub fn dual(&self) -> Option<RelationKind> {
        match self {
            RelationKind::LeftOf => Some(RelationKind::RightOf),
            RelationKind::RightOf => Some(RelationKind::LeftOf),
            RelationKind::Above => Some(RelationKind::Below),
            RelationKind::Below => Some(RelationKind::Above),
            RelationKind::Behind => Some(RelationKind::InFrontOf),
            RelationKind::InFrontOf => Some(RelationKind::Behind),
            RelationKind::NextTo => Some(RelationKind::NextTo),
            RelationKind::OnTopOf | RelationKind::Inside => None,
        }
    }

    /// Relations decided by z-order alone.
    pub fn is_depth(&self) -> bool {
        matches!(self, RelationKind::Behind | RelationKind::InFrontOf)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SceneError::UnknownRelation(s.to_string()))
    }
}

/// A directed spatial relation between two descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject_id: String,
    pub object_id: String,
    pub kind: RelationKind,
    #[serde(default)]
    pub margin: f64,
}

impl Relation {
    pub fn new(subject_id: impl Into<String>, kind: RelationKind, object_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            object_id: object_id.into(),
            kind,
            margin: 0.0,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.subject_id == self.object_id {
            return Err(SceneError::SelfRelation(self.subject_id.clone()));
        }
        if !(0.0..=0.5).contains(&self.margin) {
            return Err(SceneError::InvalidMargin(self.margin));
        }
        Ok(())
    }
}

/// Evaluates `r` on the placed endpoints in `layout`.
pub fn relation_satisfied(r: &Relation, layout: &LayoutSet) -> Result<bool, SceneError> {
    let subject = layout
        .get(&r.subject_id)
        .ok_or_else(|| SceneError::MissingEndpoint(r.subject_id.clone()))?;
    let object = layout
        .get(&r.object_id)
        .ok_or_else(|| SceneError::MissingEndpoint(r.object_id.clone()))?;
    Ok(relation_holds(r.kind, r.margin, subject, object))
}

/// Relation semantics on two placed objects.
///
/// Directional kinds compare centers and require them to be more than
/// `margin` apart; `on-top-of` needs the subject's bottom edge near the
/// object's top edge plus enough horizontal overlap; `inside` is containment;
/// `next-to` is a small gap with negligible overlap; depth kinds look at
/// z-order only.
pub fn relation_holds(kind: RelationKind, margin: f64, subject: &PlacedObject, object: &PlacedObject) -> bool {
    let s = &subject.bbox;
    let o = &object.bbox;
    match kind {
        RelationKind::LeftOf => o.center_x() - s.center_x() > margin,
        RelationKind::RightOf => s.center_x() - o.center_x() > margin,
        RelationKind::Above => o.center_y() - s.center_y() > margin,
        RelationKind::Below => s.center_y() - o.center_y() > margin,
        RelationKind::OnTopOf => {
            let overlap = s.x_max().min(o.x_max()) - s.x_min().max(o.x_min());
            (s.y_max() - o.y_min()).abs() <= ON_TOP_EDGE_TOLERANCE && overlap >= ON_TOP_MIN_OVERLAP * s.width()
        }
        RelationKind::Inside => o.contains(s),
        RelationKind::NextTo => s.gap(o) <= NEXT_TO_MAX_GAP && super::bbox_iou(s, o) <= NEXT_TO_MAX_IOU,
        RelationKind::Behind => subject.z_order < object.z_order,
        RelationKind::InFrontOf => subject.z_order > object.z_order,
    }
}
