//! Domain types and box geometry shared by every agent.

mod bbox;
mod plan;
mod relation;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bbox::{bbox_area, bbox_iou, BBox, RawBox, MIN_EXTENT};
pub use plan::{GenerationMode, PriorityGroup, ScenePlan};
pub use relation::{
    relation_holds, relation_satisfied, Relation, RelationKind, NEXT_TO_MAX_GAP, NEXT_TO_MAX_IOU,
    ON_TOP_EDGE_TOLERANCE, ON_TOP_MIN_OVERLAP,
};

use crate::hash::sha256_hex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid box {0:?}")]
    InvalidBox(RawBox),
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("relation endpoint `{0}` is not placed")]
    MissingEndpoint(String),
    #[error("relation on `{0}` points at itself")]
    SelfRelation(String),
    #[error("relation margin {0} outside [0, 0.5]")]
    InvalidMargin(f64),
    #[error("unknown relation kind `{0}`")]
    UnknownRelation(String),
    #[error("descriptor `{0}` appears more than once")]
    DuplicateId(String),
    #[error("z_order {0} is used by more than one object")]
    DuplicateZOrder(i64),
    #[error("canvas aspect {0} must be positive and finite")]
    InvalidAspect(f64),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

impl Prompt {
    /// Creates a prompt whose id is derived from its text.
    pub fn new(text: impl Into<String>) -> Result<Self, SceneError> {
        let text = text.into();
        let id = sha256_hex(text.trim().as_bytes())[..16].to_string();
        Self::with_id(id, text)
    }

    pub fn with_id(id: impl Into<String>, text: impl Into<String>) -> Result<Self, SceneError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SceneError::EmptyPrompt);
        }
        Ok(Self { id: id.into(), text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub key: String,
    pub value: String,
}

impl Attribute {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }
}

/// Key under which relation phrases outside the closed vocabulary are kept.
pub const FREEFORM_RELATION_KEY: &str = "relation_freeform";
/// Key carrying the requested multiplicity when a count exceeds the expansion cap.
pub const COUNT_KEY: &str = "count";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    pub priority: u32,
    #[serde(default)]
    pub enriched_caption: String,
}

impl ObjectDescriptor {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            attributes: Vec::new(),
            relations: Vec::new(),
            priority: 1,
            enriched_caption: String::new(),
        }
    }

    pub fn with_attribute(mut self, key: &str, value: &str) -> Self {
        self.attributes.push(Attribute::new(key, value));
        self
    }

    pub fn with_relation(mut self, kind: RelationKind, object_id: &str) -> Self {
        self.relations.push(Relation::new(self.id.clone(), kind, object_id));
        self
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.iter().find(|a| a.key == key).map(|a| a.value.as_str())
    }

    /// Number of instances this descriptor stands for (1 unless a capped count).
    pub fn multiplicity(&self) -> u32 {
        self.attribute(COUNT_KEY).and_then(|v| v.parse().ok()).unwrap_or(1)
    }

    /// Stable identity of the descriptor's content: name plus sorted attributes.
    pub fn content_key(&self) -> String {
        let mut attrs: Vec<String> = self
            .attributes
            .iter()
            .map(|a| format!("{}={}", a.key, a.value))
            .collect();
        attrs.sort();
        format!("{}|{}", self.name, attrs.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub descriptor_id: String,
    pub bbox: BBox,
    pub iteration: u32,
    pub z_order: i64,
}

impl PlacedObject {
    pub fn new(descriptor_id: impl Into<String>, bbox: BBox, iteration: u32, z_order: i64) -> Self {
        Self {
            descriptor_id: descriptor_id.into(),
            bbox,
            iteration,
            z_order,
        }
    }
}

/// A placement whose box has not been validated yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedObject {
    pub descriptor_id: String,
    pub bbox: RawBox,
    pub iteration: u32,
    pub z_order: i64,
}

impl ProposedObject {
    pub fn new(descriptor_id: impl Into<String>, bbox: RawBox, iteration: u32, z_order: i64) -> Self {
        Self {
            descriptor_id: descriptor_id.into(),
            bbox,
            iteration,
            z_order,
        }
    }

    /// Converts with [`RawBox::sanitized`], which always yields a valid box.
    pub fn into_placed(self) -> PlacedObject {
        PlacedObject::new(self.descriptor_id, self.bbox.sanitized(), self.iteration, self.z_order)
    }
}

impl From<PlacedObject> for ProposedObject {
    fn from(p: PlacedObject) -> Self {
        Self::new(p.descriptor_id, p.bbox.to_raw(), p.iteration, p.z_order)
    }
}

/// All objects placed so far on one canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutSetRepr")]
pub struct LayoutSet {
    pub placed: Vec<PlacedObject>,
    pub canvas_aspect: f64,
}

#[derive(Deserialize)]
struct LayoutSetRepr {
    placed: Vec<PlacedObject>,
    #[serde(default = "default_aspect")]
    canvas_aspect: f64,
}

fn default_aspect() -> f64 {
    1.0
}

impl TryFrom<LayoutSetRepr> for LayoutSet {
    type Error = SceneError;

    fn try_from(r: LayoutSetRepr) -> Result<Self, Self::Error> {
        LayoutSet::with_aspect(r.placed, r.canvas_aspect)
    }
}

impl Default for LayoutSet {
    fn default() -> Self {
        Self {
            placed: Vec::new(),
            canvas_aspect: 1.0,
        }
    }
}

impl LayoutSet {
    pub fn new(placed: Vec<PlacedObject>) -> Result<Self, SceneError> {
        Self::with_aspect(placed, 1.0)
    }

    pub fn with_aspect(placed: Vec<PlacedObject>, canvas_aspect: f64) -> Result<Self, SceneError> {
        if !(canvas_aspect.is_finite() && canvas_aspect > 0.0) {
            return Err(SceneError::InvalidAspect(canvas_aspect));
        }
        let mut seen = BTreeSet::new();
        let mut depths = BTreeSet::new();
        for p in &placed {
            if !seen.insert(p.descriptor_id.as_str()) {
                return Err(SceneError::DuplicateId(p.descriptor_id.clone()));
            }
            if !depths.insert(p.z_order) {
                return Err(SceneError::DuplicateZOrder(p.z_order));
            }
        }
        Ok(Self { placed, canvas_aspect })
    }

    pub fn empty(canvas_aspect: f64) -> Self {
        Self {
            placed: Vec::new(),
            canvas_aspect,
        }
    }

    pub fn get(&self, id: &str) -> Option<&PlacedObject> {
        self.placed.iter().find(|p| p.descriptor_id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.placed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placed.is_empty()
    }

    pub fn max_z(&self) -> Option<i64> {
        self.placed.iter().map(|p| p.z_order).max()
    }

    /// Appends `more`, failing on any id already present.
    pub fn merged(&self, more: &[PlacedObject]) -> Result<Self, SceneError> {
        let mut placed = self.placed.clone();
        placed.extend_from_slice(more);
        Self::with_aspect(placed, self.canvas_aspect)
    }
}
