use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ObjectDescriptor, SceneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationMode {
    LayoutFree,
    LayoutAware,
}

/// Descriptors planned together in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityGroup {
    pub priority: u32,
    pub members: Vec<ObjectDescriptor>,
}

/// Interpreter output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlan {
    pub mode: GenerationMode,
    pub background: String,
    pub groups: Vec<PriorityGroup>,
    pub source_prompt_id: String,
}

impl ScenePlan {
    pub fn layout_free(prompt_id: impl Into<String>, background: impl Into<String>) -> Self {
        Self {
            mode: GenerationMode::LayoutFree,
            background: background.into(),
            groups: Vec::new(),
            source_prompt_id: prompt_id.into(),
        }
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ObjectDescriptor> {
        self.groups.iter().flat_map(|g| g.members.iter())
    }

    pub fn descriptor(&self, id: &str) -> Option<&ObjectDescriptor> {
        self.descriptors().find(|d| d.id == id)
    }

    pub fn object_count(&self) -> usize {
        self.descriptors().map(|d| d.multiplicity() as usize).sum()
    }

    pub fn priority_of(&self) -> BTreeMap<&str, u32> {
        self.descriptors().map(|d| (d.id.as_str(), d.priority)).collect()
    }

    /// Checks every structural invariant of a plan.
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidPlan(m));
        match self.mode {
            GenerationMode::LayoutFree if !self.groups.is_empty() => {
                return bad("layout-free plan carries groups".into())
            }
            GenerationMode::LayoutAware if self.groups.is_empty() => {
                return bad("layout-aware plan has no groups".into())
            }
            _ => {}
        }
        let mut ids = BTreeSet::new();
        for (i, g) in self.groups.iter().enumerate() {
            if g.priority != i as u32 + 1 {
                return bad(format!("group {i} has priority {} (expected {})", g.priority, i + 1));
            }
            if g.members.is_empty() {
                return bad(format!("group {} is empty", g.priority));
            }
            for d in &g.members {
                if d.priority != g.priority {
                    return bad(format!(
                        "`{}` has priority {} inside group {}",
                        d.id, d.priority, g.priority
                    ));
                }
                if !ids.insert(d.id.as_str()) {
                    return Err(SceneError::DuplicateId(d.id.clone()));
                }
            }
        }
        let priority = self.priority_of();
        for d in self.descriptors() {
            for r in &d.relations {
                r.validate()?;
                if r.subject_id != d.id {
                    return bad(format!("relation on `{}` names subject `{}`", d.id, r.subject_id));
                }
                let Some(&p_obj) = priority.get(r.object_id.as_str()) else {
                    return bad(format!("relation target `{}` is not in the plan", r.object_id));
                };
                if d.priority < p_obj {
                    return bad(format!(
                        "`{}` (priority {}) is placed relative to `{}` (priority {p_obj})",
                        d.id, d.priority, r.object_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::RelationKind;

    fn group(priority: u32, members: Vec<ObjectDescriptor>) -> PriorityGroup {
        PriorityGroup {
            priority,
            members: members
                .into_iter()
                .map(|mut d| {
                    d.priority = priority;
                    d
                })
                .collect(),
        }
    }

    #[test]
    fn valid_plan() {
        let plan = ScenePlan {
            mode: GenerationMode::LayoutAware,
            background: "a room".into(),
            groups: vec![
                group(1, vec![ObjectDescriptor::new("sphere", "sphere")]),
                group(
                    2,
                    vec![ObjectDescriptor::new("cube", "cube").with_relation(RelationKind::LeftOf, "sphere")],
                ),
            ],
            source_prompt_id: "p".into(),
        };
        plan.validate().unwrap();
        assert_eq!(plan.object_count(), 2);
    }

    #[test]
    fn dependency_violation_is_rejected() {
        let plan = ScenePlan {
            mode: GenerationMode::LayoutAware,
            background: String::new(),
            groups: vec![
                group(
                    1,
                    vec![ObjectDescriptor::new("cube", "cube").with_relation(RelationKind::LeftOf, "sphere")],
                ),
                group(2, vec![ObjectDescriptor::new("sphere", "sphere")]),
            ],
            source_prompt_id: "p".into(),
        };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn mode_group_consistency() {
        let mut plan = ScenePlan::layout_free("p", "");
        plan.validate().unwrap();
        plan.groups.push(group(1, vec![ObjectDescriptor::new("a", "a")]));
        assert!(plan.validate().is_err());
        plan.mode = GenerationMode::LayoutAware;
        plan.validate().unwrap();
        plan.groups[0].priority = 2;
        assert!(plan.validate().is_err());
    }
}
