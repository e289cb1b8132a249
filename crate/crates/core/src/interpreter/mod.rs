//! Prompt interpretation: mode choice, decomposition, ranking, enrichment.
//!
//! Every step asks the model first and falls back to a deterministic rule
//! when the gateway is disabled, a fixture miss is tolerated, or the reply
//! is unusable. All gateway sends made for one prompt are returned together
//! so the orchestrator can log them as a single interpreter event.

pub mod lexicon;
pub mod prompts;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;

use crate::gateway::schema::{DecompositionReply, EnrichmentReply, ModeDecisionReply, RankingReply};
use crate::gateway::{Exchange, GatewayError, ModelAccess, ModelRequest, RoleTag, SchemaId};
use crate::scene::{
    Attribute, GenerationMode, ObjectDescriptor, PriorityGroup, Prompt, SceneError, ScenePlan, FREEFORM_RELATION_KEY,
};

pub use rules::{fallback_caption, parse_prompt, ParsedPrompt, COUNT_EXPANSION_CAP, DEFAULT_BACKGROUND};

pub const DEFAULT_MAX_PRIORITY_LEVELS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpretError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("decomposition produced no objects")]
    EmptyDecomposition,
    #[error("interpreter produced an invalid plan: {0}")]
    InvalidPlan(#[from] SceneError),
}

/// A plan together with every model exchange made while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub plan: ScenePlan,
    pub exchanges: Vec<Exchange>,
    pub notes: Vec<String>,
}

pub struct Interpreter<'a> {
    access: ModelAccess<'a>,
    max_levels: u32,
}

impl<'a> Interpreter<'a> {
    pub fn new(access: ModelAccess<'a>) -> Self {
        Self {
            access,
            max_levels: DEFAULT_MAX_PRIORITY_LEVELS,
        }
    }

    /// Levels beyond `max` are merged into level `max`.
    pub fn with_max_levels(mut self, max: u32) -> Self {
        self.max_levels = max.max(1);
        self
    }

    fn request(system: &str, user: impl Into<String>, schema: SchemaId) -> ModelRequest {
        ModelRequest::new(RoleTag::Interpreter, system, user, schema)
    }

    pub fn select_mode(&self, prompt: &Prompt, log: &mut Vec<Exchange>) -> Result<GenerationMode, GatewayError> {
        let req = Self::request(prompts::MODE_SYSTEM, prompt.text.as_str(), SchemaId::ModeDecision);
        let aware = match self
            .access
            .ask(&req, log)?
            .and_then(|r| r.parsed_as::<ModeDecisionReply>())
        {
            Some(r) => r.object_count >= 2 || r.spatial_cue || r.count_cue || r.attribute_binding_cue,
            None => parse_prompt(&prompt.text).layout_aware(),
        };
        Ok(if aware {
            GenerationMode::LayoutAware
        } else {
            GenerationMode::LayoutFree
        })
    }

    /// Unranked descriptors with unique ids. A model reply with zero objects
    /// is re-prompted once before giving up.
    pub fn decompose(&self, prompt: &Prompt, log: &mut Vec<Exchange>) -> Result<Vec<ObjectDescriptor>, InterpretError> {
        let first = Self::request(prompts::DECOMPOSE_SYSTEM, prompt.text.as_str(), SchemaId::Decomposition);
        let parsed = match self
            .access
            .ask(&first, log)?
            .and_then(|r| r.parsed_as::<DecompositionReply>())
        {
            None => parse_prompt(&prompt.text),
            Some(reply) => {
                let mut parsed = ParsedPrompt::from_reply(&reply);
                if parsed.mentions.is_empty() {
                    let retry = Self::request(
                        prompts::DECOMPOSE_SYSTEM,
                        format!("{}\n\n{}", prompt.text, prompts::DECOMPOSE_RETRY_NOTE),
                        SchemaId::Decomposition,
                    );
                    if let Some(reply) = self
                        .access
                        .ask(&retry, log)?
                        .and_then(|r| r.parsed_as::<DecompositionReply>())
                    {
                        parsed = ParsedPrompt::from_reply(&reply);
                    }
                }
                parsed
            }
        };
        let descriptors = parsed.descriptors();
        if descriptors.is_empty() {
            return Err(InterpretError::EmptyDecomposition);
        }
        Ok(descriptors)
    }

    /// Assigns priorities (model first, dependency depth as fallback),
    /// corrects them against the dependency rule and groups equal levels.
    pub fn rank_and_group(
        &self,
        prompt: &Prompt,
        mut descriptors: Vec<ObjectDescriptor>,
        log: &mut Vec<Exchange>,
    ) -> Result<Vec<PriorityGroup>, GatewayError> {
        break_cycles(&mut descriptors);
        let listing: Vec<_> = descriptors
            .iter()
            .map(|d| {
                json!({
                    "id": d.id,
                    "name": d.name,
                    "relations": d.relations.iter().map(|r| json!({"relation": r.kind, "target": r.object_id})).collect::<Vec<_>>(),
                })
            })
            .collect();
        let user = json!({"prompt": prompt.text, "objects": listing}).to_string();
        let req = Self::request(prompts::RANK_SYSTEM, user, SchemaId::Ranking);
        let from_model = self
            .access
            .ask_or_fallback(&req, log)?
            .and_then(|r| r.parsed_as::<RankingReply>())
            .map(|r| r.priorities)
            .filter(|p| descriptors.iter().all(|d| p.get(&d.id).is_some_and(|&v| v >= 1)));
        let initial = from_model.unwrap_or_else(|| rule_priorities(&descriptors));
        let corrected = correct_priorities(&descriptors, &initial);
        Ok(group(descriptors, &corrected, self.max_levels))
    }

    /// Fills enriched captions and returns the plan background.
    pub fn enrich(
        &self,
        prompt: &Prompt,
        groups: &mut [PriorityGroup],
        background_hint: Option<&str>,
        log: &mut Vec<Exchange>,
    ) -> Result<String, GatewayError> {
        let listing: Vec<_> = groups
            .iter()
            .flat_map(|g| &g.members)
            .map(|d| {
                let attrs: BTreeMap<&str, &str> = d
                    .attributes
                    .iter()
                    .map(|a| (a.key.as_str(), a.value.as_str()))
                    .collect();
                json!({"id": d.id, "name": d.name, "attributes": attrs})
            })
            .collect();
        let user = json!({"prompt": prompt.text, "objects": listing}).to_string();
        let req = Self::request(prompts::ENRICH_SYSTEM, user, SchemaId::Enrichment);
        let reply = self
            .access
            .ask_or_fallback(&req, log)?
            .and_then(|r| r.parsed_as::<EnrichmentReply>());
        for d in groups.iter_mut().flat_map(|g| g.members.iter_mut()) {
            d.enriched_caption = reply
                .as_ref()
                .and_then(|r| r.captions.get(&d.id))
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .unwrap_or_else(|| fallback_caption(d));
        }
        Ok(reply
            .map(|r| r.background.trim().to_string())
            .filter(|b| !b.is_empty())
            .or_else(|| background_hint.map(str::to_string))
            .unwrap_or_else(|| DEFAULT_BACKGROUND.to_string()))
    }

    /// Runs the whole interpretation. `forced` skips the mode decision.
    pub fn interpret(&self, prompt: &Prompt, forced: Option<GenerationMode>) -> Result<Interpretation, InterpretError> {
        let mut exchanges = Vec::new();
        let (plan, notes) = self.interpret_logged(prompt, forced, &mut exchanges)?;
        Ok(Interpretation { plan, exchanges, notes })
    }

    /// Same as [`interpret`](Self::interpret) but appends exchanges to `exchanges`
    /// as they happen, so they survive a failure.
    pub fn interpret_logged(
        &self,
        prompt: &Prompt,
        forced: Option<GenerationMode>,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<(ScenePlan, Vec<String>), InterpretError> {
        let mut notes = Vec::new();
        let hint = parse_prompt(&prompt.text).background;
        let free_background = hint.clone().unwrap_or_default();
        let mode = match forced {
            Some(m) => m,
            None => self.select_mode(prompt, exchanges)?,
        };
        if mode == GenerationMode::LayoutFree {
            return Ok((ScenePlan::layout_free(&prompt.id, free_background), notes));
        }
        let descriptors = match self.decompose(prompt, exchanges) {
            Ok(d) => d,
            Err(InterpretError::EmptyDecomposition) => {
                notes.push("empty decomposition; using layout-free mode".into());
                return Ok((ScenePlan::layout_free(&prompt.id, free_background), notes));
            }
            Err(e) => return Err(e),
        };
        let mut groups = self.rank_and_group(prompt, descriptors, exchanges)?;
        let background = self.enrich(prompt, &mut groups, hint.as_deref(), exchanges)?;
        let plan = ScenePlan {
            mode: GenerationMode::LayoutAware,
            background,
            groups,
            source_prompt_id: prompt.id.clone(),
        };
        plan.validate()?;
        Ok((plan, notes))
    }
}

/// Keeps relations in declaration order, dropping any whose edge would close
/// a cycle among descriptors, and any that point outside the set or repeat.
/// Dropped relations survive as freeform attributes.
pub fn break_cycles(descriptors: &mut [ObjectDescriptor]) {
    let ids: BTreeSet<String> = descriptors.iter().map(|d| d.id.clone()).collect();
    let names: BTreeMap<String, String> = descriptors.iter().map(|d| (d.id.clone(), d.name.clone())).collect();
    let mut edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let reaches = |edges: &BTreeMap<String, BTreeSet<String>>, from: &str, to: &str| {
        let mut stack = vec![from.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n.clone()) {
                stack.extend(edges.get(&n).into_iter().flatten().cloned());
            }
        }
        false
    };
    for d in descriptors.iter_mut() {
        let mut kept = Vec::new();
        for r in std::mem::take(&mut d.relations) {
            let valid = r.subject_id == d.id && r.object_id != d.id && ids.contains(&r.object_id);
            if valid && kept.contains(&r) {
                continue;
            }
            if valid && !reaches(&edges, &r.object_id, &d.id) {
                edges.entry(d.id.clone()).or_default().insert(r.object_id.clone());
                kept.push(r);
            } else {
                let target = names.get(&r.object_id).cloned().unwrap_or_else(|| r.object_id.clone());
                d.attributes
                    .push(Attribute::new(FREEFORM_RELATION_KEY, format!("{} {target}", r.kind)));
            }
        }
        d.relations = kept;
    }
}

/// Rule ranking: 1 + length of the longest dependency chain below each
/// descriptor, so anchors come first and independent objects share level 1.
pub fn rule_priorities(descriptors: &[ObjectDescriptor]) -> BTreeMap<String, u32> {
    let mut p: BTreeMap<String, u32> = descriptors.iter().map(|d| (d.id.clone(), 1)).collect();
    for _ in 0..=descriptors.len() {
        let mut changed = false;
        for r in descriptors.iter().flat_map(|d| &d.relations) {
            if let (Some(&ps), Some(&po)) = (p.get(&r.subject_id), p.get(&r.object_id)) {
                if r.subject_id != r.object_id && ps <= po {
                    p.insert(r.subject_id.clone(), po + 1);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    p
}

/// Enforces priority(subject) >= priority(object) by bumping subjects to
/// object + 1 until nothing changes, then renumbers levels densely from 1.
/// Relations must already be acyclic.
pub fn correct_priorities(descriptors: &[ObjectDescriptor], initial: &BTreeMap<String, u32>) -> BTreeMap<String, u32> {
    let mut p: BTreeMap<String, u32> = descriptors
        .iter()
        .map(|d| (d.id.clone(), initial.get(&d.id).copied().unwrap_or(1).max(1)))
        .collect();
    let edges: Vec<(&str, &str)> = descriptors
        .iter()
        .flat_map(|d| {
            d.relations
                .iter()
                .map(|r| (r.subject_id.as_str(), r.object_id.as_str()))
        })
        .filter(|(s, o)| s != o && p.contains_key(*s) && p.contains_key(*o))
        .collect();
    // An acyclic graph settles within one round per node.
    for _ in 0..=descriptors.len() {
        let mut changed = false;
        for &(s, o) in &edges {
            let (ps, po) = (p[s], p[o]);
            if ps < po {
                p.insert(s.to_string(), po + 1);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let levels: BTreeSet<u32> = p.values().copied().collect();
    let dense: BTreeMap<u32, u32> = levels.into_iter().zip(1..).collect();
    p.into_iter().map(|(id, v)| (id, dense[&v])).collect()
}

/// Groups descriptors by priority in declaration order, merging levels
/// above `max_levels` into the last allowed one.
pub fn group(
    descriptors: Vec<ObjectDescriptor>,
    priorities: &BTreeMap<String, u32>,
    max_levels: u32,
) -> Vec<PriorityGroup> {
    let mut by_level: BTreeMap<u32, Vec<ObjectDescriptor>> = BTreeMap::new();
    for mut d in descriptors {
        let level = priorities.get(&d.id).copied().unwrap_or(1).clamp(1, max_levels.max(1));
        d.priority = level;
        by_level.entry(level).or_default().push(d);
    }
    by_level
        .into_iter()
        .map(|(priority, members)| PriorityGroup { priority, members })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::stub::ScriptedChat;
    use crate::gateway::{FixtureStore, Gateway, GatewayConfig, GatewayMode, MissPolicy};
    use crate::scene::{Relation, RelationKind};
    use std::sync::Arc;

    fn cube_sphere() -> Vec<ObjectDescriptor> {
        vec![
            ObjectDescriptor::new("cube", "cube").with_relation(RelationKind::LeftOf, "sphere"),
            ObjectDescriptor::new("sphere", "sphere"),
        ]
    }

    fn levels(groups: &[PriorityGroup]) -> Vec<Vec<&str>> {
        groups
            .iter()
            .map(|g| g.members.iter().map(|d| d.id.as_str()).collect())
            .collect()
    }

    #[test]
    fn equal_model_priorities_share_a_group() {
        let p: BTreeMap<_, _> = [("cube".to_string(), 1), ("sphere".to_string(), 1)].into();
        let corrected = correct_priorities(&cube_sphere(), &p);
        let groups = group(cube_sphere(), &corrected, 8);
        assert_eq!(levels(&groups), [vec!["cube", "sphere"]]);
    }

    #[test]
    fn subject_ranked_first_is_moved_after_its_object() {
        let p: BTreeMap<_, _> = [("cube".to_string(), 1), ("sphere".to_string(), 2)].into();
        let corrected = correct_priorities(&cube_sphere(), &p);
        assert_eq!(corrected["sphere"], 1);
        assert_eq!(corrected["cube"], 2);
    }

    #[test]
    fn two_cycle_drops_the_later_edge() {
        let mut d = vec![
            ObjectDescriptor::new("a", "a").with_relation(RelationKind::LeftOf, "b"),
            ObjectDescriptor::new("b", "b").with_relation(RelationKind::LeftOf, "a"),
        ];
        break_cycles(&mut d);
        assert_eq!(d[0].relations.len(), 1);
        assert!(d[1].relations.is_empty());
        assert_eq!(d[1].attribute(FREEFORM_RELATION_KEY), Some("left-of a"));
    }

    #[test]
    fn rule_ranking_uses_dependency_depth() {
        let d = vec![
            ObjectDescriptor::new("cup", "cup").with_relation(RelationKind::OnTopOf, "book"),
            ObjectDescriptor::new("book", "book").with_relation(RelationKind::OnTopOf, "table"),
            ObjectDescriptor::new("table", "table"),
            ObjectDescriptor::new("lamp", "lamp"),
        ];
        let p = rule_priorities(&d);
        assert_eq!((p["table"], p["lamp"], p["book"], p["cup"]), (1, 1, 2, 3));
        let capped = group(d, &p, 2);
        assert_eq!(levels(&capped), [vec!["table", "lamp"], vec!["cup", "book"]]);
    }

    #[test]
    fn rule_only_interpretation() {
        let it = Interpreter::new(ModelAccess::disabled());
        let prompt = Prompt::new("three cats on a sofa").unwrap();
        let out = it.interpret(&prompt, None).unwrap();
        assert_eq!(out.plan.mode, GenerationMode::LayoutAware);
        assert_eq!(
            levels(&out.plan.groups),
            [vec!["sofa"], vec!["cat#1", "cat#2", "cat#3"]]
        );
        assert_eq!(out.plan.groups[1].members[0].enriched_caption, "cat");
        assert_eq!(out.plan.background, DEFAULT_BACKGROUND);
        // mode, decomposition, ranking, enrichment
        assert_eq!(out.exchanges.len(), 4);

        let free = it.interpret(&Prompt::new("a photo of a dog").unwrap(), None).unwrap();
        assert_eq!(free.plan.mode, GenerationMode::LayoutFree);
        assert_eq!(free.exchanges.len(), 1);
    }

    fn scripted(replies: &[&str]) -> (Gateway, Arc<ScriptedChat>) {
        let chat = Arc::new(ScriptedChat::new(replies.iter().copied()));
        let cfg = GatewayConfig {
            endpoint: Some("http://stub/v1/chat/completions".into()),
            token_env: None,
            retries: 0,
            ..GatewayConfig::default()
        };
        (
            Gateway::new(
                cfg,
                GatewayMode::Live,
                chat.clone(),
                Arc::new(FixtureStore::in_memory()),
            ),
            chat,
        )
    }

    #[test]
    fn model_replies_drive_the_plan() {
        let (gw, chat) = scripted(&[
            r#"{"object_count":2,"spatial_cue":true}"#,
            r#"{"objects":[{"name":"cube","attributes":{"color":"red"},"relations":[{"relation":"left of","target":"sphere"}]},{"name":"sphere","attributes":{"color":"blue"}}]}"#,
            r#"{"priorities":{"cube":1,"sphere":2}}"#,
            r#"{"background":"a white studio","captions":{"cube":"a glossy red cube"}}"#,
        ]);
        let policy = MissPolicy::Fail;
        let it = Interpreter::new(ModelAccess::new(&gw, &policy));
        let out = it
            .interpret(&Prompt::new("a red cube left of a blue sphere").unwrap(), None)
            .unwrap();
        assert_eq!(chat.remaining(), 0);
        assert_eq!(levels(&out.plan.groups), [vec!["sphere"], vec!["cube"]]);
        let cube = out.plan.descriptor("cube").unwrap();
        assert_eq!(
            cube.relations,
            vec![Relation::new("cube", RelationKind::LeftOf, "sphere")]
        );
        assert_eq!(cube.enriched_caption, "a glossy red cube");
        assert_eq!(out.plan.descriptor("sphere").unwrap().enriched_caption, "a blue sphere");
        assert_eq!(out.plan.background, "a white studio");
    }

    #[test]
    fn empty_decomposition_reprompts_once_then_goes_layout_free() {
        let (gw, chat) = scripted(&[r#"{"object_count":2}"#, r#"{"objects":[]}"#, r#"{"objects":[]}"#]);
        let policy = MissPolicy::Fail;
        let it = Interpreter::new(ModelAccess::new(&gw, &policy));
        let out = it.interpret(&Prompt::new("two dogs").unwrap(), None).unwrap();
        assert_eq!(out.plan.mode, GenerationMode::LayoutFree);
        assert_eq!(chat.requests().len(), 3);
        assert_eq!(out.notes.len(), 1);
    }

    #[test]
    fn unusable_ranking_falls_back_to_rules() {
        let (gw, _) = scripted(&[
            r#"{"objects":[{"name":"cat","count":2,"relations":[{"relation":"on","target":"mat"}]},{"name":"mat"}]}"#,
            r#"{"priorities":{"cat#1":1}}"#,
            r#"{"background":""}"#,
        ]);
        let policy = MissPolicy::Fail;
        let it = Interpreter::new(ModelAccess::new(&gw, &policy));
        let out = it
            .interpret(
                &Prompt::new("two cats on a mat").unwrap(),
                Some(GenerationMode::LayoutAware),
            )
            .unwrap();
        assert_eq!(levels(&out.plan.groups), [vec!["mat"], vec!["cat#1", "cat#2"]]);
        assert_eq!(out.plan.background, DEFAULT_BACKGROUND);
    }
}
