//! Layout proposals for one priority group at a time.

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::gateway::schema::LayoutProposalReply;
use crate::gateway::{Exchange, ExchangeOutcome, GatewayError, ModelAccess, ModelRequest, RoleTag, SchemaId};
use crate::image::ImageHandle;
use crate::painter::CanvasState;
use crate::scene::{BBox, LayoutSet, PriorityGroup, ProposedObject, RawBox, ScenePlan};

pub const VCOT_TEMPLATE: &str = include_str!("../resources/vcot_v1.txt");
pub const VCOT_VERSION: &str = "vcot-v1";

/// Section headers of the template, in the order they must appear.
pub const VCOT_SECTIONS: [&str; 3] = [
    "### STEP 1: CANVAS STATE ANALYSIS",
    "### STEP 2: CONTEXT-AWARE PLANNING",
    "### STEP 3: PHYSICS CONSTRAINT ENFORCEMENT",
];

pub const PLANNER_SYSTEM: &str = "You plan bounding-box layouts for a text-to-image system, a few objects at a time. \
Work through the three steps you are given, then answer with the JSON object only.";

/// Largest area fraction a grid fallback box may take.
pub const GRID_MAX_AREA: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingEntry {
    pub descriptor_id: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingMap {
    pub entries: Vec<GroundingEntry>,
}

/// Locates already-placed objects in a rendered canvas.
pub trait Detector: Send + Sync {
    fn detect(&self, image: &ImageHandle, history: &LayoutSet) -> Result<Vec<GroundingEntry>, String>;
}

/// Echoes planned boxes with confidence 1.0. When a detector is given and
/// the canvas has an image, its boxes replace the echoed ones for the ids it
/// reports; a detector error leaves the echo untouched.
pub fn ground_existing(canvas: &CanvasState, history: &LayoutSet, detector: Option<&dyn Detector>) -> GroundingMap {
    let mut entries: Vec<GroundingEntry> = history
        .placed
        .iter()
        .map(|p| GroundingEntry {
            descriptor_id: p.descriptor_id.clone(),
            bbox: p.bbox,
            confidence: 1.0,
        })
        .collect();
    if let (Some(detector), Some(image)) = (detector, canvas.image.as_ref()) {
        match detector.detect(image, history) {
            Ok(found) => {
                for f in found.into_iter().filter(|f| (0.0..=1.0).contains(&f.confidence)) {
                    if let Some(e) = entries.iter_mut().find(|e| e.descriptor_id == f.descriptor_id) {
                        *e = f;
                    }
                }
            }
            Err(e) => warn!("detector failed, using planned boxes: {e}"),
        }
    }
    GroundingMap { entries }
}

/// Everything the planner sees for one iteration.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub prompt_text: &'a str,
    pub plan: &'a ScenePlan,
    pub group: &'a PriorityGroup,
    pub history: &'a LayoutSet,
    pub canvas: &'a CanvasState,
    pub grounding: &'a GroundingMap,
    pub visual_context_enabled: bool,
}

impl PlanningContext<'_> {
    pub fn iteration(&self) -> u32 {
        self.group.priority
    }

    /// Whether the canvas render goes along with the request.
    pub fn attaches_image(&self) -> bool {
        self.visual_context_enabled && self.iteration() > 1 && self.canvas.image.is_some()
    }
}

/// One object pair considered in a request and the relations between them.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationPair {
    pub a: String,
    pub b: String,
    pub relations: Vec<String>,
}

/// Pairs within the group plus every (member, history object) pair. Pairs
/// among history objects are settled and never serialized again.
pub fn relation_pairs(ctx: &PlanningContext) -> Vec<RelationPair> {
    let members: Vec<&str> = ctx.group.members.iter().map(|d| d.id.as_str()).collect();
    let between = |a: &str, b: &str| -> Vec<String> {
        ctx.plan
            .descriptors()
            .flat_map(|d| &d.relations)
            .filter(|r| (r.subject_id == a && r.object_id == b) || (r.subject_id == b && r.object_id == a))
            .map(|r| format!("{} {} {}", r.subject_id, r.kind, r.object_id))
            .collect()
    };
    let mut out = Vec::new();
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            out.push(RelationPair {
                a: a.to_string(),
                b: b.to_string(),
                relations: between(a, b),
            });
        }
    }
    for a in &members {
        for h in &ctx.history.placed {
            out.push(RelationPair {
                a: a.to_string(),
                b: h.descriptor_id.clone(),
                relations: between(a, &h.descriptor_id),
            });
        }
    }
    out
}

/// Single-pass `{name}` substitution; unknown names are left as written.
fn fill(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        match tail.find('}').map(|close| (close, &tail[..close])) {
            Some((close, name)) if values.contains_key(name) => {
                out.push_str(&values[name]);
                rest = &tail[close + 1..];
            }
            _ => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

fn fmt_box(b: &BBox) -> String {
    format!(
        "[{:.3}, {:.3}, {:.3}, {:.3}]",
        b.x_min(),
        b.y_min(),
        b.x_max(),
        b.y_max()
    )
}

pub fn build_vcot_request(ctx: &PlanningContext) -> ModelRequest {
    let i = ctx.iteration();
    let canvas = if i == 1 || ctx.history.is_empty() {
        format!("The canvas is empty. Background: {}.", ctx.canvas.background)
    } else if ctx.attaches_image() {
        format!(
            "The attached image is the canvas after iteration {}. Background: {}.",
            i - 1,
            ctx.canvas.background
        )
    } else {
        format!(
            "No image is attached; the coordinates below describe the canvas. Background: {}.",
            ctx.canvas.background
        )
    };
    let name_of = |id: &str| ctx.plan.descriptor(id).map_or(id.to_string(), |d| d.name.clone());
    let grounding = if ctx.grounding.entries.is_empty() {
        "(none)".to_string()
    } else {
        ctx.grounding
            .entries
            .iter()
            .map(|e| {
                let z = ctx.history.get(&e.descriptor_id).map_or(0, |p| p.z_order);
                format!(
                    "- {} ({}): {} z_order {} confidence {:.2}",
                    e.descriptor_id,
                    name_of(&e.descriptor_id),
                    fmt_box(&e.bbox),
                    z,
                    e.confidence
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let members = ctx
        .group
        .members
        .iter()
        .map(|d| {
            let attrs: Vec<String> = d.attributes.iter().map(|a| format!("{}={}", a.key, a.value)).collect();
            let caption = if d.enriched_caption.is_empty() {
                &d.name
            } else {
                &d.enriched_caption
            };
            if attrs.is_empty() {
                format!("- {}: {}", d.id, caption)
            } else {
                format!("- {}: {} ({})", d.id, caption, attrs.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let pairs = relation_pairs(ctx);
    let pairs = if pairs.is_empty() {
        "(none)".to_string()
    } else {
        pairs
            .iter()
            .map(|p| {
                let rel = if p.relations.is_empty() {
                    "no stated relation".to_string()
                } else {
                    p.relations.join("; ")
                };
                format!("- {} / {}: {}", p.a, p.b, rel)
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let values = BTreeMap::from([
        ("prompt", ctx.prompt_text.to_string()),
        ("iteration", i.to_string()),
        ("aspect", format!("{:.4}", ctx.history.canvas_aspect)),
        ("canvas", canvas),
        ("grounding", grounding),
        ("members", members),
        ("pairs", pairs),
    ]);
    let mut req = ModelRequest::new(
        RoleTag::Planner,
        PLANNER_SYSTEM,
        fill(VCOT_TEMPLATE, &values),
        SchemaId::LayoutProposal,
    );
    if ctx.attaches_image() {
        if let Some(img) = &ctx.canvas.image {
            req = req.with_image(img.clone());
        }
    }
    req
}

/// `k` equal boxes in one vertically centered row, each of area
/// `min(0.15, 0.8 / k)` and square in pixels where the width allows.
pub fn grid_boxes(k: usize, canvas_aspect: f64) -> Vec<BBox> {
    if k == 0 {
        return Vec::new();
    }
    let kf = k as f64;
    let area = GRID_MAX_AREA.min(0.8 / kf);
    let w = (area / canvas_aspect).sqrt().min(0.9 / kf);
    let h = (area / w).min(0.9);
    let gap = (1.0 - kf * w) / (kf + 1.0);
    let y0 = (1.0 - h) / 2.0;
    (0..k)
        .map(|i| {
            let x0 = gap + i as f64 * (w + gap);
            BBox::new(x0, y0, (x0 + w).min(1.0), y0 + h).expect("grid box fits the canvas")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutProposal {
    pub objects: Vec<ProposedObject>,
    pub warnings: Vec<String>,
    /// True when no usable reply arrived and every box came from the grid.
    pub fallback: bool,
}

/// Matches reply boxes to group members (by id, then by order), clamps them
/// and fills any gap from the grid. Extra boxes are dropped with a warning.
pub fn parse_proposal(reply: &LayoutProposalReply, ctx: &PlanningContext) -> LayoutProposal {
    let members: Vec<&str> = ctx.group.members.iter().map(|d| d.id.as_str()).collect();
    let mut assigned: Vec<Option<usize>> = vec![None; members.len()];
    let mut used = vec![false; reply.objects.len()];
    for (bi, b) in reply.objects.iter().enumerate() {
        if let Some(mi) = b.id.as_deref().and_then(|id| members.iter().position(|m| *m == id)) {
            if assigned[mi].is_none() {
                assigned[mi] = Some(bi);
                used[bi] = true;
            }
        }
    }
    let mut spare = (0..reply.objects.len()).filter(|&bi| !used[bi]);
    for slot in assigned.iter_mut().filter(|s| s.is_none()) {
        match spare.next() {
            Some(bi) => *slot = Some(bi),
            None => break,
        }
    }
    let mut warnings = Vec::new();
    let extra: Vec<usize> = spare.collect();
    if !extra.is_empty() {
        warnings.push(format!(
            "dropped {} extra box(es) beyond the {} group members",
            extra.len(),
            members.len()
        ));
    }
    let missing = assigned.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        warnings.push(format!("{missing} member(s) without a box; grid placement used"));
    }
    let mut grid = grid_boxes(missing, ctx.history.canvas_aspect).into_iter();
    let mut taken: BTreeSet<i64> = ctx.history.placed.iter().map(|p| p.z_order).collect();
    let iteration = ctx.iteration();
    let objects = members
        .iter()
        .zip(&assigned)
        .map(|(id, slot)| {
            let (raw, z) = match slot {
                Some(bi) => {
                    let b = &reply.objects[*bi];
                    let raw = RawBox::from_array(b.bbox).clamped();
                    let raw = if raw.is_valid() { raw } else { raw.sanitized().to_raw() };
                    (raw, b.z_order)
                }
                None => (grid.next().expect("one grid box per missing member").to_raw(), None),
            };
            let z = match z.filter(|z| !taken.contains(z)) {
                Some(z) => z,
                None => taken.iter().next_back().copied().unwrap_or(0) + 1,
            };
            taken.insert(z);
            ProposedObject::new(*id, raw, iteration, z)
        })
        .collect();
    LayoutProposal {
        objects,
        warnings,
        fallback: false,
    }
}

/// Grid placement for the whole group.
pub fn grid_proposal(ctx: &PlanningContext, reason: &str) -> LayoutProposal {
    let empty = LayoutProposalReply { objects: Vec::new() };
    let mut p = parse_proposal(&empty, ctx);
    p.warnings = vec![format!("{reason}; grid placement used for the whole group")];
    p.fallback = true;
    p
}

/// Asks the model for this group's boxes. A replay fixture miss that the
/// policy does not excuse is returned as an error; every other failure ends
/// in grid placement.
pub fn propose_layout(
    ctx: &PlanningContext,
    access: ModelAccess,
    log: &mut Vec<Exchange>,
) -> Result<LayoutProposal, GatewayError> {
    let req = build_vcot_request(ctx);
    let reply = match access.ask(&req, log) {
        Ok(r) => r,
        Err(e @ GatewayError::FixtureMiss { .. }) => return Err(e),
        Err(e) => {
            if let Some(last) = log.last_mut() {
                last.outcome = ExchangeOutcome::Fallback;
            }
            return Ok(grid_proposal(ctx, &format!("planner request failed ({e})")));
        }
    };
    let proposal = match reply.and_then(|r| r.parsed_as::<LayoutProposalReply>()) {
        Some(parsed) => parse_proposal(&parsed, ctx),
        None => grid_proposal(ctx, "no usable planner reply"),
    };
    for w in &proposal.warnings {
        info!("iteration {}: {w}", ctx.iteration());
    }
    Ok(proposal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::schema::ProposedBox;
    use crate::gateway::{FixtureStore, Gateway, MissPolicy};
    use crate::scene::{GenerationMode, ObjectDescriptor, PlacedObject, RelationKind};
    use std::sync::Arc;

    fn plan() -> ScenePlan {
        let table = ObjectDescriptor::new("table", "table");
        let cup = ObjectDescriptor::new("cup", "cup").with_relation(RelationKind::OnTopOf, "table");
        let plate = ObjectDescriptor::new("plate", "plate").with_relation(RelationKind::LeftOf, "cup");
        let mut g1 = PriorityGroup {
            priority: 1,
            members: vec![table],
        };
        let mut g2 = PriorityGroup {
            priority: 2,
            members: vec![cup, plate],
        };
        for d in g1.members.iter_mut().chain(g2.members.iter_mut()) {
            d.priority = if d.id == "table" { 1 } else { 2 };
        }
        let plan = ScenePlan {
            mode: GenerationMode::LayoutAware,
            background: "a kitchen".into(),
            groups: vec![g1, g2],
            source_prompt_id: "p".into(),
        };
        plan.validate().unwrap();
        plan
    }

    fn history() -> LayoutSet {
        LayoutSet::new(vec![PlacedObject::new(
            "table",
            BBox::new(0.1, 0.5, 0.9, 0.9).unwrap(),
            1,
            1,
        )])
        .unwrap()
    }

    fn canvas(with_image: bool) -> CanvasState {
        let mut c = CanvasState::blank("a kitchen", 1.0);
        if with_image {
            c.image = Some(ImageHandle::from_rgb8(2, 2, vec![0; 12]).unwrap());
            c.iteration = 1;
            c.layout_so_far = history();
        }
        c
    }

    #[test]
    fn sections_appear_in_order() {
        let p = plan();
        let c = canvas(false);
        let g = GroundingMap::default();
        let h = LayoutSet::default();
        let ctx = PlanningContext {
            prompt_text: "a cup on a table",
            plan: &p,
            group: &p.groups[0],
            history: &h,
            canvas: &c,
            grounding: &g,
            visual_context_enabled: true,
        };
        let req = build_vcot_request(&ctx);
        let pos: Vec<usize> = VCOT_SECTIONS.iter().map(|s| req.user_text.find(s).unwrap()).collect();
        assert!(pos[0] < pos[1] && pos[1] < pos[2]);
        assert!(req.images.is_empty());
        assert!(!req.user_text.contains("{prompt}"));
    }

    #[test]
    fn second_iteration_attaches_canvas_and_lists_history() {
        let p = plan();
        let c = canvas(true);
        let h = history();
        let g = ground_existing(&c, &h, None);
        let mut ctx = PlanningContext {
            prompt_text: "a cup on a table",
            plan: &p,
            group: &p.groups[1],
            history: &h,
            canvas: &c,
            grounding: &g,
            visual_context_enabled: true,
        };
        let req = build_vcot_request(&ctx);
        assert_eq!(req.images.len(), 1);
        assert!(req.user_text.contains("- table (table): [0.100, 0.500, 0.900, 0.900]"));
        ctx.visual_context_enabled = false;
        let req = build_vcot_request(&ctx);
        assert!(req.images.is_empty());
        assert!(req.user_text.contains("- table (table): [0.100, 0.500, 0.900, 0.900]"));
    }

    #[test]
    fn pair_count_is_within_group_plus_cross_history() {
        let p = plan();
        let c = canvas(true);
        let h = history();
        let g = ground_existing(&c, &h, None);
        let ctx = PlanningContext {
            prompt_text: "",
            plan: &p,
            group: &p.groups[1],
            history: &h,
            canvas: &c,
            grounding: &g,
            visual_context_enabled: true,
        };
        let pairs = relation_pairs(&ctx);
        // 2 members, 1 history object: 1 + 2
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].relations, ["plate left-of cup"]);
        assert_eq!(pairs[1].relations, ["cup on-top-of table"]);
        assert!(pairs[2].relations.is_empty());
    }

    #[test]
    fn grid_for_two_matches_closed_form() {
        // Independent computation: area 0.15 each, square, three equal gaps.
        let side = 0.15f64.sqrt();
        let gap = (1.0 - 2.0 * side) / 3.0;
        let top = (1.0 - side) / 2.0;
        let expected = [
            [gap, top, gap + side, top + side],
            [2.0 * gap + side, top, 2.0 * gap + 2.0 * side, top + side],
        ];
        let got = grid_boxes(2, 1.0);
        for (b, e) in got.iter().zip(expected) {
            for (x, y) in b.as_array().iter().zip(e) {
                assert!((x - y).abs() < 1e-12, "{b:?} vs {e:?}");
            }
            assert!((b.area() - 0.15).abs() < 1e-12);
        }
        assert_eq!(grid_boxes(2, 1.0), got);
        for k in 1..=12 {
            let boxes = grid_boxes(k, 16.0 / 9.0);
            assert_eq!(boxes.len(), k);
            for w in boxes.windows(2) {
                assert!(w[0].x_max() <= w[1].x_min());
            }
        }
    }

    fn reply(boxes: &[(Option<&str>, [f64; 4])]) -> LayoutProposalReply {
        LayoutProposalReply {
            objects: boxes
                .iter()
                .map(|(id, b)| ProposedBox {
                    id: id.map(str::to_string),
                    bbox: *b,
                    z_order: None,
                })
                .collect(),
        }
    }

    #[test]
    fn parse_matches_ids_then_order_and_drops_extras() {
        let p = plan();
        let c = canvas(true);
        let h = history();
        let g = GroundingMap::default();
        let ctx = PlanningContext {
            prompt_text: "",
            plan: &p,
            group: &p.groups[1],
            history: &h,
            canvas: &c,
            grounding: &g,
            visual_context_enabled: true,
        };
        let r = reply(&[
            (None, [0.0, 0.0, 0.2, 0.2]),
            (Some("cup"), [0.4, 0.3, 0.6, 1.4]),
            (None, [0.7, 0.7, 0.8, 0.8]),
        ]);
        let out = parse_proposal(&r, &ctx);
        assert_eq!(out.objects.len(), 2);
        assert_eq!(out.objects[0].descriptor_id, "cup");
        assert_eq!(out.objects[0].bbox, RawBox::new(0.4, 0.3, 0.6, 1.0));
        assert_eq!(out.objects[1].bbox, RawBox::new(0.0, 0.0, 0.2, 0.2));
        assert_eq!(out.warnings.len(), 1);
        // history holds z 1, so members get 2 and 3
        assert_eq!((out.objects[0].z_order, out.objects[1].z_order), (2, 3));
        assert!(out.objects.iter().all(|o| o.iteration == 2));
    }

    #[test]
    fn single_member_fixture_box_is_kept() {
        let p = plan();
        let c = CanvasState::blank("a kitchen", 1.0);
        let h = LayoutSet::default();
        let g = GroundingMap::default();
        let ctx = PlanningContext {
            prompt_text: "a cup on a table",
            plan: &p,
            group: &p.groups[0],
            history: &h,
            canvas: &c,
            grounding: &g,
            visual_context_enabled: true,
        };
        let store = Arc::new(FixtureStore::in_memory());
        let req = build_vcot_request(&ctx);
        let resp = crate::gateway::ModelResponse::from_raw(
            r#"{"objects":[{"id":"table","bbox":[0.1,0.3,0.45,0.8]}]}"#,
            SchemaId::LayoutProposal,
        );
        store.insert(&req, &resp).unwrap();
        let gw = Gateway::replay(store);
        let mut log = Vec::new();
        let out = propose_layout(&ctx, ModelAccess::new(&gw, &MissPolicy::Fail), &mut log).unwrap();
        assert_eq!(
            out.objects,
            vec![ProposedObject::new("table", RawBox::new(0.1, 0.3, 0.45, 0.8), 1, 1)]
        );
        assert_eq!(log[0].outcome, ExchangeOutcome::Fixture);

        let empty = Gateway::replay(Arc::new(FixtureStore::in_memory()));
        assert!(propose_layout(&ctx, ModelAccess::new(&empty, &MissPolicy::Fail), &mut log).is_err());
        let grid = propose_layout(&ctx, ModelAccess::new(&empty, &MissPolicy::Fallback), &mut log).unwrap();
        assert!(grid.fallback);
        assert_eq!(grid.objects[0].bbox, grid_boxes(1, 1.0)[0].to_raw());
    }

    struct Shifted;
    impl Detector for Shifted {
        fn detect(&self, _: &ImageHandle, history: &LayoutSet) -> Result<Vec<GroundingEntry>, String> {
            Ok(history
                .placed
                .iter()
                .map(|p| GroundingEntry {
                    descriptor_id: p.descriptor_id.clone(),
                    bbox: p.bbox.translated(0.05, 0.0).unwrap(),
                    confidence: 0.7,
                })
                .collect())
        }
    }

    struct Broken;
    impl Detector for Broken {
        fn detect(&self, _: &ImageHandle, _: &LayoutSet) -> Result<Vec<GroundingEntry>, String> {
            Err("timeout".into())
        }
    }

    #[test]
    fn grounding_echo_and_detector_override() {
        let h = LayoutSet::new(vec![
            PlacedObject::new("a", BBox::new(0.1, 0.1, 0.3, 0.3).unwrap(), 1, 1),
            PlacedObject::new("b", BBox::new(0.5, 0.5, 0.7, 0.7).unwrap(), 1, 2),
        ])
        .unwrap();
        let c = canvas(true);
        assert!(ground_existing(&c, &LayoutSet::default(), None).entries.is_empty());
        let echo = ground_existing(&c, &h, None);
        assert_eq!(echo.entries.len(), 2);
        assert!(echo.entries.iter().all(|e| e.confidence == 1.0));
        assert_eq!(echo.entries[0].bbox, h.placed[0].bbox);
        let det = ground_existing(&c, &h, Some(&Shifted));
        assert_eq!(det.entries[0].bbox, h.placed[0].bbox.translated(0.05, 0.0).unwrap());
        assert_eq!(det.entries[0].confidence, 0.7);
        assert_eq!(ground_existing(&c, &h, Some(&Broken)), echo);
    }
}
