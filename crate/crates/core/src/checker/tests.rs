use proptest::prelude::*;

use super::*;
use crate::scene::{bbox_iou, BBox, GenerationMode, ObjectDescriptor, PriorityGroup, RelationKind};

fn bx(c: [f64; 4]) -> BBox {
    BBox::new(c[0], c[1], c[2], c[3]).unwrap()
}

fn placed(id: &str, c: [f64; 4], iteration: u32, z: i64) -> PlacedObject {
    PlacedObject::new(id, bx(c), iteration, z)
}

fn proposed(id: &str, c: [f64; 4], iteration: u32, z: i64) -> ProposedObject {
    ProposedObject::new(id, RawBox::from_array(c), iteration, z)
}

fn plan(groups: Vec<Vec<ObjectDescriptor>>) -> ScenePlan {
    ScenePlan {
        mode: GenerationMode::LayoutAware,
        background: "a room".into(),
        groups: groups
            .into_iter()
            .enumerate()
            .map(|(i, members)| PriorityGroup {
                priority: i as u32 + 1,
                members: members
                    .into_iter()
                    .map(|mut d| {
                        d.priority = i as u32 + 1;
                        d
                    })
                    .collect(),
            })
            .collect(),
        source_prompt_id: "p".into(),
    }
}

fn d(id: &str, name: &str) -> ObjectDescriptor {
    ObjectDescriptor::new(id, name)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn out_of_canvas_box_is_clamped() {
    let p = plan(vec![vec![d("a", "ball")]]);
    let (out, report) = check_stage1(
        &[proposed("a", [-0.1, 0.2, 0.4, 0.7], 1, 1)],
        &p,
        &LayoutSet::empty(1.0),
        &CheckerConfig::default(),
    );
    assert_eq!(out[0].bbox.as_array(), [0.0, 0.2, 0.4, 0.7]);
    assert_eq!(report.repairs_applied.len(), 1);
    assert_eq!(report.repairs_applied[0].violation.kind, ViolationKind::OutOfBounds);
    assert!(matches!(report.repairs_applied[0].edit, Edit::Clamp { .. }));
    assert!(report.violations_after.is_empty());
}

#[test]
fn left_of_moves_subject_to_closed_form_center() {
    let mut a = d("a", "cat");
    a.relations
        .push(Relation::new("a", RelationKind::LeftOf, "b").with_margin(0.05));
    let p = plan(vec![vec![d("b", "sofa")], vec![a]]);
    let history = LayoutSet::new(vec![placed("b", [0.2, 0.4, 0.4, 0.6], 1, 1)]).unwrap();
    let (out, report) = check_stage1(
        &[proposed("a", [0.6, 0.4, 0.8, 0.6], 2, 2)],
        &p,
        &history,
        &CheckerConfig::default(),
    );
    // center_x = 0.3 - 0.2 / 2 - 0.05
    let expected = 0.3 - 0.1 - 0.05;
    assert!(close(out[0].bbox.center_x(), expected), "{:?}", out[0].bbox);
    assert!(close(out[0].bbox.y_min(), 0.4));
    assert_eq!(report.repairs_applied.len(), 1);
    assert!(matches!(report.repairs_applied[0].edit, Edit::Translate { .. }));
    assert!(report.violations_after.is_empty());
}

#[test]
fn valid_proposal_needs_no_repair() {
    let p = plan(vec![vec![d("a", "ball")]]);
    let prop = [proposed("a", [0.2, 0.2, 0.5, 0.6], 1, 1)];
    let (out, report) = full_check(&prop, &p, &LayoutSet::empty(1.0), &CheckerConfig::default());
    assert_eq!(out.placed, vec![prop[0].clone().into_placed()]);
    assert!(report.is_clean());
    assert_eq!(report.passes_used, 0);
    assert!(!report.accepted_with_warnings);
}

#[test]
fn extreme_aspect_keeps_area() {
    let p = plan(vec![vec![d("a", "rope")]]);
    let (out, report) = check_stage1(
        &[proposed("a", [0.1, 0.1, 0.9, 0.15], 1, 1)],
        &p,
        &LayoutSet::empty(1.0),
        &CheckerConfig::default(),
    );
    let b = out[0].bbox;
    assert!((b.area() - 0.04).abs() < 1e-12);
    assert!((b.aspect(1.0) - 8.0).abs() < 1e-9);
    assert!(close(b.center_x(), 0.5) && close(b.center_y(), 0.125));
    assert_eq!(report.repairs_applied[0].violation.kind, ViolationKind::AspectExtreme);
}

#[test]
fn tiny_box_grows_to_min_area() {
    let p = plan(vec![vec![d("a", "ant")]]);
    let (out, _) = check_stage1(
        &[proposed("a", [0.5, 0.5, 0.52, 0.52], 1, 1)],
        &p,
        &LayoutSet::empty(1.0),
        &CheckerConfig::default(),
    );
    assert!((out[0].bbox.area() - 0.002).abs() < 1e-12);
    assert!(close(out[0].bbox.center_x(), 0.51));
}

#[test]
fn heavy_overlap_moves_later_box() {
    let p = plan(vec![vec![d("a", "tree")], vec![d("b", "house")]]);
    // equal squares offset by 0.1 along x overlap with IoU 0.12 / 0.2 = 0.6
    let all = LayoutSet::new(vec![
        placed("a", [0.2, 0.2, 0.6, 0.6], 1, 1),
        placed("b", [0.3, 0.2, 0.7, 0.6], 2, 2),
    ])
    .unwrap();
    assert!((bbox_iou(&all.placed[0].bbox, &all.placed[1].bbox) - 0.6).abs() < 1e-12);
    let (out, report) = check_stage2(&all, &p, &CheckerConfig::default());
    assert_eq!(out.placed[0], all.placed[0]);
    let b = out.placed[1].bbox;
    let iou = bbox_iou(&out.placed[0].bbox, &b);
    assert!(iou <= 0.4 + EPS && iou > 0.4 - 1e-9, "iou {iou}");
    // smallest of the four axis moves is +x
    let limit = 0.4 * 0.32 / 1.4;
    assert!((b.x_min() - (0.6 - limit / 0.4)).abs() < 1e-9);
    assert!(close(b.y_min(), 0.2));
    assert_eq!(report.repairs_applied.len(), 1);
}

#[test]
fn related_overlap_is_exempt() {
    let mut b = d("b", "cup");
    b.relations.push(Relation::new("b", RelationKind::Inside, "a"));
    let p = plan(vec![vec![d("a", "box")], vec![b]]);
    let all = LayoutSet::new(vec![
        placed("a", [0.2, 0.2, 0.6, 0.6], 1, 1),
        placed("b", [0.25, 0.25, 0.55, 0.55], 2, 2),
    ])
    .unwrap();
    let (out, report) = check_stage2(&all, &p, &CheckerConfig::default());
    assert_eq!(out, all);
    assert!(report.is_clean());
}

#[test]
fn behind_conflict_swaps_z() {
    let mut a = d("a", "tree");
    a.relations.push(Relation::new("a", RelationKind::Behind, "b"));
    let p = plan(vec![vec![a, d("b", "fence")]]);
    let all = LayoutSet::new(vec![
        placed("a", [0.1, 0.1, 0.3, 0.3], 1, 5),
        placed("b", [0.6, 0.6, 0.8, 0.8], 1, 2),
    ])
    .unwrap();
    let (out, report) = check_stage2(&all, &p, &CheckerConfig::default());
    assert_eq!(out.get("a").unwrap().z_order, 2);
    assert_eq!(out.get("b").unwrap().z_order, 5);
    assert_eq!(
        report.repairs_applied[0].edit,
        Edit::SwapZ {
            a: "a".into(),
            b: "b".into(),
            from: [5, 2],
            to: [2, 5]
        }
    );
}

#[test]
fn scale_drift_rescales_later_box_to_bound() {
    let p = plan(vec![vec![d("dog#1", "dog")], vec![d("dog#2", "dog")]]);
    let all = LayoutSet::new(vec![
        placed("dog#1", [0.1, 0.1, 0.3, 0.3], 1, 1),
        placed("dog#2", [0.5, 0.5, 1.0, 1.0], 2, 2),
    ])
    .unwrap();
    let (out, report) = check_stage2(&all, &p, &CheckerConfig::default());
    let later = out.get("dog#2").unwrap().bbox;
    assert!((later.area() - 0.08).abs() < 1e-12);
    assert!((later.area() / out.get("dog#1").unwrap().bbox.area() - 2.0).abs() < 1e-9);
    assert!(close(later.center_x(), 0.75) && close(later.center_y(), 0.75));
    assert_eq!(out.get("dog#1").unwrap(), &all.placed[0]);
    assert_eq!(report.passes_used, 2);
    assert!(report.violations_after.is_empty());
}

#[test]
fn seeded_faults_are_all_repaired() {
    let mut lamp = d("lamp", "lamp");
    lamp.relations
        .push(Relation::new("lamp", RelationKind::Behind, "table"));
    let mut cup = d("cup", "cup");
    cup.relations.push(Relation::new("cup", RelationKind::RightOf, "table"));
    let p = plan(vec![vec![d("table", "table")], vec![lamp, cup]]);
    let history = LayoutSet::new(vec![placed("table", [0.1, 0.5, 0.5, 0.9], 1, 1)]).unwrap();
    let prop = [
        proposed("lamp", [0.7, 0.1, 1.1, 0.4], 2, 3),
        proposed("cup", [0.05, 0.05, 0.15, 0.15], 2, 2),
    ];
    let (out, report) = full_check(&prop, &p, &history, &CheckerConfig::default());
    let mut kinds: Vec<_> = report.violations_before.iter().map(|v| v.kind).collect();
    kinds.sort();
    assert_eq!(
        kinds,
        vec![
            ViolationKind::OutOfBounds,
            ViolationKind::RelationUnsatisfied,
            ViolationKind::OcclusionOrderConflict
        ]
    );
    assert_eq!(report.repairs_applied.len(), 3);
    assert!(report.violations_after.is_empty());
    assert!(!report.accepted_with_warnings);
    assert_eq!(out.get("lamp").unwrap().bbox.as_array(), [0.7, 0.1, 1.0, 0.4]);
    assert!(close(out.get("cup").unwrap().bbox.center_x(), 0.35));
    assert!(out.get("lamp").unwrap().z_order < out.get("table").unwrap().z_order);
}

#[test]
fn disabled_checker_passes_boxes_through() {
    let out = pass_through(&[proposed("a", [0.2, 0.2, 0.4, 0.4], 1, 1)]);
    assert_eq!(out[0].bbox.as_array(), [0.2, 0.2, 0.4, 0.4]);
}

#[test]
fn duplicate_proposal_ids_and_depths_are_noted() {
    let p = plan(vec![vec![d("a", "x"), d("b", "y")]]);
    let prop = [
        proposed("a", [0.1, 0.1, 0.2, 0.2], 1, 1),
        proposed("a", [0.5, 0.5, 0.6, 0.6], 1, 2),
        proposed("b", [0.5, 0.5, 0.6, 0.6], 1, 1),
    ];
    let (out, report) = full_check(&prop, &p, &LayoutSet::empty(1.0), &CheckerConfig::default());
    assert_eq!(out.len(), 2);
    assert_eq!(out.get("b").unwrap().z_order, 2);
    assert_eq!(report.notes.len(), 2);
}

#[test]
fn report_round_trips_through_json() {
    let p = plan(vec![vec![d("a", "ball")]]);
    let (_, report) = check_stage1(
        &[proposed("a", [-0.1, 0.2, 0.4, 0.7], 1, 1)],
        &p,
        &LayoutSet::empty(1.0),
        &CheckerConfig::default(),
    );
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"action\":\"clamp\""));
    let back: CheckReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

fn arb_box() -> impl Strategy<Value = [f64; 4]> {
    (-0.2f64..1.1, -0.2f64..1.1, 0.0f64..0.9, 0.0f64..0.9).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn arb_kind() -> impl Strategy<Value = RelationKind> {
    (0usize..RelationKind::ALL.len()).prop_map(|i| RelationKind::ALL[i])
}

type SceneParts = (usize, Vec<[f64; 4]>, Vec<(usize, usize, RelationKind)>, Vec<usize>);

fn arb_scene() -> impl Strategy<Value = SceneParts> {
    (1usize..=6).prop_flat_map(|n| {
        (
            0..n,
            prop::collection::vec(arb_box(), n),
            prop::collection::vec((0..n, 0..n, arb_kind()), 0..4),
            prop::collection::vec(0usize..3, n),
        )
    })
}

fn build(
    split: usize,
    boxes: &[[f64; 4]],
    rels: &[(usize, usize, RelationKind)],
    names: &[usize],
) -> (Constraints, LayoutSet, Vec<ProposedObject>) {
    let id = |i: usize| format!("o{i}");
    let mut cons = Constraints::default();
    for (i, n) in names.iter().enumerate() {
        cons.names.insert(id(i), format!("name{n}"));
    }
    for &(s, o, k) in rels {
        if s != o {
            cons.relations.push(Relation::new(id(s), k, id(o)));
        }
    }
    let history = LayoutSet::new(
        (0..split)
            .map(|i| ProposedObject::new(id(i), RawBox::from_array(boxes[i]), 1, i as i64).into_placed())
            .collect(),
    )
    .unwrap();
    let proposal = (split..boxes.len())
        .map(|i| ProposedObject::new(id(i), RawBox::from_array(boxes[i]), 2, i as i64))
        .collect();
    (cons, history, proposal)
}

/// Feeds a checker result back in with the same history/proposal split.
fn recheck(out: &LayoutSet, split: usize, cons: &Constraints, cfg: &CheckerConfig) -> (LayoutSet, CheckReport) {
    let (hist, prop): (Vec<_>, Vec<_>) = out
        .placed
        .iter()
        .cloned()
        .partition(|p| p.descriptor_id[1..].parse::<usize>().unwrap() < split);
    let history = LayoutSet::with_aspect(hist, out.canvas_aspect).unwrap();
    let proposal: Vec<ProposedObject> = prop.into_iter().map(ProposedObject::from).collect();
    full_check_with(&proposal, cons, &history, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn output_is_valid_and_recheck_is_quiet((split, boxes, rels, names) in arb_scene()) {
        let cfg = CheckerConfig::default();
        let (cons, history, proposal) = build(split, &boxes, &rels, &names);
        let (out, report) = full_check_with(&proposal, &cons, &history, &cfg);
        prop_assert_eq!(out.len(), boxes.len());
        prop_assert!(report.passes_used <= cfg.max_passes);
        for p in &out.placed {
            prop_assert!(p.bbox.to_raw().is_valid());
        }
        let (again, second) = recheck(&out, split, &cons, &cfg);
        prop_assert!(second.repairs_applied.is_empty(), "{:?}", second.repairs_applied);
        prop_assert_eq!(again, out);
    }

    #[test]
    fn stage1_never_touches_history((split, boxes, rels, names) in arb_scene()) {
        let cfg = CheckerConfig::default();
        let (cons, history, proposal) = build(split, &boxes, &rels, &names);
        let mut e = Engine::new(&cfg, cons, &history, &proposal);
        e.run(true, false);
        let (out, _) = e.finish();
        for h in &history.placed {
            prop_assert_eq!(out.get(&h.descriptor_id).unwrap(), h);
        }
    }
}
