use std::collections::{BTreeMap, BTreeSet};

use super::{CheckReport, CheckerConfig, Constraints, Edit, Repair, Violation, ViolationKind, EPS};
use crate::scene::{
    bbox_iou, relation_holds, BBox, LayoutSet, PlacedObject, ProposedObject, RawBox, RelationKind, NEXT_TO_MAX_GAP,
    ON_TOP_MIN_OVERLAP,
};

type Counts = BTreeMap<(ViolationKind, String), usize>;

/// Gap left between boxes placed side by side by a next-to repair.
const NEXT_TO_SPACING: f64 = 0.01;

/// Mutable layout plus the bookkeeping for one checker run.
pub struct Engine<'c> {
    cfg: &'c CheckerConfig,
    cons: Constraints,
    aspect: f64,
    placed: Vec<PlacedObject>,
    /// Proposal ids: the only boxes stage 1 may move.
    proposal: BTreeSet<String>,
    /// Raw boxes of proposal members that arrived invalid.
    invalid_raw: Vec<(String, RawBox)>,
    counts: Counts,
    report: CheckReport,
}

fn overflow(raw: &RawBox) -> f64 {
    if !raw.is_finite() {
        return 1.0;
    }
    [-raw.x_min, -raw.y_min, raw.x_max - 1.0, raw.y_max - 1.0]
        .into_iter()
        .fold(0.0, f64::max)
}

fn resized(b: &BBox, w: f64, h: f64) -> Option<BBox> {
    if !(w > 0.0 && h > 0.0) || w > 1.0 + EPS || h > 1.0 + EPS {
        return None;
    }
    BBox::shifted_inside(b.center_x() - w / 2.0, b.center_y() - h / 2.0, w.min(1.0), h.min(1.0)).ok()
}

fn moved_to(b: &BBox, x_min: f64, y_min: f64) -> Option<BBox> {
    BBox::shifted_inside(x_min, y_min, b.width(), b.height()).ok()
}

impl<'c> Engine<'c> {
    pub fn new(cfg: &'c CheckerConfig, cons: Constraints, history: &LayoutSet, proposal: &[ProposedObject]) -> Self {
        let mut placed = history.placed.clone();
        let mut notes = Vec::new();
        let mut ids: BTreeSet<String> = placed.iter().map(|p| p.descriptor_id.clone()).collect();
        let mut depths: BTreeSet<i64> = placed.iter().map(|p| p.z_order).collect();
        let mut proposal_ids = BTreeSet::new();
        let mut invalid_raw = Vec::new();
        for p in proposal {
            if !ids.insert(p.descriptor_id.clone()) {
                notes.push(format!("dropped duplicate proposal for `{}`", p.descriptor_id));
                continue;
            }
            let mut z = p.z_order;
            if !depths.insert(z) {
                z = depths.iter().next_back().copied().unwrap_or(0) + 1;
                depths.insert(z);
                notes.push(format!(
                    "`{}` z_order {} already taken; using {z}",
                    p.descriptor_id, p.z_order
                ));
            }
            if !p.bbox.is_valid() {
                invalid_raw.push((p.descriptor_id.clone(), p.bbox));
            }
            proposal_ids.insert(p.descriptor_id.clone());
            placed.push(PlacedObject::new(
                p.descriptor_id.clone(),
                p.bbox.sanitized(),
                p.iteration,
                z,
            ));
        }
        let mut e = Self {
            cfg,
            cons,
            aspect: history.canvas_aspect,
            placed,
            proposal: proposal_ids,
            invalid_raw,
            counts: Counts::new(),
            report: CheckReport {
                notes,
                ..CheckReport::default()
            },
        };
        e.counts = e.count(&e.placed);
        e
    }

    /// Replaces the layout with `all`, every object movable by stage 2.
    pub fn make_all_movable_in_stage2(&mut self, all: &LayoutSet) {
        self.placed = all.placed.clone();
        self.aspect = all.canvas_aspect;
        self.counts = self.count(&self.placed);
    }

    fn index(&self, id: &str) -> Option<usize> {
        self.placed.iter().position(|p| p.descriptor_id == id)
    }

    fn physical_aspect(&self, b: &BBox) -> f64 {
        b.aspect(self.aspect)
    }

    /// Every violation present in `placed`, in a fixed order.
    pub fn violations(&self, placed: &[PlacedObject]) -> Vec<Violation> {
        let cfg = self.cfg;
        let mut out = Vec::new();
        for p in placed {
            let id = vec![p.descriptor_id.clone()];
            let area = p.bbox.area();
            if area < cfg.min_area - EPS {
                out.push(Violation::new(ViolationKind::TooSmall, id.clone(), area, cfg.min_area));
            } else if area > cfg.max_area + EPS {
                out.push(Violation::new(ViolationKind::TooLarge, id.clone(), area, cfg.max_area));
            }
            let a = self.physical_aspect(&p.bbox);
            if a < cfg.min_aspect * (1.0 - EPS) {
                out.push(Violation::new(ViolationKind::AspectExtreme, id, a, cfg.min_aspect));
            } else if a > cfg.max_aspect * (1.0 + EPS) {
                out.push(Violation::new(ViolationKind::AspectExtreme, id, a, cfg.max_aspect));
            }
        }
        let find = |id: &str| placed.iter().find(|p| p.descriptor_id == id);
        let pairs = |r: &crate::scene::Relation| Some((find(&r.subject_id)?, find(&r.object_id)?));
        for r in self.cons.relations.iter().filter(|r| !r.kind.is_depth()) {
            if let Some((s, o)) = pairs(r) {
                if !relation_holds(r.kind, r.margin, s, o) {
                    out.push(
                        Violation::new(
                            ViolationKind::RelationUnsatisfied,
                            vec![s.descriptor_id.clone(), o.descriptor_id.clone()],
                            0.0,
                            1.0,
                        )
                        .with_detail(format!("{} {} {}", r.subject_id, r.kind, r.object_id)),
                    );
                }
            }
        }
        for i in 0..placed.len() {
            for j in i + 1..placed.len() {
                let (a, b) = (&placed[i], &placed[j]);
                let iou = bbox_iou(&a.bbox, &b.bbox);
                if iou > cfg.max_iou + EPS && !self.overlap_exempt(&a.descriptor_id, &b.descriptor_id) {
                    out.push(Violation::new(
                        ViolationKind::OverlapExcess,
                        vec![a.descriptor_id.clone(), b.descriptor_id.clone()],
                        iou,
                        cfg.max_iou,
                    ));
                }
            }
        }
        for r in self.cons.relations.iter().filter(|r| r.kind.is_depth()) {
            if let Some((s, o)) = pairs(r) {
                if !relation_holds(r.kind, r.margin, s, o) {
                    out.push(
                        Violation::new(
                            ViolationKind::OcclusionOrderConflict,
                            vec![s.descriptor_id.clone(), o.descriptor_id.clone()],
                            0.0,
                            1.0,
                        )
                        .with_detail(format!("{} {} {}", r.subject_id, r.kind, r.object_id)),
                    );
                }
            }
        }
        for i in 0..placed.len() {
            for j in i + 1..placed.len() {
                let (a, b) = (&placed[i], &placed[j]);
                let same = match (
                    self.cons.names.get(&a.descriptor_id),
                    self.cons.names.get(&b.descriptor_id),
                ) {
                    (Some(x), Some(y)) => x == y,
                    _ => false,
                };
                if !same {
                    continue;
                }
                let (earlier, later) = if b.iteration < a.iteration { (b, a) } else { (a, b) };
                let (x, y) = (earlier.bbox.area(), later.bbox.area());
                let ratio = x.max(y) / x.min(y);
                if ratio > cfg.max_drift_ratio + EPS {
                    out.push(Violation::new(
                        ViolationKind::ScaleDrift,
                        vec![earlier.descriptor_id.clone(), later.descriptor_id.clone()],
                        ratio,
                        cfg.max_drift_ratio,
                    ));
                }
            }
        }
        out
    }

    fn overlap_exempt(&self, a: &str, b: &str) -> bool {
        self.cons.relations.iter().any(|r| {
            matches!(
                r.kind,
                RelationKind::Inside | RelationKind::OnTopOf | RelationKind::Behind | RelationKind::InFrontOf
            ) && ((r.subject_id == a && r.object_id == b) || (r.subject_id == b && r.object_id == a))
        })
    }

    fn count(&self, placed: &[PlacedObject]) -> Counts {
        let mut c = Counts::new();
        for v in self.violations(placed) {
            for s in &v.subjects {
                *c.entry((v.kind, s.clone())).or_default() += 1;
            }
        }
        c
    }

    /// Adopts `candidate` when the targeted count drops and no count rises.
    fn accept(&mut self, candidate: Vec<PlacedObject>, kind: ViolationKind, subject: &str) -> bool {
        let next = self.count(&candidate);
        let key = (kind, subject.to_string());
        let before = self.counts.get(&key).copied().unwrap_or(0);
        let after = next.get(&key).copied().unwrap_or(0);
        if after >= before {
            return false;
        }
        if next.iter().any(|(k, n)| *n > self.counts.get(k).copied().unwrap_or(0)) {
            return false;
        }
        self.placed = candidate;
        self.counts = next;
        true
    }

    fn try_box(&mut self, idx: usize, b: BBox, violation: &Violation, resize: bool) -> bool {
        let from = self.placed[idx].bbox;
        if b == from {
            return false;
        }
        let mut cand = self.placed.clone();
        cand[idx].bbox = b;
        let id = cand[idx].descriptor_id.clone();
        if !self.accept(cand, violation.kind, &id) {
            return false;
        }
        let edit = if resize {
            Edit::Resize {
                id,
                from: from.to_raw(),
                to: b.to_raw(),
            }
        } else {
            Edit::Translate {
                id,
                from: from.to_raw(),
                to: b.to_raw(),
            }
        };
        self.report.repairs_applied.push(Repair {
            violation: violation.clone(),
            edit,
        });
        true
    }

    /// Records the clamp every out-of-canvas proposal box received when it
    /// was sanitized. This is the one edit made regardless of side effects.
    fn clamps(&mut self) {
        for (id, raw) in std::mem::take(&mut self.invalid_raw) {
            let idx = self.index(&id).expect("proposal member is placed");
            self.report.repairs_applied.push(Repair {
                violation: Violation::new(ViolationKind::OutOfBounds, vec![id.clone()], overflow(&raw), 0.0),
                edit: Edit::Clamp {
                    id,
                    from: raw,
                    to: self.placed[idx].bbox.to_raw(),
                },
            });
        }
    }

    /// Aspect, then area, rescaled about the center for each proposal box.
    /// A rescale that would break a relation or cause an overlap or drift
    /// is left for the report.
    fn shape_sweep(&mut self) -> bool {
        let cfg = self.cfg;
        let mut changed = false;
        for idx in 0..self.placed.len() {
            let id = self.placed[idx].descriptor_id.clone();
            if !self.proposal.contains(&id) {
                continue;
            }
            let b = self.placed[idx].bbox;
            let p = self.physical_aspect(&b);
            let bound = if p < cfg.min_aspect * (1.0 - EPS) {
                Some(cfg.min_aspect)
            } else if p > cfg.max_aspect * (1.0 + EPS) {
                Some(cfg.max_aspect)
            } else {
                None
            };
            if let Some(t) = bound {
                let v = Violation::new(ViolationKind::AspectExtreme, vec![id.clone()], p, t);
                changed |= self.try_box(idx, self.aspect_fixed(&b, t), &v, true);
            }
            let b = self.placed[idx].bbox;
            let area = b.area();
            let target = if area < cfg.min_area - EPS {
                Some((ViolationKind::TooSmall, cfg.min_area))
            } else if area > cfg.max_area + EPS {
                Some((ViolationKind::TooLarge, cfg.max_area))
            } else {
                None
            };
            if let Some((kind, t)) = target {
                let s = (t / area).sqrt();
                let (w, h) = ((b.width() * s).min(1.0), (b.height() * s).min(1.0));
                if let Ok(fixed) = BBox::shifted_inside(b.center_x() - w / 2.0, b.center_y() - h / 2.0, w, h) {
                    let v = Violation::new(kind, vec![id], area, t);
                    changed |= self.try_box(idx, fixed, &v, true);
                }
            }
        }
        changed
    }

    /// Area-preserving reshape onto aspect bound `t`, shrinking only when
    /// the canvas cannot hold the preserved area.
    fn aspect_fixed(&self, b: &BBox, t: f64) -> BBox {
        let r = self.aspect;
        let a = b.area();
        let mut w = (a * t / r).sqrt();
        let mut h = (a * r / t).sqrt();
        if w > 1.0 {
            w = 1.0;
            h = w * r / t;
        }
        if h > 1.0 {
            h = 1.0;
            w = t * h / r;
        }
        BBox::shifted_inside(b.center_x() - w / 2.0, b.center_y() - h / 2.0, w.min(1.0), h.min(1.0)).unwrap_or(*b)
    }

    /// Candidate subject boxes that would satisfy a planar relation.
    fn relation_candidates(&self, kind: RelationKind, margin: f64, s: &BBox, o: &BBox) -> Vec<(BBox, bool)> {
        let (w, h) = (s.width(), s.height());
        let mv = |x: f64, y: f64| moved_to(s, x, y).map(|b| (b, false));
        let out: Vec<Option<(BBox, bool)>> = match kind {
            RelationKind::LeftOf => vec![mv(o.center_x() - w / 2.0 - margin - w / 2.0, s.y_min())],
            RelationKind::RightOf => vec![mv(o.center_x() + w / 2.0 + margin - w / 2.0, s.y_min())],
            RelationKind::Above => vec![mv(s.x_min(), o.center_y() - h / 2.0 - margin - h / 2.0)],
            RelationKind::Below => vec![mv(s.x_min(), o.center_y() + h / 2.0 + margin - h / 2.0)],
            RelationKind::OnTopOf => {
                let overlap = s.x_max().min(o.x_max()) - s.x_min().max(o.x_min());
                let x = if overlap >= ON_TOP_MIN_OVERLAP * w {
                    s.x_min()
                } else {
                    o.center_x() - w / 2.0
                };
                vec![mv(x, o.y_min() - h)]
            }
            RelationKind::Inside => {
                if w <= o.width() && h <= o.height() {
                    vec![mv(
                        s.x_min().clamp(o.x_min(), o.x_max() - w),
                        s.y_min().clamp(o.y_min(), o.y_max() - h),
                    )]
                } else {
                    let k = (o.width() / w).min(o.height() / h) * 0.9;
                    let (nw, nh) = (w * k, h * k);
                    vec![
                        BBox::shifted_inside(o.center_x() - nw / 2.0, o.center_y() - nh / 2.0, nw, nh)
                            .ok()
                            .map(|b| (b, true)),
                    ]
                }
            }
            RelationKind::NextTo => {
                let cy = if s.gap(o) > NEXT_TO_MAX_GAP || s.y_max() < o.y_min() || s.y_min() > o.y_max() {
                    o.center_y() - h / 2.0
                } else {
                    s.y_min()
                };
                let left = mv(o.x_min() - NEXT_TO_SPACING - w, cy);
                let right = mv(o.x_max() + NEXT_TO_SPACING, cy);
                let above = mv(o.center_x() - w / 2.0, o.y_min() - NEXT_TO_SPACING - h);
                let below = mv(o.center_x() - w / 2.0, o.y_max() + NEXT_TO_SPACING);
                if s.center_x() <= o.center_x() {
                    vec![left, right, above, below]
                } else {
                    vec![right, left, above, below]
                }
            }
            RelationKind::Behind | RelationKind::InFrontOf => Vec::new(),
        };
        out.into_iter().flatten().collect()
    }

    /// One sweep over planar relations whose subject is a proposal member.
    fn relation_sweep(&mut self) -> bool {
        let mut changed = false;
        let relations = self.cons.relations.clone();
        for r in relations.iter().filter(|r| !r.kind.is_depth()) {
            if !self.proposal.contains(&r.subject_id) {
                continue;
            }
            let (Some(si), Some(oi)) = (self.index(&r.subject_id), self.index(&r.object_id)) else {
                continue;
            };
            if relation_holds(r.kind, r.margin, &self.placed[si], &self.placed[oi]) {
                continue;
            }
            let violation = Violation::new(
                ViolationKind::RelationUnsatisfied,
                vec![r.subject_id.clone(), r.object_id.clone()],
                0.0,
                1.0,
            )
            .with_detail(format!("{} {} {}", r.subject_id, r.kind, r.object_id));
            for (b, resize) in self.relation_candidates(r.kind, r.margin, &self.placed[si].bbox, &self.placed[oi].bbox)
            {
                if self.try_box(si, b, &violation, resize) {
                    changed = true;
                    break;
                }
            }
        }
        changed
    }

    /// Translations of `mover` along each axis direction that bring its IoU
    /// with `fixed` down to the limit, nearest first.
    fn overlap_moves(&self, fixed: &BBox, mover: &BBox) -> Vec<BBox> {
        let tau = self.cfg.max_iou;
        let limit = tau * (fixed.area() + mover.area()) / (1.0 + tau) * (1.0 - 1e-12);
        let ox = fixed.x_max().min(mover.x_max()) - fixed.x_min().max(mover.x_min());
        let oy = fixed.y_max().min(mover.y_max()) - fixed.y_min().max(mover.y_min());
        if ox <= 0.0 || oy <= 0.0 {
            return Vec::new();
        }
        let lx = limit / oy;
        let ly = limit / ox;
        // (displacement, free margin ahead, positive direction, is x axis)
        let options = [
            (fixed.x_max() - lx - mover.x_min(), 1.0 - mover.x_max(), true, true),
            (fixed.x_min() + lx - mover.x_max(), mover.x_min(), false, true),
            (fixed.y_max() - ly - mover.y_min(), 1.0 - mover.y_max(), true, false),
            (fixed.y_min() + ly - mover.y_max(), mover.y_min(), false, false),
        ];
        let mut found: Vec<(f64, f64, bool, BBox)> = options
            .iter()
            .filter(|(d, _, positive, _)| if *positive { *d > 0.0 } else { *d < 0.0 })
            .filter_map(|&(d, free, positive, x_axis)| {
                let b = if x_axis {
                    mover.translated(d, 0.0)
                } else {
                    mover.translated(0.0, d)
                }?;
                (bbox_iou(fixed, &b) <= tau + EPS).then_some((d.abs(), free, positive, b))
            })
            .collect();
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(b.2.cmp(&a.2)));
        found.into_iter().map(|f| f.3).collect()
    }

    /// Lower-priority box of a pair: later iteration, then later position.
    fn mover_of(&self, i: usize, j: usize) -> (usize, usize) {
        let (a, b) = (&self.placed[i], &self.placed[j]);
        if a.iteration > b.iteration {
            (i, j)
        } else {
            (j, i)
        }
    }

    fn stage2_sweep(&mut self) -> bool {
        let mut changed = false;
        for v in self
            .violations(&self.placed)
            .into_iter()
            .filter(|v| v.kind == ViolationKind::OverlapExcess)
        {
            let (Some(i), Some(j)) = (self.index(&v.subjects[0]), self.index(&v.subjects[1])) else {
                continue;
            };
            if bbox_iou(&self.placed[i].bbox, &self.placed[j].bbox) <= self.cfg.max_iou + EPS {
                continue;
            }
            let (m, f) = self.mover_of(i, j);
            let mut done = false;
            for (mover, fixed) in [(m, f), (f, m)] {
                for b in self.overlap_moves(&self.placed[fixed].bbox, &self.placed[mover].bbox) {
                    if self.try_box(mover, b, &v, false) {
                        done = true;
                        break;
                    }
                }
                if done {
                    break;
                }
            }
            changed |= done;
        }
        let relations = self.cons.relations.clone();
        for r in relations.iter().filter(|r| r.kind.is_depth()) {
            let (Some(si), Some(oi)) = (self.index(&r.subject_id), self.index(&r.object_id)) else {
                continue;
            };
            if relation_holds(r.kind, r.margin, &self.placed[si], &self.placed[oi]) {
                continue;
            }
            let (zs, zo) = (self.placed[si].z_order, self.placed[oi].z_order);
            let mut cand = self.placed.clone();
            cand[si].z_order = zo;
            cand[oi].z_order = zs;
            if self.accept(cand, ViolationKind::OcclusionOrderConflict, &r.subject_id) {
                self.report.repairs_applied.push(Repair {
                    violation: Violation::new(
                        ViolationKind::OcclusionOrderConflict,
                        vec![r.subject_id.clone(), r.object_id.clone()],
                        0.0,
                        1.0,
                    )
                    .with_detail(format!("{} {} {}", r.subject_id, r.kind, r.object_id)),
                    edit: Edit::SwapZ {
                        a: r.subject_id.clone(),
                        b: r.object_id.clone(),
                        from: [zs, zo],
                        to: [zo, zs],
                    },
                });
                changed = true;
            }
        }
        for v in self
            .violations(&self.placed)
            .into_iter()
            .filter(|v| v.kind == ViolationKind::ScaleDrift)
        {
            let (Some(ei), Some(li)) = (self.index(&v.subjects[0]), self.index(&v.subjects[1])) else {
                continue;
            };
            let (earlier, later) = (self.placed[ei].bbox, self.placed[li].bbox);
            let ratio = self.cfg.max_drift_ratio;
            let target = if later.area() > earlier.area() {
                earlier.area() * ratio
            } else {
                earlier.area() / ratio
            };
            let s = (target / later.area()).sqrt();
            if let Some(b) = resized(&later, later.width() * s, later.height() * s) {
                changed |= self.try_box(li, b, &v, true);
            }
        }
        changed
    }

    /// Runs the enabled stages until a pass changes nothing or the pass
    /// budget is spent.
    pub fn run(&mut self, stage1: bool, stage2: bool) {
        let mut before: Vec<Violation> = self
            .invalid_raw
            .iter()
            .map(|(id, raw)| Violation::new(ViolationKind::OutOfBounds, vec![id.clone()], overflow(raw), 0.0))
            .collect();
        before.extend(self.violations(&self.placed));
        let clean = before.is_empty();
        self.report.violations_before = before;
        if clean {
            return;
        }
        if stage1 {
            self.clamps();
        }
        for pass in 1..=self.cfg.max_passes {
            let mut changed = false;
            if stage1 {
                changed |= self.shape_sweep();
                changed |= self.relation_sweep();
            }
            if stage2 {
                changed |= self.stage2_sweep();
            }
            self.report.passes_used = pass;
            if !changed {
                break;
            }
        }
    }

    pub fn finish(mut self) -> (LayoutSet, CheckReport) {
        self.report.violations_after = self.violations(&self.placed);
        self.report.accepted_with_warnings = !self.report.violations_after.is_empty();
        let layout = LayoutSet::with_aspect(self.placed, self.aspect).expect("checker keeps ids and z_orders unique");
        (layout, self.report)
    }
}
