//! Brute-force references and random scene builders shared by the
//! integration tests and the acceptance runner.
//!
//! Every reference here is written directly from the rule it checks, with
//! no shared code paths beyond `iou`/`containment_fraction`.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use sparsedet::annotations::{CooccurrencePair, CooccurrenceTable, Verifications};
use sparsedet::{
    containment_fraction, iou, AssignmentConfig, BBox, ClassHierarchy, ClassId, Detection,
    EvalConfig, GroundTruthBox, ImageVerification, Provenance, SupervisionState,
    UnverifiedPolicy,
};

// ---------------------------------------------------------------- random

/// A box on a coarse grid so that overlaps, ties and exact thresholds show up.
pub fn grid_box(rng: &mut impl Rng, extent: u32) -> BBox {
    loop {
        let x0 = rng.random_range(0..extent) as f64;
        let y0 = rng.random_range(0..extent) as f64;
        let w = rng.random_range(1..=extent / 2 + 1) as f64;
        let h = rng.random_range(1..=extent / 2 + 1) as f64;
        if let Ok(b) = BBox::new(x0, y0, x0 + w, y0 + h) {
            return b;
        }
    }
}

/// A continuous box inside `[0, extent]^2`.
pub fn float_box(rng: &mut impl Rng, extent: f64) -> BBox {
    let x0 = rng.random::<f64>() * extent * 0.8;
    let y0 = rng.random::<f64>() * extent * 0.8;
    let w = 0.05 * extent + rng.random::<f64>() * extent * 0.4;
    let h = 0.05 * extent + rng.random::<f64>() * extent * 0.4;
    BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

/// Scores with frequent exact ties.
pub fn tied_score(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        rng.random_range(1..=5) as f64 / 5.0
    } else {
        rng.random::<f64>()
    }
}

/// A random DAG over `n` classes; each class may take up to two earlier
/// classes as parents.
pub fn random_hierarchy(rng: &mut impl Rng, n: usize) -> ClassHierarchy {
    let names: Vec<String> = (0..n).map(|i| format!("k{i}")).collect();
    let mut edges = Vec::new();
    for child in 1..n {
        for _ in 0..rng.random_range(0..=2) {
            let parent = rng.random_range(0..child);
            edges.push((names[child].clone(), names[parent].clone()));
        }
    }
    ClassHierarchy::build(names.clone(), edges).unwrap()
}

pub fn random_pairs(rng: &mut impl Rng, n: usize, count: usize) -> CooccurrenceTable {
    let mut table = CooccurrenceTable::default();
    if n < 2 {
        return table;
    }
    for _ in 0..count {
        let s = rng.random_range(0..n as u32);
        let p = rng.random_range(0..n as u32);
        if let Ok(pair) = CooccurrencePair::new(ClassId(s), ClassId(p)) {
            table.insert(pair);
        }
    }
    table
}

/// Random verification for one image; classes in `present` are verified
/// positive, others are verified negative or left unverified.
pub fn random_verification(
    rng: &mut impl Rng,
    n: usize,
    present: &BTreeSet<ClassId>,
) -> ImageVerification {
    let mut v = ImageVerification::default();
    for c in (0..n as u32).map(ClassId) {
        if present.contains(&c) {
            if rng.random_bool(0.8) {
                v.insert(c, true);
            }
        } else if rng.random_bool(0.5) {
            v.insert(c, false);
        }
    }
    v
}

pub struct AssignScene {
    pub hierarchy: ClassHierarchy,
    pub proposals: Vec<BBox>,
    pub gts: Vec<GroundTruthBox>,
    pub verification: ImageVerification,
    pub pairs: CooccurrenceTable,
    pub config: AssignmentConfig,
}

/// ≤5 gts, ≤10 proposals, ≤8 classes.
pub fn random_assign_scene(rng: &mut impl Rng) -> AssignScene {
    let n = rng.random_range(1..=8);
    let hierarchy = random_hierarchy(rng, n);
    let gts: Vec<GroundTruthBox> = (0..rng.random_range(0..=5))
        .map(|_| GroundTruthBox {
            image_id: "img".into(),
            class: ClassId(rng.random_range(0..n as u32)),
            bbox: grid_box(rng, 8),
            is_group_of: false,
        })
        .collect();
    let mut proposals: Vec<BBox> = (0..rng.random_range(1..=10))
        .map(|_| grid_box(rng, 8))
        .collect();
    // Make sure some proposals sit inside or on top of gts.
    for g in &gts {
        if rng.random_bool(0.5) {
            proposals.push(g.bbox);
        }
    }
    proposals.truncate(10);
    let present: BTreeSet<ClassId> = gts.iter().map(|g| g.class).collect();
    let verification = random_verification(rng, n, &present);
    let count = rng.random_range(0..=4);
    let pairs = random_pairs(rng, n, count);
    let config = AssignmentConfig {
        pos_iou_threshold: [0.3, 0.5, 0.7][rng.random_range(0..3)],
        containment_threshold: [0.5, 0.9, 1.0][rng.random_range(0..3)],
        unverified_policy: if rng.random_bool(0.5) {
            UnverifiedPolicy::Negative
        } else {
            UnverifiedPolicy::Ignore
        },
    };
    AssignScene {
        hierarchy,
        proposals,
        gts,
        verification,
        pairs,
        config,
    }
}

pub struct EvalScene {
    pub hierarchy: ClassHierarchy,
    pub gts: Vec<GroundTruthBox>,
    pub dets: Vec<Detection>,
    pub verifications: Verifications,
    pub config: EvalConfig,
}

/// ≤5 images, ≤4 classes, ≤8 boxes per image.
pub fn random_eval_scene(rng: &mut impl Rng) -> EvalScene {
    let n = rng.random_range(1..=4);
    let hierarchy = random_hierarchy(rng, n);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    let mut verifications = Verifications::new();
    for img in 0..rng.random_range(1..=5) {
        let image_id = format!("im{img}");
        let mut present = BTreeSet::new();
        for _ in 0..rng.random_range(0..=4) {
            let class = ClassId(rng.random_range(0..n as u32));
            present.insert(class);
            gts.push(GroundTruthBox {
                image_id: image_id.clone(),
                class,
                bbox: grid_box(rng, 10),
                is_group_of: rng.random_bool(0.2),
            });
        }
        let img_gts: Vec<BBox> = gts
            .iter()
            .filter(|g| g.image_id == image_id)
            .map(|g| g.bbox)
            .collect();
        for _ in 0..rng.random_range(0..=8) {
            let bbox = if !img_gts.is_empty() && rng.random_bool(0.6) {
                let b = img_gts[rng.random_range(0..img_gts.len())];
                b.translate(rng.random_range(-1..=1) as f64, rng.random_range(-1..=1) as f64)
            } else {
                grid_box(rng, 10)
            };
            dets.push(Detection::new(
                image_id.clone(),
                ClassId(rng.random_range(0..n as u32)),
                tied_score(rng),
                bbox,
            ));
        }
        // Ancestors of present classes are present too.
        let closure = dfs_closure(&hierarchy);
        let mut expanded = present.clone();
        for c in &present {
            expanded.extend(closure.ancestors[c.index()].iter().copied());
        }
        *verifications.entry(&image_id) = random_verification(rng, n, &expanded);
    }
    let config = EvalConfig {
        iou_threshold: [0.3, 0.5, 0.7][rng.random_range(0..3)],
        expand_gt: rng.random_bool(0.7),
        expand_detections: rng.random_bool(0.3),
        ignore_group_of: rng.random_bool(0.5),
    };
    EvalScene {
        hierarchy,
        gts,
        dets,
        verifications,
        config,
    }
}

pub fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

// ------------------------------------------------------------- hierarchy

pub struct Closure {
    pub ancestors: Vec<BTreeSet<ClassId>>,
    pub descendants: Vec<BTreeSet<ClassId>>,
}

/// Ancestor/descendant sets by depth-first search from each class.
pub fn dfs_closure(h: &ClassHierarchy) -> Closure {
    let n = h.len();
    let parents: Vec<Vec<ClassId>> = (0..n as u32)
        .map(|c| h.parents(ClassId(c)).unwrap().to_vec())
        .collect();
    let mut ancestors = vec![BTreeSet::new(); n];
    for (c, set) in ancestors.iter_mut().enumerate() {
        let mut stack = parents[c].clone();
        while let Some(p) = stack.pop() {
            if set.insert(p) {
                stack.extend(parents[p.index()].iter().copied());
            }
        }
    }
    let mut descendants = vec![BTreeSet::new(); n];
    for (c, anc) in ancestors.iter().enumerate() {
        for a in anc {
            descendants[a.index()].insert(ClassId(c as u32));
        }
    }
    Closure {
        ancestors,
        descendants,
    }
}

// ----------------------------------------------------------- suppression

fn rank_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Insertion sort: stable, and obviously so.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && dets[order[j]].score > dets[order[j - 1]].score {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    order
}

/// The NMS keep-set found by exhaustive search: the unique subset `S` where
/// every member has no higher-ranked member overlapping it, and every
/// non-member overlaps some higher-ranked member. Returned in rank order.
pub fn nms_reference(dets: &[Detection], thr: f64) -> Vec<usize> {
    let n = dets.len();
    assert!(n <= 12, "exhaustive reference is exponential");
    let order = rank_order(dets);
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let overlaps = |a: usize, b: usize| iou(&dets[a].bbox, &dets[b].bbox) > thr;
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let covered = (0..n).any(|j| inside(j) && rank[j] < rank[i] && overlaps(i, j));
            inside(i) != covered
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "keep-set must be unique");
    let mask = found[0];
    order.into_iter().filter(|&i| mask & (1 << i) != 0).collect()
}

/// NMW boxes computed directly: each non-kept detection joins the
/// highest-ranked kept detection it overlaps; the output box is the plain
/// weighted mean with weights score (head) and score*IoU(member, head).
pub fn nmw_reference(dets: &[Detection], thr: f64) -> Vec<(usize, [f64; 4])> {
    let kept = nms_reference(dets, thr);
    let order = rank_order(dets);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); kept.len()];
    for &i in &order {
        if kept.contains(&i) {
            continue;
        }
        let pos_i = order.iter().position(|&x| x == i).unwrap();
        let head = kept
            .iter()
            .position(|&h| {
                order.iter().position(|&x| x == h).unwrap() < pos_i
                    && iou(&dets[h].bbox, &dets[i].bbox) > thr
            })
            .expect("suppressed detection has a head");
        members[head].push(i);
    }
    kept.iter()
        .zip(&members)
        .map(|(&h, ms)| {
            let hb = dets[h].bbox.as_array();
            let mut num = hb.map(|x| dets[h].score * x);
            let mut den = dets[h].score;
            for &m in ms {
                let w = dets[m].score * iou(&dets[m].bbox, &dets[h].bbox);
                let mb = dets[m].bbox.as_array();
                for k in 0..4 {
                    num[k] += w * mb[k];
                }
                den += w;
            }
            (h, num.map(|x| x / den))
        })
        .collect()
}

// ------------------------------------------------------------ assignment

pub fn assignment_reference(
    scene: &AssignScene,
    pairs: &CooccurrenceTable,
) -> Vec<Vec<(SupervisionState, Provenance)>> {
    let closure = dfs_closure(&scene.hierarchy);
    let cfg = &scene.config;
    scene
        .proposals
        .iter()
        .map(|p| {
            let matched: Vec<&GroundTruthBox> = scene
                .gts
                .iter()
                .filter(|g| iou(p, &g.bbox) >= cfg.pos_iou_threshold)
                .collect();
            (0..scene.hierarchy.len() as u32)
                .map(ClassId)
                .map(|c| {
                    if matched.iter().any(|g| g.class == c) {
                        return (SupervisionState::Positive, Provenance::Matched);
                    }
                    if matched
                        .iter()
                        .any(|g| closure.ancestors[g.class.index()].contains(&c))
                    {
                        return (SupervisionState::Positive, Provenance::AncestorOfMatch);
                    }
                    if matched
                        .iter()
                        .any(|g| closure.descendants[g.class.index()].contains(&c))
                    {
                        return (SupervisionState::Ignore, Provenance::DescendantSkip);
                    }
                    if scene.gts.iter().any(|g| {
                        pairs.pairs().iter().any(|pr| pr.subject == g.class && pr.part == c)
                            && containment_fraction(p, &g.bbox) >= cfg.containment_threshold
                    }) {
                        return (SupervisionState::Ignore, Provenance::CooccurrenceIgnore);
                    }
                    let verified = scene.verification.verified_positive.contains(&c)
                        || scene.verification.verified_negative.contains(&c);
                    if !verified && cfg.unverified_policy == UnverifiedPolicy::Ignore {
                        return (SupervisionState::Ignore, Provenance::UnverifiedPolicy);
                    }
                    (SupervisionState::Negative, Provenance::Default)
                })
                .collect()
        })
        .collect()
}

/// Conventional assignment: expanded positives, descendant skip, and
/// negatives everywhere else.
pub fn baseline_reference(scene: &AssignScene) -> Vec<Vec<(SupervisionState, Provenance)>> {
    let closure = dfs_closure(&scene.hierarchy);
    scene
        .proposals
        .iter()
        .map(|p| {
            (0..scene.hierarchy.len() as u32)
                .map(ClassId)
                .map(|c| {
                    let mut state = (SupervisionState::Negative, Provenance::Default);
                    for g in &scene.gts {
                        if iou(p, &g.bbox) < scene.config.pos_iou_threshold {
                            continue;
                        }
                        if g.class == c {
                            return (SupervisionState::Positive, Provenance::Matched);
                        }
                        if closure.ancestors[g.class.index()].contains(&c) {
                            state = (SupervisionState::Positive, Provenance::AncestorOfMatch);
                        } else if closure.descendants[g.class.index()].contains(&c)
                            && state.0 != SupervisionState::Positive
                        {
                            state = (SupervisionState::Ignore, Provenance::DescendantSkip);
                        }
                    }
                    state
                })
                .collect()
        })
        .collect()
}

// ------------------------------------------------------------ evaluation

#[derive(Debug, Clone, PartialEq)]
pub struct RefClass {
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
}

/// Per-class AP by direct enumeration: every detection is compared with
/// every ground truth box; AP is the sum over true positives of the best
/// precision at or after that rank, divided by the number of gts.
pub fn evaluate_reference(scene: &EvalScene) -> (Option<f64>, Vec<RefClass>) {
    let h = &scene.hierarchy;
    let cfg = &scene.config;
    let closure = dfs_closure(h);
    let carries = |own: ClassId, c: ClassId, expand: bool| {
        own == c || (expand && closure.ancestors[own.index()].contains(&c))
    };
    let mut classes = Vec::new();
    for c in (0..h.len() as u32).map(ClassId) {
        let gts: Vec<&GroundTruthBox> = scene
            .gts
            .iter()
            .filter(|g| {
                carries(g.class, c, cfg.expand_gt) && scene.verifications.is_verified(&g.image_id, c)
            })
            .collect();
        let dets: Vec<&Detection> = scene
            .dets
            .iter()
            .filter(|d| {
                carries(d.class, c, cfg.expand_detections)
                    && scene.verifications.is_verified(&d.image_id, c)
            })
            .collect();
        let counted = |g: &GroundTruthBox| !(cfg.ignore_group_of && g.is_group_of);
        let num_gt = gts.iter().filter(|g| counted(g)).count();

        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
        let mut claimed = vec![false; gts.len()];
        let mut outcomes: Vec<bool> = Vec::new();
        for &i in &order {
            let d = dets[i];
            let mut best: Option<usize> = None;
            for (j, g) in gts.iter().enumerate() {
                if g.image_id != d.image_id || !counted(g) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => iou(&d.bbox, &g.bbox) > iou(&d.bbox, &gts[b].bbox),
                };
                if better {
                    best = Some(j);
                }
            }
            match best {
                Some(j) if iou(&d.bbox, &gts[j].bbox) >= cfg.iou_threshold => {
                    outcomes.push(!claimed[j]);
                    claimed[j] = true;
                }
                _ => {
                    let in_group = gts.iter().any(|g| {
                        g.image_id == d.image_id
                            && !counted(g)
                            && iou(&d.bbox, &g.bbox) >= cfg.iou_threshold
                    });
                    if !in_group {
                        outcomes.push(false);
                    }
                }
            }
        }
        let ap = (num_gt > 0).then(|| {
            let precision: Vec<f64> = (0..outcomes.len())
                .map(|k| {
                    outcomes[..=k].iter().filter(|t| **t).count() as f64 / (k + 1) as f64
                })
                .collect();
            let mut sum = 0.0;
            for k in 0..outcomes.len() {
                if outcomes[k] {
                    sum += precision[k..].iter().cloned().fold(0.0, f64::max);
                }
            }
            sum / num_gt as f64
        });
        classes.push(RefClass {
            ap,
            num_gt,
            num_det: dets.len(),
        });
    }
    let defined: Vec<f64> = classes.iter().filter_map(|r| r.ap).collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (mean, classes)
}

/// Compares an `evaluate` report with the reference within `tol`.
pub fn eval_matches(scene: &EvalScene, tol: f64) -> Result<(), String> {
    let report = sparsedet::evaluate(
        &scene.dets,
        &scene.gts,
        &scene.verifications,
        &scene.hierarchy,
        &scene.config,
    )
    .map_err(|e| e.to_string())?;
    let (mean, classes) = evaluate_reference(scene);
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    };
    for (got, want) in report.classes.iter().zip(&classes) {
        if got.num_gt != want.num_gt || got.num_det != want.num_det || !close(got.ap, want.ap) {
            return Err(format!("class {}: got {got:?}, want {want:?}", got.class));
        }
    }
    if !close(report.mean_ap, mean) {
        return Err(format!("mAP: got {:?}, want {mean:?}", report.mean_ap));
    }
    Ok(())
}
