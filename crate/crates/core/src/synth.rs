//! Seeded synthetic scenes: a class hierarchy, sparsely verified ground
//! truth and per-model detections whose true/false-positive status is known
//! by construction.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotations::{
    CooccurrencePair, CooccurrenceTable, Detection, GroundTruthBox, Verifications,
};
use crate::ensemble::ModelRun;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig};
use crate::geometry::BBox;
use crate::hierarchy::{ClassHierarchy, ClassId};

/// How a simulated model behaves.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub name: String,
    /// Probability that a ground truth box yields a detection.
    pub recall: f64,
    /// Maximum relative jitter applied to box edges.
    pub jitter: f64,
    /// Expected number of false positives per image.
    pub false_positives_per_image: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_images: usize,
    pub num_classes: usize,
    /// Number of levels in the class forest; 1 gives a flat class list.
    pub hierarchy_depth: usize,
    /// Probability that a class without ground truth in an image is left
    /// unverified there.
    pub sparsity: f64,
    pub max_boxes_per_image: usize,
    /// Class `i` is drawn with probability proportional to `(i + 1)^-skew`;
    /// 0 gives uniform classes, larger values make high indices rare.
    pub class_skew: f64,
    /// Number of (subject, part) pairs to plant.
    pub num_pairs: usize,
    /// Probability that a subject box gets a part box placed inside it.
    pub part_probability: f64,
    pub models: Vec<ModelProfile>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_images: 50,
            num_classes: 8,
            hierarchy_depth: 2,
            sparsity: 0.5,
            max_boxes_per_image: 4,
            class_skew: 0.0,
            num_pairs: 0,
            part_probability: 0.7,
            models: vec![
                ModelProfile {
                    name: "model_a".into(),
                    recall: 0.85,
                    jitter: 0.05,
                    false_positives_per_image: 1.0,
                },
                ModelProfile {
                    name: "model_b".into(),
                    recall: 0.7,
                    jitter: 0.1,
                    false_positives_per_image: 2.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub name: String,
    pub detections: Vec<Detection>,
    /// For each detection, the index into `SyntheticScene::gts` it was derived
    /// from; `None` for planted false positives.
    pub origins: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub hierarchy: ClassHierarchy,
    pub gts: Vec<GroundTruthBox>,
    pub verifications: Verifications,
    pub pairs: CooccurrenceTable,
    pub models: Vec<SyntheticModel>,
}

impl SyntheticScene {
    pub fn image_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.gts.iter().map(|g| g.image_id.clone()).collect();
        ids.extend(self.verifications.image_ids().into_iter().map(str::to_string));
        ids.sort();
        ids.dedup();
        ids
    }

    /// Evaluates each model on the scene and wraps it as a full-class run
    /// whose validation scores are its own per-class AP.
    pub fn model_runs(&self, config: &EvalConfig) -> Result<Vec<ModelRun>> {
        self.models
            .iter()
            .map(|m| {
                let report = evaluate(&m.detections, &self.gts, &self.verifications, &self.hierarchy, config)?;
                let scores = validation_scores(&report, &self.hierarchy);
                ModelRun::new(m.name.clone(), m.detections.clone(), scores, None)
            })
            .collect()
    }
}

/// Per-class AP as validation scores; classes with undefined AP score 0.
pub fn validation_scores(
    report: &crate::evaluation::EvalReport,
    hierarchy: &ClassHierarchy,
) -> HashMap<ClassId, f64> {
    hierarchy
        .ids()
        .map(|c| (c, report.ap(c).unwrap_or(0.0)))
        .collect()
}

pub fn class_name(i: usize) -> String {
    format!("c{i:03}")
}

fn check(config: &SynthConfig) -> Result<()> {
    if config.num_images == 0 || config.num_classes == 0 || config.hierarchy_depth == 0 {
        return Err(Error::Domain(
            "num_images, num_classes and hierarchy_depth must be positive".into(),
        ));
    }
    if config.hierarchy_depth > config.num_classes {
        return Err(Error::Domain(
            "hierarchy_depth cannot exceed num_classes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.sparsity) {
        return Err(Error::Domain(format!(
            "sparsity must lie in [0, 1], got {}",
            config.sparsity
        )));
    }
    if !(config.class_skew >= 0.0 && config.class_skew.is_finite()) {
        return Err(Error::Domain("class_skew must be finite and non-negative".into()));
    }
    if config.max_boxes_per_image == 0 {
        return Err(Error::Domain("max_boxes_per_image must be positive".into()));
    }
    for m in &config.models {
        if !(0.0..=1.0).contains(&m.recall) || m.jitter < 0.0 || m.false_positives_per_image < 0.0 {
            return Err(Error::Domain(format!("invalid model profile `{}`", m.name)));
        }
    }
    Ok(())
}

fn random_forest(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> Result<ClassHierarchy> {
    // Level l holds classes [start(l), start(l+1)); every level is non-empty.
    let start = |l: usize| l * n / depth;
    let mut edges = Vec::new();
    for l in 1..depth {
        let parents = start(l - 1)..start(l);
        for c in start(l)..start(l + 1) {
            let p = rng.random_range(parents.clone());
            edges.push((class_name(c), class_name(p)));
        }
    }
    ClassHierarchy::build((0..n).map(class_name), edges)
}

fn random_box(rng: &mut ChaCha8Rng, min_side: f64, max_side: f64) -> BBox {
    let w = rng.random_range(min_side..=max_side);
    let h = rng.random_range(min_side..=max_side);
    let x = rng.random_range(0.0..=1.0 - w);
    let y = rng.random_range(0.0..=1.0 - h);
    BBox {
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

fn box_inside(rng: &mut ChaCha8Rng, outer: &BBox) -> BBox {
    let w = outer.width() * rng.random_range(0.2..=0.4);
    let h = outer.height() * rng.random_range(0.2..=0.4);
    let x = outer.x_min + rng.random_range(0.0..=outer.width() - w);
    let y = outer.y_min + rng.random_range(0.0..=outer.height() - h);
    BBox {
        x_min: x,
        y_min: y,
        x_max: (x + w).min(outer.x_max),
        y_max: (y + h).min(outer.y_max),
    }
}

fn jittered(rng: &mut ChaCha8Rng, b: &BBox, jitter: f64) -> BBox {
    let (w, h) = (b.width(), b.height());
    let mut d = |s: f64| if jitter > 0.0 { rng.random_range(-jitter..=jitter) * s } else { 0.0 };
    let x0 = b.x_min + d(w);
    let x1 = b.x_max + d(w);
    let y0 = b.y_min + d(h);
    let y1 = b.y_max + d(h);
    BBox {
        x_min: x0.min(x1),
        x_max: x0.max(x1),
        y_min: y0.min(y1),
        y_max: y0.max(y1),
    }
}

/// Poisson-ish count with the given mean, built from Bernoulli trials so the
/// draw sequence stays simple.
fn count_with_mean(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let trials = (mean * 2.0).ceil() as usize;
    if trials == 0 {
        return 0;
    }
    let p = mean / trials as f64;
    (0..trials).filter(|_| rng.random_bool(p.min(1.0))).count()
}

pub fn image_name(i: usize) -> String {
    format!("img{i:05}")
}

/// Generates a reproducible scene. Classes with a ground truth box in an
/// image, and their ancestors, are always verified positive there.
pub fn generate_synthetic_scene(config: &SynthConfig) -> Result<SyntheticScene> {
    check(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hierarchy = random_forest(&mut rng, config.num_classes, config.hierarchy_depth)?;
    let n = hierarchy.len();

    let mut pairs = CooccurrenceTable::default();
    if n >= 2 {
        let mut attempts = 0;
        while pairs.len() < config.num_pairs && attempts < 100 * config.num_pairs.max(1) {
            attempts += 1;
            let s = ClassId(rng.random_range(0..n as u32));
            let p = ClassId(rng.random_range(0..n as u32));
            if s == p || hierarchy.is_ancestor(s, p) || hierarchy.is_ancestor(p, s) {
                continue;
            }
            // Keep each class in one role so parts never spawn parts.
            let roles_ok = pairs
                .pairs()
                .iter()
                .all(|q| q.part != s && q.subject != p);
            if roles_ok {
                pairs.insert(CooccurrencePair::new(s, p)?);
            }
        }
    }

    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += ((i + 1) as f64).powf(-config.class_skew);
        cumulative.push(acc);
    }
    let draw_class = |rng: &mut ChaCha8Rng| {
        let u = rng.random::<f64>() * acc;
        ClassId(cumulative.partition_point(|&c| c <= u).min(n - 1) as u32)
    };

    let mut gts = Vec::new();
    let mut verifications = Verifications::new();
    for i in 0..config.num_images {
        let image_id = image_name(i);
        let k = rng.random_range(1..=config.max_boxes_per_image);
        let first = gts.len();
        for _ in 0..k {
            let class = draw_class(&mut rng);
            let bbox = random_box(&mut rng, 0.1, 0.5);
            gts.push(GroundTruthBox {
                image_id: image_id.clone(),
                class,
                bbox,
                is_group_of: false,
            });
            for &part in pairs.parts(class) {
                if rng.random_bool(config.part_probability) {
                    gts.push(GroundTruthBox {
                        image_id: image_id.clone(),
                        class: part,
                        bbox: box_inside(&mut rng, &bbox),
                        is_group_of: false,
                    });
                }
            }
        }
        let present = hierarchy.expand_labels(gts[first..].iter().map(|g| g.class))?;
        let entry = verifications.entry(&image_id);
        for c in hierarchy.ids() {
            if present.contains(&c) {
                entry.insert(c, true);
            } else if rng.random::<f64>() >= config.sparsity {
                entry.insert(c, false);
            }
        }
    }

    let mut models = Vec::new();
    for profile in &config.models {
        let mut detections = Vec::new();
        let mut origins = Vec::new();
        for (gi, g) in gts.iter().enumerate() {
            if rng.random_bool(profile.recall) {
                let score = rng.random_range(0.4..=1.0);
                detections.push(Detection::new(
                    g.image_id.clone(),
                    g.class,
                    score,
                    jittered(&mut rng, &g.bbox, profile.jitter),
                ));
                origins.push(Some(gi));
            }
        }
        for i in 0..config.num_images {
            for _ in 0..count_with_mean(&mut rng, profile.false_positives_per_image) {
                let class = ClassId(rng.random_range(0..n as u32));
                let score = rng.random_range(0.0..=0.7);
                detections.push(Detection::new(
                    image_name(i),
                    class,
                    score,
                    random_box(&mut rng, 0.05, 0.3),
                ));
                origins.push(None);
            }
        }
        models.push(SyntheticModel {
            name: profile.name.clone(),
            detections,
            origins,
        });
    }

    Ok(SyntheticScene {
        hierarchy,
        gts,
        verifications,
        pairs,
        models,
    })
}

/// A full model that is strong on common classes and blind on rare ones,
/// plus an expert restricted to the rare classes.
#[derive(Debug, Clone)]
pub struct ComplementaryScenario {
    pub scene: SyntheticScene,
    pub rare_classes: BTreeSet<ClassId>,
    pub full: ModelRun,
    pub expert: ModelRun,
}

/// Builds the complementary-experts scenario on a flat 8-class scene with
/// skewed class frequencies. The two rarest-by-construction classes form the
/// expert's subset.
pub fn complementary_experts_scenario(seed: u64) -> Result<ComplementaryScenario> {
    let config = SynthConfig {
        seed,
        num_images: 40,
        num_classes: 8,
        hierarchy_depth: 1,
        sparsity: 0.3,
        max_boxes_per_image: 3,
        class_skew: 1.5,
        num_pairs: 0,
        part_probability: 0.0,
        models: Vec::new(),
    };
    let mut scene = generate_synthetic_scene(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_e4be);
    let rare: BTreeSet<ClassId> = [ClassId(6), ClassId(7)].into();

    let mut full_dets = Vec::new();
    let mut full_origins = Vec::new();
    let mut expert_dets = Vec::new();
    let mut expert_origins = Vec::new();
    for (gi, g) in scene.gts.iter().enumerate() {
        if rare.contains(&g.class) {
            if rng.random_bool(0.9) {
                let score = rng.random_range(0.5..=1.0);
                expert_dets.push(Detection::new(
                    g.image_id.clone(),
                    g.class,
                    score,
                    jittered(&mut rng, &g.bbox, 0.03),
                ));
                expert_origins.push(Some(gi));
            }
            // The full model only produces low-confidence misses for rare classes.
            let score = rng.random_range(0.0..=0.3);
            full_dets.push(Detection::new(
                g.image_id.clone(),
                g.class,
                score,
                random_box(&mut rng, 0.05, 0.3),
            ));
            full_origins.push(None);
        } else if rng.random_bool(0.9) {
            let score = rng.random_range(0.4..=1.0);
            full_dets.push(Detection::new(
                g.image_id.clone(),
                g.class,
                score,
                jittered(&mut rng, &g.bbox, 0.05),
            ));
            full_origins.push(Some(gi));
        }
    }
    scene.models = vec![
        SyntheticModel {
            name: "full".into(),
            detections: full_dets,
            origins: full_origins,
        },
        SyntheticModel {
            name: "expert".into(),
            detections: expert_dets,
            origins: expert_origins,
        },
    ];

    let eval_config = EvalConfig::default();
    let full_report = evaluate(
        &scene.models[0].detections,
        &scene.gts,
        &scene.verifications,
        &scene.hierarchy,
        &eval_config,
    )?;
    let expert_report = evaluate(
        &scene.models[1].detections,
        &scene.gts,
        &scene.verifications,
        &scene.hierarchy,
        &eval_config,
    )?;
    let full = ModelRun::new(
        "full",
        scene.models[0].detections.clone(),
        validation_scores(&full_report, &scene.hierarchy),
        None,
    )?;
    let expert_scores = validation_scores(&expert_report, &scene.hierarchy)
        .into_iter()
        .filter(|(c, _)| rare.contains(c))
        .collect();
    let expert = ModelRun::new(
        "expert",
        scene.models[1].detections.clone(),
        expert_scores,
        Some(rare.clone()),
    )?;
    Ok(ComplementaryScenario {
        scene,
        rare_classes: rare,
        full,
        expert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            seed: 7,
            num_pairs: 2,
            ..Default::default()
        };
        let a = generate_synthetic_scene(&cfg).unwrap();
        let b = generate_synthetic_scene(&cfg).unwrap();
        assert_eq!(a.gts, b.gts);
        assert_eq!(a.verifications, b.verifications);
        assert_eq!(a.models, b.models);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.hierarchy.names(), b.hierarchy.names());
        let c = generate_synthetic_scene(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.gts, c.gts);
    }

    #[test]
    fn zero_sparsity_verifies_everything() {
        let cfg = SynthConfig {
            sparsity: 0.0,
            ..Default::default()
        };
        let s = generate_synthetic_scene(&cfg).unwrap();
        for i in 0..cfg.num_images {
            for c in s.hierarchy.ids() {
                assert!(s.verifications.is_verified(&image_name(i), c));
            }
        }
    }

    #[test]
    fn full_sparsity_still_verifies_present_classes() {
        let cfg = SynthConfig {
            sparsity: 1.0,
            hierarchy_depth: 3,
            ..Default::default()
        };
        let s = generate_synthetic_scene(&cfg).unwrap();
        for g in &s.gts {
            let v = s.verifications.get(&g.image_id);
            assert!(v.verified_positive.contains(&g.class));
            for a in s.hierarchy.ancestors(g.class).unwrap() {
                assert!(v.verified_positive.contains(a));
            }
            assert!(v.verified_negative.is_empty());
        }
    }

    #[test]
    fn hierarchy_depth_is_respected() {
        let cfg = SynthConfig {
            num_classes: 9,
            hierarchy_depth: 3,
            ..Default::default()
        };
        let s = generate_synthetic_scene(&cfg).unwrap();
        let max_depth = s
            .hierarchy
            .ids()
            .map(|c| s.hierarchy.ancestors(c).unwrap().len())
            .max()
            .unwrap();
        assert_eq!(max_depth, 2);
    }

    #[test]
    fn origins_point_at_matching_ground_truth() {
        let s = generate_synthetic_scene(&SynthConfig::default()).unwrap();
        for m in &s.models {
            assert_eq!(m.detections.len(), m.origins.len());
            for (d, o) in m.detections.iter().zip(&m.origins) {
                assert!(d.bbox.is_valid());
                assert!((0.0..=1.0).contains(&d.score));
                if let Some(gi) = o {
                    assert_eq!(s.gts[*gi].class, d.class);
                    assert_eq!(s.gts[*gi].image_id, d.image_id);
                }
            }
        }
    }

    #[test]
    fn planted_parts_sit_inside_subjects() {
        let cfg = SynthConfig {
            num_pairs: 3,
            num_classes: 10,
            hierarchy_depth: 1,
            ..Default::default()
        };
        let s = generate_synthetic_scene(&cfg).unwrap();
        assert_eq!(s.pairs.len(), 3);
        let parts: BTreeSet<ClassId> = s.pairs.pairs().iter().map(|p| p.part).collect();
        assert!(s.gts.iter().any(|g| parts.contains(&g.class)));
    }

    #[test]
    fn rejects_bad_parameters() {
        for cfg in [
            SynthConfig { num_images: 0, ..Default::default() },
            SynthConfig { sparsity: 1.5, ..Default::default() },
            SynthConfig { hierarchy_depth: 0, ..Default::default() },
            SynthConfig { num_classes: 2, hierarchy_depth: 3, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic_scene(&cfg), Err(Error::Domain(_))));
        }
    }
}
