//! Hierarchy-aware per-class AP over sparsely verified images.
//!
//! A class is only evaluated on images where it carries a verification label
//! (positive or negative). Detections on other images are dropped. Matching
//! follows the challenge convention: each detection, in descending score
//! order, is compared against the ground truth box it overlaps most; it is a
//! true positive if that overlap reaches the threshold and the box is still
//! unclaimed, otherwise a false positive. AP is the area under the
//! all-points interpolated precision/recall curve.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{Detection, GroundTruthBox, Verifications};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::hierarchy::{ClassHierarchy, ClassId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Count every ground truth box as a box of each of its ancestors too.
    pub expand_gt: bool,
    /// Count every detection as a detection of each of its ancestors too.
    pub expand_detections: bool,
    /// Drop group-of boxes; detections that only hit one are neither TP nor FP.
    pub ignore_group_of: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            expand_gt: true,
            expand_detections: false,
            ignore_group_of: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassApReport {
    pub class: ClassId,
    /// `None` when the class has no ground truth on its evaluated images.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
    pub evaluated_image_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean AP over classes with ground truth; `None` when there are none.
    pub mean_ap: Option<f64>,
    /// One entry per hierarchy class, in hierarchy order.
    pub classes: Vec<ClassApReport>,
}

impl EvalReport {
    pub fn class(&self, c: ClassId) -> Option<&ClassApReport> {
        self.classes.iter().find(|r| r.class == c)
    }

    pub fn ap(&self, c: ClassId) -> Option<f64> {
        self.class(c).and_then(|r| r.ap)
    }
}

/// All-points interpolated AP for detections already sorted by descending
/// score. `is_tp[i]` marks whether the i-th detection is a true positive.
/// Returns `None` when `num_gt == 0`.
pub fn average_precision(is_tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Default)]
struct ClassData<'a> {
    gts: HashMap<&'a str, Vec<&'a GroundTruthBox>>,
    dets: Vec<&'a Detection>,
}

fn labels_of(
    hierarchy: &ClassHierarchy,
    class: ClassId,
    expand: bool,
) -> Result<Vec<ClassId>> {
    if expand {
        let mut out = hierarchy.ancestors(class)?.to_vec();
        out.push(class);
        Ok(out)
    } else {
        hierarchy.ancestors(class)?;
        Ok(vec![class])
    }
}

pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    verifications: &Verifications,
    hierarchy: &ClassHierarchy,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if !(config.iou_threshold > 0.0 && config.iou_threshold < 1.0) {
        return Err(Error::Domain(format!(
            "iou_threshold must lie in (0, 1), got {}",
            config.iou_threshold
        )));
    }
    let mut per_class: Vec<ClassData<'_>> = (0..hierarchy.len()).map(|_| ClassData::default()).collect();
    for g in gts {
        for c in labels_of(hierarchy, g.class, config.expand_gt)? {
            if verifications.is_verified(&g.image_id, c) {
                per_class[c.index()]
                    .gts
                    .entry(g.image_id.as_str())
                    .or_default()
                    .push(g);
            }
        }
    }
    for d in dets {
        for c in labels_of(hierarchy, d.class, config.expand_detections)? {
            if verifications.is_verified(&d.image_id, c) {
                per_class[c.index()].dets.push(d);
            }
        }
    }

    // Evaluated image count per class.
    let mut evaluated = vec![0usize; hierarchy.len()];
    for image_id in verifications.image_ids() {
        let v = verifications.get(image_id);
        for c in v.verified_positive.iter().chain(&v.verified_negative) {
            if let Some(n) = evaluated.get_mut(c.index()) {
                *n += 1;
            }
        }
    }

    let classes: Vec<ClassApReport> = per_class
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let class = ClassId(i as u32);
            let (ap, num_gt) = class_ap(data, config);
            ClassApReport {
                class,
                ap,
                num_gt,
                num_det: data.dets.len(),
                evaluated_image_count: evaluated[i],
            }
        })
        .collect();

    let defined: Vec<f64> = classes.iter().filter_map(|r| r.ap).collect();
    let mean_ap = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalReport { mean_ap, classes })
}

fn class_ap(data: &ClassData<'_>, config: &EvalConfig) -> (Option<f64>, usize) {
    struct ImageGts {
        regular: Vec<BBox>,
        group_of: Vec<BBox>,
        claimed: Vec<bool>,
    }
    let mut images: HashMap<&str, ImageGts> = HashMap::new();
    let mut num_gt = 0;
    for (image_id, boxes) in &data.gts {
        let mut regular = Vec::new();
        let mut group_of = Vec::new();
        for g in boxes {
            if config.ignore_group_of && g.is_group_of {
                group_of.push(g.bbox);
            } else {
                regular.push(g.bbox);
            }
        }
        num_gt += regular.len();
        let claimed = vec![false; regular.len()];
        images.insert(
            image_id,
            ImageGts {
                regular,
                group_of,
                claimed,
            },
        );
    }

    let mut order: Vec<usize> = (0..data.dets.len()).collect();
    order.sort_by(|&a, &b| data.dets[b].score.total_cmp(&data.dets[a].score));

    let mut is_tp = Vec::with_capacity(order.len());
    for i in order {
        let d = data.dets[i];
        let Some(img) = images.get_mut(d.image_id.as_str()) else {
            is_tp.push(false);
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in img.regular.iter().enumerate() {
            let v = iou(&d.bbox, g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, v)) if v >= config.iou_threshold => {
                is_tp.push(!img.claimed[j]);
                img.claimed[j] = true;
            }
            _ => {
                let hits_group = img
                    .group_of
                    .iter()
                    .any(|g| iou(&d.bbox, g) >= config.iou_threshold);
                if !hits_group {
                    is_tp.push(false);
                }
            }
        }
    }
    (average_precision(&is_tp, num_gt), num_gt)
}

/// Classes ordered from rarest to most common; ties by class id.
pub fn rank_by_rarity(occurrence: &HashMap<ClassId, u64>) -> Vec<ClassId> {
    let mut ranked: Vec<(u64, ClassId)> = occurrence.iter().map(|(c, n)| (*n, *c)).collect();
    ranked.sort_unstable();
    ranked.into_iter().map(|(_, c)| c).collect()
}

pub(crate) fn check_rank_range(len: usize, lo: usize, hi: usize) -> Result<()> {
    if lo < 1 || lo > hi || hi > len {
        return Err(Error::Domain(format!(
            "rank range [{lo}, {hi}] is not within [1, {len}]"
        )));
    }
    Ok(())
}

/// Mean AP over classes whose rarity rank (1-based) lies in `[lo, hi]`.
/// Classes with undefined AP are skipped.
pub fn mean_over_rank_range(
    reports: &[ClassApReport],
    occurrence: &HashMap<ClassId, u64>,
    lo: usize,
    hi: usize,
) -> Result<f64> {
    let ranked = rank_by_rarity(occurrence);
    check_rank_range(ranked.len(), lo, hi)?;
    let by_class: HashMap<ClassId, Option<f64>> =
        reports.iter().map(|r| (r.class, r.ap)).collect();
    let aps: Vec<f64> = ranked[lo - 1..hi]
        .iter()
        .filter_map(|c| by_class.get(c).copied().flatten())
        .collect();
    if aps.is_empty() {
        return Err(Error::Domain(format!(
            "no class with a defined AP in rank range [{lo}, {hi}]"
        )));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Parses `lo-hi` rank ranges such as `11-100`.
pub fn parse_rank_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Domain(format!("rank range `{s}` is not of the form LO-HI"));
    let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(Error::Domain(format!("rank range `{s}` needs 1 <= LO <= HI")));
    }
    Ok((lo, hi))
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map(|v| format!("{v}")).unwrap_or_default()
}

/// `LabelName,AP,NumGT,NumDet`; AP is empty when undefined.
pub fn write_report_csv<W: Write>(
    writer: W,
    report: &EvalReport,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["LabelName", "AP", "NumGT", "NumDet"])?;
    for r in &report.classes {
        w.write_record([
            hierarchy.name(r.class).to_string(),
            fmt_ap(r.ap),
            r.num_gt.to_string(),
            r.num_det.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub fn summary_line(report: &EvalReport) -> String {
    match report.mean_ap {
        Some(v) => format!("mAP,{v}"),
        None => "mAP,".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRangeMean {
    pub lo: usize,
    pub hi: usize,
    pub mean_ap: f64,
}

pub fn rank_range_means(
    report: &EvalReport,
    occurrence: &HashMap<ClassId, u64>,
    ranges: &[(usize, usize)],
) -> Result<Vec<RankRangeMean>> {
    ranges
        .iter()
        .map(|&(lo, hi)| {
            Ok(RankRangeMean {
                lo,
                hi,
                mean_ap: mean_over_rank_range(&report.classes, occurrence, lo, hi)?,
            })
        })
        .collect()
}

pub fn write_rank_ranges_csv<W: Write>(writer: W, means: &[RankRangeMean]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Ranks", "MeanAP"])?;
    for m in means {
        w.write_record([format!("{}-{}", m.lo, m.hi), format!("{}", m.mean_ap)])?;
    }
    w.flush().map_err(|e| Error::io("<rank ranges>", e))?;
    Ok(())
}

/// Ground truth boxes of one image, keyed by image id. Handy for callers
/// that work image by image.
pub fn ground_truth_by_image(gts: &[GroundTruthBox]) -> BTreeMap<&str, Vec<&GroundTruthBox>> {
    let mut out: BTreeMap<&str, Vec<&GroundTruthBox>> = BTreeMap::new();
    for g in gts {
        out.entry(g.image_id.as_str()).or_default().push(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn setup() -> (ClassHierarchy, Verifications, Vec<GroundTruthBox>) {
        let h = ClassHierarchy::flat(["A"]).unwrap();
        let a = h.id("A").unwrap();
        let mut v = Verifications::new();
        v.entry("img").insert(a, true);
        let gts = vec![GroundTruthBox {
            image_id: "img".into(),
            class: a,
            bbox: bx(0.0, 0.0, 10.0, 10.0),
            is_group_of: false,
        }];
        (h, v, gts)
    }

    fn det(score: f64, bbox: BBox) -> Detection {
        Detection::new("img", ClassId(0), score, bbox)
    }

    #[test]
    fn hand_built_pr_curves() {
        let (h, v, gts) = setup();
        let cfg = EvalConfig::default();
        let exact = [det(0.3, bx(0.0, 0.0, 10.0, 10.0))];
        assert_eq!(evaluate(&exact, &gts, &v, &h, &cfg).unwrap().mean_ap, Some(1.0));

        assert_eq!(evaluate(&[], &gts, &v, &h, &cfg).unwrap().mean_ap, Some(0.0));

        // IoU 0.8 box and a disjoint box.
        let good = bx(0.0, 0.0, 10.0, 8.0);
        let far = bx(50.0, 50.0, 60.0, 60.0);
        let tp_first = [det(0.9, good), det(0.8, far)];
        assert_eq!(evaluate(&tp_first, &gts, &v, &h, &cfg).unwrap().mean_ap, Some(1.0));
        let fp_first = [det(0.8, good), det(0.9, far)];
        assert_eq!(evaluate(&fp_first, &gts, &v, &h, &cfg).unwrap().mean_ap, Some(0.5));
    }

    #[test]
    fn duplicate_match_is_false_positive() {
        let (h, v, gts) = setup();
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let r = evaluate(&[det(0.9, b), det(0.8, b)], &gts, &v, &h, &EvalConfig::default()).unwrap();
        assert_eq!(r.mean_ap, Some(1.0));
        let r = evaluate(
            &[det(0.9, bx(40.0, 40.0, 41.0, 41.0)), det(0.8, b), det(0.7, b)],
            &gts,
            &v,
            &h,
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.mean_ap, Some(0.5));
        assert_eq!(r.classes[0].num_det, 3);
    }

    #[test]
    fn unverified_images_are_skipped() {
        let (h, v, gts) = setup();
        let mut stray = det(0.99, bx(0.0, 0.0, 1.0, 1.0));
        stray.image_id = "other".into();
        let r = evaluate(&[stray, det(0.5, bx(0.0, 0.0, 10.0, 10.0))], &gts, &v, &h, &EvalConfig::default())
            .unwrap();
        assert_eq!(r.mean_ap, Some(1.0));
        assert_eq!(r.classes[0].num_det, 1);
        assert_eq!(r.classes[0].evaluated_image_count, 1);
    }

    #[test]
    fn gt_expansion_credits_ancestors() {
        let h = ClassHierarchy::build(["Vehicle", "Car"], [("Car", "Vehicle")]).unwrap();
        let vehicle = h.id("Vehicle").unwrap();
        let car = h.id("Car").unwrap();
        let mut v = Verifications::new();
        v.entry("img").insert(vehicle, true);
        v.entry("img").insert(car, true);
        let b = bx(0.0, 0.0, 5.0, 5.0);
        let gts = vec![GroundTruthBox {
            image_id: "img".into(),
            class: car,
            bbox: b,
            is_group_of: false,
        }];
        let dets = vec![Detection::new("img", car, 0.9, b)];

        let r = evaluate(&dets, &gts, &v, &h, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap(car), Some(1.0));
        assert_eq!(r.ap(vehicle), Some(0.0));
        assert_eq!(r.class(vehicle).unwrap().num_gt, 1);

        let cfg = EvalConfig {
            expand_detections: true,
            ..Default::default()
        };
        let r = evaluate(&dets, &gts, &v, &h, &cfg).unwrap();
        assert_eq!(r.mean_ap, Some(1.0));

        let cfg = EvalConfig {
            expand_gt: false,
            ..Default::default()
        };
        let r = evaluate(&dets, &gts, &v, &h, &cfg).unwrap();
        assert_eq!(r.ap(vehicle), None);
        assert_eq!(r.mean_ap, Some(1.0));
    }

    #[test]
    fn group_of_handling() {
        let (h, v, mut gts) = setup();
        gts[0].is_group_of = true;
        let dets = [det(0.9, bx(0.0, 0.0, 10.0, 10.0))];
        let r = evaluate(&dets, &gts, &v, &h, &EvalConfig::default()).unwrap();
        assert_eq!(r.mean_ap, Some(1.0));
        let cfg = EvalConfig {
            ignore_group_of: true,
            ..Default::default()
        };
        let r = evaluate(&dets, &gts, &v, &h, &cfg).unwrap();
        assert_eq!(r.mean_ap, None);
        assert_eq!(r.classes[0].num_gt, 0);
    }

    #[test]
    fn ap_helper() {
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[true, false, true], 2), Some(1.0 * 0.5 + (2.0 / 3.0) * 0.5));
    }

    #[test]
    fn rank_range_means() {
        let occurrence = HashMap::from([(ClassId(0), 5), (ClassId(1), 10), (ClassId(2), 20)]);
        let report = |c: u32, ap: f64| ClassApReport {
            class: ClassId(c),
            ap: Some(ap),
            num_gt: 1,
            num_det: 1,
            evaluated_image_count: 1,
        };
        let reports = [report(0, 0.2), report(1, 0.4), report(2, 0.9)];
        let m = mean_over_rank_range(&reports, &occurrence, 1, 2).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
        assert_eq!(mean_over_rank_range(&reports, &occurrence, 3, 3).unwrap(), 0.9);
        let all = mean_over_rank_range(&reports, &occurrence, 1, 3).unwrap();
        assert!((all - 1.5 / 3.0).abs() < 1e-15);
        assert!(mean_over_rank_range(&reports, &occurrence, 0, 2).is_err());
        assert!(mean_over_rank_range(&reports, &occurrence, 2, 4).is_err());
        assert_eq!(parse_rank_range("11-100").unwrap(), (11, 100));
        assert!(parse_rank_range("11").is_err());
    }
}
