//! Duplicate suppression: greedy NMS and non-maximum weighted (NMW) merging.
//!
//! Both methods walk detections in descending score order (ties keep input
//! order). A detection is suppressed by the current head when their IoU is
//! strictly greater than the threshold. NMS keeps the head unchanged; NMW
//! replaces it with the weighted mean of its cluster, where each member is
//! weighted by `score * IoU(member, head)` and the head by its score.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::hierarchy::ClassId;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuppressionMethod {
    Nms,
    Nmw,
}

impl std::str::FromStr for SuppressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nms" => Ok(SuppressionMethod::Nms),
            "nmw" => Ok(SuppressionMethod::Nmw),
            other => Err(Error::Domain(format!("unknown suppression method `{other}`"))),
        }
    }
}

impl std::fmt::Display for SuppressionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SuppressionMethod::Nms => "nms",
            SuppressionMethod::Nmw => "nmw",
        })
    }
}

/// A greedy cluster: the head index and the indices it suppressed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub head: usize,
    pub members: Vec<usize>,
}

fn check_threshold(iou_threshold: f64) -> Result<()> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::Domain(format!(
            "iou_threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    Ok(())
}

fn check_group(dets: &[Detection]) -> Result<()> {
    if let Some(first) = dets.first() {
        if dets
            .iter()
            .any(|d| d.image_id != first.image_id || d.class != first.class)
        {
            return Err(Error::MixedGroup);
        }
    }
    Ok(())
}

/// Indices sorted by descending score, ties in input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy clustering shared by NMS and NMW. Clusters come out in head-score
/// order; `members` excludes the head.
pub fn greedy_clusters(dets: &[Detection], iou_threshold: f64) -> Vec<Cluster> {
    let order = score_order(dets);
    let mut alive = vec![true; dets.len()];
    let mut clusters = Vec::new();
    for (pos, &head) in order.iter().enumerate() {
        if !alive[head] {
            continue;
        }
        alive[head] = false;
        let mut members = Vec::new();
        for &other in &order[pos + 1..] {
            if alive[other] && iou(&dets[head].bbox, &dets[other].bbox) > iou_threshold {
                alive[other] = false;
                members.push(other);
            }
        }
        clusters.push(Cluster { head, members });
    }
    clusters
}

/// Greedy NMS over detections of a single (image, class) group.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    check_threshold(iou_threshold)?;
    check_group(dets)?;
    Ok(greedy_clusters(dets, iou_threshold)
        .into_iter()
        .map(|c| dets[c.head].clone())
        .collect())
}

/// Weighted mean box of a cluster, written as the head plus a weighted mean
/// of offsets so that single-member and identical-box clusters reproduce the
/// head coordinates exactly.
fn merged_box(dets: &[Detection], cluster: &Cluster) -> BBox {
    let head = &dets[cluster.head];
    if cluster.members.is_empty() {
        return head.bbox;
    }
    let h = head.bbox.as_array();
    let mut total_weight = head.score;
    let mut offset = [0.0; 4];
    for &m in &cluster.members {
        let d = &dets[m];
        let w = d.score * iou(&d.bbox, &head.bbox);
        total_weight += w;
        for (acc, (x, hx)) in offset.iter_mut().zip(d.bbox.as_array().iter().zip(&h)) {
            *acc += w * (x - hx);
        }
    }
    if total_weight <= 0.0 {
        return head.bbox;
    }
    BBox {
        x_min: h[0] + offset[0] / total_weight,
        y_min: h[1] + offset[1] / total_weight,
        x_max: h[2] + offset[2] / total_weight,
        y_max: h[3] + offset[3] / total_weight,
    }
}

/// Non-maximum weighted merging over a single (image, class) group. Each
/// output keeps the head's score and metadata.
pub fn nmw(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    check_threshold(iou_threshold)?;
    check_group(dets)?;
    Ok(greedy_clusters(dets, iou_threshold)
        .into_iter()
        .map(|c| Detection {
            bbox: merged_box(dets, &c),
            ..dets[c.head].clone()
        })
        .collect())
}

pub fn suppress(
    dets: &[Detection],
    method: SuppressionMethod,
    iou_threshold: f64,
) -> Result<Vec<Detection>> {
    match method {
        SuppressionMethod::Nms => nms(dets, iou_threshold),
        SuppressionMethod::Nmw => nmw(dets, iou_threshold),
    }
}

/// Splits detections into (image, class) groups in first-appearance order.
pub fn partition(dets: &[Detection]) -> Vec<Vec<Detection>> {
    let mut index: HashMap<(&str, ClassId), usize> = HashMap::new();
    let mut groups: Vec<Vec<Detection>> = Vec::new();
    for d in dets {
        let slot = *index
            .entry((d.image_id.as_str(), d.class))
            .or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
        groups[slot].push(d.clone());
    }
    groups
}

/// Applies `method` independently to every (image, class) group and
/// concatenates the results in group first-appearance order.
pub fn suppress_classwise(
    dets: &[Detection],
    method: SuppressionMethod,
    iou_threshold: f64,
) -> Result<Vec<Detection>> {
    check_threshold(iou_threshold)?;
    let groups = partition(dets);
    let results: Vec<Vec<Detection>> = groups
        .par_iter()
        .map(|g| suppress(g, method, iou_threshold))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> Detection {
        Detection::new("img", ClassId(0), score, BBox::new(x0, y0, x1, y1).unwrap())
    }

    #[test]
    fn nms_examples() {
        let single = [det(0.0, 0.0, 1.0, 1.0, 0.3)];
        assert_eq!(nms(&single, 0.5).unwrap(), single);

        let dup = [det(0.0, 0.0, 1.0, 1.0, 0.8), det(0.0, 0.0, 1.0, 1.0, 0.9)];
        assert_eq!(nms(&dup, 0.5).unwrap(), vec![dup[1].clone()]);

        let apart = [det(0.0, 0.0, 2.0, 2.0, 0.9), det(1.0, 1.0, 3.0, 3.0, 0.8)];
        assert_eq!(nms(&apart, 0.5).unwrap(), apart.to_vec());
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let d = [
            det(10.0, 10.0, 11.0, 11.0, 0.5),
            det(0.0, 0.0, 1.0, 1.0, 0.5),
            det(0.0, 0.0, 1.0, 1.0, 0.5),
        ];
        let kept = nms(&d, 0.5).unwrap();
        assert_eq!(kept, vec![d[0].clone(), d[1].clone()]);
    }

    #[test]
    fn iou_equal_to_threshold_is_not_suppressed() {
        // IoU exactly 0.5: (0,0,2,2) vs (0,0,2,1).
        let d = [det(0.0, 0.0, 2.0, 2.0, 0.9), det(0.0, 0.0, 2.0, 1.0, 0.8)];
        assert_eq!(nms(&d, 0.5).unwrap().len(), 2);
    }

    #[test]
    fn nmw_examples() {
        let single = [det(0.1, 0.2, 0.7, 0.9, 0.3)];
        assert_eq!(nmw(&single, 0.5).unwrap(), single);

        let dup = [det(0.1, 0.2, 0.7, 0.9, 0.4), det(0.1, 0.2, 0.7, 0.9, 0.6)];
        let merged = nmw(&dup, 0.5).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].bbox, dup[0].bbox);
        assert_eq!(merged[0].score, 0.6);

        let pair = [det(0.0, 0.0, 2.0, 2.0, 1.0), det(0.0, 0.0, 2.0, 4.0, 0.5)];
        let merged = nmw(&pair, 0.4).unwrap();
        assert_eq!(merged.len(), 1);
        let b = merged[0].bbox;
        assert_eq!((b.x_min, b.y_min, b.x_max), (0.0, 0.0, 2.0));
        assert!((b.y_max - 2.4).abs() < 1e-15);
        assert_eq!(merged[0].score, 1.0);
    }

    #[test]
    fn mixed_groups_are_rejected() {
        let mut other = det(0.0, 0.0, 1.0, 1.0, 0.5);
        other.class = ClassId(1);
        let d = [det(0.0, 0.0, 1.0, 1.0, 0.5), other.clone()];
        assert!(matches!(nms(&d, 0.5), Err(Error::MixedGroup)));
        other.class = ClassId(0);
        other.image_id = "img2".into();
        let d = [det(0.0, 0.0, 1.0, 1.0, 0.5), other];
        assert!(matches!(nmw(&d, 0.5), Err(Error::MixedGroup)));
    }

    #[test]
    fn threshold_domain() {
        let d = [det(0.0, 0.0, 1.0, 1.0, 0.5)];
        assert!(nms(&d, 0.0).is_err());
        assert!(nms(&d, 1.0).is_err());
        assert!(suppress_classwise(&d, SuppressionMethod::Nmw, f64::NAN).is_err());
    }

    #[test]
    fn classwise_partitions_are_independent() {
        let a = det(0.0, 0.0, 1.0, 1.0, 0.9);
        let mut b = det(0.0, 0.0, 1.0, 1.0, 0.8);
        b.class = ClassId(1);
        let out = suppress_classwise(&[a.clone(), b.clone()], SuppressionMethod::Nms, 0.5).unwrap();
        assert_eq!(out, vec![a, b]);
        assert!(suppress_classwise(&[], SuppressionMethod::Nmw, 0.5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("NMW".parse::<SuppressionMethod>().unwrap(), SuppressionMethod::Nmw);
        assert!("soft".parse::<SuppressionMethod>().is_err());
    }
}
