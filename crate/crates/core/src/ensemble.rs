//! Class-weighted fusion of full models and class-subset experts.
//!
//! For class `c`, let `s` be a model's validation AP, `mu` the mean AP of
//! the models covering `c`, and `t` the best of them. A model at or below
//! the mean gets weight `alpha`; above it the weight rises linearly to 1 at
//! the best model. Weighted outputs of all runs are concatenated and
//! suppressed once.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::annotations::Detection;
use crate::error::{Error, Result};
use crate::evaluation::{check_rank_range, rank_by_rarity};
use crate::hierarchy::{ClassHierarchy, ClassId};
use crate::suppression::{suppress_classwise, SuppressionMethod};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Output of one model together with its per-class validation AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    name: String,
    detections: Vec<Detection>,
    val_scores: HashMap<ClassId, f64>,
    class_subset: Option<BTreeSet<ClassId>>,
}

impl ModelRun {
    /// Fails with `SubsetViolation` if an expert emits a class outside its
    /// subset.
    pub fn new(
        name: impl Into<String>,
        detections: Vec<Detection>,
        val_scores: HashMap<ClassId, f64>,
        class_subset: Option<BTreeSet<ClassId>>,
    ) -> Result<Self> {
        let run = ModelRun {
            name: name.into(),
            detections,
            val_scores,
            class_subset,
        };
        run.check_subset()?;
        Ok(run)
    }

    /// Like [`ModelRun::new`], but drops out-of-subset detections instead of
    /// failing. Returns the run and the number of dropped detections.
    pub fn new_filtered(
        name: impl Into<String>,
        mut detections: Vec<Detection>,
        val_scores: HashMap<ClassId, f64>,
        class_subset: Option<BTreeSet<ClassId>>,
    ) -> (Self, usize) {
        let before = detections.len();
        if let Some(subset) = &class_subset {
            detections.retain(|d| subset.contains(&d.class));
        }
        let dropped = before - detections.len();
        (
            ModelRun {
                name: name.into(),
                detections,
                val_scores,
                class_subset,
            },
            dropped,
        )
    }

    fn check_subset(&self) -> Result<()> {
        if let Some(subset) = &self.class_subset {
            if let Some(d) = self.detections.iter().find(|d| !subset.contains(&d.class)) {
                return Err(Error::SubsetViolation {
                    run: self.name.clone(),
                    class: d.class.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn val_scores(&self) -> &HashMap<ClassId, f64> {
        &self.val_scores
    }

    pub fn class_subset(&self) -> Option<&BTreeSet<ClassId>> {
        self.class_subset.as_ref()
    }

    /// Whether this run takes part in class `c`'s statistics.
    pub fn covers(&self, c: ClassId) -> bool {
        self.val_scores.contains_key(&c)
            && self.class_subset.as_ref().is_none_or(|s| s.contains(&c))
    }

    /// Distinct classes the run emits.
    pub fn emitted_classes(&self) -> BTreeSet<ClassId> {
        self.detections.iter().map(|d| d.class).collect()
    }
}

/// Weight for a model with validation score `s`, class mean `mu` and class
/// best `t`.
pub fn class_weight(s: f64, mu: f64, t: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("s", s), ("mu", mu), ("t", t)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} is outside (0, 1]")));
    }
    if s > t {
        return Err(Error::Domain(format!("s = {s} exceeds the best score t = {t}")));
    }
    if mu > t {
        return Err(Error::Domain(format!("mu = {mu} exceeds the best score t = {t}")));
    }
    if s < mu {
        return Ok(alpha);
    }
    if t == mu {
        return Ok(1.0);
    }
    // Same line as (s-mu)/(t-mu) + alpha*(t-s)/(t-mu), arranged so that it is
    // monotone in s under rounding and hits alpha and 1 exactly at s=mu, s=t.
    let frac = (s - mu) / (t - mu);
    Ok((alpha + (1.0 - alpha) * frac).clamp(alpha, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: f64,
    pub best: f64,
    pub models: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightTable {
    pub alpha: f64,
    weights: HashMap<(String, ClassId), f64>,
    stats: BTreeMap<ClassId, ClassStats>,
}

impl ClassWeightTable {
    pub fn weight(&self, run: &str, class: ClassId) -> Option<f64> {
        self.weights.get(&(run.to_string(), class)).copied()
    }

    pub fn stats(&self, class: ClassId) -> Option<&ClassStats> {
        self.stats.get(&class)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Every `(run, class, weight)` entry sorted by run then class.
    pub fn entries(&self) -> Vec<(&str, ClassId, f64)> {
        let mut out: Vec<(&str, ClassId, f64)> = self
            .weights
            .iter()
            .map(|((r, c), w)| (r.as_str(), *c, *w))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Table where every emitted class of every run has weight 1.
    pub fn uniform(runs: &[ModelRun]) -> Self {
        let mut weights = HashMap::new();
        for r in runs {
            for c in r.emitted_classes() {
                weights.insert((r.name.clone(), c), 1.0);
            }
        }
        ClassWeightTable {
            alpha: 1.0,
            weights,
            stats: BTreeMap::new(),
        }
    }
}

/// Builds per-(run, class) weights. The class mean and best are taken over
/// the runs covering that class.
pub fn build_weight_table(runs: &[ModelRun], alpha: f64) -> Result<ClassWeightTable> {
    let mut names = BTreeSet::new();
    for r in runs {
        if !names.insert(r.name()) {
            return Err(Error::Domain(format!("duplicate run name `{}`", r.name())));
        }
        r.check_subset()?;
        if let Some(c) = r.emitted_classes().into_iter().find(|c| !r.covers(*c)) {
            return Err(Error::MissingScore {
                run: r.name.clone(),
                class: c.to_string(),
            });
        }
    }

    let mut scores: BTreeMap<ClassId, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        for (&c, &s) in &r.val_scores {
            if r.covers(c) {
                scores.entry(c).or_default().push((i, s));
            }
        }
    }

    let mut weights = HashMap::new();
    let mut stats = BTreeMap::new();
    for (c, entries) in scores {
        let mean = entries.iter().map(|(_, s)| s).sum::<f64>() / entries.len() as f64;
        let best = entries.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        // The mean of values can round a hair above their max.
        let mean = mean.min(best);
        for &(i, s) in &entries {
            weights.insert((runs[i].name.clone(), c), class_weight(s, mean, best, alpha)?);
        }
        stats.insert(
            c,
            ClassStats {
                mean,
                best,
                models: entries.len(),
            },
        );
    }
    Ok(ClassWeightTable {
        alpha,
        weights,
        stats,
    })
}

/// Chunks the classes with rarity ranks `[lo, hi]` (1-based, rarest first)
/// into consecutive subsets of `subset_size`.
pub fn plan_expert_subsets(
    occurrence: &HashMap<ClassId, u64>,
    subset_size: usize,
    lo: usize,
    hi: usize,
) -> Result<Vec<Vec<ClassId>>> {
    if subset_size == 0 {
        return Err(Error::Domain("subset size must be at least 1".into()));
    }
    let ranked = rank_by_rarity(occurrence);
    check_rank_range(ranked.len(), lo, hi)?;
    Ok(ranked[lo - 1..hi]
        .chunks(subset_size)
        .map(<[ClassId]>::to_vec)
        .collect())
}

/// Weights every run's detections, concatenates them and suppresses once.
/// Each output detection's `source` names the run it came from.
pub fn fuse(
    runs: &[ModelRun],
    table: &ClassWeightTable,
    method: SuppressionMethod,
    iou_threshold: f64,
) -> Result<Vec<Detection>> {
    let mut all = Vec::with_capacity(runs.iter().map(|r| r.detections.len()).sum());
    for r in runs {
        r.check_subset()?;
        for d in &r.detections {
            let w = table
                .weight(&r.name, d.class)
                .ok_or_else(|| Error::MissingWeight {
                    run: r.name.clone(),
                    class: d.class.to_string(),
                })?;
            all.push(Detection {
                score: d.score * w,
                source: Some(r.name.clone()),
                ..d.clone()
            });
        }
    }
    suppress_classwise(&all, method, iou_threshold)
}

/// Renders the weight table as `Run,LabelName,Weight,Mean,Best`.
pub fn write_weight_table_csv<W: std::io::Write>(
    writer: W,
    table: &ClassWeightTable,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Run", "LabelName", "Weight", "Mean", "Best"])?;
    for (run, c, weight) in table.entries() {
        let (mean, best) = table
            .stats(c)
            .map(|s| (format!("{}", s.mean), format!("{}", s.best)))
            .unwrap_or_default();
        w.write_record([
            run.to_string(),
            hierarchy.name(c).to_string(),
            format!("{weight}"),
            mean,
            best,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<weights>", e))?;
    Ok(())
}
