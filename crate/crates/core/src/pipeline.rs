//! End-to-end flow: load runs from a manifest, weight them, fuse with a
//! single suppression pass, evaluate, and write a fixed output layout:
//!
//! ```text
//! <out>/fused.csv       fused detections with a Source column
//! <out>/report.csv      per-class AP
//! <out>/summary.json    mAP and run settings
//! <out>/manifest.lock   SHA-256 of the manifest and every input file
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::{
    load_class_list, load_class_values, load_detections, Detection, GroundTruthBox, LoadOptions,
    Verifications,
};
use crate::ensemble::{build_weight_table, fuse, ClassWeightTable, ModelRun, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, mean_over_rank_range, write_report_csv, EvalConfig, EvalReport,
};
use crate::geometry::{containment_fraction, iou};
use crate::hierarchy::{ClassHierarchy, ClassId};
use crate::suppression::{SuppressionMethod, DEFAULT_IOU_THRESHOLD};
use crate::synth::SyntheticScene;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_method() -> SuppressionMethod {
    SuppressionMethod::Nmw
}

fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    /// Detections file (CSV, or JSON-lines by extension).
    pub detections: PathBuf,
    /// `LabelName,AP` validation scores.
    pub val_scores: PathBuf,
    /// Optional one-column `LabelName` list; marks the run as an expert.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_subset: Option<PathBuf>,
}

/// Ensemble manifest. Relative paths resolve against the manifest's folder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub runs: Vec<RunSpec>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_method")]
    pub method: SuppressionMethod,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    /// Drop expert detections outside the class subset instead of failing.
    #[serde(default = "default_true")]
    pub filter_experts: bool,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.runs.is_empty() {
            return Err(Error::Domain("manifest lists no runs".into()));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<u8>)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::parse(&path.display().to_string(), 1, e.to_string()))?;
        Ok((Self::from_json(text)?, bytes))
    }

    /// Input paths resolved against `base`, in manifest order.
    pub fn input_paths(&self, base: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for r in &self.runs {
            out.push(base.join(&r.detections));
            out.push(base.join(&r.val_scores));
            if let Some(s) = &r.class_subset {
                out.push(base.join(s));
            }
        }
        out
    }
}

/// Loads every run named in the manifest. Warnings (dropped out-of-subset
/// detections, skipped rows) are returned alongside.
pub fn load_runs(
    manifest: &Manifest,
    base: &Path,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<(Vec<ModelRun>, Vec<String>)> {
    let mut runs = Vec::new();
    let mut warnings = Vec::new();
    for spec in &manifest.runs {
        let loaded = load_detections(base.join(&spec.detections), hierarchy, opts)?;
        for s in &loaded.skipped {
            warnings.push(format!("run `{}`: skipped line {}: {}", spec.name, s.line, s.error));
        }
        let scores = load_class_values(base.join(&spec.val_scores), "AP", hierarchy)?;
        if let Some((c, s)) = scores.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Domain(format!(
                "run `{}`: AP {s} for `{}` is outside [0, 1]",
                spec.name,
                hierarchy.name(*c)
            )));
        }
        let subset = spec
            .class_subset
            .as_ref()
            .map(|p| load_class_list(base.join(p), hierarchy))
            .transpose()?;
        let run = if manifest.filter_experts {
            let (run, dropped) =
                ModelRun::new_filtered(spec.name.clone(), loaded.records, scores, subset);
            if dropped > 0 {
                warnings.push(format!(
                    "run `{}`: dropped {dropped} detections outside its class subset",
                    spec.name
                ));
            }
            run
        } else {
            ModelRun::new(spec.name.clone(), loaded.records, scores, subset)?
        };
        runs.push(run);
    }
    Ok((runs, warnings))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub weights: ClassWeightTable,
    pub fused: Vec<Detection>,
    pub report: EvalReport,
}

/// Weights, fuses and evaluates already-loaded runs.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    runs: &[ModelRun],
    alpha: f64,
    method: SuppressionMethod,
    iou_threshold: f64,
    gts: &[GroundTruthBox],
    verifications: &Verifications,
    hierarchy: &ClassHierarchy,
    eval_config: &EvalConfig,
) -> Result<PipelineOutput> {
    let weights = build_weight_table(runs, alpha)?;
    let fused = fuse(runs, &weights, method, iou_threshold)?;
    let report = evaluate(&fused, gts, verifications, hierarchy, eval_config)?;
    Ok(PipelineOutput {
        weights,
        fused,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLock {
    pub manifest_sha256: String,
    pub inputs: Vec<LockEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ManifestLock {
    /// Hashes the manifest bytes and each `(label, path)` input.
    pub fn compute(manifest_bytes: &[u8], inputs: &[(String, PathBuf)]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|(label, path)| {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                Ok(LockEntry {
                    path: label.clone(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ManifestLock {
            manifest_sha256: sha256_hex(manifest_bytes),
            inputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_ap: Option<f64>,
    pub classes_with_ap: usize,
    pub fused_detections: usize,
    pub runs: Vec<String>,
    pub alpha: f64,
    pub method: SuppressionMethod,
    pub iou_threshold: f64,
    pub manifest_sha256: String,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the fixed output layout into `dir`, creating it if needed.
pub fn write_outputs(
    dir: &Path,
    output: &PipelineOutput,
    manifest: &Manifest,
    lock: &ManifestLock,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::annotations::write_detections_csv(create(&dir.join("fused.csv"))?, &output.fused, hierarchy)?;
    write_report_csv(create(&dir.join("report.csv"))?, &output.report, hierarchy)?;

    let summary = Summary {
        mean_ap: output.report.mean_ap,
        classes_with_ap: output.report.classes.iter().filter(|r| r.ap.is_some()).count(),
        fused_detections: output.fused.len(),
        runs: manifest.runs.iter().map(|r| r.name.clone()).collect(),
        alpha: manifest.alpha,
        method: manifest.method,
        iou_threshold: manifest.iou_threshold,
        manifest_sha256: lock.manifest_sha256.clone(),
    };
    let write_json = |name: &str, value: &dyn erased::Json| -> Result<()> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        value.write(&mut w)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    };
    write_json("summary.json", &summary)?;
    write_json("manifest.lock", lock)?;
    Ok(())
}

mod erased {
    use super::*;

    /// Object-safe pretty JSON writer.
    pub trait Json {
        fn write(&self, w: &mut dyn Write) -> Result<()>;
    }

    impl<T: Serialize> Json for T {
        fn write(&self, w: &mut dyn Write) -> Result<()> {
            serde_json::to_writer_pretty(w, self)?;
            Ok(())
        }
    }
}

/// Everything needed to run a manifest from disk.
#[derive(Debug, Clone)]
pub struct PipelineInputs<'a> {
    pub manifest_path: &'a Path,
    pub gts: &'a [GroundTruthBox],
    pub verifications: &'a Verifications,
    pub hierarchy: &'a ClassHierarchy,
    pub eval_config: EvalConfig,
    /// Additional files to fingerprint in `manifest.lock` (ground truth,
    /// verifications, hierarchy), as `(label, path)`.
    pub extra_inputs: Vec<(String, PathBuf)>,
    pub lenient: bool,
}

/// Loads the manifest, runs the pipeline and writes the output layout.
pub fn run_manifest_to_dir(
    inputs: &PipelineInputs<'_>,
    out_dir: &Path,
) -> Result<(PipelineOutput, Vec<String>)> {
    let (manifest, bytes) = Manifest::load(inputs.manifest_path)?;
    let base = inputs
        .manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let opts = LoadOptions {
        lenient: inputs.lenient,
        image_sizes: None,
    };
    let (runs, warnings) = load_runs(&manifest, &base, inputs.hierarchy, opts)?;
    let output = run_pipeline(
        &runs,
        manifest.alpha,
        manifest.method,
        manifest.iou_threshold,
        inputs.gts,
        inputs.verifications,
        inputs.hierarchy,
        &inputs.eval_config,
    )?;

    let mut lock_inputs: Vec<(String, PathBuf)> = Vec::new();
    for r in &manifest.runs {
        lock_inputs.push((r.detections.display().to_string(), base.join(&r.detections)));
        lock_inputs.push((r.val_scores.display().to_string(), base.join(&r.val_scores)));
        if let Some(s) = &r.class_subset {
            lock_inputs.push((s.display().to_string(), base.join(s)));
        }
    }
    lock_inputs.extend(inputs.extra_inputs.iter().cloned());
    let lock = ManifestLock::compute(&bytes, &lock_inputs)?;
    write_outputs(out_dir, &output, &manifest, &lock, inputs.hierarchy)?;
    Ok((output, warnings))
}

/// Per-class comparison between a baseline and a co-occurrence-trained
/// detector, plus rarity-range means for both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub class: ClassId,
    pub baseline_ap: f64,
    pub cooccurrence_ap: f64,
}

impl AblationRow {
    pub fn delta(&self) -> f64 {
        self.cooccurrence_ap - self.baseline_ap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub baseline_average: f64,
    pub cooccurrence_average: f64,
    /// `(lo, hi, baseline mean, co-occurrence mean)` per requested rank range.
    pub rank_ranges: Vec<(usize, usize, f64, f64)>,
    pub removed_detections: usize,
}

/// Marks the detections a conventionally trained detector would have lost:
/// part-class detections lying inside a box of one of their subject classes
/// (containment ≥ `containment_threshold`) that are the sole true positive
/// for their ground truth box.
///
/// The uniqueness condition (no other detection of the class overlaps that
/// ground truth at the evaluation threshold) means removing a marked
/// detection changes no other detection's outcome, so part-class AP can only
/// fall or stay put.
pub fn falsely_suppressed(
    scene: &SyntheticScene,
    dets: &[Detection],
    containment_threshold: f64,
    eval_config: &EvalConfig,
) -> Vec<bool> {
    let h = &scene.hierarchy;
    let parts: BTreeSet<ClassId> = scene.pairs.pairs().iter().map(|p| p.part).collect();
    let carries = |own: ClassId, c: ClassId, expand: bool| {
        own == c || (expand && h.is_ancestor(c, own))
    };
    let mut gts_by_image: HashMap<&str, Vec<&GroundTruthBox>> = HashMap::new();
    for g in &scene.gts {
        gts_by_image.entry(g.image_id.as_str()).or_default().push(g);
    }
    let mut dets_by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        dets_by_image.entry(d.image_id.as_str()).or_default().push(i);
    }
    let no_gts = Vec::new();
    let thr = eval_config.iou_threshold;

    // Whether detection `i`, scored as class `c`, is the only detection able
    // to claim its best-matching ground truth.
    let sole_claimant = |i: usize, c: ClassId| -> bool {
        let d = &dets[i];
        if !scene.verifications.is_verified(&d.image_id, c) {
            return true;
        }
        let image_gts = gts_by_image.get(d.image_id.as_str()).unwrap_or(&no_gts);
        let mut best: Option<(&GroundTruthBox, f64)> = None;
        for g in image_gts.iter().filter(|g| {
            carries(g.class, c, eval_config.expand_gt)
                && !(eval_config.ignore_group_of && g.is_group_of)
        }) {
            let v = iou(&d.bbox, &g.bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        let Some((target, v)) = best else { return false };
        if v < thr {
            return false;
        }
        dets_by_image[d.image_id.as_str()].iter().all(|&k| {
            k == i
                || !carries(dets[k].class, c, eval_config.expand_detections)
                || iou(&dets[k].bbox, &target.bbox) < thr
        })
    };

    dets.iter()
        .enumerate()
        .map(|(i, d)| {
            if !parts.contains(&d.class) {
                return false;
            }
            let image_gts = gts_by_image.get(d.image_id.as_str()).unwrap_or(&no_gts);
            let inside = image_gts.iter().any(|g| {
                scene.pairs.contains(g.class, d.class)
                    && containment_fraction(&d.bbox, &g.bbox) >= containment_threshold
            });
            if !inside || !sole_claimant(i, d.class) {
                return false;
            }
            // With detection expansion the box also scores for ancestor
            // classes; those that are parts must be unaffected as well.
            !eval_config.expand_detections
                || h
                    .ancestors(d.class)
                    .map(|anc| {
                        anc.iter()
                            .filter(|a| parts.contains(a))
                            .all(|&a| sole_claimant(i, a))
                    })
                    .unwrap_or(false)
        })
        .collect()
}

/// Simulates the effect of co-occurrence ignoring on model `model`.
///
/// The model's detections stand in for the co-occurrence-trained detector.
/// The baseline is the same detector minus the detections marked by
/// [`falsely_suppressed`]: part instances inside subject boxes that a
/// detector trained to call those regions background would miss.
pub fn cooccurrence_ablation(
    scene: &SyntheticScene,
    model: usize,
    containment_threshold: f64,
    rank_ranges: &[(usize, usize)],
    eval_config: &EvalConfig,
) -> Result<AblationReport> {
    let m = scene
        .models
        .get(model)
        .ok_or_else(|| Error::Domain(format!("scene has no model #{model}")))?;
    let cooc = &m.detections;
    let drop = falsely_suppressed(scene, cooc, containment_threshold, eval_config);
    let baseline: Vec<Detection> = cooc
        .iter()
        .zip(&drop)
        .filter(|(_, gone)| !**gone)
        .map(|(d, _)| d.clone())
        .collect();

    let eval = |dets: &[Detection]| {
        evaluate(dets, &scene.gts, &scene.verifications, &scene.hierarchy, eval_config)
    };
    let base_report = eval(&baseline)?;
    let cooc_report = eval(cooc)?;

    let parts: BTreeSet<ClassId> = scene.pairs.pairs().iter().map(|p| p.part).collect();
    let rows: Vec<AblationRow> = parts
        .into_iter()
        .filter_map(|c| {
            Some(AblationRow {
                class: c,
                baseline_ap: base_report.ap(c)?,
                cooccurrence_ap: cooc_report.ap(c)?,
            })
        })
        .collect();
    let mean = |f: fn(&AblationRow) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    let baseline_average = mean(|r| r.baseline_ap);
    let cooccurrence_average = mean(|r| r.cooccurrence_ap);

    let occurrence = crate::annotations::occurrence_counts(&scene.gts);
    let rank_ranges = rank_ranges
        .iter()
        .map(|&(lo, hi)| {
            Ok((
                lo,
                hi,
                mean_over_rank_range(&base_report.classes, &occurrence, lo, hi)?,
                mean_over_rank_range(&cooc_report.classes, &occurrence, lo, hi)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AblationReport {
        rows,
        baseline_average,
        cooccurrence_average,
        rank_ranges,
        removed_detections: cooc.len() - baseline.len(),
    })
}

impl AblationReport {
    /// Per-class table: one column per part class plus `Average`, rows
    /// `Baseline` and `Co-occurrence`, values as AP percentages.
    pub fn class_table(&self, hierarchy: &ClassHierarchy) -> String {
        let mut header = vec![String::new()];
        let mut base = vec!["Baseline".to_string()];
        let mut cooc = vec!["Co-occurrence".to_string()];
        for r in &self.rows {
            header.push(hierarchy.name(r.class).to_string());
            base.push(format!("{:.1}", r.baseline_ap * 100.0));
            cooc.push(format!("{:.1}", r.cooccurrence_ap * 100.0));
        }
        header.push("Average".into());
        base.push(format!("{:.1}", self.baseline_average * 100.0));
        cooc.push(format!("{:.1}", self.cooccurrence_average * 100.0));
        render(&[header, base, cooc])
    }

    /// Rank-range table: one column per range, one row per detector.
    pub fn rank_table(&self) -> String {
        let mut header = vec![String::new()];
        let mut base = vec!["Baseline".to_string()];
        let mut cooc = vec!["Co-occurrence".to_string()];
        for (lo, hi, b, c) in &self.rank_ranges {
            header.push(format!("Index {lo}-{hi}"));
            base.push(format!("{:.1}", b * 100.0));
            cooc.push(format!("{:.1}", c * 100.0));
        }
        render(&[header, base, cooc])
    }
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:>w$}", w = widths[i]))
            .collect();
        out.push_str(&cells.join(" | "));
        out.push('\n');
    }
    out
}

/// Writes a synthetic scene as a ready-to-run dataset: hierarchy, ground
/// truth, verifications, pairs, per-model detections and validation scores,
/// and a manifest over all models.
pub fn write_synthetic_dataset(
    dir: &Path,
    scene: &SyntheticScene,
    eval_config: &EvalConfig,
    method: SuppressionMethod,
) -> Result<Manifest> {
    use crate::annotations::{
        write_class_values_csv, write_cooccurrence_pairs_csv, write_detections_csv,
        write_ground_truth_csv, write_verifications_csv,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let h = &scene.hierarchy;
    let finish = |path: PathBuf, w: BufWriter<fs::File>| -> Result<()> {
        w.into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&path, e))
    };

    let p = dir.join("hierarchy.csv");
    let mut w = create(&p)?;
    h.write_edge_csv(&mut w)?;
    finish(p, w)?;
    let p = dir.join("gt.csv");
    let mut w = create(&p)?;
    write_ground_truth_csv(&mut w, &scene.gts, h)?;
    finish(p, w)?;
    let p = dir.join("verifications.csv");
    let mut w = create(&p)?;
    write_verifications_csv(&mut w, &scene.verifications, h)?;
    finish(p, w)?;
    let p = dir.join("pairs.csv");
    let mut w = create(&p)?;
    write_cooccurrence_pairs_csv(&mut w, &scene.pairs, h)?;
    finish(p, w)?;

    let mut runs = Vec::new();
    for m in &scene.models {
        let det_name = format!("{}_detections.csv", m.name);
        let ap_name = format!("{}_val_ap.csv", m.name);
        let p = dir.join(&det_name);
        let mut w = create(&p)?;
        write_detections_csv(&mut w, &m.detections, h)?;
        finish(p, w)?;
        let report = evaluate(&m.detections, &scene.gts, &scene.verifications, h, eval_config)?;
        let scores: HashMap<ClassId, f64> = crate::synth::validation_scores(&report, h);
        let p = dir.join(&ap_name);
        let mut w = create(&p)?;
        write_class_values_csv(&mut w, "AP", &scores, h)?;
        finish(p, w)?;
        runs.push(RunSpec {
            name: m.name.clone(),
            detections: det_name.into(),
            val_scores: ap_name.into(),
            class_subset: None,
        });
    }
    let manifest = Manifest {
        runs,
        alpha: DEFAULT_ALPHA,
        method,
        iou_threshold: DEFAULT_IOU_THRESHOLD,
        filter_experts: true,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let p = dir.join("manifest.json");
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}
