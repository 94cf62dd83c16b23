//! Per-(proposal, class) training targets under sparse verification.
//!
//! Each entry of the [`SupervisionMatrix`] is decided by the first rule that
//! fires, in this order:
//!
//! 1. `Positive` when the proposal matches a ground truth box
//!    (IoU ≥ `pos_iou_threshold`) whose ancestor-expanded label set contains
//!    the class.
//! 2. `Ignore` when the class is a descendant of a matched ground truth's
//!    class.
//! 3. `Ignore` when the proposal lies inside a ground truth box of a subject
//!    class (containment ≥ `containment_threshold`) and the class is one of
//!    that subject's parts.
//! 4. For classes not verified in the image, the configured
//!    [`UnverifiedPolicy`].
//! 5. `Negative`.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{CooccurrenceTable, GroundTruthBox, ImageVerification};
use crate::error::{Error, Result};
use crate::geometry::{containment_fraction, iou, BBox};
use crate::hierarchy::{ClassHierarchy, ClassId};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionState {
    Positive,
    Negative,
    Ignore,
}

/// Which rule produced an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Matched,
    AncestorOfMatch,
    DescendantSkip,
    CooccurrenceIgnore,
    UnverifiedPolicy,
    Default,
}

impl Provenance {
    /// The state this provenance implies, when it implies exactly one.
    pub fn implied_state(self) -> Option<SupervisionState> {
        match self {
            Provenance::Matched | Provenance::AncestorOfMatch => Some(SupervisionState::Positive),
            Provenance::DescendantSkip
            | Provenance::CooccurrenceIgnore
            | Provenance::UnverifiedPolicy => Some(SupervisionState::Ignore),
            Provenance::Default => Some(SupervisionState::Negative),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnverifiedPolicy {
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentConfig {
    pub pos_iou_threshold: f64,
    pub containment_threshold: f64,
    pub unverified_policy: UnverifiedPolicy,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            pos_iou_threshold: 0.5,
            containment_threshold: 0.9,
            unverified_policy: UnverifiedPolicy::Negative,
        }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pos_iou_threshold", self.pos_iou_threshold),
            ("containment_threshold", self.containment_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionMatrix {
    pub proposals: Vec<BBox>,
    pub states: Matrix<SupervisionState>,
    pub provenance: Matrix<Provenance>,
}

impl SupervisionMatrix {
    pub fn num_proposals(&self) -> usize {
        self.states.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.states.cols()
    }

    pub fn state(&self, proposal: usize, class: ClassId) -> SupervisionState {
        *self.states.get(proposal, class.index())
    }

    pub fn provenance(&self, proposal: usize, class: ClassId) -> Provenance {
        *self.provenance.get(proposal, class.index())
    }

    /// Stacks matrices with the same class count.
    pub fn concat(parts: &[SupervisionMatrix]) -> Result<SupervisionMatrix> {
        let cols = parts.first().map_or(0, |m| m.num_classes());
        let mut proposals = Vec::new();
        let mut states = Vec::new();
        let mut provenance = Vec::new();
        for m in parts {
            if m.num_classes() != cols {
                return Err(Error::ShapeMismatch {
                    expected: (m.num_proposals(), cols),
                    actual: m.states.shape(),
                });
            }
            proposals.extend_from_slice(&m.proposals);
            states.extend_from_slice(m.states.as_slice());
            provenance.extend_from_slice(m.provenance.as_slice());
        }
        let rows = proposals.len();
        Ok(SupervisionMatrix {
            proposals,
            states: Matrix::from_vec(rows, cols, states),
            provenance: Matrix::from_vec(rows, cols, provenance),
        })
    }
}

fn check_inputs(
    proposals: &[BBox],
    gts: &[GroundTruthBox],
    pairs: &CooccurrenceTable,
    hierarchy: &ClassHierarchy,
    config: &AssignmentConfig,
) -> Result<()> {
    config.validate()?;
    if proposals.is_empty() {
        return Err(Error::EmptyProposals);
    }
    if let Some(p) = proposals.iter().find(|p| !p.is_valid()) {
        return Err(Error::Domain(format!("invalid proposal box {p:?}")));
    }
    let n = hierarchy.len();
    let known = |c: ClassId| {
        if c.index() < n {
            Ok(())
        } else {
            Err(Error::UnknownClass(c.to_string()))
        }
    };
    for g in gts {
        known(g.class)?;
    }
    for p in pairs.pairs() {
        known(p.subject)?;
        known(p.part)?;
    }
    Ok(())
}

/// Assigns training targets for the proposals of one image.
///
/// `gts` are that image's ground truth boxes and `verification` its
/// image-level labels.
pub fn assign_targets(
    proposals: &[BBox],
    gts: &[GroundTruthBox],
    verification: &ImageVerification,
    hierarchy: &ClassHierarchy,
    pairs: &CooccurrenceTable,
    config: &AssignmentConfig,
) -> Result<SupervisionMatrix> {
    check_inputs(proposals, gts, pairs, hierarchy, config)?;
    let n = hierarchy.len();

    let rows: Vec<Vec<(SupervisionState, Provenance)>> = proposals
        .par_iter()
        .map(|p| {
            let mut row: Vec<Option<Provenance>> = vec![None; n];
            let matched: Vec<&GroundTruthBox> = gts
                .iter()
                .filter(|g| iou(p, &g.bbox) >= config.pos_iou_threshold)
                .collect();

            for g in &matched {
                row[g.class.index()] = Some(Provenance::Matched);
            }
            for g in &matched {
                for a in hierarchy.ancestors(g.class).expect("checked") {
                    row[a.index()].get_or_insert(Provenance::AncestorOfMatch);
                }
            }
            for g in &matched {
                for d in hierarchy.descendants(g.class).expect("checked") {
                    row[d.index()].get_or_insert(Provenance::DescendantSkip);
                }
            }
            for g in gts {
                let parts = pairs.parts(g.class);
                if parts.is_empty()
                    || containment_fraction(p, &g.bbox) < config.containment_threshold
                {
                    continue;
                }
                for part in parts {
                    row[part.index()].get_or_insert(Provenance::CooccurrenceIgnore);
                }
            }

            row.iter()
                .enumerate()
                .map(|(c, decided)| match decided {
                    Some(prov) => (prov.implied_state().expect("decided"), *prov),
                    None => {
                        let c = ClassId(c as u32);
                        if !verification.is_verified(c)
                            && config.unverified_policy == UnverifiedPolicy::Ignore
                        {
                            (SupervisionState::Ignore, Provenance::UnverifiedPolicy)
                        } else {
                            (SupervisionState::Negative, Provenance::Default)
                        }
                    }
                })
                .collect()
        })
        .collect();

    let flat: Vec<(SupervisionState, Provenance)> = rows.into_iter().flatten().collect();
    let (states, provenance): (Vec<_>, Vec<_>) = flat.into_iter().unzip();
    Ok(SupervisionMatrix {
        proposals: proposals.to_vec(),
        states: Matrix::from_vec(proposals.len(), n, states),
        provenance: Matrix::from_vec(proposals.len(), n, provenance),
    })
}

/// Entries where the co-occurrence rule fires, regardless of precedence.
pub fn cooccurrence_ignore_mask(
    proposals: &[BBox],
    gts: &[GroundTruthBox],
    pairs: &CooccurrenceTable,
    hierarchy: &ClassHierarchy,
    config: &AssignmentConfig,
) -> Result<Matrix<bool>> {
    check_inputs(proposals, gts, pairs, hierarchy, config)?;
    let mut mask = Matrix::filled(proposals.len(), hierarchy.len(), false);
    for (i, p) in proposals.iter().enumerate() {
        for g in gts {
            let parts = pairs.parts(g.class);
            if !parts.is_empty()
                && containment_fraction(p, &g.bbox) >= config.containment_threshold
            {
                for part in parts {
                    *mask.get_mut(i, part.index()) = true;
                }
            }
        }
    }
    Ok(mask)
}

/// One JSON-lines record: a proposal with its per-class states and
/// provenance, in hierarchy class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub image_id: String,
    pub proposal: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub states: Vec<SupervisionState>,
    pub provenance: Vec<Provenance>,
}

pub fn write_supervision_jsonl<W: Write>(
    mut writer: W,
    image_id: &str,
    matrix: &SupervisionMatrix,
) -> Result<()> {
    for (i, p) in matrix.proposals.iter().enumerate() {
        let rec = SupervisionRecord {
            image_id: image_id.to_string(),
            proposal: i,
            bbox: p.as_array(),
            states: matrix.states.row(i).to_vec(),
            provenance: matrix.provenance.row(i).to_vec(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<supervision output>", e))?;
    }
    Ok(())
}

/// Reads records back into one stacked matrix plus each row's image id.
pub fn read_supervision_jsonl<R: BufRead>(
    reader: R,
    source: &str,
    num_classes: usize,
) -> Result<(Vec<String>, SupervisionMatrix)> {
    let mut image_ids = Vec::new();
    let mut proposals = Vec::new();
    let mut states = Vec::new();
    let mut provenance = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i as u64 + 1;
        let rec: SupervisionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        if rec.states.len() != num_classes || rec.provenance.len() != num_classes {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected {num_classes} classes, got {}", rec.states.len()),
            ));
        }
        let [x0, y0, x1, y1] = rec.bbox;
        let bbox = BBox::new(x0, y0, x1, y1)
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        image_ids.push(rec.image_id);
        proposals.push(bbox);
        states.extend(rec.states);
        provenance.extend(rec.provenance);
    }
    let rows = proposals.len();
    Ok((
        image_ids,
        SupervisionMatrix {
            proposals,
            states: Matrix::from_vec(rows, num_classes, states),
            provenance: Matrix::from_vec(rows, num_classes, provenance),
        },
    ))
}
