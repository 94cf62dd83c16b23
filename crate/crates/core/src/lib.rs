//! Detection post-processing and sparse-annotation supervision.
//!
//! Boxes, a class DAG, sparse verification labels, proposal target
//! assignment with hierarchy and co-occurrence rules, masked sigmoid
//! cross-entropy, NMS/NMW suppression, expert-model ensembling and
//! OID-style average precision.

pub mod annotations;
pub mod assignment;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod hierarchy;
pub mod loss;
pub mod matrix;
pub mod pipeline;
pub mod suppression;
pub mod synth;

pub use annotations::{
    CooccurrencePair, CooccurrenceTable, Detection, GroundTruthBox, ImageVerification,
    LoadOptions, Verifications,
};
pub use assignment::{
    assign_targets, AssignmentConfig, Provenance, SupervisionMatrix, SupervisionState,
    UnverifiedPolicy,
};
pub use ensemble::{build_weight_table, class_weight, fuse, ClassWeightTable, ModelRun};
pub use error::{Error, Result};
pub use evaluation::{average_precision, evaluate, EvalConfig, EvalReport};
pub use geometry::{containment_fraction, iou, BBox};
pub use hierarchy::{ClassHierarchy, ClassId};
pub use loss::{sigmoid_ce, sigmoid_ce_grad, LogitMatrix, LossOutput, Reduction};
pub use matrix::Matrix;
pub use suppression::{nms, nmw, suppress_classwise, SuppressionMethod};
