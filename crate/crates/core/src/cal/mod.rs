//! The CAL trainer: objective terms, the α updates, the per-round training
//! schedule, the empirical domain distance and evaluation.

mod alpha;
mod bundle;
mod eval;
mod hdist;
mod objective;
mod train;

pub use alpha::{alpha_row_step, alpha_step, alpha_step_with_coefficients, linear_alpha_value, vertex_minimum};
pub use bundle::{argmax_rows, BundleShape, ClassifierView, DomainCode, ModelBundle};
pub use eval::{accuracy, accuracy_on, evaluate, Evaluation};
pub use hdist::{estimate_h_distance, h_distance_from_logits, probe_h_distance, ProbeConfig};
pub use objective::{
    compute_vd, compute_vh, compute_vlambda, objective, zero_one_stats, BundleGrads, ObjectiveValue, StepBatch,
    TermSelection, ZeroOneStats,
};
pub use train::{
    disc_step_adam, disc_step_line_search, labeled_sets, snapshot, snapshots_to_csv, train_round, ObjectiveSnapshot,
    RoundOutcome, TrainConfig, Variant,
};
