//! Scoring free-text descriptions against task labels.
//!
//! Text is first stripped of negated sentences, then mapped to a label by
//! synonym matching (expression, attribute, deepfake) or by pattern parsing
//! (AUs, age). Metrics aggregate the parsed predictions per task.

pub mod metrics;
pub mod report;
pub mod taxonomy;
pub mod text;

pub use metrics::{
    accuracy, compute_avg_f1, compute_mae, compute_mean_attr_accuracy, compute_uar_war, confusion_matrix,
    AttributeReport, F1Report, MaeReport, UarWar, BP4D_AUS, DISFA_AUS,
};
pub use report::{
    evaluate_records, parse_records, read_records, vote_chunks, AuList, Confusion, EvalConfig, EvalRecord,
    EvalResources, GroundTruth, MetricReport, Prediction, TaskMetrics,
};
pub use taxonomy::{match_synonyms, EvalTask, Taxonomy};
pub use text::{parse_age, parse_aus, split_sentences, strip_negatives, strip_negatives_with, NegationCues};
