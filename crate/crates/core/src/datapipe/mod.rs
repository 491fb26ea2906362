//! Annotation manifest curation: rating filters, instruction pairing and
//! test-split selection.

pub mod pairing;
pub mod record;
pub mod split;

pub use pairing::{pair_instructions, InstructionBank, MEDIA_PLACEHOLDER};
pub use record::{
    filter_by_rating, load_manifest, manifest_to_jsonl, parse_manifest, save_manifest, AnnotationRecord, LineError,
    Manifest, Media, MediaType, Ratings, DEFAULT_THRESHOLD,
};
pub use split::{
    build_test_split, observed_distribution, quotas, Split, SplitSummary, TargetDistribution,
    TaskSummary, DEFAULT_PER_TASK,
};
