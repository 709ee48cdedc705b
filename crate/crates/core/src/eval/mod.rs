//! Decoding, confusion matrices, reports and single-window inference.

mod confusion;
pub mod decode;
mod infer;
mod report;

pub use confusion::{pct, ConfusionMatrix};
pub use decode::{
    count_correct, decode_event, decode_location, decode_phase, decode_type, phase_class,
    PhaseClass,
};
pub use infer::{Diagnoser, Diagnosis, LOW_CONFIDENCE_MARGIN};
pub use report::{
    check_compatible, compare, evaluate, split_phase, Comparison, ComparisonRow, DatasetId,
    Evaluation, Report,
};
