//! Objective, optimization loop, synthetic task, decoding and metrics.

pub mod decode;
pub mod metrics;
pub mod objective;
pub mod synth;
pub mod trainer;

pub use decode::{beam_decode, exhaustive_map, greedy_decode, sequence_log_likelihood, DecodeOptions};
pub use metrics::{corpus_token_error_rate, edit_distance, median, metrics_csv, token_error_rate, MetricsRecord};
pub use objective::{total_objective, ObjectiveKind, ObjectiveOptions, ObjectiveWeights, UtteranceObjective};
pub use synth::{synth_generate, Dataset, SyntheticTaskSpec, Utterance};
pub use trainer::{Evaluation, TrainConfig, Trainer};
