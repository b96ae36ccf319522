//! Experiment configuration, the training loop, evaluation, sweeps,
//! embedding export and the gradient-verification command.

mod config;
mod eval;
mod export;
pub mod gradcheck_cmd;
mod report;
mod sweep;
mod train;

pub use config::ExperimentConfig;
pub use eval::{coarse_id_map, encode_split, evaluate, EvalSettings};
pub use export::{export_embeddings, EmbeddingRecord};
pub use gradcheck_cmd::{gradcheck_command, GradcheckCommandReport, NamedCheck};
pub use report::{EpochRow, EvalBlock, ProbeRow, RunReport, Seeds, StepRecord};
pub use sweep::{apply_axis, sweep, SweepAxis, SweepCell, SweepReport};
pub use train::{train, TrainOutcome};
