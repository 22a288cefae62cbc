//! Training, evaluation and inference drivers behind the command line.

mod ablate;
mod checkpoint;
mod config;
mod infer;
mod runs;
mod train;

pub use ablate::{table_values, AblationTable, TableEntry, Variant, TABLE_METRICS};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use infer::{draw_marks, infer, offset_marks, parse_texel, Inference, OffsetMarks};
pub use runs::{evaluate, run_ablation, train_run};
pub use train::{Pair, Trainer, FACE_BANK_SEED};
