//! Library side of the `lim` command: each subcommand is a plain function so
//! that tests can drive it without spawning processes.

pub mod annotations;
pub mod bench;
pub mod datagen;
pub mod gradcheck;
pub mod settings;
pub mod train_eval;

pub use annotations::{score_detections, write_split, AnnotationSet, DimsSource};
pub use bench::{scan_bench, BenchReport, BenchSettings};
pub use datagen::{generate, GenDataSettings};
pub use gradcheck::{run_gradcheck, GradcheckSettings};
pub use settings::{load_settings, parse_settings, Settings};
pub use train_eval::{comparison_table, train_eval, TrainEvalSettings, VariantOutcome};
