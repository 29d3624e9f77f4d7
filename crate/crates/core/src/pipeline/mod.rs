//! Data handling, training, inference, evaluation and experiment drivers.

pub mod ablation;
pub mod augment;
pub mod data;
pub mod eval;
pub mod infer;
pub mod summary;
pub mod synth;
pub mod train;

pub use ablation::{run_ablation, AblationConfig, AblationReport, AblationRow};
pub use augment::{augment, AugmentConfig, AugmentDraw};
pub use data::{load_dataset, Sample};
pub use eval::{evaluate, evaluate_dirs};
pub use infer::infer;
pub use summary::{diagnostics, render_diagnostics, render_summary, summarize, Diagnostics, ModelSummary};
pub use synth::{generate, ShapeKind, SyntheticSpec};
pub use train::{train, train_on, EpochLog, TrainConfig, TrainReport};
