//! Training objective and evaluation metrics.

pub mod loss;
pub mod metrics;

pub use loss::{joint_loss, LossTerms, OutputLoss};
pub use metrics::{
    aggregate, evaluate_map, f_measure_curve, mae, s_measure, s_measure_parts, Aggregate, FCurve, GrayMap,
    ImageRecord, Quartiles, BETA_SQ, THRESHOLDS,
};
