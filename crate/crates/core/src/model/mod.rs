//! Encoder-only model assembly, task heads and training.

mod checkpoint;
mod layers;
mod network;
mod stationary;
mod task;
mod train;

#[cfg(test)]
mod tests;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint};
pub use layers::{positional_encoding, FeedForward, LayerNorm, LAYER_NORM_EPS};
pub use network::{
    accumulate_sample, backward, encoder_backward, encoder_forward, forward, input_mask, sample_loss,
    BlockParams, EncoderCache, LagPlan, ModelCache, ModelConfig, ModelParams,
};
pub use stationary::{destationarize, stationarize, stationarize_observed, StationaryStats, SIGMA_FLOOR};
pub use task::{
    anomaly_decision, cross_entropy, detection_scores, hidden_weights, masked_mse, quantile, task_loss,
    AnomalyDecision, DetectionScores, Target,
};
pub use train::{
    evaluate, fit, mean_loss, train_step, EpochRecord, EvalMetrics, FitResult, Optimizer, OptimizerKind,
    TrainConfig,
};
