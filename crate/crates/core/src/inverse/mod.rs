//! The inverse map `u: T -> C`.
//!
//! A fully connected network reads an observed flow matrix and emits a cost
//! matrix in `(0, 1)`. It is trained by pushing that cost through a fixed
//! number of Sinkhorn iterations and comparing the resulting plan with the
//! observation on positive links, plus an L1 penalty pulling each row of the
//! cost towards unit sum.

mod adam;
mod gauge;
mod loss;
mod mlp;
mod train;

pub use adam::{adam_step, ADAM_EPS, BETA1, BETA2};
pub use gauge::{gauge_distance, gauge_normalize};
pub use loss::{
    cost_loss, encode_plan, forward, gradient, loss, InputTransform, LossReport, TrainingConfig,
};
pub use mlp::{
    backward, forward_raw, AdamState, DenseLayer, ForwardCache, HiddenActivation, LayerStack,
    MlpParameters, NetworkConfig, OutputActivation,
};
pub use train::{
    infer_costs, input_scale, train, train_model, train_samples, training_samples, Checkpoint,
    EpochRecord, InferredCost, TrainedModel, TrainingHistory, TrainingSample,
};
