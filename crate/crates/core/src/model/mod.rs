//! Physics-guided graph neural ODE: convolutions, Verlet transition, physics
//! losses and offline training.

mod checkpoint;
mod dynamics;
mod features;
mod loss;
mod piggo;
mod train;

pub use checkpoint::CHECKPOINT_VERSION;
pub use dynamics::{
    acceleration_jacobian, accelerations, rollout, state_derivative, verlet_jacobian, verlet_step, verlet_vjp,
    Rollout,
};
pub use features::{force_rms, FeatureScales, EDGE_FEATURES, NODE_FEATURES};
pub use loss::{loss_physics_deterministic, loss_physics_nll, physics_residual};
pub use piggo::{
    blackbox_convolution, physics_convolution, ArchitectureConfig, Closure, EdgeResponse, ForceEvaluation,
    ModelGradients, PiggoModel,
};
pub use train::{loss_and_gradient, train, train_with_progress, LossKind, TrainingConfig, TrainingReport};
