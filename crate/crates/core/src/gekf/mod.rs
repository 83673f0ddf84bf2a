//! Graph extended Kalman filter around the learned transition model.

mod filter;
mod kalman;

pub use filter::{
    filter_trajectory, rms_acceleration, FilterConfig, FilterOutput, FilterScales, GraphEkf, MeasurementNoiseSource, NoiseConfig,
    StepOutput, MODEL_ERROR_FRACTION,
};
pub use kalman::{
    acceleration_observation, observation_jacobian, observation_variance, predict, transition_jacobian, update,
    GaussianBelief, Innovation, MAX_INNOVATION_CONDITION,
};
