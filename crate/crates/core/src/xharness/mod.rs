//! Placeholder.
pub struct ExperimentConfig;
pub struct RateFit;
