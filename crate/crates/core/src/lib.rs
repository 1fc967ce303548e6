pub mod geometry;
pub mod imaging;
pub mod dataset;
pub mod harness;
pub mod regressors;
pub mod synth;
