pub mod matrix;
pub mod features;
pub mod forest;
pub mod gait;
pub mod metrics;
pub mod resnet;
pub mod signal;
pub mod synth;

pub use matrix::Matrix;
