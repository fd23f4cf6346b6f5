//! Sparse-IMU pose estimation at desk scale: SO(3) kinematics, synthetic IMU
//! generation, sequence regressors on a small autodiff engine, feature
//! ablation for sensor ranking, and the evaluation metrics.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common double-precision instantiations.

pub mod attribution;
pub mod error;
pub mod evalharness;
pub mod formats;
pub mod imusynth;
pub mod kinematics;
pub mod neuralseq;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rotation = kinematics::RotationMatrix<f64>;
pub type Skeleton = kinematics::Skeleton<f64>;
pub type PoseFrame = kinematics::PoseFrame<f64>;
pub type PoseSequence = kinematics::PoseSequence<f64>;
pub type ImuSequence = imusynth::ImuSequence<f64>;
pub type Tensor = neuralseq::Tensor<f64>;
pub type Checkpoint = neuralseq::Checkpoint<f64>;
pub type Window = neuralseq::Window<f64>;
pub type Sample = evalharness::Sample<f64>;
