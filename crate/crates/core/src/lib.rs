//! Accent classification from speech: audio standardization and augmentation,
//! MFCC features, DenseNet-family networks on a small reverse-mode autodiff
//! engine, multi-task training and F-beta evaluation.

pub mod dataset;
pub mod dsp;
pub mod eval;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod train;
