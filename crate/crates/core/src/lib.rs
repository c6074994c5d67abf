//! Hybrid binary-CNN / gradient-boosted-tree image classifier.
//!
//! A 1-bit convolutional backbone is trained with a fully connected head,
//! then its pooled features are frozen and a bounded tree ensemble takes the
//! head's place at inference time.

pub mod backbone;
pub mod binary;
pub mod cli;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod gbdt;
pub mod tensor;

pub use error::{Error, Result};
