//! Learns interpretable pattern/region rules from raw sequence data through a
//! fully differentiable pipeline: stride-1 windowing, an autoencoder
//! embedding, soft k-means assignment, region aggregation into fuzzy
//! interpretation vectors, and a softmax-weighted rule network whose program
//! tensor yields symbolic rules with precision/recall guarantees measured on
//! discretized data.

pub mod archive;
pub mod data;
pub mod error;
pub mod logic;
pub mod matrix;
pub mod nn;
pub mod rulenet;
pub mod symbolize;
pub mod train;

pub use error::{Error, Result};
