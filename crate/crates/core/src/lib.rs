//! Structural graph reasoning over convolutional feature maps.
//!
//! The pipeline turns an image into a feature map ([`backbone`]), the feature
//! map into a 4-neighbour patch graph with normalized coordinates
//! ([`graph`]), and runs two spatially-aware message-passing layers followed
//! by node-level, importance and graph-level heads ([`sgnn`]). All gradients
//! are written by hand and checked against finite differences.

pub mod backbone;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod numeric;
pub mod parallel;
pub mod sgnn;
pub mod training;

pub use error::{Error, Result};
