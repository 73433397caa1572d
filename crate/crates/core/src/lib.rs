//! High-resolution spatiotemporal event forecasting.
//!
//! The pipeline: point events are rasterized onto a grid, the grid is
//! recursively subdivided into event-balanced regions, a weighted graph is
//! built on region centers, a graph-convolutional gated recurrent encoder
//! consumes windows of per-region features, and per-region bivariate
//! Gaussian heads produce a density that can be rasterized at any
//! resolution and scored against binary did-an-event-occur cell labels.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod subdivision;
pub mod training;

pub use error::{Error, Result};
