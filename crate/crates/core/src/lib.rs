//! Geometric and numerical core of a spherical-correlation and mesh graph
//! convolution pipeline for 6D object pose estimation.

pub mod error;
pub mod graph;
pub mod image;
pub mod learn;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod sampling;
pub mod scene;
pub mod selftest;
pub mod so3;
pub mod sphere;

pub use error::{Error, Result};
