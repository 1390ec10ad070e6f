//! Object-based classification of urban land cover from four-band imagery.
//!
//! The pipeline: [`segmentation::segment`] partitions a [`raster::MultibandRaster`]
//! into objects, [`features::compute_features`] describes each object,
//! [`ruleset::classify`] labels them with an ordered threshold/fuzzy rule
//! set, and [`assessment`] scores the resulting map against ground truth.
//! [`classifiers`] holds the CART and pixel-level neural-network baselines,
//! and [`scene`] generates synthetic scenes with known truth.

pub mod assessment;
pub mod classes;
pub mod classifiers;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod ruleset;
pub mod scene;
pub mod segmentation;

pub use error::{Error, Result};
