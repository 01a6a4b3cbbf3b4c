//! Food image segmentation toolkit.
//!
//! - [`dataset`]: VIA polygon annotations, label masks, splits, dataset layout
//! - [`metrics`]: per-class confusion counts, IoU/PPV/SE/SP/BAC, aggregation
//! - [`modelhub`]: training configurations, the predictor interface, the
//!   reference encoder-decoder and test predictors
//! - [`evaluation`]: experiment runs, reports, overlays and detection grading
//! - [`nutrition`]: portion and nutrient estimates from a prediction

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod modelhub;
pub mod nutrition;

pub use error::{Error, Result};
