//! Association and pattern analysis between demographic attributes and
//! COVID-19 outcome severity.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`tabular`]: CSV ingest, row blocklists, IQR outliers, z-scores.
//! 2. [`discretizer`]: threshold and quantile binning into ordinal labels.
//! 3. [`stats`]: Pearson chi-square tests of independence.
//! 4. [`som`]: self-organizing map training, U-matrix and component planes.
//! 5. [`rules`]: Apriori mining of class association rules with
//!    support/confidence/lift filtering and redundancy pruning.
//! 6. [`render`]: deterministic SVG figures.

pub mod discretizer;
pub mod error;
pub mod render;
pub mod rules;
pub mod som;
pub mod stats;
pub mod tabular;

pub use error::{Error, Result};
