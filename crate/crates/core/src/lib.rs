//! Clustering points by local intrinsic dimension.
//!
//! Each point's `n`-th nearest-neighbor distance is modeled as a draw from a
//! mixture of densities `P(r | n, d, λ)`, one dimension `d` per cluster and
//! any number of rate components sharing it. Parameters are fit by EM and
//! the cluster layout is chosen by greedy AIC descent.
//!
//! ```
//! use dimclust::{generators, nn, em, model::ModelStructure};
//!
//! let cloud = generators::sample_uniform_cube(2, 400, 1).unwrap();
//! let dists = nn::nn_distances(&cloud, 1).unwrap();
//! let (dists, _) = nn::filter_positive(dists).unwrap();
//! let fit = em::fit(&dists, &ModelStructure::single(), 0, &em::FitConfig::default()).unwrap();
//! assert!((fit.params.dims()[0] - 2.0).abs() < 0.5);
//! ```

pub mod em;
pub mod error;
pub mod generators;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod search;

pub use em::{fit, FitConfig, FitResult};
pub use error::{Error, Result};
pub use model::{MixtureParams, ModelStructure, NnDistanceSet};
pub use nn::{Engine, Metric, PointCloud};
pub use search::search;
