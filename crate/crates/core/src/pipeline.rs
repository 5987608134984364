//! End-to-end runs from a point cloud to a result document.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::em::{fit, FitConfig, FitResult};
use crate::error::Result;
use crate::io::result::ResultDocument;
use crate::model::{ModelStructure, NnDistanceSet};
use crate::nn::{filter_positive_with_indices, nn_distances_with, Engine, PointCloud};
use crate::search::{search, TraceEntry};

/// Fixed structure or a search from `(1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Fixed(ModelStructure),
    Search,
}

/// Distances ready for fitting with the cloud rows they came from.
#[derive(Debug, Clone)]
pub struct PreparedDistances {
    pub data: NnDistanceSet,
    pub indices: Vec<usize>,
    pub dropped: usize,
}

pub fn prepare(cloud: &PointCloud, n: usize, engine: Engine) -> Result<PreparedDistances> {
    let raw = nn_distances_with(cloud, n, engine)?;
    let total = raw.len();
    let (data, indices) = filter_positive_with_indices(raw)?;
    let dropped = total - data.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} zero nearest-neighbor distances (duplicate points)");
    }
    Ok(PreparedDistances { data, indices, dropped })
}

/// Fits or searches and returns the chosen fit with the search trace
/// (empty for a fixed structure).
pub fn select(data: &NnDistanceSet, selection: &Selection, config: &FitConfig) -> Result<(FitResult, Vec<TraceEntry>)> {
    match selection {
        Selection::Fixed(s) => Ok((fit(data, s, config.seed, config)?, Vec::new())),
        Selection::Search => {
            let state = search(data, config)?;
            Ok((state.current_fit, state.history))
        }
    }
}

pub fn run_distances(
    data: &NnDistanceSet,
    indices: Vec<usize>,
    selection: &Selection,
    config: &FitConfig,
    input_fingerprint: String,
) -> Result<ResultDocument> {
    let (best, trace) = select(data, selection, config)?;
    ResultDocument::from_fit(&best, data.order(), indices, trace, config, input_fingerprint)
}

pub fn run_cloud(
    cloud: &PointCloud,
    n: usize,
    engine: Engine,
    selection: &Selection,
    config: &FitConfig,
    input_fingerprint: String,
) -> Result<ResultDocument> {
    let prepared = prepare(cloud, n, engine)?;
    run_distances(&prepared.data, prepared.indices, selection, config, input_fingerprint)
}

/// `count` distinct indices below `total`, chosen uniformly by `seed` and
/// returned in increasing order. Asking for `total` or more keeps all.
pub fn subsample_indices(total: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Metric;

    #[test]
    fn duplicates_are_dropped_with_their_indices() {
        let cloud = PointCloud::new(&[vec![0.0], vec![0.0], vec![1.0], vec![3.0]], Metric::Euclidean).unwrap();
        let p = prepare(&cloud, 1, Engine::Brute).unwrap();
        assert_eq!(p.dropped, 2);
        assert_eq!(p.indices, vec![2, 3]);
        assert_eq!(p.data.distances(), &[1.0, 2.0]);
    }

    #[test]
    fn subsamples_are_sorted_distinct_and_seeded() {
        let a = subsample_indices(1000, 50, 3);
        assert_eq!(a.len(), 50);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample_indices(1000, 50, 3));
        assert_ne!(a, subsample_indices(1000, 50, 4));
        assert_eq!(subsample_indices(5, 9, 0), vec![0, 1, 2, 3, 4]);
    }
}
