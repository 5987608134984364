//! Exact `n`-th nearest-neighbor distances over a point cloud.
//!
//! Two engines produce bit-identical output: a brute-force scan kept as the
//! reference, and a k-d tree with median splits. Both compare the same
//! per-pair key (squared length for the euclidean metric, max-norm for
//! chebyshev) and convert to a true distance only at the end.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NnDistanceSet;

/// Distance function over the ambient space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Chebyshev,
}

impl Metric {
    /// Comparison key between two points: monotone in the true distance.
    #[inline]
    fn key(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Chebyshev => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        }
    }

    /// Key of a one-axis offset, a lower bound on the key across a split plane.
    #[inline]
    fn axis_key(self, diff: f64) -> f64 {
        match self {
            Metric::Euclidean => diff * diff,
            Metric::Chebyshev => diff.abs(),
        }
    }

    #[inline]
    fn key_to_distance(self, key: f64) -> f64 {
        match self {
            Metric::Euclidean => key.sqrt(),
            Metric::Chebyshev => key,
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        self.key_to_distance(self.key(a, b))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Chebyshev => "chebyshev",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "chebyshev" => Ok(Metric::Chebyshev),
            _ => Err(Error::Argument(format!("unknown metric {s:?}"))),
        }
    }
}

/// Which search path computes the neighbor distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// k-d tree up to [`MAX_TREE_DIM`] coordinates, brute force above.
    #[default]
    Auto,
    Brute,
    Index,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Auto => "auto",
            Engine::Brute => "brute",
            Engine::Index => "index",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Engine::Auto),
            "brute" => Ok(Engine::Brute),
            "index" => Ok(Engine::Index),
            _ => Err(Error::Argument(format!("unknown engine {s:?}"))),
        }
    }
}

/// Above this many coordinates the tree rarely prunes and brute force wins.
pub const MAX_TREE_DIM: usize = 16;

/// Points of equal dimension stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    metric: Metric,
}

impl PointCloud {
    pub fn new(points: &[Vec<f64>], metric: Metric) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Argument("points must have at least one coordinate".into()));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Argument(format!("point {i} has {} coordinates, expected {dim}", p.len())));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, metric)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, metric: Metric) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::Argument(format!("{} coordinates do not form points of dimension {dim}", coords.len())));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("coordinates must be finite".into()));
        }
        Ok(Self { dim, coords, metric })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Keeps only the listed points, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self { dim: self.dim, coords, metric: self.metric }
    }
}

/// `n`-th nearest-neighbor distance of every point, self excluded.
///
/// Duplicate points yield zero distances; pass the result through
/// [`filter_positive`] before fitting.
pub fn nn_distances(cloud: &PointCloud, n: usize) -> Result<NnDistanceSet> {
    nn_distances_with(cloud, n, Engine::Auto)
}

pub fn nn_distances_with(cloud: &PointCloud, n: usize, engine: Engine) -> Result<NnDistanceSet> {
    let k = cloud.len();
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 points for neighbor queries, got {k}")));
    }
    if n == 0 || n >= k {
        return Err(Error::Argument(format!("neighbor order must satisfy 1 <= n <= k-1 = {}, got {n}", k - 1)));
    }
    let use_tree = match engine {
        Engine::Brute => false,
        Engine::Index => true,
        Engine::Auto => cloud.dim() <= MAX_TREE_DIM,
    };
    let keys: Vec<f64> = if use_tree {
        let tree = KdTree::build(cloud);
        (0..k).into_par_iter().map(|i| tree.nth_key(i, n)).collect()
    } else {
        (0..k).into_par_iter().map(|i| brute_nth_key(cloud, i, n)).collect()
    };
    let metric = cloud.metric();
    let distances = keys.into_iter().map(|key| metric.key_to_distance(key)).collect();
    Ok(NnDistanceSet::new_unchecked(n, distances))
}

fn brute_nth_key(cloud: &PointCloud, i: usize, n: usize) -> f64 {
    let metric = cloud.metric();
    let q = cloud.point(i);
    let mut keys: Vec<f64> = (0..cloud.len()).filter(|&j| j != i).map(|j| metric.key(q, cloud.point(j))).collect();
    let (_, nth, _) = keys.select_nth_unstable_by(n - 1, f64::total_cmp);
    *nth
}

/// Drops zero distances, reporting how many were removed.
pub fn filter_positive(dists: NnDistanceSet) -> Result<(NnDistanceSet, usize)> {
    let before = dists.len();
    let (kept, _) = filter_positive_with_indices(dists)?;
    let dropped = before - kept.len();
    Ok((kept, dropped))
}

/// Drops zero distances and returns the original index of every survivor.
pub fn filter_positive_with_indices(dists: NnDistanceSet) -> Result<(NnDistanceSet, Vec<usize>)> {
    let order = dists.order();
    let before = dists.len();
    let (indices, kept): (Vec<usize>, Vec<f64>) =
        dists.into_distances().into_iter().enumerate().filter(|&(_, r)| r > 0.0).unzip();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("all {before} nearest-neighbor distances are zero")));
    }
    Ok((NnDistanceSet::new(order, kept)?, indices))
}

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a borrowed cloud.
pub struct KdTree<'a> {
    cloud: &'a PointCloud,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub fn build(cloud: &'a PointCloud) -> Self {
        let mut tree = Self { cloud, nodes: Vec::new(), order: (0..cloud.len()).collect() };
        let len = tree.order.len();
        tree.build_node(0, len);
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        if axis.is_none() {
            // All points coincide; no split can separate them.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = axis.unwrap();
        let mid = start + (end - start) / 2;
        let cloud = self.cloud;
        let coord = |i: usize| cloud.point(i)[axis];
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| coord(a).total_cmp(&coord(b)));
        let value = coord(self.order[mid]);
        // Placeholder, patched once the children exist.
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> Option<usize> {
        let dim = self.cloud.dim();
        let mut best = None;
        let mut best_spread = 0.0;
        for axis in 0..dim {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.cloud.point(i)[axis];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best = Some(axis);
            }
        }
        best
    }

    /// Key of the `n`-th nearest other point to point `i`.
    fn nth_key(&self, i: usize, n: usize) -> f64 {
        let mut best = Vec::with_capacity(n + 1);
        self.search(0, i, n, &mut best);
        best[n - 1]
    }

    fn search(&self, node: usize, i: usize, n: usize, best: &mut Vec<f64>) {
        let metric = self.cloud.metric();
        let q = self.cloud.point(i);
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if j == i {
                        continue;
                    }
                    let key = metric.key(q, self.cloud.point(j));
                    if best.len() < n || key < best[n - 1] {
                        let pos = best.partition_point(|&b| b <= key);
                        best.insert(pos, key);
                        best.truncate(n);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, i, n, best);
                if best.len() < n || metric.axis_key(diff) <= best[n - 1] {
                    self.search(far, i, n, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), Metric::Euclidean).unwrap()
    }

    #[test]
    fn hand_computed_line() {
        let c = line(&[0.0, 1.0, 3.0]);
        for engine in [Engine::Brute, Engine::Index] {
            assert_eq!(nn_distances_with(&c, 1, engine).unwrap().distances(), &[1.0, 1.0, 2.0]);
            assert_eq!(nn_distances_with(&c, 2, engine).unwrap().distances(), &[3.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn argument_errors() {
        let c = line(&[0.0, 1.0, 3.0]);
        assert!(nn_distances(&c, 3).is_err());
        assert!(nn_distances(&c, 0).is_err());
        assert!(nn_distances(&line(&[0.0]), 1).is_err());
        assert!(PointCloud::new(&[vec![1.0], vec![1.0, 2.0]], Metric::Euclidean).is_err());
    }

    #[test]
    fn duplicates_and_filtering() {
        let c = line(&[0.0, 0.0, 1.0, 3.0]);
        let d = nn_distances(&c, 1).unwrap();
        assert_eq!(d.distances(), &[0.0, 0.0, 1.0, 2.0]);
        let (f, dropped) = filter_positive(d).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(f.distances(), &[1.0, 2.0]);
    }

    #[test]
    fn filter_positive_cases() {
        let raw = NnDistanceSet::new_unchecked(1, vec![0.0, 1.0, 2.0]);
        let (f, dropped) = filter_positive(raw).unwrap();
        assert_eq!((f.distances(), dropped), (&[1.0, 2.0][..], 1));
        let (f, dropped) = filter_positive(NnDistanceSet::new(1, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!((f.distances(), dropped), (&[1.0, 2.0][..], 0));
        assert!(matches!(filter_positive(NnDistanceSet::new_unchecked(1, vec![0.0; 3])), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn all_coincident_points_build_a_leaf() {
        let c = line(&[2.0; 40]);
        let d = nn_distances_with(&c, 5, Engine::Index).unwrap();
        assert!(d.distances().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn chebyshev_metric() {
        let c = PointCloud::new(&[vec![0.0, 0.0], vec![1.0, 3.0], vec![-2.0, 0.5]], Metric::Chebyshev).unwrap();
        for engine in [Engine::Brute, Engine::Index] {
            assert_eq!(nn_distances_with(&c, 1, engine).unwrap().distances(), &[2.0, 3.0, 2.0]);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("chebyshev".parse::<Metric>().unwrap(), Metric::Chebyshev);
        assert_eq!("index".parse::<Engine>().unwrap(), Engine::Index);
        assert!("manhattan".parse::<Metric>().is_err());
    }
}
