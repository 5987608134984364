//! Synthetic datasets with known pointwise dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Metric, PointCloud};

/// Deepest ternary expansion whose integer numerator still fits in a `u64`.
pub const MAX_CANTOR_DEPTH: u32 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantorSampleSpec {
    pub count: usize,
    pub depth: u32,
    pub seed: u64,
}

impl Default for CantorSampleSpec {
    fn default() -> Self {
        Self { count: 50_000, depth: 35, seed: 0 }
    }
}

/// Integer numerator `Σ_j t_j 3^(depth−j)` of a ternary expansion.
///
/// Every digit must be 0 or 2.
pub fn cantor_numerator(digits: &[u8]) -> Result<u64> {
    if digits.len() > MAX_CANTOR_DEPTH as usize {
        return Err(Error::Argument(format!("depth {} exceeds {MAX_CANTOR_DEPTH}", digits.len())));
    }
    digits.iter().try_fold(0u64, |acc, &t| match t {
        0 | 2 => Ok(acc * 3 + t as u64),
        _ => Err(Error::Argument(format!("Cantor digits must be 0 or 2, got {t}"))),
    })
}

/// The point `Σ_j t_j 3^(−j)` for the given ternary digits.
pub fn cantor_from_digits(digits: &[u8]) -> Result<f64> {
    let num = cantor_numerator(digits)?;
    Ok(num as f64 / 3f64.powi(digits.len() as i32))
}

/// Samples the Cantor measure: each of `depth` ternary digits is 0 or 2
/// with equal probability. The sum is formed exactly in integers before a
/// single rounding division.
pub fn sample_cantor(spec: &CantorSampleSpec) -> Result<PointCloud> {
    if spec.count == 0 {
        return Err(Error::Argument("Cantor sample count must be at least 1".into()));
    }
    if spec.depth == 0 || spec.depth > MAX_CANTOR_DEPTH {
        return Err(Error::Argument(format!("Cantor depth must be in 1..={MAX_CANTOR_DEPTH}, got {}", spec.depth)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 3f64.powi(spec.depth as i32);
    let coords = (0..spec.count)
        .map(|_| {
            let num = (0..spec.depth).fold(0u64, |acc, _| acc * 3 + if rng.random::<bool>() { 2 } else { 0 });
            num as f64 / scale
        })
        .collect();
    PointCloud::from_flat(1, coords, Metric::Euclidean)
}

/// Probability that the nearest-neighbor distance among `count` Cantor
/// samples falls in `(3^(−i−1), 3^(−i)]`:
/// `(1 − 2^(−i−1))^N − (1 − 2^(−i))^N`.
pub fn cantor_probmass(level: u32, count: usize) -> f64 {
    let n = count as f64;
    let pow = |j: u32| (n * (-(0.5f64).powi(j as i32)).ln_1p()).exp();
    (pow(level + 1) - pow(level)).max(0.0)
}

/// A random walk alternating between a line and the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSpec {
    /// Phase lengths in the order line, plane, line, plane.
    pub segment_lengths: [usize; 4],
    pub step_scale: f64,
    pub seed: u64,
    /// Directions of the first and second line phases.
    pub axes: [[f64; 2]; 2],
}

impl Default for WalkSpec {
    fn default() -> Self {
        Self { segment_lengths: [2000; 4], step_scale: 1.0, seed: 0, axes: [[1.0, 0.0], [0.0, 1.0]] }
    }
}

impl WalkSpec {
    fn validate(&self) -> Result<()> {
        if self.segment_lengths.contains(&0) {
            return Err(Error::Argument("walk segments must be non-empty".into()));
        }
        if !(self.step_scale.is_finite() && self.step_scale >= 0.0) {
            return Err(Error::Argument(format!("step scale must be non-negative, got {}", self.step_scale)));
        }
        let [a, b] = self.axes;
        let unit = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-9;
        if !unit(a) || !unit(b) || (a[0] * b[0] + a[1] * b[1]).abs() > 1e-9 {
            return Err(Error::Argument("walk axes must be orthogonal unit vectors".into()));
        }
        Ok(())
    }
}

/// Generates the walk; `labels[i]` is the dimension (1 or 2) of the phase
/// that produced point `i`. Each phase continues from where the previous
/// one stopped.
pub fn generate_walk(spec: &WalkSpec) -> Result<(PointCloud, Vec<u8>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total: usize = spec.segment_lengths.iter().sum();
    let mut coords = Vec::with_capacity(2 * total);
    let mut labels = Vec::with_capacity(total);
    let (mut x, mut y) = (0.0, 0.0);
    for (phase, &len) in spec.segment_lengths.iter().enumerate() {
        let line_axis = (phase % 2 == 0).then(|| spec.axes[phase / 2]);
        for _ in 0..len {
            match line_axis {
                Some(axis) => {
                    let g: f64 = rng.sample(StandardNormal);
                    x += spec.step_scale * g * axis[0];
                    y += spec.step_scale * g * axis[1];
                }
                None => {
                    let gx: f64 = rng.sample(StandardNormal);
                    let gy: f64 = rng.sample(StandardNormal);
                    x += spec.step_scale * gx;
                    y += spec.step_scale * gy;
                }
            }
            coords.push(x);
            coords.push(y);
            labels.push(if line_axis.is_some() { 1 } else { 2 });
        }
    }
    Ok((PointCloud::from_flat(2, coords, Metric::Euclidean)?, labels))
}

/// `count` i.i.d. uniform points in the unit `dim`-cube.
pub fn sample_uniform_cube(dim: usize, count: usize, seed: u64) -> Result<PointCloud> {
    if dim == 0 {
        return Err(Error::Argument("cube dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..dim * count).map(|_| rng.random::<f64>()).collect();
    PointCloud::from_flat(dim, coords, Metric::Euclidean)
}
