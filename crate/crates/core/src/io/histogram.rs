//! Log-scale histograms of nearest-neighbor distances with model and
//! theoretical bin masses alongside.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::generators::cantor_probmass;
use crate::model::{mixture_density, MixtureParams, NnDistanceSet};

/// Ascending bin edges; bin `j` is the half-open interval `(edges[j], edges[j+1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBins {
    edges: Vec<f64>,
    /// Ternary level `i` of each bin `(3^(−i−1), 3^(−i)]`, when built by [`LogBins::ternary`].
    levels: Option<Vec<u32>>,
}

impl LogBins {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Argument("a histogram needs at least one bin".into()));
        }
        if edges[0] <= 0.0 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Argument("bin edges must be positive and increasing".into()));
        }
        Ok(Self { edges, levels: None })
    }

    /// `count` bins of equal width in `ln r` spanning `(lo, hi]`.
    pub fn geometric(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(lo > 0.0 && hi > lo) {
            return Err(Error::Argument(format!("bad geometric bins ({lo}, {hi}] x {count}")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut edges: Vec<f64> = (0..=count).map(|j| (a + (b - a) * j as f64 / count as f64).exp()).collect();
        edges[0] = lo;
        edges[count] = hi;
        Self::from_edges(edges)
    }

    /// Bins `(3^(−i−1), 3^(−i)]` for `i` from `deepest` down to `shallowest`.
    pub fn ternary(shallowest: u32, deepest: u32) -> Result<Self> {
        if shallowest > deepest {
            return Err(Error::Argument("ternary levels out of order".into()));
        }
        let levels: Vec<u32> = (shallowest..=deepest).rev().collect();
        let mut edges: Vec<f64> = levels.iter().map(|&i| 3f64.powi(-(i as i32) - 1)).collect();
        edges.push(3f64.powi(-(shallowest as i32)));
        let mut bins = Self::from_edges(edges)?;
        bins.levels = Some(levels);
        Ok(bins)
    }

    /// Ternary bins just covering the data.
    pub fn ternary_covering(data: &NnDistanceSet) -> Result<Self> {
        let (lo, hi) = data.distances().iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &r| (a.min(r), b.max(r)));
        let level = |r: f64| (-r.ln() / 3f64.ln()).floor().max(0.0) as u32;
        let mut shallow = level(hi);
        let mut deep = level(lo);
        // Nudge for values sitting exactly on a power of three.
        while shallow > 0 && 3f64.powi(-(shallow as i32)) < hi {
            shallow -= 1;
        }
        while 3f64.powi(-(deep as i32) - 1) >= lo {
            deep += 1;
        }
        Self::ternary(shallow, deep)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn levels(&self) -> Option<&[u32]> {
        self.levels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bin_of(&self, r: f64) -> Option<usize> {
        if !(r > self.edges[0] && r <= *self.edges.last().unwrap()) {
            return None;
        }
        Some(self.edges.partition_point(|&e| e < r) - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub empirical_mass: f64,
    pub model_mass: Option<f64>,
    pub theory_mass: Option<f64>,
}

/// Simpson panels per bin for the model-mass integral (in `ln r`).
const QUADRATURE_PANELS: usize = 256;

/// Integral of the mixture density over `(lo, hi]`, by composite Simpson
/// in `t = ln r` where the integrand `P(eᵗ) eᵗ` is smooth.
pub fn model_bin_mass(lo: f64, hi: f64, n: usize, params: &MixtureParams) -> Result<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let h = (b - a) / QUADRATURE_PANELS as f64;
    let f = |t: f64| -> Result<f64> {
        let r = t.exp();
        Ok(mixture_density(r, n, params)? * r)
    };
    let mut sum = f(a)? + f(b)?;
    for j in 1..QUADRATURE_PANELS {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + j as f64 * h)?;
    }
    Ok(sum * h / 3.0)
}

/// Bins the distances. With `model`, each row also carries the fitted
/// mixture's mass over the bin; with `cantor_count` and ternary bins, the
/// exact Cantor nearest-neighbor mass for that many samples.
pub fn histogram_nn(
    data: &NnDistanceSet,
    bins: &LogBins,
    model: Option<&MixtureParams>,
    cantor_count: Option<usize>,
) -> Result<Vec<HistogramRow>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no distances to histogram".into()));
    }
    if bins.is_empty() {
        return Err(Error::Argument("empty bin specification".into()));
    }
    let theory_levels = match cantor_count {
        Some(_) => {
            Some(bins.levels().ok_or_else(|| Error::Argument("theoretical Cantor masses need ternary bins".into()))?)
        }
        None => None,
    };
    let mut counts = vec![0usize; bins.len()];
    for &r in data.distances() {
        let j = bins.bin_of(r).ok_or_else(|| {
            Error::Argument(format!(
                "distance {r} outside the binned range ({}, {}]",
                bins.edges[0],
                bins.edges[bins.len()]
            ))
        })?;
        counts[j] += 1;
    }
    let total = data.len() as f64;
    (0..bins.len())
        .map(|j| {
            let (lo, hi) = (bins.edges[j], bins.edges[j + 1]);
            Ok(HistogramRow {
                bin_lo: lo,
                bin_hi: hi,
                count: counts[j],
                empirical_mass: counts[j] as f64 / total,
                model_mass: model.map(|p| model_bin_mass(lo, hi, data.order(), p)).transpose()?,
                theory_mass: match (theory_levels, cantor_count) {
                    (Some(levels), Some(n)) => Some(cantor_probmass(levels[j], n)),
                    _ => None,
                },
            })
        })
        .collect()
}

pub fn format_histogram(rows: &[HistogramRow]) -> String {
    let with_model = rows.iter().any(|r| r.model_mass.is_some());
    let with_theory = rows.iter().any(|r| r.theory_mass.is_some());
    let mut out = String::from("bin_lo,bin_hi,count,empirical_mass");
    if with_model {
        out.push_str(",model_mass");
    }
    if with_theory {
        out.push_str(",theory_mass");
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{}", r.bin_lo, r.bin_hi, r.count, r.empirical_mass).unwrap();
        if with_model {
            write!(out, ",{}", r.model_mass.unwrap_or(f64::NAN)).unwrap();
        }
        if with_theory {
            write!(out, ",{}", r.theory_mass.unwrap_or(f64::NAN)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_histogram(path: impl AsRef<Path>, rows: &[HistogramRow]) -> Result<()> {
    fs::write(path, format_histogram(rows))?;
    Ok(())
}

/// Total-variation distance `½ Σ |p − q|` between the model and theory
/// columns over bins holding at least one observation.
pub fn occupied_total_variation(rows: &[HistogramRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.count > 0)
        .map(|r| Some((r.model_mass? - r.theory_mass?).abs()))
        .sum::<Option<f64>>()
        .map(|s| 0.5 * s)
}
