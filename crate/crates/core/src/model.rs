//! The nearest-neighbor distance model.
//!
//! For a locally uniform measure of pointwise dimension `d` the distance `r`
//! from a point to its `n`-th nearest neighbor has density
//!
//! ```text
//! P(r | n, d, λ) = d λⁿ r^(nd−1) exp(−λ rᵈ) / (n−1)!
//! ```
//!
//! which is a Weibull density with shape `d` and rate `λ` when `n = 1`. A
//! dataset mixing several such measures is modelled as a finite mixture whose
//! components are grouped into *dimensional clusters* sharing one `d`.
//!
//! Densities are evaluated in log space; the linear forms are thin wrappers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `n`-th nearest-neighbor distances of a dataset, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NnDistanceSet {
    order: usize,
    distances: Vec<f64>,
}

impl NnDistanceSet {
    pub fn new(order: usize, distances: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::Argument("neighbor order must be at least 1".into()));
        }
        if distances.is_empty() {
            return Err(Error::EmptyDataset("no distances".into()));
        }
        if let Some((i, r)) = distances.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::Domain(format!("distance {i} is {r}; distances must be finite and positive")));
        }
        Ok(Self { order, distances })
    }

    /// Builds a set without the positivity check. Used by ingestion before
    /// zero distances are filtered out.
    pub(crate) fn new_unchecked(order: usize, distances: Vec<f64>) -> Self {
        Self { order, distances }
    }

    /// Neighbor order `n`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn into_distances(self) -> Vec<f64> {
        self.distances
    }
}

/// Parameters of a single component density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    /// Pointwise dimension `d`.
    pub dim: f64,
    /// Rate `λ`, in units of length^(−d).
    pub rate: f64,
}

impl ComponentParams {
    pub fn new(dim: f64, rate: f64) -> Result<Self> {
        let p = Self { dim, rate };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dim.is_finite() && self.dim > 0.0) {
            return Err(Error::Domain(format!("dimension must be positive, got {}", self.dim)));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::Domain(format!("rate must be positive, got {}", self.rate)));
        }
        Ok(())
    }
}

/// How many scale components each dimensional cluster owns.
///
/// The tuple `(m_1, …, m_Md)` is non-increasing with every entry at least 1.
/// Components are numbered so that the first `m_1` belong to cluster 0, the
/// next `m_2` to cluster 1, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModelStructure {
    counts: Vec<usize>,
}

impl ModelStructure {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Structure("structure tuple is empty".into()));
        }
        if counts.contains(&0) {
            return Err(Error::Structure(format!("every cluster needs at least one component: {counts:?}")));
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Structure(format!("component counts must be non-increasing: {counts:?}")));
        }
        Ok(Self { counts })
    }

    /// The one-component, one-cluster structure `(1)`.
    pub fn single() -> Self {
        Self { counts: vec![1] }
    }

    /// Parses a comma tuple such as `"2,1"` or `"(2,1)"`.
    pub fn parse(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let counts = inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Structure(format!("cannot parse {t:?} in structure {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total number of scale components `M`.
    pub fn num_components(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Number of dimensional clusters `M_d`.
    pub fn num_clusters(&self) -> usize {
        self.counts.len()
    }

    /// The cluster owning component `l`.
    pub fn cluster_of(&self, l: usize) -> usize {
        let mut end = 0;
        for (c, &m) in self.counts.iter().enumerate() {
            end += m;
            if l < end {
                return c;
            }
        }
        panic!("component index {l} out of range for structure {self}");
    }

    /// Component indices owned by cluster `c`.
    pub fn components_of(&self, c: usize) -> std::ops::Range<usize> {
        let start: usize = self.counts[..c].iter().sum();
        start..start + self.counts[c]
    }

    /// The surjection from component index to cluster index, as a vector.
    pub fn assignment(&self) -> Vec<usize> {
        self.counts.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect()
    }
}

impl TryFrom<Vec<usize>> for ModelStructure {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ModelStructure> for Vec<usize> {
    fn from(s: ModelStructure) -> Self {
        s.counts
    }
}

impl fmt::Display for ModelStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, m) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, ")")
    }
}

/// Parameters of the full hierarchical mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    structure: ModelStructure,
    dims: Vec<f64>,
    rates: Vec<f64>,
    weights: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl MixtureParams {
    /// `dims` has one entry per cluster; `rates` and `weights` one per component.
    pub fn new(structure: ModelStructure, dims: Vec<f64>, rates: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = structure.num_components();
        if dims.len() != structure.num_clusters() {
            return Err(Error::Argument(format!(
                "expected {} dimensions for structure {structure}, got {}",
                structure.num_clusters(),
                dims.len()
            )));
        }
        if rates.len() != m || weights.len() != m {
            return Err(Error::Argument(format!(
                "expected {m} rates and weights for structure {structure}, got {} and {}",
                rates.len(),
                weights.len()
            )));
        }
        for &d in &dims {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Domain(format!("dimension must be positive, got {d}")));
            }
        }
        for &r in &rates {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Domain(format!("rate must be positive, got {r}")));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain(format!("weights must be non-negative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Domain(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { structure, dims, rates, weights })
    }

    pub fn structure(&self) -> &ModelStructure {
        &self.structure
    }

    /// Per-cluster dimensions.
    pub fn dims(&self) -> &[f64] {
        &self.dims
    }

    /// Per-component rates.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Per-component mixing weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Dimension used by component `l`.
    pub fn dim_of_component(&self, l: usize) -> f64 {
        self.dims[self.structure.cluster_of(l)]
    }

    pub fn component(&self, l: usize) -> ComponentParams {
        ComponentParams { dim: self.dim_of_component(l), rate: self.rates[l] }
    }

    pub fn num_components(&self) -> usize {
        self.rates.len()
    }
}

/// `ln (n−1)!`
pub fn ln_factorial_prev(n: usize) -> f64 {
    libm::lgamma(n as f64)
}

/// Log density from a precomputed `ln r`. `ln_norm` must be `ln (n−1)!`.
#[inline]
pub(crate) fn ln_density_log_r(log_r: f64, n: usize, dim: f64, rate: f64, ln_norm: f64) -> f64 {
    let nf = n as f64;
    dim.ln() + nf * rate.ln() + (nf * dim - 1.0) * log_r - rate * (dim * log_r).exp() - ln_norm
}

/// Natural log of the component density.
pub fn ln_component_density(r: f64, n: usize, p: ComponentParams) -> Result<f64> {
    if n == 0 {
        return Err(Error::Argument("neighbor order must be at least 1".into()));
    }
    p.validate()?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    if r == 0.0 {
        // r^(nd−1) vanishes only when nd > 1.
        return if n as f64 * p.dim > 1.0 {
            Ok(f64::NEG_INFINITY)
        } else {
            Err(Error::Domain("density is unbounded at r = 0 when nd <= 1".into()))
        };
    }
    Ok(ln_density_log_r(r.ln(), n, p.dim, p.rate, ln_factorial_prev(n)))
}

/// Density of the `n`-th nearest-neighbor distance for one component.
pub fn component_density(r: f64, n: usize, p: ComponentParams) -> Result<f64> {
    ln_component_density(r, n, p).map(f64::exp)
}

/// Numerically stable `ln Σ exp(x_i)`. Returns −∞ when every term is −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Natural log of the mixture density `Σ_l θ_l P(r | n, d_h(l), λ_l)`.
pub fn ln_mixture_density(r: f64, n: usize, params: &MixtureParams) -> Result<f64> {
    let terms = (0..params.num_components())
        .map(|l| {
            let w = params.weights[l];
            if w == 0.0 {
                Ok(f64::NEG_INFINITY)
            } else {
                Ok(w.ln() + ln_component_density(r, n, params.component(l))?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms))
}

pub fn mixture_density(r: f64, n: usize, params: &MixtureParams) -> Result<f64> {
    ln_mixture_density(r, n, params).map(f64::exp)
}

/// Log-likelihood of the distances under the mixture.
///
/// A point whose mixture density is zero makes the result −∞; this is logged
/// and returned as-is so callers can reject the parameters.
pub fn log_likelihood(data: &NnDistanceSet, params: &MixtureParams) -> Result<f64> {
    let n = data.order();
    let mut total = 0.0;
    for (i, &r) in data.distances().iter().enumerate() {
        let v = ln_mixture_density(r, n, params)?;
        if v == f64::NEG_INFINITY {
            log::warn!("distance {i} (r = {r}) has zero density; log-likelihood is -inf");
            return Ok(f64::NEG_INFINITY);
        }
        total += v;
    }
    Ok(total)
}

/// Number of free parameters: `M_d` dimensions, `M` rates, `M − 1` weights.
pub fn num_free_params(structure: &ModelStructure) -> usize {
    structure.num_clusters() + 2 * structure.num_components() - 1
}

/// Akaike information criterion `−2L + 2(M_d + 2M − 1)`.
pub fn aic(loglike: f64, structure: &ModelStructure) -> f64 {
    -2.0 * loglike + 2.0 * num_free_params(structure) as f64
}

/// Finite-sample CDF of the `n`-th nearest-neighbor distance among `k`
/// samples when each sample falls in the `r`-ball with probability
/// `p(r) = ρ rᵈ`:
///
/// ```text
/// F_n(r) = Σ_{m=n}^{k} C(k,m) (1 − p)^(k−m) pᵐ
/// ```
///
/// The limit `k → ∞` with `λ = (k−n)ρ` held fixed yields the component
/// density; this finite form is kept as a reference to check it against.
pub fn binomial_cdf_oracle(r: f64, n: usize, k: usize, rho: f64, d: f64) -> Result<f64> {
    if n == 0 || n > k {
        return Err(Error::Argument(format!("need 1 <= n <= k, got n={n}, k={k}")));
    }
    if !(r > 0.0 && rho > 0.0 && d > 0.0) {
        return Err(Error::Domain("r, rho and d must be positive".into()));
    }
    let p = rho * r.powf(d);
    if p > 1.0 {
        return Err(Error::Domain(format!("ball probability p(r) = {p} exceeds 1")));
    }
    binomial_upper_tail(k, n, p)
}

/// `Pr[X >= n]` for `X ~ Binomial(k, p)`, summed term by term in log space.
pub fn binomial_upper_tail(k: usize, n: usize, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if n == 0 {
        return Ok(1.0);
    }
    if n > k || p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let kf = k as f64;
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_kfact = libm::lgamma(kf + 1.0);
    let mode = (kf + 1.0) * p;
    let mut sum = 0.0;
    for m in n..=k {
        let mf = m as f64;
        let ln_term = ln_kfact - libm::lgamma(mf + 1.0) - libm::lgamma(kf - mf + 1.0) + mf * ln_p + (kf - mf) * ln_q;
        let term = ln_term.exp();
        sum += term;
        // Past the mode the terms decay geometrically.
        if mf > mode && term <= sum * 1e-18 {
            break;
        }
    }
    Ok(sum.min(1.0))
}
