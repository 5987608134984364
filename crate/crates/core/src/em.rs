//! EM fitting of the hierarchical mixture for a fixed model structure.
//!
//! Each iteration maximizes the Jensen lower bound
//!
//! ```text
//! L̂ = Σ_i Σ_l Q_li ln(θ_l P(r_i | n, d_h(l), λ_l)) − Q_li ln Q_li
//! ```
//!
//! first over the parameters (M step) and then over the responsibilities
//! `Q` (E step). Weights and rates have closed forms. Each cluster dimension
//! is found by a safeguarded Newton iteration on `log d_c` with the rates of
//! that cluster profiled out; the step never lowers `L̂`, so the bound is
//! non-decreasing from one half-step to the next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{self, ln_factorial_prev, MixtureParams, ModelStructure, NnDistanceSet};

/// Knobs of the fitter and of the structure search built on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop once `L̂(t) − L̂(t−1)` falls to this value or below.
    pub tol: f64,
    pub max_iter: usize,
    /// Random initializations per structure; the best final log-likelihood wins.
    pub restarts: usize,
    pub seed: u64,
    pub d_min: f64,
    pub d_max: f64,
    pub newton_max_inner: usize,
    /// Upper bound on `M` explored by the structure search.
    pub max_components: usize,
    pub init: Init,
}

/// How a restart draws its starting responsibilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Posterior of a model whose component `l` has unit dimension and a
    /// rate matched to a randomly chosen distance (distinct per component).
    #[default]
    Pivots,
    /// Independent symmetric Dirichlet(1) draws per point.
    ///
    /// Components sharing a cluster then start with statistically identical
    /// rates, which EM can take thousands of iterations to separate.
    Dirichlet,
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Init::Pivots => "pivots",
            Init::Dirichlet => "dirichlet",
        })
    }
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pivots" => Ok(Init::Pivots),
            "dirichlet" => Ok(Init::Dirichlet),
            _ => Err(Error::Argument(format!("unknown init {s:?} (expected pivots or dirichlet)"))),
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 5000,
            restarts: 8,
            seed: 0,
            d_min: 1e-3,
            d_max: 1e3,
            newton_max_inner: 50,
            max_components: 16,
            init: Init::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Argument(format!("tol must be non-negative, got {}", self.tol)));
        }
        if self.max_iter == 0 || self.restarts == 0 || self.newton_max_inner == 0 {
            return Err(Error::Argument("max_iter, restarts and newton_max_inner must be positive".into()));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::Argument(format!("need 0 < d_min < d_max, got [{}, {}]", self.d_min, self.d_max)));
        }
        if self.max_components == 0 {
            return Err(Error::Argument("max_components must be positive".into()));
        }
        Ok(())
    }
}

/// Total responsibility below which a component counts as starved.
pub const STARVATION_MASS: f64 = 1e-12;
/// Rescues allowed per run before a structure is declared infeasible.
pub const MAX_RESCUES: usize = 3;
const NEWTON_STEP_TOL: f64 = 1e-10;
const MAX_LOG_STEP: f64 = 1.0;
const RESCUE_FRACTION: f64 = 0.05;

/// A component (or cluster) whose responsibility mass vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("component {component} has no responsibility mass")]
pub struct Starvation {
    pub component: usize,
}

/// Posterior component memberships `Q`, stored component-major (`M × k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    components: usize,
    points: usize,
    q: Vec<f64>,
}

const COLUMN_SUM_TOL: f64 = 1e-10;

impl Responsibilities {
    /// `rows[l][i]` is the responsibility of component `l` for point `i`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let components = rows.len();
        let points = rows.first().map_or(0, Vec::len);
        if components == 0 || points == 0 || rows.iter().any(|r| r.len() != points) {
            return Err(Error::Argument("responsibility rows must be non-empty and equal length".into()));
        }
        let q: Vec<f64> = rows.into_iter().flatten().collect();
        let r = Self { components, points, q };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        if self.q.iter().any(|&v| !(0.0..=1.0 + COLUMN_SUM_TOL).contains(&v)) {
            return Err(Error::Domain("responsibilities must lie in [0, 1]".into()));
        }
        for i in 0..self.points {
            let s: f64 = (0..self.components).map(|l| self.get(l, i)).sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::Domain(format!("responsibilities of point {i} sum to {s}")));
            }
        }
        Ok(())
    }

    /// Every point wholly owned by the single component.
    pub fn single(points: usize) -> Self {
        Self { components: 1, points, q: vec![1.0; points] }
    }

    pub fn uniform(components: usize, points: usize) -> Self {
        Self { components, points, q: vec![1.0 / components as f64; components * points] }
    }

    pub fn num_components(&self) -> usize {
        self.components
    }

    pub fn num_points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.q[l * self.points + i]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.q[l * self.points..(l + 1) * self.points]
    }

    fn row_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.q[l * self.points..(l + 1) * self.points]
    }

    /// Total responsibility `Σ_i Q_li` of each component.
    pub fn masses(&self) -> Vec<f64> {
        (0..self.components).map(|l| self.row(l).iter().sum()).collect()
    }
}

/// Outcome of the Newton solve for one cluster dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimUpdate {
    pub dim: f64,
    pub iterations: usize,
    /// The maximizer lies at or beyond a `[d_min, d_max]` bound.
    pub clamped: bool,
}

/// A converged (or capped) fit for one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: MixtureParams,
    /// Posterior responsibilities at `params`.
    pub resp: Responsibilities,
    /// Mixture log-likelihood at `params`.
    pub loglike: f64,
    /// `L̂` at the final M step.
    pub lower_bound: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `cluster_probs[i][c]`: probability that point `i` belongs to cluster `c`.
    pub cluster_probs: Vec<Vec<f64>>,
    /// Responsibility-weighted mean dimension over the points.
    pub avg_dimension: f64,
    /// Index of the restart that produced this fit.
    pub restart: usize,
    /// `L̂` after each M step.
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn structure(&self) -> &ModelStructure {
        self.params.structure()
    }

    /// Argmax cluster of each point, first index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.cluster_probs.iter().map(|row| argmax(row)).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = c;
        }
    }
    best
}

fn log_distances(data: &NnDistanceSet) -> Vec<f64> {
    data.distances().iter().map(|r| r.ln()).collect()
}

fn check_resp(data: &NnDistanceSet, resp: &Responsibilities, m: usize) -> Result<()> {
    if resp.num_points() != data.len() || resp.num_components() != m {
        return Err(Error::Argument(format!(
            "responsibilities are {}x{}, expected {m}x{}",
            resp.num_components(),
            resp.num_points(),
            data.len()
        )));
    }
    Ok(())
}

/// Jensen lower bound `L̂` of the log-likelihood; `0 · ln 0` counts as 0.
pub fn lower_bound(data: &NnDistanceSet, params: &MixtureParams, resp: &Responsibilities) -> Result<f64> {
    check_resp(data, resp, params.num_components())?;
    Ok(lower_bound_log_r(&log_distances(data), data.order(), params, resp))
}

/// `ln θ_l + ln P(r | n, d, λ_l)` as `offset + slope ln r − λ rᵈ`.
#[derive(Clone, Copy)]
struct WeightedLogDensity {
    offset: f64,
    slope: f64,
    dim: f64,
    rate: f64,
}

impl WeightedLogDensity {
    fn of(params: &MixtureParams, l: usize, n: usize, ln_norm: f64) -> Self {
        let nf = n as f64;
        let dim = params.dim_of_component(l);
        let rate = params.rates()[l];
        Self {
            offset: params.weights()[l].ln() + dim.ln() + nf * rate.ln() - ln_norm,
            slope: nf * dim - 1.0,
            dim,
            rate,
        }
    }

    #[inline]
    fn at(&self, log_r: f64) -> f64 {
        self.offset + self.slope * log_r - self.rate * (self.dim * log_r).exp()
    }
}

fn lower_bound_log_r(log_r: &[f64], n: usize, params: &MixtureParams, resp: &Responsibilities) -> f64 {
    let ln_norm = ln_factorial_prev(n);
    let mut total = 0.0;
    for l in 0..params.num_components() {
        let f = WeightedLogDensity::of(params, l, n, ln_norm);
        for (i, &q) in resp.row(l).iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let a = f.at(log_r[i]);
            if a == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += q * (a - q.ln());
        }
    }
    total
}

/// Weight update `θ_l = Σ_i Q_li / Σ_l Σ_i Q_li`.
pub fn m_step_theta(resp: &Responsibilities) -> Vec<f64> {
    let masses = resp.masses();
    let total: f64 = masses.iter().sum();
    masses.into_iter().map(|m| m / total).collect()
}

/// Rate update `λ_l = n Σ_i Q_li / Σ_i Q_li r_i^d_h(l)`.
pub fn m_step_lambda(
    data: &NnDistanceSet,
    resp: &Responsibilities,
    dims_by_component: &[f64],
) -> std::result::Result<Vec<f64>, Starvation> {
    m_step_lambda_log_r(&log_distances(data), data.order(), resp, dims_by_component)
}

fn m_step_lambda_log_r(
    log_r: &[f64],
    n: usize,
    resp: &Responsibilities,
    dims_by_component: &[f64],
) -> std::result::Result<Vec<f64>, Starvation> {
    (0..resp.num_components())
        .map(|l| {
            let row = resp.row(l);
            let mass: f64 = row.iter().sum();
            if mass < STARVATION_MASS {
                return Err(Starvation { component: l });
            }
            let sums = PowerSums::new(log_r, row, dims_by_component[l]);
            Ok(((n as f64 * mass).ln() - sums.ln_s0()).exp())
        })
        .collect()
}

/// `Σ_i Q_i r_iᵈ (ln r_i)^j` for `j = 0, 1, 2`, all scaled by `exp(−shift)`.
struct PowerSums {
    shift: f64,
    s0: f64,
    s1: f64,
    s2: f64,
}

impl PowerSums {
    fn new(log_r: &[f64], row: &[f64], d: f64) -> Self {
        let shift =
            row.iter().zip(log_r).filter(|(&q, _)| q > 0.0).map(|(_, &lr)| d * lr).fold(f64::NEG_INFINITY, f64::max);
        let sums = Self::accumulate(log_r, row, shift, |q, i| q * (d * log_r[i] - shift).exp());
        if sums.s0.is_normal() {
            return sums;
        }
        // Every term underflowed: shift by the full log weight instead.
        let shift = row
            .iter()
            .zip(log_r)
            .filter(|(&q, _)| q > 0.0)
            .map(|(&q, &lr)| q.ln() + d * lr)
            .fold(f64::NEG_INFINITY, f64::max);
        Self::accumulate(log_r, row, shift, |q, i| (q.ln() + d * log_r[i] - shift).exp())
    }

    /// Sums `w (ln r)^j` with `w = weight(Q_i, i)` over points with `Q_i > 0`.
    #[inline]
    fn accumulate(log_r: &[f64], row: &[f64], shift: f64, weight: impl Fn(f64, usize) -> f64) -> Self {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (i, (&q, &lr)) in row.iter().zip(log_r).enumerate() {
            if q == 0.0 {
                continue;
            }
            let w = weight(q, i);
            s0 += w;
            s1 += w * lr;
            s2 += w * lr * lr;
        }
        Self { shift, s0, s1, s2 }
    }

    fn ln_s0(&self) -> f64 {
        self.s0.ln() + self.shift
    }
}

/// Per-cluster sufficient statistics reused by every Newton evaluation.
struct ClusterStats<'a> {
    log_r: &'a [f64],
    rows: Vec<&'a [f64]>,
    masses: Vec<f64>,
    /// Largest `ln r` carrying responsibility, per component and overall.
    max_log_r: Vec<f64>,
    cluster_max_log_r: f64,
    total_mass: f64,
    weighted_log_sum: f64,
    n: f64,
}

/// Score, curvature and profile objective at one value of `log d`, with
/// `ln S_l(d)` for each component of the cluster.
struct NewtonEval {
    score: f64,
    curvature: f64,
    objective: f64,
    ln_s: Vec<f64>,
}

/// Below this, a sum sharing the cluster-wide shift is recomputed with its own.
const SHARED_SHIFT_FLOOR: f64 = 1e-200;

impl<'a> ClusterStats<'a> {
    fn new(
        log_r: &'a [f64],
        n: usize,
        resp: &'a Responsibilities,
        structure: &ModelStructure,
        c: usize,
    ) -> std::result::Result<Self, Starvation> {
        let range = structure.components_of(c);
        let rows: Vec<&[f64]> = range.clone().map(|l| resp.row(l)).collect();
        let masses: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        for (l, &m) in range.zip(&masses) {
            if m < STARVATION_MASS {
                return Err(Starvation { component: l });
            }
        }
        let max_log_r: Vec<f64> = rows
            .iter()
            .map(|row| {
                row.iter().zip(log_r).filter(|(&q, _)| q > 0.0).map(|(_, &lr)| lr).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let cluster_max_log_r = max_log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total_mass = masses.iter().sum();
        let weighted_log_sum = rows.iter().map(|row| row.iter().zip(log_r).map(|(q, lr)| q * lr).sum::<f64>()).sum();
        Ok(Self { log_r, rows, masses, max_log_r, cluster_max_log_r, total_mass, weighted_log_sum, n: n as f64 })
    }

    /// Power sums of every component at `d`, sharing one `exp` per point.
    fn power_sums(&self, d: f64) -> Vec<PowerSums> {
        let shift = d * self.cluster_max_log_r;
        let scaled: Vec<f64> = self.log_r.iter().map(|&lr| (d * lr - shift).exp()).collect();
        self.rows
            .iter()
            .zip(&self.max_log_r)
            .map(|(row, &own_max)| {
                let shared = PowerSums::accumulate(self.log_r, row, shift, |q, i| q * scaled[i]);
                if shared.s0 >= SHARED_SHIFT_FLOOR {
                    shared
                } else {
                    let own = d * own_max;
                    let sums = PowerSums::accumulate(self.log_r, row, own, |q, i| q * (d * self.log_r[i] - own).exp());
                    if sums.s0.is_normal() {
                        sums
                    } else {
                        PowerSums::new(self.log_r, row, d)
                    }
                }
            })
            .collect()
    }

    /// With every rate of the cluster at its closed-form optimum for `d`,
    /// the bound depends on `d` through
    /// `f(d) = N_c ln d − n Σ_l N_l ln S_l(d) + n d Σ_i w_i ln r_i`,
    /// where `S_l(d) = Σ_i Q_li r_iᵈ`. The score is `(1/n) ∂f/∂ln d`:
    /// `Σ_l Σ_i Q_li (d ln r_i − d E_l[ln x] + 1/n)`, with
    /// `E_l[g] = Σ_i Q_li r_iᵈ g(r_i) / S_l(d)`.
    fn eval(&self, log_d: f64) -> NewtonEval {
        let d = log_d.exp();
        let mut moment_term = 0.0;
        let mut variance_term = 0.0;
        let mut ln_s_term = 0.0;
        let mut ln_s = Vec::with_capacity(self.rows.len());
        for (sums, &mass) in self.power_sums(d).iter().zip(&self.masses) {
            let mean = sums.s1 / sums.s0;
            let var = (sums.s2 / sums.s0 - mean * mean).max(0.0);
            moment_term += mass * mean;
            variance_term += mass * var;
            let l = sums.ln_s0();
            ln_s_term += mass * l;
            ln_s.push(l);
        }
        let score = self.total_mass / self.n + d * (self.weighted_log_sum - moment_term);
        // Expected-information form: d² Var + 1/n per unit mass, always positive.
        let curvature = d * d * variance_term + self.total_mass / self.n;
        let objective = self.total_mass * log_d - self.n * ln_s_term + self.n * d * self.weighted_log_sum;
        NewtonEval { score, curvature, objective, ln_s }
    }
}

/// Newton iteration on `log d_c` for cluster `c`, starting from `d_current`.
///
/// Steps are capped at one unit of `log d`, kept inside a sign bracket of
/// the score (bisecting when a step leaves it) and confined to
/// `[d_min, d_max]`. The returned dimension never lowers the bound relative
/// to `d_current`.
pub fn newton_update_dim(
    data: &NnDistanceSet,
    resp: &Responsibilities,
    structure: &ModelStructure,
    c: usize,
    d_current: f64,
    config: &FitConfig,
) -> std::result::Result<DimUpdate, Starvation> {
    let log_r = log_distances(data);
    let stats = ClusterStats::new(&log_r, data.order(), resp, structure, c)?;
    Ok(newton_solve(&stats, d_current, config).0)
}

/// Also returns `ln S_l` at the chosen dimension for each component.
fn newton_solve(stats: &ClusterStats<'_>, d_current: f64, config: &FitConfig) -> (DimUpdate, Vec<f64>) {
    let (lo_bound, hi_bound) = (config.d_min.ln(), config.d_max.ln());
    let start = d_current.ln().clamp(lo_bound, hi_bound);
    let (mut lo, mut hi) = (lo_bound, hi_bound);
    let start_eval = stats.eval(start);
    let mut u = start;
    let mut current: Option<NewtonEval> = None;
    let mut iterations = 0;
    for it in 1..=config.newton_max_inner {
        iterations = it;
        let e = current.as_ref().unwrap_or(&start_eval);
        let (score, curvature) = (e.score, e.curvature);
        if score > 0.0 {
            lo = u;
        } else if score < 0.0 {
            hi = u;
        } else {
            break;
        }
        let step = (score / curvature).clamp(-MAX_LOG_STEP, MAX_LOG_STEP);
        let mut next = u + step;
        if step.is_finite() && next >= hi_bound && hi == hi_bound {
            next = hi_bound;
        } else if step.is_finite() && next <= lo_bound && lo == lo_bound {
            next = lo_bound;
        } else if !(step.is_finite() && curvature > 0.0 && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() < NEWTON_STEP_TOL {
            break;
        }
        u = next;
        current = Some(stats.eval(u));
    }
    match current {
        Some(e) if e.objective >= start_eval.objective => (
            DimUpdate {
                dim: if u >= hi_bound {
                    config.d_max
                } else if u <= lo_bound {
                    config.d_min
                } else {
                    u.exp()
                },
                iterations,
                clamped: at_bound(u, e.score, lo_bound, hi_bound),
            },
            e.ln_s,
        ),
        // Never trade bound for an unfinished solve.
        _ => (
            DimUpdate { dim: start.exp(), iterations, clamped: at_bound(start, start_eval.score, lo_bound, hi_bound) },
            start_eval.ln_s,
        ),
    }
}

fn at_bound(u: f64, score: f64, lo: f64, hi: f64) -> bool {
    const EDGE: f64 = 1e-9;
    (u >= hi - EDGE && score > 0.0) || (u <= lo + EDGE && score < 0.0)
}

/// Posterior responsibilities `Q_li ∝ θ_l P(r_i | n, d_h(l), λ_l)`.
///
/// A point whose every component density is zero gets uniform
/// responsibilities and a warning.
pub fn e_step(data: &NnDistanceSet, params: &MixtureParams) -> Responsibilities {
    e_step_log_r(&log_distances(data), data.order(), params).resp
}

struct EStep {
    resp: Responsibilities,
    loglike: f64,
    point_loglike: Vec<f64>,
    /// `Σ Q ln Q` of the new responsibilities.
    neg_entropy: f64,
}

fn e_step_log_r(log_r: &[f64], n: usize, params: &MixtureParams) -> EStep {
    let m = params.num_components();
    let k = log_r.len();
    let ln_norm = ln_factorial_prev(n);
    let mut a = vec![0.0; m * k];
    let mut powers = vec![0.0; k];
    for c in 0..params.structure().num_clusters() {
        let d = params.dims()[c];
        for (p, &lr) in powers.iter_mut().zip(log_r) {
            *p = (d * lr).exp();
        }
        for l in params.structure().components_of(c) {
            let f = WeightedLogDensity::of(params, l, n, ln_norm);
            for ((slot, &lr), &p) in a[l * k..(l + 1) * k].iter_mut().zip(log_r).zip(&powers) {
                *slot = f.offset + f.slope * lr - f.rate * p;
            }
        }
    }
    let mut point_loglike = Vec::with_capacity(k);
    let mut neg_entropy = 0.0;
    let mut flagged = 0usize;
    let mut terms = vec![0.0; m];
    for i in 0..k {
        let max = (0..m).map(|l| a[l * k + i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = if max.is_finite() {
            let mut sum = 0.0;
            for (l, t) in terms.iter_mut().enumerate() {
                *t = (a[l * k + i] - max).exp();
                sum += *t;
            }
            let ln_sum = sum.ln();
            for (l, &t) in terms.iter().enumerate() {
                let q = t / sum;
                if q > 0.0 {
                    neg_entropy += q * (a[l * k + i] - max - ln_sum);
                }
                a[l * k + i] = q;
            }
            max + ln_sum
        } else {
            flagged += 1;
            for l in 0..m {
                a[l * k + i] = 1.0 / m as f64;
            }
            neg_entropy -= (m as f64).ln();
            max
        };
        point_loglike.push(lse);
    }
    if flagged > 0 {
        log::warn!("{flagged} point(s) have zero density under every component; responsibilities set uniform");
    }
    let loglike = point_loglike.iter().sum();
    EStep { resp: Responsibilities { components: m, points: k, q: a }, loglike, point_loglike, neg_entropy }
}

/// Symmetric Dirichlet(1) responsibilities for every point.
pub fn random_responsibilities(components: usize, points: usize, rng: &mut impl Rng) -> Responsibilities {
    if components == 1 {
        return Responsibilities::single(points);
    }
    let mut q = vec![0.0; components * points];
    let mut draw = vec![0.0; components];
    for i in 0..points {
        for v in draw.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *v = e.max(f64::MIN_POSITIVE);
        }
        let s: f64 = draw.iter().sum();
        for l in 0..components {
            q[l * points + i] = draw[l] / s;
        }
    }
    Responsibilities { components, points, q }
}

/// Posterior under equal weights, unit dimensions and rates `n / r_j` at
/// `components` distinct random pivots `j`.
pub fn pivot_responsibilities(data: &NnDistanceSet, components: usize, rng: &mut impl Rng) -> Responsibilities {
    let k = data.len();
    let pivots = rand::seq::index::sample(rng, k, components);
    let n = data.order();
    let rates: Vec<f64> = pivots.iter().map(|j| n as f64 / data.distances()[j]).collect();
    let structure = ModelStructure::new(vec![1; components]).expect("components > 0");
    let params = MixtureParams::new(structure, vec![1.0; components], rates, vec![1.0 / components as f64; components])
        .expect("pivot rates are positive and finite");
    e_step(data, &params)
}

/// Seed of restart `restart` derived from the base seed (splitmix64 mixing).
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    let mut z = seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One EM run from a given initialization, advanced half-step by half-step.
pub struct EmRun<'a> {
    data: &'a NnDistanceSet,
    log_r: Vec<f64>,
    structure: ModelStructure,
    config: FitConfig,
    resp: Responsibilities,
    dims: Vec<f64>,
    params: Option<MixtureParams>,
    point_loglike: Vec<f64>,
    loglike: f64,
    /// `Σ Q ln Q` of the current responsibilities, once known.
    neg_entropy: Option<f64>,
    rescues: usize,
    clamped: bool,
}

impl<'a> EmRun<'a> {
    pub fn new(
        data: &'a NnDistanceSet,
        structure: ModelStructure,
        resp: Responsibilities,
        config: FitConfig,
    ) -> Result<Self> {
        check_resp(data, &resp, structure.num_components())?;
        let dims = vec![1.0_f64.clamp(config.d_min, config.d_max); structure.num_clusters()];
        Ok(Self {
            log_r: log_distances(data),
            point_loglike: vec![0.0; data.len()],
            data,
            structure,
            config,
            resp,
            dims,
            params: None,
            loglike: f64::NEG_INFINITY,
            neg_entropy: None,
            rescues: 0,
            clamped: false,
        })
    }

    /// Starts from seeded random responsibilities drawn as `config.init` says.
    pub fn seeded(data: &'a NnDistanceSet, structure: ModelStructure, seed: u64, config: FitConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = structure.num_components();
        let resp = match config.init {
            Init::Pivots if m > 1 && m <= data.len() => pivot_responsibilities(data, m, &mut rng),
            _ => random_responsibilities(m, data.len(), &mut rng),
        };
        Self::new(data, structure, resp, config)
    }

    pub fn params(&self) -> Option<&MixtureParams> {
        self.params.as_ref()
    }

    pub fn resp(&self) -> &Responsibilities {
        &self.resp
    }

    pub fn rescues(&self) -> usize {
        self.rescues
    }

    /// Whether the latest M step left some dimension pinned at a clamp.
    pub fn clamped(&self) -> bool {
        self.clamped
    }

    /// `L̂` at the current parameters and responsibilities.
    pub fn lower_bound(&self) -> f64 {
        match &self.params {
            Some(p) => lower_bound_log_r(&self.log_r, self.data.order(), p, &self.resp),
            None => f64::NEG_INFINITY,
        }
    }

    /// Maximizes `L̂` over the parameters and returns the new bound.
    pub fn m_step(&mut self) -> Result<f64> {
        self.rescue_starved()?;
        let n = self.data.order();
        let weights = m_step_theta(&self.resp);
        let masses = self.resp.masses();
        let mut clamped = false;
        let mut rates = vec![0.0; self.structure.num_components()];
        for c in 0..self.structure.num_clusters() {
            let stats =
                ClusterStats::new(&self.log_r, n, &self.resp, &self.structure, c).map_err(|s| self.infeasible(s))?;
            let (update, ln_s) = newton_solve(&stats, self.dims[c], &self.config);
            self.dims[c] = update.dim;
            clamped |= update.clamped;
            for (l, ln_s) in self.structure.components_of(c).zip(ln_s) {
                // λ_l = n N_l / S_l(d_c)
                rates[l] = ((n as f64 * masses[l]).ln() - ln_s).exp();
            }
        }
        self.clamped = clamped;
        if let Some(l) = rates.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Infeasible {
                structure: self.structure.to_string(),
                reason: format!(
                    "component {l} degenerated (dimension {}, rate {})",
                    self.dims[self.structure.cluster_of(l)],
                    rates[l]
                ),
            });
        }
        let weights = renormalize(weights);
        let params = MixtureParams::new(self.structure.clone(), self.dims.clone(), rates, weights)?;
        let neg_entropy = match self.neg_entropy {
            Some(h) => h,
            None => {
                let h = self.resp.q.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum();
                self.neg_entropy = Some(h);
                h
            }
        };
        let bound = bound_at_optimal_rates(&self.log_r, n, &params, &self.resp, neg_entropy);
        self.params = Some(params);
        Ok(bound)
    }

    /// Sets the responsibilities to the posterior and returns the new bound,
    /// which equals the log-likelihood.
    pub fn e_step(&mut self) -> f64 {
        let params = self.params.as_ref().expect("e_step requires a prior m_step");
        let e = e_step_log_r(&self.log_r, self.data.order(), params);
        self.resp = e.resp;
        self.point_loglike = e.point_loglike;
        self.loglike = e.loglike;
        self.neg_entropy = Some(e.neg_entropy);
        self.loglike
    }

    /// Log-likelihood at the parameters of the latest E step.
    pub fn loglike(&self) -> f64 {
        self.loglike
    }

    fn infeasible(&self, s: Starvation) -> Error {
        Error::Infeasible { structure: self.structure.to_string(), reason: s.to_string() }
    }

    /// Re-seeds starved components from the worst-explained points.
    fn rescue_starved(&mut self) -> Result<()> {
        loop {
            let masses = self.resp.masses();
            let Some(starved) = masses.iter().position(|&m| m < STARVATION_MASS) else {
                return Ok(());
            };
            if self.rescues >= MAX_RESCUES {
                return Err(Error::Infeasible {
                    structure: self.structure.to_string(),
                    reason: format!("component {starved} starved after {MAX_RESCUES} rescues"),
                });
            }
            self.rescues += 1;
            self.neg_entropy = None;
            let k = self.resp.num_points();
            let take = ((RESCUE_FRACTION * k as f64).ceil() as usize).clamp(1, k);
            let mut worst: Vec<usize> = (0..k).collect();
            worst.sort_by(|&a, &b| self.point_loglike[a].total_cmp(&self.point_loglike[b]).then(a.cmp(&b)));
            log::debug!(
                "rescuing component {starved} of {} from {take} points (rescue {})",
                self.structure,
                self.rescues
            );
            for &i in &worst[..take] {
                for l in 0..self.resp.num_components() {
                    let v = &mut self.resp.row_mut(l)[i];
                    *v = 0.5 * *v + if l == starved { 0.5 } else { 0.0 };
                }
            }
        }
    }

    /// Runs M/E iterations until the bound stalls or the cap is hit.
    pub fn run(mut self, restart: usize) -> Result<FitResult> {
        let mut trace = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        let mut after_e = f64::NEG_INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        for t in 1..=self.config.max_iter {
            iterations = t;
            let rescues = self.rescues;
            let lb = self.m_step()?;
            if self.rescues > rescues {
                // A rescue moves responsibilities away from the optimum.
                prev = f64::NEG_INFINITY;
                after_e = f64::NEG_INFINITY;
            }
            debug_assert!(lb >= after_e - monotone_slack(after_e), "M step lowered the bound: {after_e} -> {lb}");
            trace.push(lb);
            after_e = self.e_step();
            debug_assert!(after_e >= lb - monotone_slack(lb), "E step lowered the bound: {lb} -> {after_e}");
            if lb - prev <= self.config.tol {
                converged = true;
                break;
            }
            prev = lb;
        }
        let lower_bound = *trace.last().expect("at least one iteration");
        let params = self.params.take().expect("fit ran an m_step");
        let converged = converged && !self.clamped;
        Ok(summarize(params, self.resp, self.loglike, lower_bound, iterations, converged, restart, trace))
    }
}

/// `L̂` from sufficient statistics when every rate is at its optimum, where
/// `λ_l S_l = n N_l`:
/// `Σ_l N_l (ln θ_l + ln d + n ln λ_l − ln (n−1)! − n) + (nd − 1) Σ_i Q_li ln r_i − Σ Q ln Q`.
fn bound_at_optimal_rates(
    log_r: &[f64],
    n: usize,
    params: &MixtureParams,
    resp: &Responsibilities,
    neg_entropy: f64,
) -> f64 {
    let nf = n as f64;
    let ln_norm = ln_factorial_prev(n);
    let mut total = -neg_entropy;
    for (l, &rate) in params.rates().iter().enumerate() {
        let row = resp.row(l);
        let mass: f64 = row.iter().sum();
        let weighted_log_r: f64 = row.iter().zip(log_r).map(|(q, lr)| q * lr).sum();
        let dim = params.dim_of_component(l);
        total += mass * (params.weights()[l].ln() + dim.ln() + nf * rate.ln() - ln_norm - nf)
            + (nf * dim - 1.0) * weighted_log_r;
    }
    total
}

fn monotone_slack(reference: f64) -> f64 {
    if reference.is_finite() {
        1e-8 * reference.abs().max(1.0)
    } else {
        0.0
    }
}

fn renormalize(weights: Vec<f64>) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / s).collect()
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    params: MixtureParams,
    resp: Responsibilities,
    loglike: f64,
    lower_bound: f64,
    iterations: usize,
    converged: bool,
    restart: usize,
    trace: Vec<f64>,
) -> FitResult {
    let structure = params.structure().clone();
    let k = resp.num_points();
    let md = structure.num_clusters();
    let assignment = structure.assignment();
    let mut cluster_probs = vec![vec![0.0; md]; k];
    let mut dim_sum = 0.0;
    for (l, &c) in assignment.iter().enumerate() {
        let d = params.dims()[c];
        for (i, &q) in resp.row(l).iter().enumerate() {
            cluster_probs[i][c] += q;
            dim_sum += q * d;
        }
    }
    FitResult {
        aic: model::aic(loglike, &structure),
        avg_dimension: dim_sum / k as f64,
        params,
        resp,
        loglike,
        lower_bound,
        iterations,
        converged,
        cluster_probs,
        restart,
        trace,
    }
}

/// Fits `structure` to `data` by EM with `config.restarts` seeded restarts,
/// keeping the run with the highest final log-likelihood.
///
/// Restarts whose components starve beyond rescue are discarded; if all of
/// them do, the structure is reported infeasible.
pub fn fit(data: &NnDistanceSet, structure: &ModelStructure, seed: u64, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no distances to fit".into()));
    }
    // A single component has nothing random to initialize.
    let restarts = if structure.num_components() == 1 { 1 } else { config.restarts };
    let outcomes: Vec<Result<FitResult>> = (0..restarts)
        .into_par_iter()
        .map(|r| EmRun::seeded(data, structure.clone(), restart_seed(seed, r), config.clone())?.run(r))
        .collect();
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for outcome in outcomes {
        match outcome {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.loglike > b.loglike) {
                    best = Some(fit);
                }
            }
            Err(e @ Error::Infeasible { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.expect("every restart failed"))
}
