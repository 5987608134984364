//! Greedy AIC descent over model structures.
//!
//! Starting from `(1)`, every step fits all one-component expansions of the
//! current structure and moves to the one with the lowest AIC, stopping when
//! no expansion improves on the current model.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{ModelStructure, NnDistanceSet};

/// Every structure reachable from `structure` by adding one component.
///
/// Candidates are the tuples `(n_1, …, n_{M_d+1})` with
/// `n_1 ≥ … ≥ n_{M_d+1} ≥ 0`, `n_i ≥ m_i` for `i ≤ M_d` and `Σ n_i = M + 1`.
/// A trailing zero is dropped, so a candidate either grows one existing
/// cluster or opens a new single-component cluster. Sorted, no duplicates.
pub fn expand(structure: &ModelStructure) -> Vec<ModelStructure> {
    let m = structure.counts();
    let mut out = Vec::new();
    for i in 0..m.len() {
        let mut counts = m.to_vec();
        counts[i] += 1;
        if let Ok(s) = ModelStructure::new(counts) {
            out.push(s);
        }
    }
    let mut counts = m.to_vec();
    counts.push(1);
    out.push(ModelStructure::new(counts).expect("appending 1 keeps the tuple non-increasing"));
    out.sort();
    out.dedup();
    out
}

/// One evaluated structure in the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub structure: ModelStructure,
    /// `None` when the structure was infeasible (AIC = +∞).
    pub aic: Option<f64>,
    pub loglike: Option<f64>,
    pub converged: bool,
    pub seed: u64,
    pub accepted: bool,
}

impl TraceEntry {
    fn from_fit(step: usize, seed: u64, structure: &ModelStructure, fit: &Option<FitResult>) -> Self {
        Self {
            step,
            structure: structure.clone(),
            aic: fit.as_ref().map(|f| f.aic),
            loglike: fit.as_ref().map(|f| f.loglike),
            converged: fit.as_ref().is_some_and(|f| f.converged),
            seed,
            accepted: false,
        }
    }

    pub fn aic_or_inf(&self) -> f64 {
        self.aic.unwrap_or(f64::INFINITY)
    }
}

/// Where the search stopped and how it got there.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub current: ModelStructure,
    pub current_fit: FitResult,
    /// Number of accepted expansions.
    pub step: usize,
    pub history: Vec<TraceEntry>,
}

/// Orders candidates by AIC, then fewer components, fewer clusters, and
/// finally the tuple itself.
fn candidate_order(a: (&ModelStructure, f64), b: (&ModelStructure, f64)) -> Ordering {
    a.1.total_cmp(&b.1)
        .then(a.0.num_components().cmp(&b.0.num_components()))
        .then(a.0.num_clusters().cmp(&b.0.num_clusters()))
        .then(a.0.counts().cmp(b.0.counts()))
}

fn fit_or_infeasible(
    data: &NnDistanceSet,
    structure: &ModelStructure,
    config: &FitConfig,
) -> Result<Option<FitResult>> {
    match fit(data, structure, config.seed, config) {
        Ok(f) => Ok(Some(f)),
        Err(Error::Infeasible { structure, reason }) => {
            log::info!("structure {structure} infeasible: {reason}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs the structure search and returns the locally AIC-minimal fit.
pub fn search(data: &NnDistanceSet, config: &FitConfig) -> Result<SearchState> {
    config.validate()?;
    let start = ModelStructure::single();
    let first = fit_or_infeasible(data, &start, config)?.ok_or_else(|| Error::Infeasible {
        structure: start.to_string(),
        reason: "the single-component model could not be fit".into(),
    })?;
    let mut history =
        vec![TraceEntry { accepted: true, ..TraceEntry::from_fit(0, config.seed, &start, &Some(first.clone())) }];
    let mut state_fit = first;
    let mut current = start;
    let mut step = 0;

    loop {
        if current.num_components() + 1 > config.max_components {
            log::info!("stopping at {current}: max_components = {} reached", config.max_components);
            break;
        }
        let candidates = expand(&current);
        let fits: Vec<Result<Option<FitResult>>> =
            candidates.par_iter().map(|s| fit_or_infeasible(data, s, config)).collect();
        let mut evaluated = Vec::with_capacity(candidates.len());
        for (s, f) in candidates.into_iter().zip(fits) {
            let f = f?;
            history.push(TraceEntry::from_fit(step + 1, config.seed, &s, &f));
            evaluated.push((s, f));
        }
        if step == 0 && evaluated.iter().all(|(_, f)| f.is_none()) {
            log::warn!("every expansion of (1) is infeasible; keeping the single-component model");
        }
        let best = evaluated
            .iter()
            .enumerate()
            .filter_map(|(idx, (s, f))| f.as_ref().map(|f| (idx, s, f.aic)))
            .min_by(|a, b| candidate_order((a.1, a.2), (b.1, b.2)));
        let Some((idx, _, aic)) = best else { break };
        if !(aic < state_fit.aic) {
            break;
        }
        let offset = history.len() - evaluated.len();
        history[offset + idx].accepted = true;
        let (s, f) = evaluated.swap_remove(idx);
        current = s;
        state_fit = f.expect("accepted candidate was fit");
        step += 1;
    }

    Ok(SearchState { current, current_fit: state_fit, step, history })
}
