//! Versioned, self-describing result documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::em::{argmax, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::io::image::Mask;
use crate::model::ModelStructure;
use crate::search::TraceEntry;

pub const SCHEMA_VERSION: &str = "dimclust-result/1";

/// Everything needed to audit or reuse a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: String,
    /// SHA-256 of the input file bytes, hex encoded.
    pub input_fingerprint: String,
    pub neighbor_order: usize,
    pub structure: ModelStructure,
    pub dims: Vec<f64>,
    pub rates: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row of the input each fitted point came from.
    pub point_indices: Vec<usize>,
    pub cluster_probs: Vec<Vec<f64>>,
    pub hard_labels: Vec<usize>,
    pub avg_dimension: f64,
    pub loglike: f64,
    pub lower_bound: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub search_trace: Vec<TraceEntry>,
    pub config: FitConfig,
}

impl ResultDocument {
    pub fn from_fit(
        fit: &FitResult,
        neighbor_order: usize,
        point_indices: Vec<usize>,
        search_trace: Vec<TraceEntry>,
        config: &FitConfig,
        input_fingerprint: String,
    ) -> Result<Self> {
        if point_indices.len() != fit.cluster_probs.len() {
            return Err(Error::Argument(format!(
                "{} point indices for {} fitted points",
                point_indices.len(),
                fit.cluster_probs.len()
            )));
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION.to_string(),
            input_fingerprint,
            neighbor_order,
            structure: fit.structure().clone(),
            dims: fit.params.dims().to_vec(),
            rates: fit.params.rates().to_vec(),
            weights: fit.params.weights().to_vec(),
            point_indices,
            hard_labels: fit.hard_labels(),
            cluster_probs: fit.cluster_probs.clone(),
            avg_dimension: fit.avg_dimension,
            loglike: fit.loglike,
            lower_bound: fit.lower_bound,
            aic: fit.aic,
            iterations: fit.iterations,
            converged: fit.converged,
            search_trace,
            config: config.clone(),
        })
    }

    /// Cluster with the highest dimension (first on ties).
    pub fn feature_cluster(&self) -> usize {
        argmax(&self.dims)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if found != SCHEMA_VERSION {
            return Err(Error::Version { found: found.to_string(), expected: SCHEMA_VERSION.to_string() });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn write_result(doc: &ResultDocument, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, doc.to_json()?)?;
    Ok(())
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    ResultDocument::from_json(&fs::read_to_string(path)?)
}

/// Hex SHA-256 of some bytes.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Compares a document's fingerprint against the current input, logging a
/// warning on mismatch. Returns whether they agree.
pub fn check_fingerprint(doc: &ResultDocument, input: &[u8]) -> bool {
    let now = fingerprint(input);
    let same = now == doc.input_fingerprint;
    if !same {
        log::warn!("input fingerprint changed: document has {}, input is {now}", doc.input_fingerprint);
    }
    same
}

/// Pixels whose hard label is the feature cluster.
///
/// Points are mapped back to pixels through `point_indices` (row-major
/// pixel order). Pixels absent from the fit are left unset.
pub fn feature_cluster_mask(doc: &ResultDocument, width: usize, height: usize) -> Result<Mask> {
    let pixels = width * height;
    if doc.point_indices.len() != doc.hard_labels.len() {
        return Err(Error::Argument("document has mismatched index and label counts".into()));
    }
    if doc.point_indices.len() > pixels || doc.point_indices.iter().any(|&i| i >= pixels) {
        return Err(Error::Argument(format!(
            "result covers {} points, which does not fit a {width}x{height} image",
            doc.point_indices.len()
        )));
    }
    let feature = doc.feature_cluster();
    let mut bits = vec![false; pixels];
    for (&i, &label) in doc.point_indices.iter().zip(&doc.hard_labels) {
        bits[i] = label == feature;
    }
    Ok(Mask { width, height, bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_doc() -> ResultDocument {
        ResultDocument {
            schema_version: SCHEMA_VERSION.into(),
            input_fingerprint: fingerprint(b"abc"),
            neighbor_order: 1,
            structure: ModelStructure::new(vec![1, 1]).unwrap(),
            dims: vec![0.9, 2.1],
            rates: vec![3.0, 0.25],
            weights: vec![0.4, 0.6],
            point_indices: vec![0, 1, 2],
            cluster_probs: vec![vec![0.1, 0.9], vec![1.0 / 3.0, 2.0 / 3.0], vec![0.75, 0.25]],
            hard_labels: vec![1, 1, 0],
            avg_dimension: 1.5,
            loglike: -12.5,
            lower_bound: -12.5000001,
            aic: 37.0,
            iterations: 17,
            converged: true,
            search_trace: vec![],
            config: FitConfig::default(),
        }
    }

    #[test]
    fn json_round_trip() {
        let doc = sample_doc();
        assert_eq!(ResultDocument::from_json(&doc.to_json().unwrap()).unwrap(), doc);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = sample_doc().to_json().unwrap().replace(SCHEMA_VERSION, "dimclust-result/99");
        assert!(matches!(ResultDocument::from_json(&text), Err(Error::Version { .. })));
    }

    #[test]
    fn fingerprint_mismatch() {
        let doc = sample_doc();
        assert!(check_fingerprint(&doc, b"abc"));
        assert!(!check_fingerprint(&doc, b"abd"));
    }

    #[test]
    fn masks() {
        let mut doc = sample_doc();
        doc.point_indices = vec![0, 1, 2, 3];
        doc.hard_labels = vec![1, 1, 1, 1];
        doc.cluster_probs = vec![vec![0.0, 1.0]; 4];
        let m = feature_cluster_mask(&doc, 2, 2).unwrap();
        assert_eq!(m.count(), 4);
        assert!(feature_cluster_mask(&doc, 3, 1).is_err());
        doc.dims = vec![2.5, 2.1];
        assert_eq!(feature_cluster_mask(&doc, 2, 2).unwrap().count(), 0);
    }
}
