//! Tree ensembles: the totally random embedding forest, the extremely
//! randomized classifier and the co-leaf proximity matrix.

mod embedding;
mod extra_trees;
mod proximity;
mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::FeatureMatrix;

pub use embedding::{fit_random_trees_embedding, EmbeddingParams};
pub use extra_trees::{entropy_bits, fit_extra_trees, ExtraTreesParams};
pub use proximity::{proximity_matrix, ProximityMatrix};
pub use tree::{Node, Tree};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("feature matrix contains a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("forest expects {expected} columns, matrix has {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("forest kind {0:?} cannot be used here")]
    WrongKind(ForestKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Non-fatal conditions noticed while fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleWarning {
    /// Every row is identical, so no tree can split.
    DegenerateInput,
    /// Only one label was present; the classifier is constant.
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    Embedding,
    ExtraClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub kind: ForestKind,
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub n_features: usize,
    pub seed: u64,
    /// Sorted labels; leaf distributions are indexed by position here.
    #[serde(default)]
    pub class_labels: Vec<u32>,
    pub trees: Vec<Tree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<EnsembleWarning>,
}

impl Forest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_schema(&self, x: &FeatureMatrix) -> Result<(), EnsembleError> {
        if x.n_cols() != self.n_features {
            return Err(EnsembleError::SchemaMismatch { expected: self.n_features, got: x.n_cols() });
        }
        Ok(())
    }

    /// Summed leaf label distributions for one row.
    pub fn class_scores(&self, row: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; self.class_labels.len()];
        for tree in &self.trees {
            let leaf = tree.leaf_of(row);
            for (s, p) in scores.iter_mut().zip(&tree.leaf_distributions[leaf]) {
                *s += p;
            }
        }
        scores
    }

    /// Label with the highest summed distribution; ties go to the smallest label.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<u32>, EnsembleError> {
        if self.kind != ForestKind::ExtraClassifier {
            return Err(EnsembleError::WrongKind(self.kind));
        }
        self.check_schema(x)?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                let scores = self.class_scores(x.row(i));
                let mut best = 0;
                for (k, s) in scores.iter().enumerate().skip(1) {
                    if *s > scores[best] {
                        best = k;
                    }
                }
                self.class_labels[best]
            })
            .collect())
    }
}

/// Leaf reached by each row in each tree, row-major `n_rows × n_trees`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafAssignments {
    pub n_rows: usize,
    pub n_trees: usize,
    pub data: Vec<u32>,
}

impl LeafAssignments {
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let n_trees = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_trees), "ragged assignments");
        Self { n_rows: rows.len(), n_trees, data: rows.concat() }
    }

    pub fn get(&self, row: usize, tree: usize) -> u32 {
        self.data[row * self.n_trees + tree]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.data[row * self.n_trees..(row + 1) * self.n_trees]
    }
}

pub fn leaf_assignments(forest: &Forest, x: &FeatureMatrix) -> Result<LeafAssignments, EnsembleError> {
    forest.check_schema(x)?;
    let rows: Vec<Vec<u32>> = (0..x.n_rows())
        .into_par_iter()
        .map(|i| forest.trees.iter().map(|t| t.leaf_of(x.row(i)) as u32).collect())
        .collect();
    Ok(LeafAssignments {
        n_rows: x.n_rows(),
        n_trees: forest.trees.len(),
        data: rows.concat(),
    })
}

fn check_finite(x: &FeatureMatrix) -> Result<(), EnsembleError> {
    for i in 0..x.n_rows() {
        if let Some(col) = x.row(i).iter().position(|v| !v.is_finite()) {
            return Err(EnsembleError::NonFinite { row: i, col });
        }
    }
    Ok(())
}
