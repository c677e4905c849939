use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{draw_threshold, feature_range, grow, SplitChoice, Tree};
use super::{check_finite, EnsembleError, EnsembleWarning, Forest, ForestKind};
use crate::featurize::FeatureMatrix;
use crate::rng::{self, Domain};

/// A node stops trying to split after this many constant features in a row.
const MAX_CONSTANT_DRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self { n_trees: 2000, max_depth: 5, seed: 0 }
    }
}

/// Fits the unsupervised forest: every split takes a uniformly random
/// feature and a uniformly random threshold inside that feature's range at
/// the node. Tree `t` draws from its own `(seed, t)` stream.
pub fn fit_random_trees_embedding(
    x: &FeatureMatrix,
    params: &EmbeddingParams,
) -> Result<Forest, EnsembleError> {
    if x.n_rows() < 2 {
        return Err(EnsembleError::TooFewRows { needed: 2, got: x.n_rows() });
    }
    check_finite(x)?;
    let degenerate = (1..x.n_rows()).all(|i| x.row(i) == x.row(0));
    let trees: Vec<Tree> = if degenerate {
        log::warn!("embedding forest: all {} rows identical; trees are single leaves", x.n_rows());
        vec![Tree::single_leaf(None); params.n_trees]
    } else {
        (0..params.n_trees)
            .into_par_iter()
            .map(|t| grow_random_tree(x, params.max_depth, params.seed, t))
            .collect()
    };
    Ok(Forest {
        kind: ForestKind::Embedding,
        n_trees: params.n_trees,
        max_depth: Some(params.max_depth),
        n_features: x.n_cols(),
        seed: params.seed,
        class_labels: Vec::new(),
        trees,
        warning: degenerate.then_some(EnsembleWarning::DegenerateInput),
    })
}

fn grow_random_tree(x: &FeatureMatrix, max_depth: usize, seed: u64, index: usize) -> Tree {
    let mut rng = rng::substream(seed, Domain::EmbeddingForest, index as u64);
    let d = x.n_cols();
    let (nodes, _) = grow(x, (0..x.n_rows()).collect(), |rows, depth| {
        if depth >= max_depth || rows.len() < 2 {
            return None;
        }
        for _ in 0..MAX_CONSTANT_DRAWS {
            let feature = rng.random_range(0..d);
            let (lo, hi) = feature_range(x, rows, feature);
            if hi > lo {
                let threshold = draw_threshold(&mut rng, lo, hi);
                return Some(SplitChoice { feature, threshold });
            }
        }
        None
    });
    Tree::from_nodes(nodes, Vec::new())
}
