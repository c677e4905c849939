use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{draw_threshold, feature_range, grow, SplitChoice, Tree};
use super::{check_finite, EnsembleError, EnsembleWarning, Forest, ForestKind};
use crate::featurize::FeatureMatrix;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraTreesParams {
    pub n_trees: usize,
    /// `None` grows every leaf to purity.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

/// Shannon entropy in bits of a count vector.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Extremely randomized trees with the entropy criterion.
///
/// At each node, `ceil(sqrt(d))` non-constant features are visited (in a
/// random order); each gets one uniform threshold and the candidate with the
/// largest information gain wins. Leaves store the class distribution of
/// their training rows.
pub fn fit_extra_trees(
    x: &FeatureMatrix,
    y: &[u32],
    params: &ExtraTreesParams,
) -> Result<Forest, EnsembleError> {
    if y.len() != x.n_rows() {
        return Err(EnsembleError::LabelMismatch { labels: y.len(), rows: x.n_rows() });
    }
    if y.is_empty() {
        return Err(EnsembleError::TooFewRows { needed: 1, got: 0 });
    }
    check_finite(x)?;
    let mut class_labels = y.to_vec();
    class_labels.sort_unstable();
    class_labels.dedup();
    let y_idx: Vec<usize> = y
        .iter()
        .map(|l| class_labels.binary_search(l).expect("label present"))
        .collect();

    let single = class_labels.len() == 1;
    let trees: Vec<Tree> = if single {
        log::warn!("extra trees: single class {}; classifier is constant", class_labels[0]);
        vec![Tree::single_leaf(Some(vec![1.0])); params.n_trees]
    } else {
        (0..params.n_trees)
            .into_par_iter()
            .map(|t| grow_extra_tree(x, &y_idx, class_labels.len(), params, t))
            .collect()
    };
    Ok(Forest {
        kind: ForestKind::ExtraClassifier,
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        n_features: x.n_cols(),
        seed: params.seed,
        class_labels,
        trees,
        warning: single.then_some(EnsembleWarning::SingleClass),
    })
}

fn class_counts(rows: &[usize], y: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &r in rows {
        counts[y[r]] += 1;
    }
    counts
}

fn grow_extra_tree(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    params: &ExtraTreesParams,
    index: usize,
) -> Tree {
    let mut rng = rng::substream(params.seed, Domain::ExtraTrees, index as u64);
    let d = x.n_cols();
    let k = (d as f64).sqrt().ceil() as usize;
    let mut order: Vec<usize> = (0..d).collect();
    let mut left_counts = vec![0usize; n_classes];

    let (nodes, leaves) = grow(x, (0..x.n_rows()).collect(), |rows, depth| {
        if rows.len() < 2 || params.max_depth.is_some_and(|m| depth >= m) {
            return None;
        }
        let parent = class_counts(rows, y, n_classes);
        if parent.iter().filter(|&&c| c > 0).count() < 2 {
            return None;
        }
        let parent_h = entropy_bits(&parent);
        let n = rows.len() as f64;

        let mut best: Option<(f64, SplitChoice)> = None;
        let mut visited = 0;
        for j in 0..d {
            if visited == k {
                break;
            }
            // lazy Fisher-Yates over the feature order
            let pick = rng.random_range(j..d);
            order.swap(j, pick);
            let feature = order[j];
            let (lo, hi) = feature_range(x, rows, feature);
            if hi <= lo {
                continue;
            }
            visited += 1;
            let threshold = draw_threshold(&mut rng, lo, hi);
            left_counts.iter_mut().for_each(|c| *c = 0);
            let mut n_left = 0usize;
            for &r in rows {
                if x.get(r, feature) <= threshold {
                    left_counts[y[r]] += 1;
                    n_left += 1;
                }
            }
            let right_counts: Vec<usize> = parent.iter().zip(&left_counts).map(|(p, l)| p - l).collect();
            let children_h = (n_left as f64 / n) * entropy_bits(&left_counts)
                + ((rows.len() - n_left) as f64 / n) * entropy_bits(&right_counts);
            let gain = parent_h - children_h;
            if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                best = Some((gain, SplitChoice { feature, threshold }));
            }
        }
        best.map(|(_, s)| s)
    });

    let distributions = leaves
        .iter()
        .map(|rows| {
            let counts = class_counts(rows, y, n_classes);
            let total = rows.len() as f64;
            counts.iter().map(|&c| c as f64 / total).collect()
        })
        .collect();
    Tree::from_nodes(nodes, distributions)
}
