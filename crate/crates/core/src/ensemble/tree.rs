use serde::{Deserialize, Serialize};

use crate::featurize::FeatureMatrix;

/// A node of a flat tree. Serialized as a bare array: `[feature, threshold,
/// left, right]` for splits and `[leaf_id]` for leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "NodeRepr", into = "NodeRepr")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { leaf_id: usize },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Split(usize, f64, usize, usize),
    Leaf([usize; 1]),
}

impl From<NodeRepr> for Node {
    fn from(r: NodeRepr) -> Self {
        match r {
            NodeRepr::Split(feature, threshold, left, right) => Node::Split { feature, threshold, left, right },
            NodeRepr::Leaf([leaf_id]) => Node::Leaf { leaf_id },
        }
    }
}

impl From<Node> for NodeRepr {
    fn from(n: Node) -> Self {
        match n {
            Node::Split { feature, threshold, left, right } => NodeRepr::Split(feature, threshold, left, right),
            Node::Leaf { leaf_id } => NodeRepr::Leaf([leaf_id]),
        }
    }
}

/// Flat tree rooted at node 0. Leaf ids are dense `0..n_leaves`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_leaves: usize,
    /// Per-leaf class distribution (classifier trees only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leaf_distributions: Vec<Vec<f64>>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>, leaf_distributions: Vec<Vec<f64>>) -> Self {
        let n_leaves = nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count();
        Self { nodes, n_leaves, leaf_distributions }
    }

    pub fn single_leaf(distribution: Option<Vec<f64>>) -> Self {
        Self::from_nodes(vec![Node::Leaf { leaf_id: 0 }], distribution.into_iter().collect())
    }

    /// Leaf id reached by `row`; `x <= threshold` goes left.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { leaf_id } => return leaf_id,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Depth of every leaf, root at depth 0.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_leaves];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, depth)) = stack.pop() {
            match self.nodes[at] {
                Node::Leaf { leaf_id } => out[leaf_id] = depth,
                Node::Split { left, right, .. } => {
                    stack.push((left, depth + 1));
                    stack.push((right, depth + 1));
                }
            }
        }
        out
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves
    }
}

/// Outcome of a node's split search.
pub(super) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
}

/// Grows a tree over `rows` without recursion.
///
/// `choose` sees the rows at a node and its depth and either returns a split
/// or `None` for a leaf. Returns the nodes and the rows of each leaf.
pub(super) fn grow<F>(x: &FeatureMatrix, mut rows: Vec<usize>, mut choose: F) -> (Vec<Node>, Vec<Vec<usize>>)
where
    F: FnMut(&[usize], usize) -> Option<SplitChoice>,
{
    let mut nodes = vec![Node::Leaf { leaf_id: usize::MAX }];
    let mut leaves: Vec<Vec<usize>> = Vec::new();
    // (node index, row range, depth); left child is popped first
    let n = rows.len();
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    while let Some((at, lo, hi, depth)) = stack.pop() {
        let node_rows = &mut rows[lo..hi];
        let split = choose(node_rows, depth).and_then(|s| {
            let mid = partition(node_rows, |&r| x.get(r, s.feature) <= s.threshold);
            (mid > 0 && mid < node_rows.len()).then_some((s, mid))
        });
        match split {
            Some((s, mid)) => {
                let left = nodes.len();
                nodes.push(Node::Leaf { leaf_id: usize::MAX });
                nodes.push(Node::Leaf { leaf_id: usize::MAX });
                nodes[at] = Node::Split { feature: s.feature, threshold: s.threshold, left, right: left + 1 };
                stack.push((left + 1, lo + mid, hi, depth + 1));
                stack.push((left, lo, lo + mid, depth + 1));
            }
            None => {
                nodes[at] = Node::Leaf { leaf_id: leaves.len() };
                leaves.push(node_rows.to_vec());
            }
        }
    }
    (nodes, leaves)
}

/// In-place partition; returns the count of elements satisfying `pred`,
/// which end up first.
fn partition<T, P: Fn(&T) -> bool>(items: &mut [T], pred: P) -> usize {
    let mut k = 0;
    for i in 0..items.len() {
        if pred(&items[i]) {
            items.swap(i, k);
            k += 1;
        }
    }
    k
}

/// Minimum and maximum of one feature over `rows`.
pub(super) fn feature_range(x: &FeatureMatrix, rows: &[usize], feature: usize) -> (f64, f64) {
    rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
        let v = x.get(r, feature);
        (lo.min(v), hi.max(v))
    })
}

/// Uniform threshold strictly above `lo` and below `hi`.
pub(super) fn draw_threshold<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let t = rng.random_range(lo..hi);
        if t > lo {
            return t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_arrays() {
        let s = serde_json::to_string(&vec![
            Node::Split { feature: 2, threshold: 0.5, left: 1, right: 2 },
            Node::Leaf { leaf_id: 4 },
        ])
        .unwrap();
        assert_eq!(s, "[[2,0.5,1,2],[4]]");
        let back: Vec<Node> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[1], Node::Leaf { leaf_id: 4 });
    }

    #[test]
    fn partition_keeps_predicate_rows_first() {
        let mut v = vec![5, 1, 4, 2, 3];
        let k = partition(&mut v, |&x| x <= 2);
        assert_eq!(k, 2);
        assert!(v[..k].iter().all(|&x| x <= 2));
        assert!(v[k..].iter().all(|&x| x > 2));
    }
}
