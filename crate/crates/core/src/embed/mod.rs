//! 2-D embedding of the proximity structure and density clustering.

mod dbscan;
mod tsne;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::ProximityMatrix;

pub use dbscan::{dbscan, ClusterLabels, DbscanParams, NOISE};
pub use tsne::{conditional_probabilities, tsne_embed, TsneParams};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("perplexity {perplexity} must be below the number of points {n}")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dissimilarities `1 - P`, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_dense(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "square matrix");
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Consumes the proximity matrix, reusing its storage.
pub fn proximity_to_distance(p: ProximityMatrix) -> DistanceMatrix {
    let n = p.len();
    let mut data = p.into_dense();
    for v in &mut data {
        *v = 1.0 - *v;
    }
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    DistanceMatrix { n, data }
}

/// Embedded points and the KL divergence recorded at every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCoords {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub kl_trace: Vec<f64>,
}

impl EmbeddingCoords {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, case_ids: &[String], out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["case_id", "x", "y"])?;
        for (id, p) in case_ids.iter().zip(&self.points) {
            w.write_record([id.clone(), p[0].to_string(), p[1].to_string()])?;
        }
        w.flush()
    }

    pub fn write_kl_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "kl"])?;
        for (i, kl) in self.kl_trace.iter().enumerate() {
            w.write_record([i.to_string(), kl.to_string()])?;
        }
        w.flush()
    }
}

/// Maps each dimension's minimum to -1 and maximum to +1; a zero-range
/// dimension maps to 0.
pub fn normalize_coords(y: &EmbeddingCoords) -> EmbeddingCoords {
    let mut points = y.points.clone();
    for dim in 0..2 {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[dim]), h.max(p[dim])));
        let range = hi - lo;
        for p in &mut points {
            p[dim] = if range <= 0.0 {
                0.0
            } else if p[dim] == lo {
                -1.0
            } else if p[dim] == hi {
                1.0
            } else {
                ((2.0 * p[dim] - (hi + lo)) / range).clamp(-1.0, 1.0)
            };
        }
    }
    EmbeddingCoords { points, kl_trace: y.kl_trace.clone() }
}
