//! Exact t-SNE on a precomputed dissimilarity matrix.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DistanceMatrix, EmbedError, EmbeddingCoords};
use crate::rng::{self, Domain};

const BETA_SEARCH_STEPS: usize = 50;
const ENTROPY_TOLERANCE: f64 = 1e-5;
const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Exaggeration applies, and the initial momentum holds, before this iteration.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Per-point cap on the norm of one update; `None` disables it.
    pub max_step_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            max_step_norm: Some(5.0),
            seed: 0,
        }
    }
}

/// Row-conditional neighbour probabilities `p(j|i)` with a Gaussian kernel
/// on the distances, each row's precision bisected until the row entropy
/// (bits) matches `log2(perplexity)`. Returns the dense matrix and the
/// entropy reached per row.
pub fn conditional_probabilities(d: &DistanceMatrix, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let n = d.len();
    let target = perplexity.log2();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sq: Vec<f64> = d.row(i).iter().map(|v| v * v).collect();
            let d_min = sq
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            let mut p = vec![0.0; n];
            let mut beta = 1.0;
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut entropy = row_entropy(&sq, i, d_min, beta, &mut p);
            for _ in 0..BETA_SEARCH_STEPS {
                if (entropy - target).abs() < ENTROPY_TOLERANCE {
                    break;
                }
                if entropy > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
                }
                entropy = row_entropy(&sq, i, d_min, beta, &mut p);
            }
            (p, entropy)
        })
        .collect();
    let mut dense = Vec::with_capacity(n * n);
    let mut entropies = Vec::with_capacity(n);
    for (p, h) in rows {
        dense.extend(p);
        entropies.push(h);
    }
    (dense, entropies)
}

/// Fills `p` with the normalized kernel row for precision `beta` and
/// returns its entropy in bits. Distances are shifted by the row minimum so
/// large precisions do not underflow.
fn row_entropy(sq: &[f64], i: usize, d_min: f64, beta: f64, p: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (pj, &s)) in p.iter_mut().zip(sq).enumerate() {
        *pj = if j == i { 0.0 } else { (-beta * (s - d_min)).exp() };
        sum += *pj;
    }
    let mut weighted = 0.0;
    for (pj, &s) in p.iter_mut().zip(sq) {
        *pj /= sum;
        weighted += *pj * (s - d_min);
    }
    (sum.ln() + beta * weighted) / std::f64::consts::LN_2
}

/// Symmetrized joint probabilities `(p(j|i) + p(i|j)) / 2N`, floored.
fn joint_probabilities(cond: &[f64], n: usize) -> Vec<f64> {
    let denom = 2.0 * n as f64;
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                joint[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / denom).max(MIN_PROBABILITY);
            }
        }
    }
    joint
}

/// Exact-gradient t-SNE into two dimensions.
///
/// Momentum gradient descent: early exaggeration and the initial momentum
/// apply before `exaggeration_iterations`. Each point's update norm is capped
/// at `max_step_norm`. After the exaggeration phase an update that would
/// raise the KL divergence is rejected: momentum is dropped and plain
/// gradient steps of halving size are tried instead, so the recorded
/// divergence never increases there. The KL divergence of the
/// unexaggerated joint distribution is recorded before every update.
/// Row work runs in parallel but every reduction is summed in row order, so
/// results do not depend on the thread count.
pub fn tsne_embed(d: &DistanceMatrix, params: &TsneParams) -> Result<EmbeddingCoords, EmbedError> {
    let n = d.len();
    if n < 2 {
        return Err(EmbedError::TooFewPoints { needed: 2, got: n });
    }
    if params.perplexity >= n as f64 {
        return Err(EmbedError::PerplexityTooLarge { perplexity: params.perplexity, n });
    }
    if (n as f64) < 3.0 * params.perplexity {
        log::warn!("t-SNE: {n} points is small for perplexity {}", params.perplexity);
    }
    let (cond, _) = conditional_probabilities(d, params.perplexity);
    let p = joint_probabilities(&cond, n);
    drop(cond);
    let p_entropy: f64 = p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
    let p_total: f64 = p.iter().sum();

    let mut rng = rng::substream(params.seed, Domain::Tsne, 0);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(rand_distr::StandardNormal);
            let b: f64 = rng.sample(rand_distr::StandardNormal);
            [a * 1e-4, b * 1e-4]
        })
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(params.iterations);
    let mut state = evaluate(&y, &p, n, p_entropy, p_total);

    for iteration in 0..params.iterations {
        let early = iteration < params.exaggeration_iterations;
        let exaggeration = if early { params.early_exaggeration } else { 1.0 };
        let momentum = if early { params.initial_momentum } else { params.final_momentum };
        kl_trace.push(state.kl);
        let grad = state.gradient(exaggeration);
        if grad.iter().any(|g| !g[0].is_finite() || !g[1].is_finite()) {
            return Err(EmbedError::NonFiniteGradient { iteration });
        }

        let step = |velocity: &[[f64; 2]], momentum: f64, lr: f64| -> Vec<[f64; 2]> {
            velocity
                .iter()
                .zip(&grad)
                .map(|(v, g)| {
                    let mut u = [momentum * v[0] - lr * g[0], momentum * v[1] - lr * g[1]];
                    if let Some(cap) = params.max_step_norm {
                        let norm = u[0].hypot(u[1]);
                        if norm > cap {
                            u = [u[0] * cap / norm, u[1] * cap / norm];
                        }
                    }
                    u
                })
                .collect()
        };
        let moved = |u: &[[f64; 2]]| -> Vec<[f64; 2]> {
            let mut next: Vec<[f64; 2]> = y.iter().zip(u).map(|(p, d)| [p[0] + d[0], p[1] + d[1]]).collect();
            center(&mut next);
            next
        };

        let update = step(&velocity, momentum, params.learning_rate);
        let candidate = moved(&update);
        let next_state = evaluate(&candidate, &p, n, p_entropy, p_total);
        if early || next_state.kl <= state.kl {
            y = candidate;
            velocity = update;
            state = next_state;
            continue;
        }
        velocity.iter_mut().for_each(|v| *v = [0.0, 0.0]);
        let mut lr = params.learning_rate;
        for _ in 0..MAX_STEP_HALVINGS {
            lr /= 2.0;
            let update = step(&velocity, 0.0, lr);
            let candidate = moved(&update);
            let next_state = evaluate(&candidate, &p, n, p_entropy, p_total);
            if next_state.kl <= state.kl {
                y = candidate;
                velocity = update;
                state = next_state;
                break;
            }
        }
    }
    Ok(EmbeddingCoords { points: y, kl_trace })
}

const MAX_STEP_HALVINGS: usize = 30;

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let sum = y.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
    let mean = [sum[0] / n, sum[1] / n];
    for p in y {
        p[0] -= mean[0];
        p[1] -= mean[1];
    }
}

/// Per-row gradient parts and the divergence at one configuration.
struct Evaluation {
    /// `sum_j p_ij w_ij (y_i - y_j)` per row.
    attraction: Vec<[f64; 2]>,
    /// `sum_j w_ij^2 (y_i - y_j)` per row.
    repulsion: Vec<[f64; 2]>,
    z: f64,
    kl: f64,
}

impl Evaluation {
    fn gradient(&self, exaggeration: f64) -> Vec<[f64; 2]> {
        self.attraction
            .iter()
            .zip(&self.repulsion)
            .map(|(a, r)| {
                [
                    4.0 * (exaggeration * a[0] - r[0] / self.z),
                    4.0 * (exaggeration * a[1] - r[1] / self.z),
                ]
            })
            .collect()
    }
}

/// One pass over all pairs, with `w_ij = 1 / (1 + |y_i - y_j|^2)`:
/// `KL = sum p ln p - sum p ln w + (sum p) ln Z`.
fn evaluate(y: &[[f64; 2]], p: &[f64], n: usize, p_entropy: f64, p_total: f64) -> Evaluation {
    let rows: Vec<([f64; 2], [f64; 2], f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = y[i];
            let p_row = &p[i * n..(i + 1) * n];
            let (mut att, mut rep, mut z, mut cross) = ([0.0; 2], [0.0; 2], 0.0, 0.0);
            for (j, yj) in y.iter().enumerate() {
                if j == i {
                    continue;
                }
                let w = student_t(yi, *yj);
                let diff = [yi[0] - yj[0], yi[1] - yj[1]];
                let pw = p_row[j] * w;
                att[0] += pw * diff[0];
                att[1] += pw * diff[1];
                rep[0] += w * w * diff[0];
                rep[1] += w * w * diff[1];
                z += w;
                cross += p_row[j] * w.ln();
            }
            (att, rep, z, cross)
        })
        .collect();
    let z: f64 = rows.iter().map(|r| r.2).sum();
    let cross: f64 = rows.iter().map(|r| r.3).sum();
    Evaluation {
        attraction: rows.iter().map(|r| r.0).collect(),
        repulsion: rows.iter().map(|r| r.1).collect(),
        z,
        kl: p_entropy - cross + p_total * z.ln(),
    }
}

#[inline]
fn student_t(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}
