//! Variational Bayesian Gaussian mixture in one dimension.
//!
//! Normal-Gamma priors on each component's mean and precision, a symmetric
//! Dirichlet on the weights, coordinate ascent on the evidence lower bound.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::rng::{self, Domain};

/// Standard deviation floor, minutes.
pub const SD_FLOOR: f64 = 2.5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub sd: f64,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// `mean ± 2 sd`.
    pub fn two_sigma(&self) -> [f64; 2] {
        [self.mean - 2.0 * self.sd, self.mean + 2.0 * self.sd]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BgmParams {
    pub k_max: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for BgmParams {
    fn default() -> Self {
        Self { k_max: 8, max_iterations: 500, tolerance: 1e-6, seed: 0 }
    }
}

/// Fitted mixture with the diagnostics of the winning restart.
#[derive(Debug, Clone, PartialEq)]
pub struct BgmFit {
    /// Retained components, sorted by mean, weights renormalized.
    pub components: Vec<GaussianComponent>,
    /// Lower bound after every M-step.
    pub elbo_trace: Vec<f64>,
    /// Final responsibilities over all `k_max` components, row per sample.
    pub responsibilities: Vec<Vec<f64>>,
}

pub fn fit_bgm_1d(samples: &[f64], params: &BgmParams) -> Vec<GaussianComponent> {
    fit_bgm_1d_detailed(samples, params).components
}

/// Runs one restart per hard initialisation (quantile-seeded Lloyd for
/// every k in `1..=k_max`, plus one seeded k-means++ start) and keeps the
/// highest final lower bound.
pub fn fit_bgm_1d_detailed(samples: &[f64], params: &BgmParams) -> BgmFit {
    assert!(!samples.is_empty(), "at least one sample");
    let n = samples.len();
    if n == 1 {
        return BgmFit {
            components: vec![GaussianComponent { mean: samples[0], sd: SD_FLOOR, weight: 1.0 }],
            elbo_trace: Vec::new(),
            responsibilities: vec![vec![1.0]],
        };
    }
    let k_max = params.k_max.max(1);
    let prior = Prior::new(samples, k_max);

    let mut inits: Vec<Vec<usize>> = (1..=k_max.min(n)).map(|k| lloyd(samples, quantile_centers(samples, k))).collect();
    let mut rng = rng::substream(params.seed, Domain::Bgm, 0);
    inits.push(lloyd(samples, kmeans_pp(samples, k_max.min(n), &mut rng)));

    let mut best: Option<Run> = None;
    for hard in inits {
        let run = coordinate_ascent(samples, &prior, k_max, &hard, params);
        if best.as_ref().is_none_or(|b| run.final_elbo() > b.final_elbo()) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");

    let alpha_sum: f64 = run.post.iter().map(|p| p.alpha).sum();
    let cutoff = 0.01f64.max(2.0 / n as f64);
    let mut components: Vec<GaussianComponent> = run
        .post
        .iter()
        .map(|p| GaussianComponent {
            mean: p.m,
            sd: (p.b / p.a).sqrt().max(SD_FLOOR),
            weight: p.alpha / alpha_sum,
        })
        .filter(|c| c.weight >= cutoff)
        .collect();
    if components.is_empty() {
        // cannot happen with cutoff <= 1/k_max, kept as a guard
        let p = run.post.iter().max_by(|a, b| a.alpha.total_cmp(&b.alpha)).expect("k_max >= 1");
        components.push(GaussianComponent { mean: p.m, sd: (p.b / p.a).sqrt().max(SD_FLOOR), weight: 1.0 });
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    BgmFit { components, elbo_trace: run.elbo_trace, responsibilities: run.resp }
}

struct Prior {
    alpha: f64,
    m: f64,
    beta: f64,
    a: f64,
    b: f64,
}

impl Prior {
    fn new(x: &[f64], k_max: usize) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            alpha: 1.0 / k_max as f64,
            m: mean,
            beta: 1.0,
            a: 0.5,
            b: 0.5 * var.max(SD_FLOOR * SD_FLOOR),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Posterior {
    alpha: f64,
    m: f64,
    beta: f64,
    a: f64,
    b: f64,
}

struct Stats {
    nk: f64,
    mean: f64,
    /// Weighted scatter `sum r (x - mean)^2`, not divided by `nk`.
    scatter: f64,
}

struct Run {
    post: Vec<Posterior>,
    resp: Vec<Vec<f64>>,
    elbo_trace: Vec<f64>,
}

impl Run {
    fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

fn coordinate_ascent(x: &[f64], prior: &Prior, k: usize, hard: &[usize], params: &BgmParams) -> Run {
    let mut resp: Vec<Vec<f64>> = hard
        .iter()
        .map(|&c| {
            let mut r = vec![0.0; k];
            r[c] = 1.0;
            r
        })
        .collect();
    let mut stats = sufficient_stats(x, &resp, k);
    let mut post = m_step(prior, &stats);
    let mut elbo_trace = vec![elbo(prior, &post, &stats, &resp)];
    for _ in 1..params.max_iterations {
        e_step(x, &post, &mut resp);
        stats = sufficient_stats(x, &resp, k);
        post = m_step(prior, &stats);
        let value = elbo(prior, &post, &stats, &resp);
        let prev = *elbo_trace.last().expect("non-empty");
        elbo_trace.push(value);
        if (value - prev).abs() < params.tolerance {
            break;
        }
    }
    Run { post, resp, elbo_trace }
}

fn sufficient_stats(x: &[f64], resp: &[Vec<f64>], k: usize) -> Vec<Stats> {
    (0..k)
        .map(|j| {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk <= 0.0 {
                return Stats { nk: 0.0, mean: 0.0, scatter: 0.0 };
            }
            let mean = resp.iter().zip(x).map(|(r, v)| r[j] * v).sum::<f64>() / nk;
            let scatter = resp.iter().zip(x).map(|(r, v)| r[j] * (v - mean).powi(2)).sum();
            Stats { nk, mean, scatter }
        })
        .collect()
}

fn m_step(prior: &Prior, stats: &[Stats]) -> Vec<Posterior> {
    stats
        .iter()
        .map(|s| {
            let beta = prior.beta + s.nk;
            let (m, shift) = if s.nk > 0.0 {
                (
                    (prior.beta * prior.m + s.nk * s.mean) / beta,
                    prior.beta * s.nk / beta * (s.mean - prior.m).powi(2),
                )
            } else {
                (prior.m, 0.0)
            };
            Posterior {
                alpha: prior.alpha + s.nk,
                m,
                beta,
                a: prior.a + 0.5 * s.nk,
                b: prior.b + 0.5 * (s.scatter + shift),
            }
        })
        .collect()
}

fn e_step(x: &[f64], post: &[Posterior], resp: &mut [Vec<f64>]) {
    let alpha_sum: f64 = post.iter().map(|p| p.alpha).sum();
    let dg_sum = digamma(alpha_sum);
    let consts: Vec<(f64, f64)> = post
        .iter()
        .map(|p| {
            let e_ln_pi = digamma(p.alpha) - dg_sum;
            let e_ln_lambda = digamma(p.a) - p.b.ln();
            (e_ln_pi + 0.5 * e_ln_lambda - 0.5 * LN_2PI - 0.5 / p.beta, p.a / p.b)
        })
        .collect();
    for (r, &v) in resp.iter_mut().zip(x) {
        let mut max = f64::NEG_INFINITY;
        for (rj, (p, (c, e_lambda))) in r.iter_mut().zip(post.iter().zip(&consts)) {
            *rj = c - 0.5 * e_lambda * (v - p.m).powi(2);
            max = max.max(*rj);
        }
        let mut sum = 0.0;
        for rj in r.iter_mut() {
            *rj = (*rj - max).exp();
            sum += *rj;
        }
        for rj in r.iter_mut() {
            *rj /= sum;
        }
    }
}

fn ln_dirichlet_norm(alphas: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut ln_g) = (0.0, 0.0);
    for a in alphas {
        sum += a;
        ln_g += ln_gamma(a);
    }
    ln_gamma(sum) - ln_g
}

fn elbo(prior: &Prior, post: &[Posterior], stats: &[Stats], resp: &[Vec<f64>]) -> f64 {
    let k = post.len();
    let alpha_sum: f64 = post.iter().map(|p| p.alpha).sum();
    let dg_sum = digamma(alpha_sum);
    let mut total = 0.0;
    let mut sum_e_ln_pi = 0.0;
    for (p, s) in post.iter().zip(stats) {
        let e_ln_pi = digamma(p.alpha) - dg_sum;
        let e_ln_l = digamma(p.a) - p.b.ln();
        let e_l = p.a / p.b;
        sum_e_ln_pi += e_ln_pi;

        // E[ln p(x | z, mu, lambda)]
        if s.nk > 0.0 {
            total += 0.5
                * (s.nk * (e_ln_l - 1.0 / p.beta - LN_2PI)
                    - e_l * (s.scatter + s.nk * (s.mean - p.m).powi(2)));
        }
        // E[ln p(z | pi)] - E[ln q(pi)] term for this component
        total += s.nk * e_ln_pi - (p.alpha - 1.0) * e_ln_pi;
        // E[ln p(mu, lambda)]
        total += 0.5 * (prior.beta.ln() - LN_2PI) + 0.5 * e_ln_l
            - 0.5 * prior.beta * (1.0 / p.beta + e_l * (p.m - prior.m).powi(2))
            + prior.a * prior.b.ln()
            - ln_gamma(prior.a)
            + (prior.a - 1.0) * e_ln_l
            - prior.b * e_l;
        // - E[ln q(mu, lambda)]
        total -= 0.5 * (p.beta.ln() - LN_2PI) + 0.5 * e_ln_l - 0.5 + p.a * p.b.ln() - ln_gamma(p.a)
            + (p.a - 1.0) * e_ln_l
            - p.a;
    }
    total += ln_dirichlet_norm(std::iter::repeat_n(prior.alpha, k)) + (prior.alpha - 1.0) * sum_e_ln_pi;
    total -= ln_dirichlet_norm(post.iter().map(|p| p.alpha));
    // - E[ln q(z)]
    for r in resp {
        for &v in r {
            if v > 0.0 {
                total -= v * v.ln();
            }
        }
    }
    total
}

fn quantile_centers(x: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (0..k)
        .map(|j| sorted[(((j as f64 + 0.5) / k as f64) * n as f64).floor().min((n - 1) as f64) as usize])
        .collect()
}

fn kmeans_pp<R: Rng>(x: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![x[rng.random_range(0..x.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = x
            .iter()
            .map(|v| centers.iter().map(|c| (v - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = x.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        centers.push(x[pick]);
    }
    centers
}

/// Lloyd iterations from the given centres; returns hard assignments.
/// Ties go to the lower centre index.
fn lloyd(x: &[f64], mut centers: Vec<f64>) -> Vec<usize> {
    let nearest = |v: f64, centers: &[f64]| {
        let mut best = 0;
        for (j, c) in centers.iter().enumerate() {
            if (v - c).abs() < (v - centers[best]).abs() {
                best = j;
            }
        }
        best
    };
    let mut assign: Vec<usize> = x.iter().map(|&v| nearest(v, &centers)).collect();
    for _ in 0..100 {
        let mut sums = vec![(0.0, 0usize); centers.len()];
        for (&v, &a) in x.iter().zip(&assign) {
            sums[a].0 += v;
            sums[a].1 += 1;
        }
        for (c, (s, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                *c = s / cnt as f64;
            }
        }
        let next: Vec<usize> = x.iter().map(|&v| nearest(v, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}
