//! Unsupervised classification of daily activity diaries into cohorts and
//! Monte Carlo synthesis of 24-hour activity sequences per cohort.

pub mod cli;
pub mod diary;
pub mod embed;
pub mod ensemble;
pub mod featurize;
pub mod pipeline;
pub mod rng;
pub mod svg;
pub mod synth;
pub mod validate;
pub mod window;
