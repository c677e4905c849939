//! Similarity between real and synthetic sequence sets: per-minute modes
//! and Gini impurity profiles.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diary::{ActivityCode, ActivityRecord, DAY_MINUTES};

const DAY: usize = DAY_MINUTES as usize;

/// Spread below which a Gini vector counts as constant.
const CONSTANT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("empty sequence set")]
    EmptySet,
    #[error("sequence {index} does not cover the day")]
    Incomplete { index: usize },
    #[error("class {class_id} has {what} sequences but no {missing} sequences")]
    MissingClass { class_id: u32, what: &'static str, missing: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinuteProfile {
    /// Most frequent code per minute, ties to the smaller code.
    pub modes: Vec<ActivityCode>,
    /// `1 - Σ f²` per minute.
    pub gini: Vec<f64>,
    pub freq: Vec<BTreeMap<ActivityCode, f64>>,
}

pub fn minute_profile<'a, I>(sequences: I) -> Result<MinuteProfile, ValidateError>
where
    I: IntoIterator<Item = &'a [ActivityRecord]>,
{
    let mut counts: Vec<BTreeMap<ActivityCode, u32>> = vec![BTreeMap::new(); DAY];
    let mut n = 0usize;
    for (index, seq) in sequences.into_iter().enumerate() {
        let mut cursor = 0;
        for r in seq {
            if r.start_min != cursor || r.end_min() > DAY_MINUTES {
                return Err(ValidateError::Incomplete { index });
            }
            for m in r.start_min..r.end_min() {
                *counts[m as usize].entry(r.code).or_default() += 1;
            }
            cursor = r.end_min();
        }
        if cursor != DAY_MINUTES {
            return Err(ValidateError::Incomplete { index });
        }
        n += 1;
    }
    if n == 0 {
        return Err(ValidateError::EmptySet);
    }
    let total = n as f64;
    let mut modes = Vec::with_capacity(DAY);
    let mut gini = Vec::with_capacity(DAY);
    let mut freq = Vec::with_capacity(DAY);
    for minute in counts {
        // BTreeMap order makes the first maximum the smallest code.
        let mut best = None;
        for (&code, &c) in &minute {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((code, c));
            }
        }
        modes.push(best.expect("every minute is covered").0);
        let f: BTreeMap<ActivityCode, f64> = minute.into_iter().map(|(k, c)| (k, c as f64 / total)).collect();
        gini.push((1.0 - f.values().map(|p| p * p).sum::<f64>()).max(0.0));
        freq.push(f);
    }
    Ok(MinuteProfile { modes, gini, freq })
}

/// Fraction of minutes with the same mode.
pub fn mode_similarity(a: &MinuteProfile, b: &MinuteProfile) -> f64 {
    let same = a.modes.iter().zip(&b.modes).filter(|(x, y)| x == y).count();
    same as f64 / a.modes.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniCorrelation {
    pub r: f64,
    /// One of the vectors was constant, so `r` is a convention.
    pub degenerate: bool,
}

/// Pearson correlation of two Gini profiles. A constant vector gives 1.0
/// when both vectors are the same constant and 0.0 otherwise.
pub fn gini_correlation(a: &[f64], b: &[f64]) -> GiniCorrelation {
    assert_eq!(a.len(), b.len(), "profiles differ in length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let spread = |v: &[f64], m: f64| v.iter().map(|x| (x - m).abs()).fold(0.0, f64::max);
    let (flat_a, flat_b) = (spread(a, ma) <= CONSTANT_TOLERANCE, spread(b, mb) <= CONSTANT_TOLERANCE);
    if flat_a || flat_b {
        let same = flat_a && flat_b && (ma - mb).abs() <= CONSTANT_TOLERANCE;
        return GiniCorrelation { r: if same { 1.0 } else { 0.0 }, degenerate: true };
    }
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    GiniCorrelation { r: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), degenerate: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub class_id: u32,
    pub mode_similarity: f64,
    pub gini_r: f64,
    pub gini_degenerate: bool,
    pub n_real: usize,
    pub n_synth: usize,
}

impl SimilarityReport {
    /// Both metrics strictly above `threshold`.
    pub fn above(&self, threshold: f64) -> bool {
        self.mode_similarity > threshold && self.gini_r > threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassComparison {
    pub report: SimilarityReport,
    pub real: MinuteProfile,
    pub synth: MinuteProfile,
}

pub fn compare_class<'a, R, S>(class_id: u32, real: R, synth: S) -> Result<ClassComparison, ValidateError>
where
    R: IntoIterator<Item = &'a [ActivityRecord]>,
    S: IntoIterator<Item = &'a [ActivityRecord]>,
{
    let real: Vec<&[ActivityRecord]> = real.into_iter().collect();
    let synth: Vec<&[ActivityRecord]> = synth.into_iter().collect();
    let (rp, sp) = (minute_profile(real.iter().copied())?, minute_profile(synth.iter().copied())?);
    let g = gini_correlation(&rp.gini, &sp.gini);
    let report = SimilarityReport {
        class_id,
        mode_similarity: mode_similarity(&rp, &sp),
        gini_r: g.r,
        gini_degenerate: g.degenerate,
        n_real: real.len(),
        n_synth: synth.len(),
    };
    Ok(ClassComparison { report, real: rp, synth: sp })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusReport {
    pub classes: Vec<ClassComparison>,
}

impl CorpusReport {
    pub fn reports(&self) -> impl Iterator<Item = &SimilarityReport> {
        self.classes.iter().map(|c| &c.report)
    }

    /// Fraction of classes with both metrics above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.reports().filter(|r| r.above(threshold)).count() as f64 / self.classes.len() as f64
    }

    pub fn write_report_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "mode_similarity", "gini_r", "n_real", "n_synth"])?;
        for r in self.reports() {
            w.write_record([
                r.class_id.to_string(),
                r.mode_similarity.to_string(),
                r.gini_r.to_string(),
                r.n_real.to_string(),
                r.n_synth.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn write_scatter_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "mode_similarity", "gini_r", "gini_degenerate"])?;
        for r in self.reports() {
            w.write_record([
                r.class_id.to_string(),
                r.mode_similarity.to_string(),
                r.gini_r.to_string(),
                r.gini_degenerate.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn write_gini_profiles_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "minute", "real_gini", "synth_gini"])?;
        for c in &self.classes {
            for (m, (a, b)) in c.real.gini.iter().zip(&c.synth.gini).enumerate() {
                w.write_record([c.report.class_id.to_string(), m.to_string(), a.to_string(), b.to_string()])?;
            }
        }
        w.flush()
    }
}

/// Compares every class; both maps must hold the same class ids.
pub fn corpus_report(
    real: &BTreeMap<u32, Vec<&[ActivityRecord]>>,
    synth: &BTreeMap<u32, Vec<&[ActivityRecord]>>,
) -> Result<CorpusReport, ValidateError> {
    if let Some(&class_id) = real.keys().find(|k| !synth.contains_key(k)) {
        return Err(ValidateError::MissingClass { class_id, what: "real", missing: "synthetic" });
    }
    if let Some(&class_id) = synth.keys().find(|k| !real.contains_key(k)) {
        return Err(ValidateError::MissingClass { class_id, what: "synthetic", missing: "real" });
    }
    let classes = real
        .par_iter()
        .map(|(&id, r)| compare_class(id, r.iter().copied(), synth[&id].iter().copied()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorpusReport { classes })
}
