//! Per-class activity model: starting and length windows from 1-D mixtures,
//! and the occurrence, length, precedence and location probabilities.

mod bgm;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diary::{ActivityCode, ActivityDiary, Lexicons, DAY_MINUTES};
use crate::rng::{derive_seed, Domain};

pub use bgm::{fit_bgm_1d, fit_bgm_1d_detailed, BgmFit, BgmParams, GaussianComponent, SD_FLOOR};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("class {class_id} has no diaries")]
    EmptyClass { class_id: u32 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Interval of the day in which an activity may start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartWindow {
    pub id: usize,
    pub code: ActivityCode,
    #[serde(flatten)]
    pub component: GaussianComponent,
    /// `mean ± 2 sd`, clamped to the day.
    pub bounds: [f64; 2],
}

/// Fitted range of durations for one code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthWindow {
    pub id: usize,
    pub code: ActivityCode,
    #[serde(flatten)]
    pub component: GaussianComponent,
    /// `mean ± 2 sd`, clamped to `[1, 1440]`.
    pub bounds: [f64; 2],
}

impl LengthWindow {
    /// Whole-minute bounds inside the real-valued ones.
    pub fn minute_bounds(&self) -> (u32, u32) {
        let lo = self.bounds[0].ceil().max(1.0) as u32;
        let hi = self.bounds[1].floor() as u32;
        if lo <= hi {
            (lo, hi)
        } else {
            let m = self.component.mean.round().clamp(1.0, DAY_MINUTES as f64) as u32;
            (m, m)
        }
    }
}

/// Start and length windows of a class. Travel records get length windows
/// (under `travel_code`) but no start windows: travel is re-inserted at
/// location changes during synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Windows {
    pub start: Vec<StartWindow>,
    pub length: Vec<LengthWindow>,
    pub travel_code: ActivityCode,
}

impl Windows {
    pub fn start_of(&self, code: ActivityCode) -> impl Iterator<Item = &StartWindow> {
        self.start.iter().filter(move |w| w.code == code)
    }

    pub fn length_of(&self, code: ActivityCode) -> impl Iterator<Item = &LengthWindow> {
        self.length.iter().filter(move |w| w.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortActivityModel {
    pub class_id: u32,
    pub n_source_diaries: usize,
    pub travel_code: ActivityCode,
    pub start_windows: Vec<StartWindow>,
    pub length_windows: Vec<LengthWindow>,
    /// Start window → probability it appears in a day.
    pub p_occ: BTreeMap<usize, f64>,
    /// Start window → distribution over length windows of the same code.
    pub p_len: BTreeMap<usize, BTreeMap<usize, f64>>,
    /// `p_prec[a][b]`: probability a precedes b, for co-observed pairs only.
    pub p_prec: BTreeMap<usize, BTreeMap<usize, f64>>,
    /// Start window → distribution over location ids.
    pub p_loc: BTreeMap<usize, BTreeMap<u16, f64>>,
}

impl CohortActivityModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WindowError> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), WindowError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WindowError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn precedence(&self, a: usize, b: usize) -> Option<f64> {
        self.p_prec.get(&a).and_then(|m| m.get(&b)).copied()
    }

    /// Mean travel duration over the class's travel length windows, if any.
    pub fn travel_minutes(&self) -> Option<f64> {
        let ws: Vec<_> = self.length_windows.iter().filter(|w| w.code == self.travel_code).collect();
        if ws.is_empty() {
            return None;
        }
        let weight: f64 = ws.iter().map(|w| w.component.weight).sum();
        Some(ws.iter().map(|w| w.component.weight * w.component.mean).sum::<f64>() / weight)
    }

    /// Checks ids, probability ranges and normalization.
    pub fn validate(&self) -> Result<(), WindowError> {
        let bad = |m: String| Err(WindowError::InvalidModel(m));
        for (i, w) in self.start_windows.iter().enumerate() {
            if w.id != i || w.bounds[0] >= w.bounds[1] {
                return bad(format!("start window {i}"));
            }
        }
        for (i, w) in self.length_windows.iter().enumerate() {
            if w.id != i || w.bounds[0] < 1.0 {
                return bad(format!("length window {i}"));
            }
        }
        for (w, p) in &self.p_occ {
            if *w >= self.start_windows.len() || !(0.0..=1.0).contains(p) {
                return bad(format!("p_occ[{w}]"));
            }
        }
        for (w, dist) in &self.p_len {
            if !normalized(dist.values()) || dist.keys().any(|l| *l >= self.length_windows.len()) {
                return bad(format!("p_len[{w}]"));
            }
        }
        for (w, dist) in &self.p_loc {
            if !normalized(dist.values()) {
                return bad(format!("p_loc[{w}]"));
            }
        }
        for (a, row) in &self.p_prec {
            for (b, p) in row {
                if a == b || self.precedence(*b, *a).is_none_or(|q| (p + q - 1.0).abs() > 1e-9) {
                    return bad(format!("p_prec[{a}][{b}]"));
                }
            }
        }
        Ok(())
    }
}

fn normalized<'a>(ps: impl Iterator<Item = &'a f64>) -> bool {
    (ps.sum::<f64>() - 1.0).abs() <= 1e-9
}

fn is_travel(lex: &Lexicons, code: ActivityCode) -> bool {
    lex.is_travel(code)
}

/// Most frequent travel code in the diaries, else the lexicon default.
fn class_travel_code(diaries: &[&ActivityDiary], lex: &Lexicons) -> ActivityCode {
    let mut counts: BTreeMap<ActivityCode, usize> = BTreeMap::new();
    for r in diaries.iter().flat_map(|d| d.records()) {
        if is_travel(lex, r.code) {
            *counts.entry(r.code).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(ActivityCode, usize)>, (c, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((c, n)),
        })
        .map_or(lex.travel_code, |(c, _)| c)
}

/// Fits start and length windows per activity code. Window ids run over
/// codes in ascending order, then components by mean.
pub fn derive_windows(diaries: &[&ActivityDiary], lex: &Lexicons, params: &BgmParams) -> Windows {
    let travel_code = class_travel_code(diaries, lex);
    let mut starts: BTreeMap<ActivityCode, Vec<f64>> = BTreeMap::new();
    let mut lengths: BTreeMap<ActivityCode, Vec<f64>> = BTreeMap::new();
    for r in diaries.iter().flat_map(|d| d.records()) {
        if is_travel(lex, r.code) {
            lengths.entry(travel_code).or_default().push(r.duration_min as f64);
        } else {
            starts.entry(r.code).or_default().push(r.start_min as f64);
            lengths.entry(r.code).or_default().push(r.duration_min as f64);
        }
    }
    let fit = |kind: u64, code: ActivityCode, samples: &Vec<f64>| {
        let seed = derive_seed(params.seed, Domain::Bgm, 2 * code.value() as u64 + kind);
        fit_bgm_1d(samples, &BgmParams { seed, ..*params })
    };
    let start_fits: Vec<(ActivityCode, Vec<GaussianComponent>)> =
        starts.par_iter().map(|(c, s)| (*c, fit(0, *c, s))).collect();
    let length_fits: Vec<(ActivityCode, Vec<GaussianComponent>)> =
        lengths.par_iter().map(|(c, s)| (*c, fit(1, *c, s))).collect();

    let day = DAY_MINUTES as f64;
    let mut start = Vec::new();
    for (code, comps) in start_fits {
        for component in comps {
            let [lo, hi] = component.two_sigma();
            let bounds = [lo.max(0.0), hi.min(day - 1.0)];
            // a mean outside the day cannot happen, but keep lo < hi regardless
            let bounds = if bounds[0] < bounds[1] { bounds } else { [0.0, day - 1.0] };
            start.push(StartWindow { id: start.len(), code, component, bounds });
        }
    }
    let mut length = Vec::new();
    for (code, comps) in length_fits {
        for component in comps {
            let [lo, hi] = component.two_sigma();
            let bounds = [lo.max(1.0), hi.clamp(1.0, day)];
            length.push(LengthWindow { id: length.len(), code, component, bounds });
        }
    }
    Windows { start, length, travel_code }
}

/// Index of the component with the largest `weight * density(x)`; ties go
/// to the first (lowest id).
fn best_window<'a>(x: f64, ws: impl Iterator<Item = (usize, &'a GaussianComponent)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (id, c) in ws {
        let r = c.weight * c.density(x);
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((id, r));
        }
    }
    best.map(|(id, _)| id)
}

/// Start window of every record (`None` for travel), per diary.
pub fn assign_instances(diaries: &[&ActivityDiary], windows: &Windows, lex: &Lexicons) -> Vec<Vec<Option<usize>>> {
    diaries
        .iter()
        .map(|d| {
            d.records()
                .iter()
                .map(|r| {
                    if is_travel(lex, r.code) {
                        None
                    } else {
                        best_window(r.start_min as f64, windows.start_of(r.code).map(|w| (w.id, &w.component)))
                    }
                })
                .collect()
        })
        .collect()
}

fn round12(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Laplace +1 over the outcomes actually observed.
fn smoothed<K: Ord + Copy>(counts: &BTreeMap<K, usize>) -> BTreeMap<K, f64> {
    let support = counts.values().filter(|&&c| c > 0).count();
    let total: usize = counts.values().sum();
    counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (*k, round12((c + 1) as f64 / (total + support) as f64)))
        .collect()
}

/// Two-outcome smoothing; returns P(first outcome).
fn smoothed_pair(first: usize, second: usize) -> f64 {
    match (first, second) {
        (0, 0) => 0.0,
        (_, 0) => 1.0,
        (0, _) => 0.0,
        _ => round12((first + 1) as f64 / (first + second + 2) as f64),
    }
}

pub fn estimate_probabilities(
    class_id: u32,
    diaries: &[&ActivityDiary],
    windows: &Windows,
    assignments: &[Vec<Option<usize>>],
) -> CohortActivityModel {
    let n_start = windows.start.len();
    let mut present = vec![0usize; n_start];
    let mut len_counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_start];
    let mut loc_counts: Vec<BTreeMap<u16, usize>> = vec![BTreeMap::new(); n_start];
    let mut first_before: BTreeMap<(usize, usize), usize> = BTreeMap::new();

    for (d, assigned) in diaries.iter().zip(assignments) {
        let mut earliest: BTreeMap<usize, u32> = BTreeMap::new();
        for (r, w) in d.records().iter().zip(assigned) {
            let Some(w) = *w else { continue };
            let lw = best_window(r.duration_min as f64, windows.length_of(r.code).map(|l| (l.id, &l.component)))
                .expect("every non-travel code has a length window");
            *len_counts[w].entry(lw).or_default() += 1;
            *loc_counts[w].entry(r.location.0).or_default() += 1;
            earliest.entry(w).and_modify(|s| *s = (*s).min(r.start_min)).or_insert(r.start_min);
        }
        for &w in earliest.keys() {
            present[w] += 1;
        }
        let seen: Vec<(usize, u32)> = earliest.into_iter().collect();
        for (i, &(a, sa)) in seen.iter().enumerate() {
            for &(b, sb) in &seen[i + 1..] {
                let key = if sa < sb { (a, b) } else { (b, a) };
                *first_before.entry(key).or_default() += 1;
            }
        }
    }

    let n = diaries.len();
    let p_occ = (0..n_start).map(|w| (w, smoothed_pair(present[w], n - present[w]))).collect();
    let p_len = (0..n_start)
        .filter(|&w| present[w] > 0)
        .map(|w| (w, smoothed(&len_counts[w])))
        .collect();
    let p_loc = (0..n_start)
        .filter(|&w| present[w] > 0)
        .map(|w| (w, smoothed(&loc_counts[w])))
        .collect();

    let mut p_prec: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    let pairs: std::collections::BTreeSet<(usize, usize)> =
        first_before.keys().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    for (a, b) in pairs {
        let ab = first_before.get(&(a, b)).copied().unwrap_or(0);
        let ba = first_before.get(&(b, a)).copied().unwrap_or(0);
        // store the larger side rounded, its complement exactly
        let p_ab = smoothed_pair(ab, ba);
        let (p_ab, p_ba) = if p_ab >= 0.5 { (p_ab, 1.0 - p_ab) } else {
            let p_ba = smoothed_pair(ba, ab);
            (1.0 - p_ba, p_ba)
        };
        p_prec.entry(a).or_default().insert(b, p_ab);
        p_prec.entry(b).or_default().insert(a, p_ba);
    }

    CohortActivityModel {
        class_id,
        n_source_diaries: n,
        travel_code: windows.travel_code,
        start_windows: windows.start.clone(),
        length_windows: windows.length.clone(),
        p_occ,
        p_len,
        p_prec,
        p_loc,
    }
}

/// Windows, assignments and probabilities for one class.
pub fn fit_cohort_model(
    class_id: u32,
    diaries: &[&ActivityDiary],
    lex: &Lexicons,
    params: &BgmParams,
) -> Result<CohortActivityModel, WindowError> {
    if diaries.is_empty() {
        return Err(WindowError::EmptyClass { class_id });
    }
    let seed = derive_seed(params.seed, Domain::Bgm, class_id as u64);
    let params = BgmParams { seed, ..*params };
    let windows = derive_windows(diaries, lex, &params);
    let assignments = assign_instances(diaries, &windows, lex);
    Ok(estimate_probabilities(class_id, diaries, &windows, &assignments))
}
