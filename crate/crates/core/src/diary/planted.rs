//! Corpora drawn from known schedule archetypes, for testing the pipeline
//! against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    ActivityCode, ActivityDiary, ActivityRecord, DemographicRecord, DiaryCorpus, DiaryError,
    Lexicons, LocationId, Result, DAY_MINUTES, DEMOGRAPHIC_VARIABLES, MAX_RECORDS, MISSING,
};
use crate::rng::{self, Domain};
use crate::synth::{fit_lengths, LengthSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub seed: u64,
    pub archetypes: Vec<Archetype>,
    /// Travel inserted between consecutive activities at different locations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub travel: Option<TravelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub label: String,
    pub count: usize,
    /// Per-variable draws; unlisted variables are missing.
    #[serde(default)]
    pub demographics: BTreeMap<String, DemographicDraw>,
    pub template: Vec<TemplateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub code: ActivityCode,
    pub start_mean: f64,
    pub start_sd: f64,
    pub duration_mean: f64,
    pub duration_sd: f64,
    pub location: LocationId,
    pub occurrence: f64,
}

impl TemplateEntry {
    /// Duration limits: two standard deviations either side, at least a minute.
    fn duration_bounds(&self) -> (u32, u32) {
        let lo = (self.duration_mean - 2.0 * self.duration_sd).max(1.0).ceil() as u32;
        let hi = (self.duration_mean + 2.0 * self.duration_sd).min(DAY_MINUTES as f64).floor() as u32;
        (lo, hi.max(lo))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DemographicDraw {
    Fixed(i64),
    Choice(Vec<i64>),
    Range { range: [i64; 2] },
}

impl DemographicDraw {
    fn sample<R: Rng>(&self, rng: &mut R) -> i64 {
        match self {
            Self::Fixed(v) => *v,
            Self::Choice(vs) if vs.is_empty() => MISSING,
            Self::Choice(vs) => vs[rng.random_range(0..vs.len())],
            Self::Range { range: [lo, hi] } => rng.random_range(*lo..=*hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelSpec {
    pub code: ActivityCode,
    pub duration_mean: f64,
    pub duration_sd: f64,
}

impl PlantedSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("planted spec serializes")
    }

    /// Lexicons covering the corpus this spec generates.
    pub fn lexicons(&self) -> Lexicons {
        let mut lex = Lexicons::default();
        if let Some(t) = &self.travel {
            lex.travel_code = t.code;
            lex.travel_category = t.code.major_category();
        }
        lex
    }

    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(DiaryError::InvalidSpec("no archetypes".into()));
        }
        let mut labels = BTreeSet::new();
        for a in &self.archetypes {
            if !labels.insert(a.label.as_str()) {
                return Err(DiaryError::InvalidSpec(format!("duplicate label {}", a.label)));
            }
            for name in a.demographics.keys() {
                if !DEMOGRAPHIC_VARIABLES.contains(&name.as_str()) {
                    return Err(DiaryError::InvalidSpec(format!("unknown variable {name}")));
                }
            }
            let infeasible = |reason: String| DiaryError::InfeasibleTemplate {
                archetype: a.label.clone(),
                reason,
            };
            if a.template.is_empty() {
                return Err(infeasible("empty template".into()));
            }
            let max_records =
                if self.travel.is_some() { 2 * a.template.len() - 1 } else { a.template.len() };
            if max_records > MAX_RECORDS {
                return Err(infeasible(format!("up to {max_records} records per day")));
            }
            for e in &a.template {
                if !(0.0..=1.0).contains(&e.occurrence) {
                    return Err(infeasible(format!("occurrence {} outside [0,1]", e.occurrence)));
                }
                if e.start_sd < 0.0 || e.duration_sd < 0.0 || e.duration_mean < 1.0 {
                    return Err(infeasible(format!("bad timing for code {}", e.code)));
                }
            }
            let mandatory: f64 = a
                .template
                .iter()
                .filter(|e| e.occurrence >= 1.0)
                .map(|e| e.duration_mean)
                .sum();
            if mandatory > DAY_MINUTES as f64 {
                return Err(infeasible(format!("mandatory activities need {mandatory} min")));
            }
        }
        Ok(())
    }
}

fn normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    mean + sd * z
}

struct Draft {
    code: ActivityCode,
    start: f64,
    span: LengthSpan,
    location: LocationId,
}

/// Generates the corpus and the archetype label of every diary.
///
/// Diaries are emitted archetype by archetype; diary `g` (global index) uses
/// its own random stream, so output depends only on the spec.
pub fn generate_planted_corpus(
    spec: &PlantedSpec,
) -> Result<(DiaryCorpus, BTreeMap<String, String>)> {
    spec.validate()?;
    let lexicons = spec.lexicons();
    let mut diaries = Vec::new();
    let mut demographics = BTreeMap::new();
    let mut truth = BTreeMap::new();
    let mut global = 0u64;
    for arch in &spec.archetypes {
        for i in 0..arch.count {
            let mut rng = rng::substream(spec.seed, Domain::Planted, global);
            global += 1;
            let case_id = format!("{}-{:04}", arch.label, i);

            let mut values = [MISSING; 16];
            for (slot, name) in values.iter_mut().zip(DEMOGRAPHIC_VARIABLES) {
                if let Some(draw) = arch.demographics.get(name) {
                    *slot = draw.sample(&mut rng);
                }
            }

            let records = draw_day(arch, spec.travel.as_ref(), &mut rng)?;
            diaries.push(ActivityDiary::new(case_id.clone(), records)?);
            demographics.insert(case_id.clone(), DemographicRecord { case_id: case_id.clone(), values });
            truth.insert(case_id, arch.label.clone());
        }
    }
    Ok((DiaryCorpus { diaries, demographics, lexicons }, truth))
}

fn draw_day<R: Rng>(
    arch: &Archetype,
    travel: Option<&TravelSpec>,
    rng: &mut R,
) -> Result<Vec<ActivityRecord>> {
    let mut drafts: Vec<Draft> = Vec::new();
    for e in &arch.template {
        // Always draw, so one entry's occurrence does not shift the others' streams.
        let u: f64 = rng.random();
        let start = normal(rng, e.start_mean, e.start_sd);
        let length = normal(rng, e.duration_mean, e.duration_sd);
        if u < e.occurrence {
            let (lo, hi) = e.duration_bounds();
            drafts.push(Draft {
                code: e.code,
                start,
                span: LengthSpan { length: length.round().clamp(lo as f64, hi as f64), lo, hi, fixed: false },
                location: e.location,
            });
        }
    }
    if drafts.is_empty() {
        let e = arch
            .template
            .iter()
            .reduce(|best, e| if e.occurrence > best.occurrence { e } else { best })
            .expect("non-empty template");
        let (lo, hi) = e.duration_bounds();
        drafts.push(Draft {
            code: e.code,
            start: e.start_mean,
            span: LengthSpan { length: e.duration_mean.round().clamp(lo as f64, hi as f64), lo, hi, fixed: false },
            location: e.location,
        });
    }
    drafts.sort_by(|a, b| a.start.total_cmp(&b.start));

    if let Some(t) = travel {
        let mut with_travel = Vec::with_capacity(drafts.len() * 2);
        for d in drafts {
            if let Some(prev) = with_travel.last() {
                let prev: &Draft = prev;
                if prev.location != d.location {
                    let len = normal(rng, t.duration_mean, t.duration_sd).round().max(1.0);
                    with_travel.push(Draft {
                        code: t.code,
                        start: d.start,
                        span: LengthSpan { length: len, lo: len as u32, hi: len as u32, fixed: true },
                        location: d.location,
                    });
                }
            }
            with_travel.push(d);
        }
        drafts = with_travel;
    }

    let spans: Vec<LengthSpan> = drafts.iter().map(|d| d.span).collect();
    let fitted = fit_lengths(&spans);
    let mut start = 0u32;
    Ok(drafts
        .iter()
        .zip(fitted.lengths)
        .map(|(d, len)| {
            let r = ActivityRecord { code: d.code, start_min: start, duration_min: len, location: d.location };
            start += len;
            r
        })
        .collect())
}
