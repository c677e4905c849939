//! Per-diary feature vectors: demographic answers, activity episode counts
//! and the 288 five-minute time slices.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diary::{ActivityCode, ActivityDiary, DiaryCorpus, DAY_MINUTES, DEMOGRAPHIC_VARIABLES};

pub const SLICE_MINUTES: u32 = 5;
pub const N_SLICES: usize = (DAY_MINUTES / SLICE_MINUTES) as usize;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("activity code {0} is not in the code dictionary")]
    UnknownCode(ActivityCode),
    #[error("dictionary does not match corpus: {0}")]
    InconsistentDictionary(String),
    #[error("unknown demographic variable {0}")]
    UnknownVariable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distinct codes of a corpus, ascending; position is the count column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<ActivityCode>", into = "Vec<ActivityCode>")]
pub struct CodeDictionary {
    codes: Vec<ActivityCode>,
    index: BTreeMap<ActivityCode, usize>,
}

impl From<Vec<ActivityCode>> for CodeDictionary {
    fn from(codes: Vec<ActivityCode>) -> Self {
        Self::from_codes(codes)
    }
}

impl From<CodeDictionary> for Vec<ActivityCode> {
    fn from(d: CodeDictionary) -> Self {
        d.codes
    }
}

impl CodeDictionary {
    pub fn from_codes(mut codes: Vec<ActivityCode>) -> Self {
        codes.sort_unstable();
        codes.dedup();
        let index = codes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Self { codes, index }
    }

    pub fn codes(&self) -> &[ActivityCode] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn column(&self, code: ActivityCode) -> Option<usize> {
        self.index.get(&code).copied()
    }
}

pub fn build_code_dictionary(corpus: &DiaryCorpus) -> Result<CodeDictionary, FeatureError> {
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let codes = corpus
        .diaries
        .iter()
        .flat_map(|d| d.records().iter().map(|r| r.code))
        .collect();
    Ok(CodeDictionary::from_codes(codes))
}

/// Episode count per dictionary code.
pub fn count_vector(diary: &ActivityDiary, dict: &CodeDictionary) -> Result<Vec<u32>, FeatureError> {
    let mut counts = vec![0u32; dict.len()];
    for r in diary.records() {
        let col = dict.column(r.code).ok_or(FeatureError::UnknownCode(r.code))?;
        counts[col] += 1;
    }
    Ok(counts)
}

/// Code of the activity covering most of each five-minute slice; an exact
/// tie goes to the activity that started first.
pub fn time_slice_vector(diary: &ActivityDiary) -> Vec<ActivityCode> {
    let records = diary.records();
    let mut out = Vec::with_capacity(N_SLICES);
    let mut first = 0usize;
    for k in 0..N_SLICES as u32 {
        let (lo, hi) = (k * SLICE_MINUTES, (k + 1) * SLICE_MINUTES);
        while records[first].end_min() <= lo {
            first += 1;
        }
        let mut best: Option<(u32, ActivityCode)> = None;
        for r in records[first..].iter().take_while(|r| r.start_min < hi) {
            let cover = r.end_min().min(hi) - r.start_min.max(lo);
            // strict comparison keeps the earlier record on ties
            if best.is_none_or(|(c, _)| cover > c) {
                best = Some((cover, r.code));
            }
        }
        out.push(best.expect("valid diary covers every slice").1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    DemographicOnly,
    DemographicPlusActivity,
}

impl FeatureSet {
    pub fn short_name(self) -> &'static str {
        match self {
            Self::DemographicOnly => "demographic",
            Self::DemographicPlusActivity => "activity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSpec {
    Demographic(String),
    Count(ActivityCode),
    Slice(usize),
}

impl ColumnSpec {
    pub fn name(&self) -> String {
        match self {
            Self::Demographic(v) => v.clone(),
            Self::Count(c) => format!("count_{c}"),
            Self::Slice(k) => format!("slice_{k:03}"),
        }
    }
}

/// Row-major numeric matrix, one row per diary in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub case_ids: Vec<String>,
    pub columns: Vec<ColumnSpec>,
    pub feature_set: FeatureSet,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(
        case_ids: Vec<String>,
        columns: Vec<ColumnSpec>,
        feature_set: FeatureSet,
        rows: Vec<Vec<f64>>,
    ) -> Self {
        let width = columns.len();
        assert_eq!(case_ids.len(), rows.len(), "one case id per row");
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            assert_eq!(r.len(), width, "row width");
            data.extend(r);
        }
        Self { case_ids, columns, feature_set, data }
    }

    pub fn n_rows(&self) -> usize {
        self.case_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    /// Matrix restricted to `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            case_ids: rows.iter().map(|&i| self.case_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            feature_set: self.feature_set,
            data,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["case_id".to_owned()];
        header.extend(self.columns.iter().map(ColumnSpec::name));
        w.write_record(&header).map_err(std::io::Error::other)?;
        for (i, id) in self.case_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assembles features with all sixteen demographic variables.
pub fn assemble_features(
    corpus: &DiaryCorpus,
    dict: &CodeDictionary,
    feature_set: FeatureSet,
) -> Result<FeatureMatrix, FeatureError> {
    assemble_features_with(corpus, dict, feature_set, &DEMOGRAPHIC_VARIABLES)
}

/// Assembles features using only the named demographic variables.
pub fn assemble_features_with(
    corpus: &DiaryCorpus,
    dict: &CodeDictionary,
    feature_set: FeatureSet,
    variables: &[&str],
) -> Result<FeatureMatrix, FeatureError> {
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let var_idx: Vec<usize> = variables
        .iter()
        .map(|v| {
            DEMOGRAPHIC_VARIABLES
                .iter()
                .position(|d| d == v)
                .ok_or_else(|| FeatureError::UnknownVariable((*v).to_owned()))
        })
        .collect::<Result<_, _>>()?;

    let mut columns: Vec<ColumnSpec> =
        var_idx.iter().map(|&i| ColumnSpec::Demographic(DEMOGRAPHIC_VARIABLES[i].to_owned())).collect();
    if feature_set == FeatureSet::DemographicPlusActivity {
        columns.extend(dict.codes().iter().map(|&c| ColumnSpec::Count(c)));
        columns.extend((0..N_SLICES).map(ColumnSpec::Slice));
    }

    let rows: Vec<Vec<f64>> = corpus
        .diaries
        .par_iter()
        .map(|d| {
            let demo = corpus.demographics_for(d.case_id());
            let mut row: Vec<f64> = var_idx.iter().map(|&i| demo.values[i] as f64).collect();
            if feature_set == FeatureSet::DemographicPlusActivity {
                let counts = count_vector(d, dict).map_err(|e| match e {
                    FeatureError::UnknownCode(c) => FeatureError::InconsistentDictionary(format!(
                        "code {c} of diary {} missing",
                        d.case_id()
                    )),
                    other => other,
                })?;
                row.extend(counts.iter().map(|&c| c as f64));
                row.extend(time_slice_vector(d).iter().map(|c| c.value() as f64));
            }
            Ok(row)
        })
        .collect::<Result<_, FeatureError>>()?;

    let case_ids = corpus.diaries.iter().map(|d| d.case_id().to_owned()).collect();
    Ok(FeatureMatrix::from_rows(case_ids, columns, feature_set, rows))
}
