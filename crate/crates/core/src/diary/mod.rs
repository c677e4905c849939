//! Diary domain types, corpus ingestion and the planted-archetype generator.

mod csv_io;
mod lexicon;
pub mod planted;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{
    parse_diary_corpus, parse_diary_corpus_with, write_activities_csv, write_demographics_csv,
    ColumnMap,
};
pub use lexicon::Lexicons;
pub use planted::{generate_planted_corpus, PlantedSpec};

pub const DAY_MINUTES: u32 = 1440;
pub const MAX_RECORDS: usize = 80;
/// Largest gap (minutes) closed by extending the preceding record on ingest.
pub const GAP_REPAIR_MINUTES: u32 = 5;
/// Encoding of a missing or refused demographic answer.
pub const MISSING: i64 = -1;

/// The demographic variables, in canonical column order.
pub const DEMOGRAPHIC_VARIABLES: [&str; 16] = [
    "TEAGE",
    "TEHRUSL1",
    "TELFS",
    "TESCHENR",
    "TESCHFT",
    "TESCHLVL",
    "TESEX",
    "TESPEMNOT",
    "TESPUHRS",
    "TRCHILDNUM",
    "TRDPFTPT",
    "TRHHCHILD",
    "TRSPPRES",
    "TUDIS2",
    "TUELNUM",
    "TUSPUSFT",
];

#[derive(Debug, Error)]
pub enum DiaryError {
    #[error("malformed CSV at row {row}: {message}")]
    MalformedCsv { row: u64, message: String },
    #[error("unknown activity code {code} at row {row}")]
    UnknownCode { code: u32, row: u64 },
    #[error("unknown location {location} at row {row}")]
    UnknownLocation { location: u16, row: u64 },
    #[error("overlapping records in diary {case_id}")]
    OverlappingRecords { case_id: String },
    #[error("diary {case_id} does not cover the day: {detail}")]
    DayNotCovered { case_id: String, detail: String },
    #[error("diary {case_id} has {count} records (max {MAX_RECORDS})")]
    TooManyRecords { case_id: String, count: usize },
    #[error("diary {case_id} has no demographics row")]
    MissingDemographics { case_id: String },
    #[error("invalid activity code {0}")]
    InvalidCode(u32),
    #[error("activity code {code} has unregistered major category {category}")]
    UnregisteredCategory { code: u32, category: u8 },
    #[error("archetype {archetype}: infeasible template: {reason}")]
    InfeasibleTemplate { archetype: String, reason: String },
    #[error("invalid planted spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DiaryError> = std::result::Result<T, E>;

/// A coded activity. Codes are six-digit tier codes with leading zeros
/// dropped, so `10101` is `01 01 01`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ActivityCode(u32);

impl ActivityCode {
    pub fn new(code: u32) -> Result<Self> {
        if code == 0 || code > 999_999 {
            return Err(DiaryError::InvalidCode(code));
        }
        Ok(Self(code))
    }

    pub const fn value(self) -> u32 {
        self.0
    }

    /// Leading two digits of the zero-padded six-digit code.
    pub const fn major_category(self) -> u8 {
        (self.0 / 10_000) as u8
    }
}

impl TryFrom<u32> for ActivityCode {
    type Error = DiaryError;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActivityCode> for u32 {
    fn from(c: ActivityCode) -> u32 {
        c.0
    }
}

impl fmt::Display for ActivityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationId(pub u16);

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityRecord {
    pub code: ActivityCode,
    pub start_min: u32,
    pub duration_min: u32,
    pub location: LocationId,
}

impl ActivityRecord {
    pub const fn end_min(&self) -> u32 {
        self.start_min + self.duration_min
    }
}

/// One respondent's gap-free record of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityDiary {
    case_id: String,
    records: Vec<ActivityRecord>,
}

impl ActivityDiary {
    /// Validates coverage: sorted, contiguous, exactly 1440 minutes, 1..=80 records.
    pub fn new(case_id: impl Into<String>, records: Vec<ActivityRecord>) -> Result<Self> {
        let case_id = case_id.into();
        check_coverage(&case_id, &records)?;
        Ok(Self { case_id, records })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn records(&self) -> &[ActivityRecord] {
        &self.records
    }
}

pub(crate) fn check_coverage(case_id: &str, records: &[ActivityRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(DiaryError::DayNotCovered {
            case_id: case_id.to_owned(),
            detail: "no records".into(),
        });
    }
    if records.len() > MAX_RECORDS {
        return Err(DiaryError::TooManyRecords {
            case_id: case_id.to_owned(),
            count: records.len(),
        });
    }
    let mut cursor = 0u32;
    for r in records {
        if r.duration_min == 0 {
            return Err(DiaryError::DayNotCovered {
                case_id: case_id.to_owned(),
                detail: format!("zero-length record at minute {}", r.start_min),
            });
        }
        if r.start_min < cursor {
            return Err(DiaryError::OverlappingRecords { case_id: case_id.to_owned() });
        }
        if r.start_min > cursor {
            return Err(DiaryError::DayNotCovered {
                case_id: case_id.to_owned(),
                detail: format!("gap {}..{}", cursor, r.start_min),
            });
        }
        cursor = r.end_min();
    }
    if cursor != DAY_MINUTES {
        return Err(DiaryError::DayNotCovered {
            case_id: case_id.to_owned(),
            detail: format!("records end at minute {cursor}"),
        });
    }
    Ok(())
}

/// Demographic answers for one respondent, in [`DEMOGRAPHIC_VARIABLES`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub case_id: String,
    pub values: [i64; 16],
}

impl DemographicRecord {
    pub fn missing(case_id: impl Into<String>) -> Self {
        Self { case_id: case_id.into(), values: [MISSING; 16] }
    }

    pub fn get(&self, variable: &str) -> Option<i64> {
        DEMOGRAPHIC_VARIABLES
            .iter()
            .position(|v| *v == variable)
            .map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiaryCorpus {
    pub diaries: Vec<ActivityDiary>,
    pub demographics: BTreeMap<String, DemographicRecord>,
    pub lexicons: Lexicons,
}

impl DiaryCorpus {
    /// Checks the cross-table invariants and returns the corpus.
    pub fn new(
        diaries: Vec<ActivityDiary>,
        demographics: BTreeMap<String, DemographicRecord>,
        lexicons: Lexicons,
    ) -> Result<Self> {
        for d in &diaries {
            if !demographics.contains_key(d.case_id()) {
                return Err(DiaryError::MissingDemographics { case_id: d.case_id().to_owned() });
            }
            for r in d.records() {
                if !lexicons.knows_code(r.code) {
                    return Err(DiaryError::UnknownCode { code: r.code.value(), row: 0 });
                }
            }
        }
        Ok(Self { diaries, demographics, lexicons })
    }

    pub fn len(&self) -> usize {
        self.diaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diaries.is_empty()
    }

    pub fn demographics_for(&self, case_id: &str) -> &DemographicRecord {
        &self.demographics[case_id]
    }

    /// Sub-corpus holding the diaries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DiaryCorpus {
        let diaries: Vec<_> = indices.iter().map(|&i| self.diaries[i].clone()).collect();
        let demographics = diaries
            .iter()
            .map(|d| (d.case_id().to_owned(), self.demographics[d.case_id()].clone()))
            .collect();
        DiaryCorpus { diaries, demographics, lexicons: self.lexicons.clone() }
    }
}
