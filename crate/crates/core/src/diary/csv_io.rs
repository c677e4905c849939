use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    ActivityCode, ActivityDiary, ActivityRecord, DemographicRecord, DiaryCorpus, DiaryError,
    Lexicons, LocationId, Result, DAY_MINUTES, DEMOGRAPHIC_VARIABLES, GAP_REPAIR_MINUTES, MISSING,
};

/// Column names of the activity and demographic tables.
///
/// Defaults are the canonical schema. Pointing the fields at survey export
/// names (`TUCASEID`, `TRCODEP`, ...) adapts raw exports; start and stop
/// columns may hold `HH:MM[:SS]` clock times, which are shifted by
/// `clock_anchor_min` onto the diary clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub case_id: String,
    pub seq_no: String,
    pub activity_code: String,
    pub start_min: String,
    pub stop_min: String,
    pub location_id: String,
    pub demographics_case_id: String,
    pub clock_anchor_min: u32,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            case_id: "case_id".into(),
            seq_no: "seq_no".into(),
            activity_code: "activity_code".into(),
            start_min: "start_min".into(),
            stop_min: "stop_min".into(),
            location_id: "location_id".into(),
            demographics_case_id: "case_id".into(),
            clock_anchor_min: 0,
        }
    }
}

struct RawRow {
    row: u64,
    seq_no: i64,
    code: ActivityCode,
    start: u32,
    stop: u32,
    location: LocationId,
}

fn malformed(row: u64, message: impl Into<String>) -> DiaryError {
    DiaryError::MalformedCsv { row, message: message.into() }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| malformed(1, format!("missing column `{name}`")))
}

/// Parses a minute count or a clock time; the flag reports which.
fn parse_time(field: &str, anchor: u32, row: u64) -> Result<(u32, bool)> {
    if let Ok(v) = field.parse::<u32>() {
        return Ok((v, false));
    }
    let parts: Vec<&str> = field.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(malformed(row, format!("bad time `{field}`")));
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| p.parse::<u32>().map_err(|_| malformed(row, format!("bad time `{field}`"))))
        .collect::<Result<_>>()?;
    if nums[0] > 24 || nums[1] > 59 {
        return Err(malformed(row, format!("bad time `{field}`")));
    }
    let clock = nums[0] * 60 + nums[1];
    Ok(((clock + DAY_MINUTES * 2 - anchor) % DAY_MINUTES, true))
}

pub fn parse_diary_corpus<A: Read, D: Read>(
    activity_csv: A,
    demographics_csv: D,
    lexicons: &Lexicons,
) -> Result<DiaryCorpus> {
    parse_diary_corpus_with(activity_csv, demographics_csv, lexicons, &ColumnMap::default())
}

/// Reads both tables. Diaries keep the order in which their case ids first
/// appear in the activity table.
pub fn parse_diary_corpus_with<A: Read, D: Read>(
    activity_csv: A,
    demographics_csv: D,
    lexicons: &Lexicons,
    columns: &ColumnMap,
) -> Result<DiaryCorpus> {
    lexicons.validate()?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(activity_csv);
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let idx_case = column(&headers, &columns.case_id)?;
    let idx_seq = column(&headers, &columns.seq_no)?;
    let idx_code = column(&headers, &columns.activity_code)?;
    let idx_start = column(&headers, &columns.start_min)?;
    let idx_stop = column(&headers, &columns.stop_min)?;
    let idx_loc = column(&headers, &columns.location_id)?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            malformed(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let case_id = field(idx_case).to_owned();
        if case_id.is_empty() {
            return Err(malformed(row, "empty case_id"));
        }
        let seq_no: i64 = field(idx_seq)
            .parse()
            .map_err(|_| malformed(row, format!("bad seq_no `{}`", field(idx_seq))))?;
        let raw_code: u32 = field(idx_code)
            .parse()
            .map_err(|_| malformed(row, format!("bad activity_code `{}`", field(idx_code))))?;
        let code = ActivityCode::new(raw_code).map_err(|_| malformed(row, "activity_code out of range"))?;
        if !lexicons.knows_code(code) {
            return Err(DiaryError::UnknownCode { code: raw_code, row });
        }
        let (start, _) = parse_time(field(idx_start), columns.clock_anchor_min, row)?;
        let (mut stop, clock) = parse_time(field(idx_stop), columns.clock_anchor_min, row)?;
        if clock && stop <= start {
            stop += DAY_MINUTES;
        }
        if start >= DAY_MINUTES || stop > DAY_MINUTES || stop <= start {
            return Err(malformed(row, format!("bad interval {start}..{stop}")));
        }
        let loc: u16 = field(idx_loc)
            .parse()
            .map_err(|_| malformed(row, format!("bad location_id `{}`", field(idx_loc))))?;
        let location = LocationId(loc);
        if !lexicons.knows_location(location) {
            return Err(DiaryError::UnknownLocation { location: loc, row });
        }
        let group = groups.entry(case_id.clone()).or_insert_with(|| {
            order.push(case_id);
            Vec::new()
        });
        group.push(RawRow { row, seq_no, code, start, stop, location });
    }

    let mut diaries = Vec::with_capacity(order.len());
    for case_id in order {
        let mut rows = groups.remove(&case_id).expect("grouped");
        rows.sort_by_key(|r| (r.start, r.seq_no, r.row));
        diaries.push(assemble_diary(&case_id, &rows)?);
    }

    let demographics = parse_demographics(demographics_csv, columns)?;
    let mut kept = BTreeMap::new();
    for d in &diaries {
        match demographics.get(d.case_id()) {
            Some(rec) => {
                kept.insert(d.case_id().to_owned(), rec.clone());
            }
            None => {
                return Err(DiaryError::MissingDemographics { case_id: d.case_id().to_owned() })
            }
        }
    }
    Ok(DiaryCorpus { diaries, demographics: kept, lexicons: lexicons.clone() })
}

/// Builds a diary from start-sorted rows, closing gaps of at most
/// [`GAP_REPAIR_MINUTES`] by extending the record before the gap.
fn assemble_diary(case_id: &str, rows: &[RawRow]) -> Result<ActivityDiary> {
    let not_covered = |detail: String| DiaryError::DayNotCovered {
        case_id: case_id.to_owned(),
        detail,
    };
    let mut records: Vec<ActivityRecord> = Vec::with_capacity(rows.len());
    for r in rows {
        match records.last_mut() {
            None if r.start != 0 => return Err(not_covered(format!("first record starts at {}", r.start))),
            None => {}
            Some(prev) => {
                let prev_end = prev.end_min();
                if r.start < prev_end {
                    return Err(DiaryError::OverlappingRecords { case_id: case_id.to_owned() });
                }
                let gap = r.start - prev_end;
                if gap > GAP_REPAIR_MINUTES {
                    return Err(not_covered(format!("gap {}..{}", prev_end, r.start)));
                }
                prev.duration_min += gap;
            }
        }
        records.push(ActivityRecord {
            code: r.code,
            start_min: r.start,
            duration_min: r.stop - r.start,
            location: r.location,
        });
    }
    if let Some(last) = records.last_mut() {
        let tail = DAY_MINUTES - last.end_min();
        if tail > GAP_REPAIR_MINUTES {
            return Err(not_covered(format!("day ends at {}", last.end_min())));
        }
        last.duration_min += tail;
    }
    ActivityDiary::new(case_id, records)
}

fn parse_demographics<D: Read>(
    input: D,
    columns: &ColumnMap,
) -> Result<BTreeMap<String, DemographicRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let idx_case = column(&headers, &columns.demographics_case_id)?;
    let idx_vars: Vec<usize> = DEMOGRAPHIC_VARIABLES
        .iter()
        .map(|name| column(&headers, name))
        .collect::<Result<_>>()?;

    let mut out = BTreeMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            malformed(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let case_id = record.get(idx_case).unwrap_or("").to_owned();
        if case_id.is_empty() {
            return Err(malformed(row, "empty case_id"));
        }
        let mut values = [MISSING; 16];
        for (slot, &i) in values.iter_mut().zip(&idx_vars) {
            let text = record.get(i).unwrap_or("");
            if text.is_empty() {
                continue;
            }
            let v: i64 = text
                .parse()
                .map_err(|_| malformed(row, format!("bad demographic value `{text}`")))?;
            // Survey refusal / don't-know / blank codes all collapse to the sentinel.
            *slot = if v < 0 { MISSING } else { v };
        }
        if out.insert(case_id.clone(), DemographicRecord { case_id, values }).is_some() {
            return Err(malformed(row, "duplicate case_id"));
        }
    }
    Ok(out)
}

pub fn write_activities_csv<W: Write>(corpus: &DiaryCorpus, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "seq_no", "activity_code", "start_min", "stop_min", "location_id"])
        .map_err(csv_err)?;
    for d in &corpus.diaries {
        for (i, r) in d.records().iter().enumerate() {
            w.write_record([
                d.case_id().to_owned(),
                (i + 1).to_string(),
                r.code.value().to_string(),
                r.start_min.to_string(),
                r.end_min().to_string(),
                r.location.0.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes demographics for the corpus diaries, in diary order.
pub fn write_demographics_csv<W: Write>(corpus: &DiaryCorpus, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["case_id"];
    header.extend(DEMOGRAPHIC_VARIABLES);
    w.write_record(&header).map_err(csv_err)?;
    for d in &corpus.diaries {
        let rec = &corpus.demographics[d.case_id()];
        let mut row = vec![rec.case_id.clone()];
        row.extend(rec.values.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DiaryError {
    DiaryError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEMO_HEADER: &str = "case_id,TEAGE,TEHRUSL1,TELFS,TESCHENR,TESCHFT,TESCHLVL,TESEX,TESPEMNOT,TESPUHRS,TRCHILDNUM,TRDPFTPT,TRHHCHILD,TRSPPRES,TUDIS2,TUELNUM,TUSPUSFT";

    fn demo(ids: &[&str]) -> String {
        let mut s = format!("{DEMO_HEADER}\n");
        for id in ids {
            s.push_str(&format!("{id},40,40,1,-1,-1,-1,1,1,40,0,1,2,1,-2,0,1\n"));
        }
        s
    }

    fn parse(acts: &str, ids: &[&str]) -> Result<DiaryCorpus> {
        parse_diary_corpus(acts.as_bytes(), demo(ids).as_bytes(), &Lexicons::default())
    }

    #[test]
    fn minimal_valid_day() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    a,1,10101,0,480,1\na,2,50101,480,1020,2\na,3,10101,1020,1440,1\n";
        let corpus = parse(acts, &["a"]).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.diaries[0].records().len(), 3);
        // -2 collapses to the missing sentinel
        assert_eq!(corpus.demographics["a"].get("TUDIS2"), Some(MISSING));
    }

    #[test]
    fn five_minute_gap_is_repaired() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    a,1,10101,0,475,1\na,2,50101,480,1440,2\n";
        let corpus = parse(acts, &["a"]).unwrap();
        let recs = corpus.diaries[0].records();
        assert_eq!(recs[0].duration_min, 480);
        assert_eq!(recs[1].start_min, 480);
    }

    #[test]
    fn six_minute_gap_is_rejected() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    a,1,10101,0,474,1\na,2,50101,480,1440,2\n";
        assert!(matches!(parse(acts, &["a"]), Err(DiaryError::DayNotCovered { .. })));
    }

    #[test]
    fn overlap_names_the_case() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    a,1,10101,0,1440,1\nzz,1,10101,0,1440,1\nzz,2,50101,400,1440,2\n";
        match parse(acts, &["a", "zz"]) {
            Err(DiaryError::OverlappingRecords { case_id }) => assert_eq!(case_id, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_code_reports_row() {
        let lex = Lexicons::from_json(r#"{"activities": {"10101": "sleep"}}"#).unwrap();
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    a,1,10101,0,480,1\na,2,50101,480,1440,2\n";
        match parse_diary_corpus(acts.as_bytes(), demo(&["a"]).as_bytes(), &lex) {
            Err(DiaryError::UnknownCode { code, row }) => {
                assert_eq!(code, 50101);
                assert_eq!(row, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_is_numbered() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    a,1,10101,0,480,1\na,2,50101,abc,1440,2\n";
        assert!(matches!(parse(acts, &["a"]), Err(DiaryError::MalformedCsv { row: 3, .. })));
    }

    #[test]
    fn missing_demographics_is_an_error() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\na,1,10101,0,1440,1\n";
        assert!(matches!(parse(acts, &["b"]), Err(DiaryError::MissingDemographics { .. })));
    }

    #[test]
    fn clock_times_with_anchor() {
        let columns = ColumnMap {
            case_id: "TUCASEID".into(),
            seq_no: "TUACTIVITY_N".into(),
            activity_code: "TRCODEP".into(),
            start_min: "TUSTARTTIM".into(),
            stop_min: "TUSTOPTIME".into(),
            location_id: "TEWHERE".into(),
            demographics_case_id: "case_id".into(),
            clock_anchor_min: 240,
        };
        let acts = "TUCASEID,TUACTIVITY_N,TRCODEP,TUSTARTTIM,TUSTOPTIME,TEWHERE\n\
                    a,1,10101,04:00:00,12:00:00,1\na,2,120303,12:00:00,04:00:00,1\n";
        let corpus = parse_diary_corpus_with(
            acts.as_bytes(),
            demo(&["a"]).as_bytes(),
            &Lexicons::default(),
            &columns,
        )
        .unwrap();
        let recs = corpus.diaries[0].records();
        assert_eq!((recs[0].start_min, recs[0].duration_min), (0, 480));
        assert_eq!((recs[1].start_min, recs[1].duration_min), (480, 960));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let acts = "case_id,seq_no,activity_code,start_min,stop_min,location_id\n\
                    b,1,10101,0,480,1\nb,2,50101,480,1440,2\na,1,10101,0,1440,1\n";
        let corpus = parse(acts, &["a", "b"]).unwrap();
        let mut a_out = Vec::new();
        let mut d_out = Vec::new();
        write_activities_csv(&corpus, &mut a_out).unwrap();
        write_demographics_csv(&corpus, &mut d_out).unwrap();
        let again =
            parse_diary_corpus(a_out.as_slice(), d_out.as_slice(), &Lexicons::default()).unwrap();
        assert_eq!(again, corpus);
        assert_eq!(again.diaries[0].case_id(), "b");
    }
}
