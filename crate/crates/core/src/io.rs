//! CSV readers and writers for every table the pipeline consumes or emits.
//!
//! Readers check the header, report problems as `source:line: message`, and
//! treat an empty field as an absent value where the format allows one.

use crate::covariates::{Block, CovariateColumn, CovariateTable, WeatherRecord, N_WEATHER, WEATHER_MEASURES};
use crate::design::DesignTable;
use crate::error::{Error, Result};
use crate::evaluation::{ComparisonReport, ImportanceReport};
use crate::glm::FittedModel;
use crate::gt::{GtSample, GtSampleSet, SeriesPoint};
use crate::survival::{PeriodLevelRow, PeriodLevelTable, PersonPeriodRow, PersonPeriodTable, SurveyCase};
use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, Trim, Writer};
use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::str::FromStr;

pub const CASES_HEADER: [&str; 7] = [
    "case_id",
    "cohort_id",
    "invitation_date",
    "reminder1_date",
    "reminder2_date",
    "end_date",
    "response_date",
];
pub const PERSON_PERIOD_HEADER: [&str; 7] = ["case_id", "cohort_id", "date", "s", "phase", "days", "event"];
pub const PERIOD_LEVEL_HEADER: [&str; 6] = ["cohort_id", "date", "days", "phase", "events", "at_risk"];
pub const GT_LONG_HEADER: [&str; 4] = ["sample_index", "start_date", "day_offset", "score"];
pub const SERIES_HEADER: [&str; 3] = ["date", "value", "coverage"];

const DATE_FORMAT: &str = "%Y-%m-%d";

struct Source<'a> {
    name: &'a str,
}

impl Source<'_> {
    fn err(&self, line: u64, message: impl Into<String>) -> Error {
        Error::parse(self.name, line, message)
    }

    fn csv_err(&self, e: csv::Error) -> Error {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                self.err(line, format!("expected {expected_len} fields, found {len}"))
            }
            csv::ErrorKind::Utf8 { .. } => self.err(line, "invalid UTF-8"),
            other => self.err(line, format!("{other:?}")),
        }
    }

    fn reader<R: Read>(&self, input: R) -> Result<(csv::Reader<R>, Vec<String>)> {
        let mut reader = ReaderBuilder::new().trim(Trim::All).from_reader(input);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| self.csv_err(e))?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(self.err(1, "missing header row"));
        }
        Ok((reader, header))
    }

    fn expect_header<R: Read>(&self, input: R, expected: &[&str]) -> Result<csv::Reader<R>> {
        let (reader, header) = self.reader(input)?;
        if header.len() != expected.len() || header.iter().zip(expected).any(|(h, e)| !h.eq_ignore_ascii_case(e)) {
            return Err(self.err(1, format!("expected header `{}`, found `{}`", expected.join(","), header.join(","))));
        }
        Ok(reader)
    }

    fn rows<R: Read, T>(
        &self,
        reader: &mut csv::Reader<R>,
        mut f: impl FnMut(&Row<'_>) -> Result<T>,
    ) -> Result<Vec<T>> {
        let mut out = Vec::new();
        let mut record = StringRecord::new();
        loop {
            match reader.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    out.push(f(&Row {
                        src: self,
                        record: &record,
                        line,
                    })?);
                }
                Err(e) => return Err(self.csv_err(e)),
            }
        }
        Ok(out)
    }
}

struct Row<'a> {
    src: &'a Source<'a>,
    record: &'a StringRecord,
    line: u64,
}

impl Row<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        self.src.err(self.line, message)
    }

    fn text(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("")
    }

    fn required(&self, i: usize, what: &str) -> Result<&str> {
        let v = self.text(i);
        if v.is_empty() {
            return Err(self.err(format!("{what} is empty")));
        }
        Ok(v)
    }

    fn date(&self, i: usize, what: &str) -> Result<NaiveDate> {
        let v = self.required(i, what)?;
        NaiveDate::parse_from_str(v, DATE_FORMAT).map_err(|_| self.err(format!("{what}: invalid date `{v}`")))
    }

    fn opt_date(&self, i: usize, what: &str) -> Result<Option<NaiveDate>> {
        if self.text(i).is_empty() {
            Ok(None)
        } else {
            self.date(i, what).map(Some)
        }
    }

    fn parse<T: FromStr>(&self, i: usize, what: &str) -> Result<T> {
        let v = self.required(i, what)?;
        v.parse().map_err(|_| self.err(format!("{what}: invalid value `{v}`")))
    }

    fn float(&self, i: usize, what: &str) -> Result<f64> {
        let v: f64 = self.parse(i, what)?;
        if !v.is_finite() {
            return Err(self.err(format!("{what}: value must be finite")));
        }
        Ok(v)
    }

    fn opt_float(&self, i: usize, what: &str) -> Result<Option<f64>> {
        if self.text(i).is_empty() {
            Ok(None)
        } else {
            self.float(i, what).map(Some)
        }
    }
}

fn opt_date_string(d: Option<NaiveDate>) -> String {
    d.map(|d| d.to_string()).unwrap_or_default()
}

fn opt_float_string(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_write_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv output: {other:?}")),
    }
}

fn finish<W: Write>(w: Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

macro_rules! write_row {
    ($w:expr, $($field:expr),+ $(,)?) => {
        $w.write_record(&[$($field.to_string()),+]).map_err(csv_write_err)?
    };
}

/// Reads case records; each row's schedule is validated.
pub fn read_cases<R: Read>(input: R, source_name: &str) -> Result<Vec<SurveyCase>> {
    let src = Source { name: source_name };
    let mut reader = src.expect_header(input, &CASES_HEADER)?;
    src.rows(&mut reader, |row| {
        let case = SurveyCase {
            case_id: row.required(0, "case_id")?.to_string(),
            cohort_id: row.required(1, "cohort_id")?.to_string(),
            invitation_date: row.date(2, "invitation_date")?,
            reminder1_date: row.opt_date(3, "reminder1_date")?,
            reminder2_date: row.opt_date(4, "reminder2_date")?,
            end_date: row.date(5, "end_date")?,
            response_date: row.opt_date(6, "response_date")?,
        };
        case.validate_schedule().map_err(|e| row.err(e.to_string()))?;
        Ok(case)
    })
}

pub fn write_cases<W: Write>(output: W, cases: &[SurveyCase]) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(CASES_HEADER).map_err(csv_write_err)?;
    for c in cases {
        write_row!(
            w,
            c.case_id,
            c.cohort_id,
            c.invitation_date,
            opt_date_string(c.reminder1_date),
            opt_date_string(c.reminder2_date),
            c.end_date,
            opt_date_string(c.response_date),
        );
    }
    finish(w)
}

pub fn read_person_period<R: Read>(input: R, source_name: &str) -> Result<PersonPeriodTable> {
    let src = Source { name: source_name };
    let mut reader = src.expect_header(input, &PERSON_PERIOD_HEADER)?;
    let rows = src.rows(&mut reader, |row| {
        let s: u32 = row.parse(3, "s")?;
        let days: f64 = row.float(5, "days")?;
        if s == 0 || days != f64::from(s) {
            return Err(row.err(format!("s must be a positive integer equal to days, got s={s}, days={days}")));
        }
        let event = match row.required(6, "event")? {
            "0" => false,
            "1" => true,
            other => return Err(row.err(format!("event must be 0 or 1, got `{other}`"))),
        };
        Ok(PersonPeriodRow {
            case_id: row.required(0, "case_id")?.to_string(),
            cohort_id: row.required(1, "cohort_id")?.to_string(),
            date: row.date(2, "date")?,
            s,
            phase: row.parse(4, "phase")?,
            event,
        })
    })?;
    Ok(PersonPeriodTable { rows })
}

pub fn write_person_period<W: Write>(output: W, table: &PersonPeriodTable) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(PERSON_PERIOD_HEADER).map_err(csv_write_err)?;
    for r in &table.rows {
        write_row!(w, r.case_id, r.cohort_id, r.date, r.s, r.phase, r.s, u8::from(r.event));
    }
    finish(w)
}

pub fn read_period_level<R: Read>(input: R, source_name: &str) -> Result<PeriodLevelTable> {
    let src = Source { name: source_name };
    let mut reader = src.expect_header(input, &PERIOD_LEVEL_HEADER)?;
    let mut seen = HashSet::new();
    let rows = src.rows(&mut reader, |row| {
        let r = PeriodLevelRow {
            cohort_id: row.required(0, "cohort_id")?.to_string(),
            date: row.date(1, "date")?,
            days: row.parse(2, "days")?,
            phase: row.parse(3, "phase")?,
            events: row.parse(4, "events")?,
            at_risk: row.parse(5, "at_risk")?,
        };
        if r.days == 0 {
            return Err(row.err("days must be at least 1"));
        }
        if r.at_risk == 0 || r.events > r.at_risk {
            return Err(row.err(format!("need 0 <= events <= at_risk and at_risk >= 1, got {}/{}", r.events, r.at_risk)));
        }
        if !seen.insert(r.key()) {
            return Err(row.err("duplicate (cohort_id, date, phase, days) row"));
        }
        Ok(r)
    })?;
    let mut table = PeriodLevelTable { rows };
    table.rows.sort_by_key(PeriodLevelRow::key);
    Ok(table)
}

pub fn write_period_level<W: Write>(output: W, table: &PeriodLevelTable) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(PERIOD_LEVEL_HEADER).map_err(csv_write_err)?;
    for r in &table.rows {
        write_row!(w, r.cohort_id, r.date, r.days, r.phase, r.events, r.at_risk);
    }
    finish(w)
}

/// Reads `station_id,date` plus the twenty weather measures (any order,
/// names case-insensitive). Records are validated individually.
pub fn read_weather<R: Read>(input: R, source_name: &str) -> Result<Vec<WeatherRecord>> {
    let src = Source { name: source_name };
    let (mut reader, header) = src.reader(input)?;
    let position = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let station = position("station_id").ok_or_else(|| src.err(1, "missing column `station_id`"))?;
    let date = position("date").ok_or_else(|| src.err(1, "missing column `date`"))?;
    let mut measure_idx = [0usize; N_WEATHER];
    for (slot, (name, _)) in measure_idx.iter_mut().zip(WEATHER_MEASURES) {
        *slot = position(name).ok_or_else(|| src.err(1, format!("missing weather column `{name}`")))?;
    }
    if header.len() != N_WEATHER + 2 {
        return Err(src.err(1, format!("expected {} columns, found {}", N_WEATHER + 2, header.len())));
    }
    src.rows(&mut reader, |row| {
        let mut values = [None; N_WEATHER];
        for (v, (&i, (name, _))) in values.iter_mut().zip(measure_idx.iter().zip(WEATHER_MEASURES)) {
            *v = row.opt_float(i, name)?;
        }
        let record = WeatherRecord {
            station_id: row.required(station, "station_id")?.to_string(),
            date: row.date(date, "date")?,
            values,
        };
        record.validate().map_err(|e| row.err(e.to_string()))?;
        Ok(record)
    })
}

pub fn write_weather<W: Write>(output: W, records: &[WeatherRecord]) -> Result<()> {
    let mut w = Writer::from_writer(output);
    let mut header = vec!["station_id".to_string(), "date".to_string()];
    header.extend(WEATHER_MEASURES.iter().map(|(n, _)| n.to_uppercase()));
    w.write_record(&header).map_err(csv_write_err)?;
    for r in records {
        let mut fields = vec![r.station_id.clone(), r.date.to_string()];
        fields.extend(r.values.iter().map(|v| opt_float_string(*v)));
        w.write_record(&fields).map_err(csv_write_err)?;
    }
    finish(w)
}

/// Reads `date,<name>...`; each column's block follows from its name.
pub fn read_covariates<R: Read>(input: R, source_name: &str) -> Result<CovariateTable> {
    let src = Source { name: source_name };
    let (mut reader, header) = src.reader(input)?;
    if !header[0].eq_ignore_ascii_case("date") {
        return Err(src.err(1, "first column must be `date`"));
    }
    let mut seen = HashSet::new();
    let mut columns = Vec::with_capacity(header.len() - 1);
    for name in &header[1..] {
        crate::glm::model_file::validate_name(name).map_err(|e| src.err(1, e.to_string()))?;
        if !seen.insert(name.as_str()) {
            return Err(src.err(1, format!("duplicate column `{name}`")));
        }
        columns.push(CovariateColumn {
            name: name.clone(),
            block: Block::classify(name),
        });
    }
    let mut rows = BTreeMap::new();
    src.rows(&mut reader, |row| {
        let date = row.date(0, "date")?;
        let values = (1..header.len())
            .map(|i| row.opt_float(i, &header[i]))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(date, values).is_some() {
            return Err(row.err(format!("duplicate date {date}")));
        }
        Ok(())
    })?;
    CovariateTable::new(columns, rows)
}

pub fn write_covariates<W: Write>(output: W, table: &CovariateTable) -> Result<()> {
    let mut w = Writer::from_writer(output);
    let mut header = vec!["date".to_string()];
    header.extend(table.names().map(String::from));
    w.write_record(&header).map_err(csv_write_err)?;
    for (date, values) in &table.rows {
        let mut fields = vec![date.to_string()];
        fields.extend(values.iter().map(|v| opt_float_string(*v)));
        w.write_record(&fields).map_err(csv_write_err)?;
    }
    finish(w)
}

/// Reads long-form samples (`day_offset` counts from 0) into a validated set.
pub fn read_gt_long<R: Read>(input: R, source_name: &str, window: usize) -> Result<GtSampleSet> {
    let src = Source { name: source_name };
    let mut reader = src.expect_header(input, &GT_LONG_HEADER)?;
    let mut samples: BTreeMap<usize, (NaiveDate, Vec<Option<f64>>)> = BTreeMap::new();
    src.rows(&mut reader, |row| {
        let index: usize = row.parse(0, "sample_index")?;
        let start = row.date(1, "start_date")?;
        let offset: usize = row.parse(2, "day_offset")?;
        let score = row.float(3, "score")?;
        if offset >= window {
            return Err(row.err(format!("day_offset {offset} outside window of {window} days")));
        }
        let entry = samples.entry(index).or_insert_with(|| (start, vec![None; window]));
        if entry.0 != start {
            return Err(row.err(format!("sample {index} has start dates {} and {start}", entry.0)));
        }
        if entry.1[offset].replace(score).is_some() {
            return Err(row.err(format!("duplicate day_offset {offset} for sample {index}")));
        }
        Ok(())
    })?;
    let samples = samples
        .into_iter()
        .map(|(index, (start_date, scores))| {
            let missing = scores.iter().filter(|s| s.is_none()).count();
            if missing > 0 {
                return Err(Error::InvalidSamples(format!("sample {index} lacks {missing} of {window} days")));
            }
            Ok(GtSample {
                index,
                start_date,
                scores: scores.into_iter().flatten().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GtSampleSet::new(window, samples)
}

/// Reads one-row-per-sample form `sample_index,start_date,g1,...,gW`; the
/// window is the number of score columns.
pub fn read_gt_wide<R: Read>(input: R, source_name: &str) -> Result<GtSampleSet> {
    let src = Source { name: source_name };
    let (mut reader, header) = src.reader(input)?;
    let window = header.len().saturating_sub(2);
    let ok = header.len() > 2
        && header[0].eq_ignore_ascii_case("sample_index")
        && header[1].eq_ignore_ascii_case("start_date")
        && header[2..].iter().enumerate().all(|(i, h)| h.eq_ignore_ascii_case(&format!("g{}", i + 1)));
    if !ok {
        return Err(src.err(1, "expected header `sample_index,start_date,g1,...,gW`"));
    }
    let samples = src.rows(&mut reader, |row| {
        Ok(GtSample {
            index: row.parse(0, "sample_index")?,
            start_date: row.date(1, "start_date")?,
            scores: (0..window).map(|i| row.float(i + 2, "score")).collect::<Result<_>>()?,
        })
    })?;
    let mut seen = HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !seen.insert(s.index)) {
        return Err(Error::InvalidSamples(format!("duplicate sample {}", dup.index)));
    }
    GtSampleSet::new(window, samples)
}

pub fn write_gt_long<W: Write>(output: W, set: &GtSampleSet) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(GT_LONG_HEADER).map_err(csv_write_err)?;
    for s in set.samples() {
        for (offset, score) in s.scores.iter().enumerate() {
            write_row!(w, s.index, s.start_date, offset, score);
        }
    }
    finish(w)
}

pub fn write_series<W: Write>(output: W, points: &[SeriesPoint]) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(SERIES_HEADER).map_err(csv_write_err)?;
    for p in points {
        write_row!(w, p.date, opt_float_string(p.value), p.coverage);
    }
    finish(w)
}

pub fn read_series<R: Read>(input: R, source_name: &str) -> Result<Vec<SeriesPoint>> {
    let src = Source { name: source_name };
    let mut reader = src.expect_header(input, &SERIES_HEADER)?;
    let mut last: Option<NaiveDate> = None;
    src.rows(&mut reader, |row| {
        let date = row.date(0, "date")?;
        if last.is_some_and(|l| date <= l) {
            return Err(row.err("dates must be strictly increasing"));
        }
        last = Some(date);
        Ok(SeriesPoint {
            date,
            value: row.opt_float(1, "value")?,
            coverage: row.parse(2, "coverage")?,
        })
    })
}

/// Reported values of a series keyed by date.
pub fn series_values(points: &[SeriesPoint]) -> BTreeMap<NaiveDate, f64> {
    points.iter().filter_map(|p| p.value.map(|v| (p.date, v))).collect()
}

pub fn write_predictions<W: Write>(output: W, design: &DesignTable, hazards: &[f64]) -> Result<()> {
    if hazards.len() != design.n_rows() {
        return Err(Error::Dimension(format!("{} hazards for {} rows", hazards.len(), design.n_rows())));
    }
    let mut w = Writer::from_writer(output);
    w.write_record([
        "cohort_id",
        "date",
        "phase",
        "days",
        "events",
        "at_risk",
        "observed_hazard",
        "predicted_hazard",
    ])
    .map_err(csv_write_err)?;
    for (i, key) in design.keys().iter().enumerate() {
        let (y, m) = (design.events()[i], design.at_risk()[i]);
        write_row!(w, key.cohort_id, key.date, key.phase, key.days, y, m, y / m, hazards[i]);
    }
    finish(w)
}

pub fn write_metrics<W: Write>(output: W, report: &ComparisonReport) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(["model", "rmse", "improvement_over_previous"]).map_err(csv_write_err)?;
    for s in &report.scores {
        write_row!(w, s.kind, s.rmse, opt_float_string(s.improvement_over_previous));
    }
    finish(w)
}

/// Curve table `cohort,phase,day,observed,predicted_<model>...`.
pub fn write_curves<W: Write>(output: W, report: &ComparisonReport) -> Result<()> {
    let mut w = Writer::from_writer(output);
    let mut header: Vec<String> = ["cohort", "phase", "day", "observed"].map(String::from).to_vec();
    header.extend(report.scores.iter().map(|s| format!("predicted_{}", s.kind)));
    w.write_record(&header).map_err(csv_write_err)?;
    for row in &report.curves {
        let mut fields = vec![row.cohort_id.clone(), row.phase.to_string(), row.day.to_string(), row.observed.to_string()];
        fields.extend(row.predicted.iter().map(f64::to_string));
        w.write_record(&fields).map_err(csv_write_err)?;
    }
    finish(w)
}

pub fn write_importance<W: Write>(output: W, report: &ImportanceReport) -> Result<()> {
    let mut w = Writer::from_writer(output);
    let mut header: Vec<String> = ["predictor", "coefficient", "mean_ratio"].map(String::from).to_vec();
    header.extend((1..=report.n_perm).map(|r| format!("perm_{r}")));
    w.write_record(&header).map_err(csv_write_err)?;
    for e in report.ranked() {
        let mut fields = vec![e.name.clone(), e.coefficient.to_string(), e.mean_ratio.to_string()];
        fields.extend(e.ratios.iter().map(f64::to_string));
        w.write_record(&fields).map_err(csv_write_err)?;
    }
    finish(w)
}

/// Standardized coefficients and their exponentials, intercept first.
/// Standardized-scale coefficients with their exponentials; `raw_coefficient`
/// is on the input scale and left empty when the model has product columns.
pub fn write_coefficients<W: Write>(output: W, model: &FittedModel) -> Result<()> {
    let mut w = Writer::from_writer(output);
    w.write_record(["predictor", "coefficient", "exp_coefficient", "raw_coefficient", "retained"])
        .map_err(csv_write_err)?;
    let c = &model.coefficients;
    let raw = model.standardization.to_original_scale(c).ok();
    let raw_value = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    write_row!(w, "(intercept)", c.intercept, c.intercept.exp(), raw_value(raw.as_ref().map(|r| r.intercept)), 1);
    for (name, &v) in &c.terms {
        let r = raw_value(raw.as_ref().map(|r| r.get(name)));
        write_row!(w, name, v, v.exp(), r, u8::from(v != 0.0));
    }
    finish(w)
}
