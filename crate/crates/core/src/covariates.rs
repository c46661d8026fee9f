//! Date-indexed contextual covariates: station-averaged weather, calendar
//! indicators, calibrated trend indices and optional month/season dummies.

use crate::config::KeyValueConfig;
use crate::design::DesignTable;
use crate::error::{Error, Result};
use crate::survival::{period_design, PeriodLevelTable};
use chrono::{Datelike, NaiveDate, Weekday};
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// Weather measures as `(column name, description)`, in catalog order.
pub const WEATHER_MEASURES: [(&str, &str); 20] = [
    ("tx", "maximum temperature (C)"),
    ("tn", "minimum temperature (C)"),
    ("tg", "average temperature (C)"),
    ("sq", "sunshine duration (h)"),
    ("sp", "sunshine percentage (%)"),
    ("rh", "daily precipitation volume (mm)"),
    ("rhx", "maximum hourly precipitation volume (mm)"),
    ("dr", "precipitation duration (h)"),
    ("fhx", "maximum hourly mean wind speed (m/s)"),
    ("fhn", "minimum hourly mean wind speed (m/s)"),
    ("fhm", "average hourly mean wind speed (m/s)"),
    ("ng", "average cloudiness (1-9)"),
    ("vvn", "minimum visibility"),
    ("vvx", "maximum visibility"),
    ("ux", "maximum relative humidity (%)"),
    ("un", "minimum relative humidity (%)"),
    ("ug", "average relative humidity (%)"),
    ("px", "maximum air pressure (hPa)"),
    ("pn", "minimum air pressure (hPa)"),
    ("pg", "average air pressure (hPa)"),
];

pub const N_WEATHER: usize = WEATHER_MEASURES.len();

/// `(min, avg, max)` index triples that must be ordered.
const ORDERED_FAMILIES: [(usize, usize, usize); 4] = [(1, 2, 0), (9, 10, 8), (15, 16, 14), (18, 19, 17)];
const VISIBILITY: (usize, usize) = (12, 13);
const PERCENTAGES: [usize; 4] = [4, 14, 15, 16];
const CLOUDINESS: usize = 11;

/// Weekday indicators; Monday is the reference level.
pub const WEEKDAY_COLUMNS: [&str; 6] = ["tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
pub const HOLIDAY_COLUMN: &str = "holiday";
/// Month indicators; January is the reference level.
pub const MONTH_COLUMNS: [&str; 11] = [
    "month_feb", "month_mar", "month_apr", "month_may", "month_jun", "month_jul", "month_aug", "month_sep",
    "month_oct", "month_nov", "month_dec",
];
/// Season indicators; winter is the reference level.
pub const SEASON_COLUMNS: [&str; 3] = ["season_spring", "season_summer", "season_autumn"];

const DEFAULT_HOLIDAYS: &str = include_str!("../data/holidays_nl_2016_2017.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub station_id: String,
    pub date: NaiveDate,
    /// One value per [`WEATHER_MEASURES`] entry; `None` when not reported.
    pub values: [Option<f64>; N_WEATHER],
}

impl WeatherRecord {
    fn invalid(&self, message: String) -> Error {
        Error::InvalidWeatherRecord {
            station: self.station_id.clone(),
            date: self.date,
            message,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.values;
        if let Some((i, x)) = v.iter().enumerate().find_map(|(i, x)| x.filter(|x| !x.is_finite()).map(|x| (i, x))) {
            return Err(self.invalid(format!("{} is {x}", WEATHER_MEASURES[i].0)));
        }
        for (lo, avg, hi) in ORDERED_FAMILIES {
            let present: Vec<(usize, f64)> = [lo, avg, hi].iter().filter_map(|&i| v[i].map(|x| (i, x))).collect();
            for pair in present.windows(2) {
                if pair[0].1 > pair[1].1 {
                    return Err(self.invalid(format!(
                        "{} = {} exceeds {} = {}",
                        WEATHER_MEASURES[pair[0].0].0, pair[0].1, WEATHER_MEASURES[pair[1].0].0, pair[1].1
                    )));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (v[VISIBILITY.0], v[VISIBILITY.1]) {
            if lo > hi {
                return Err(self.invalid(format!("minimum visibility {lo} exceeds maximum {hi}")));
            }
        }
        for i in PERCENTAGES {
            if let Some(x) = v[i].filter(|x| !(0.0..=100.0).contains(x)) {
                return Err(self.invalid(format!("{} = {x} outside [0, 100]", WEATHER_MEASURES[i].0)));
            }
        }
        if let Some(x) = v[CLOUDINESS].filter(|x| !(1.0..=9.0).contains(x)) {
            return Err(self.invalid(format!("cloudiness {x} outside [1, 9]")));
        }
        Ok(())
    }
}

/// Per-date weather vector; a measure no station reported stays `None`.
pub type DailyWeather = BTreeMap<NaiveDate, [Option<f64>; N_WEATHER]>;

/// Unweighted mean of each measure over the stations reporting it that day.
pub fn average_weather_stations(records: &[WeatherRecord]) -> Result<DailyWeather> {
    let mut seen = HashSet::new();
    let mut acc: BTreeMap<NaiveDate, [(f64, u32); N_WEATHER]> = BTreeMap::new();
    for record in records {
        if !seen.insert((record.station_id.as_str(), record.date)) {
            return Err(Error::DuplicateWeatherRecord {
                station: record.station_id.clone(),
                date: record.date,
            });
        }
        record.validate()?;
        let day = acc.entry(record.date).or_insert([(0.0, 0); N_WEATHER]);
        for (slot, value) in day.iter_mut().zip(&record.values) {
            if let Some(x) = value {
                slot.0 += x;
                slot.1 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(date, sums)| (date, sums.map(|(s, n)| (n > 0).then(|| s / f64::from(n)))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

/// Meteorological seasons.
pub fn season_of(month: u32) -> Season {
    match month {
        12 | 1 | 2 => Season::Winter,
        3..=5 => Season::Spring,
        6..=8 => Season::Summer,
        _ => Season::Autumn,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalendarRow {
    pub date: NaiveDate,
    pub weekday: [f64; 6],
    pub holiday: f64,
    pub month: [f64; 11],
    pub season: [f64; 3],
}

pub fn calendar_row(date: NaiveDate, holidays: &HashSet<NaiveDate>) -> CalendarRow {
    let mut weekday = [0.0; 6];
    let wd = date.weekday();
    if wd != Weekday::Mon {
        weekday[wd.num_days_from_monday() as usize - 1] = 1.0;
    }
    let mut month = [0.0; 11];
    if date.month() > 1 {
        month[date.month() as usize - 2] = 1.0;
    }
    let mut season = [0.0; 3];
    match season_of(date.month()) {
        Season::Winter => {}
        Season::Spring => season[0] = 1.0,
        Season::Summer => season[1] = 1.0,
        Season::Autumn => season[2] = 1.0,
    }
    CalendarRow {
        date,
        weekday,
        holiday: if holidays.contains(&date) { 1.0 } else { 0.0 },
        month,
        season,
    }
}

pub fn derive_calendar(dates: &[NaiveDate], holidays: &HashSet<NaiveDate>) -> Vec<CalendarRow> {
    dates.iter().map(|&d| calendar_row(d, holidays)).collect()
}

/// Parses a holiday list: one ISO date per line, `#` comments.
pub fn parse_holidays(text: &str, source_name: &str) -> Result<HashSet<NaiveDate>> {
    let mut out = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(line, "%Y-%m-%d")
            .map_err(|_| Error::parse(source_name, i as u64 + 1, format!("invalid date `{line}`")))?;
        out.insert(date);
    }
    Ok(out)
}

/// The bundled Dutch holiday list for 2016 and 2017.
pub fn default_holidays() -> HashSet<NaiveDate> {
    parse_holidays(DEFAULT_HOLIDAYS, "holidays_nl_2016_2017.txt").expect("bundled holiday list parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Weather,
    Calendar,
    Trends,
    Month,
    Season,
}

impl Block {
    /// Block of a column in a covariate file, from its name.
    pub fn classify(name: &str) -> Block {
        if WEATHER_MEASURES.iter().any(|(n, _)| *n == name) {
            Block::Weather
        } else if WEEKDAY_COLUMNS.contains(&name) || name == HOLIDAY_COLUMN {
            Block::Calendar
        } else if MONTH_COLUMNS.contains(&name) {
            Block::Month
        } else if SEASON_COLUMNS.contains(&name) {
            Block::Season
        } else {
            Block::Trends
        }
    }
}

/// Which covariate blocks enter a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovariateBlocks {
    pub weather: bool,
    pub trends: bool,
    pub calendar: bool,
    pub month: bool,
    pub season: bool,
}

impl Default for CovariateBlocks {
    fn default() -> Self {
        Self {
            weather: true,
            trends: true,
            calendar: true,
            month: false,
            season: false,
        }
    }
}

impl CovariateBlocks {
    pub fn none() -> Self {
        Self {
            weather: false,
            trends: false,
            calendar: false,
            month: false,
            season: false,
        }
    }

    pub fn includes(&self, block: Block) -> bool {
        match block {
            Block::Weather => self.weather,
            Block::Trends => self.trends,
            Block::Calendar => self.calendar,
            Block::Month => self.month,
            Block::Season => self.season,
        }
    }

    /// Overrides defaults with `weather|trends|calendar|month|season = bool`
    /// entries.
    pub fn from_config(config: &KeyValueConfig) -> Result<Self> {
        let mut blocks = Self::default();
        for (key, slot) in [
            ("weather", &mut blocks.weather),
            ("trends", &mut blocks.trends),
            ("calendar", &mut blocks.calendar),
            ("month", &mut blocks.month),
            ("season", &mut blocks.season),
        ] {
            if let Some(v) = config.get_bool(key)? {
                *slot = v;
            }
        }
        Ok(blocks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    pub block: Block,
}

/// One row per calendar date; a missing value is `None` and becomes a hard
/// error if a fieldwork date needs it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateTable {
    pub columns: Vec<CovariateColumn>,
    pub rows: BTreeMap<NaiveDate, Vec<Option<f64>>>,
}

impl CovariateTable {
    pub fn new(columns: Vec<CovariateColumn>, rows: BTreeMap<NaiveDate, Vec<Option<f64>>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicatePredictor(c.name.clone()));
            }
        }
        if let Some((date, _)) = rows.iter().find(|(_, r)| r.len() != columns.len()) {
            return Err(Error::Dimension(format!("covariate row {date} has the wrong width")));
        }
        if rows.values().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariate values must be finite".into()));
        }
        Ok(Self { columns, rows })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn names_in(&self, blocks: &CovariateBlocks) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| blocks.includes(c.block))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn value(&self, date: NaiveDate, name: &str) -> Option<f64> {
        let idx = self.columns.iter().position(|c| c.name == name)?;
        self.rows.get(&date).and_then(|r| r[idx])
    }
}

/// Assembles a covariate table over `dates` from the enabled feeds.
/// Trend series are `(name, date -> value)` pairs.
pub fn build_covariate_table(
    dates: &[NaiveDate],
    weather: Option<&DailyWeather>,
    trends: &[(String, BTreeMap<NaiveDate, f64>)],
    holidays: &HashSet<NaiveDate>,
    blocks: &CovariateBlocks,
) -> Result<CovariateTable> {
    let mut columns = Vec::new();
    let push = |columns: &mut Vec<CovariateColumn>, name: &str, block| {
        columns.push(CovariateColumn {
            name: name.to_string(),
            block,
        })
    };
    if blocks.weather {
        if weather.is_none() {
            return Err(Error::InvalidArgument("weather block selected but no weather data given".into()));
        }
        WEATHER_MEASURES.iter().for_each(|(n, _)| push(&mut columns, n, Block::Weather));
    }
    if blocks.calendar {
        WEEKDAY_COLUMNS.iter().for_each(|n| push(&mut columns, n, Block::Calendar));
        push(&mut columns, HOLIDAY_COLUMN, Block::Calendar);
    }
    if blocks.trends {
        for (name, _) in trends {
            if Block::classify(name) != Block::Trends {
                return Err(Error::InvalidArgument(format!("trend name `{name}` collides with a built-in column")));
            }
            push(&mut columns, name, Block::Trends);
        }
    }
    if blocks.month {
        MONTH_COLUMNS.iter().for_each(|n| push(&mut columns, n, Block::Month));
    }
    if blocks.season {
        SEASON_COLUMNS.iter().for_each(|n| push(&mut columns, n, Block::Season));
    }

    let mut rows = BTreeMap::new();
    for &date in dates {
        let cal = calendar_row(date, holidays);
        let mut row: Vec<Option<f64>> = Vec::with_capacity(columns.len());
        if blocks.weather {
            match weather.and_then(|w| w.get(&date)) {
                Some(values) => row.extend_from_slice(values),
                None => row.extend(std::iter::repeat_n(None, N_WEATHER)),
            }
        }
        if blocks.calendar {
            row.extend(cal.weekday.iter().map(|v| Some(*v)));
            row.push(Some(cal.holiday));
        }
        if blocks.trends {
            row.extend(trends.iter().map(|(_, series)| series.get(&date).copied()));
        }
        if blocks.month {
            row.extend(cal.month.iter().map(|v| Some(*v)));
        }
        if blocks.season {
            row.extend(cal.season.iter().map(|v| Some(*v)));
        }
        rows.insert(date, row);
    }
    CovariateTable::new(columns, rows)
}

/// Appends the named covariates to a design by calendar date. Any fieldwork
/// date lacking a value is reported together with the affected columns.
pub fn join_covariates(design: &DesignTable, table: &CovariateTable, names: &[String]) -> Result<DesignTable> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            table
                .columns
                .iter()
                .position(|c| &c.name == n)
                .ok_or_else(|| Error::UnknownPredictor(n.clone()))
        })
        .collect::<Result<_>>()?;
    let mut missing_dates = BTreeSet::new();
    let mut missing_cols = BTreeSet::new();
    let mut columns = vec![Vec::with_capacity(design.n_rows()); names.len()];
    for key in design.keys() {
        let row = table.rows.get(&key.date);
        for (out, &j) in columns.iter_mut().zip(&idx) {
            match row.and_then(|r| r[j]) {
                Some(v) => out.push(v),
                None => {
                    missing_dates.insert(key.date);
                    missing_cols.insert(table.columns[j].name.clone());
                    out.push(0.0);
                }
            }
        }
    }
    if !missing_dates.is_empty() {
        return Err(Error::MissingCovariates {
            dates: missing_dates.into_iter().collect(),
            columns: missing_cols.into_iter().collect(),
        });
    }
    let mut all_names = design.names().to_vec();
    all_names.extend(names.iter().cloned());
    let mut all_columns = design.columns().to_vec();
    all_columns.extend(columns);
    design.with_columns(all_names, all_columns)
}

/// Baseline block plus the covariates of the selected blocks.
pub fn contextual_design(period: &PeriodLevelTable, table: &CovariateTable, blocks: &CovariateBlocks) -> Result<DesignTable> {
    join_covariates(&period_design(period), table, &table.names_in(blocks))
}

/// First `n_train` cohorts train, last `n_test` test. Cohorts must already
/// be ordered by invitation date.
pub fn split_train_test(cohorts: &[String], n_train: usize, n_test: usize) -> Result<(Vec<String>, Vec<String>)> {
    if n_train + n_test > cohorts.len() {
        return Err(Error::NotEnoughCohorts {
            train: n_train,
            test: n_test,
            available: cohorts.len(),
        });
    }
    Ok((
        cohorts[..n_train].to_vec(),
        cohorts[cohorts.len() - n_test..].to_vec(),
    ))
}
