//! Calibration of overlapping fixed-window search-index samples.
//!
//! Each sample covers `W` consecutive days and is internally rescaled to
//! 0..=100, so consecutive samples (shifted by one day) are on different
//! scales. Sample `k` is mapped onto the scale of sample `k-1` by the ratio of
//! their sums over the `W-1` shared days; chaining these factors places every
//! sample on the scale of the first one. A day's value is the average of all
//! calibrated scores that cover it.

use crate::error::{Error, Result};
use chrono::{Days, NaiveDate};

/// Scores per sample allowed by the trends service.
pub const DEFAULT_WINDOW: usize = 244;

#[derive(Debug, Clone, PartialEq)]
pub struct GtSample {
    /// 1-based position in the sample sequence.
    pub index: usize,
    pub start_date: NaiveDate,
    pub scores: Vec<f64>,
}

impl GtSample {
    pub fn window(&self) -> usize {
        self.scores.len()
    }
}

/// Validated, consecutive samples sharing one window length.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSampleSet {
    window: usize,
    samples: Vec<GtSample>,
}

impl GtSampleSet {
    pub fn new(window: usize, mut samples: Vec<GtSample>) -> Result<Self> {
        if window < 2 {
            return Err(Error::InvalidSamples(format!("window length {window} leaves no overlap")));
        }
        if samples.is_empty() {
            return Err(Error::Empty("no trend samples"));
        }
        samples.sort_by_key(|s| s.index);
        for (pos, sample) in samples.iter().enumerate() {
            if sample.scores.len() != window {
                return Err(Error::InvalidSamples(format!(
                    "sample {} has {} scores, expected {window}",
                    sample.index,
                    sample.scores.len()
                )));
            }
            if let Some(bad) = sample.scores.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::InvalidSamples(format!(
                    "sample {} has score {bad} outside [0, 100]",
                    sample.index
                )));
            }
            if pos > 0 {
                let prev = &samples[pos - 1];
                if sample.index != prev.index + 1 {
                    return Err(Error::InvalidSamples(format!(
                        "gap or duplicate between samples {} and {}",
                        prev.index, sample.index
                    )));
                }
                if prev.start_date.succ_opt() != Some(sample.start_date) {
                    return Err(Error::InvalidSamples(format!(
                        "sample {} starts {} but sample {} starts {}",
                        sample.index, sample.start_date, prev.index, prev.start_date
                    )));
                }
            }
        }
        Ok(Self { window, samples })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn samples(&self) -> &[GtSample] {
        &self.samples
    }

    pub fn first_date(&self) -> NaiveDate {
        self.samples[0].start_date
    }

    /// Number of distinct days covered by at least one sample.
    pub fn span(&self) -> usize {
        self.samples.len() + self.window - 1
    }
}

/// Factor placing `cur` on the scale of `prev`:
/// `sum(prev[2..=W]) / sum(cur[1..W])` over their shared days.
pub fn calibration_factor(prev: &GtSample, cur: &GtSample) -> Result<f64> {
    if prev.window() != cur.window() {
        return Err(Error::InvalidSamples(format!(
            "window mismatch between samples {} ({}) and {} ({})",
            prev.index,
            prev.window(),
            cur.index,
            cur.window()
        )));
    }
    if prev.window() < 2 {
        return Err(Error::InvalidSamples("window too short for overlap".into()));
    }
    if prev.start_date.succ_opt() != Some(cur.start_date) {
        return Err(Error::InvalidSamples(format!(
            "sample {} does not start one day after sample {}",
            cur.index, prev.index
        )));
    }
    let w = prev.window();
    let numerator: f64 = prev.scores[1..].iter().sum();
    let denominator: f64 = cur.scores[..w - 1].iter().sum();
    if denominator == 0.0 {
        return if numerator == 0.0 {
            Ok(1.0)
        } else {
            Err(Error::IncomparableSamples {
                sample: cur.index,
                numerator,
            })
        };
    }
    Ok(numerator / denominator)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationChain {
    /// `factors[0] == 1`; `factors[k]` maps sample `k+1` onto sample `k`.
    pub factors: Vec<f64>,
    /// Cumulative products of the factors: scale of each sample relative to
    /// the first.
    pub weights: Vec<f64>,
}

impl CalibrationChain {
    pub fn from_factors(factors: Vec<f64>) -> Self {
        let mut acc = 1.0;
        let weights = factors
            .iter()
            .map(|c| {
                acc *= c;
                acc
            })
            .collect();
        Self { factors, weights }
    }
}

pub fn build_chain(set: &GtSampleSet) -> Result<CalibrationChain> {
    let mut factors = Vec::with_capacity(set.samples.len());
    factors.push(1.0);
    for pair in set.samples.windows(2) {
        factors.push(calibration_factor(&pair[0], &pair[1])?);
    }
    Ok(CalibrationChain::from_factors(factors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AveragingMode {
    /// Only days covered by all `W` samples, divided by `W`.
    #[default]
    Strict,
    /// Every covered day, divided by its coverage count.
    Partial,
}

impl std::str::FromStr for AveragingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(AveragingMode::Strict),
            "partial" => Ok(AveragingMode::Partial),
            other => Err(Error::InvalidArgument(format!("unknown averaging mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub date: NaiveDate,
    /// Averaged calibrated score; `None` where the mode does not report one.
    pub value: Option<f64>,
    pub coverage: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSeries {
    pub window: usize,
    /// Every covered date in order, with its coverage count.
    pub points: Vec<SeriesPoint>,
}

impl CalibratedSeries {
    pub fn reported(&self) -> impl Iterator<Item = (NaiveDate, f64, usize)> + '_ {
        self.points
            .iter()
            .filter_map(|p| p.value.map(|v| (p.date, v, p.coverage)))
    }
}

pub fn averaged_series(set: &GtSampleSet, chain: &CalibrationChain, mode: AveragingMode) -> Result<CalibratedSeries> {
    let w = set.window;
    if chain.weights.len() != set.samples.len() {
        return Err(Error::Dimension(format!(
            "{} chain weights for {} samples",
            chain.weights.len(),
            set.samples.len()
        )));
    }
    let span = set.span();
    let mut sums = vec![0.0; span];
    let mut coverage = vec![0usize; span];
    for (s, sample) in set.samples.iter().enumerate() {
        let weight = chain.weights[s];
        for (i, score) in sample.scores.iter().enumerate() {
            sums[s + i] += score * weight;
            coverage[s + i] += 1;
        }
    }
    let first = set.first_date();
    let points = (0..span)
        .map(|n| {
            let value = match mode {
                AveragingMode::Strict => (coverage[n] == w).then(|| sums[n] / w as f64),
                AveragingMode::Partial => Some(sums[n] / coverage[n] as f64),
            };
            SeriesPoint {
                date: first + Days::new(n as u64),
                value,
                coverage: coverage[n],
            }
        })
        .collect();
    Ok(CalibratedSeries { window: w, points })
}

/// Chain plus averaging in one step.
pub fn calibrate(set: &GtSampleSet, mode: AveragingMode) -> Result<CalibratedSeries> {
    let chain = build_chain(set)?;
    averaged_series(set, &chain, mode)
}
