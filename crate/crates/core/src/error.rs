use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the library.
///
/// Variants fall into two families: validation problems with the input
/// (malformed files, broken invariants, missing data) and numerical failures
/// (solver non-convergence). [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("case `{case_id}`: {message}")]
    InvalidCase { case_id: String, message: String },

    #[error("duplicate case id `{0}`")]
    DuplicateCase(String),

    #[error("duplicate weather record for station `{station}` on {date}")]
    DuplicateWeatherRecord { station: String, date: NaiveDate },

    #[error("weather record for station `{station}` on {date}: {message}")]
    InvalidWeatherRecord {
        station: String,
        date: NaiveDate,
        message: String,
    },

    #[error("covariates missing on {} fieldwork date(s): {}", .dates.len(), format_gap(.dates, .columns))]
    MissingCovariates {
        dates: Vec<NaiveDate>,
        columns: Vec<String>,
    },

    #[error("unknown predictor `{0}`")]
    UnknownPredictor(String),

    #[error("duplicate predictor name `{0}`")]
    DuplicatePredictor(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trend samples: {0}")]
    InvalidSamples(String),

    #[error(
        "calibration factor for sample {sample}: overlap sum is zero but previous overlap sum is {numerator}"
    )]
    IncomparableSamples { sample: usize, numerator: f64 },

    #[error("requested {train} training + {test} test cohorts but only {available} available")]
    NotEnoughCohorts {
        train: usize,
        test: usize,
        available: usize,
    },

    #[error(
        "solver did not converge at lambda {lambda:.6e} after {iterations} iterations (kkt residual {kkt_residual:.3e})"
    )]
    NonConvergence {
        lambda: f64,
        iterations: usize,
        kkt_residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }

    pub(crate) fn parse(source_name: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}

fn format_gap(dates: &[NaiveDate], columns: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut out = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        out.push_str(", ...");
    }
    if !columns.is_empty() {
        out.push_str(&format!(" (columns: {})", columns.join(", ")));
    }
    out
}
