//! Discrete-time hazard modelling of survey response with contextual
//! covariates.

pub mod config;
pub mod covariates;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod glm;
pub mod gt;
pub mod io;
pub mod survival;
pub mod synthetic;

pub use error::{Error, Result};
