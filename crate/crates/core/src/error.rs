use thiserror::Error;

use crate::splicing::MixedErlang;
use crate::tempering::TemperedFit;

pub type Result<T> = std::result::Result<T, Error>;

/// Best parameter values reached by an iterative fit that did not converge.
#[derive(Debug, Clone, PartialEq)]
pub enum BestIterate {
    Tempered(TemperedFit),
    MixedErlang(MixedErlang),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The data carry no information for the requested estimator
    /// (e.g. all top values tied).
    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("all of the top {k} observations are censored")]
    AllCensored { k: usize },

    #[error("root finding failed: {0}")]
    Solver(String),

    #[error("no convergence: {message}")]
    Convergence { message: String, best: Option<Box<BestIterate>> },

    #[error("infinite mean: tail index xi = {xi} >= 1")]
    InfiniteMean { xi: f64 },

    #[error("empty kernel window around x0 = {x0} with bandwidth {h}")]
    Bandwidth { x0: f64, h: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors raised by iterative fitting rather than by the data.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::Solver(_))
    }
}
