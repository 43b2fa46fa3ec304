//! Tail modelling toolkit for (re)insurance claim data.
//!
//! The crate turns raw claim amounts, possibly right-censored, upper-truncated
//! or tempered, into fitted tail models, extreme quantiles and excess-of-loss
//! premiums:
//!
//! - [`empirics`]: order statistics, Hill and moment estimators, QQ and mean
//!   excess plot data.
//! - [`truncation`]: truncated Pareto-type tails, truncation odds, endpoint
//!   estimation and the truncation test.
//! - [`tempering`]: Weibull-tempered Pareto tails by maximum likelihood and by
//!   weighted least squares with adaptive threshold selection.
//! - [`censoring`]: Kaplan–Meier and censoring-adapted tail estimators.
//! - [`splicing`]: mixed Erlang body fitted by EM, spliced with a generalized
//!   Pareto tail.
//! - [`premiums`]: stop-loss transforms, layer premiums, VaR and CTE.
//! - [`bivariate`]: censored Pickands dependence function and the
//!   (loss, expense) reinsurer payment.
//! - [`regression`]: covariate-local conditional Kaplan–Meier and tail
//!   estimation.
//! - [`simulate`]: seeded generators for every model above.

pub mod bivariate;
pub mod censoring;
pub mod empirics;
mod error;
pub mod numerics;
pub mod premiums;
pub mod regression;
pub mod simulate;
pub mod splicing;
pub mod tempering;
pub mod truncation;

pub use error::{BestIterate, Error, Result};
