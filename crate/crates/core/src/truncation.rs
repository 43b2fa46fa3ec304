//! Upper-truncated Pareto-type tails.
//!
//! Above a threshold `t = X_(n-k)` the excess ratio of a Pareto-type variable
//! truncated at `T` is approximately distributed as
//!
//! ```text
//! P(X/t > y | X > t) = (y^{-1/xi} - beta^{-1/xi}) / (1 - beta^{-1/xi}),  1 < y < beta
//! ```
//!
//! with `beta = T/t` estimated by the largest relative excess `R_{1,k}`. From
//! the resulting pseudo-likelihood this module derives the tail index, the
//! truncation odds `D_T = P(W > T) / P(W <= T)`, extreme quantiles, the
//! endpoint `T` and a test of `H0: T = infinity`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirics::{relative_excesses, CensoredSample, RelativeExcesses, TailPath};
use crate::numerics::{find_root, normal_cdf};
use crate::{Error, Result};

/// Fitted truncated Pareto-type tail at a single threshold rank `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedFit {
    pub k: usize,
    pub xi: f64,
    /// Admissible truncation odds, `max(odds_raw, 0)`.
    pub odds: f64,
    pub odds_raw: f64,
    pub threshold: f64,
    /// Estimated truncation point; `+inf` when `odds == 0`.
    pub endpoint: f64,
    pub test_pvalue: f64,
}

const XI_FLOOR: f64 = 1e-8;
const XI_START_CEIL: f64 = 20.0;

/// `-expm1(-log_r / xi)`, i.e. `1 - R^{-1/xi}` without cancellation.
fn one_minus_pow(log_r: f64, xi: f64) -> f64 {
    -(-log_r / xi).exp_m1()
}

/// Right-hand side of the likelihood equation:
/// `xi - R^{-1/xi} ln R / (1 - R^{-1/xi})`.
fn likelihood_rhs(xi: f64, log_r: f64) -> f64 {
    let p = (-log_r / xi).exp();
    xi - p * log_r / one_minus_pow(log_r, xi)
}

/// Maximum pseudo-likelihood tail index under truncation: the root in `xi` of
/// `H_{k,n} = xi - R_{1,k}^{-1/xi} ln R_{1,k} / (1 - R_{1,k}^{-1/xi})`.
///
/// The right-hand side increases from 0 to `ln(R_{1,k})/2` in `xi`, so a root
/// exists only when `0 < H_{k,n} < ln(R_{1,k})/2`; otherwise a solver error
/// reports both numbers.
pub fn truncated_xi(excesses: &RelativeExcesses) -> Result<f64> {
    let r1 = excesses.max_ratio();
    if r1 <= 1.0 {
        return Err(Error::degenerate("largest relative excess equals 1"));
    }
    let log_r = r1.ln();
    let h = excesses.hill();
    let tol = 1e-10 * h.max(1.0) * 0.5;
    let f = |xi: f64| likelihood_rhs(xi, log_r) - h;

    let lo = XI_FLOOR;
    let mut hi = XI_START_CEIL;
    let mut expansions = 0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        expansions += 1;
        if expansions > 40 || !hi.is_finite() {
            return Err(Error::Solver(format!(
                "no root of the truncated likelihood equation: H = {h} is not below \
                 ln(R_1k)/2 = {}",
                log_r / 2.0
            )));
        }
    }
    if f(lo) > 0.0 {
        return Err(Error::Solver(format!("no sign change at xi = {lo}: H = {h} too small for the bracket")));
    }
    let root = find_root(f, lo, hi, tol)?;
    if root.residual.abs() > 1e-10 * h.max(1.0) {
        return Err(Error::Solver(format!("residual {} above tolerance at xi = {}", root.residual, root.x)));
    }
    Ok(root.x)
}

/// Residual of the likelihood equation at `xi`, for diagnostics.
pub fn truncated_xi_residual(excesses: &RelativeExcesses, xi: f64) -> f64 {
    likelihood_rhs(xi, excesses.max_ratio().ln()) - excesses.hill()
}

/// Truncation odds estimate `(raw, max(raw, 0))` with
/// `raw = (k/n) (R^{-1/xi} - 1/k) / (1 - R^{-1/xi})`, `R = R_{1,k}`.
pub fn truncated_odds(excesses: &RelativeExcesses, n: usize, xi: f64) -> Result<(f64, f64)> {
    if !(xi > 0.0) {
        return Err(Error::domain(format!("xi must be positive, got {xi}")));
    }
    let r1 = excesses.max_ratio();
    if r1 <= 1.0 {
        return Err(Error::degenerate("largest relative excess equals 1"));
    }
    let k = excesses.k as f64;
    let log_r = r1.ln();
    let p = (-log_r / xi).exp();
    let raw = (k / n as f64) * (p - 1.0 / k) / one_minus_pow(log_r, xi);
    Ok((raw, raw.max(0.0)))
}

/// Extreme quantile `Q(1-p)` of the truncated tail:
/// `ln Q = ln X_(n-k) + xi ln((D + (k+1)/(n+1)) / (D + p))`.
///
/// Reduces to the Weissman estimator when the odds are zero.
pub fn truncated_quantile(fit: &TruncatedFit, n: usize, p: f64) -> Result<f64> {
    let upper = (fit.k + 1) as f64 / (n + 1) as f64;
    if !(p > 0.0 && p <= upper) {
        return Err(Error::domain(format!("p = {p} outside (0, {upper}]")));
    }
    let ratio = (fit.odds + upper) / (fit.odds + p);
    Ok((fit.threshold.ln() + fit.xi * ratio.ln()).exp())
}

/// Endpoint estimate `T`, never below the sample maximum; `+inf` when the
/// odds are zero.
pub fn truncated_endpoint(fit: &TruncatedFit, n: usize, sample_max: f64) -> f64 {
    if fit.odds <= 0.0 {
        return f64::INFINITY;
    }
    let ratio = (fit.k + 1) as f64 / ((n + 1) as f64 * fit.odds);
    let log_t = fit.threshold.ln() + fit.xi * ratio.ln_1p();
    if log_t <= sample_max.ln() {
        sample_max
    } else {
        log_t.exp()
    }
}

/// P-value of the test of `H0: no truncation`: `Phi(sqrt(12k) (Rbar - 1/2) / (1 - Rbar))`
/// with `Rbar = mean R_{j,k}^{-1/H_{k,n}}`. Small values reject.
pub fn truncation_test(excesses: &RelativeExcesses) -> Result<f64> {
    let k = excesses.k;
    if k < 2 {
        return Err(Error::domain("truncation test needs k >= 2"));
    }
    let h = excesses.hill();
    if !(h > 0.0) {
        return Err(Error::degenerate("Hill estimate is zero"));
    }
    let rbar = excesses.log_ratios().map(|l| (-l / h).exp()).sum::<f64>() / k as f64;
    if rbar >= 1.0 {
        return Err(Error::degenerate("mean transformed excess equals 1"));
    }
    let stat = (12.0 * k as f64).sqrt() * (rbar - 0.5) / (1.0 - rbar);
    Ok(normal_cdf(stat))
}

/// Truncated Pareto QQ plot `(-ln(D + j/(n+1)), ln X_(n-j+1))`.
pub fn truncated_pareto_qq(sample: &CensoredSample, odds: f64) -> Result<Vec<(f64, f64)>> {
    if !(odds >= 0.0) {
        return Err(Error::domain(format!("odds must be nonnegative, got {odds}")));
    }
    let n = sample.len();
    let v = sample.values();
    Ok((1..=n)
        .map(|j| {
            let x = -(odds + j as f64 / (n + 1) as f64).ln();
            (x, v[n - j].ln())
        })
        .collect())
}

/// Full truncated fit at rank `k`: tail index, odds, endpoint and test p-value.
pub fn fit_truncated(sample: &CensoredSample, k: usize) -> Result<TruncatedFit> {
    let ex = relative_excesses(sample, k)?;
    let n = sample.len();
    let xi = truncated_xi(&ex)?;
    let (odds_raw, odds) = truncated_odds(&ex, n, xi)?;
    let test_pvalue = if k >= 2 { truncation_test(&ex)? } else { f64::NAN };
    let mut fit = TruncatedFit { k, xi, odds, odds_raw, threshold: ex.threshold, endpoint: f64::INFINITY, test_pvalue };
    fit.endpoint = truncated_endpoint(&fit, n, sample.max());
    Ok(fit)
}

/// Truncated fits for every `k` in `k_min..=k_max`; ranks where the fit is
/// undefined are skipped. Evaluated in parallel, assembled in `k` order.
pub fn truncated_sweep(sample: &CensoredSample, k_min: usize, k_max: usize) -> Vec<TruncatedFit> {
    let k_max = k_max.min(sample.len().saturating_sub(1));
    (k_min.max(1)..=k_max).into_par_iter().filter_map(|k| fit_truncated(sample, k).ok()).collect()
}

/// Truncation test p-values for `k = 2..n-1`.
pub fn truncation_test_path(sample: &CensoredSample) -> TailPath {
    let n = sample.len();
    let (ks, ps): (Vec<usize>, Vec<f64>) = (2..n)
        .filter_map(|k| {
            let ex = relative_excesses(sample, k).ok()?;
            truncation_test(&ex).ok().map(|p| (k, p))
        })
        .unzip();
    TailPath::new(ks, ps)
}
