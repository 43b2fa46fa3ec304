//! Weibull-tempered Pareto-type tails.
//!
//! Above `t = X_(n-k)` the excess ratio is modelled as
//!
//! ```text
//! P(X/t > x | X > t) = x^{-alpha} exp(-lambda (x^tau - 1)),   x > 1,
//! ```
//!
//! with `lambda = beta_inf^tau`. The fit reports `alpha`, never an extreme
//! value index: a tempered tail has index 0, and `1/alpha` is only the
//! power-law exponent of the untempered part.
//!
//! Two estimation routes are provided: maximum likelihood on the excess ratios
//! ([`tempered_mle`]) and a weighted least-squares fit of the tempered QQ line
//! ([`tempered_wls`]), the latter also driving adaptive threshold selection
//! ([`tempered_adaptive_k`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirics::{relative_excesses, CensoredSample, RelativeExcesses};
use crate::numerics::{find_root, golden_section, nelder_mead};
use crate::{BestIterate, Error, Result};

/// Smallest number of excesses accepted for the three-parameter fit.
pub const MIN_K: usize = 10;

/// Upper bound on `tau` in the maximum likelihood fit. The likelihood is
/// unbounded as `tau -> inf` with `lambda R_1^tau` held near one (a density
/// spike at the largest excess), so the search is confined below this.
pub const TAU_MAX: f64 = 5.0;

/// Fitted tempered tail at threshold rank `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperedFit {
    pub k: usize,
    pub alpha: f64,
    pub tau: f64,
    /// `beta_inf^tau`.
    pub lambda: f64,
    pub beta_inf: f64,
    /// QQ-line slope `tau lambda / alpha`.
    pub delta: f64,
    /// Mean weighted squared QQ residual at these parameters.
    pub wls_score: f64,
    pub threshold: f64,
}

impl TemperedFit {
    fn from_alpha_lambda_tau(ex: &RelativeExcesses, alpha: f64, lambda: f64, tau: f64, scores: QqScores) -> Self {
        let delta = tau * lambda / alpha;
        let logs: Vec<f64> = ex.log_ratios().collect();
        let e = scores.positions(ex.k);
        let wls_score = wls_objective(&logs, &e, 1.0 / alpha, delta, tau);
        Self {
            k: ex.k,
            alpha,
            tau,
            lambda,
            beta_inf: beta_from_lambda(lambda, tau),
            delta,
            wls_score,
            threshold: ex.threshold,
        }
    }
}

fn beta_from_lambda(lambda: f64, tau: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda.powf(1.0 / tau)
    }
}

/// `h_tau(x) = (x^tau - 1)/tau` evaluated from `ln x`.
fn h_tau_log(log_x: f64, tau: f64) -> f64 {
    (tau * log_x).exp_m1() / tau
}

/// Log-likelihood of the tempered POT model on precomputed log ratios.
fn loglik_logs(logs: &[f64], alpha: f64, lambda: f64, tau: f64) -> f64 {
    let mut sum_log = 0.0;
    let mut sum_pow = 0.0;
    let mut sum_dens = 0.0;
    for &l in logs {
        let em1 = (tau * l).exp_m1();
        sum_log += l;
        sum_pow += em1;
        sum_dens += (alpha + lambda * tau * (em1 + 1.0)).ln();
    }
    -(1.0 + alpha) * sum_log - lambda * sum_pow + sum_dens
}

/// Gradient of [`loglik_logs`] with respect to `(alpha, lambda, tau)`.
fn loglik_gradient(logs: &[f64], alpha: f64, lambda: f64, tau: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for &l in logs {
        let u = (tau * l).exp();
        let d = alpha + lambda * tau * u;
        g[0] += -l + 1.0 / d;
        g[1] += -(u - 1.0) + tau * u / d;
        g[2] += -lambda * u * l + lambda * u * (1.0 + tau * l) / d;
    }
    g
}

/// Tempered POT log-likelihood
/// `-(1+alpha) sum ln R - lambda sum (R^tau - 1) + sum ln(alpha + lambda tau R^tau)`.
pub fn tempered_loglik(excesses: &RelativeExcesses, alpha: f64, lambda: f64, tau: f64) -> Result<f64> {
    if !(alpha > 0.0 && lambda >= 0.0 && tau > 0.0) {
        return Err(Error::domain(format!("need alpha > 0, lambda >= 0, tau > 0; got ({alpha}, {lambda}, {tau})")));
    }
    let logs: Vec<f64> = excesses.log_ratios().collect();
    let v = loglik_logs(&logs, alpha, lambda, tau);
    if !v.is_finite() {
        return Err(Error::domain("log-likelihood is not finite"));
    }
    Ok(v)
}

fn check_k(excesses: &RelativeExcesses) -> Result<()> {
    if excesses.k < MIN_K {
        return Err(Error::domain(format!("tempered fit needs at least {MIN_K} excesses, got {}", excesses.k)));
    }
    Ok(())
}

/// Maximum likelihood fit of `(alpha, lambda, tau)`.
///
/// The interior optimum is searched by a Nelder–Mead simplex in
/// `(ln alpha, ln lambda, ln tau)` from several starts, refined by
/// coordinate-wise golden-section passes and a final Newton polish. It is then
/// compared with the untempered boundary `lambda = 0`, whose maximizer is
/// `alpha = 1/H_{k,n}`. A non-negligible gradient at the reported optimum is a
/// convergence error carrying the best iterate.
pub fn tempered_mle(excesses: &RelativeExcesses) -> Result<TemperedFit> {
    check_k(excesses)?;
    let logs: Vec<f64> = excesses.log_ratios().collect();
    let k = logs.len() as f64;
    let sum_log: f64 = logs.iter().sum();
    if sum_log <= 0.0 {
        return Err(Error::degenerate("all top excesses are tied"));
    }

    let alpha0 = k / sum_log;
    let boundary_ll = k * alpha0.ln() - (1.0 + alpha0) * sum_log;

    let neg = |u: &[f64]| -> f64 {
        if u[2] > TAU_MAX.ln() {
            return f64::INFINITY;
        }
        let v = loglik_logs(&logs, u[0].exp(), u[1].exp(), u[2].exp());
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    // the last start sits near the alpha -> 0 ridge, where lambda tau carries the slope
    for &(alpha, lambda, tau) in &[
        (alpha0, 0.1, 1.0),
        (alpha0, 1.0, 0.5),
        (alpha0, 0.01, 2.0),
        (alpha0, 1.0, 1.5),
        (1e-3 * alpha0, 10.0 * alpha0, 0.1),
    ] {
        let start = [f64::ln(alpha), f64::ln(lambda), f64::ln(tau)];
        let res = nelder_mead(neg, &start, 0.5, 1e-13, 1e-9, 4000);
        if best.as_ref().is_none_or(|b| res.value < b.1) {
            best = Some((res.x, res.value));
        }
    }
    let (mut u, mut value) = best.expect("at least one start");

    // refine, restarting the simplex from the best point while the gradient is not flat
    for round in 0..4 {
        if round > 0 {
            let res = nelder_mead(neg, &u, 0.2, 1e-13, 1e-10, 4000);
            if res.value < value {
                u = res.x;
                value = res.value;
            }
        }
        // coordinate-wise golden-section refinement
        for _ in 0..3 {
            for c in 0..3 {
                let centre = u[c];
                let (x, v) = golden_section(
                    |t| {
                        let mut w = u.clone();
                        w[c] = t;
                        neg(&w)
                    },
                    centre - 1.0,
                    centre + 1.0,
                    1e-12,
                );
                if v < value {
                    u[c] = x;
                    value = v;
                }
            }
        }
        newton_polish(&logs, &mut u, &mut value);
        if scaled_gradient_norm(&logs, &u) <= 1e-6 * value.abs().max(1.0) {
            break;
        }
    }

    let (alpha, lambda, tau) = (u[0].exp(), u[1].exp(), u[2].exp());
    let interior_ll = -value;
    let scores = QqScores::default();

    if interior_ll <= boundary_ll + 1e-10 * boundary_ll.abs().max(1.0) || lambda < 1e-12 {
        // untempered: lambda = 0 and tau is not identified; keep the interior tau
        let tau = if tau.is_finite() && tau > 0.0 { tau } else { 1.0 };
        return Ok(TemperedFit::from_alpha_lambda_tau(excesses, alpha0, 0.0, tau, scores));
    }

    let fit = TemperedFit::from_alpha_lambda_tau(excesses, alpha, lambda, tau, scores);
    let gnorm = scaled_gradient_norm(&logs, &u);
    if !(gnorm <= 1e-6 * interior_ll.abs().max(1.0)) {
        return Err(Error::Convergence {
            message: format!("tempered likelihood gradient norm {gnorm:.3e} at k = {}", excesses.k),
            best: Some(Box::new(BestIterate::Tempered(fit))),
        });
    }
    Ok(fit)
}

/// Gradient norm in the log-parameters. At the tau bound only the inward part
/// of the tau component counts.
fn scaled_gradient_norm(logs: &[f64], u: &[f64]) -> f64 {
    let (alpha, lambda, tau) = (u[0].exp(), u[1].exp(), u[2].exp());
    let g = loglik_gradient(logs, alpha, lambda, tau);
    let at_bound = tau >= TAU_MAX * (1.0 - 1e-9);
    let g_tau = if at_bound { (tau * g[2]).min(0.0) } else { tau * g[2] };
    ((alpha * g[0]).powi(2) + (lambda * g[1]).powi(2) + g_tau.powi(2)).sqrt()
}

/// Newton iterations on the log-parameters with a central-difference Hessian
/// of the analytic gradient and step halving.
fn newton_polish(logs: &[f64], u: &mut Vec<f64>, value: &mut f64) {
    let grad_u = |w: &[f64]| -> [f64; 3] {
        let (a, l, t) = (w[0].exp(), w[1].exp(), w[2].exp());
        let g = loglik_gradient(logs, a, l, t);
        [a * g[0], l * g[1], t * g[2]]
    };
    let ll = |w: &[f64]| {
        if w[2] > TAU_MAX.ln() {
            f64::NEG_INFINITY
        } else {
            loglik_logs(logs, w[0].exp(), w[1].exp(), w[2].exp())
        }
    };
    for _ in 0..50 {
        let g = grad_u(u);
        let mut h = [[0.0; 3]; 3];
        for c in 0..3 {
            let eps = 1e-5;
            let mut up = u.clone();
            let mut dn = u.clone();
            up[c] += eps;
            dn[c] -= eps;
            let (gp, gm) = (grad_u(&up), grad_u(&dn));
            for r in 0..3 {
                h[r][c] = (gp[r] - gm[r]) / (2.0 * eps);
            }
        }
        for r in 0..3 {
            for c in (r + 1)..3 {
                let s = 0.5 * (h[r][c] + h[c][r]);
                h[r][c] = s;
                h[c][r] = s;
            }
        }
        let Some(step) = solve3(h, g) else { break };
        // Newton direction for a maximum: -H^{-1} g
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = (0..3).map(|c| u[c] - t * step[c]).collect();
            let v = ll(&cand);
            if v.is_finite() && -v <= *value {
                *u = cand;
                *value = -v;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
    }
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for c in (row + 1)..3 {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Standard exponential quantile scores used as QQ-plot abscissae for the
/// `j`-th largest of `k` excesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QqScores {
    /// Expected order statistics of standard exponentials: the `j`-th largest
    /// of `k` has mean `sum_{i=j}^{k} 1/i`. These sum to exactly `k` over
    /// `j`, so with weights `1/score` and no tempering the fit returns
    /// `alpha = 1/H_{k,n}`.
    #[default]
    ExpectedExponential,
    /// Plotting positions `ln((k+1)/j)` for the `j`-th largest.
    LogPosition,
}

impl QqScores {
    /// Scores for `j = 1..=k`, largest excess (and largest score) first.
    pub fn positions(self, k: usize) -> Vec<f64> {
        match self {
            QqScores::ExpectedExponential => {
                let mut out = vec![0.0; k];
                let mut acc = 0.0;
                for j in (1..=k).rev() {
                    acc += 1.0 / j as f64;
                    out[j - 1] = acc;
                }
                out
            }
            QqScores::LogPosition => (1..=k).map(|j| ((k + 1) as f64 / j as f64).ln()).collect(),
        }
    }
}

/// Weighted least-squares fit of the tempered QQ line at fixed `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsFit {
    pub alpha: f64,
    pub delta: f64,
    /// Mean weighted squared residual, `WLS / k`.
    pub score: f64,
}

/// `(1/k) sum_j w_j (a e_j - L_j - delta h_tau(R_j))^2` with `w_j = 1/e_j`.
fn wls_objective(logs: &[f64], e: &[f64], a: f64, delta: f64, tau: f64) -> f64 {
    let k = logs.len() as f64;
    logs.iter()
        .zip(e)
        .map(|(&l, &ej)| {
            let r = a * ej - l - delta * h_tau_log(l, tau);
            r * r / ej
        })
        .sum::<f64>()
        / k
}

/// Minimizes `sum_j w_j {(1/alpha) e_j - ln R_j - delta h_tau(R_j)}^2` over
/// `alpha > 0`, `delta >= 0` with `w_j = 1/e_j` and the default scores.
pub fn tempered_wls(excesses: &RelativeExcesses, tau: f64) -> Result<WlsFit> {
    tempered_wls_with(excesses, tau, QqScores::default())
}

pub fn tempered_wls_with(excesses: &RelativeExcesses, tau: f64, scores: QqScores) -> Result<WlsFit> {
    let logs: Vec<f64> = excesses.log_ratios().collect();
    let e = scores.positions(excesses.k);
    wls_on_logs(&logs, &e, tau, false)
}

/// Same fit with `delta` pinned to zero (no tempering).
pub fn tempered_wls_untempered(excesses: &RelativeExcesses, scores: QqScores) -> Result<WlsFit> {
    let logs: Vec<f64> = excesses.log_ratios().collect();
    let e = scores.positions(excesses.k);
    wls_on_logs(&logs, &e, 1.0, true)
}

fn wls_on_logs(logs: &[f64], e: &[f64], tau: f64, pin_delta: bool) -> Result<WlsFit> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    // normal equations in (a, delta) with a = 1/alpha, weights 1/e_j
    let (mut see, mut seh, mut shh, mut sel, mut shl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let hs: Vec<f64> = logs.iter().map(|&l| h_tau_log(l, tau)).collect();
    for ((&l, &ej), &h) in logs.iter().zip(e).zip(&hs) {
        let w = 1.0 / ej;
        see += w * ej * ej;
        seh += w * ej * h;
        shh += w * h * h;
        sel += w * ej * l;
        shl += w * h * l;
    }
    let untempered = |see: f64, sel: f64| -> Result<(f64, f64)> {
        if see <= 0.0 {
            return Err(Error::degenerate("no excesses"));
        }
        Ok((sel / see, 0.0))
    };
    let (a, delta) = if pin_delta {
        untempered(see, sel)?
    } else {
        let det = see * shh - seh * seh;
        if !(det > 1e-12 * see * shh) {
            return Err(Error::degenerate("singular normal equations (tied excesses)"));
        }
        // [see, -seh; seh, -shh] [a; delta] = [sel; shl]
        let a = (sel * shh - seh * shl) / det;
        let delta = (seh * sel - see * shl) / det;
        if delta < 0.0 {
            untempered(see, sel)?
        } else {
            (a, delta)
        }
    };
    if !(a > 0.0) {
        return Err(Error::degenerate("non-positive QQ slope"));
    }
    let score = wls_objective(logs, e, a, delta, tau);
    Ok(WlsFit { alpha: 1.0 / a, delta, score })
}

/// Options for the adaptive `(k, tau)` search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOptions {
    pub tau_grid: Vec<f64>,
    pub k_min: usize,
    /// Largest rank considered; `None` means `n - 1`.
    pub k_max: Option<usize>,
    pub scores: QqScores,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            tau_grid: (1..=20).map(|i| i as f64 / 10.0).collect(),
            k_min: MIN_K,
            k_max: None,
            scores: QqScores::default(),
        }
    }
}

/// Sweeps `k` and `tau`, returning the fit with the smallest WLS score.
/// Ties go to the smallest `k`, then the smallest `tau`.
pub fn tempered_adaptive_k(sample: &CensoredSample, options: &AdaptiveOptions) -> Result<TemperedFit> {
    let n = sample.len();
    if n < 30 {
        return Err(Error::domain(format!("adaptive tempered fit needs n >= 30, got {n}")));
    }
    if options.tau_grid.is_empty() || options.tau_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid("tau grid must be nonempty and positive"));
    }
    let k_max = options.k_max.unwrap_or(n - 1).min(n - 1);
    let k_min = options.k_min.max(MIN_K);
    if k_min > k_max {
        return Err(Error::domain(format!("empty k range {k_min}..={k_max}")));
    }
    let mut taus = options.tau_grid.clone();
    taus.sort_by(f64::total_cmp);
    let log_values: Vec<f64> = sample.values().iter().map(|v| v.ln()).collect();

    let per_k: Vec<Option<(usize, f64, WlsFit)>> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let thr = log_values[n - k - 1];
            let logs: Vec<f64> = (1..=k).map(|j| log_values[n - j] - thr).collect();
            let e = options.scores.positions(k);
            let mut best: Option<(usize, f64, WlsFit)> = None;
            for &tau in &taus {
                if let Ok(fit) = wls_on_logs(&logs, &e, tau, false) {
                    if best.as_ref().is_none_or(|b| fit.score < b.2.score) {
                        best = Some((k, tau, fit));
                    }
                }
            }
            best
        })
        .collect();

    let mut best: Option<(usize, f64, WlsFit)> = None;
    for cand in per_k.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| cand.2.score < b.2.score) {
            best = Some(cand);
        }
    }
    let (k, tau, wls) = best.ok_or_else(|| Error::degenerate("every (k, tau) combination is degenerate"))?;
    let lambda = wls.delta * wls.alpha / tau;
    Ok(TemperedFit {
        k,
        alpha: wls.alpha,
        tau,
        lambda,
        beta_inf: beta_from_lambda(lambda, tau),
        delta: wls.delta,
        wls_score: wls.score,
        threshold: sample.threshold(k)?,
    })
}

/// Tempered QQ points `(e_j, alpha ln R_j + tau beta^tau h_tau(R_j))` at the
/// fitted parameters; linear with unit slope under the model.
pub fn tempered_qq(sample: &CensoredSample, fit: &TemperedFit, scores: QqScores) -> Result<Vec<(f64, f64)>> {
    let ex = relative_excesses(sample, fit.k)?;
    let e = scores.positions(fit.k);
    Ok(ex
        .log_ratios()
        .zip(e)
        .map(|(l, ej)| (ej, fit.alpha * l + fit.tau * fit.lambda * h_tau_log(l, fit.tau)))
        .collect())
}

/// Tail probability estimate
/// `((k+1)/(n+1)) x^{-alpha} exp(-lambda tau h_tau(x))`, `x = c / X_(n-k)`.
pub fn tempered_tail_prob(fit: &TemperedFit, n: usize, c: f64) -> Result<f64> {
    if !(c >= fit.threshold) {
        return Err(Error::domain(format!("level {c} below the threshold {}", fit.threshold)));
    }
    Ok(tail_prob_unchecked(fit, n, c))
}

/// `lambda tau h_tau(x)` from `ln x`; exactly 0 without tempering.
fn tempering_term(fit: &TemperedFit, lx: f64) -> f64 {
    if fit.lambda == 0.0 {
        0.0
    } else {
        fit.lambda * fit.tau * h_tau_log(lx, fit.tau)
    }
}

fn tail_prob_unchecked(fit: &TemperedFit, n: usize, c: f64) -> f64 {
    let base = (fit.k + 1) as f64 / (n + 1) as f64;
    let lx = (c / fit.threshold).ln();
    base * (-fit.alpha * lx - tempering_term(fit, lx)).exp()
}

/// Return level: the `c` with `tempered_tail_prob(c) = p`.
pub fn tempered_return_level(fit: &TemperedFit, n: usize, p: f64) -> Result<f64> {
    let upper = (fit.k + 1) as f64 / (n + 1) as f64;
    if !(p > 0.0 && p <= upper) {
        return Err(Error::domain(format!("p = {p} outside (0, {upper}]")));
    }
    if p == upper {
        return Ok(fit.threshold);
    }
    // work in y = ln(c / threshold) >= 0 on the log-probability scale
    let target = p.ln();
    let base = upper.ln();
    let f = |y: f64| base - fit.alpha * y - tempering_term(fit, y) - target;
    // grow the bracket; halve back when the tempering term overflows
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let v = f(hi);
        if !v.is_finite() {
            hi = 0.5 * (lo + hi);
        } else if v > 0.0 {
            lo = hi;
            hi *= 2.0;
        } else {
            break;
        }
    }
    if !(f(hi) <= 0.0) {
        return Err(Error::Solver("return level bracket did not close".into()));
    }
    // |d ln P| = |dP|/P, so 1e-10 relative in P is 1e-10 absolute in ln P
    let root = find_root(f, lo, hi, 1e-11)?;
    let c = fit.threshold * root.x.exp();
    let resid = (tail_prob_unchecked(fit, n, c) - p).abs();
    if resid > 1e-10 * p {
        return Err(Error::Solver(format!("return level residual {resid:.3e} for p = {p}")));
    }
    Ok(c)
}
