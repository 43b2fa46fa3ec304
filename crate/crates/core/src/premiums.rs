//! Excess-of-loss premiums and risk measures on fitted composite models.
//!
//! `Pi(u) = E[(X - u)_+] = int_u^inf S(x) dx` is the pure premium of an
//! unlimited layer above the retention `u`; a layer `L xs M` costs
//! `Pi(M) - Pi(M + L)`.

use serde::{Deserialize, Serialize};

use crate::numerics::log_poisson_terms;
use crate::splicing::{composite_quantile, composite_survival, me_cdf, CompositeModel, MixedErlang};
use crate::{Error, Result};

/// Reinsurance layer `limit xs retention`; `limit` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub retention: f64,
    pub limit: f64,
}

impl LayerSpec {
    pub fn new(retention: f64, limit: f64) -> Result<Self> {
        if !(retention >= 0.0) || !retention.is_finite() {
            return Err(Error::invalid("retention must be finite and nonnegative"));
        }
        if !(limit > 0.0) {
            return Err(Error::invalid("limit must be positive"));
        }
        Ok(LayerSpec { retention, limit })
    }

    pub fn unlimited(retention: f64) -> Result<Self> {
        LayerSpec::new(retention, f64::INFINITY)
    }

    pub fn top(&self) -> f64 {
        self.retention + self.limit
    }
}

/// Stop-loss transform `int_u^inf S_ME(x) dx` of a mixed Erlang distribution.
///
/// With shapes `1..M` this is the closed form
/// `(1/lambda) e^{-lambda u} sum_{n<M} sum_{k=n}^{M-1} (sum_{j>k} a_j) (lambda u)^n/n!`;
/// other shape sets sum the Erlang stop-loss transforms
/// `(1/lambda) sum_{n<r} (r - n) P(N = n)` of each component.
pub fn me_stoploss(me: &MixedErlang, u: f64) -> f64 {
    let u = u.max(0.0);
    let y = me.rate * u;
    let r_max = *me.shapes.last().expect("nonempty mixed Erlang") as usize;
    let pois: Vec<f64> = if y > 0.0 {
        log_poisson_terms(y, r_max).into_iter().map(f64::exp).collect()
    } else {
        let mut p = vec![0.0; r_max];
        p[0] = 1.0;
        p
    };
    if me.has_consecutive_shapes() {
        let m = me.shapes.len();
        // a_tail[k] = sum_{j=k+1}^{M} a_j, with a_j stored at index j-1
        let mut a_tail = vec![0.0; m];
        let mut acc = 0.0;
        for k in (0..m).rev() {
            acc += me.weights[k];
            a_tail[k] = acc;
        }
        let mut total = 0.0;
        let mut inner = 0.0;
        for n in (0..m).rev() {
            inner += a_tail[n];
            total += inner * pois[n];
        }
        total / me.rate
    } else {
        let mut total = 0.0;
        for (r, a) in me.shapes.iter().zip(&me.weights) {
            let r = *r as usize;
            let s: f64 = (0..r).map(|n| (r - n) as f64 * pois[n]).sum();
            total += a * s;
        }
        total / me.rate
    }
}

/// Pure premium `Pi(u) = E[(X - u)_+]` under a composite model.
///
/// Above the splice point `t` it is `(1 - pi) Pi_2(u)` with `Pi_2` the GP
/// stop-loss; below, `(1 - pi)(t - u) + pi Pi_1(u) + (1 - pi) Pi_2(t)` with
/// `Pi_1` the stop-loss of the normalized body on `(lower, t]`. Below the
/// lower truncation point `Pi(u) = Pi(lower) + lower - u`.
pub fn pure_premium(m: &CompositeModel, u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::domain("retention must be finite"));
    }
    if m.tail.xi >= 1.0 {
        return Err(Error::InfiniteMean { xi: m.tail.xi });
    }
    let t = m.threshold();
    if u > t {
        return Ok((1.0 - m.pi) * m.tail.stop_loss(u)?);
    }
    if u < m.lower {
        return Ok(pure_premium(m, m.lower)? + (m.lower - u));
    }
    let pi2_t = m.tail.stop_loss(t)?;
    Ok((1.0 - m.pi) * (t - u) + m.pi * body_stoploss(m, u) + (1.0 - m.pi) * pi2_t)
}

/// `Pi_1(u) = [(F*(t) - 1)(t - u) + Pi*(u) - Pi*(t)] / (F*(t) - F*(lower))`.
fn body_stoploss(m: &CompositeModel, u: f64) -> f64 {
    let t = m.threshold();
    let f_t = me_cdf(&m.body, t);
    let f_l = me_cdf(&m.body, m.lower);
    let num = (f_t - 1.0) * (t - u) + me_stoploss(&m.body, u) - me_stoploss(&m.body, t);
    (num / (f_t - f_l)).max(0.0)
}

/// `Pi(M) - Pi(M + L)`; an infinite limit gives `Pi(M)`.
pub fn layer_premium(m: &CompositeModel, layer: &LayerSpec) -> Result<f64> {
    let low = pure_premium(m, layer.retention)?;
    if layer.limit.is_infinite() {
        return Ok(low);
    }
    Ok(low - pure_premium(m, layer.top())?)
}

/// Value-at-risk at tail probability `p`: the `1 - p` quantile.
pub fn var(m: &CompositeModel, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p = {p} outside (0, 1)")));
    }
    let tail_mass = 1.0 - m.pi;
    if p < tail_mass {
        // exceedance probability straight into the tail, no rounding of 1 - p
        return Ok(m.tail.inverse_survival(p / tail_mass));
    }
    composite_quantile(m, 1.0 - p)
}

/// Conditional tail expectation `VaR_p + Pi(VaR_p)/p`.
pub fn cte(m: &CompositeModel, p: f64) -> Result<f64> {
    let v = var(m, p)?;
    Ok(v + pure_premium(m, v)? / p)
}

/// Model mean excess `e(u) = Pi(u)/S(u)`.
pub fn mean_excess(m: &CompositeModel, u: f64) -> Result<f64> {
    let s = composite_survival(m, u);
    if !(s > 0.0) {
        return Err(Error::domain(format!("survival vanishes at u = {u}")));
    }
    Ok(pure_premium(m, u)? / s)
}
