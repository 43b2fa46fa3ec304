//! Global loss models: a mixed Erlang body fitted by EM, a generalized Pareto
//! tail, and the spliced composite of the two.
//!
//! The body is fitted on the observations below the splice point with upper
//! truncation at that point; the EM handles right censoring and truncation by
//! conditional expectations. The tail is fitted by censoring-aware maximum
//! likelihood on the exceedances.

use serde::{Deserialize, Serialize};

use crate::censoring::censored_hill;
use crate::empirics::CensoredSample;
use crate::numerics::{find_root, golden_section, nelder_mead};
use crate::{BestIterate, Error, Result};

/// Schema version written into serialized composite models.
pub const SCHEMA_VERSION: u32 = 1;

/// `|xi|` below which the generalized Pareto formulas switch to the
/// exponential limit.
pub const XI_ZERO: f64 = 1e-7;

/// Distribution function, survival function and log survival of an Erlang
/// distribution with integer shape `r` evaluated at `y = lambda x`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ErlangTail {
    pub cdf: f64,
    pub sf: f64,
    pub ln_sf: f64,
}

pub(crate) fn erlang_tail(r: u32, y: f64) -> ErlangTail {
    if y <= 0.0 {
        return ErlangTail { cdf: 0.0, sf: 1.0, ln_sf: 0.0 };
    }
    if y.is_infinite() {
        return ErlangTail { cdf: 1.0, sf: 0.0, ln_sf: f64::NEG_INFINITY };
    }
    let rf = r as f64;
    let ln_y = y.ln();
    if y < rf {
        // P(N >= r) for N ~ Poisson(y): terms decrease from n = r on
        let mut term = (-y + rf * ln_y - libm::lgamma(rf + 1.0)).exp();
        let mut sum = 0.0;
        let mut n = rf;
        while term > 0.0 {
            sum += term;
            n += 1.0;
            term *= y / n;
            if term <= sum * 1e-17 {
                break;
            }
        }
        let cdf = sum.min(1.0);
        ErlangTail { cdf, sf: 1.0 - cdf, ln_sf: (-cdf).ln_1p() }
    } else {
        // P(N < r): terms increase up to n = r - 1, so scale by the last one
        let mut lp = -y;
        let mut logs = Vec::with_capacity(r as usize);
        logs.push(lp);
        for m in 1..r {
            lp += ln_y - (m as f64).ln();
            logs.push(lp);
        }
        let top = lp;
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        let ln_sf = top + s.ln();
        let sf = ln_sf.exp().min(1.0);
        ErlangTail { cdf: 1.0 - sf, sf, ln_sf }
    }
}

fn erlang_ln_density(r: u32, lambda: f64, ln_gamma_r: f64, x: f64) -> f64 {
    let rf = r as f64;
    rf * lambda.ln() + (rf - 1.0) * x.ln() - lambda * x - ln_gamma_r
}

/// Mixture of Erlang distributions with common rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedErlang {
    pub shapes: Vec<u32>,
    pub weights: Vec<f64>,
    pub rate: f64,
}

impl MixedErlang {
    pub fn new(shapes: Vec<u32>, weights: Vec<f64>, rate: f64) -> Result<Self> {
        if shapes.is_empty() || shapes.len() != weights.len() {
            return Err(Error::invalid("need M >= 1 shapes with one weight each"));
        }
        if shapes[0] == 0 || shapes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("shapes must be strictly increasing positive integers"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::invalid("rate must be positive and finite"));
        }
        Ok(MixedErlang { shapes, weights, rate })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// True when the shapes are exactly `1, 2, ..., M`.
    pub fn has_consecutive_shapes(&self) -> bool {
        self.shapes.iter().enumerate().all(|(i, r)| *r as usize == i + 1)
    }

    pub fn mean(&self) -> f64 {
        self.shapes.iter().zip(&self.weights).map(|(r, a)| a * *r as f64).sum::<f64>() / self.rate
    }

    pub fn density(&self, x: f64) -> f64 {
        me_density(self, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        me_cdf(self, x)
    }

    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let y = self.rate * x;
        self.shapes.iter().zip(&self.weights).map(|(r, a)| a * erlang_tail(*r, y).sf).sum()
    }
}

/// Mixed Erlang density `sum_j a_j lambda^{r_j} x^{r_j-1} e^{-lambda x}/(r_j-1)!`.
pub fn me_density(me: &MixedErlang, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return me.shapes.iter().zip(&me.weights).filter(|(r, _)| **r == 1).map(|(_, a)| a * me.rate).sum();
    }
    me.shapes
        .iter()
        .zip(&me.weights)
        .map(|(r, a)| a * erlang_ln_density(*r, me.rate, libm::lgamma(*r as f64), x).exp())
        .sum()
}

/// Mixed Erlang distribution function via the Erlang Poisson sums.
pub fn me_cdf(me: &MixedErlang, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = me.rate * x;
    me.shapes.iter().zip(&me.weights).map(|(r, a)| a * erlang_tail(*r, y).cdf).sum()
}

/// Generalized Pareto excess distribution above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedParetoTail {
    pub threshold: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GeneralizedParetoTail {
    pub fn new(threshold: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(Error::invalid("GP threshold must be positive"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("GP scale must be positive"));
        }
        if !xi.is_finite() {
            return Err(Error::invalid("GP shape must be finite"));
        }
        Ok(GeneralizedParetoTail { threshold, sigma, xi })
    }

    /// Right endpoint: `t - sigma/xi` for `xi < 0`, otherwise infinite.
    pub fn endpoint(&self) -> f64 {
        if self.xi < -XI_ZERO {
            self.threshold - self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }

    /// `P(X > x | X > t)`.
    pub fn survival(&self, x: f64) -> f64 {
        let y = x - self.threshold;
        if y <= 0.0 {
            return 1.0;
        }
        if self.xi.abs() < XI_ZERO {
            return (-y / self.sigma).exp();
        }
        let base = 1.0 + self.xi * y / self.sigma;
        if base <= 0.0 {
            return 0.0;
        }
        base.powf(-1.0 / self.xi)
    }

    /// Conditional density of the exceedance.
    pub fn density(&self, x: f64) -> f64 {
        let y = x - self.threshold;
        if y < 0.0 {
            return 0.0;
        }
        if self.xi.abs() < XI_ZERO {
            return (-y / self.sigma).exp() / self.sigma;
        }
        let base = 1.0 + self.xi * y / self.sigma;
        if base <= 0.0 {
            return 0.0;
        }
        base.powf(-1.0 - 1.0 / self.xi) / self.sigma
    }

    /// Quantile of the conditional distribution at level `q` in `[0, 1)`.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.xi.abs() < XI_ZERO {
            return self.threshold - self.sigma * (-q).ln_1p();
        }
        self.threshold + self.sigma / self.xi * ((1.0 - q).powf(-self.xi) - 1.0)
    }

    /// The `x` with conditional survival `s` in `(0, 1]`; accurate for tiny `s`
    /// where `quantile(1 - s)` would round.
    pub fn inverse_survival(&self, s: f64) -> f64 {
        if self.xi.abs() < XI_ZERO {
            return self.threshold - self.sigma * s.ln();
        }
        self.threshold + self.sigma / self.xi * (s.powf(-self.xi) - 1.0)
    }

    /// `int_u^inf P(X > x | X > t) dx` in closed form, `u >= t`.
    pub fn stop_loss(&self, u: f64) -> Result<f64> {
        if self.xi >= 1.0 {
            return Err(Error::InfiniteMean { xi: self.xi });
        }
        let y = (u - self.threshold).max(0.0);
        if self.xi.abs() < XI_ZERO {
            return Ok(self.sigma * (-y / self.sigma).exp());
        }
        let base = 1.0 + self.xi * y / self.sigma;
        if base <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.sigma / (1.0 - self.xi) * base.powf(1.0 - 1.0 / self.xi))
    }

    fn ln_density_excess(&self, y: f64) -> f64 {
        if self.xi.abs() < XI_ZERO {
            return -self.sigma.ln() - y / self.sigma;
        }
        let base = 1.0 + self.xi * y / self.sigma;
        if base <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * base.ln()
    }

    fn ln_survival_excess(&self, y: f64) -> f64 {
        if self.xi.abs() < XI_ZERO {
            return -y / self.sigma;
        }
        let base = 1.0 + self.xi * y / self.sigma;
        if base <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -base.ln() / self.xi
    }
}

/// Mixed Erlang body on `(lower, t]` spliced with a generalized Pareto tail
/// above `t = tail.threshold`; `pi` is the body probability.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeModel {
    pub body: MixedErlang,
    pub tail: GeneralizedParetoTail,
    pub pi: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CompositeDocument {
    schema_version: u32,
    shapes: Vec<u32>,
    weights: Vec<f64>,
    rate: f64,
    threshold: f64,
    sigma: f64,
    xi: f64,
    pi: f64,
    lower: f64,
}

impl CompositeModel {
    pub fn new(body: MixedErlang, tail: GeneralizedParetoTail, pi: f64, lower: f64) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::invalid(format!("pi = {pi} outside (0, 1)")));
        }
        if !(lower >= 0.0) || lower >= tail.threshold {
            return Err(Error::invalid("lower truncation must lie in [0, t)"));
        }
        let m = CompositeModel { body, tail, pi, lower };
        if !(m.body_mass() > 0.0) {
            return Err(Error::invalid("body has no mass on (lower, t]"));
        }
        Ok(m)
    }

    pub fn threshold(&self) -> f64 {
        self.tail.threshold
    }

    /// `F_ME(t) - F_ME(lower)`, the body normalizing constant.
    pub fn body_mass(&self) -> f64 {
        me_cdf(&self.body, self.tail.threshold) - me_cdf(&self.body, self.lower)
    }

    pub fn density(&self, x: f64) -> f64 {
        composite_density(self, x)
    }

    pub fn survival(&self, x: f64) -> f64 {
        composite_survival(self, x)
    }

    pub fn quantile(&self, level: f64) -> Result<f64> {
        composite_quantile(self, level)
    }

    pub fn to_json(&self) -> String {
        let doc = CompositeDocument {
            schema_version: SCHEMA_VERSION,
            shapes: self.body.shapes.clone(),
            weights: self.body.weights.clone(),
            rate: self.body.rate,
            threshold: self.tail.threshold,
            sigma: self.tail.sigma,
            xi: self.tail.xi,
            pi: self.pi,
            lower: self.lower,
        };
        serde_json::to_string_pretty(&doc).expect("composite model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CompositeDocument =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("model JSON: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let body = MixedErlang::new(doc.shapes, doc.weights, doc.rate)?;
        let tail = GeneralizedParetoTail::new(doc.threshold, doc.sigma, doc.xi)?;
        CompositeModel::new(body, tail, doc.pi, doc.lower)
    }
}

/// Composite density: `pi f_ME(x)/(F_ME(t) - F_ME(lower))` on `(lower, t]`,
/// `(1 - pi)` times the GP density above `t`.
pub fn composite_density(m: &CompositeModel, x: f64) -> f64 {
    let t = m.tail.threshold;
    if x <= m.lower {
        0.0
    } else if x <= t {
        m.pi * me_density(&m.body, x) / m.body_mass()
    } else {
        (1.0 - m.pi) * m.tail.density(x)
    }
}

pub fn composite_survival(m: &CompositeModel, x: f64) -> f64 {
    let t = m.tail.threshold;
    if x <= m.lower {
        1.0
    } else if x <= t {
        let f_lower = me_cdf(&m.body, m.lower);
        let frac = (me_cdf(&m.body, x) - f_lower) / (me_cdf(&m.body, t) - f_lower);
        1.0 - m.pi * frac
    } else {
        (1.0 - m.pi) * m.tail.survival(x)
    }
}

/// Inverse of the composite distribution function: numeric inversion of the
/// normalized body CDF for `level <= pi`, closed-form GP quantile above.
pub fn composite_quantile(m: &CompositeModel, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level {level} outside (0, 1)")));
    }
    let t = m.tail.threshold;
    if level > m.pi {
        let q = (level - m.pi) / (1.0 - m.pi);
        return Ok(m.tail.quantile(q));
    }
    if level == m.pi {
        return Ok(t);
    }
    let f_lower = me_cdf(&m.body, m.lower);
    let mass = me_cdf(&m.body, t) - f_lower;
    let target = level / m.pi;
    let root = find_root(|x| (me_cdf(&m.body, x) - f_lower) / mass - target, m.lower, t, 1e-14)?;
    Ok(root.x)
}

/// Information criterion used by the backward stepwise shape search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InformationCriterion {
    #[default]
    Aic,
    Bic,
}

/// Settings for [`me_em_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    /// Number of shapes to start the backward search from.
    pub init_m: usize,
    /// Spacing `s` of the initial shapes `(s, 2s, ..., Ms)`; `None` derives it
    /// from a method-of-moments Erlang fit.
    pub spread: Option<u32>,
    pub criterion: InformationCriterion,
    /// Lower truncation point of the data.
    pub lower: f64,
    /// Upper truncation point; `None` for no truncation.
    pub upper: Option<f64>,
    pub max_iter: usize,
    /// Relative log-likelihood change that ends the EM iterations of the
    /// final fit.
    pub tol: f64,
    /// Looser stopping tolerance used while searching over shapes.
    pub search_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            init_m: 10,
            spread: None,
            criterion: InformationCriterion::Aic,
            lower: 0.0,
            upper: None,
            max_iter: 1000,
            tol: 1e-8,
            search_tol: 1e-5,
        }
    }
}

/// Outcome of [`me_em_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: MixedErlang,
    pub loglik: f64,
    pub ic: f64,
    /// Observed log-likelihood at every iteration of the final EM run.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Number of EM runs performed during the shape search.
    pub runs: usize,
    /// Largest relative decrease `(l_prev - l_next)/max(1, |l_prev|)` of the
    /// log-likelihood seen in any iteration of any run; nonpositive when
    /// every run ascended.
    pub worst_ascent: f64,
}

struct EmData {
    exact: Vec<f64>,
    ln_exact: Vec<f64>,
    censored: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl EmData {
    fn n(&self) -> usize {
        self.exact.len() + self.censored.len()
    }
}

#[derive(Clone)]
struct EmState {
    shapes: Vec<u32>,
    /// Component probabilities of the truncated mixture.
    beta: Vec<f64>,
    theta: f64,
}

struct EmRun {
    state: EmState,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
    worst_ascent: f64,
}

/// Survival of component `r` at scale `theta` at `x`; handles `x = inf`.
fn comp_sf(r: u32, theta: f64, x: f64) -> ErlangTail {
    erlang_tail(r, x / theta)
}

fn comp_ln_mass(r: u32, theta: f64, lower: f64, upper: f64) -> f64 {
    let lo = comp_sf(r, theta, lower);
    if upper.is_infinite() {
        return lo.ln_sf;
    }
    let hi = comp_sf(r, theta, upper);
    if lo.sf - hi.sf > 0.0 {
        (lo.sf - hi.sf).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log of the censored-point contribution `P_j(c < X <= upper)`.
fn comp_ln_interval(r: u32, theta: f64, c: f64, upper: f64) -> f64 {
    comp_ln_mass(r, theta, c, upper)
}

/// Observed log-likelihood and posterior membership probabilities, stored
/// row-major with one row of `M` probabilities per observation.
fn e_step(data: &EmData, st: &EmState) -> (f64, Vec<f64>, Vec<f64>) {
    let m = st.shapes.len();
    let lambda = 1.0 / st.theta;
    let ln_lambda = lambda.ln();
    // per-component constant of ln(beta_j f_j(x) / mass_j) and of the censored terms
    let mut dens_const = Vec::with_capacity(m);
    let mut cens_const = Vec::with_capacity(m);
    for (r, b) in st.shapes.iter().zip(&st.beta) {
        let ln_mass = comp_ln_mass(*r, st.theta, data.lower, data.upper);
        let rf = *r as f64;
        dens_const.push(b.ln() + rf * ln_lambda - libm::lgamma(rf) - ln_mass);
        cens_const.push(b.ln() - ln_mass);
    }
    let mut ll = 0.0;
    let mut z_exact = vec![0.0; data.exact.len() * m];
    let mut buf = vec![0.0; m];
    for (i, (&x, &lx)) in data.exact.iter().zip(&data.ln_exact).enumerate() {
        for j in 0..m {
            buf[j] = dens_const[j] + (st.shapes[j] as f64 - 1.0) * lx - lambda * x;
        }
        ll += normalize_row(&mut buf, &mut z_exact[i * m..(i + 1) * m]);
    }
    let mut z_cens = vec![0.0; data.censored.len() * m];
    for (i, &c) in data.censored.iter().enumerate() {
        for j in 0..m {
            buf[j] = cens_const[j] + comp_ln_interval(st.shapes[j], st.theta, c, data.upper);
        }
        ll += normalize_row(&mut buf, &mut z_cens[i * m..(i + 1) * m]);
    }
    (ll, z_exact, z_cens)
}

/// Writes `softmax(logs)` into `out` and returns `ln sum exp(logs)`.
fn normalize_row(logs: &mut [f64], out: &mut [f64]) -> f64 {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        out.iter_mut().for_each(|z| *z = 0.0);
        return top;
    }
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logs.iter()) {
        *o = (l - top).exp();
        total += *o;
    }
    out.iter_mut().for_each(|z| *z /= total);
    top + total.ln()
}

/// `E[X | component r, c < X <= upper]` at scale `theta`.
fn censored_mean(r: u32, theta: f64, c: f64, upper: f64) -> f64 {
    let num = comp_sf(r + 1, theta, c).sf - if upper.is_finite() { comp_sf(r + 1, theta, upper).sf } else { 0.0 };
    let den = comp_sf(r, theta, c).sf - if upper.is_finite() { comp_sf(r, theta, upper).sf } else { 0.0 };
    if den > 0.0 && num > 0.0 {
        r as f64 * theta * num / den
    } else if upper.is_finite() {
        0.5 * (c + upper)
    } else {
        c + theta
    }
}

fn m_step(data: &EmData, st: &EmState, z_exact: &[f64], z_cens: &[f64]) -> EmState {
    let m = st.shapes.len();
    let n = data.n() as f64;
    let mut nj = vec![0.0; m];
    let mut aj = vec![0.0; m];
    for (x, z) in data.exact.iter().zip(z_exact.chunks(m)) {
        for j in 0..m {
            nj[j] += z[j];
            aj[j] += z[j] * x;
        }
    }
    for (c, z) in data.censored.iter().zip(z_cens.chunks(m)) {
        for j in 0..m {
            if z[j] > 0.0 {
                nj[j] += z[j];
                aj[j] += z[j] * censored_mean(st.shapes[j], st.theta, *c, data.upper);
            }
        }
    }
    let beta: Vec<f64> = nj.iter().map(|v| v / n).collect();
    let b_total: f64 = nj.iter().zip(&st.shapes).map(|(v, r)| v * *r as f64).sum();
    let a_total: f64 = aj.iter().sum();
    let truncated = data.lower > 0.0 || data.upper.is_finite();

    // expected complete-data log-likelihood as a function of the scale
    let q = |theta: f64| -> f64 {
        let mut total = 0.0;
        for j in 0..m {
            if nj[j] == 0.0 {
                continue;
            }
            total += -aj[j] / theta - nj[j] * st.shapes[j] as f64 * theta.ln();
            if truncated {
                total -= nj[j] * comp_ln_mass(st.shapes[j], theta, data.lower, data.upper);
            }
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    };

    let closed = a_total / b_total;
    let mut theta = st.theta;
    let mut best = q(theta);
    let q_closed = q(closed);
    if q_closed > best {
        theta = closed;
        best = q_closed;
    }
    if truncated {
        let centre = theta.ln();
        let (u, neg) = golden_section(|u| -q(u.exp()), centre - 2.0, centre + 2.0, 1e-12);
        if -neg > best {
            theta = u.exp();
        }
    }
    EmState { shapes: st.shapes.clone(), beta, theta }
}

fn run_em(data: &EmData, start: EmState, max_iter: usize, tol: f64) -> EmRun {
    let mut st = start;
    let mut trace = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut converged = false;
    let (mut ll, mut ze, mut zc) = e_step(data, &st);
    trace.push(ll);
    for _ in 0..max_iter {
        let next = m_step(data, &st, &ze, &zc);
        let (ll_next, ze_next, zc_next) = e_step(data, &next);
        let decrease = (ll - ll_next) / ll.abs().max(1.0);
        debug_assert!(!(decrease > 1e-10), "EM log-likelihood decreased from {ll} to {ll_next}");
        worst = worst.max(decrease);
        trace.push(ll_next);
        let change = (ll_next - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        st = next;
        ll = ll_next;
        ze = ze_next;
        zc = zc_next;
        if change < tol {
            converged = true;
            break;
        }
    }
    EmRun { state: st, loglik: ll, trace, converged, worst_ascent: worst }
}

fn information(ll: f64, m: usize, n: usize, criterion: InformationCriterion) -> f64 {
    let df = 2.0 * m as f64;
    match criterion {
        InformationCriterion::Aic => -2.0 * ll + 2.0 * df,
        InformationCriterion::Bic => -2.0 * ll + df * (n as f64).ln(),
    }
}

/// Drops components whose probability vanished and renormalizes.
fn prune(st: &mut EmState) {
    let keep: Vec<usize> = (0..st.shapes.len()).filter(|&j| st.beta[j] > 1e-10).collect();
    if keep.len() != st.shapes.len() {
        st.shapes = keep.iter().map(|&j| st.shapes[j]).collect();
        st.beta = keep.iter().map(|&j| st.beta[j]).collect();
        let total: f64 = st.beta.iter().sum();
        st.beta.iter_mut().for_each(|b| *b /= total);
    }
}

struct Search<'a> {
    data: &'a EmData,
    options: &'a EmOptions,
    runs: usize,
    worst: f64,
}

impl Search<'_> {
    fn fit_with(&mut self, start: EmState, tol: f64) -> EmRun {
        let run = run_em(self.data, start, self.options.max_iter, tol);
        self.runs += 1;
        self.worst = self.worst.max(run.worst_ascent);
        run
    }

    fn fit(&mut self, start: EmState) -> EmRun {
        self.fit_with(start, self.options.search_tol)
    }

    /// Moves each shape up or down by one while the likelihood improves.
    fn adjust_shapes(&mut self, mut cur: EmRun) -> EmRun {
        loop {
            let mut improved = false;
            let m = cur.state.shapes.len();
            for j in (0..m).rev() {
                for dir in [1i64, -1] {
                    loop {
                        let shapes = &cur.state.shapes;
                        let cand = shapes[j] as i64 + dir;
                        let lo_ok = cand >= 1 && (j == 0 || cand > shapes[j - 1] as i64);
                        let hi_ok = j + 1 == m || cand < shapes[j + 1] as i64;
                        if !(lo_ok && hi_ok) {
                            break;
                        }
                        let mut start = cur.state.clone();
                        start.shapes[j] = cand as u32;
                        let trial = self.fit(start);
                        // gains below the search tolerance are indistinguishable
                        // from unfinished iterations
                        let margin = self.options.search_tol * cur.loglik.abs().max(1.0);
                        if trial.loglik > cur.loglik + margin {
                            cur = trial;
                            improved = true;
                        } else {
                            break;
                        }
                    }
                }
            }
            if !improved {
                return cur;
            }
        }
    }
}

fn initial_state(data: &EmData, shapes: Vec<u32>) -> Result<EmState> {
    let all: Vec<f64> = data.exact.iter().chain(&data.censored).copied().collect();
    let max = all.iter().copied().fold(0.0, f64::max);
    let r_max = *shapes.last().unwrap() as f64;
    let theta = max / r_max;
    let mut counts = vec![0.0; shapes.len()];
    for x in &all {
        let j = shapes.iter().position(|r| *x <= *r as f64 * theta).unwrap_or(shapes.len() - 1);
        counts[j] += 1.0;
    }
    let n = all.len() as f64;
    let mut st = EmState { shapes, beta: counts.iter().map(|c| c / n).collect(), theta };
    prune(&mut st);
    if st.shapes.is_empty() {
        return Err(Error::degenerate("no Erlang component received initial weight"));
    }
    Ok(st)
}

fn to_model(data: &EmData, st: &EmState) -> Result<MixedErlang> {
    let raw: Vec<f64> = st
        .shapes
        .iter()
        .zip(&st.beta)
        .map(|(r, b)| b / comp_ln_mass(*r, st.theta, data.lower, data.upper).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut shapes = Vec::new();
    let mut weights = Vec::new();
    for (r, w) in st.shapes.iter().zip(&raw) {
        let w = w / total;
        if w > 0.0 && w.is_finite() {
            shapes.push(*r);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    MixedErlang::new(shapes, weights, 1.0 / st.theta)
}

/// Fits a mixed Erlang distribution by EM with backward stepwise shape search.
///
/// Starting from shapes `(s, 2s, ..., Ms)`, every fit is followed by a `+-1`
/// hill-climb on each shape; the smallest shape is then deleted as long as
/// this lowers the information criterion. Censored observations contribute
/// `P(c < X <= upper)`; all components are truncated to `[lower, upper]`.
pub fn me_em_fit(data: &CensoredSample, options: &EmOptions) -> Result<EmFit> {
    if data.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if options.init_m == 0 {
        return Err(Error::invalid("init_m must be at least 1"));
    }
    if !(options.tol > 0.0) || !(options.search_tol > 0.0) {
        return Err(Error::invalid("EM tolerances must be positive"));
    }
    let upper = options.upper.unwrap_or(f64::INFINITY);
    if !(options.lower >= 0.0) || !(upper > options.lower) {
        return Err(Error::invalid("need 0 <= lower < upper"));
    }
    if data.min() < options.lower || data.max() > upper {
        return Err(Error::invalid("observations outside the truncation interval"));
    }
    let mut em_data =
        EmData { exact: Vec::new(), ln_exact: Vec::new(), censored: Vec::new(), lower: options.lower, upper };
    for (v, c) in data.values().iter().zip(data.censored()) {
        if *c {
            if *v < upper {
                em_data.censored.push(*v);
            }
        } else {
            em_data.exact.push(*v);
        }
    }
    em_data.ln_exact = em_data.exact.iter().map(|x| x.ln()).collect();
    if em_data.exact.is_empty() {
        return Err(Error::AllCensored { k: data.len() });
    }
    let n = em_data.n();

    let spread = match options.spread {
        Some(s) if s >= 1 => s,
        Some(_) => return Err(Error::invalid("spread must be at least 1")),
        None => {
            let all: Vec<f64> = em_data.exact.iter().chain(&em_data.censored).copied().collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
            let r0 = if var > 0.0 { mean * mean / var } else { 1.0 };
            ((r0 / options.init_m as f64).round() as u32).max(1)
        }
    };
    let shapes: Vec<u32> = (1..=options.init_m as u32).map(|j| j * spread).collect();

    let mut search = Search { data: &em_data, options, runs: 0, worst: f64::NEG_INFINITY };
    let start = initial_state(&em_data, shapes)?;
    let first = search.fit(start);
    let mut cur = search.adjust_shapes(first);
    prune(&mut cur.state);
    let mut cur_ic = information(cur.loglik, cur.state.shapes.len(), n, options.criterion);

    while cur.state.shapes.len() > 1 {
        let mut start = cur.state.clone();
        start.shapes.remove(0);
        start.beta.remove(0);
        let total: f64 = start.beta.iter().sum();
        start.beta.iter_mut().for_each(|b| *b /= total);
        let trial = search.fit(start);
        let mut trial = search.adjust_shapes(trial);
        prune(&mut trial.state);
        let ic = information(trial.loglik, trial.state.shapes.len(), n, options.criterion);
        if ic < cur_ic {
            cur = trial;
            cur_ic = ic;
        } else {
            break;
        }
    }

    let tol = options.tol;
    let mut cur = search.fit_with(cur.state, tol);
    prune(&mut cur.state);
    let cur_ic = information(cur.loglik, cur.state.shapes.len(), n, options.criterion);
    let model = to_model(&em_data, &cur.state)?;
    if !cur.converged {
        return Err(Error::Convergence {
            message: format!("EM did not converge within {} iterations", options.max_iter),
            best: Some(Box::new(BestIterate::MixedErlang(model))),
        });
    }
    Ok(EmFit {
        model,
        loglik: cur.loglik,
        ic: cur_ic,
        trace: cur.trace,
        converged: cur.converged,
        runs: search.runs,
        worst_ascent: search.worst,
    })
}

/// Observed log-likelihood of a mixed Erlang model truncated to
/// `[lower, upper]`, with right-censored points contributing `P(c < X <= upper)`.
pub fn me_loglik(me: &MixedErlang, data: &CensoredSample, lower: f64, upper: Option<f64>) -> f64 {
    let upper = upper.unwrap_or(f64::INFINITY);
    let f_lo = me_cdf(me, lower);
    let f_hi = if upper.is_finite() { me_cdf(me, upper) } else { 1.0 };
    let mass = f_hi - f_lo;
    data.values()
        .iter()
        .zip(data.censored())
        .map(|(v, c)| if *c { ((f_hi - me_cdf(me, *v)) / mass).ln() } else { (me_density(me, *v) / mass).ln() })
        .sum()
}

/// How the body probability `pi` is estimated from the splice rank `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PiRule {
    /// `pi = (n - k)/n`, the fraction of the data not larger than `t`.
    #[default]
    Empirical,
    /// `1 - pi = (k + 1)/(n + 1)`.
    Plotting,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpliceOptions {
    /// Body fit settings; `upper` is overridden with the splice point.
    pub em: EmOptions,
    pub pi_rule: PiRule,
}

/// Spliced fit with its component diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SpliceFit {
    pub model: CompositeModel,
    pub k: usize,
    pub body_fit: EmFit,
    pub tail_loglik: f64,
    /// Censored Hill estimate used to start the tail fit.
    pub xi_start: f64,
}

/// Censoring-aware generalized Pareto log-likelihood of the exceedances
/// `z - t` (uncensored: log density, censored: log survival).
pub fn gp_loglik(tail: &GeneralizedParetoTail, excess: &[f64], censored: &[bool]) -> f64 {
    excess
        .iter()
        .zip(censored)
        .map(|(y, c)| if *c { tail.ln_survival_excess(*y) } else { tail.ln_density_excess(*y) })
        .sum()
}

/// Maximum likelihood fit of a generalized Pareto tail above `threshold`.
pub fn gp_fit(
    threshold: f64,
    excess: &[f64],
    censored: &[bool],
    xi_start: f64,
) -> Result<(GeneralizedParetoTail, f64)> {
    if excess.len() != censored.len() {
        return Err(Error::invalid("excess and censoring flags differ in length"));
    }
    if excess.is_empty() || censored.iter().all(|c| *c) {
        return Err(Error::AllCensored { k: excess.len() });
    }
    let mean = excess.iter().sum::<f64>() / excess.len() as f64;
    let xi0 = if xi_start.is_finite() { xi_start.clamp(-0.4, 2.0) } else { 0.1 };
    let sigma0 = (threshold * xi0).max(mean * (1.0 - xi0.min(0.9)));
    let nll = |p: &[f64]| -> f64 {
        let tail = GeneralizedParetoTail { threshold, sigma: p[0].exp(), xi: p[1] };
        let ll = gp_loglik(&tail, excess, censored);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let mut best = nelder_mead(nll, &[sigma0.ln(), xi0], 0.2, 1e-13, 1e-10, 20_000);
    for _ in 0..3 {
        let again = nelder_mead(nll, &best.x, 0.05, 1e-14, 1e-11, 20_000);
        let done = (best.value - again.value).abs() <= 1e-12 * best.value.abs().max(1.0);
        best = again;
        if done {
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::Solver("GP likelihood is not finite anywhere on the simplex path".into()));
    }
    let tail = GeneralizedParetoTail::new(threshold, best.x[0].exp(), best.x[1])?;
    Ok((tail, -best.value))
}

/// Splices a mixed Erlang body and a generalized Pareto tail at
/// `t = X_(n-k)`.
pub fn splice_fit(data: &CensoredSample, k: usize, options: &SpliceOptions) -> Result<SpliceFit> {
    let n = data.len();
    let t = data.threshold(k)?;
    let values = data.values();
    let cens = data.censored();
    let mut body_v = Vec::new();
    let mut body_c = Vec::new();
    let mut excess = Vec::new();
    let mut exc_c = Vec::new();
    for (v, c) in values.iter().zip(cens) {
        if *v > t {
            excess.push(v - t);
            exc_c.push(*c);
        } else {
            body_v.push(*v);
            body_c.push(*c);
        }
    }
    if excess.len() < 10 {
        return Err(Error::domain(format!(
            "only {} observations exceed the splice point; at least 10 needed",
            excess.len()
        )));
    }
    let xi_start = censored_hill(data, k).unwrap_or(0.5);
    let (tail, tail_loglik) = gp_fit(t, &excess, &exc_c, xi_start)?;

    let body = CensoredSample::new(body_v, body_c)?;
    let mut em = options.em.clone();
    em.upper = Some(t);
    let body_fit = me_em_fit(&body, &em)?;

    let pi = match options.pi_rule {
        PiRule::Empirical => (n - k) as f64 / n as f64,
        PiRule::Plotting => 1.0 - (k + 1) as f64 / (n + 1) as f64,
    };
    let model = CompositeModel::new(body_fit.model.clone(), tail, pi, em.lower)?;
    Ok(SpliceFit { model, k, body_fit, tail_loglik, xi_start })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn example_body() -> MixedErlang {
        MixedErlang::new(vec![1, 3, 4], vec![0.2, 0.5, 0.3], 0.8).unwrap()
    }

    fn example_model() -> CompositeModel {
        let tail = GeneralizedParetoTail::new(6.0, 3.0, 0.4).unwrap();
        CompositeModel::new(example_body(), tail, 0.85, 0.0).unwrap()
    }

    #[test]
    fn erlang_tail_against_direct_sum() {
        for r in [1u32, 2, 5, 30] {
            for y in [0.01f64, 0.5, 2.0, 7.0, 29.0, 31.0, 80.0] {
                let mut sf = 0.0;
                let mut term = (-y).exp();
                for n in 0..r {
                    if n > 0 {
                        term *= y / n as f64;
                    }
                    sf += term;
                }
                let t = erlang_tail(r, y);
                assert!((t.sf - sf).abs() < 1e-13, "r={r} y={y}");
                assert!((t.cdf + t.sf - 1.0).abs() < 1e-15);
                assert!((t.ln_sf - sf.ln()).abs() < 1e-10 * (1.0 + sf.ln().abs()));
            }
        }
        // deep tail: log survival stays finite where the survival underflows
        let t = erlang_tail(3, 1000.0);
        let expected = -1000.0 + (1.0 + 1000.0 + 500_000.0f64).ln();
        assert_abs_diff_eq!(t.ln_sf, expected, epsilon = 1e-9);
    }

    #[test]
    fn me_density_examples() {
        let exp = MixedErlang::new(vec![1], vec![1.0], 1.5).unwrap();
        assert_abs_diff_eq!(me_density(&exp, 2.0), 1.5 * (-3.0f64).exp(), epsilon = 1e-15);
        let e2 = MixedErlang::new(vec![2], vec![1.0], 1.0).unwrap();
        assert_abs_diff_eq!(me_density(&e2, 1.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(me_density(&e2, -1.0), 0.0);
        assert_eq!(me_cdf(&e2, -1.0), 0.0);
        let me = example_body();
        let total = simpson(|x| me_density(&me, x), 0.0, 80.0, 20_000);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        for x in [0.3, 1.0, 2.5, 6.0, 12.0] {
            let integral = simpson(|u| me_density(&me, u), 0.0, x, 4000);
            assert_abs_diff_eq!(me_cdf(&me, x), integral, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(me.mean(), (0.2 + 1.5 + 1.2) / 0.8, epsilon = 1e-14);
    }

    #[test]
    fn mixed_erlang_validation() {
        assert!(MixedErlang::new(vec![2, 2], vec![0.5, 0.5], 1.0).is_err());
        assert!(MixedErlang::new(vec![0], vec![1.0], 1.0).is_err());
        assert!(MixedErlang::new(vec![1, 2], vec![0.5, 0.6], 1.0).is_err());
        assert!(MixedErlang::new(vec![1], vec![1.0], 0.0).is_err());
        assert!(MixedErlang::new(vec![], vec![], 1.0).is_err());
    }

    #[test]
    fn composite_continuity_and_support() {
        let m = example_model();
        assert_abs_diff_eq!(composite_survival(&m, 6.0), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(composite_survival(&m, 6.0 + 1e-12), 0.15, epsilon = 1e-12);
        assert_eq!(composite_survival(&m, 0.0), 1.0);
        assert_eq!(composite_density(&m, -1.0), 0.0);
        // the density is 0 at the support bound itself, so start just inside it
        let body = simpson(|x| composite_density(&m, x.max(1e-300)), 0.0, 6.0, 20_000);
        assert_abs_diff_eq!(body, 0.85, epsilon = 1e-10);
    }

    #[test]
    fn composite_quantile_examples() {
        let m = example_model();
        assert_eq!(composite_quantile(&m, 0.85).unwrap(), 6.0);
        let unit =
            CompositeModel::new(example_body(), GeneralizedParetoTail::new(6.0, 3.0, 1.0).unwrap(), 0.85, 0.0).unwrap();
        let level = 1.0 - 0.15 / 2.0;
        assert_abs_diff_eq!(composite_quantile(&unit, level).unwrap(), 9.0, epsilon = 1e-12);
        for l in [0.5, 0.9, 0.99, 0.999] {
            let q = composite_quantile(&m, l).unwrap();
            assert_abs_diff_eq!(composite_survival(&m, q), 1.0 - l, epsilon = 1e-9);
        }
        assert!(composite_quantile(&m, 0.0).is_err());
        assert!(composite_quantile(&m, 1.0).is_err());
    }

    #[test]
    fn gp_exponential_limit() {
        let a = GeneralizedParetoTail::new(1.0, 2.0, 0.0).unwrap();
        let b = GeneralizedParetoTail::new(1.0, 2.0, 1e-9).unwrap();
        assert_abs_diff_eq!(a.survival(3.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.survival(3.0), b.survival(3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(a.quantile(1.0 - (-1.0f64).exp()), 3.0, epsilon = 1e-12);
        let bounded = GeneralizedParetoTail::new(1.0, 2.0, -0.5).unwrap();
        assert_eq!(bounded.endpoint(), 5.0);
        assert_eq!(bounded.survival(6.0), 0.0);
        assert_eq!(bounded.density(6.0), 0.0);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = CompositeModel::new(
            MixedErlang::new(vec![1, 2, 7], vec![0.1, 0.2, 0.7], 0.123456789012345).unwrap(),
            GeneralizedParetoTail::new(9.87654321, 1.0 / 3.0, 0.1 + 0.2).unwrap(),
            2.0 / 3.0,
            0.0,
        )
        .unwrap();
        let text = m.to_json();
        assert!(text.contains("\"schema_version\": 1"));
        let back = CompositeModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert!(CompositeModel::from_json(&text.replace("\"schema_version\": 1", "\"schema_version\": 9")).is_err());
    }

    fn erlang_sample(rng: &mut ChaCha8Rng, r: u32, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|_| (0..r).map(|_| -(1.0 - rng.random::<f64>()).ln() / rate).sum()).collect()
    }

    #[test]
    fn em_recovers_single_erlang() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = erlang_sample(&mut rng, 3, 2.0, 2000);
        let sample = CensoredSample::uncensored(x).unwrap();
        let fit = me_em_fit(&sample, &EmOptions::default()).unwrap();
        assert!(fit.worst_ascent <= 1e-12, "ascent violated: {}", fit.worst_ascent);
        let truth = MixedErlang::new(vec![3], vec![1.0], 2.0).unwrap();
        let ks = (1..400)
            .map(|i| {
                let x = i as f64 * 0.02;
                (me_cdf(&fit.model, x) - me_cdf(&truth, x)).abs()
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "Kolmogorov distance {ks}");
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn em_handles_censoring_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = erlang_sample(&mut rng, 2, 1.0, 3000);
        let x: Vec<f64> = x.into_iter().filter(|v| *v <= 5.0).take(1500).collect();
        let flags: Vec<bool> = (0..x.len()).map(|i| i % 7 == 0).collect();
        let sample = CensoredSample::new(x, flags).unwrap();
        let options = EmOptions { init_m: 5, upper: Some(5.0), ..EmOptions::default() };
        let fit = me_em_fit(&sample, &options).unwrap();
        assert!(fit.worst_ascent <= 1e-12, "ascent violated: {}", fit.worst_ascent);
        let direct = me_loglik(&fit.model, &sample, 0.0, Some(5.0));
        assert_abs_diff_eq!(direct, fit.loglik, epsilon = 1e-6 * direct.abs());
    }

    #[test]
    fn splice_needs_exceedances() {
        let v: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let s = CensoredSample::uncensored(v).unwrap();
        assert!(splice_fit(&s, 5, &SpliceOptions::default()).is_err());
    }

    #[test]
    fn splice_recovers_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let t = 3.0f64;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.8 {
                    // exponential(1) restricted to (0, 3]
                    let v: f64 = rng.random();
                    -(1.0 - v * (1.0 - (-t).exp())).ln()
                } else {
                    let v: f64 = rng.random();
                    t + 2.0 / 0.5 * ((1.0 - v).powf(-0.5) - 1.0)
                }
            })
            .collect();
        let sample = CensoredSample::uncensored(x).unwrap();
        let k = sample.values().iter().filter(|v| **v > t).count();
        let fit = splice_fit(&sample, k, &SpliceOptions::default()).unwrap();
        let se = 1.5 / (k as f64).sqrt();
        assert!((fit.model.tail.xi - 0.5).abs() < 3.0 * se, "xi = {}", fit.model.tail.xi);
        assert!((fit.model.pi - 0.8).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn composite_quantile_increasing(a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let m = example_model();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(composite_quantile(&m, lo).unwrap() < composite_quantile(&m, hi).unwrap());
        }

        #[test]
        fn composite_survival_nonincreasing(x in 0.0f64..50.0, dx in 0.0f64..5.0) {
            let m = example_model();
            prop_assert!(composite_survival(&m, x + dx) <= composite_survival(&m, x) + 1e-15);
        }
    }
}
