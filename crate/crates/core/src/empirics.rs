//! Order statistics and the classical uncensored tail estimators.
//!
//! Everything here works on a [`CensoredSample`], the sorted claim vector that
//! all other modules consume. Indexing follows the usual order-statistic
//! notation: `X_(1) <= ... <= X_(n)`, the threshold for `k` excesses is
//! `X_(n-k)` and the relative excesses are `R_{j,k} = X_(n-j+1) / X_(n-k)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Claim amounts sorted ascending, each with a right-censoring flag
/// (`true` = censored, the observed value is a lower bound).
///
/// Ties between a censored and an uncensored observation at the same value
/// are ordered uncensored first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredSample {
    values: Vec<f64>,
    censored: Vec<bool>,
}

impl CensoredSample {
    pub fn new(values: Vec<f64>, censored: Vec<bool>) -> Result<Self> {
        if values.len() != censored.len() {
            return Err(Error::invalid(format!("{} values but {} censoring flags", values.len(), censored.len())));
        }
        if values.is_empty() {
            return Err(Error::invalid("sample is empty"));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("observation {i} = {v} is not a strictly positive finite value")));
        }
        let mut pairs: Vec<(f64, bool)> = values.into_iter().zip(censored).collect();
        // stable: equal (value, flag) pairs keep their input order
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (values, censored) = pairs.into_iter().unzip();
        Ok(Self { values, censored })
    }

    /// A fully observed sample.
    pub fn uncensored(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sorted values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Censoring flags aligned with [`values`](Self::values).
    pub fn censored(&self) -> &[bool] {
        &self.censored
    }

    pub fn censored_count(&self) -> usize {
        self.censored.iter().filter(|c| **c).count()
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    /// The order statistic `X_(i)`, 1-based.
    pub fn order_stat(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// The threshold `X_(n-k)` for `k` top excesses.
    pub fn threshold(&self, k: usize) -> Result<f64> {
        self.check_k(k)?;
        Ok(self.values[self.len() - k - 1])
    }

    /// Number of uncensored observations among the top `k`.
    pub fn uncensored_in_top(&self, k: usize) -> usize {
        self.censored[self.len() - k..].iter().filter(|c| !**c).count()
    }

    /// Returns the same sample with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect(), self.censored.clone())
    }

    pub(crate) fn check_k(&self, k: usize) -> Result<()> {
        let n = self.len();
        if k == 0 || k >= n {
            return Err(Error::domain(format!("k = {k} outside 1..={}", n.saturating_sub(1))));
        }
        Ok(())
    }

    /// Log spacings `ln X_(n-j+1) - ln X_(n-j)` for `j = 1..=n-1`.
    pub(crate) fn log_spacings(&self) -> Vec<f64> {
        let n = self.len();
        (1..n).map(|j| self.values[n - j].ln() - self.values[n - j - 1].ln()).collect()
    }
}

/// Estimator values along a range of threshold ranks `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPath {
    pub k: Vec<usize>,
    pub estimate: Vec<f64>,
    /// Extra named columns aligned with `k` (p-values, scores, ...).
    pub columns: Vec<(String, Vec<f64>)>,
}

impl TailPath {
    pub fn new(k: Vec<usize>, estimate: Vec<f64>) -> Self {
        debug_assert_eq!(k.len(), estimate.len());
        Self { k, estimate, columns: Vec::new() }
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.k.len());
        self.columns.push((name.into(), values));
        self
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Estimate at a given `k`, if present.
    pub fn at(&self, k: usize) -> Option<f64> {
        self.k.iter().position(|&kk| kk == k).map(|i| self.estimate[i])
    }
}

/// Relative excesses `R_{j,k}` over the threshold `X_(n-k)`; `r[0] = R_{1,k}`
/// is the largest ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeExcesses {
    pub r: Vec<f64>,
    pub k: usize,
    pub threshold: f64,
}

impl RelativeExcesses {
    /// Builds excesses directly from ratios, largest first.
    pub fn from_ratios(r: Vec<f64>, threshold: f64) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::invalid("no excesses"));
        }
        if r.iter().any(|x| !(x.is_finite() && *x >= 1.0)) {
            return Err(Error::invalid("relative excesses must be finite and >= 1"));
        }
        if r.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("relative excesses must be sorted largest first"));
        }
        Ok(Self { k: r.len(), r, threshold })
    }

    /// `R_{1,k}`.
    pub fn max_ratio(&self) -> f64 {
        self.r[0]
    }

    pub fn log_ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.r.iter().map(|x| x.ln())
    }

    /// Hill statistic `H_{k,n}`: the mean log relative excess.
    pub fn hill(&self) -> f64 {
        self.log_ratios().sum::<f64>() / self.k as f64
    }
}

/// The `k` relative excesses above `X_(n-k)`.
pub fn relative_excesses(sample: &CensoredSample, k: usize) -> Result<RelativeExcesses> {
    let threshold = sample.threshold(k)?;
    if threshold <= 0.0 {
        return Err(Error::domain("threshold value is zero"));
    }
    let n = sample.len();
    let r = (1..=k).map(|j| sample.values[n - j] / threshold).collect();
    Ok(RelativeExcesses { r, k, threshold })
}

/// Hill estimator `H_{k,n}`, ignoring censoring flags.
///
/// Evaluated through weighted log spacings `(1/k) sum_j j (ln X_(n-j+1) - ln X_(n-j))`,
/// which is algebraically the mean log excess, keeps the result nonnegative,
/// and matches [`hill_path`] bit for bit.
pub fn hill(sample: &CensoredSample, k: usize) -> Result<f64> {
    sample.check_k(k)?;
    let spacings = sample.log_spacings();
    let mut acc = 0.0;
    for (j, s) in spacings[..k].iter().enumerate() {
        acc += (j + 1) as f64 * s;
    }
    Ok(acc / k as f64)
}

/// Hill estimates for every `k = 1..n-1`.
pub fn hill_path(sample: &CensoredSample) -> TailPath {
    let spacings = sample.log_spacings();
    let mut acc = 0.0;
    let mut ks = Vec::with_capacity(spacings.len());
    let mut est = Vec::with_capacity(spacings.len());
    for (j, s) in spacings.iter().enumerate() {
        let k = j + 1;
        acc += k as f64 * s;
        ks.push(k);
        est.push(acc / k as f64);
    }
    TailPath::new(ks, est)
}

/// First and second log-moments of the top `k` excesses.
fn log_moments(sample: &CensoredSample, k: usize) -> Result<(f64, f64)> {
    let ex = relative_excesses(sample, k)?;
    let (mut m1, mut m2) = (0.0, 0.0);
    for l in ex.log_ratios() {
        m1 += l;
        m2 += l * l;
    }
    Ok((m1 / k as f64, m2 / k as f64))
}

/// Moment estimator `M1 + 1 - 1/2 (1 - M1^2/M2)^{-1}`, valid in every
/// max-domain of attraction.
pub fn moment_estimator(sample: &CensoredSample, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::domain(format!("moment estimator needs k >= 2, got {k}")));
    }
    let (m1, m2) = log_moments(sample, k)?;
    if m2 <= 0.0 {
        return Err(Error::degenerate(format!("top {k} excesses are all tied")));
    }
    let denom = 1.0 - m1 * m1 / m2;
    if denom <= 0.0 {
        return Err(Error::degenerate("log-excesses have zero variance"));
    }
    Ok(m1 + 1.0 - 0.5 / denom)
}

/// Moment estimator for `k = 2..n-1`; degenerate `k` are reported as NaN.
pub fn moment_path(sample: &CensoredSample) -> TailPath {
    let n = sample.len();
    let ks: Vec<usize> = (2..n).collect();
    let est = ks.iter().map(|&k| moment_estimator(sample, k).unwrap_or(f64::NAN)).collect();
    TailPath::new(ks, est)
}

/// Empirical mean excess `e_n(x)`: the mean of `X - x` over `X > x`.
pub fn mean_excess_empirical(sample: &CensoredSample, x: f64) -> Result<f64> {
    let (sum, count) = sample.values.iter().filter(|v| **v > x).fold((0.0, 0usize), |(s, c), v| (s + (v - x), c + 1));
    if count == 0 {
        return Err(Error::domain(format!("no observation exceeds {x}")));
    }
    Ok(sum / count as f64)
}

/// Pareto QQ plot points `(-ln(j/(n+1)), ln X_(n-j+1))`, `j = 1..n`.
pub fn pareto_qq(sample: &CensoredSample) -> Vec<(f64, f64)> {
    let n = sample.len();
    (1..=n)
        .map(|j| {
            let x = -(j as f64 / (n + 1) as f64).ln();
            (x, sample.values[n - j].ln())
        })
        .collect()
}

/// Least-squares slope through the given points.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
