//! Covariate-local tail analysis of censored claims: kernel-weighted
//! conditional Kaplan–Meier, a local Worms estimator of the extreme value
//! index, local QQ plot data and local extreme quantiles.

use serde::{Deserialize, Serialize};

use crate::censoring::SurvivalCurve;
use crate::{Error, Result};

/// Claim sizes `z` with censoring flags and a scalar covariate, sorted by `z`
/// with uncensored values first among ties.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSample {
    z: Vec<f64>,
    censored: Vec<bool>,
    x: Vec<f64>,
}

impl CovariateSample {
    pub fn new(z: Vec<f64>, censored: Vec<bool>, x: Vec<f64>) -> Result<Self> {
        let n = z.len();
        if n == 0 {
            return Err(Error::invalid("empty sample"));
        }
        if censored.len() != n || x.len() != n {
            return Err(Error::invalid("columns differ in length"));
        }
        if let Some(i) = z.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("observation {} = {} is not positive", i + 1, z[i])));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("covariate {} is not finite", i + 1)));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(censored[a].cmp(&censored[b])));
        Ok(CovariateSample {
            z: idx.iter().map(|&i| z[i]).collect(),
            censored: idx.iter().map(|&i| censored[i]).collect(),
            x: idx.iter().map(|&i| x[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn censored(&self) -> &[bool] {
        &self.censored
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }
}

/// Symmetric kernel densities supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Kernel {
    /// `(15/16)(1 - u^2)^2`.
    #[default]
    Biquadratic,
    /// `(3/4)(1 - u^2)`.
    Epanechnikov,
    /// `1 - |u|`.
    Triangular,
    /// `1/2`.
    Uniform,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        if u.abs() > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Biquadratic => 15.0 / 16.0 * (1.0 - u * u).powi(2),
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Triangular => 1.0 - u.abs(),
            Kernel::Uniform => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kernel: Kernel,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        Ok(KernelSpec { kernel, bandwidth })
    }

    pub fn biquadratic(bandwidth: f64) -> Result<Self> {
        KernelSpec::new(Kernel::Biquadratic, bandwidth)
    }
}

/// How the kernel weights enter the conditional product-limit estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Nadaraya–Watson weights normalized over all observations; censored
    /// observations keep their weight in the risk set (Beran's estimator).
    #[default]
    Beran,
    /// Weights normalized over the uncensored observations only and zero for
    /// censored ones.
    UncensoredOnly,
}

/// Kernel weights `W_i(x0; h)` in sample order.
pub fn kernel_weights(sample: &CovariateSample, x0: f64, ks: &KernelSpec, scheme: WeightScheme) -> Result<Vec<f64>> {
    let raw: Vec<f64> = sample.x.iter().map(|xi| ks.kernel.eval((x0 - xi) / ks.bandwidth)).collect();
    let uncensored_mass: f64 = raw.iter().zip(&sample.censored).filter(|(_, c)| !**c).map(|(k, _)| k).sum();
    if !(uncensored_mass > 0.0) {
        return Err(Error::Bandwidth { x0, h: ks.bandwidth });
    }
    Ok(match scheme {
        WeightScheme::Beran => {
            let total: f64 = raw.iter().sum();
            raw.iter().map(|k| k / total).collect()
        }
        WeightScheme::UncensoredOnly => {
            raw.iter().zip(&sample.censored).map(|(k, c)| if *c { 0.0 } else { k / uncensored_mass }).collect()
        }
    })
}

/// Conditional product-limit values `s[i]`, `i = 0..=n`, after the `i`
/// smallest observations: `s[i] = prod_{l<=i} (1 - W_l/R_l)^{delta_l}` with
/// `R_l` the weight still at risk. Once the risk set is exhausted the
/// survival stays at zero.
fn conditional_by_index(sample: &CovariateSample, w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut at_risk = vec![0.0; n + 1];
    for i in (0..n).rev() {
        at_risk[i] = at_risk[i + 1] + w[i];
    }
    let mut s = Vec::with_capacity(n + 1);
    s.push(1.0);
    let mut cur: f64 = 1.0;
    for i in 0..n {
        if !sample.censored[i] && w[i] > 0.0 {
            let r = at_risk[i];
            cur = if w[i] >= r { 0.0 } else { cur * (1.0 - w[i] / r) };
        }
        s.push(cur);
    }
    s
}

fn curve_from_index(z: &[f64], s: &[f64]) -> SurvivalCurve {
    let n = z.len();
    let mut support = Vec::new();
    let mut survival = Vec::new();
    for i in 0..n {
        if i + 1 == n || z[i + 1] != z[i] {
            support.push(z[i]);
            survival.push(s[i + 1]);
        }
    }
    let defective = survival.last().is_some_and(|v| *v > 0.0);
    SurvivalCurve { support, survival, defective }
}

/// Kernel-weighted conditional Kaplan–Meier estimate of `1 - F(y | x0)`.
pub fn conditional_km(
    sample: &CovariateSample,
    x0: f64,
    ks: &KernelSpec,
    scheme: WeightScheme,
) -> Result<SurvivalCurve> {
    let w = kernel_weights(sample, x0, ks, scheme)?;
    Ok(curve_from_index(&sample.z, &conditional_by_index(sample, &w)))
}

/// Local Worms estimator
/// `sum_{j=1}^k S(Z_(n-j)|x0) ln(Z_(n-j+1)/Z_(n-j)) / S(Z_(n-k)|x0)`.
pub fn local_worms_xi(
    sample: &CovariateSample,
    x0: f64,
    ks: &KernelSpec,
    k: usize,
    scheme: WeightScheme,
) -> Result<f64> {
    let n = sample.len();
    if k == 0 || k >= n {
        return Err(Error::domain(format!("k = {k} outside 1..{}", n.saturating_sub(1))));
    }
    let w = kernel_weights(sample, x0, ks, scheme)?;
    let s = conditional_by_index(sample, &w);
    let denom = s[n - k];
    if !(denom > 0.0) {
        return Err(Error::domain("conditional survival at the threshold is zero"));
    }
    let z = &sample.z;
    let mut num = 0.0;
    for j in 1..=k {
        num += s[n - j] * (z[n - j].ln() - z[n - j - 1].ln());
    }
    Ok(num / denom)
}

/// Local censored Pareto QQ plot around `x0`.
///
/// Only observations inside the kernel window are plotted. The abscissa of
/// `Z` is `-ln{S(Z- | x0) m/(m + 1)}` with `m = (sum K)^2 / sum K^2` the
/// effective window size; with uniform weights over the whole sample this is
/// the unconditional censored QQ plot.
pub fn local_censored_qq(
    sample: &CovariateSample,
    x0: f64,
    ks: &KernelSpec,
    scheme: WeightScheme,
) -> Result<Vec<(f64, f64)>> {
    let w = kernel_weights(sample, x0, ks, scheme)?;
    let curve = curve_from_index(&sample.z, &conditional_by_index(sample, &w));
    let raw: Vec<f64> = sample.x.iter().map(|xi| ks.kernel.eval((x0 - xi) / ks.bandwidth)).collect();
    let s1: f64 = raw.iter().sum();
    let s2: f64 = raw.iter().map(|k| k * k).sum();
    let m = s1 * s1 / s2;
    let factor = m / (m + 1.0);
    Ok((0..sample.len())
        .rev()
        .filter(|&i| raw[i] > 0.0)
        .map(|i| {
            let z = sample.z[i];
            (-(curve.survival_before(z) * factor).ln(), z.ln())
        })
        .collect())
}

/// Local extreme quantile `Z_(n-k) {S(Z_(n-k)|x0)/p}^{xi(x0)}` with the local
/// Worms estimate as `xi(x0)`.
pub fn local_quantile(
    sample: &CovariateSample,
    x0: f64,
    ks: &KernelSpec,
    k: usize,
    p: f64,
    scheme: WeightScheme,
) -> Result<f64> {
    let xi = local_worms_xi(sample, x0, ks, k, scheme)?;
    let n = sample.len();
    let w = kernel_weights(sample, x0, ks, scheme)?;
    let s = conditional_by_index(sample, &w);
    let surv = s[n - k];
    if !(p > 0.0 && p <= surv) {
        return Err(Error::domain(format!("p = {p} outside (0, {surv}]")));
    }
    Ok(sample.z[n - k - 1] * (surv / p).powf(xi))
}
