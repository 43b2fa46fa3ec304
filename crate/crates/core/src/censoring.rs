//! Kaplan–Meier estimation and tail estimators adapted for right censoring.
//!
//! A censored observation `Z = min(X, C)` with flag `censored = true` only
//! tells that the loss exceeds `Z`. The estimators here divide the classical
//! ones by the fraction of uncensored values among the top `k`, or integrate
//! the Kaplan–Meier survival function directly (Worms).

use serde::{Deserialize, Serialize};

use crate::empirics::{hill, hill_path, moment_estimator, CensoredSample, TailPath};
use crate::{Error, Result};

/// Right-continuous step function `1 - F_n` on the distinct observed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub support: Vec<f64>,
    pub survival: Vec<f64>,
    /// True when the curve never reaches zero (largest observation censored).
    pub defective: bool,
}

impl SurvivalCurve {
    /// `S(x)`: 1 before the first support point, right-continuous steps after.
    pub fn survival_at(&self, x: f64) -> f64 {
        match self.support.partition_point(|s| *s <= x) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// Left limit `S(x-)`.
    pub fn survival_before(&self, x: f64) -> f64 {
        match self.support.partition_point(|s| *s < x) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        1.0 - self.survival_at(x)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Per-observation product-limit values `s[i] = prod_{l<=i} (1 - delta_l/(n-l+1))`,
/// `i = 0..=n`, with `s[0] = 1`.
///
/// Evaluated as `C_i (n-i)/n` with `C_i` the product of the censoring
/// corrections `(n-l+1)/(n-l)`, so that without censoring the values are
/// exactly the empirical `(n-i)/n`.
pub(crate) fn product_limit_by_index(censored: &[bool]) -> Vec<f64> {
    let n = censored.len();
    let nf = n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    let mut correction = 1.0;
    for (idx, &c) in censored.iter().enumerate() {
        let l = idx + 1;
        if c {
            if l == n {
                let last = out[idx];
                out.push(last);
                continue;
            }
            correction *= (n - l + 1) as f64 / (n - l) as f64;
        }
        out.push(correction * ((n - l) as f64 / nf));
    }
    out
}

/// Kaplan–Meier product-limit estimate of the survival function.
pub fn kaplan_meier(sample: &CensoredSample) -> SurvivalCurve {
    let s = product_limit_by_index(sample.censored());
    let values = sample.values();
    let n = values.len();
    let mut support = Vec::new();
    let mut survival = Vec::new();
    for i in 0..n {
        if i + 1 == n || values[i + 1] != values[i] {
            support.push(values[i]);
            survival.push(s[i + 1]);
        }
    }
    let defective = survival.last().is_some_and(|v| *v > 0.0);
    SurvivalCurve { support, survival, defective }
}

/// Empirical survival function of the values, ignoring censoring flags.
pub fn empirical_survival(sample: &CensoredSample) -> SurvivalCurve {
    let values = sample.values();
    let n = values.len();
    let mut support = Vec::new();
    let mut survival = Vec::new();
    for i in 0..n {
        if i + 1 == n || values[i + 1] != values[i] {
            support.push(values[i]);
            survival.push((n - i - 1) as f64 / n as f64);
        }
    }
    SurvivalCurve { support, survival, defective: false }
}

/// Probability mass the Kaplan–Meier estimator puts on each sorted
/// observation, by redistributing every censored mass equally to the
/// observations on its right. A censored largest observation keeps its own
/// mass. Without censoring every mass is exactly `1/n`.
pub fn km_masses(censored: &[bool]) -> Vec<f64> {
    let n = censored.len();
    let base = 1.0 / n as f64;
    let mut carry = 0.0;
    let mut out = Vec::with_capacity(n);
    for (idx, &c) in censored.iter().enumerate() {
        let mass = base + carry;
        let right = n - idx - 1;
        if c && right > 0 {
            carry += mass / right as f64;
            out.push(0.0);
        } else {
            out.push(mass);
        }
    }
    out
}

fn proportion_uncensored(sample: &CensoredSample, k: usize) -> Result<f64> {
    let u = sample.uncensored_in_top(k);
    if u == 0 {
        return Err(Error::AllCensored { k });
    }
    Ok(u as f64 / k as f64)
}

/// Censored Hill estimator: the Hill estimator of the observed values divided
/// by the fraction of uncensored values among the top `k`.
pub fn censored_hill(sample: &CensoredSample, k: usize) -> Result<f64> {
    let h = hill(sample, k)?;
    Ok(h / proportion_uncensored(sample, k)?)
}

/// Censored moment estimator: the moment estimator divided by the top-`k`
/// uncensored fraction.
pub fn censored_moment(sample: &CensoredSample, k: usize) -> Result<f64> {
    let m = moment_estimator(sample, k)?;
    Ok(m / proportion_uncensored(sample, k)?)
}

/// Worms estimator
/// `sum_{j=1}^{k} S(Z_(n-j)) / S(Z_(n-k)) (ln Z_(n-j+1) - ln Z_(n-j))`,
/// the Kaplan–Meier integral of `S(ut)/S(t)` against `d ln u` above
/// `t = Z_(n-k)`. Without censoring this is the Hill estimator.
pub fn worms_xi(sample: &CensoredSample, k: usize) -> Result<f64> {
    sample.check_k(k)?;
    let s = product_limit_by_index(sample.censored());
    let n = sample.len();
    let denom = s[n - k];
    if !(denom > 0.0) {
        return Err(Error::domain("Kaplan–Meier survival at the threshold is zero"));
    }
    let sp = sample.log_spacings();
    let mut num = 0.0;
    for j in 1..=k {
        num += s[n - j] * sp[j - 1];
    }
    Ok(num / denom)
}

/// Censored Hill estimates for every `k` with an uncensored top value.
pub fn censored_hill_path(sample: &CensoredSample) -> TailPath {
    let hp = hill_path(sample);
    let n = sample.len();
    let cens = sample.censored();
    let mut uncensored = 0usize;
    let mut ks = Vec::new();
    let mut est = Vec::new();
    for (k, h) in hp.k.iter().zip(&hp.estimate) {
        if !cens[n - k] {
            uncensored += 1;
        }
        if uncensored > 0 {
            ks.push(*k);
            est.push(h / (uncensored as f64 / *k as f64));
        }
    }
    TailPath::new(ks, est)
}

/// Worms estimates for `k = 1..n-1`.
pub fn worms_path(sample: &CensoredSample) -> TailPath {
    let s = product_limit_by_index(sample.censored());
    let n = sample.len();
    let sp = sample.log_spacings();
    let mut num = 0.0;
    let mut ks = Vec::new();
    let mut est = Vec::new();
    for k in 1..n {
        num += s[n - k] * sp[k - 1];
        let denom = s[n - k];
        if denom > 0.0 {
            ks.push(k);
            est.push(num / denom);
        }
    }
    TailPath::new(ks, est)
}

/// Censored moment estimates for `k = 2..n-1`; undefined ranks are NaN.
pub fn censored_moment_path(sample: &CensoredSample) -> TailPath {
    let n = sample.len();
    let ks: Vec<usize> = (2..n).collect();
    let est = ks.iter().map(|&k| censored_moment(sample, k).unwrap_or(f64::NAN)).collect();
    TailPath::new(ks, est)
}

/// Weissman-type extreme quantile under censoring:
/// `Z_(n-k) {S(Z_(n-k)) / p}^xi` with `S` the Kaplan–Meier survival.
pub fn censored_quantile(sample: &CensoredSample, k: usize, xi: f64, p: f64) -> Result<f64> {
    let threshold = sample.threshold(k)?;
    let surv = kaplan_meier(sample).survival_at(threshold);
    if !(p > 0.0 && p <= surv) {
        return Err(Error::domain(format!("p = {p} outside (0, {surv}]")));
    }
    Ok(threshold * (surv / p).powf(xi))
}

/// Pareto QQ plot adapted for censoring: points
/// `(-ln{S(Z_(n-j+1)-) n/(n+1)}, ln Z_(n-j+1))`.
///
/// The left limit keeps the largest point finite; the `n/(n+1)` factor makes
/// the uncensored case coincide with the `j/(n+1)` plotting positions of
/// [`pareto_qq`](crate::empirics::pareto_qq).
pub fn censored_pareto_qq(sample: &CensoredSample) -> Result<Vec<(f64, f64)>> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::domain("censored QQ plot needs n >= 2"));
    }
    let curve = kaplan_meier(sample);
    let factor = n as f64 / (n + 1) as f64;
    let v = sample.values();
    Ok((1..=n)
        .map(|j| {
            let z = v[n - j];
            (-(curve.survival_before(z) * factor).ln(), z.ln())
        })
        .collect())
}

/// Mean excess function with the Kaplan–Meier survival in place of the true one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanExcessCurve {
    pub points: Vec<(f64, f64)>,
    /// Set when the largest observation is censored; the survival integral is
    /// then truncated at that observation.
    pub defective: bool,
}

/// `e(x) = int_x^inf S(u) du / S(x)` at every uncensored support point with
/// `S(x) > 0`, integrating the Kaplan–Meier step function exactly.
pub fn mean_excess_km(sample: &CensoredSample) -> MeanExcessCurve {
    let curve = kaplan_meier(sample);
    let m = curve.len();
    // integral from support[q] to the last support point
    let mut tail = vec![0.0; m];
    for q in (0..m.saturating_sub(1)).rev() {
        tail[q] = tail[q + 1] + curve.survival[q] * (curve.support[q + 1] - curve.support[q]);
    }
    let mut has_death = vec![false; m];
    let values = sample.values();
    let cens = sample.censored();
    let mut q = 0;
    for (v, c) in values.iter().zip(cens) {
        while curve.support[q] < *v {
            q += 1;
        }
        if !c {
            has_death[q] = true;
        }
    }
    let points = (0..m)
        .filter(|&q| has_death[q] && curve.survival[q] > 0.0)
        .map(|q| (curve.support[q], tail[q] / curve.survival[q]))
        .collect();
    MeanExcessCurve { points, defective: curve.defective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirics::{mean_excess_empirical, pareto_qq};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cs(v: &[f64], c: &[bool]) -> CensoredSample {
        CensoredSample::new(v.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn km_examples() {
        let km = kaplan_meier(&cs(&[1.0, 2.0, 3.0], &[false; 3]));
        assert_eq!(km.survival, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);

        let km = kaplan_meier(&cs(&[1.0, 2.0, 3.0], &[false, true, false]));
        assert_abs_diff_eq!(km.survival_at(1.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(km.survival_at(2.5), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(km.survival_at(3.0), 0.0);
        assert_eq!(km.survival_at(0.5), 1.0);
        assert!(!km.defective);

        let km = kaplan_meier(&cs(&[1.0], &[true]));
        assert_eq!(km.survival, vec![1.0]);
        assert!(km.defective);
    }

    #[test]
    fn km_with_ties() {
        // value 2 has one death and one censoring, censoring at risk after the death
        let km = kaplan_meier(&cs(&[1.0, 2.0, 2.0, 3.0, 4.0], &[false, true, false, false, true]));
        assert_eq!(km.support, vec![1.0, 2.0, 3.0, 4.0]);
        let s1 = 4.0 / 5.0;
        let s2 = s1 * 3.0 / 4.0;
        let s3 = s2 * 1.0 / 2.0;
        assert_abs_diff_eq!(km.survival[0], s1, epsilon = 1e-15);
        assert_abs_diff_eq!(km.survival[1], s2, epsilon = 1e-15);
        assert_abs_diff_eq!(km.survival[2], s3, epsilon = 1e-15);
        assert_abs_diff_eq!(km.survival[3], s3, epsilon = 1e-15);
    }

    #[test]
    fn km_masses_match_jumps() {
        let flags = [false, true, false, false, true, false];
        let s = product_limit_by_index(&flags);
        let m = km_masses(&flags);
        for i in 0..flags.len() {
            if !flags[i] {
                assert_abs_diff_eq!(m[i], s[i] - s[i + 1], epsilon = 1e-15);
            } else {
                assert_eq!(m[i], 0.0);
            }
        }
        assert_abs_diff_eq!(m.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(km_masses(&[false; 7]).iter().all(|x| *x == 1.0 / 7.0));
        let last_censored = km_masses(&[false, true]);
        assert_eq!(last_censored, vec![0.5, 0.5]);
    }

    #[test]
    fn censored_hill_examples() {
        let v = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0];
        let all = cs(&v, &[false; 7]);
        assert_eq!(censored_hill(&all, 4).unwrap(), hill(&all, 4).unwrap());
        let half = cs(&v, &[false, false, false, false, true, false, true]);
        let h = hill(&half, 4).unwrap();
        assert_eq!(censored_hill(&half, 4).unwrap(), h / 0.5);
        let top = cs(&v, &[false, false, false, false, false, true, true]);
        assert_eq!(censored_hill(&top, 2), Err(Error::AllCensored { k: 2 }));
    }

    #[test]
    fn censored_moment_examples() {
        let v = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0];
        let all = cs(&v, &[false; 7]);
        assert_eq!(censored_moment(&all, 4).unwrap(), moment_estimator(&all, 4).unwrap());
        let half = cs(&v, &[false, false, false, false, true, false, true]);
        assert_eq!(censored_moment(&half, 4).unwrap(), moment_estimator(&half, 4).unwrap() / 0.5);
    }

    #[test]
    fn worms_without_censoring_is_hill() {
        let s = cs(&[1.0, 2.0, 4.0, 8.0], &[false; 4]);
        // weights S(Z_(n-j))/S(Z_(n-k)) = j/k: (1 ln2 + 2 ln2 + 3 ln2)/3
        assert_abs_diff_eq!(worms_xi(&s, 3).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-15);
        let s = cs(&[1.0, 3.0, 3.0, 3.0], &[false, false, true, false]);
        assert_eq!(worms_xi(&s, 2).unwrap(), 0.0);
    }

    #[test]
    fn worms_path_matches_pointwise() {
        let s = cs(&[1.0, 1.5, 2.0, 2.5, 4.0, 6.0, 9.0, 15.0], &[false, true, false, false, true, false, true, false]);
        let p = worms_path(&s);
        for (k, e) in p.k.iter().zip(&p.estimate) {
            assert_eq!(e.to_bits(), worms_xi(&s, *k).unwrap().to_bits());
        }
        let cp = censored_hill_path(&s);
        for (k, e) in cp.k.iter().zip(&cp.estimate) {
            assert_eq!(e.to_bits(), censored_hill(&s, *k).unwrap().to_bits());
        }
    }

    #[test]
    fn censored_quantile_examples() {
        let v: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let s = CensoredSample::uncensored(v).unwrap();
        // survival at threshold X_(10) is 10/20
        assert_abs_diff_eq!(censored_quantile(&s, 10, 0.7, 0.5).unwrap(), 10.0, epsilon = 1e-12);
        let q = censored_quantile(&s, 10, 1.0, 0.05).unwrap();
        assert_abs_diff_eq!(q, 100.0, epsilon = 1e-12);
        let weissman = 10.0 * (10.0 / (20.0 * 0.01f64)).powf(0.4);
        assert_abs_diff_eq!(censored_quantile(&s, 10, 0.4, 0.01).unwrap(), weissman, epsilon = 1e-10);
        assert!(censored_quantile(&s, 10, 1.0, 0.6).is_err());
    }

    #[test]
    fn censored_qq_examples() {
        let s = cs(&[1.0, 4.0, 2.0, 9.0], &[false; 4]);
        let a = censored_pareto_qq(&s).unwrap();
        let b = pareto_qq(&s);
        for (p, q) in a.iter().zip(&b) {
            assert_abs_diff_eq!(p.0, q.0, epsilon = 1e-14);
            assert_eq!(p.1, q.1);
        }
        let c = cs(&[1.0, 2.0, 3.0], &[false, true, false]);
        let pts = censored_pareto_qq(&c).unwrap();
        assert_abs_diff_eq!(pts[0].0, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(pts[1].0, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(pts[2].0, -(0.75f64).ln(), epsilon = 1e-15);
        assert!(censored_pareto_qq(&cs(&[1.0], &[false])).is_err());
    }

    #[test]
    fn mean_excess_km_examples() {
        let me = mean_excess_km(&cs(&[1.0, 3.0], &[false, false]));
        assert_eq!(me.points, vec![(1.0, 2.0)]);

        let me = mean_excess_km(&cs(&[1.0, 2.0, 3.0], &[false, true, false]));
        assert_eq!(me.points.len(), 1);
        assert_abs_diff_eq!(me.points[0].1, 2.0, epsilon = 1e-15);

        let me = mean_excess_km(&cs(&[1.0, 2.0, 5.0], &[false, false, true]));
        assert!(me.defective);
        // S = 2/3, 1/3, 1/3; integral from 1 to 5: 2/3 + 3 * 1/3
        assert_abs_diff_eq!(me.points[0].1, (2.0 / 3.0 + 1.0) / (2.0 / 3.0), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn km_is_empirical_without_censoring(v in proptest::collection::vec(1u32..40, 1..80)) {
            let s = CensoredSample::uncensored(v.iter().map(|x| *x as f64).collect()).unwrap();
            let km = kaplan_meier(&s);
            let emp = empirical_survival(&s);
            prop_assert_eq!(&km.support, &emp.support);
            for (a, b) in km.survival.iter().zip(&emp.survival) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn km_monotone(
            v in proptest::collection::vec((1u32..20, any::<bool>()), 1..60)
        ) {
            let (vals, flags): (Vec<f64>, Vec<bool>) =
                v.iter().map(|(x, c)| (*x as f64, *c)).unzip();
            let km = kaplan_meier(&CensoredSample::new(vals, flags).unwrap());
            let mut last = 1.0;
            for s in &km.survival {
                prop_assert!(*s <= last + 1e-15 && *s >= 0.0);
                last = *s;
            }
        }

        #[test]
        fn me_km_is_empirical_without_censoring(v in proptest::collection::vec(1.0f64..100.0, 2..40)) {
            let s = CensoredSample::uncensored(v).unwrap();
            for (x, e) in mean_excess_km(&s).points {
                let emp = mean_excess_empirical(&s, x).unwrap();
                prop_assert!((e - emp).abs() <= 1e-9 * (1.0 + emp));
            }
        }

        #[test]
        fn censored_estimators_scale_invariant(
            v in proptest::collection::vec((1.0f64..1e3, any::<bool>()), 20..60),
            scale in 0.01f64..100.0,
        ) {
            let (vals, flags): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
            let s = CensoredSample::new(vals, flags).unwrap();
            let t = s.scaled(scale).unwrap();
            let k = s.len() / 2;
            if let (Ok(a), Ok(b)) = (censored_hill(&s, k), censored_hill(&t, k)) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            }
            if let (Ok(a), Ok(b)) = (worms_xi(&s, k), worms_xi(&t, k)) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            }
            if let (Ok(a), Ok(b)) = (censored_quantile(&s, k, 0.5, 0.01), censored_quantile(&t, k, 0.5, 0.01)) {
                prop_assert!((a * scale - b).abs() <= 1e-9 * b);
            }
        }
    }
}
