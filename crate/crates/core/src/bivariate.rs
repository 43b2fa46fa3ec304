//! Censored bivariate tail dependence through the Pickands function, and the
//! expected reinsurer payment when allocated expenses are shared pro rata.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{kaplan_meier, km_masses};
use crate::empirics::CensoredSample;
use crate::premiums::LayerSpec;
use crate::{Error, Result};

/// Paired observations (loss, expense) with a right-censoring flag per margin.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateSample {
    x1: Vec<f64>,
    x2: Vec<f64>,
    censored1: Vec<bool>,
    censored2: Vec<bool>,
}

impl BivariateSample {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>, censored1: Vec<bool>, censored2: Vec<bool>) -> Result<Self> {
        let n = x1.len();
        if n == 0 {
            return Err(Error::invalid("empty bivariate sample"));
        }
        if x2.len() != n || censored1.len() != n || censored2.len() != n {
            return Err(Error::invalid("bivariate columns differ in length"));
        }
        for (i, (a, b)) in x1.iter().zip(&x2).enumerate() {
            if !(*a > 0.0 && a.is_finite() && *b > 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("pair {} = ({a}, {b}) is not positive and finite", i + 1)));
            }
        }
        Ok(BivariateSample { x1, x2, censored1, censored2 })
    }

    pub fn uncensored(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        let n = x1.len();
        BivariateSample::new(x1, x2, vec![false; n], vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn censored1(&self) -> &[bool] {
        &self.censored1
    }

    pub fn censored2(&self) -> &[bool] {
        &self.censored2
    }

    /// A pair is uncensored when neither margin is censored.
    pub fn pair_uncensored(&self, i: usize) -> bool {
        !self.censored1[i] && !self.censored2[i]
    }

    pub fn margin1(&self) -> Result<CensoredSample> {
        CensoredSample::new(self.x1.clone(), self.censored1.clone())
    }

    pub fn margin2(&self) -> Result<CensoredSample> {
        CensoredSample::new(self.x2.clone(), self.censored2.clone())
    }
}

/// Margins mapped to the unit exponential scale, `-ln F_j(X_j)`, in the
/// original pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPairs {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub uncensored: Vec<bool>,
}

fn transform_margin(values: &[f64], censored: &[bool]) -> Result<Vec<f64>> {
    if censored.iter().all(|c| *c) {
        return Err(Error::degenerate("a margin is censored everywhere"));
    }
    let n = values.len();
    let sample = CensoredSample::new(values.to_vec(), censored.to_vec())?;
    let km = kaplan_meier(&sample);
    let max = sample.max();
    let floor = 1.0 / (n + 1) as f64;
    Ok(values
        .iter()
        .map(|&x| {
            let s = if x == max { km.survival_before(x) } else { km.survival_at(x) };
            let f = (1.0 - s).max(floor);
            -f.ln()
        })
        .collect())
}

/// Kaplan–Meier margin transform `X~_j = -ln F^_j(X_j)`.
///
/// At the sample maximum the left limit of `F^` is used, and values below the
/// first uncensored observation, where `F^ = 0`, are floored at
/// `F^ = 1/(n + 1)`, so every transformed value is finite and positive.
pub fn margin_transform(sample: &BivariateSample) -> Result<TransformedPairs> {
    let e1 = transform_margin(&sample.x1, &sample.censored1)?;
    let e2 = transform_margin(&sample.x2, &sample.censored2)?;
    let uncensored = (0..sample.len()).map(|i| sample.pair_uncensored(i)).collect();
    Ok(TransformedPairs { e1, e2, uncensored })
}

/// `A^(t)` from already transformed pairs.
pub fn pickands_from_transformed(pairs: &TransformedPairs, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::domain(format!("t = {t} outside (0, 1)")));
    }
    let n = pairs.e1.len() as f64;
    let mean = pairs.e1.iter().zip(&pairs.e2).map(|(a, b)| (a / (1.0 - t)).min(b / t)).sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::degenerate("transformed minima have zero mean"));
    }
    let prop = pairs.uncensored.iter().filter(|u| **u).count() as f64 / n;
    Ok(prop / mean)
}

/// Censored maximum likelihood estimator of the Pickands dependence function,
/// `A^(t) = (fraction of uncensored pairs) / mean_i min(X~_1i/(1-t), X~_2i/t)`.
pub fn pickands_estimate(sample: &BivariateSample, t: f64) -> Result<f64> {
    pickands_from_transformed(&margin_transform(sample)?, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickandsCurve {
    pub grid: Vec<f64>,
    pub a_hat: Vec<f64>,
    /// Whether the value was clamped into `[max(t, 1-t), 1]`.
    pub projected: Vec<bool>,
}

/// `A^` on the grid `i/(grid_size + 1)`, `i = 1..grid_size`. With `project`
/// set, values outside the Pickands bounds are clamped and marked.
pub fn pickands_curve(sample: &BivariateSample, grid_size: usize, project: bool) -> Result<PickandsCurve> {
    if grid_size < 3 {
        return Err(Error::invalid("grid_size must be at least 3"));
    }
    let pairs = margin_transform(sample)?;
    let grid: Vec<f64> = (1..=grid_size).map(|i| i as f64 / (grid_size + 1) as f64).collect();
    let raw: Vec<f64> = grid.par_iter().map(|t| pickands_from_transformed(&pairs, *t)).collect::<Result<_>>()?;
    let mut a_hat = Vec::with_capacity(grid_size);
    let mut projected = Vec::with_capacity(grid_size);
    for (t, a) in grid.iter().zip(raw) {
        let lo = t.max(1.0 - t);
        if project && (a < lo || a > 1.0) {
            a_hat.push(a.clamp(lo, 1.0));
            projected.push(true);
        } else {
            a_hat.push(a);
            projected.push(false);
        }
    }
    Ok(PickandsCurve { grid, a_hat, projected })
}

/// Reinsurer payment for a loss `x1` with expense `x2` under a layer
/// `L xs M`, expenses shared in proportion to the layer's share of the loss:
/// `0` for `x1 <= M`, `x1 - M + (x1 - M)/x1 x2` inside the layer,
/// `L + L/(L + M) x2` above it.
pub fn reinsurer_payment(x1: f64, x2: f64, layer: &LayerSpec) -> f64 {
    let m = layer.retention;
    let l = layer.limit;
    if x1 <= m {
        0.0
    } else if x1 < m + l {
        let share = x1 - m;
        share + share / x1 * x2
    } else {
        l + l / (l + m) * x2
    }
}

/// Weighting of the pairs in [`bivariate_pure_premium`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Weighting {
    /// Every pair has weight `1/n`.
    #[default]
    Empirical,
    /// Kaplan–Meier jump masses of the loss margin.
    KaplanMeier,
}

/// Plug-in expectation `sum_i w_i g(X_1i, X_2i)` of the reinsurer payment.
pub fn bivariate_pure_premium(sample: &BivariateSample, layer: &LayerSpec, weighting: Weighting) -> Result<f64> {
    let n = sample.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sample.x1[a].total_cmp(&sample.x1[b]).then(sample.censored1[a].cmp(&sample.censored1[b])));
    let weights = match weighting {
        Weighting::Empirical => vec![1.0 / n as f64; n],
        Weighting::KaplanMeier => {
            let flags: Vec<bool> = order.iter().map(|&i| sample.censored1[i]).collect();
            km_masses(&flags)
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("premium weights sum to zero"));
    }
    Ok(order.iter().zip(&weights).map(|(&i, w)| w * reinsurer_payment(sample.x1[i], sample.x2[i], layer)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn transform_examples() {
        let s = BivariateSample::uncensored(vec![1.0, 2.0, 3.0], vec![5.0, 4.0, 6.0]).unwrap();
        let tp = margin_transform(&s).unwrap();
        assert_abs_diff_eq!(tp.e1[1], -(2.0f64 / 3.0).ln(), epsilon = 1e-15);
        // maximum uses the left limit 2/3 instead of 1
        assert_abs_diff_eq!(tp.e1[2], -(2.0f64 / 3.0).ln(), epsilon = 1e-15);
        assert!(tp.e1.iter().chain(&tp.e2).all(|v| v.is_finite() && *v > 0.0));
        let same = BivariateSample::uncensored(vec![1.0, 5.0, 2.0], vec![1.0, 5.0, 2.0]).unwrap();
        let tp = margin_transform(&same).unwrap();
        assert_eq!(tp.e1, tp.e2);
        let dead = BivariateSample::new(vec![1.0, 2.0], vec![1.0, 2.0], vec![true, true], vec![false, false]).unwrap();
        assert!(margin_transform(&dead).is_err());
    }

    #[test]
    fn pickands_examples() {
        let tp = TransformedPairs { e1: vec![0.5, 0.5], e2: vec![0.5, 0.5], uncensored: vec![true, true] };
        assert_abs_diff_eq!(pickands_from_transformed(&tp, 0.5).unwrap(), 1.0, epsilon = 1e-15);
        let half = TransformedPairs { uncensored: vec![true, false], ..tp.clone() };
        assert_abs_diff_eq!(pickands_from_transformed(&half, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert!(pickands_from_transformed(&tp, 0.0).is_err());
        assert!(pickands_from_transformed(&tp, 1.0).is_err());
    }

    #[test]
    fn curve_projection_is_marked() {
        let x1: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let x2: Vec<f64> = (1..=50).map(|i| ((i * 37) % 50 + 1) as f64).collect();
        let s = BivariateSample::uncensored(x1, x2).unwrap();
        let raw = pickands_curve(&s, 9, false).unwrap();
        let proj = pickands_curve(&s, 9, true).unwrap();
        assert!(raw.projected.iter().all(|p| !p));
        for i in 0..9 {
            let t = proj.grid[i];
            assert!(proj.a_hat[i] >= t.max(1.0 - t) && proj.a_hat[i] <= 1.0);
            assert_eq!(proj.projected[i], proj.a_hat[i] != raw.a_hat[i]);
        }
        assert!(pickands_curve(&s, 2, false).is_err());
    }

    #[test]
    fn payment_examples() {
        let layer = LayerSpec::new(100.0, 100.0).unwrap();
        assert_eq!(reinsurer_payment(100.0, 30.0, &layer), 0.0);
        assert_abs_diff_eq!(reinsurer_payment(150.0, 30.0, &layer), 60.0, epsilon = 1e-12);
        let top = 100.0 + 100.0 / 200.0 * 30.0;
        assert_eq!(reinsurer_payment(200.0, 30.0, &layer), top);
        assert_abs_diff_eq!(reinsurer_payment(200.0 - 1e-9, 30.0, &layer), top, epsilon = 1e-8);
        assert_eq!(reinsurer_payment(500.0, 30.0, &layer), top);
    }

    #[test]
    fn premium_examples() {
        let layer = LayerSpec::new(100.0, 100.0).unwrap();
        let below = BivariateSample::uncensored(vec![10.0, 50.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(bivariate_pure_premium(&below, &layer, Weighting::Empirical).unwrap(), 0.0);
        let two = BivariateSample::uncensored(vec![150.0, 300.0], vec![30.0, 10.0]).unwrap();
        let expected = (60.0 + (100.0 + 0.5 * 10.0)) / 2.0;
        assert_abs_diff_eq!(
            bivariate_pure_premium(&two, &layer, Weighting::Empirical).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn km_weighting_reduces_exactly(
            pairs in proptest::collection::vec((1.0f64..500.0, 1.0f64..100.0), 1..40),
            m in 0.0f64..300.0,
            l in 1.0f64..300.0,
        ) {
            let (x1, x2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = BivariateSample::uncensored(x1, x2).unwrap();
            let layer = LayerSpec::new(m, l).unwrap();
            let a = bivariate_pure_premium(&s, &layer, Weighting::Empirical).unwrap();
            let b = bivariate_pure_premium(&s, &layer, Weighting::KaplanMeier).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn payment_monotone(x1 in 0.1f64..500.0, dx in 0.0f64..50.0, x2 in 0.1f64..100.0, dy in 0.0f64..50.0) {
            let layer = LayerSpec::new(100.0, 150.0).unwrap();
            let g = reinsurer_payment(x1, x2, &layer);
            prop_assert!(reinsurer_payment(x1 + dx, x2, &layer) >= g - 1e-12);
            prop_assert!(reinsurer_payment(x1, x2 + dy, &layer) >= g);
        }

        #[test]
        fn uncensored_pickands_identity(
            pairs in proptest::collection::vec((1.0f64..500.0, 1.0f64..100.0), 2..40),
            t in 0.05f64..0.95,
        ) {
            let (x1, x2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = BivariateSample::uncensored(x1, x2).unwrap();
            let tp = margin_transform(&s).unwrap();
            let a = pickands_from_transformed(&tp, t).unwrap();
            let mean = tp.e1.iter().zip(&tp.e2).map(|(p, q)| (p / (1.0 - t)).min(q / t)).sum::<f64>() / s.len() as f64;
            prop_assert!(a > 0.0);
            prop_assert!((a * mean - 1.0).abs() < 1e-12);
        }
    }
}
