//! Seeded generators for the models of this crate.
//!
//! Every generator takes an explicit random number generator so that a seed
//! fully determines the sample. Continuous laws are drawn by inverse
//! transform of their quantile functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bivariate::BivariateSample;
use crate::empirics::CensoredSample;
use crate::regression::CovariateSample;
use crate::splicing::{composite_quantile, CompositeModel, GeneralizedParetoTail, MixedErlang};
use crate::{Error, Result};

/// Generator used throughout the crate: ChaCha8 seeded from a `u64`.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on `(0, 1]`.
fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Strict Pareto `P(X > x) = (x/scale)^{-1/xi}`, `x >= scale`.
pub fn strict_pareto<R: Rng>(rng: &mut R, xi: f64, scale: f64, n: usize) -> Result<Vec<f64>> {
    check_positive("xi", xi)?;
    check_positive("scale", scale)?;
    Ok((0..n).map(|_| scale * open_uniform(rng).powf(-xi)).collect())
}

/// Pareto with index `xi` and lower bound `scale`, truncated at `upper`.
pub fn truncated_pareto<R: Rng>(rng: &mut R, xi: f64, scale: f64, upper: f64, n: usize) -> Result<Vec<f64>> {
    check_positive("xi", xi)?;
    check_positive("scale", scale)?;
    if !(upper > scale) {
        return Err(Error::invalid("truncation point must exceed the scale"));
    }
    let mass = 1.0 - (upper / scale).powf(-1.0 / xi);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * mass;
            (scale * (1.0 - u).powf(-xi)).min(upper)
        })
        .collect())
}

/// Weibull-tempered Pareto `X = min(W, Y)` with `P(W > x) = x^{-alpha}`,
/// `x >= 1`, and `P(Y > x) = exp{-(beta x)^tau}`.
pub fn tempered_pareto<R: Rng>(rng: &mut R, alpha: f64, beta: f64, tau: f64, n: usize) -> Result<Vec<f64>> {
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    check_positive("tau", tau)?;
    Ok((0..n)
        .map(|_| {
            let w = open_uniform(rng).powf(-1.0 / alpha);
            let y = (-open_uniform(rng).ln()).powf(1.0 / tau) / beta;
            w.min(y).max(f64::MIN_POSITIVE)
        })
        .collect())
}

/// Generalized Pareto draws above `tail.threshold`.
pub fn generalized_pareto<R: Rng>(rng: &mut R, tail: &GeneralizedParetoTail, n: usize) -> Vec<f64> {
    (0..n).map(|_| tail.quantile(rng.random::<f64>())).collect()
}

/// Mixed Erlang draws: a component by its weight, then a sum of exponentials.
pub fn mixed_erlang<R: Rng>(rng: &mut R, me: &MixedErlang, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut j = me.shapes.len() - 1;
            for (i, w) in me.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    j = i;
                    break;
                }
            }
            let total: f64 = (0..me.shapes[j]).map(|_| -open_uniform(rng).ln()).sum();
            (total / me.rate).max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Composite model draws by inverting the composite distribution function.
pub fn composite<R: Rng>(rng: &mut R, model: &CompositeModel, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random();
            while u == 0.0 {
                u = rng.random();
            }
            composite_quantile(model, u)
        })
        .collect()
}

/// Strict Pareto(`xi`) losses right-censored by an independent strict
/// Pareto(`xi_c`) variable, both with unit scale.
pub fn censored_pareto<R: Rng>(rng: &mut R, xi: f64, xi_c: f64, n: usize) -> Result<CensoredSample> {
    let x = strict_pareto(rng, xi, 1.0, n)?;
    let c = strict_pareto(rng, xi_c, 1.0, n)?;
    let z = x.iter().zip(&c).map(|(a, b)| a.min(*b)).collect();
    let flags = x.iter().zip(&c).map(|(a, b)| b < a).collect();
    CensoredSample::new(z, flags)
}

/// Covariate model: `x ~ U(0, 1)`, `Y | x` strict Pareto with index
/// `xi_of(x)`, censored by an independent strict Pareto(`xi_c`).
pub fn covariate_pareto<R: Rng>(
    rng: &mut R,
    n: usize,
    xi_of: impl Fn(f64) -> f64,
    xi_c: f64,
) -> Result<CovariateSample> {
    check_positive("xi_c", xi_c)?;
    let mut z = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let xi = xi_of(x);
        check_positive("xi(x)", xi)?;
        let y = open_uniform(rng).powf(-xi);
        let c = open_uniform(rng).powf(-xi_c);
        z.push(y.min(c));
        flags.push(c < y);
        xs.push(x);
    }
    CovariateSample::new(z, flags, xs)
}

/// Independent strict Pareto margins with indices `xi1`, `xi2`.
pub fn bivariate_independent<R: Rng>(rng: &mut R, xi1: f64, xi2: f64, n: usize) -> Result<BivariateSample> {
    let a = strict_pareto(rng, xi1, 1.0, n)?;
    let b = strict_pareto(rng, xi2, 1.0, n)?;
    BivariateSample::uncensored(a, b)
}

/// Comonotone strict Pareto margins driven by one uniform per pair.
pub fn bivariate_comonotone<R: Rng>(rng: &mut R, xi1: f64, xi2: f64, n: usize) -> Result<BivariateSample> {
    check_positive("xi1", xi1)?;
    check_positive("xi2", xi2)?;
    let u: Vec<f64> = (0..n).map(|_| open_uniform(rng)).collect();
    let a = u.iter().map(|v| v.powf(-xi1)).collect();
    let b = u.iter().map(|v| v.powf(-xi2)).collect();
    BivariateSample::uncensored(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sample() {
        let a = strict_pareto(&mut seeded(9), 0.5, 1.0, 100).unwrap();
        let b = strict_pareto(&mut seeded(9), 0.5, 1.0, 100).unwrap();
        assert_eq!(a, b);
        let c = strict_pareto(&mut seeded(10), 0.5, 1.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truncated_support() {
        let v = truncated_pareto(&mut seeded(1), 1.0, 1.0, 6.0, 5000).unwrap();
        assert!(v.iter().all(|x| *x >= 1.0 && *x <= 6.0));
        assert!(truncated_pareto(&mut seeded(1), 1.0, 2.0, 1.0, 5).is_err());
    }

    #[test]
    fn composite_survival_concentrates() {
        let model = CompositeModel::new(
            MixedErlang::new(vec![1, 2], vec![0.5, 0.5], 1.0).unwrap(),
            GeneralizedParetoTail::new(3.0, 1.0, 0.3).unwrap(),
            0.8,
            0.0,
        )
        .unwrap();
        let n = 4000;
        let v = composite(&mut seeded(4), &model, n).unwrap();
        let above = v.iter().filter(|x| **x > 3.0).count() as f64 / n as f64;
        assert!((above - 0.2).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn censoring_rate_matches_theory() {
        // P(C < X) = xi_c^{-1} / (xi^{-1} + xi_c^{-1}) for unit-scale Paretos
        let s = censored_pareto(&mut seeded(2), 0.5, 1.0, 20_000).unwrap();
        let rate = s.censored_count() as f64 / s.len() as f64;
        assert!((rate - 1.0 / 3.0).abs() < 0.02, "{rate}");
    }

    #[test]
    fn mixed_erlang_mean() {
        let me = MixedErlang::new(vec![1, 4], vec![0.3, 0.7], 2.0).unwrap();
        let v = mixed_erlang(&mut seeded(3), &me, 20_000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - me.mean()).abs() < 0.05);
    }
}
