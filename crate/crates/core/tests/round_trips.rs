//! Solvers and their inverses, including serialization.

use proptest::prelude::*;
use tailforge::empirics::{relative_excesses, CensoredSample};
use tailforge::simulate::{seeded, tempered_pareto, truncated_pareto};
use tailforge::splicing::{composite_quantile, composite_survival, CompositeModel, GeneralizedParetoTail, MixedErlang};
use tailforge::tempering::{tempered_mle, tempered_return_level, tempered_tail_prob, TemperedFit};
use tailforge::truncation::{truncated_xi, truncated_xi_residual};

#[test]
fn truncated_xi_solves_its_equation() {
    for seed in 0..20u64 {
        let v = truncated_pareto(&mut seeded(seed), 0.7, 1.0, 20.0, 500).unwrap();
        let s = CensoredSample::uncensored(v).unwrap();
        for k in [20, 100, 300, 499] {
            let ex = relative_excesses(&s, k).unwrap();
            if let Ok(xi) = truncated_xi(&ex) {
                let r = truncated_xi_residual(&ex, xi);
                assert!(r.abs() <= 1e-10, "seed {seed} k {k}: residual {r}");
            }
        }
    }
}

fn tempered_fits() -> Vec<(TemperedFit, usize)> {
    let mut out = Vec::new();
    for (alpha, lambda, tau) in [(1.5, 0.1, 0.8), (0.7, 2.0, 0.3), (1.2, 0.0, 1.0), (2.0, 1e-6, 4.9), (1.0, 1.0, 1.0)] {
        out.push((
            TemperedFit {
                k: 199,
                alpha,
                tau,
                lambda,
                beta_inf: if lambda > 0.0 { lambda.powf(1.0 / tau) } else { 0.0 },
                delta: tau * lambda / alpha,
                wls_score: 0.0,
                threshold: 3.5,
            },
            1999,
        ));
    }
    // and maximum likelihood fits on simulated data
    for seed in 0..3u64 {
        let v = tempered_pareto(&mut seeded(seed), 1.0, 0.005, 0.7, 5000).unwrap();
        let s = CensoredSample::uncensored(v).unwrap();
        if let Ok(fit) = tempered_mle(&relative_excesses(&s, 2000).unwrap()) {
            out.push((fit, s.len()));
        }
    }
    out
}

#[test]
fn tempered_return_level_inverts_tail_prob() {
    for (fit, n) in tempered_fits() {
        let upper = (fit.k + 1) as f64 / (n + 1) as f64;
        for p in [upper, upper / 2.0, 1.0 / n as f64, 0.1 / n as f64, 1e-6, 1e-12] {
            let c = tempered_return_level(&fit, n, p).unwrap_or_else(|e| panic!("p={p} {fit:?}: {e}"));
            let back = tempered_tail_prob(&fit, n, c).unwrap();
            assert!((back - p).abs() <= 1e-10 * p, "p={p} back={back}");
        }
    }
}

fn model(xi: f64, lower: f64) -> CompositeModel {
    CompositeModel::new(
        MixedErlang::new(vec![1, 3, 6], vec![0.3, 0.5, 0.2], 1.2).unwrap(),
        GeneralizedParetoTail::new(5.0, 2.0, xi).unwrap(),
        0.9,
        lower,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn composite_quantile_inverts_survival(
        level in 1e-6f64..0.999_999,
        xi in -0.3f64..0.9,
        lower in prop_oneof![Just(0.0), 0.01f64..1.0],
    ) {
        let m = model(xi, lower);
        let x = composite_quantile(&m, level).unwrap();
        let s = composite_survival(&m, x);
        prop_assert!((s - (1.0 - level)).abs() <= 1e-9, "level {} gives survival {}", level, s);
    }

    #[test]
    fn composite_json_is_bit_exact(xi in -0.4f64..2.0, sigma in 1e-3f64..1e3, pi in 0.01f64..0.99) {
        let m = CompositeModel::new(
            MixedErlang::new(vec![2, 7], vec![pi.sqrt(), 1.0 - pi.sqrt()], 0.37 * sigma).unwrap(),
            GeneralizedParetoTail::new(1.0 + sigma, sigma, xi).unwrap(),
            pi,
            0.1,
        )
        .unwrap();
        let back = CompositeModel::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }
}
