//! Small numerical kernels shared by the estimators: bracketed root finding,
//! a Nelder–Mead simplex, golden-section line search and the standard normal
//! distribution function.

use crate::{Error, Result};

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Result of a bracketed root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Finds a root of `f` in `[lo, hi]` by bisection safeguarded secant steps
/// (Illinois variant of regula falsi, falling back to bisection whenever the
/// secant step stalls).
///
/// Stops once `|f(x)| <= ftol` or the bracket has shrunk to a few ulps.
/// `f(lo)` and `f(hi)` must have opposite signs.
pub fn find_root<F>(mut f: F, lo: f64, hi: f64, ftol: f64) -> Result<Root>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Solver(format!("non-finite function value at bracket ends f({a})={fa}, f({b})={fb}")));
    }
    if fa == 0.0 {
        return Ok(Root { x: a, residual: 0.0, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, residual: 0.0, iterations: 0 });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Solver(format!("no sign change on [{a}, {b}]: f(lo)={fa}, f(hi)={fb}")));
    }

    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    let mut side = 0i8;
    for it in 1..=500 {
        let width = b - a;
        let mut x = (a * fb - b * fa) / (fb - fa);
        // Secant step must land strictly inside the bracket; every third
        // iteration is a plain bisection so the bracket shrinks geometrically.
        if !x.is_finite() || x <= a || x >= b || it % 3 == 0 {
            x = a + 0.5 * width;
        }
        let fx = f(x);
        if !fx.is_finite() {
            return Err(Error::Solver(format!("non-finite function value at x={x}")));
        }
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx.abs() <= ftol || fx == 0.0 {
            return Ok(Root { x, residual: fx, iterations: it });
        }
        if fx.signum() == fb.signum() {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
        let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        if (b - a) <= 4.0 * f64::EPSILON * scale {
            return Ok(Root { x: best.0, residual: best.1, iterations: it });
        }
    }
    Ok(Root { x: best.0, residual: best.1, iterations: 500 })
}

/// Minimizes a unimodal function on `[a, b]` by golden-section search.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + c.abs().max(d.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Outcome of a Nelder–Mead minimization.
#[derive(Debug, Clone)]
pub struct SimplexMin {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead downhill simplex with standard coefficients.
///
/// `step` is the initial edge length along each coordinate. Converges when the
/// spread of function values across the simplex drops below
/// `ftol * (|f_best| + 1e-12)` and the simplex diameter below `xtol`.
pub fn nelder_mead<F>(mut f: F, start: &[f64], step: f64, ftol: f64, xtol: f64, max_iter: usize) -> SimplexMin
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[dim] - values[0]).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= ftol * (values[0].abs() + 1e-12) && diameter <= xtol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for p in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[dim]).map(|(c, w)| c + t * (w - c)).collect() };

        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[dim] {
            let p = along(-0.5);
            let v = eval(&p);
            (p, v)
        } else {
            let p = along(0.5);
            let v = eval(&p);
            (p, v)
        };
        if fc < values[dim].min(fr) {
            simplex[dim] = contracted;
            values[dim] = fc;
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].clone();
        for i in 1..=dim {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            values[i] = eval(&simplex[i]);
        }
    }
    let best = (0..=dim).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(0);
    SimplexMin { x: simplex[best].clone(), value: values[best], iterations, converged }
}

/// Logarithms of the Poisson probabilities `P(N = m)`, `m = 0..count`, for
/// mean `y >= 0`, by the stable log-space recurrence.
pub(crate) fn log_poisson_terms(y: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    let ln_y = y.ln();
    let mut lp = -y;
    out.push(lp);
    for m in 1..count {
        lp += ln_y - (m as f64).ln();
        out.push(lp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(-1.6448536269514722), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn root_of_cubic() {
        let r = find_root(|x| x * x * x - 2.0, 0.0, 3.0, 1e-14).unwrap();
        assert_abs_diff_eq!(r.x, 2f64.cbrt(), epsilon = 1e-12);
    }

    #[test]
    fn root_requires_sign_change() {
        let err = find_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Solver(_)));
    }

    #[test]
    fn golden_section_parabola() {
        let (x, _) = golden_section(|x| (x - 1.3).powi(2), -5.0, 5.0, 1e-12);
        assert_abs_diff_eq!(x, 1.3, epsilon = 1e-6);
    }

    #[test]
    fn simplex_rosenbrock() {
        let res = nelder_mead(
            |p| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2),
            &[-1.2, 1.0],
            0.5,
            1e-14,
            1e-9,
            10_000,
        );
        assert!(res.converged);
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn poisson_terms_sum_to_one() {
        let total: f64 = log_poisson_terms(7.5, 80).iter().map(|l| l.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
        let zero = log_poisson_terms(0.0, 3);
        assert_eq!(zero[0], 0.0);
        assert_eq!(zero[1], f64::NEG_INFINITY);
    }
}
