//! Scalar numerics shared across modules: compensated summation, Gauss -
//! Legendre nodes, and adaptive Simpson quadrature for real- and
//! complex-valued integrands.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Neumaier's improved Kahan summation. Exact to one ulp of the true sum for
/// the mildly ill-conditioned sums that show up here (survival integrals,
/// long Monte Carlo accumulations).
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, found by Newton iteration
/// on the Legendre polynomial from the Chebyshev initial guess. Accurate to
/// machine precision for the small orders (<= 32) used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Root of P_n near the Chebyshev angle, refined by Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0f64;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive Simpson quadrature with both a relative and an absolute floor.
///
/// The recursion halts when the classical `|S2 - S1| / 15` estimate drops
/// below `rel_tol * |whole|` or below `abs_floor`; a depth cap of 50 guards
/// against non-integrable inputs and converts exhaustion into an error.
///
/// A panel whose integral crosses zero (oscillatory or sign-changing
/// integrands) can never satisfy a purely local relative test, so the floor
/// is raised to `rel_tol` times a sampled magnitude scale of the whole
/// integral. That is the correct contract anyway: when cancellation makes
/// `|I|` tiny compared to `int |f|`, errors relative to `|I|` are not
/// achievable in fixed precision.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<f64> {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    let floor = abs_floor.max(rel_tol * magnitude_scale(&|t| f(t).abs(), a, b));
    simpson_step(f, a, b, fa, fb, fc, whole, rel_tol, floor, 50).map_err(|_| {
        Error::NoConvergence(format!(
            "adaptive Simpson did not converge on [{a:.3e}, {b:.3e}]"
        ))
    })
}

/// Conservative under-estimate of `int_a^b |f|` from a coarse scan, used to
/// convert relative tolerances into absolute floors.
fn magnitude_scale<F: Fn(f64) -> f64>(f_abs: &F, a: f64, b: f64) -> f64 {
    let mut max = 0.0f64;
    for k in 0..=16 {
        let t = a + (b - a) * k as f64 / 16.0;
        let v = f_abs(t);
        if v.is_finite() {
            max = max.max(v);
        }
    }
    max * (b - a) / 8.0
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    rel_tol: f64,
    abs_floor: f64,
    depth: u32,
) -> std::result::Result<f64, ()> {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let err = (left + right - whole) / 15.0;
    if err.abs() <= rel_tol * whole.abs().max(1e-300) || err.abs() <= abs_floor {
        return Ok(left + right + err);
    }
    if depth == 0 {
        return Err(());
    }
    let half_floor = 0.5 * abs_floor;
    Ok(simpson_step(f, a, c, fa, fc, fd, left, rel_tol, half_floor, depth - 1)?
        + simpson_step(f, c, b, fc, fb, fe, right, rel_tol, half_floor, depth - 1)?)
}

/// Complex-valued adaptive Simpson, same control logic as the real version.
pub fn adaptive_simpson_complex<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<Complex64> {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (fa + 4.0 * fc + fb) * ((b - a) / 6.0);
    let floor = abs_floor.max(rel_tol * magnitude_scale(&|t| f(t).norm(), a, b));
    simpson_step_complex(f, a, b, fa, fb, fc, whole, rel_tol, floor, 50).map_err(|_| {
        Error::NoConvergence(format!(
            "adaptive Simpson (complex) did not converge on [{a:.3e}, {b:.3e}]"
        ))
    })
}

#[allow(clippy::too_many_arguments)]
fn simpson_step_complex<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    fa: Complex64,
    fb: Complex64,
    fc: Complex64,
    whole: Complex64,
    rel_tol: f64,
    abs_floor: f64,
    depth: u32,
) -> std::result::Result<Complex64, ()> {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let left = (fa + 4.0 * fd + fc) * ((c - a) / 6.0);
    let right = (fc + 4.0 * fe + fb) * ((b - c) / 6.0);
    let err = (left + right - whole) / 15.0;
    if err.norm() <= rel_tol * whole.norm().max(1e-300) || err.norm() <= abs_floor {
        return Ok(left + right + err);
    }
    if depth == 0 {
        return Err(());
    }
    let half_floor = 0.5 * abs_floor;
    Ok(
        simpson_step_complex(f, a, c, fa, fc, fd, left, rel_tol, half_floor, depth - 1)?
            + simpson_step_complex(f, c, b, fc, fb, fe, right, rel_tol, half_floor, depth - 1)?,
    )
}

/// `m!` as f64; exact for `m <= 22`, which covers every moment order in use.
pub fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// Central binomial coefficient `C(2m, m)` as f64.
pub fn central_binomial(m: usize) -> f64 {
    let mut v = 1.0f64;
    for k in 1..=m {
        v *= (m + k) as f64 / k as f64;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        // 1 + 1e100 - 1e100 + 1 = 2; naive summation returns 0.
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(v), 2.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // Order-n rule is exact through degree 2n-1.
        for n in [2usize, 5, 12, 20] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 1 {
                0.0
            } else {
                2.0 / (deg as f64 + 1.0)
            };
            let got: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * xi.powi(deg as i32))
                .sum();
            assert_relative_eq!(got, exact, epsilon = 1e-13);
            let mass: f64 = w.iter().sum();
            assert_relative_eq!(mass, 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn simpson_matches_known_integrals() {
        let v = adaptive_simpson(&|t: f64| (-t).exp(), 0.0, 30.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(v, 1.0 - (-30.0f64).exp(), epsilon = 1e-11);

        let osc = adaptive_simpson_complex(
            &|t: f64| Complex64::new(0.0, 5.0 * t).exp(),
            0.0,
            1.0,
            1e-12,
            0.0,
        )
        .unwrap();
        let exact = (Complex64::new(0.0, 5.0).exp() - 1.0) / Complex64::new(0.0, 5.0);
        assert!((osc - exact).norm() < 1e-11);
    }

    #[test]
    fn combinatorics() {
        assert_eq!(factorial(5), 120.0);
        assert_eq!(factorial(0), 1.0);
        assert_eq!(central_binomial(5), 252.0);
        assert_eq!(central_binomial(0), 1.0);
    }
}
