//! Time profiles `psi` whose hitting-time expectations `E_x psi(tau)` the
//! crate can evaluate, plus the transform data the contour machinery needs.
//!
//! The reference families are built from the septic smoothstep
//!
//! ```text
//!   S(u) = 35 u^4 - 84 u^5 + 70 u^6 - 20 u^7,   u in [0, 1],
//! ```
//!
//! which rises 0 -> 1 with *three* vanishing derivatives at both ends. Glued
//! pieces of `S` are therefore globally `C^3`, and their two-sided transform
//! `Psi(z) = int e^{zt} psi(t) dt` decays like `|z|^{-4}` with a computable
//! constant - the property that makes contour truncation cutoffs affordable.
//!
//! Families:
//!
//! * `bump { support: [a, b] }` - rise on the left half, fall on the right,
//!   compactly supported; the workhorse for contour inversion.
//! * `smoothstep { rise: [a, b] }` - 0 before `a`, 1 after `b`; the model
//!   profile for the energy-pairing identity.
//! * `exp_decay { alpha }` - `exp(-alpha t)`, whose potential must reproduce
//!   the classical `z`-potential at `z = alpha` (a strong cross-check).
//! * `constant { c }` - degenerate but legal; every potential equals `c`.
//! * `expr { src, support }` - user expression in `t` with declared compact
//!   support; derivatives come from finite differences, so it is accepted
//!   for time-domain quadrature but rejected where certified high-order
//!   envelopes are required.
//!
//! Two usage modes gate the numerical routes. *Inversion mode* (contour
//! integrals) needs compact support and `C^2` smoothness; *pairing mode*
//! (the identity `E(h_psi, u) = (h_{psi'}, u)_pi`) needs `psi'` supported in
//! `[0, inf)` and `C^3`-level smoothness. [`PsiFunction::check_inversion_mode`]
//! and [`PsiFunction::check_pairing_mode`] enforce these, backed by a
//! finite-difference smoothness probe for expression profiles.

use num_complex::Complex64;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::numeric::{adaptive_simpson, adaptive_simpson_complex};
use crate::tol;

/// Derivatives of the septic smoothstep, `d^j S / du^j`. Zero for `j >= 8`;
/// callers clamp `u` outside `[0, 1]` themselves.
fn s3_deriv(j: usize, u: f64) -> f64 {
    match j {
        0 => u.powi(4) * (35.0 + u * (-84.0 + u * (70.0 - 20.0 * u))),
        1 => 140.0 * u.powi(3) * (1.0 - u).powi(3),
        2 => 420.0 * u.powi(2) * (1.0 - u).powi(2) * (1.0 - 2.0 * u),
        3 => 840.0 * u * (1.0 - u) * (1.0 - 5.0 * u + 5.0 * u * u),
        4 => 840.0 * (1.0 + u * (-12.0 + u * (30.0 - 20.0 * u))),
        5 => 840.0 * (-12.0 + u * (60.0 - 60.0 * u)),
        6 => 840.0 * (60.0 - 120.0 * u),
        7 => -100800.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone)]
enum Family {
    Bump { a: f64, b: f64 },
    Smoothstep { a: f64, b: f64 },
    ExpDecay { alpha: f64 },
    Constant { c: f64 },
    Expr { src: String, expr: Expr, support: [f64; 2] },
}

/// A time profile with enough structure to integrate, transform, and bound.
#[derive(Debug, Clone)]
pub struct PsiFunction {
    family: Family,
}

impl PsiFunction {
    /// Compactly supported `C^3` bump equal to 1 at the midpoint of
    /// `[a, b]`.
    pub fn bump(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Domain(format!(
                "bump support [{a}, {b}] must be a finite interval"
            )));
        }
        Ok(PsiFunction {
            family: Family::Bump { a, b },
        })
    }

    /// Monotone `C^3` rise from 0 to 1 across `[a, b]`, `a >= 0`.
    pub fn smoothstep(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && 0.0 <= a && a < b) {
            return Err(Error::Domain(format!(
                "smoothstep rise [{a}, {b}] must satisfy 0 <= a < b"
            )));
        }
        Ok(PsiFunction {
            family: Family::Smoothstep { a, b },
        })
    }

    /// `psi(t) = exp(-alpha t)`, `alpha > 0`.
    pub fn exp_decay(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!(
                "exp_decay needs alpha > 0, got {alpha}"
            )));
        }
        Ok(PsiFunction {
            family: Family::ExpDecay { alpha },
        })
    }

    pub fn constant(c: f64) -> Self {
        PsiFunction {
            family: Family::Constant { c },
        }
    }

    /// User expression in the grammar of [`crate::expr`], with `x` read as
    /// time, zero outside the declared support.
    pub fn from_expr(src: &str, support: [f64; 2]) -> Result<Self> {
        if !(support[0].is_finite() && support[1].is_finite() && support[0] < support[1]) {
            return Err(Error::Domain(format!(
                "expression profile needs a finite declared support, got [{}, {}]",
                support[0], support[1]
            )));
        }
        Ok(PsiFunction {
            family: Family::Expr {
                src: src.to_string(),
                expr: Expr::parse(src)?,
                support,
            },
        })
    }

    /// Parse `{"family": ..., ...}` parameter objects (see module docs).
    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Domain("psi spec must be a JSON object".into()))?;
        let family = obj
            .get("family")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Domain("psi spec needs a \"family\" string".into()))?;
        let pair = |key: &str| -> Result<[f64; 2]> {
            obj.get(key)
                .and_then(Value::as_array)
                .filter(|a| a.len() == 2)
                .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
                .ok_or_else(|| Error::Domain(format!("psi family {family} needs \"{key}\": [lo, hi]")))
        };
        match family {
            "bump" => {
                let s = pair("support")?;
                Self::bump(s[0], s[1])
            }
            "smoothstep" => {
                let s = pair("rise")?;
                Self::smoothstep(s[0], s[1])
            }
            "exp_decay" => {
                let alpha = obj
                    .get("alpha")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Domain("exp_decay needs \"alpha\"".into()))?;
                Self::exp_decay(alpha)
            }
            "constant" => {
                let c = obj
                    .get("c")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Domain("constant needs \"c\"".into()))?;
                Ok(Self::constant(c))
            }
            "expr" => {
                let src = obj
                    .get("src")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::Domain("expr psi needs \"src\"".into()))?;
                Self::from_expr(src, pair("support")?)
            }
            other => Err(Error::Domain(format!(
                "unknown psi family \"{other}\" (bump, smoothstep, exp_decay, constant, expr)"
            ))),
        }
    }

    pub fn to_json(&self) -> Value {
        match &self.family {
            Family::Bump { a, b } => json!({"family": "bump", "support": [a, b]}),
            Family::Smoothstep { a, b } => json!({"family": "smoothstep", "rise": [a, b]}),
            Family::ExpDecay { alpha } => json!({"family": "exp_decay", "alpha": alpha}),
            Family::Constant { c } => json!({"family": "constant", "c": c}),
            Family::Expr { src, support, .. } => {
                json!({"family": "expr", "src": src, "support": support})
            }
        }
    }

    /// `d^order psi / dt^order` at `t`. Families are exact up to order 7;
    /// expression profiles use central differences (orders 0..=2 only).
    pub fn eval_deriv(&self, order: usize, t: f64) -> f64 {
        match &self.family {
            // Knots evaluate to the *inside* one-sided limit (strict
            // comparisons): orders <= 3 agree from both sides anyway, and
            // quadrature over a closed piece needs the limit from within it,
            // not the zero extension, where the fourth derivative jumps.
            Family::Bump { a, b } => {
                let w = 0.5 * (b - a);
                let mid = a + w;
                if t < *a || t > *b {
                    0.0
                } else if t <= mid {
                    s3_deriv(order, (t - a) / w) / w.powi(order as i32)
                } else {
                    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                    sign * s3_deriv(order, (b - t) / w) / w.powi(order as i32)
                }
            }
            Family::Smoothstep { a, b } => {
                let w = b - a;
                if t < *a {
                    0.0
                } else if t > *b {
                    if order == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    s3_deriv(order, (t - a) / w) / w.powi(order as i32)
                }
            }
            Family::ExpDecay { alpha } => (-alpha).powi(order as i32) * (-alpha * t).exp(),
            Family::Constant { c } => {
                if order == 0 {
                    *c
                } else {
                    0.0
                }
            }
            Family::Expr { expr, support, .. } => {
                let inside = |t: f64| {
                    if t < support[0] || t > support[1] {
                        0.0
                    } else {
                        expr.eval(t)
                    }
                };
                let h = 1e-5 * (support[1] - support[0]).max(1.0);
                match order {
                    0 => inside(t),
                    1 => (inside(t + h) - inside(t - h)) / (2.0 * h),
                    2 => (inside(t + h) - 2.0 * inside(t) + inside(t - h)) / (h * h),
                    _ => f64::NAN,
                }
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_deriv(0, t)
    }

    /// Support of `psi` when compact.
    pub fn support(&self) -> Option<(f64, f64)> {
        match &self.family {
            Family::Bump { a, b } => Some((*a, *b)),
            Family::Expr { support, .. } => Some((support[0], support[1])),
            _ => None,
        }
    }

    /// Support of `psi'` when compact (constant profiles report a point).
    pub fn derivative_support(&self) -> Option<(f64, f64)> {
        match &self.family {
            Family::Bump { a, b } => Some((*a, *b)),
            Family::Smoothstep { a, b } => Some((*a, *b)),
            Family::ExpDecay { .. } => None,
            Family::Constant { .. } => Some((0.0, 0.0)),
            Family::Expr { support, .. } => Some((support[0], support[1])),
        }
    }

    /// `int_t^inf |psi'(s)| ds`, the tail mass driving horizon choices.
    pub fn deriv_tail_mass(&self, t: f64) -> f64 {
        match &self.family {
            Family::Bump { a, b } => {
                // |psi'| integrates to 2 in total (up then down).
                let w = 0.5 * (b - a);
                let mid = a + w;
                if t >= *b {
                    0.0
                } else if t >= mid {
                    self.eval(t)
                } else {
                    2.0 - self.eval(t)
                }
            }
            Family::Smoothstep { b, .. } => {
                if t >= *b {
                    0.0
                } else {
                    1.0 - self.eval(t)
                }
            }
            Family::ExpDecay { alpha } => (-alpha * t.max(0.0)).exp(),
            Family::Constant { .. } => 0.0,
            Family::Expr { support, .. } => {
                if t >= support[1] {
                    0.0
                } else {
                    // Crude numeric bound; fine for horizon heuristics.
                    adaptive_simpson(
                        &|s| self.eval_deriv(1, s).abs(),
                        t.max(support[0] - 1.0),
                        support[1],
                        1e-6,
                        1e-12,
                    )
                    .unwrap_or(f64::INFINITY)
                }
            }
        }
    }

    /// `int_t^inf |psi^{(order)}(s)| ds` for `order >= 1`; infinite when no
    /// usable bound exists.
    pub(crate) fn abs_deriv_tail(&self, order: usize, t: f64) -> f64 {
        if order <= 1 {
            return self.deriv_tail_mass(t);
        }
        match &self.family {
            Family::ExpDecay { alpha } => {
                alpha.powi(order as i32 - 1) * (-alpha * t.max(0.0)).exp()
            }
            Family::Constant { .. } => 0.0,
            _ => match self.derivative_support() {
                Some((_, s1)) if t >= s1 => 0.0,
                Some((s0, s1)) => adaptive_simpson(
                    &|s| self.eval_deriv(order, s).abs(),
                    t.max(s0),
                    s1,
                    1e-6,
                    1e-12,
                )
                .unwrap_or(f64::INFINITY),
                None => f64::INFINITY,
            },
        }
    }

    /// Breakpoints where piecewise definitions change; quadrature panels
    /// must not straddle them.
    pub fn knots(&self) -> Vec<f64> {
        match &self.family {
            Family::Bump { a, b } => vec![*a, 0.5 * (a + b), *b],
            Family::Smoothstep { a, b } => vec![*a, *b],
            Family::ExpDecay { .. } | Family::Constant { .. } => vec![],
            Family::Expr { support, .. } => vec![support[0], support[1]],
        }
    }

    /// Two-sided Laplace transform `Psi(z) = int e^{zt} psi(t) dt`, defined
    /// for compactly supported profiles.
    ///
    /// For the polynomial families the integral has an exact
    /// integration-by-parts form; it takes over once `|z| * piece_width >= 8`
    /// where adaptive quadrature of the oscillatory integrand would need
    /// `O(|z|)` evaluations. Below that, adaptive Simpson at relative
    /// tolerance 1e-12.
    pub fn laplace_transform(&self, z: Complex64) -> Result<Complex64> {
        match &self.family {
            Family::Bump { a, b } => {
                let w = 0.5 * (b - a);
                let mid = a + w;
                if z.norm() * w >= 8.0 {
                    let rise =
                        piece_transform(z, *a, mid, |j, t| s3_deriv(j, (t - a) / w) / w.powi(j as i32));
                    let fall = piece_transform(z, mid, *b, |j, t| {
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        sign * s3_deriv(j, (b - t) / w) / w.powi(j as i32)
                    });
                    Ok(rise + fall)
                } else {
                    adaptive_simpson_complex(
                        &|t| (z * t).exp() * self.eval(t),
                        *a,
                        *b,
                        1e-12,
                        1e-300,
                    )
                }
            }
            Family::Expr { support, .. } => adaptive_simpson_complex(
                &|t| (z * t).exp() * self.eval(t),
                support[0],
                support[1],
                1e-10,
                1e-300,
            ),
            _ => Err(Error::PsiMode(
                "two-sided transform needs a compactly supported profile".into(),
            )),
        }
    }

    /// `C_k(sigma) = int e^{sigma t} |psi^{(k)}(t)| dt` over the support:
    /// the constants in the transform decay bounds
    /// `|Psi(sigma + iy)| <= C_k / |sigma + iy|^k`.
    pub fn envelope(&self, k: usize, sigma: f64) -> Result<f64> {
        match &self.family {
            Family::Bump { a, b } => {
                let mid = 0.5 * (a + b);
                let mut total = 0.0;
                for (lo, hi) in [(*a, mid), (mid, *b)] {
                    total += adaptive_simpson(
                        &|t| (sigma * t).exp() * self.eval_deriv(k, t).abs(),
                        lo,
                        hi,
                        1e-9,
                        1e-300,
                    )?;
                }
                Ok(total)
            }
            Family::Smoothstep { a, b } => {
                if k == 0 {
                    return Err(Error::PsiMode(
                        "smoothstep has no integrable zeroth envelope".into(),
                    ));
                }
                adaptive_simpson(
                    &|t| (sigma * t).exp() * self.eval_deriv(k, t).abs(),
                    *a,
                    *b,
                    1e-9,
                    1e-300,
                )
            }
            Family::ExpDecay { alpha } => {
                if sigma >= *alpha {
                    return Err(Error::PsiMode(format!(
                        "exp_decay envelope diverges for sigma = {sigma} >= alpha = {alpha}"
                    )));
                }
                Ok(alpha.powi(k as i32) / (alpha - sigma))
            }
            Family::Constant { .. } => Ok(0.0),
            Family::Expr { .. } => Err(Error::PsiMode(
                "expression profiles carry no certified envelopes; \
                 use a named family for contour work"
                    .into(),
            )),
        }
    }

    /// Finite-difference smoothness probe: scans a discrete second
    /// derivative at the given step (clamped to the feature width) and flags
    /// jumps that a `C^2` profile cannot produce. Analytic families pass by
    /// construction but are probed anyway.
    pub fn smoothness_probe(&self, step: f64) -> Result<()> {
        let (lo, hi) = match self.derivative_support() {
            Some((a, b)) if b > a => (a, b),
            _ => return Ok(()), // constants and pure decays are smooth
        };
        let width = hi - lo;
        let h = step.min(width / 64.0);
        let fd2 = |t: f64| {
            (self.eval(t + h) - 2.0 * self.eval(t) + self.eval(t - h)) / (h * h)
        };
        let n_steps = ((width + 20.0 * h) / h).ceil() as usize;
        let start = lo - 10.0 * h;
        let mut prev = fd2(start);
        let mut max_jump = 0.0f64;
        let mut scale = prev.abs();
        for k in 1..=n_steps {
            let cur = fd2(start + k as f64 * h);
            max_jump = max_jump.max((cur - prev).abs());
            scale = scale.max(cur.abs());
            prev = cur;
        }
        // A C^2 profile moves fd2 by O(M3 h) per step; a second-derivative
        // jump shows up whole. The factor below separates the two regimes
        // for every family and catches kinked expressions.
        if max_jump > 0.35 * (scale + 1.0) {
            return Err(Error::PsiMode(format!(
                "smoothness probe found a second-derivative jump of {max_jump:.3e} \
                 (scale {scale:.3e}); profile is not C^2"
            )));
        }
        Ok(())
    }

    /// Inversion mode: compact support and probe-level `C^2`, the
    /// hypotheses under which the contour representation of `E_x psi(tau)`
    /// is valid and its truncation is boundable.
    pub fn check_inversion_mode(&self) -> Result<()> {
        if self.support().is_none() {
            return Err(Error::PsiMode(
                "contour inversion needs a compactly supported profile".into(),
            ));
        }
        self.smoothness_probe(tol::PROBE_STEP)
    }

    /// Pairing mode: `psi'` supported in `[0, inf)` (so the profile is
    /// constant on the past) and probe-level smoothness; the hypotheses of
    /// the identity `E(h_psi, u) = (h_{psi'}, u)_pi`.
    pub fn check_pairing_mode(&self) -> Result<()> {
        match &self.family {
            Family::Bump { a, .. } | Family::Smoothstep { a, .. } => {
                if *a < 0.0 {
                    return Err(Error::PsiMode(format!(
                        "pairing mode needs psi' supported in [0, inf); support starts at {a}"
                    )));
                }
            }
            Family::ExpDecay { .. } | Family::Constant { .. } => {}
            Family::Expr { support, .. } => {
                if support[0] < 0.0 {
                    return Err(Error::PsiMode(format!(
                        "pairing mode needs psi' supported in [0, inf); support starts at {}",
                        support[0]
                    )));
                }
            }
        }
        self.smoothness_probe(tol::PROBE_STEP)
    }
}

/// Exact `int_{t0}^{t1} e^{zt} p(t) dt` for a polynomial piece given its
/// derivative evaluator: repeated integration by parts telescopes to
/// boundary terms `e^{zt} sum_j (-1)^j p^{(j)}(t) / z^{j+1}`.
fn piece_transform(
    z: Complex64,
    t0: f64,
    t1: f64,
    derivs: impl Fn(usize, f64) -> f64,
) -> Complex64 {
    let boundary = |t: f64| {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut zpow = z;
        for j in 0..=7 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * derivs(j, t) / zpow;
            zpow *= z;
        }
        (z * t).exp() * sum
    };
    boundary(t1) - boundary(t0)
}
