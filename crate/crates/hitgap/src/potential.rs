//! Hitting-time potentials: resolvent solves against a target set.
//!
//! Let `tau` be the hitting time of a set `K`. The objects computed here are
//! all functions of the starting state `x`:
//!
//! * the z-potential `h_z(x) = E_x exp(-z tau)`, `Re z >= 0`, which equals 1
//!   on `K` and solves `(Q h)(x) = z h(x)` off `K`;
//! * its z-derivatives `h^m = d^m/dz^m h_z = (-1)^m E_x tau^m exp(-z tau)`,
//!   which vanish on `K` and obey the ladder `(Q - z) h^m = m h^{m-1}` off
//!   `K` (so `-h^1(0)` is the expected hitting time);
//! * the exponential moment `phi(x) = E_x exp(alpha tau)`, the `z = -alpha`
//!   member of the family, finite exactly for `alpha` below the principal
//!   Dirichlet eigenvalue `lambda_0` of the killed generator;
//! * the blow-up threshold `alpha_star = lambda_0` itself, computed by two
//!   genuinely different routes (killed eigenvalue vs. bisection on solution
//!   positivity) that must agree;
//! * Lyapunov data: `phi` again, now read as a drift certificate
//!   `Q phi = -alpha phi` off `K` with excursion constant
//!   `b = max_K (Q phi + alpha phi)`.
//!
//! All solves reduce to the complement sub-system `(Q_V - z) h = -r`, where
//! `V = K^c` and `r` collects the rates into `K`. For `Re z >= 0` that matrix
//! is an (irreducibly diagonally dominant or shifted) M-matrix, so the
//! tridiagonal Thomas path needs no pivoting; dense chains go through LU with
//! partial pivoting. Every public solve re-checks its residual on the full
//! generator and records it in the returned [`Potential`].
//!
//! Why bisection on *positivity* is a sound second route for the threshold:
//! for `alpha < lambda_0` the solution is an exponential moment, hence
//! `>= 1 > 0`; at `alpha > lambda_0` within the first spectral branch the
//! solution (when the matrix is nonsingular) picks up a sign change, because
//! a nonnegative solution of `(Q_V + alpha) h = -r <= 0` with `r` not
//! identically zero on a component forces, by irreducibility of the
//! component and Perron-Frobenius, `alpha <= lambda_0` there. Scanning down
//! from above therefore flips the predicate exactly at `lambda_0`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::chain::{FiniteChain, InvariantMeasure, TargetSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral;
use crate::tol;

/// What a [`Potential`] is a potential *of*.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `E_x exp(-z tau_K)`.
    Z { z: Complex64 },
    /// `E_x exp(alpha tau_K)`.
    ExpMoment { alpha: f64 },
    /// `d^m/dz^m E_x exp(-z tau_K)`.
    Moment { z: Complex64, m: usize },
    /// `E_x psi(tau_K)` from time-domain quadrature.
    PsiDirect { psi: Value },
    /// `E_x psi(tau_K)` from contour inversion.
    PsiContour { psi: Value, sigma: f64 },
    /// Exponential moment read as a drift certificate.
    Lyapunov { alpha: f64 },
}

impl PotentialKind {
    pub fn kind_str(&self) -> &'static str {
        match self {
            PotentialKind::Z { .. } => "z",
            PotentialKind::ExpMoment { .. } => "exp_moment",
            PotentialKind::Moment { .. } => "moment",
            PotentialKind::PsiDirect { .. } => "psi_direct",
            PotentialKind::PsiContour { .. } => "psi_contour",
            PotentialKind::Lyapunov { .. } => "lyapunov",
        }
    }

    fn param_json(&self) -> Value {
        match self {
            PotentialKind::Z { z } => json!({"re": z.re, "im": z.im}),
            PotentialKind::ExpMoment { alpha } => json!({"alpha": alpha}),
            PotentialKind::Moment { z, m } => json!({"re": z.re, "im": z.im, "m": m}),
            PotentialKind::PsiDirect { psi } => json!({"psi": psi}),
            PotentialKind::PsiContour { psi, sigma } => json!({"psi": psi, "sigma": sigma}),
            PotentialKind::Lyapunov { alpha } => json!({"alpha": alpha}),
        }
    }
}

/// A function of the starting state attached to a target set, with the
/// residual of the linear system that produced it (relative to the rate and
/// data scale).
#[derive(Debug, Clone)]
pub struct Potential {
    kind: PotentialKind,
    target: TargetSet,
    values_re: Vec<f64>,
    values_im: Vec<f64>,
    residual: f64,
}

impl Potential {
    pub(crate) fn new(
        kind: PotentialKind,
        target: TargetSet,
        values: Vec<Complex64>,
        residual: f64,
    ) -> Self {
        Potential {
            kind,
            target,
            values_re: values.iter().map(|v| v.re).collect(),
            values_im: values.iter().map(|v| v.im).collect(),
            residual,
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn target(&self) -> &TargetSet {
        &self.target
    }

    pub fn n(&self) -> usize {
        self.values_re.len()
    }

    pub fn values_re(&self) -> &[f64] {
        &self.values_re
    }

    pub fn values_im(&self) -> &[f64] {
        &self.values_im
    }

    pub fn value(&self, i: usize) -> Complex64 {
        Complex64::new(self.values_re[i], self.values_im[i])
    }

    pub fn values(&self) -> Vec<Complex64> {
        (0..self.n()).map(|i| self.value(i)).collect()
    }

    /// Residual of the defining linear system, relative scale.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// True when the imaginary parts are at rounding level.
    pub fn is_real(&self) -> bool {
        let scale = self
            .values_re
            .iter()
            .map(|v| v.abs())
            .fold(1.0f64, f64::max);
        self.values_im.iter().all(|v| v.abs() <= 1e-12 * scale)
    }

    /// Real values as a vector, for pairing with the Dirichlet machinery.
    pub fn real_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.values_re.clone())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "kind": self.kind.kind_str(),
            "K": self.target.to_json(),
            "param": self.kind.param_json(),
            "values_re": self.values_re,
            "values_im": self.values_im,
            "residual": self.residual,
        })
    }
}

fn check_dims(chain: &FiniteChain, pi: &InvariantMeasure, k_set: &TargetSet) -> Result<()> {
    if chain.n() != pi.n() || chain.n() != k_set.n() {
        return Err(Error::Shape {
            what: "potential solve",
            expected: format!("{} states", chain.n()),
            got: format!("measure {}, target {}", pi.n(), k_set.n()),
        });
    }
    Ok(())
}

fn rate_scale(chain: &FiniteChain) -> f64 {
    (0..chain.n())
        .map(|i| chain.exit_rate(i))
        .fold(1.0f64, f64::max)
}

/// Rates from each complement state into `K`, ordered like `complement`.
fn rates_into(chain: &FiniteChain, k_set: &TargetSet, complement: &[usize]) -> Vec<f64> {
    complement
        .iter()
        .map(|&i| {
            k_set
                .states()
                .iter()
                .map(|&j| chain.rate(i, j))
                .sum::<f64>()
        })
        .collect()
}

/// Solve `(Q_V - z) h = rhs` on the complement `V` of `k_set`.
///
/// Tridiagonal chains decouple into contiguous runs solved by complex
/// Thomas elimination; everything else goes through one dense complex LU.
pub(crate) fn killed_solve(
    chain: &FiniteChain,
    k_set: &TargetSet,
    z: Complex64,
    rhs: &[Complex64],
) -> Result<Vec<Complex64>> {
    let complement = k_set.complement();
    if rhs.len() != complement.len() {
        return Err(Error::Shape {
            what: "killed solve rhs",
            expected: format!("{}", complement.len()),
            got: format!("{}", rhs.len()),
        });
    }
    if chain.is_tridiagonal() {
        let mut out = vec![Complex64::new(0.0, 0.0); complement.len()];
        let mut offset = 0usize;
        for (start, len) in linalg::contiguous_runs(&complement) {
            let diag: Vec<Complex64> = (0..len)
                .map(|k| Complex64::new(chain.rate(start + k, start + k), 0.0) - z)
                .collect();
            let sub: Vec<Complex64> = (1..len)
                .map(|k| Complex64::new(chain.rate(start + k, start + k - 1), 0.0))
                .collect();
            let sup: Vec<Complex64> = (0..len - 1)
                .map(|k| Complex64::new(chain.rate(start + k, start + k + 1), 0.0))
                .collect();
            let sol = linalg::thomas_solve(&sub, &diag, &sup, &rhs[offset..offset + len])?;
            out[offset..offset + len].copy_from_slice(&sol);
            offset += len;
        }
        Ok(out)
    } else {
        let a = linalg::shifted_submatrix(chain.q(), &complement, z);
        let rhs_v = DVector::from_vec(rhs.to_vec());
        let sol = a
            .lu()
            .solve(&rhs_v)
            .ok_or_else(|| Error::NoConvergence("killed system is singular".into()))?;
        Ok(sol.iter().copied().collect())
    }
}

/// Assemble complement values and the constant `on_k` into a full vector.
fn assemble(
    k_set: &TargetSet,
    complement: &[usize],
    sub: &[Complex64],
    on_k: Complex64,
) -> Vec<Complex64> {
    let mut full = vec![on_k; k_set.n()];
    for (pos, &state) in complement.iter().enumerate() {
        full[state] = sub[pos];
    }
    for &s in k_set.states() {
        full[s] = on_k;
    }
    full
}

/// `max_{x not in K} |(Q h)(x) - z h(x) - g(x)|`, relative to the data scale.
/// `g` is the inhomogeneity as a full vector (zero for plain potentials).
fn full_residual(
    chain: &FiniteChain,
    k_set: &TargetSet,
    z: Complex64,
    h: &[Complex64],
    g: &[Complex64],
) -> f64 {
    let n = chain.n();
    let q = chain.q();
    let mut worst = 0.0f64;
    for i in 0..n {
        if k_set.contains(i) {
            continue;
        }
        let mut s = Complex64::new(0.0, 0.0);
        for j in 0..n {
            if q[(i, j)] != 0.0 {
                s += q[(i, j)] * h[j];
            }
        }
        worst = worst.max((s - z * h[i] - g[i]).norm());
    }
    let hmax = h.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let gmax = g.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let scale = (rate_scale(chain) + z.norm()) * hmax.max(gmax).max(1.0);
    worst / scale
}

/// `h_z(x) = E_x exp(-z tau_K)` for `Re z >= 0`.
///
/// On `K` the value is 1; as `z -> 0+` the whole potential tends to 1.
///
/// # Errors
///
/// [`Error::Domain`] for `Re z < 0` (that half-plane belongs to
/// [`exp_moment_potential`] and its blow-up analysis).
pub fn z_potential(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
    z: Complex64,
) -> Result<Potential> {
    check_dims(chain, pi, k_set)?;
    if z.re < 0.0 {
        return Err(Error::Domain(format!(
            "z-potential needs Re z >= 0, got {}",
            z.re
        )));
    }
    let kind = PotentialKind::Z { z };
    if k_set.is_full() {
        let values = vec![Complex64::new(1.0, 0.0); k_set.n()];
        return Ok(Potential::new(kind, k_set.clone(), values, 0.0));
    }
    let complement = k_set.complement();
    let r = rates_into(chain, k_set, &complement);
    let rhs: Vec<Complex64> = r.iter().map(|&v| Complex64::new(-v, 0.0)).collect();
    let sub = killed_solve(chain, k_set, z, &rhs)?;
    let full = assemble(k_set, &complement, &sub, Complex64::new(1.0, 0.0));
    let zero = vec![Complex64::new(0.0, 0.0); chain.n()];
    let residual = full_residual(chain, k_set, z, &full, &zero);
    if residual > tol::POTENTIAL_RESIDUAL {
        return Err(Error::Internal(format!(
            "z-potential residual {residual:.3e} exceeds {:.1e}",
            tol::POTENTIAL_RESIDUAL
        )));
    }
    // |E exp(-z tau)| <= 1; allow rounding slack.
    if full.iter().any(|v| v.norm() > 1.0 + 1e-10) {
        return Err(Error::Internal(
            "z-potential exceeds 1 in modulus".into(),
        ));
    }
    Ok(Potential::new(kind, k_set.clone(), full, residual))
}

/// The derivative ladder `h^0 = h_z, ..., h^m = d^m h_z / dz^m`, all sharing
/// one target and shift. `h^m = (-1)^m E_x tau^m exp(-z tau)` vanishes on
/// `K` for `m >= 1` and solves `(Q - z) h^m = m h^{m-1}` off `K`.
pub fn moment_ladder(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
    z: Complex64,
    m_max: usize,
) -> Result<Vec<Potential>> {
    check_dims(chain, pi, k_set)?;
    if z.re < 0.0 {
        return Err(Error::Domain(format!(
            "moment potentials need Re z >= 0, got {}",
            z.re
        )));
    }
    let mut ladder = Vec::with_capacity(m_max + 1);
    ladder.push(z_potential(chain, pi, k_set, z)?);
    if k_set.is_full() {
        // tau = 0: all derivatives vanish identically.
        for m in 1..=m_max {
            ladder.push(Potential::new(
                PotentialKind::Moment { z, m },
                k_set.clone(),
                vec![Complex64::new(0.0, 0.0); k_set.n()],
                0.0,
            ));
        }
        return Ok(ladder);
    }
    let complement = k_set.complement();
    for m in 1..=m_max {
        let prev = ladder.last().unwrap();
        let rhs: Vec<Complex64> = complement
            .iter()
            .map(|&s| m as f64 * prev.value(s))
            .collect();
        let sub = killed_solve(chain, k_set, z, &rhs)?;
        let full = assemble(k_set, &complement, &sub, Complex64::new(0.0, 0.0));
        let g: Vec<Complex64> = (0..chain.n()).map(|i| m as f64 * prev.value(i)).collect();
        let residual = full_residual(chain, k_set, z, &full, &g);
        if residual > tol::POTENTIAL_RESIDUAL {
            return Err(Error::Internal(format!(
                "moment residual {residual:.3e} at order {m} exceeds {:.1e}",
                tol::POTENTIAL_RESIDUAL
            )));
        }
        ladder.push(Potential::new(
            PotentialKind::Moment { z, m },
            k_set.clone(),
            full,
            residual,
        ));
    }
    Ok(ladder)
}

/// Single rung of [`moment_ladder`].
pub fn moment_potential(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
    z: Complex64,
    m: usize,
) -> Result<Potential> {
    Ok(moment_ladder(chain, pi, k_set, z, m)?.pop().unwrap())
}

/// `phi(x) = E_x exp(alpha tau_K)`, `0 < alpha < lambda_0(K)`.
///
/// # Errors
///
/// [`Error::Blowup`] (with both `alpha` and the threshold) at or beyond the
/// principal killed eigenvalue, [`Error::Domain`] for `alpha <= 0`.
pub fn exp_moment_potential(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
    alpha: f64,
) -> Result<Potential> {
    check_dims(chain, pi, k_set)?;
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!(
            "exponential moment needs alpha > 0, got {alpha}"
        )));
    }
    let kind = PotentialKind::ExpMoment { alpha };
    if k_set.is_full() {
        let values = vec![Complex64::new(1.0, 0.0); k_set.n()];
        return Ok(Potential::new(kind, k_set.clone(), values, 0.0));
    }
    let (lambda0, _, _) = spectral::killed_principal(chain, pi, k_set)?;
    if alpha >= lambda0 {
        return Err(Error::Blowup {
            alpha,
            alpha_star: lambda0,
        });
    }
    let complement = k_set.complement();
    let r = rates_into(chain, k_set, &complement);
    let rhs: Vec<Complex64> = r.iter().map(|&v| Complex64::new(-v, 0.0)).collect();
    let z = Complex64::new(-alpha, 0.0);
    let sub = killed_solve(chain, k_set, z, &rhs)?;
    let full = assemble(k_set, &complement, &sub, Complex64::new(1.0, 0.0));
    let zero = vec![Complex64::new(0.0, 0.0); chain.n()];
    let residual = full_residual(chain, k_set, z, &full, &zero);
    if residual > tol::POTENTIAL_RESIDUAL {
        return Err(Error::Internal(format!(
            "exponential-moment residual {residual:.3e} exceeds {:.1e}",
            tol::POTENTIAL_RESIDUAL
        )));
    }
    if full.iter().any(|v| v.re < 1.0 - 1e-9 || v.im.abs() > 1e-12 * v.re.abs()) {
        return Err(Error::Internal(
            "exponential moment fell below 1 despite alpha < lambda_0".into(),
        ));
    }
    Ok(Potential::new(kind, k_set.clone(), full, residual))
}

/// Two-route blow-up threshold report. `alpha_star` is the canonical value
/// (the eigenvalue route); the bisection route and the Poincare-side data
/// `pi(K)`, `gap`, and the certified lower bound `pi(K) * gap` ride along.
#[derive(Debug, Clone)]
pub struct ThresholdReport {
    pub alpha_star: f64,
    pub eigen_route: f64,
    pub bisection_route: f64,
    pub pi_k: f64,
    pub gap: f64,
    pub lower_bound: f64,
    /// `alpha_star - lower_bound`; nonnegative up to rounding by the
    /// comparison theorem.
    pub slack: f64,
}

impl ThresholdReport {
    pub fn to_json(&self) -> Value {
        json!({
            "alpha_star": self.alpha_star,
            "eigen_route": self.eigen_route,
            "bisection_route": self.bisection_route,
            "pi_K": self.pi_k,
            "gap": self.gap,
            "lower_bound": self.lower_bound,
            "slack": self.slack,
        })
    }
}

/// Compute `alpha_star = sup { alpha : E_x exp(alpha tau_K) < inf }`.
///
/// Route one: the principal Dirichlet eigenvalue of the killed generator.
/// Route two: bisection on the predicate "the drift solve
/// `(Q_V + alpha) h = -r` succeeds with strictly positive `h`", which flips
/// exactly at the eigenvalue (see the module notes). The two must agree to
/// [`tol::THRESHOLD_DUAL`] or the call fails rather than reporting either.
///
/// `K` covering the whole space gives `alpha_star = +inf` (the hitting time
/// is identically zero): reported with infinite routes and zero-by-convention
/// slack fields left infinite.
pub fn blowup_threshold(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
) -> Result<ThresholdReport> {
    check_dims(chain, pi, k_set)?;
    let gap_report = spectral::spectral_gap(chain, pi)?;
    let pi_k = pi.mass(k_set);
    if k_set.is_full() {
        return Ok(ThresholdReport {
            alpha_star: f64::INFINITY,
            eigen_route: f64::INFINITY,
            bisection_route: f64::INFINITY,
            pi_k,
            gap: gap_report.gap,
            lower_bound: pi_k * gap_report.gap,
            slack: f64::INFINITY,
        });
    }
    let (lambda0, _, _) = spectral::killed_principal(chain, pi, k_set)?;

    // Bisection route. The predicate is true on [0, lambda_0), false above.
    let complement = k_set.complement();
    let r = rates_into(chain, k_set, &complement);
    let rhs: Vec<Complex64> = r.iter().map(|&v| Complex64::new(-v, 0.0)).collect();
    let positive_solution = |alpha: f64| -> bool {
        match killed_solve(chain, k_set, Complex64::new(-alpha, 0.0), &rhs) {
            Ok(sol) => sol.iter().all(|v| v.re > 0.0 && v.re.is_finite()),
            Err(_) => false,
        }
    };
    let min_exit = complement
        .iter()
        .map(|&i| chain.exit_rate(i))
        .fold(f64::INFINITY, f64::min);
    let mut lo = 0.0f64;
    let mut hi = min_exit + 1.0; // lambda_0 <= min exit rate < hi
    if positive_solution(hi) {
        return Err(Error::Internal(format!(
            "threshold predicate still true at {hi:.6e}, above the Rayleigh bound"
        )));
    }
    while hi - lo > tol::THRESHOLD_BISECTION * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if positive_solution(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bisect = 0.5 * (lo + hi);

    let agreement = (bisect - lambda0).abs() / lambda0.max(1.0);
    if agreement > tol::THRESHOLD_DUAL {
        return Err(Error::Internal(format!(
            "threshold routes disagree: eigenvalue {lambda0:.12e} vs bisection {bisect:.12e}"
        )));
    }
    let lower_bound = pi_k * gap_report.gap;
    Ok(ThresholdReport {
        alpha_star: lambda0,
        eigen_route: lambda0,
        bisection_route: bisect,
        pi_k,
        gap: gap_report.gap,
        lower_bound,
        slack: lambda0 - lower_bound,
    })
}

/// Lyapunov certificate extracted from an exponential moment: the function
/// `phi = E_x exp(alpha tau_K)` satisfies `(Q phi)(x) = -alpha phi(x)` for
/// `x` off `K` (drift), and `b = max_{x in K} (Q phi + alpha phi)(x)` bounds
/// the compensation needed on `K`.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub phi: Potential,
    pub alpha: f64,
    /// `max_K (Q phi + alpha phi)`.
    pub b: f64,
    /// `max off K |(Q phi + alpha phi)|`, relative to the rate scale: how
    /// exactly the drift identity holds.
    pub drift_residual: f64,
}

impl LyapunovCertificate {
    pub fn to_json(&self) -> Value {
        json!({
            "phi": self.phi.to_json(),
            "alpha": self.alpha,
            "b": self.b,
            "drift_residual": self.drift_residual,
        })
    }
}

/// Build the Lyapunov certificate at rate `alpha` (see
/// [`LyapunovCertificate`]). Same domain restrictions as
/// [`exp_moment_potential`].
pub fn lyapunov_potential(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
    alpha: f64,
) -> Result<LyapunovCertificate> {
    let mut phi = exp_moment_potential(chain, pi, k_set, alpha)?;
    phi.kind = PotentialKind::Lyapunov { alpha };
    let v = phi.real_vector();
    let qphi = chain.apply(&v);
    let scale = rate_scale(chain) * v.amax().max(1.0);
    let mut b = f64::NEG_INFINITY;
    let mut res = 0.0f64;
    for i in 0..chain.n() {
        let drift = qphi[i] + alpha * v[i];
        if k_set.contains(i) {
            b = b.max(drift);
        } else {
            res = res.max(drift.abs());
        }
    }
    Ok(LyapunovCertificate {
        phi,
        alpha,
        b,
        drift_residual: res / scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state() -> (FiniteChain, InvariantMeasure, TargetSet) {
        let chain = FiniteChain::birth_death(&[1.0], &[2.0]).unwrap();
        let pi = chain.invariant_measure().unwrap();
        let k = TargetSet::from_states(2, &[0]).unwrap();
        (chain, pi, k)
    }

    #[test]
    fn two_state_z_potential_closed_form() {
        // From state 1 the hitting time of {0} is Exp(2), so
        // h_z(1) = 2 / (2 + z).
        let (chain, pi, k) = two_state();
        let h = z_potential(&chain, &pi, &k, Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(h.values_re()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(h.values_re()[1], 2.0 / 3.0, epsilon = 1e-14);
        assert!(h.is_real());
        assert!(h.residual() <= tol::POTENTIAL_RESIDUAL);

        // Complex shift: 2 / (3 + i) = 0.6 - 0.2 i.
        let hc = z_potential(&chain, &pi, &k, Complex64::new(1.0, 1.0)).unwrap();
        assert_relative_eq!(hc.value(1).re, 0.6, epsilon = 1e-14);
        assert_relative_eq!(hc.value(1).im, -0.2, epsilon = 1e-14);

        // z = 0 gives the constant 1.
        let h0 = z_potential(&chain, &pi, &k, Complex64::new(0.0, 0.0)).unwrap();
        assert_relative_eq!(h0.values_re()[1], 1.0, epsilon = 1e-14);

        // Left half-plane rejected.
        assert!(z_potential(&chain, &pi, &k, Complex64::new(-0.1, 0.0)).is_err());
    }

    #[test]
    fn two_state_moment_ladder_closed_form() {
        // h_z(1) = 2/(2+z): derivatives -2/(2+z)^2, 4/(2+z)^3, -12/(2+z)^4.
        let (chain, pi, k) = two_state();
        let z = Complex64::new(1.0, 0.0);
        let ladder = moment_ladder(&chain, &pi, &k, z, 3).unwrap();
        assert_relative_eq!(ladder[0].value(1).re, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(ladder[1].value(1).re, -2.0 / 9.0, epsilon = 1e-14);
        assert_relative_eq!(ladder[2].value(1).re, 4.0 / 27.0, epsilon = 1e-14);
        assert_relative_eq!(ladder[3].value(1).re, -12.0 / 81.0, epsilon = 1e-14);
        // Derivatives vanish on K.
        for p in &ladder[1..] {
            assert_eq!(p.value(0), Complex64::new(0.0, 0.0));
        }
        // Mean hitting time from the ladder at z = 0: E tau = -h^1(0) = 1/2.
        let at0 = moment_potential(&chain, &pi, &k, Complex64::new(0.0, 0.0), 1).unwrap();
        assert_relative_eq!(-at0.value(1).re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn two_state_exp_moment_and_blowup() {
        // E_1 exp(alpha Exp(2)) = 2/(2 - alpha), threshold alpha_star = 2.
        let (chain, pi, k) = two_state();
        let phi = exp_moment_potential(&chain, &pi, &k, 1.0).unwrap();
        assert_relative_eq!(phi.values_re()[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(phi.values_re()[0], 1.0, epsilon = 1e-15);

        // 0.99 alpha_star works, 1.01 alpha_star reports the threshold.
        assert!(exp_moment_potential(&chain, &pi, &k, 1.98).is_ok());
        match exp_moment_potential(&chain, &pi, &k, 2.02) {
            Err(Error::Blowup { alpha, alpha_star }) => {
                assert_eq!(alpha, 2.02);
                assert_relative_eq!(alpha_star, 2.0, epsilon = 1e-12);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
        assert!(matches!(
            exp_moment_potential(&chain, &pi, &k, 2.0),
            Err(Error::Blowup { .. })
        ));
        assert!(exp_moment_potential(&chain, &pi, &k, 0.0).is_err());
    }

    #[test]
    fn two_state_threshold_equality_case() {
        // K = {0}: alpha_star = 2 and pi(K) * gap = (2/3) * 3 = 2 exactly.
        let (chain, pi, k) = two_state();
        let report = blowup_threshold(&chain, &pi, &k).unwrap();
        assert_relative_eq!(report.alpha_star, 2.0, epsilon = 1e-10);
        assert_relative_eq!(report.bisection_route, 2.0, epsilon = 1e-9);
        assert_relative_eq!(report.lower_bound, 2.0, epsilon = 1e-10);
        assert!(report.slack.abs() <= 1e-9);
        assert_relative_eq!(report.pi_k, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(report.gap, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn full_target_sentinels() {
        let (chain, pi, _) = two_state();
        let full = TargetSet::full(2);
        let report = blowup_threshold(&chain, &pi, &full).unwrap();
        assert!(report.alpha_star.is_infinite());
        let h = z_potential(&chain, &pi, &full, Complex64::new(2.0, 0.0)).unwrap();
        assert_eq!(h.values_re(), &[1.0, 1.0]);
        let phi = exp_moment_potential(&chain, &pi, &full, 5.0).unwrap();
        assert_eq!(phi.values_re(), &[1.0, 1.0]);
    }

    #[test]
    fn split_complement_threshold() {
        // Path of 5, K = {2}: the killed system falls apart into {0,1} and
        // {3,4}; threshold still matches the eigenvalue route (checked
        // internally) and the exponential moment converges below it.
        let chain = FiniteChain::birth_death(&[1.0; 4], &[1.0; 4]).unwrap();
        let pi = chain.invariant_measure().unwrap();
        let k = TargetSet::from_states(5, &[2]).unwrap();
        let report = blowup_threshold(&chain, &pi, &k).unwrap();
        assert!(report.slack >= -1e-10, "slack {}", report.slack);
        let phi = exp_moment_potential(&chain, &pi, &k, 0.9 * report.alpha_star).unwrap();
        assert!(phi.values_re().iter().all(|&v| v >= 1.0 - 1e-12));
    }

    #[test]
    fn lyapunov_two_state() {
        let (chain, pi, k) = two_state();
        let cert = lyapunov_potential(&chain, &pi, &k, 1.0).unwrap();
        assert_relative_eq!(cert.b, 2.0, epsilon = 1e-12);
        assert!(cert.drift_residual <= tol::WEAK_IDENTITY);
        assert_eq!(cert.phi.kind().kind_str(), "lyapunov");
    }

    #[test]
    fn potential_json_contract() {
        let (chain, pi, k) = two_state();
        let h = z_potential(&chain, &pi, &k, Complex64::new(1.0, 0.5)).unwrap();
        let v = h.to_json();
        for field in ["kind", "K", "param", "values_re", "values_im", "residual"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        assert_eq!(v["kind"], "z");
        assert_eq!(v["K"], json!([0]));
        assert_eq!(v["param"]["im"], 0.5);
    }

    fn conductance_chain(n: usize, pi_raw: &[f64], w: &[f64]) -> (FiniteChain, InvariantMeasure) {
        let mut q = nalgebra::DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut wij = w[idx % w.len()];
                idx += 1;
                if j == i + 1 {
                    wij += 0.2;
                }
                q[(i, j)] = wij / pi_raw[i];
                q[(j, i)] = wij / pi_raw[j];
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
            q[(i, i)] = -s;
        }
        let chain = FiniteChain::new(q).unwrap();
        let pi = chain.invariant_measure().unwrap();
        (chain, pi)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn threshold_dominates_poincare_bound(
            n in 3usize..8,
            pi_raw in proptest::collection::vec(0.05f64..1.0, 8),
            w in proptest::collection::vec(0.0f64..1.0, 28),
            k_pick in proptest::collection::vec(0usize..8, 1..3),
        ) {
            let (chain, pi) = conductance_chain(n, &pi_raw[..n], &w);
            let states: Vec<usize> = k_pick.iter().map(|s| s % n).collect();
            let k = TargetSet::from_states(n, &states).unwrap();
            if k.is_full() { return Ok(()); }
            let report = blowup_threshold(&chain, &pi, &k).unwrap();
            // The comparison bound alpha_star >= pi(K) * gap, with the
            // documented relative slack.
            prop_assert!(
                report.slack >= -tol::BOUND_SLACK * report.alpha_star.max(1.0),
                "slack {} alpha_star {}", report.slack, report.alpha_star
            );
        }

        #[test]
        fn z_potential_bounds_hold(
            n in 3usize..8,
            pi_raw in proptest::collection::vec(0.05f64..1.0, 8),
            w in proptest::collection::vec(0.0f64..1.0, 28),
            z_re in 0.01f64..4.0,
        ) {
            let (chain, pi) = conductance_chain(n, &pi_raw[..n], &w);
            let k = TargetSet::from_states(n, &[0]).unwrap();
            let h = z_potential(&chain, &pi, &k, Complex64::new(z_re, 0.0)).unwrap();
            for &v in h.values_re() {
                prop_assert!(v > 0.0 && v <= 1.0 + 1e-12);
            }
            // Monotone in z: a larger shift can only shrink the potential.
            let h2 = z_potential(&chain, &pi, &k, Complex64::new(z_re + 1.0, 0.0)).unwrap();
            for i in 0..n {
                prop_assert!(h2.values_re()[i] <= h.values_re()[i] + 1e-12);
            }
        }
    }
}
