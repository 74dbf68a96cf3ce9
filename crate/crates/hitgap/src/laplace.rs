//! Profile potentials `E_x psi(tau_K)` by two independent routes, plus the
//! semigroup propagation both share.
//!
//! The *direct* route integrates in the time domain,
//!
//! ```text
//!   E_x psi(tau) = psi(0) + int_0^inf psi'(t) P_x(tau > t) dt,
//! ```
//!
//! marching the survival probabilities through the killed semigroup and
//! pairing them with Gauss-Legendre panels split at the knots of `psi`.
//! It is slow and plain - exactly what an oracle should be.
//!
//! The *contour* route inverts the two-sided transform along a vertical
//! line `Re z = sigma > 0`,
//!
//! ```text
//!   E_x psi(tau) = (1/2pi) int_R Psi(sigma + iy) h_{sigma+iy}(x) dy,
//! ```
//!
//! where each `h_z` is a resolvent solve. Truncating the line at `|y| = T`
//! costs at most `min(C2/(pi T), C4/(3 pi T^3))` by the transform decay
//! bounds, with `C_k = int e^{sigma t} |psi^(k)|`; the trapezoid
//! discretization error decays geometrically because the integrand extends
//! analytically past the line (the resolvent is analytic for
//! `Re z > -lambda_0`). The two routes share nothing but the generator,
//! which is what makes their agreement a meaningful check.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::chain::{FiniteChain, InvariantMeasure, TargetSet};
use crate::error::{Error, Result};
use crate::numeric::gauss_legendre;
use crate::potential::{z_potential, Potential, PotentialKind};
use crate::psi::PsiFunction;
use crate::tol;

/// Size limit below which propagators go through cached dense matrix
/// exponentials (machine-precision marching). Larger systems fall back to
/// explicit integration, whose accuracy is recorded in the result.
const EXPM_LIMIT: usize = 256;

/// Time-domain quadrature controls for the direct route.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    /// Maximal panel width between knots.
    pub panel: f64,
    /// Gauss-Legendre nodes per panel.
    pub nodes: usize,
    /// Hard cap on the integration horizon; `None` lets tail estimates
    /// decide. When the cap clips mass above the tolerance the run fails
    /// with a suggested horizon instead of silently truncating.
    pub horizon: Option<f64>,
    /// Relative mass below which a tail may be dropped.
    pub survival_cutoff: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            panel: 0.25,
            nodes: 12,
            horizon: None,
            survival_cutoff: tol::SURVIVAL_CUTOFF,
        }
    }
}

/// A generator (or killed sub-generator) in a form cheap to apply.
enum Action {
    Tridiag {
        sub: Vec<f64>,
        diag: Vec<f64>,
        sup: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

impl Action {
    fn full(chain: &FiniteChain) -> Action {
        if chain.is_tridiagonal() {
            let n = chain.n();
            Action::Tridiag {
                sub: (1..n).map(|i| chain.rate(i, i - 1)).collect(),
                diag: (0..n).map(|i| chain.rate(i, i)).collect(),
                sup: (0..n - 1).map(|i| chain.rate(i, i + 1)).collect(),
            }
        } else {
            Action::Dense(chain.q().clone())
        }
    }

    /// Principal submatrix on `states` (ascending). For tridiagonal chains
    /// the result is again tridiagonal: states left out sever the only
    /// couplings that could bridge them.
    fn killed(chain: &FiniteChain, states: &[usize]) -> Action {
        if chain.is_tridiagonal() {
            let m = states.len();
            Action::Tridiag {
                sub: (1..m)
                    .map(|k| chain.rate(states[k], states[k - 1]))
                    .collect(),
                diag: states.iter().map(|&s| chain.rate(s, s)).collect(),
                sup: (0..m.saturating_sub(1))
                    .map(|k| chain.rate(states[k], states[k + 1]))
                    .collect(),
            }
        } else {
            let q = chain.q();
            let m = states.len();
            let mut a = DMatrix::zeros(m, m);
            for (r, &i) in states.iter().enumerate() {
                for (c, &j) in states.iter().enumerate() {
                    a[(r, c)] = q[(i, j)];
                }
            }
            Action::Dense(a)
        }
    }

    fn n(&self) -> usize {
        match self {
            Action::Tridiag { diag, .. } => diag.len(),
            Action::Dense(m) => m.nrows(),
        }
    }

    fn max_exit(&self) -> f64 {
        match self {
            Action::Tridiag { diag, .. } => diag.iter().fold(0.0f64, |m, d| m.max(d.abs())),
            Action::Dense(m) => (0..m.nrows()).fold(0.0f64, |w, i| w.max(m[(i, i)].abs())),
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Action::Tridiag { sub, diag, sup } => {
                let n = diag.len();
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = diag[i];
                    if i > 0 {
                        m[(i, i - 1)] = sub[i - 1];
                    }
                    if i + 1 < n {
                        m[(i, i + 1)] = sup[i];
                    }
                }
                m
            }
            Action::Dense(m) => m.clone(),
        }
    }

    fn apply(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Action::Tridiag { sub, diag, sup } => {
                let n = diag.len();
                for i in 0..n {
                    let mut s = diag[i] * v[i];
                    if i > 0 {
                        s += sub[i - 1] * v[i - 1];
                    }
                    if i + 1 < n {
                        s += sup[i] * v[i + 1];
                    }
                    out[i] = s;
                }
            }
            Action::Dense(m) => out.gemv(1.0, m, v, 0.0),
        }
    }
}

/// Forward-in-time propagator for `v' = A v`. Small systems multiply by
/// cached `exp(A dt)` factors (exact to rounding); large ones take RK4
/// steps bounded by the stiffness, with the resulting accuracy class
/// reported through [`Marcher::step_error`].
struct Marcher {
    action: Action,
    expm_base: Option<DMatrix<f64>>,
    cache: HashMap<u64, DMatrix<f64>>,
    v: DVector<f64>,
    t: f64,
    dt_cap: f64,
    rk4_steps: u64,
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    tmp: DVector<f64>,
}

impl Marcher {
    fn new(action: Action, v0: DVector<f64>) -> Marcher {
        let n = action.n();
        let expm_base = (n <= EXPM_LIMIT).then(|| action.to_dense());
        // |eigenvalues| <= 2 max_exit (Gershgorin); h |lambda| <= 0.2 keeps
        // the RK4 per-step defect below ~3e-7 per mode.
        let dt_cap = 0.1 / action.max_exit().max(1e-300);
        Marcher {
            action,
            expm_base,
            cache: HashMap::new(),
            v: v0,
            t: 0.0,
            dt_cap,
            rk4_steps: 0,
            k1: DVector::zeros(n),
            k2: DVector::zeros(n),
            k3: DVector::zeros(n),
            k4: DVector::zeros(n),
            tmp: DVector::zeros(n),
        }
    }

    fn advance_to(&mut self, t: f64) -> Result<&DVector<f64>> {
        let delta = t - self.t;
        if delta < -1e-12 * t.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "semigroup marcher asked to run backward ({} -> {})",
                self.t, t
            )));
        }
        if delta <= 0.0 {
            return Ok(&self.v);
        }
        if let Some(a) = &self.expm_base {
            let m = self
                .cache
                .entry(delta.to_bits())
                .or_insert_with(|| (a * delta).exp());
            let w = &*m * &self.v;
            self.v = w;
        } else {
            let steps = (delta / self.dt_cap).ceil().max(1.0) as u64;
            let h = delta / steps as f64;
            for _ in 0..steps {
                self.action.apply(&self.v, &mut self.k1);
                self.tmp.copy_from(&self.v);
                self.tmp.axpy(0.5 * h, &self.k1, 1.0);
                self.action.apply(&self.tmp, &mut self.k2);
                self.tmp.copy_from(&self.v);
                self.tmp.axpy(0.5 * h, &self.k2, 1.0);
                self.action.apply(&self.tmp, &mut self.k3);
                self.tmp.copy_from(&self.v);
                self.tmp.axpy(h, &self.k3, 1.0);
                self.action.apply(&self.tmp, &mut self.k4);
                self.v.axpy(h / 6.0, &self.k1, 1.0);
                self.v.axpy(h / 3.0, &self.k2, 1.0);
                self.v.axpy(h / 3.0, &self.k3, 1.0);
                self.v.axpy(h / 6.0, &self.k4, 1.0);
            }
            self.rk4_steps += steps;
        }
        self.t = t;
        Ok(&self.v)
    }

    fn v_max(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    /// Upper estimate of accumulated time-stepping error (zero on the
    /// matrix-exponential route).
    fn step_error(&self) -> f64 {
        // Per-mode defect of RK4 at h|lambda| <= 0.2 is <= 0.2^5/120; modes
        // contract afterwards, so a plain per-step sum is conservative.
        self.rk4_steps as f64 * 0.2f64.powi(5) / 120.0
    }
}

/// Split `[start, end]` into panels of at most `width` that never straddle
/// a knot. Panels start at `first` wide and grow by 1.4x until they reach
/// `width`: the survival vector has modes decaying as fast as the largest
/// exit rate, and fixed-width panels cannot resolve that initial transient
/// on stiff chains. Pass `first = width` when the transient is already
/// dead at `start`.
fn panel_boundaries(
    start: f64,
    end: f64,
    width: f64,
    first: f64,
    knots: &[f64],
) -> Vec<(f64, f64)> {
    let mut interior: Vec<f64> = knots
        .iter()
        .copied()
        .filter(|&k| k > start + 1e-12 && k < end - 1e-12)
        .collect();
    interior.sort_by(f64::total_cmp);
    let mut panels = Vec::new();
    let mut t = start;
    let mut ki = 0;
    let mut w = first.clamp(width * 1e-9, width);
    while t < end - 1e-12 {
        while ki < interior.len() && interior[ki] <= t + 1e-12 {
            ki += 1;
        }
        let mut next = t + w;
        if ki < interior.len() && interior[ki] < next {
            next = interior[ki];
        }
        let next = next.min(end);
        panels.push((t, next));
        t = next;
        w = (w * 1.4).min(width);
    }
    panels
}

/// `E_x psi(tau_K)` by time-domain quadrature (see module docs).
pub fn psi_potential_direct(
    chain: &FiniteChain,
    k_set: &TargetSet,
    psi: &PsiFunction,
    quad: &QuadratureSpec,
) -> Result<Potential> {
    let (values, residual) = psi_deriv_direct(chain, k_set, psi, 0, quad)?;
    Ok(Potential::new(
        PotentialKind::PsiDirect { psi: psi.to_json() },
        k_set.clone(),
        values,
        residual,
    ))
}

/// Potential of the `order`-th derivative profile, `E_x psi^{(order)}(tau)`.
/// Order zero is the plain profile; order one gives `h_{psi'}`, the right
/// side of the energy-pairing identity.
pub(crate) fn psi_deriv_direct(
    chain: &FiniteChain,
    k_set: &TargetSet,
    psi: &PsiFunction,
    order: usize,
    quad: &QuadratureSpec,
) -> Result<(Vec<Complex64>, f64)> {
    if k_set.n() != chain.n() {
        return Err(Error::Shape {
            what: "target set",
            expected: format!("{}", chain.n()),
            got: format!("{}", k_set.n()),
        });
    }
    if quad.nodes < 2 || !(quad.panel > 0.0) {
        return Err(Error::Domain(
            "quadrature needs at least 2 nodes and a positive panel width".into(),
        ));
    }
    let base = psi.eval_deriv(order, 0.0);
    let n = chain.n();
    if k_set.is_full() {
        return Ok((vec![Complex64::new(base, 0.0); n], 0.0));
    }
    let complement = k_set.complement();
    let (gl_x, gl_w) = gauss_legendre(quad.nodes);
    let mut marcher = Marcher::new(
        Action::killed(chain, &complement),
        DVector::from_element(complement.len(), 1.0),
    );
    let mut acc = vec![0.0f64; complement.len()];
    let cutoff = quad.survival_cutoff * base.abs().max(1.0);
    let knots = psi.knots();

    // Fastest decay the survival vector can carry (Gershgorin cap on the
    // killed spectrum); panel runs entering that transient start graded.
    let sigma_max = 2.0
        * (0..n)
            .map(|i| -chain.rate(i, i))
            .fold(0.0f64, f64::max)
            .max(1e-300);
    let first_width = |t0: f64| -> f64 {
        if t0 * sigma_max <= 30.0 {
            (3.0 / sigma_max).min(quad.panel)
        } else {
            quad.panel
        }
    };

    let do_panel = |t0: f64, t1: f64, marcher: &mut Marcher, acc: &mut [f64]| -> Result<()> {
        let half = 0.5 * (t1 - t0);
        let mid = 0.5 * (t0 + t1);
        for (x, w) in gl_x.iter().zip(gl_w.iter()) {
            let t = mid + half * x;
            let g = psi.eval_deriv(order + 1, t);
            if g == 0.0 {
                continue;
            }
            let v = marcher.advance_to(t)?;
            let c = w * half * g;
            for (a, vi) in acc.iter_mut().zip(v.iter()) {
                *a += c * vi;
            }
        }
        Ok(())
    };

    let mut truncation = 0.0f64;
    match psi.derivative_support() {
        Some((s0, s1)) if s1 > 0.0 => {
            let start = s0.max(0.0);
            let end = quad.horizon.unwrap_or(f64::INFINITY).min(s1);
            for (t0, t1) in panel_boundaries(start, end, quad.panel, first_width(start), &knots)
            {
                do_panel(t0, t1, &mut marcher, &mut acc)?;
            }
            if end < s1 - 1e-12 {
                let estimate = psi.abs_deriv_tail(order + 1, end) * marcher.v_max();
                if estimate > cutoff {
                    return Err(Error::Horizon {
                        estimate,
                        tol: cutoff,
                        suggested: s1,
                    });
                }
                truncation = estimate;
            }
        }
        Some(_) => {} // degenerate derivative support: nothing to integrate
        None => {
            // Unbounded tail: march panel by panel until the remaining
            // profile mass, damped by the worst surviving probability, is
            // negligible.
            let hard_end = quad.horizon.unwrap_or(f64::INFINITY);
            let mut t0 = 0.0f64;
            loop {
                let t1 = (t0 + quad.panel).min(hard_end);
                for (p0, p1) in panel_boundaries(t0, t1, quad.panel, first_width(t0), &knots) {
                    do_panel(p0, p1, &mut marcher, &mut acc)?;
                }
                t0 = t1;
                let estimate = psi.abs_deriv_tail(order + 1, t0) * marcher.v_max();
                if estimate <= cutoff {
                    truncation = estimate;
                    break;
                }
                if t0 >= hard_end {
                    return Err(Error::Horizon {
                        estimate,
                        tol: cutoff,
                        suggested: suggest_horizon(psi, order, cutoff, t0),
                    });
                }
                if t0 > 1e9 {
                    return Err(Error::NoConvergence(
                        "profile tail mass does not decay within t <= 1e9".into(),
                    ));
                }
            }
        }
    }

    let mut full = vec![Complex64::new(base, 0.0); n];
    for (pos, &x) in complement.iter().enumerate() {
        full[x] = Complex64::new(base + acc[pos], 0.0);
    }
    Ok((full, truncation.max(marcher.step_error())))
}

/// Smallest horizon at which the undamped tail mass alone meets the cutoff;
/// conservative because survival only shrinks it further.
fn suggest_horizon(psi: &PsiFunction, order: usize, cutoff: f64, from: f64) -> f64 {
    let mut t = from.max(1.0);
    for _ in 0..60 {
        if psi.abs_deriv_tail(order + 1, t) <= cutoff {
            return t;
        }
        t *= 2.0;
    }
    f64::INFINITY
}

/// A contour prescription: line position, truncation height, node spacing,
/// and the truncation bound they certify.
#[derive(Debug, Clone)]
pub struct ContourPlan {
    pub sigma: f64,
    pub t_im: f64,
    pub step: f64,
    pub nodes: usize,
    pub truncation_bound: f64,
}

/// Optional overrides for [`psi_potential_contour`].
#[derive(Debug, Clone, Default)]
pub struct ContourOpts {
    pub t_im: Option<f64>,
    pub step: Option<f64>,
    /// Total error budget; defaults to [`tol::CONTOUR_AGREEMENT`].
    pub target: Option<f64>,
}

/// Choose a truncation height and node spacing meeting `target`.
///
/// Half the budget goes to truncation via the envelope bounds; the node
/// spacing is set from the analyticity width (`sigma/4`) and the fastest
/// oscillation `e^{i y t}` the support can produce, under which trapezoid
/// error is geometrically small.
pub fn plan_contour(psi: &PsiFunction, sigma: f64, target: f64) -> Result<ContourPlan> {
    psi.check_inversion_mode()?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "contour line must have sigma > 0, got {sigma}"
        )));
    }
    if !(target > 0.0) {
        return Err(Error::Domain("contour error target must be positive".into()));
    }
    let c2 = psi.envelope(2, sigma)?;
    let c4 = psi.envelope(4, sigma)?;
    let half = 0.5 * target;
    let pi = std::f64::consts::PI;
    let t4 = (c4 / (3.0 * pi * half)).cbrt();
    let t2 = c2 / (pi * half);
    let t_im = t4.min(t2).max(4.0 * sigma);
    let (lo, hi) = psi.support().expect("inversion mode implies compact support");
    let t_extent = lo.abs().max(hi.abs());
    let step = (sigma / 4.0).min(pi / (4.0 * (1.0 + t_extent)));
    let n_half = (t_im / step).ceil() as usize;
    Ok(ContourPlan {
        sigma,
        t_im,
        step,
        nodes: 2 * n_half + 1,
        truncation_bound: truncation_bound(c2, c4, t_im),
    })
}

fn truncation_bound(c2: f64, c4: f64, t_im: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (c2 / (pi * t_im)).min(c4 / (3.0 * pi * t_im.powi(3)))
}

/// Contour-route potential with its certification data.
#[derive(Debug)]
pub struct ContourOutcome {
    pub potential: Potential,
    pub sigma: f64,
    pub t_im: f64,
    pub step: f64,
    pub nodes: usize,
    /// Certified bound on the mass dropped beyond `|Im z| = t_im`.
    pub truncation_bound: f64,
    /// Energy-norm tail diagnostic `(2/pi) C2 sqrt(2 + 1/sigma) / sqrt(T)`:
    /// the same truncation, measured in the graph norm instead of pointwise.
    pub envelope_tail: f64,
    /// Leftover imaginary part, which conjugate symmetry should cancel.
    pub imag_residue: f64,
}

/// `E_x psi(tau_K)` by contour inversion (see module docs).
pub fn psi_potential_contour(
    chain: &FiniteChain,
    pi_m: &InvariantMeasure,
    k_set: &TargetSet,
    psi: &PsiFunction,
    sigma: f64,
    opts: &ContourOpts,
) -> Result<ContourOutcome> {
    let target = opts.target.unwrap_or(tol::CONTOUR_AGREEMENT);
    let plan = plan_contour(psi, sigma, target)?;
    let t_im = opts.t_im.unwrap_or(plan.t_im);
    let step = opts.step.unwrap_or(plan.step);
    if !(t_im > 0.0 && step > 0.0) {
        return Err(Error::Domain(
            "contour height and step must be positive".into(),
        ));
    }
    let c2 = psi.envelope(2, sigma)?;
    let c4 = psi.envelope(4, sigma)?;
    let bound = truncation_bound(c2, c4, t_im);
    if bound > target {
        return Err(Error::Truncation {
            bound,
            tol: target,
            suggested: plan.t_im,
        });
    }

    let n = chain.n();
    let n_half = (t_im / step).ceil() as i64;
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    let scale = step / (2.0 * std::f64::consts::PI);
    for k in -n_half..=n_half {
        let z = Complex64::new(sigma, k as f64 * step);
        let psi_hat = psi.laplace_transform(z)?;
        let w = if k.abs() == n_half { 0.5 } else { 1.0 };
        let coeff = psi_hat * (w * scale);
        if coeff.norm() == 0.0 {
            continue;
        }
        let h = z_potential(chain, pi_m, k_set, z)?;
        for (i, a) in acc.iter_mut().enumerate() {
            *a += coeff * h.value(i);
        }
    }

    let re_max = acc.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
    let im_max = acc.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    let imag_residue = im_max / re_max.max(1.0);
    if imag_residue > tol::CONTOUR_IMAG {
        return Err(Error::Internal(format!(
            "contour sum left an imaginary residue of {imag_residue:.3e}; \
             conjugate symmetry should cancel it"
        )));
    }
    let values: Vec<Complex64> = acc.iter().map(|v| Complex64::new(v.re, 0.0)).collect();
    let potential = Potential::new(
        PotentialKind::PsiContour {
            psi: psi.to_json(),
            sigma,
        },
        k_set.clone(),
        values,
        bound.max(imag_residue),
    );
    let actual_t = n_half as f64 * step;
    Ok(ContourOutcome {
        potential,
        sigma,
        t_im: actual_t,
        step,
        nodes: (2 * n_half + 1) as usize,
        truncation_bound: bound,
        envelope_tail: (2.0 / std::f64::consts::PI) * c2 * (2.0 + 1.0 / sigma).sqrt()
            / actual_t.sqrt(),
        imag_residue,
    })
}

/// `exp(tQ) f`: exact matrix exponential for small chains, stiffness-capped
/// RK4 otherwise.
pub fn semigroup_apply(chain: &FiniteChain, f: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    Ok(semigroup_grid(chain, f, &[t])?.pop().expect("one snapshot"))
}

/// `exp(t_k Q) f` on a nondecreasing grid of times, marched in one pass.
pub fn semigroup_grid(
    chain: &FiniteChain,
    f: &DVector<f64>,
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    if f.len() != chain.n() {
        return Err(Error::Shape {
            what: "semigroup argument",
            expected: format!("{}", chain.n()),
            got: format!("{}", f.len()),
        });
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Domain("semigroup times must be finite and >= 0".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("semigroup times must be nondecreasing".into()));
    }
    let mut marcher = Marcher::new(Action::full(chain), f.clone());
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        out.push(marcher.advance_to(t)?.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::FiniteChain;
    use crate::numeric::adaptive_simpson;
    use approx::assert_relative_eq;

    fn two_state() -> (FiniteChain, InvariantMeasure, TargetSet) {
        let chain = FiniteChain::birth_death(&[1.0], &[2.0]).unwrap();
        let pi = chain.invariant_measure().unwrap();
        let k = TargetSet::from_states(2, &[0]).unwrap();
        (chain, pi, k)
    }

    #[test]
    fn exp_decay_profile_reproduces_the_z_potential() {
        // From state 1 the hitting time of {0} is exponential(2), so
        // E exp(-alpha tau) = 2 / (2 + alpha).
        let (chain, _pi, k) = two_state();
        for alpha in [0.3, 1.0, 4.0] {
            let psi = PsiFunction::exp_decay(alpha).unwrap();
            let pot =
                psi_potential_direct(&chain, &k, &psi, &QuadratureSpec::default()).unwrap();
            assert_relative_eq!(pot.values_re()[1], 2.0 / (2.0 + alpha), epsilon = 1e-9);
            assert_relative_eq!(pot.values_re()[0], 1.0, epsilon = 1e-12); // psi(0)
        }
    }

    #[test]
    fn smoothstep_profile_matches_scalar_quadrature() {
        // Independent reference: E psi(tau) = int psi(t) 2 exp(-2t) dt.
        let (chain, _pi, k) = two_state();
        let psi = PsiFunction::smoothstep(0.5, 2.0).unwrap();
        let reference = adaptive_simpson(
            &|t| psi.eval(t) * 2.0 * (-2.0 * t).exp(),
            0.0,
            40.0,
            1e-13,
            1e-300,
        )
        .unwrap();
        let pot = psi_potential_direct(&chain, &k, &psi, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(pot.values_re()[1], reference, epsilon = 1e-10);
    }

    #[test]
    fn derivative_profile_matches_the_algebraic_route() {
        // For psi = exp(-alpha t) the derivative profile has potential
        // E_x (-alpha e^{-alpha tau}) = -alpha h_alpha(x): the quadrature
        // route must reproduce the resolvent route.
        let (chain, pi, k) = two_state();
        let alpha = 0.8;
        let psi = PsiFunction::exp_decay(alpha).unwrap();
        let (vals, _) =
            psi_deriv_direct(&chain, &k, &psi, 1, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(vals[1].re, -alpha * 2.0 / (2.0 + alpha), epsilon = 1e-9);
        let h = z_potential(&chain, &pi, &k, Complex64::new(alpha, 0.0)).unwrap();
        for i in 0..2 {
            assert_relative_eq!(vals[i].re, -alpha * h.value(i).re, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_profile_is_constant() {
        let (chain, _pi, k) = two_state();
        let psi = PsiFunction::constant(2.5);
        let pot = psi_potential_direct(&chain, &k, &psi, &QuadratureSpec::default()).unwrap();
        assert!(pot.values_re().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn horizon_cap_fails_loudly_when_it_clips_mass() {
        let (chain, _pi, k) = two_state();
        let psi = PsiFunction::exp_decay(0.05).unwrap(); // slow profile decay
        let quad = QuadratureSpec {
            horizon: Some(2.0),
            ..QuadratureSpec::default()
        };
        match psi_potential_direct(&chain, &k, &psi, &quad) {
            Err(Error::Horizon { suggested, .. }) => assert!(suggested > 2.0),
            other => panic!("expected horizon error, got {other:?}"),
        }
    }

    #[test]
    fn contour_route_agrees_with_the_direct_oracle() {
        let (chain, pi, k) = two_state();
        let psi = PsiFunction::bump(0.5, 1.5).unwrap();
        let direct = psi_potential_direct(&chain, &k, &psi, &QuadratureSpec::default()).unwrap();
        let opts = ContourOpts {
            target: Some(1e-5),
            ..ContourOpts::default()
        };
        let outcome = psi_potential_contour(&chain, &pi, &k, &psi, 1.0, &opts).unwrap();
        assert!(outcome.truncation_bound <= 1e-5);
        assert!(outcome.imag_residue <= tol::CONTOUR_IMAG);
        for i in 0..2 {
            assert!(
                (outcome.potential.values_re()[i] - direct.values_re()[i]).abs() <= 1e-5,
                "state {i}"
            );
        }
    }

    #[test]
    fn contour_is_independent_of_the_line_position() {
        let (chain, pi, k) = two_state();
        let psi = PsiFunction::bump(0.5, 1.5).unwrap();
        let opts = ContourOpts {
            target: Some(1e-5),
            ..ContourOpts::default()
        };
        let a = psi_potential_contour(&chain, &pi, &k, &psi, 0.7, &opts).unwrap();
        let b = psi_potential_contour(&chain, &pi, &k, &psi, 1.6, &opts).unwrap();
        for i in 0..2 {
            assert!(
                (a.potential.values_re()[i] - b.potential.values_re()[i]).abs() <= 2e-5,
                "state {i}"
            );
        }
    }

    #[test]
    fn short_contours_are_rejected_with_a_suggestion() {
        let (chain, pi, k) = two_state();
        let psi = PsiFunction::bump(0.5, 1.5).unwrap();
        let opts = ContourOpts {
            t_im: Some(3.0),
            ..ContourOpts::default()
        };
        match psi_potential_contour(&chain, &pi, &k, &psi, 1.0, &opts) {
            Err(Error::Truncation { bound, suggested, .. }) => {
                assert!(bound > tol::CONTOUR_AGREEMENT);
                assert!(suggested > 3.0);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn marching_routes_agree_with_dense_exponentials() {
        // Big birth-death chain: forces the RK4 route; reference by dense
        // expm computed here, accuracy within the documented class.
        let n = 300;
        let up = vec![1.0; n - 1];
        let down: Vec<f64> = (1..n).map(|i| 1.0 + 0.002 * i as f64).collect();
        let chain = FiniteChain::birth_death(&up, &down).unwrap();
        let f = DVector::from_fn(n, |i, _| ((i as f64) * 0.01).sin());
        let t = 0.8;
        let got = semigroup_apply(&chain, &f, t).unwrap();
        let reference = (chain.q() * t).exp() * &f;
        let err = (&got - &reference).amax();
        assert!(err < 1e-6, "RK4 vs expm: {err:.3e}");

        // Small chains take the cached-exponential route exactly.
        let small = FiniteChain::birth_death(&[1.0, 0.5], &[2.0, 0.7]).unwrap();
        let g = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let got_small = semigroup_apply(&small, &g, 0.3).unwrap();
        let ref_small = (small.q() * 0.3).exp() * &g;
        assert!((&got_small - &ref_small).amax() < 1e-13);
    }

    #[test]
    fn grids_must_be_sorted_and_nonnegative() {
        let (chain, _pi, _k) = two_state();
        let f = DVector::from_vec(vec![1.0, 0.0]);
        assert!(semigroup_grid(&chain, &f, &[0.2, 0.1]).is_err());
        assert!(semigroup_grid(&chain, &f, &[-0.1]).is_err());
        let snaps = semigroup_grid(&chain, &f, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_relative_eq!(snaps[0][0], 1.0, epsilon = 1e-15);
    }
}
