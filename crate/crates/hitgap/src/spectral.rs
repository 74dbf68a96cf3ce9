//! Dirichlet forms, the spectral gap, and principal Dirichlet eigenvalues.
//!
//! For a reversible chain the generator is self-adjoint in `L^2(pi)` and its
//! Dirichlet form has two expressions that serve as independent computational
//! routes:
//!
//! ```text
//!   E(f, g) = -(Qf, g)_pi                              (operator route)
//!   E(f, g) = (1/2) sum_{i,j} pi_i q_ij (f_j - f_i)(g_j - g_i)   (edge route)
//! ```
//!
//! [`DirichletForm::energy`] evaluates both on reversible chains and treats
//! disagreement beyond [`tol::DIRICHLET_DUAL`] as an internal error, so the
//! identity is enforced on every call rather than sampled by a test.
//!
//! The spectral gap is the second-smallest eigenvalue of `-Q` after the
//! pi-weighted symmetrization `D^{1/2} Q D^{-1/2}`, `D = diag(pi)`; the
//! smallest is 0 (constants). The optimal Poincare inequality
//! `Var_pi f <= c E(f, f)` holds with `c = 1/gap`.
//!
//! [`dirichlet_eigenvalue`] gives the principal eigenvalue of `-Q` with
//! Dirichlet (killing) conditions on a target set `K`: the complement may
//! fall apart into several components once `K` is removed, and the principal
//! eigenvalue is the minimum over them, achieved by a sign-definite
//! (Perron) eigenvector on the achieving component.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::chain::{FiniteChain, InvariantMeasure, TargetSet};
use crate::error::{Error, Result};
use crate::linalg::{self, SymTridiag};
use crate::numeric::neumaier_sum;
use crate::tol;

/// Size above which the full symmetric eigendecomposition is abandoned for
/// shift-invert subspace iteration.
const DENSE_EIG_LIMIT: usize = 512;

/// The Dirichlet form of a chain with respect to its invariant measure.
pub struct DirichletForm<'a> {
    chain: &'a FiniteChain,
    pi: &'a InvariantMeasure,
}

impl<'a> DirichletForm<'a> {
    pub fn new(chain: &'a FiniteChain, pi: &'a InvariantMeasure) -> Result<Self> {
        if chain.n() != pi.n() {
            return Err(Error::Shape {
                what: "Dirichlet form",
                expected: format!("{} states", chain.n()),
                got: format!("measure on {}", pi.n()),
            });
        }
        Ok(DirichletForm { chain, pi })
    }

    /// `-(Qf, g)_pi`, defined for any chain.
    pub fn energy_operator(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let qf = self.chain.apply(f);
        -self.pi.inner(&qf, g)
    }

    /// Edge-sum form, valid only under detailed balance.
    ///
    /// # Errors
    ///
    /// [`Error::NotReversible`] when the chain fails detailed balance.
    pub fn energy_edges(&self, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
        if !self.pi.is_reversible() {
            return Err(Error::NotReversible {
                residual: self.pi.detailed_balance_residual(),
            });
        }
        let n = self.chain.n();
        let q = self.chain.q();
        let mut terms = Vec::with_capacity(n * 2);
        for i in 0..n {
            for j in 0..n {
                if i != j && q[(i, j)] > 0.0 {
                    terms.push(
                        0.5 * self.pi.get(i) * q[(i, j)] * (f[j] - f[i]) * (g[j] - g[i]),
                    );
                }
            }
        }
        Ok(neumaier_sum(terms.into_iter()))
    }

    /// The energy `E(f, g)`. On reversible chains both routes are computed
    /// and must agree within [`tol::DIRICHLET_DUAL`] (relative to the rate
    /// scale); on non-reversible chains the operator route is returned.
    pub fn energy(&self, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
        let op = self.energy_operator(f, g);
        if !self.pi.is_reversible() {
            return Ok(op);
        }
        let edge = self.energy_edges(f, g)?;
        let scale = rate_scale(self.chain) * f.amax().max(1.0) * g.amax().max(1.0);
        if (op - edge).abs() > tol::DIRICHLET_DUAL * scale.max(1.0) {
            return Err(Error::Internal(format!(
                "Dirichlet-form routes disagree: operator {op:.12e} vs edges {edge:.12e}"
            )));
        }
        Ok(edge)
    }

    /// Sesquilinear energy `-(Qf, g)_pi` for complex data (second slot
    /// conjugated). Used by the contour machinery; no dual route is defined
    /// here because the edge sum needs real symmetric arguments.
    pub fn energy_complex(&self, f: &[Complex64], g: &[Complex64]) -> Complex64 {
        let n = self.chain.n();
        let q = self.chain.q();
        let mut qf = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                if q[(i, j)] != 0.0 {
                    qf[i] += q[(i, j)] * f[j];
                }
            }
        }
        -self.pi.inner_complex(&qf, g)
    }

    /// Squared energy norm `||f||_{H_E}^2 = ||f||_{L^2(pi)}^2 + E(f, f)` for
    /// complex data; the energy part is real up to rounding for reversible
    /// chains, and its real part is used.
    pub fn h_e_norm_sq(&self, f: &[Complex64]) -> f64 {
        let mass = self.pi.inner_complex(f, f).re;
        mass + self.energy_complex(f, f).re
    }
}

/// Free-function form of [`DirichletForm::energy`].
pub fn dirichlet_energy(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    f: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<f64> {
    DirichletForm::new(chain, pi)?.energy(f, g)
}

/// `Var_pi f`, re-exported next to the energy it pairs with.
pub fn variance(pi: &InvariantMeasure, f: &DVector<f64>) -> f64 {
    pi.variance(f)
}

fn rate_scale(chain: &FiniteChain) -> f64 {
    (0..chain.n())
        .map(|i| chain.exit_rate(i))
        .fold(1.0f64, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMethod {
    Dense,
    Iterative,
}

impl EigMethod {
    fn as_str(self) -> &'static str {
        match self {
            EigMethod::Dense => "dense",
            EigMethod::Iterative => "iterative",
        }
    }
}

/// Result of a spectral-gap computation. `eigenvector` is the gap
/// eigenfunction in `L^2(pi)` coordinates, normalized to `||f||_pi = 1`;
/// `residual` is the eigenpair residual in the symmetrized system, relative
/// to the rate scale.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub gap: f64,
    pub poincare_c: f64,
    pub eigenvector: Vec<f64>,
    pub method: EigMethod,
    pub residual: f64,
}

impl SpectralReport {
    pub fn to_json(&self) -> Value {
        json!({
            "gap": self.gap,
            "poincare_c": self.poincare_c,
            "eigenvector": self.eigenvector,
            "method": self.method.as_str(),
            "residual": self.residual,
        })
    }
}

/// Spectral gap of a reversible irreducible chain, with the optimal Poincare
/// constant `c = 1/gap` and the extremal eigenfunction.
///
/// # Errors
///
/// [`Error::NotReversible`] without detailed balance (the symmetrization
/// would silently study a different operator), [`Error::Internal`] if the
/// zero mode is missing or residuals exceed [`tol::EIGEN_RESIDUAL`].
pub fn spectral_gap(chain: &FiniteChain, pi: &InvariantMeasure) -> Result<SpectralReport> {
    if !pi.is_reversible() {
        return Err(Error::NotReversible {
            residual: pi.detailed_balance_residual(),
        });
    }
    let n = chain.n();
    let scale = rate_scale(chain);
    let (lambda0, gap, vec_sym, method) = if chain.is_tridiagonal() {
        let t = neg_sym_tridiag(chain);
        let lambda0 = t.eigenvalue(0);
        let gap = t.eigenvalue(1);
        // Deflate the known zero mode, sqrt(pi) in symmetrized coordinates.
        let zero_mode = DVector::from_fn(n, |i, _| pi.get(i).sqrt());
        let v = t.eigenvector(gap, Some(&zero_mode))?;
        (lambda0, gap, v, EigMethod::Iterative)
    } else {
        let (a, asym) = neg_sym_dense(chain, pi);
        if asym > tol::DETAILED_BALANCE * scale {
            return Err(Error::Internal(format!(
                "symmetrization asymmetry {asym:.3e} on a chain classified reversible"
            )));
        }
        if n <= DENSE_EIG_LIMIT {
            let (vals, vecs) = linalg::dense_symmetric_eigs(&a);
            (vals[0], vals[1], vecs[1].clone(), EigMethod::Dense)
        } else {
            let (vals, vecs) = linalg::shift_invert_smallest(&a, 2, -1e-3 * scale)?;
            (vals[0], vals[1], vecs[1].clone(), EigMethod::Iterative)
        }
    };
    if lambda0.abs() > 1e-7 * scale {
        return Err(Error::Internal(format!(
            "constant mode eigenvalue {lambda0:.3e} is not numerically zero"
        )));
    }
    // Residual in the symmetrized system.
    let residual = sym_residual(chain, pi, gap, &vec_sym) / scale;
    if residual > tol::EIGEN_RESIDUAL {
        return Err(Error::Internal(format!(
            "gap eigenpair residual {residual:.3e} exceeds {:.1e}",
            tol::EIGEN_RESIDUAL
        )));
    }
    // Back to L^2(pi) coordinates: f_i = v_i / sqrt(pi_i), ||f||_pi = 1.
    let mut f = DVector::from_fn(n, |i, _| vec_sym[i] / pi.get(i).sqrt());
    let norm = pi.inner(&f, &f).sqrt();
    f /= norm;
    let f = linalg::normalize_sign(f);
    if !(gap > 0.0) {
        return Err(Error::Internal(format!(
            "nonpositive spectral gap {gap:.3e} on an irreducible chain"
        )));
    }
    Ok(SpectralReport {
        gap,
        poincare_c: 1.0 / gap,
        eigenvector: f.iter().copied().collect(),
        method,
        residual,
    })
}

/// `-D^{1/2} Q D^{-1/2}` for a reversible tridiagonal chain. Detailed
/// balance makes the off-diagonal entries `-sqrt(q_{i,i+1} q_{i+1,i})`
/// independently of `pi`, which is what makes the killed sub-blocks solvable
/// without the measure.
fn neg_sym_tridiag(chain: &FiniteChain) -> SymTridiag {
    let n = chain.n();
    let d: Vec<f64> = (0..n).map(|i| chain.exit_rate(i)).collect();
    let e: Vec<f64> = (0..n - 1)
        .map(|i| -(chain.rate(i, i + 1) * chain.rate(i + 1, i)).sqrt())
        .collect();
    SymTridiag { d, e }
}

fn neg_sym_dense(chain: &FiniteChain, pi: &InvariantMeasure) -> (DMatrix<f64>, f64) {
    let (s, asym) = linalg::sym_similarity(chain.q(), pi.pi());
    (-s, asym)
}

fn sym_residual(chain: &FiniteChain, pi: &InvariantMeasure, lambda: f64, v: &DVector<f64>) -> f64 {
    let n = chain.n();
    let q = chain.q();
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if q[(i, j)] != 0.0 {
                s += -(pi.get(i).sqrt() * q[(i, j)] / pi.get(j).sqrt()) * v[j];
            }
        }
        worst = worst.max((s - lambda * v[i]).abs());
    }
    worst / v.amax().max(1e-300)
}

/// Principal Dirichlet eigenvalue for killing on `K`, together with the
/// achieving complement component and its Perron eigenvector (in symmetrized
/// coordinates). Internal workhorse behind [`dirichlet_eigenvalue`] and the
/// threshold machinery.
pub(crate) fn killed_principal(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
) -> Result<(f64, Vec<usize>, DVector<f64>)> {
    if !pi.is_reversible() {
        return Err(Error::NotReversible {
            residual: pi.detailed_balance_residual(),
        });
    }
    if k_set.is_full() {
        return Err(Error::Target(
            "killed spectrum needs a nonempty complement".into(),
        ));
    }
    let complement = k_set.complement();
    let components = linalg::undirected_components(chain.q(), &complement);
    let scale = rate_scale(chain);
    let mut best: Option<(f64, Vec<usize>, DVector<f64>)> = None;
    for comp in components {
        let (lam, vec) = component_principal(chain, pi, &comp)?;
        if best.as_ref().map_or(true, |(b, _, _)| lam < *b) {
            best = Some((lam, comp, vec));
        }
    }
    let (lambda0, comp, vec) = best.ok_or_else(|| Error::Internal("no components".into()))?;
    // Perron positivity on the achieving component: the principal
    // eigenvector of an irreducible killed block is sign-definite.
    let top = vec.amax();
    if vec.iter().any(|&x| x < -1e-10 * top) {
        return Err(Error::Internal(
            "principal killed eigenvector changes sign".into(),
        ));
    }
    if !(lambda0 > 0.0) || lambda0 > 2.0 * scale {
        return Err(Error::Internal(format!(
            "principal killed eigenvalue {lambda0:.6e} outside (0, 2 max rate]"
        )));
    }
    Ok((lambda0, comp, vec))
}

fn component_principal(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    comp: &[usize],
) -> Result<(f64, DVector<f64>)> {
    // Single killed state: the eigenvalue is its exit rate.
    if comp.len() == 1 {
        return Ok((chain.exit_rate(comp[0]), DVector::from_element(1, 1.0)));
    }
    if chain.is_tridiagonal() {
        // A component of the complement of K in a tridiagonal chain is a
        // contiguous run, so its killed block is again tridiagonal.
        let runs = linalg::contiguous_runs(comp);
        if runs.len() != 1 {
            return Err(Error::Internal(
                "tridiagonal component split into several runs".into(),
            ));
        }
        let (start, len) = runs[0];
        let d: Vec<f64> = (0..len).map(|k| chain.exit_rate(start + k)).collect();
        let e: Vec<f64> = (0..len - 1)
            .map(|k| -(chain.rate(start + k, start + k + 1) * chain.rate(start + k + 1, start + k)).sqrt())
            .collect();
        let t = SymTridiag { d, e };
        let lam = t.eigenvalue(0);
        let v = t.eigenvector(lam, None)?;
        Ok((lam, v))
    } else {
        let (s_full, _) = neg_sym_dense(chain, pi);
        let a = linalg::principal_submatrix(&s_full, comp);
        if comp.len() <= DENSE_EIG_LIMIT {
            let (vals, vecs) = linalg::dense_symmetric_eigs(&a);
            Ok((vals[0], vecs[0].clone()))
        } else {
            let (vals, vecs) = linalg::shift_invert_smallest(&a, 1, 0.0)?;
            Ok((vals[0], vecs[0].clone()))
        }
    }
}

/// Principal eigenvalue of `-Q` with Dirichlet conditions on `K`: the decay
/// rate of the killed semigroup, and the exact blow-up threshold for
/// exponential moments of the hitting time of `K`.
pub fn dirichlet_eigenvalue(
    chain: &FiniteChain,
    pi: &InvariantMeasure,
    k_set: &TargetSet,
) -> Result<f64> {
    killed_principal(chain, pi, k_set).map(|(lam, _, _)| lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state() -> (FiniteChain, InvariantMeasure) {
        let chain = FiniteChain::birth_death(&[1.0], &[2.0]).unwrap();
        let pi = chain.invariant_measure().unwrap();
        (chain, pi)
    }

    #[test]
    fn two_state_gap_and_poincare() {
        let (chain, pi) = two_state();
        let report = spectral_gap(&chain, &pi).unwrap();
        assert_relative_eq!(report.gap, 3.0, epsilon = 1e-12);
        assert_relative_eq!(report.poincare_c, 1.0 / 3.0, epsilon = 1e-12);
        assert!(report.residual <= tol::EIGEN_RESIDUAL);

        // Poincare holds with equality for the indicator f = 1_{1}:
        // Var = 2/9, E = 2/3, and (1/3)(2/3) = 2/9.
        let f = DVector::from_vec(vec![0.0, 1.0]);
        let e = dirichlet_energy(&chain, &pi, &f, &f).unwrap();
        assert_relative_eq!(e, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(variance(&pi, &f), report.poincare_c * e, epsilon = 1e-12);
    }

    #[test]
    fn complete_graph_gap_is_n() {
        let n = 7;
        let mut q = DMatrix::from_element(n, n, 1.0);
        for i in 0..n {
            q[(i, i)] = -(n as f64 - 1.0);
        }
        let chain = FiniteChain::new(q).unwrap();
        let pi = chain.invariant_measure().unwrap();
        let report = spectral_gap(&chain, &pi).unwrap();
        assert_eq!(report.method, EigMethod::Dense);
        assert_relative_eq!(report.gap, n as f64, epsilon = 1e-10);
    }

    #[test]
    fn tridiagonal_and_dense_routes_agree() {
        let up: Vec<f64> = (0..29).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
        let down: Vec<f64> = (0..29).map(|i| 1.5 + 0.1 * (i as f64).cos()).collect();
        let chain = FiniteChain::birth_death(&up, &down).unwrap();
        let pi = chain.invariant_measure().unwrap();
        let fast = spectral_gap(&chain, &pi).unwrap();
        assert_eq!(fast.method, EigMethod::Iterative);

        // Dense route on the same operator.
        let (a, _) = neg_sym_dense(&chain, &pi);
        let (vals, _) = linalg::dense_symmetric_eigs(&a);
        assert_relative_eq!(fast.gap, vals[1], epsilon = 1e-10, max_relative = 1e-10);

        // The reported eigenfunction satisfies the Poincare equality case:
        // Var f = c E(f,f) for the extremal f.
        let f = DVector::from_vec(fast.eigenvector.clone());
        let e = dirichlet_energy(&chain, &pi, &f, &f).unwrap();
        assert_relative_eq!(variance(&pi, &f), fast.poincare_c * e, epsilon = 1e-9);
    }

    #[test]
    fn gap_requires_reversibility() {
        let mut q = DMatrix::zeros(3, 3);
        for i in 0..3 {
            q[(i, i)] = -1.0;
            q[(i, (i + 1) % 3)] = 1.0;
        }
        let chain = FiniteChain::new(q).unwrap();
        let pi = chain.invariant_measure().unwrap();
        assert!(matches!(
            spectral_gap(&chain, &pi),
            Err(Error::NotReversible { .. })
        ));
        // The operator-route energy still works.
        let form = DirichletForm::new(&chain, &pi).unwrap();
        let f = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        assert!(form.energy(&f, &f).unwrap() > 0.0);
        assert!(form.energy_edges(&f, &f).is_err());
    }

    #[test]
    fn two_state_dirichlet_eigenvalue_is_exit_rate() {
        let (chain, pi) = two_state();
        // K = {0}: the killed block is the single state 1 with exit rate 2.
        let k = TargetSet::from_states(2, &[0]).unwrap();
        assert_relative_eq!(dirichlet_eigenvalue(&chain, &pi, &k).unwrap(), 2.0);
        // K = {1}: killed block is state 0, exit rate 1.
        let k1 = TargetSet::from_states(2, &[1]).unwrap();
        assert_relative_eq!(dirichlet_eigenvalue(&chain, &pi, &k1).unwrap(), 1.0);
        // Full K rejected.
        assert!(dirichlet_eigenvalue(&chain, &pi, &TargetSet::full(2)).is_err());
    }

    #[test]
    fn middle_target_splits_complement() {
        // Path 0-1-2-3-4 with unit rates, K = {2}: components {0,1}, {3,4}
        // by symmetry have equal principal eigenvalues; check against the
        // dense solve of one block.
        let chain = FiniteChain::birth_death(&[1.0; 4], &[1.0; 4]).unwrap();
        let pi = chain.invariant_measure().unwrap();
        let k = TargetSet::from_states(5, &[2]).unwrap();
        let lam = dirichlet_eigenvalue(&chain, &pi, &k).unwrap();

        // Block on {0,1}: diag [1, 2], off -1 (killed at state 2).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        let (vals, _) = linalg::dense_symmetric_eigs(&a);
        assert_relative_eq!(lam, vals[0], epsilon = 1e-12);

        // Rayleigh bound with an indicator test function: lambda_0 never
        // exceeds the smallest exit rate off K.
        let min_exit = (0..5)
            .filter(|i| !k.contains(*i))
            .map(|i| chain.exit_rate(i))
            .fold(f64::INFINITY, f64::min);
        assert!(lam <= min_exit + 1e-12);

        // Enlarging K can only raise the eigenvalue.
        let k2 = TargetSet::from_states(5, &[2, 4]).unwrap();
        assert!(dirichlet_eigenvalue(&chain, &pi, &k2).unwrap() >= lam - 1e-12);
    }

    #[test]
    fn report_serializes_contract_fields() {
        let (chain, pi) = two_state();
        let v = spectral_gap(&chain, &pi).unwrap().to_json();
        for field in ["gap", "poincare_c", "eigenvector", "method", "residual"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        assert_eq!(v["method"], "iterative");
    }

    /// Random reversible chain from conductances: symmetric weights plus a
    /// connecting path, rates q_ij = w_ij / pi_i.
    fn conductance_chain(n: usize, pi_raw: &[f64], w: &[f64]) -> (FiniteChain, InvariantMeasure) {
        let mut q = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut wij = w[idx % w.len()];
                idx += 1;
                if j == i + 1 {
                    wij += 0.2; // keep the path connected
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
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn energy_routes_agree_and_poincare_holds(
            n in 3usize..8,
            pi_raw in proptest::collection::vec(0.05f64..1.0, 8),
            w in proptest::collection::vec(0.0f64..1.0, 28),
            f_raw in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let (chain, pi) = conductance_chain(n, &pi_raw[..n], &w);
            prop_assert!(pi.is_reversible());
            let f = DVector::from_iterator(n, f_raw[..n].iter().copied());
            let form = DirichletForm::new(&chain, &pi).unwrap();
            // energy() would already error on dual-route disagreement.
            let e = form.energy(&f, &f).unwrap();
            prop_assert!(e >= -1e-12);
            let report = spectral_gap(&chain, &pi).unwrap();
            // Poincare with the optimal constant, up to rounding slack.
            prop_assert!(pi.variance(&f) <= report.poincare_c * e + 1e-9);
        }

        #[test]
        fn killed_eigenvalue_bounded_by_exit_rates(
            n in 3usize..8,
            pi_raw in proptest::collection::vec(0.05f64..1.0, 8),
            w in proptest::collection::vec(0.0f64..1.0, 28),
            k_state in 0usize..8,
        ) {
            let (chain, pi) = conductance_chain(n, &pi_raw[..n], &w);
            let k = TargetSet::from_states(n, &[k_state % n]).unwrap();
            let lam = dirichlet_eigenvalue(&chain, &pi, &k).unwrap();
            let min_exit = (0..n)
                .filter(|i| !k.contains(*i))
                .map(|i| chain.exit_rate(i))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(lam > 0.0);
            prop_assert!(lam <= min_exit * (1.0 + 1e-12));
        }
    }
}
