//! Low-level linear algebra behind the public solvers.
//!
//! Generator matrices arrive in two shapes that deserve different treatment:
//! small dense ones, where direct factorizations and the full symmetric
//! eigendecomposition are cheapest, and long tridiagonal ones (birth-death
//! chains, discretized one-dimensional diffusions), where Thomas elimination
//! and Sturm-sequence bisection turn every solve into O(n) work. The routines
//! here expose both paths; callers pick based on [`is_tridiagonal`] and size.
//!
//! All tridiagonal data is passed as `(sub, diag, sup)` slices with
//! `sub.len() == sup.len() == diag.len() - 1`.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::tol;

/// Smallest pivot magnitude substituted during elimination. Keeping the sweep
/// finite (rather than failing) is exactly what inverse iteration wants when
/// the shift sits on an eigenvalue; well-conditioned callers never hit it.
const PIVOT_FLOOR: f64 = 1e-300;

/// Solve a tridiagonal system by the Thomas algorithm (no pivoting).
///
/// Every caller passes a matrix that is either irreducibly diagonally
/// dominant or a shifted M-matrix, for which elimination without pivoting is
/// stable; residuals are re-checked by the callers that promise them.
pub(crate) fn thomas_solve<T: ComplexField>(
    sub: &[T],
    diag: &[T],
    sup: &[T],
    rhs: &[T],
) -> Result<Vec<T>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if sub.len() + 1 != n || sup.len() + 1 != n || rhs.len() != n {
        return Err(Error::Shape {
            what: "tridiagonal solve",
            expected: format!("diag {n}, off {}", n - 1),
            got: format!("sub {}, sup {}, rhs {}", sub.len(), sup.len(), rhs.len()),
        });
    }
    let floor: T::RealField = nalgebra::convert(PIVOT_FLOOR);
    let mut c = vec![T::zero(); n - 1];
    let mut d = vec![T::zero(); n];
    let mut pivot = diag[0].clone();
    if pivot.clone().modulus() < floor {
        pivot = T::from_real(floor.clone());
    }
    if n > 1 {
        c[0] = sup[0].clone() / pivot.clone();
    }
    d[0] = rhs[0].clone() / pivot;
    for i in 1..n {
        let mut denom = diag[i].clone() - sub[i - 1].clone() * c[i - 1].clone();
        if denom.clone().modulus() < floor {
            denom = T::from_real(floor.clone());
        }
        if i < n - 1 {
            c[i] = sup[i].clone() / denom.clone();
        }
        d[i] = (rhs[i].clone() - sub[i - 1].clone() * d[i - 1].clone()) / denom;
    }
    for i in (0..n - 1).rev() {
        let t = d[i + 1].clone();
        d[i] -= c[i].clone() * t;
    }
    Ok(d)
}

/// Symmetric tridiagonal matrix with Sturm-sequence spectral routines.
pub(crate) struct SymTridiag {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl SymTridiag {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Number of eigenvalues strictly below `x`, counted as the negative
    /// pivots of the LDL^T factorization of `T - x I` (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let mut q = 1.0f64;
        let mut count = 0usize;
        for i in 0..self.n() {
            let e2 = if i == 0 {
                0.0
            } else {
                self.e[i - 1] * self.e[i - 1]
            };
            q = self.d[i] - x - e2 / q;
            if q < 0.0 {
                count += 1;
            }
            if q == 0.0 {
                q = PIVOT_FLOOR;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection on the Sturm
    /// count, resolved to ~1e-14 relative accuracy.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        assert!(k < self.n());
        // Gershgorin bracket.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n() {
            let mut r = 0.0;
            if i > 0 {
                r += self.e[i - 1].abs();
            }
            if i + 1 < self.n() {
                r += self.e[i].abs();
            }
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        let scale = lo.abs().max(hi.abs()).max(1.0);
        lo -= 1e-12 * scale;
        hi += 1e-12 * scale;
        // Invariant: count_below(lo) <= k < count_below(hi).
        for _ in 0..120 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) >= k + 1 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * scale {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Eigenvector for an eigenvalue estimate, by inverse iteration with the
    /// Thomas solver. `orth` is re-orthogonalized out on every step, which
    /// keeps a near-degenerate known direction (e.g. the constant mode of a
    /// generator) from contaminating the result.
    pub fn eigenvector(&self, lambda: f64, orth: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let n = self.n();
        let sub: Vec<f64> = self.e.clone();
        let sup: Vec<f64> = self.e.clone();
        let diag: Vec<f64> = self.d.iter().map(|&x| x - lambda).collect();
        // Deterministic, structureless start vector.
        let mut v = DVector::from_fn(n, |i, _| (1.234_567 * (i as f64 + 1.0)).sin() + 0.5);
        if let Some(u) = orth {
            let proj = u.dot(&v) / u.norm_squared();
            v -= u * proj;
        }
        v /= v.norm();
        let scale = self
            .d
            .iter()
            .map(|x| x.abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        for _ in 0..8 {
            let sol = thomas_solve(&sub, &diag, &sup, v.as_slice())?;
            let mut w = DVector::from_vec(sol);
            if let Some(u) = orth {
                let proj = u.dot(&w) / u.norm_squared();
                w -= u * proj;
            }
            let norm = w.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::NoConvergence(
                    "inverse iteration produced a degenerate vector".into(),
                ));
            }
            v = w / norm;
            // Residual ||T v - lambda v||_inf against the eigenpair contract.
            let r = self.apply(&v) - &v * lambda;
            if r.amax() <= tol::EIGEN_RESIDUAL * scale {
                return Ok(normalize_sign(v));
            }
        }
        Err(Error::NoConvergence(format!(
            "inverse iteration stalled at shift {lambda:.6e}"
        )))
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(n, |i, _| {
            let mut s = self.d[i] * v[i];
            if i > 0 {
                s += self.e[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.e[i] * v[i + 1];
            }
            s
        })
    }
}

/// Flip the sign so the entry of largest magnitude is positive; eigenvectors
/// become deterministic across code paths.
pub(crate) fn normalize_sign(mut v: DVector<f64>) -> DVector<f64> {
    let mut idx = 0;
    let mut best = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.neg_mut();
    }
    v
}

/// All eigenpairs of a dense symmetric matrix, ascending by eigenvalue.
pub(crate) fn dense_symmetric_eigs(a: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| normalize_sign(eig.eigenvectors.column(i).into_owned()))
        .collect();
    (values, vectors)
}

/// The `k` smallest eigenpairs of a dense symmetric matrix by shift-invert
/// *subspace* iteration with Rayleigh-Ritz extraction, for sizes where the
/// full decomposition is too expensive. `sigma` must lie strictly below the
/// smallest eigenvalue; any Gershgorin lower bound minus a margin works.
///
/// A block (rather than single-vector deflation) is used deliberately: with
/// one vector at a time, a Rayleigh-quotient acceleration can lock onto an
/// interior eigenvalue and silently misorder the results, while the sorted
/// Ritz values of a converged dominant subspace of `(A - sigma)^{-1}` are
/// the smallest eigenvalues of `A` by construction.
pub(crate) fn shift_invert_smallest(
    a: &DMatrix<f64>,
    k: usize,
    sigma: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let n = a.nrows();
    let p = (2 * k + 6).min(n);
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(1.0f64, f64::max);
    let lu = (a - DMatrix::identity(n, n) * sigma).lu();
    // Deterministic, structureless start block.
    let mut basis: Vec<DVector<f64>> = (0..p)
        .map(|m| {
            DVector::from_fn(n, |i, _| (0.918_273 * ((i + 1) * (m + 3)) as f64).sin() + 0.25)
        })
        .collect();
    gram_schmidt(&mut basis)?;
    for _ in 0..400 {
        // One inverse-power step on the whole block.
        let mut next = Vec::with_capacity(p);
        for v in &basis {
            let w = lu
                .solve(v)
                .ok_or_else(|| Error::Internal("singular shift-invert solve".into()))?;
            next.push(w);
        }
        gram_schmidt(&mut next)?;
        // Rayleigh-Ritz: project A onto the block and rotate.
        let images: Vec<DVector<f64>> = next.iter().map(|v| a * v).collect();
        let mut b = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = next[i].dot(&images[j]);
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
        let (ritz, rot) = dense_symmetric_eigs(&b);
        basis = (0..p)
            .map(|j| {
                let mut v = DVector::zeros(n);
                for l in 0..p {
                    v += &next[l] * rot[j][l];
                }
                v
            })
            .collect();
        // Converged when the k wanted Ritz pairs have small residuals.
        let done = (0..k).all(|j| {
            let r = a * &basis[j] - &basis[j] * ritz[j];
            r.amax() <= tol::EIGEN_RESIDUAL * scale
        });
        if done {
            let values = ritz[..k].to_vec();
            let vectors = basis[..k]
                .iter()
                .map(|v| normalize_sign(v.clone()))
                .collect();
            return Ok((values, vectors));
        }
    }
    Err(Error::NoConvergence(
        "shift-invert subspace iteration stalled".into(),
    ))
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn gram_schmidt(basis: &mut [DVector<f64>]) -> Result<()> {
    for i in 0..basis.len() {
        for _ in 0..2 {
            for j in 0..i {
                let proj = basis[j].dot(&basis[i]);
                let u = basis[j].clone();
                basis[i] -= u * proj;
            }
        }
        let norm = basis[i].norm();
        if !norm.is_finite() || norm < 1e-14 {
            return Err(Error::NoConvergence(
                "block basis degenerated during orthogonalization".into(),
            ));
        }
        basis[i] /= norm;
    }
    Ok(())
}

/// Similarity transform `D^{1/2} Q D^{-1/2}` with `D = diag(pi)`, explicitly
/// symmetrized. Returns the symmetric part and the asymmetry that was
/// discarded (a reversibility diagnostic in disguise).
pub(crate) fn sym_similarity(q: &DMatrix<f64>, pi: &DVector<f64>) -> (DMatrix<f64>, f64) {
    let n = q.nrows();
    let sqrt: Vec<f64> = pi.iter().map(|&p| p.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = sqrt[i] * q[(i, j)] / sqrt[j];
        }
    }
    let mut asym = 0.0f64;
    let mut sym = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = 0.5 * (s[(i, j)] + s[(j, i)]);
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
            sym[(i, j)] = a;
        }
    }
    (sym, asym)
}

/// Rows and columns of `q` restricted to `states` (in the given order).
pub(crate) fn principal_submatrix(q: &DMatrix<f64>, states: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(states.len(), states.len(), |i, j| {
        q[(states[i], states[j])]
    })
}

/// Complex copy of the principal submatrix with `z` subtracted on the
/// diagonal, i.e. the matrix of the killed resolvent system `(Q_V - z)`.
pub(crate) fn shifted_submatrix(
    q: &DMatrix<f64>,
    states: &[usize],
    z: Complex64,
) -> DMatrix<Complex64> {
    DMatrix::from_fn(states.len(), states.len(), |i, j| {
        let base = Complex64::new(q[(states[i], states[j])], 0.0);
        if i == j {
            base - z
        } else {
            base
        }
    })
}

/// Strongly connected components of the positivity digraph `i -> j` when
/// `q_ij > 0`, `i != j`. Tarjan via petgraph; component order is by smallest
/// contained state for determinism.
pub(crate) fn strongly_connected(q: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = q.nrows();
    let mut graph = petgraph::graph::DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Connected components of `subset` in the *undirected* positivity pattern
/// (`q_ij > 0` or `q_ji > 0`), using only edges internal to `subset`.
pub(crate) fn undirected_components(q: &DMatrix<f64>, subset: &[usize]) -> Vec<Vec<usize>> {
    let mut pos = std::collections::HashMap::new();
    for (local, &s) in subset.iter().enumerate() {
        pos.insert(s, local);
    }
    let mut uf = UnionFind::<usize>::new(subset.len());
    for (li, &i) in subset.iter().enumerate() {
        for &j in subset.iter() {
            if i < j && (q[(i, j)] > 0.0 || q[(j, i)] > 0.0) {
                uf.union(li, pos[&j]);
            }
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (li, &s) in subset.iter().enumerate() {
        by_root.entry(uf.find(li)).or_default().push(s);
    }
    let mut comps: Vec<Vec<usize>> = by_root.into_values().collect();
    for c in &mut comps {
        c.sort_unstable();
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

/// True when all mass of `q` sits on the three central diagonals.
pub(crate) fn is_tridiagonal(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    for i in 0..n {
        for j in 0..n {
            if (i as i64 - j as i64).abs() > 1 && q[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Split a sorted index list into maximal runs of consecutive integers.
/// For a tridiagonal generator, each run is one decoupled tridiagonal block
/// of the killed system.
pub(crate) fn contiguous_runs(sorted: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut iter = sorted.iter().copied();
    let Some(mut start) = iter.next() else {
        return runs;
    };
    let mut prev = start;
    for s in iter {
        if s != prev + 1 {
            runs.push((start, prev - start + 1));
            start = s;
        }
        prev = s;
    }
    runs.push((start, prev - start + 1));
    runs
}
