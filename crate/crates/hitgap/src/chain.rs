//! Finite-state continuous-time Markov chains.
//!
//! A chain is held as its generator `Q`: off-diagonal entries are jump rates
//! `q_ij >= 0`, diagonal entries make every row sum to zero, and the
//! positivity pattern must be strongly connected (one communicating class).
//! Time is continuous; the chain sits in state `i` for an Exp(-q_ii) holding
//! time and then jumps to `j` with probability `q_ij / (-q_ii)`.
//!
//! The unique invariant probability `pi` solves `pi Q = 0`. When detailed
//! balance `pi_i q_ij = pi_j q_ji` holds, the generator is self-adjoint in
//! `L^2(pi)` and the spectral machinery in the rest of the crate applies;
//! [`InvariantMeasure`] records whether it does.
//!
//! States may optionally carry real coordinate labels (cell centers of a
//! discretized diffusion), which is what makes interval-shaped target sets
//! meaningful.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numeric::neumaier_sum;
use crate::tol;

/// An irreducible conservative generator on `{0, .., n-1}`, with optional
/// state coordinates.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    q: DMatrix<f64>,
    labels: Option<Vec<f64>>,
    tridiagonal: bool,
}

/// Outcome of generator validation. [`FiniteChain::new`] rejects any matrix
/// for which `issues` is non-empty; the report is public so callers can
/// diagnose a bad matrix in one pass instead of fixing one error at a time.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub n: usize,
    /// Largest `|sum_j q_ij|` over rows.
    pub max_row_sum: f64,
    /// Most negative off-diagonal entry (0 if none are negative).
    pub min_off_diagonal: f64,
    /// Communicating classes of the positivity digraph.
    pub components: Vec<Vec<usize>>,
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl FiniteChain {
    /// Validate and wrap a generator matrix.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidGenerator`] listing *every* violated constraint
    /// (shape, negative off-diagonal entries, row sums beyond
    /// [`tol::ROW_SUM`], non-finite entries), or [`Error::Reducible`] when
    /// the positivity pattern has more than one communicating class.
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        Self::build(q, None)
    }

    /// Like [`FiniteChain::new`], but attach coordinate labels (one per
    /// state, strictly increasing) so interval target sets can be used.
    pub fn with_labels(q: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        Self::build(q, Some(labels))
    }

    fn build(q: DMatrix<f64>, labels: Option<Vec<f64>>) -> Result<Self> {
        let report = Self::validate(&q);
        if !report.is_valid() {
            return Err(Error::InvalidGenerator {
                issues: report.issues,
            });
        }
        if report.components.len() != 1 {
            return Err(Error::Reducible(report.components.len()));
        }
        if let Some(ref l) = labels {
            if l.len() != q.nrows() {
                return Err(Error::Shape {
                    what: "state labels",
                    expected: format!("{}", q.nrows()),
                    got: format!("{}", l.len()),
                });
            }
            if l.windows(2).any(|w| !(w[0] < w[1])) || l.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(
                    "state labels must be finite and strictly increasing".into(),
                ));
            }
        }
        let tridiagonal = linalg::is_tridiagonal(&q);
        Ok(FiniteChain {
            q,
            labels,
            tridiagonal,
        })
    }

    /// Diagnose a candidate generator without constructing a chain.
    pub fn validate(q: &DMatrix<f64>) -> ValidationReport {
        let n = q.nrows();
        let mut issues = Vec::new();
        if n < 2 {
            issues.push(format!("need at least 2 states, got {n}"));
        }
        if q.ncols() != n {
            issues.push(format!("matrix is {}x{}, not square", n, q.ncols()));
        }
        let mut max_row_sum = 0.0f64;
        let mut min_off = 0.0f64;
        if q.ncols() == n {
            for i in 0..n {
                let mut bad_entries = 0;
                for j in 0..n {
                    let v = q[(i, j)];
                    if !v.is_finite() {
                        issues.push(format!("entry ({i},{j}) is not finite"));
                    } else if i != j && v < 0.0 {
                        min_off = min_off.min(v);
                        bad_entries += 1;
                    }
                }
                if bad_entries > 0 {
                    issues.push(format!(
                        "row {i} has {bad_entries} negative off-diagonal rate(s)"
                    ));
                }
                let s = neumaier_sum((0..n).map(|j| q[(i, j)]));
                max_row_sum = max_row_sum.max(s.abs());
                if s.abs() > tol::ROW_SUM {
                    issues.push(format!("row {i} sums to {s:.3e} (must be 0)"));
                }
            }
        }
        let components = if q.ncols() == n && n >= 1 {
            linalg::strongly_connected(q)
        } else {
            Vec::new()
        };
        ValidationReport {
            n,
            max_row_sum,
            min_off_diagonal: min_off,
            components,
            issues,
        }
    }

    /// Birth-death chain: `up[i]` is the rate `i -> i+1`, `down[i]` the rate
    /// `i+1 -> i`. State count is `up.len() + 1`; all rates must be positive
    /// or the chain would be reducible.
    ///
    /// Each interior row holds two exit rates whose true sum may not be a
    /// representable float, in which case no diagonal makes the row sum
    /// vanish to the required absolute tolerance once the rates are large
    /// (e.g. fine diffusion grids, where exit rates scale like the inverse
    /// squared mesh). The rates feeding a row are therefore snapped to a
    /// shared power-of-two quantum — a relative nudge of at most a few
    /// 1e-16 — so the diagonal cancels the off-diagonal sum exactly.
    pub fn birth_death(up: &[f64], down: &[f64]) -> Result<Self> {
        if up.len() != down.len() || up.is_empty() {
            return Err(Error::Shape {
                what: "birth-death rates",
                expected: "up.len() == down.len() >= 1".into(),
                got: format!("up {}, down {}", up.len(), down.len()),
            });
        }
        if up.iter().chain(down.iter()).any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Domain(
                "birth-death rates must be strictly positive and finite".into(),
            ));
        }
        // Quantum small enough to keep the nudge invisible, large enough
        // that a row's two rates sum without rounding (the scaled integers
        // fit well inside the 53-bit mantissa).
        let quantize = |x: f64, scale: f64| -> f64 {
            let q = (scale.log2().floor() as i32 - 50).max(f64::MIN_EXP);
            let q = (q as f64).exp2();
            let snapped = (x / q).round() * q;
            if snapped > 0.0 {
                snapped
            } else {
                q // keep strictly positive rates positive
            }
        };
        let n = up.len() + 1;
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            let a = if i > 0 { down[i - 1] } else { 0.0 };
            let b = if i + 1 < n { up[i] } else { 0.0 };
            let scale = a + b;
            let a = if i > 0 { quantize(a, scale) } else { 0.0 };
            let b = if i + 1 < n { quantize(b, scale) } else { 0.0 };
            if i > 0 {
                q[(i, i - 1)] = a;
            }
            if i + 1 < n {
                q[(i, i + 1)] = b;
            }
            q[(i, i)] = -(a + b);
        }
        Self::new(q)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    /// Total jump rate out of state `i` (i.e. `-q_ii`).
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn is_tridiagonal(&self) -> bool {
        self.tridiagonal
    }

    /// Apply the generator to a function on states: `(Qf)_i = sum_j q_ij f_j`.
    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.q * f
    }

    /// Solve `pi Q = 0` and classify reversibility. See [`InvariantMeasure`].
    pub fn invariant_measure(&self) -> Result<InvariantMeasure> {
        InvariantMeasure::compute(self)
    }

    /// Serialize as the dense JSON document `{"n", "Q", "labels"?}`.
    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<f64>> = (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.q[(i, j)]).collect())
            .collect();
        match &self.labels {
            Some(l) => json!({"n": self.n(), "Q": rows, "labels": l}),
            None => json!({"n": self.n(), "Q": rows}),
        }
    }

    /// Parse either accepted JSON form:
    ///
    /// * dense: `{"n": int, "Q": [[..], ..], "labels": [..]?}` with the
    ///   diagonal included and row sums already zero;
    /// * sparse: `{"n": int, "triplets": [[i, j, rate], ..], "labels": [..]?}`
    ///   listing off-diagonal rates only; the diagonal is derived.
    pub fn from_json(doc: &Value) -> Result<Self> {
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::Domain("chain document must be a JSON object".into()))?;
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Domain("chain document needs an integer field \"n\"".into()))?
            as usize;
        let labels = match obj.get("labels") {
            None | Some(Value::Null) => None,
            Some(v) => Some(parse_f64_array(v, "labels")?),
        };
        let q = if let Some(rows) = obj.get("Q") {
            let rows = rows
                .as_array()
                .ok_or_else(|| Error::Domain("\"Q\" must be an array of rows".into()))?;
            if rows.len() != n {
                return Err(Error::Shape {
                    what: "dense chain rows",
                    expected: format!("{n}"),
                    got: format!("{}", rows.len()),
                });
            }
            let mut q = DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                let row = parse_f64_array(row, "Q row")?;
                if row.len() != n {
                    return Err(Error::Shape {
                        what: "dense chain row",
                        expected: format!("{n}"),
                        got: format!("{}", row.len()),
                    });
                }
                for (j, v) in row.into_iter().enumerate() {
                    q[(i, j)] = v;
                }
            }
            q
        } else if let Some(triplets) = obj.get("triplets") {
            let triplets = triplets
                .as_array()
                .ok_or_else(|| Error::Domain("\"triplets\" must be an array".into()))?;
            let mut q = DMatrix::zeros(n, n);
            for t in triplets {
                let t = parse_f64_array(t, "triplet")?;
                if t.len() != 3 {
                    return Err(Error::Domain(format!(
                        "triplet must be [i, j, rate], got {} entries",
                        t.len()
                    )));
                }
                let (i, j, rate) = (t[0] as usize, t[1] as usize, t[2]);
                if t[0].fract() != 0.0 || t[1].fract() != 0.0 || i >= n || j >= n || i == j {
                    return Err(Error::Domain(format!(
                        "triplet indices must be distinct integers below {n}"
                    )));
                }
                q[(i, j)] += rate;
            }
            for i in 0..n {
                let s = neumaier_sum((0..n).filter(|&j| j != i).map(|j| q[(i, j)]));
                q[(i, i)] = -s;
            }
            q
        } else {
            return Err(Error::Domain(
                "chain document needs either \"Q\" (dense) or \"triplets\" (sparse)".into(),
            ));
        };
        match labels {
            Some(l) => Self::with_labels(q, l),
            None => Self::new(q),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(s)?;
        Self::from_json(&doc)
    }
}

fn parse_f64_array(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Domain(format!("{what} must be an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::Domain(format!("{what} must contain numbers")))
        })
        .collect()
}

/// The invariant probability of a chain, plus the diagnostics that qualify
/// it: the stationarity residual of the solve and the detailed-balance
/// residual that decides reversibility.
#[derive(Debug, Clone)]
pub struct InvariantMeasure {
    pi: DVector<f64>,
    reversible: bool,
    stationarity_residual: f64,
    detailed_balance_residual: f64,
}

impl InvariantMeasure {
    fn compute(chain: &FiniteChain) -> Result<Self> {
        let n = chain.n();
        let q = chain.q();
        let pi = if chain.is_tridiagonal() {
            // Birth-death product form, assembled in log space so long
            // chains with strong drift cannot overflow:
            //   pi_{i+1} / pi_i = q_{i,i+1} / q_{i+1,i}.
            let mut logs = vec![0.0f64; n];
            for i in 0..n - 1 {
                let up = q[(i, i + 1)];
                let down = q[(i + 1, i)];
                if !(up > 0.0 && down > 0.0) {
                    return Err(Error::Internal(
                        "tridiagonal chain with a one-way edge survived validation".into(),
                    ));
                }
                logs[i + 1] = logs[i] + (up / down).ln();
            }
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
            let mass = neumaier_sum(weights.iter().copied());
            DVector::from_iterator(n, weights.into_iter().map(|w| w / mass))
        } else {
            // Direct solve of Q^T x = 0 with the normalization row
            // sum_i x_i = 1 replacing the (redundant) last equation.
            let mut m = q.transpose();
            for j in 0..n {
                m[(n - 1, j)] = 1.0;
            }
            let mut rhs = DVector::zeros(n);
            rhs[n - 1] = 1.0;
            let x = m
                .full_piv_lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Internal("stationary solve singular".into()))?;
            let mass = neumaier_sum(x.iter().copied());
            x / mass
        };

        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Internal(
                "invariant measure has a non-positive entry on an irreducible chain".into(),
            ));
        }

        // Residual of stationarity, on the scale of the rates involved.
        let scale = (0..n).map(|i| chain.exit_rate(i)).fold(1.0f64, f64::max);
        let mut res = 0.0f64;
        for j in 0..n {
            let s = neumaier_sum((0..n).map(|i| pi[i] * q[(i, j)]));
            res = res.max(s.abs());
        }
        let stationarity_residual = res / scale;
        if stationarity_residual > tol::STATIONARITY {
            return Err(Error::Internal(format!(
                "stationary residual {stationarity_residual:.3e} exceeds {:.1e}",
                tol::STATIONARITY
            )));
        }

        // Detailed balance, also relative to the rate scale.
        let mut db = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                db = db.max((pi[i] * q[(i, j)] - pi[j] * q[(j, i)]).abs());
            }
        }
        let detailed_balance_residual = db / scale;
        Ok(InvariantMeasure {
            pi,
            reversible: detailed_balance_residual <= tol::DETAILED_BALANCE,
            stationarity_residual,
            detailed_balance_residual,
        })
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn get(&self, i: usize) -> f64 {
        self.pi[i]
    }

    pub fn is_reversible(&self) -> bool {
        self.reversible
    }

    pub fn stationarity_residual(&self) -> f64 {
        self.stationarity_residual
    }

    pub fn detailed_balance_residual(&self) -> f64 {
        self.detailed_balance_residual
    }

    /// `pi(A)` for a target set.
    pub fn mass(&self, set: &TargetSet) -> f64 {
        neumaier_sum(set.states().iter().map(|&i| self.pi[i]))
    }

    /// `(f, g)_pi = sum_i pi_i f_i g_i`.
    pub fn inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        neumaier_sum((0..self.n()).map(|i| self.pi[i] * f[i] * g[i]))
    }

    /// Complex sesquilinear pairing `sum_i pi_i f_i conj(g_i)`.
    pub fn inner_complex(&self, f: &[Complex64], g: &[Complex64]) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..self.n() {
            s += self.pi[i] * f[i] * g[i].conj();
        }
        s
    }

    /// `E_pi f`.
    pub fn mean(&self, f: &DVector<f64>) -> f64 {
        neumaier_sum((0..self.n()).map(|i| self.pi[i] * f[i]))
    }

    /// `Var_pi f`, computed mean-extracted (two passes) so that adding a
    /// constant to `f` cannot leak cancellation error into the result.
    pub fn variance(&self, f: &DVector<f64>) -> f64 {
        let m = self.mean(f);
        neumaier_sum((0..self.n()).map(|i| {
            let d = f[i] - m;
            self.pi[i] * d * d
        }))
        .max(0.0)
    }
}

/// A non-empty subset of states, the set `K` whose hitting time the rest of
/// the crate studies. Stored as both a sorted list and a membership mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSet {
    n: usize,
    states: Vec<usize>,
    mask: Vec<bool>,
}

impl TargetSet {
    /// Target given by explicit state indices (deduplicated, order ignored).
    pub fn from_states(n: usize, states: &[usize]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Target("target set is empty".into()));
        }
        let mut sorted: Vec<usize> = states.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&bad) = sorted.iter().find(|&&s| s >= n) {
            return Err(Error::Target(format!(
                "state {bad} out of range for a chain with {n} states"
            )));
        }
        let mut mask = vec![false; n];
        for &s in &sorted {
            mask[s] = true;
        }
        Ok(TargetSet {
            n,
            states: sorted,
            mask,
        })
    }

    /// Target `{i : lo <= x_i <= hi}` in coordinate space. The chain must
    /// carry labels for this to mean anything.
    pub fn from_interval(chain: &FiniteChain, lo: f64, hi: f64) -> Result<Self> {
        let labels = chain
            .labels()
            .ok_or_else(|| Error::Target("coordinate targets require labels".into()))?;
        if !(lo <= hi) {
            return Err(Error::Target(format!(
                "interval [{lo}, {hi}] is empty or not ordered"
            )));
        }
        let states: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &x)| lo <= x && x <= hi)
            .map(|(i, _)| i)
            .collect();
        if states.is_empty() {
            return Err(Error::Target(format!(
                "no state labels fall inside [{lo}, {hi}]"
            )));
        }
        Self::from_states(chain.n(), &states)
    }

    /// The whole state space (legal as a target; hitting time is 0).
    pub fn full(n: usize) -> Self {
        TargetSet {
            n,
            states: (0..n).collect(),
            mask: vec![true; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids it
    }

    pub fn is_full(&self) -> bool {
        self.states.len() == self.n
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Sorted complement `V \ K`.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.mask[i]).collect()
    }

    /// Indicator function as a vector, `1_K`.
    pub fn indicator(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| if self.mask[i] { 1.0 } else { 0.0 })
    }

    pub fn to_json(&self) -> Value {
        json!(self.states)
    }
}
