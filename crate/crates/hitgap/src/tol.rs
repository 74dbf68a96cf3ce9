//! Central registry of numerical tolerances.
//!
//! Every tolerance the library enforces lives here as a named constant, so a
//! reader can audit in one place how tight each guarantee is and tests never
//! bake in magic numbers. Constants are grouped by the pipeline stage they
//! guard. Unless stated otherwise a tolerance is applied to a *relative*
//! quantity scaled by `max(1, |value|)`.

/// Maximum absolute row sum allowed when accepting a generator matrix.
/// Row sums of a conservative generator are exactly zero in exact arithmetic;
/// this absorbs the rounding from assembling rates in f64.
pub const ROW_SUM: f64 = 1e-12;

/// Residual bound for the invariant measure: `max_j |(pi Q)_j|` after
/// normalizing `pi` to unit mass. The solve is direct, so only rounding noise
/// should remain.
pub const STATIONARITY: f64 = 1e-10;

/// Detailed-balance residual `max_ij |pi_i q_ij - pi_j q_ji|` below which a
/// chain is classified as reversible.
pub const DETAILED_BALANCE: f64 = 1e-10;

/// Agreement required between the two independent Dirichlet-energy formulas
/// (operator pairing vs. symmetric double sum over edges).
pub const DIRICHLET_DUAL: f64 = 1e-10;

/// Eigenpair residual `||S v - lambda v||_inf`, relative to the largest
/// diagonal magnitude of the symmetrized operator.
pub const EIGEN_RESIDUAL: f64 = 1e-8;

/// Relative width at which the blow-up-threshold bisection stops.
pub const THRESHOLD_BISECTION: f64 = 1e-12;

/// Agreement required between the bisection route and the principal
/// killed-eigenvalue route for the blow-up threshold.
pub const THRESHOLD_DUAL: f64 = 1e-9;

/// Linear-system residual accepted for potential solves, measured as
/// `||(Q - z)h + rhs||_inf` on the off-target states, relative to the scale
/// of the assembled right-hand side.
pub const POTENTIAL_RESIDUAL: f64 = 1e-9;

/// Residual for weak (pairing) identities checked against exact algebra on
/// small chains, e.g. E(h,u) vs. its closed form.
pub const WEAK_IDENTITY: f64 = 1e-10;

/// Agreement between the contour-inversion value of a psi-potential and the
/// time-domain quadrature oracle.
pub const CONTOUR_AGREEMENT: f64 = 1e-6;

/// Largest imaginary residue tolerated when a contour integral of a real
/// quantity is reassembled from the two half-lines.
pub const CONTOUR_IMAG: f64 = 1e-8;

/// Relative residual allowed in the energy-pairing identity
/// `E(h_psi, u) = (h_{psi'}, u)_pi` when both sides come from the
/// time-domain quadrature route (looser than [`WEAK_IDENTITY`] because the
/// inputs themselves carry quadrature truncation error).
pub const PAIRING_RESIDUAL: f64 = 1e-8;

/// Survival probability below which the time-domain integrator may stop
/// extending its horizon.
pub const SURVIVAL_CUTOFF: f64 = 1e-12;

/// Step used by the finite-difference smoothness probe on time profiles.
pub const PROBE_STEP: f64 = 1e-3;

/// Relative slack allowed when checking the lower bound
/// `alpha_star >= pi(K) * gap`: the bound may fail by at most this amount
/// times `max(1, alpha_star)` before the check is declared violated.
pub const BOUND_SLACK: f64 = 1e-8;

/// Significance level for the Kolmogorov-Smirnov sanity test on simulated
/// hitting times of a single-state target.
pub const KS_ALPHA: f64 = 0.01;

/// Two-sided 95% normal quantile used for Monte Carlo confidence intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;
