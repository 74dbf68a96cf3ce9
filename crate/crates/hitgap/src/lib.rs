//! Spectral gaps, hitting times, and exponential moments for finite-state
//! reversible Markov chains.
//!
//! The crate turns one circle of ideas into executable form: for a reversible
//! chain with invariant measure `pi` and a target set `K`, the exponential
//! moment `E_x exp(alpha tau_K)` of the hitting time is finite exactly for
//! `alpha` below the principal Dirichlet eigenvalue of the generator killed
//! on `K`, and that threshold is never smaller than `pi(K)` times the
//! spectral gap. Around this sit the supporting objects: Dirichlet forms and
//! Poincare constants ([`spectral`]), resolvent-type potentials
//! `E_x exp(-z tau_K)` and hitting-time moments ([`potential`]), potentials
//! for general time profiles via semigroup quadrature or contour inversion
//! ([`laplace`]), Lyapunov drift and regeneration-cycle bounds, Monte Carlo
//! cross-checks ([`montecarlo`]), and a verification suite that replays the
//! inequalities on corpora of random chains and discretized diffusions
//! ([`verify`]).
//!
//! Everything is deterministic: random corpora and simulations take explicit
//! seeds, and reports serialize with enough digits to round-trip f64 exactly.

pub mod chain;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod expr;
pub mod laplace;
mod linalg;
pub mod montecarlo;
mod numeric;
pub mod potential;
pub mod psi;
pub mod report;
pub mod spectral;
pub mod tol;
pub mod verify;

pub use chain::{FiniteChain, InvariantMeasure, TargetSet, ValidationReport};
pub use diffusion::{discretize_diffusion_1d, DiffusionSpec1D};
pub use error::{Error, Result};
