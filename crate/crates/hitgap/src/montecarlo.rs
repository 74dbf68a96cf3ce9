//! Monte Carlo hitting-time machinery: exact jump-chain sampling, an
//! Euler-Maruyama scheme with boundary-crossing correction for the
//! continuous models, and the estimators that confront both with the
//! analytic routes.
//!
//! Everything is deterministic given a seed. Work is pre-partitioned into a
//! fixed number of logical workers, each drawing from its own counter-mode
//! stream of the same keyed generator, so results do not depend on thread
//! count or scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::chain::{FiniteChain, TargetSet};
use crate::diffusion::DiffusionSpec1D;
use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;
use crate::tol;

/// Fixed logical worker count; part of the reproducibility contract.
const WORKERS: u64 = 16;

/// A batch of first-hitting times drawn under one scheme.
#[derive(Debug, Clone)]
pub struct HittingSample {
    pub times: Vec<f64>,
    pub start_label: f64,
    pub seed: u64,
    pub scheme: &'static str,
    /// Paths stopped at the cap with their times recorded as the cap.
    pub censored: usize,
    pub cap: Option<f64>,
}

fn worker_ranges(n: usize) -> Vec<(u64, usize)> {
    let w = WORKERS as usize;
    (0..w)
        .map(|k| {
            let count = n / w + usize::from(k < n % w);
            (k as u64, count)
        })
        .collect()
}

fn run_workers<F>(n_paths: usize, seed: u64, body: F) -> (Vec<f64>, usize)
where
    F: Fn(&mut ChaCha8Rng, usize) -> (Vec<f64>, usize) + Sync,
{
    let chunks: Vec<(Vec<f64>, usize)> = worker_ranges(n_paths)
        .into_par_iter()
        .map(|(stream, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            body(&mut rng, count)
        })
        .collect();
    let mut times = Vec::with_capacity(n_paths);
    let mut censored = 0;
    for (mut t, c) in chunks {
        times.append(&mut t);
        censored += c;
    }
    (times, censored)
}

/// Exact simulation of `tau_K` through the embedded jump chain: holding
/// times are exponential in the exit rates, jump targets proportional to
/// the off-diagonal rates. No discretization error.
pub fn sample_hitting_times(
    chain: &FiniteChain,
    k_set: &TargetSet,
    start: usize,
    n_paths: usize,
    seed: u64,
    cap: Option<f64>,
) -> Result<HittingSample> {
    if start >= chain.n() {
        return Err(Error::Domain(format!(
            "start state {start} out of range for {} states",
            chain.n()
        )));
    }
    if k_set.n() != chain.n() {
        return Err(Error::Shape {
            what: "target set",
            expected: format!("{}", chain.n()),
            got: format!("{}", k_set.n()),
        });
    }
    let n = chain.n();
    // Precompute exit distributions once.
    let mut exits: Vec<(f64, Vec<(usize, f64)>)> = Vec::with_capacity(n);
    for i in 0..n {
        let rate = chain.exit_rate(i);
        let row: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i && chain.rate(i, j) > 0.0)
            .map(|j| (j, chain.rate(i, j)))
            .collect();
        exits.push((rate, row));
    }
    let hard_cap = cap.unwrap_or(f64::INFINITY);
    let (times, censored) = run_workers(n_paths, seed, |rng, count| {
        let mut local = Vec::with_capacity(count);
        let mut censored = 0usize;
        for _ in 0..count {
            let mut x = start;
            let mut t = 0.0f64;
            loop {
                if k_set.contains(x) {
                    local.push(t);
                    break;
                }
                let (rate, ref row) = exits[x];
                t += Exp::new(rate).expect("positive exit rate").sample(rng);
                if t >= hard_cap {
                    local.push(hard_cap);
                    censored += 1;
                    break;
                }
                let mut pick = rng.gen::<f64>() * rate;
                let mut next = row[row.len() - 1].0;
                for &(j, r) in row {
                    if pick < r {
                        next = j;
                        break;
                    }
                    pick -= r;
                }
                x = next;
            }
        }
        (local, censored)
    });
    Ok(HittingSample {
        times,
        start_label: start as f64,
        seed,
        scheme: "jump_chain",
        censored,
        cap,
    })
}

/// Euler-Maruyama simulation of the first entry into the interval
/// `[k_lo, k_hi]` for the one-dimensional model `dX = a dt + sqrt(b) dW`.
///
/// With `bridge` set, each step both of whose endpoints are on the same
/// side of the nearest barrier is additionally tested for an unobserved
/// crossing with the Brownian-bridge probability
/// `exp(-2 (x_k - r)(x_{k+1} - r) / (b dt))`; without it the scheme
/// systematically overshoots hitting times by `O(sqrt(dt))`.
#[allow(clippy::too_many_arguments)]
pub fn sample_diffusion_hitting(
    spec: &DiffusionSpec1D,
    k_lo: f64,
    k_hi: f64,
    start: f64,
    n_paths: usize,
    dt: f64,
    bridge: bool,
    seed: u64,
    cap: Option<f64>,
) -> Result<HittingSample> {
    let [dom_lo, dom_hi] = spec.domain();
    if !(k_lo < k_hi) || k_lo < dom_lo || k_hi > dom_hi {
        return Err(Error::Domain(format!(
            "target interval [{k_lo}, {k_hi}] must sit inside the domain [{dom_lo}, {dom_hi}]"
        )));
    }
    if start < dom_lo || start > dom_hi {
        return Err(Error::Domain(format!(
            "start {start} outside the domain [{dom_lo}, {dom_hi}]"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain("time step must be positive".into()));
    }
    let hard_cap = cap.unwrap_or(f64::INFINITY);
    let (times, censored) = run_workers(n_paths, seed, |rng, count| {
        let mut local = Vec::with_capacity(count);
        let mut censored = 0usize;
        for _ in 0..count {
            let mut x = start;
            let mut t = 0.0f64;
            loop {
                if x >= k_lo && x <= k_hi {
                    local.push(t);
                    break;
                }
                if t >= hard_cap {
                    local.push(hard_cap);
                    censored += 1;
                    break;
                }
                let b = spec.diffusion_at(x);
                let drift = spec.drift_at(x);
                let g: f64 = StandardNormal.sample(rng);
                let mut y = x + drift * dt + (b * dt).sqrt() * g;
                // Reflect at the domain ends (the discretized chains are
                // likewise confined).
                if y < dom_lo {
                    y = 2.0 * dom_lo - y;
                }
                if y > dom_hi {
                    y = 2.0 * dom_hi - y;
                }
                let crossed = if y >= k_lo && y <= k_hi {
                    true
                } else if x > k_hi && y < k_lo || x < k_lo && y > k_hi {
                    true // jumped clean across the target
                } else if bridge {
                    // Both endpoints on one side: bridge test against the
                    // barrier on that side.
                    let r = if x > k_hi { k_hi } else { k_lo };
                    let p = (-2.0 * (x - r) * (y - r) / (b * dt)).exp();
                    rng.gen::<f64>() < p
                } else {
                    false
                };
                t += dt;
                if crossed {
                    local.push(t);
                    break;
                }
                x = y;
            }
        }
        (local, censored)
    });
    Ok(HittingSample {
        times,
        start_label: start,
        seed,
        scheme: if bridge { "em_bridge" } else { "em" },
        censored,
        cap,
    })
}

/// Empirical `E exp(alpha tau)` with its normal-theory confidence interval
/// and heavy-tail diagnostics.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub alpha: f64,
    pub mean: f64,
    /// Half-width of the 95% confidence interval.
    pub ci_half_width: f64,
    pub n: usize,
    pub censored: usize,
    /// The top percentile carries over half the total mass: the CLT interval
    /// is unreliable and the run sits too close to the blow-up threshold.
    pub tail_flag: bool,
    /// Censored paths contribute `exp(alpha cap)`, which can only
    /// under-estimate; the estimate is then a lower bound.
    pub lower_bound_only: bool,
}

pub fn estimate_exp_moment(sample: &HittingSample, alpha: f64) -> MomentEstimate {
    let values: Vec<f64> = sample.times.iter().map(|&t| (alpha * t).exp()).collect();
    estimate_from_values(&values, alpha, sample.censored)
}

/// Mean hitting time with confidence interval (`alpha` reported as zero).
pub fn estimate_mean_time(sample: &HittingSample) -> MomentEstimate {
    estimate_from_values(&sample.times, 0.0, sample.censored)
}

fn estimate_from_values(values: &[f64], alpha: f64, censored: usize) -> MomentEstimate {
    let n = values.len();
    if n == 0 {
        return MomentEstimate {
            alpha,
            mean: f64::NAN,
            ci_half_width: f64::INFINITY,
            n: 0,
            censored,
            tail_flag: false,
            lower_bound_only: censored > 0,
        };
    }
    let total = neumaier_sum(values.iter().copied());
    let mean = total / n as f64;
    let var = neumaier_sum(values.iter().map(|&v| (v - mean) * (v - mean)))
        / (n as f64 - 1.0).max(1.0);
    let ci = tol::Z_95 * (var.max(0.0) / n as f64).sqrt();
    // Heavy-tail diagnostic: mass share of the top 1% (at least one value).
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let top = (n / 100).max(1);
    let top_mass = neumaier_sum(sorted[n - top..].iter().copied());
    let tail_flag = total > 0.0 && top_mass > 0.5 * total;
    MomentEstimate {
        alpha,
        mean,
        ci_half_width: ci,
        n,
        censored,
        tail_flag,
        lower_bound_only: censored > 0,
    }
}

/// Monte Carlo estimate of `(e^{tQ} phi)(start) = E_start phi(X_t)` by
/// exact jump-chain simulation up to time `t`. An independent probe of the
/// same quantity the deterministic semigroup propagators compute.
pub fn estimate_semigroup_value(
    chain: &FiniteChain,
    start: usize,
    t: f64,
    phi: &DVector<f64>,
    n_paths: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if start >= chain.n() {
        return Err(Error::Domain(format!(
            "start state {start} out of range for {} states",
            chain.n()
        )));
    }
    if phi.len() != chain.n() {
        return Err(Error::Shape {
            what: "semigroup argument",
            expected: format!("{}", chain.n()),
            got: format!("{}", phi.len()),
        });
    }
    if !(t >= 0.0) {
        return Err(Error::Domain("time must be nonnegative".into()));
    }
    let n = chain.n();
    let mut exits: Vec<(f64, Vec<(usize, f64)>)> = Vec::with_capacity(n);
    for i in 0..n {
        let rate = chain.exit_rate(i);
        let row: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i && chain.rate(i, j) > 0.0)
            .map(|j| (j, chain.rate(i, j)))
            .collect();
        exits.push((rate, row));
    }
    let (values, _) = run_workers(n_paths, seed, |rng, count| {
        let mut local = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = start;
            let mut clock = 0.0f64;
            loop {
                let (rate, ref row) = exits[x];
                if rate <= 0.0 {
                    break; // absorbing
                }
                clock += Exp::new(rate).expect("positive exit rate").sample(rng);
                if clock > t {
                    break;
                }
                let mut pick = rng.gen::<f64>() * rate;
                let mut next = row[row.len() - 1].0;
                for &(j, r) in row {
                    if pick < r {
                        next = j;
                        break;
                    }
                    pick -= r;
                }
                x = next;
            }
            local.push(phi[x]);
        }
        (local, 0)
    });
    Ok(estimate_from_values(&values, 0.0, 0))
}

/// One-sample Kolmogorov-Smirnov test against `Exponential(rate)`.
#[derive(Debug, Clone)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub pass: bool,
}

/// The asymptotic Kolmogorov distribution with the small-sample correction
/// `(sqrt(n) + 0.12 + 0.11/sqrt(n)) D`; `pass` holds when the p-value is at
/// least [`tol::KS_ALPHA`].
pub fn ks_exponential(times: &[f64], rate: f64) -> Result<KsReport> {
    if times.is_empty() {
        return Err(Error::Domain("KS test needs a nonempty sample".into()));
    }
    if !(rate > 0.0) {
        return Err(Error::Domain("KS reference rate must be positive".into()));
    }
    let n = times.len();
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, &t) in sorted.iter().enumerate() {
        let f = 1.0 - (-rate * t).exp();
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0f64;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    let p = p.clamp(0.0, 1.0);
    Ok(KsReport {
        statistic: d,
        p_value: p,
        n,
        pass: p >= tol::KS_ALPHA,
    })
}

/// Render a sample as CSV: commented header, one hitting time per row.
pub fn times_to_csv(sample: &HittingSample) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# scheme={} seed={} start={} n={} censored={} cap={}\n",
        sample.scheme,
        sample.seed,
        sample.start_label,
        sample.times.len(),
        sample.censored,
        sample
            .cap
            .map_or("none".to_string(), |c| format!("{c:.16e}")),
    ));
    out.push_str("time\n");
    for t in &sample.times {
        out.push_str(&format!("{t:.16e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state() -> (FiniteChain, TargetSet) {
        let chain = FiniteChain::birth_death(&[1.0], &[2.0]).unwrap();
        let k = TargetSet::from_states(2, &[0]).unwrap();
        (chain, k)
    }

    #[test]
    fn jump_times_from_state_one_are_exponential() {
        // tau_{0} from state 1 is a single exponential(2) holding time, so
        // the KS test against that law must pass.
        let (chain, k) = two_state();
        let sample = sample_hitting_times(&chain, &k, 1, 4000, 7, None).unwrap();
        assert_eq!(sample.times.len(), 4000);
        assert_eq!(sample.censored, 0);
        let ks = ks_exponential(&sample.times, 2.0).unwrap();
        assert!(ks.pass, "D = {:.4}, p = {:.4}", ks.statistic, ks.p_value);
        // And against a visibly wrong rate it must fail.
        let bad = ks_exponential(&sample.times, 3.0).unwrap();
        assert!(!bad.pass);
    }

    #[test]
    fn exp_moment_matches_the_closed_form() {
        // E exp(alpha tau) = 2/(2 - alpha) for alpha < 2.
        let (chain, k) = two_state();
        let sample = sample_hitting_times(&chain, &k, 1, 40_000, 11, None).unwrap();
        let est = estimate_exp_moment(&sample, 0.5);
        let exact = 2.0 / 1.5;
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.ci_half_width,
            "mean {} vs exact {} (ci {})",
            est.mean,
            exact,
            est.ci_half_width
        );
        assert!(!est.tail_flag);
        assert!(!est.lower_bound_only);

        let tm = estimate_mean_time(&sample);
        assert!((tm.mean - 0.5).abs() <= 3.0 * tm.ci_half_width);
    }

    #[test]
    fn same_seed_means_identical_output() {
        let (chain, k) = two_state();
        let a = sample_hitting_times(&chain, &k, 1, 1000, 42, None).unwrap();
        let b = sample_hitting_times(&chain, &k, 1, 1000, 42, None).unwrap();
        assert_eq!(a.times, b.times);
        let c = sample_hitting_times(&chain, &k, 1, 1000, 43, None).unwrap();
        assert_ne!(a.times, c.times);
    }

    #[test]
    fn censoring_is_reported_as_a_lower_bound() {
        let (chain, k) = two_state();
        let sample = sample_hitting_times(&chain, &k, 1, 500, 3, Some(1e-6)).unwrap();
        assert!(sample.censored > 400); // nearly every path outlives 1e-6
        let est = estimate_exp_moment(&sample, 1.0);
        assert!(est.lower_bound_only);
    }

    #[test]
    fn near_threshold_runs_raise_the_tail_flag() {
        // alpha = 1.9 against alpha* = 2: the summand e^{1.9 tau} has tail
        // index ~1.05, so the top percentile dominates the sum.
        let (chain, k) = two_state();
        let sample = sample_hitting_times(&chain, &k, 1, 20_000, 5, None).unwrap();
        let est = estimate_exp_moment(&sample, 1.9);
        assert!(est.tail_flag);
    }

    #[test]
    fn semigroup_probe_matches_the_two_state_closed_form() {
        // P_{1 -> 1}(t) = 1/3 + (2/3) e^{-3t}.
        let (chain, _k) = two_state();
        let phi = DVector::from_vec(vec![0.0, 1.0]);
        let t = 0.4;
        let est = estimate_semigroup_value(&chain, 1, t, &phi, 20_000, 9).unwrap();
        let exact = 1.0 / 3.0 + (2.0 / 3.0) * (-3.0 * t).exp();
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.ci_half_width,
            "mean {} vs exact {} (ci {})",
            est.mean,
            exact,
            est.ci_half_width
        );
    }

    #[test]
    fn bridge_correction_shortens_hitting_times() {
        // The naive scheme only counts end-of-step entries and overshoots;
        // the bridge variant catches intra-step crossings, so its mean must
        // come out smaller on matched seeds.
        let spec = DiffusionSpec1D::new("-x", "2", [-6.0, 6.0], 200).unwrap();
        let naive =
            sample_diffusion_hitting(&spec, -1.0, 1.0, 2.5, 4000, 1e-2, false, 21, None).unwrap();
        let bridged =
            sample_diffusion_hitting(&spec, -1.0, 1.0, 2.5, 4000, 1e-2, true, 21, None).unwrap();
        let m_naive = estimate_mean_time(&naive);
        let m_bridge = estimate_mean_time(&bridged);
        assert!(
            m_bridge.mean < m_naive.mean,
            "bridge {} vs naive {}",
            m_bridge.mean,
            m_naive.mean
        );
        assert_eq!(naive.scheme, "em");
        assert_eq!(bridged.scheme, "em_bridge");
    }

    #[test]
    fn worker_partition_covers_every_path() {
        let ranges = worker_ranges(103);
        let total: usize = ranges.iter().map(|&(_, c)| c).sum();
        assert_eq!(total, 103);
        assert_eq!(ranges.len(), 16);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let (chain, k) = two_state();
        let sample = sample_hitting_times(&chain, &k, 1, 5, 1, None).unwrap();
        let csv = times_to_csv(&sample);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# scheme=jump_chain seed=1"));
        assert_eq!(lines[1], "time");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn start_inside_the_target_hits_immediately() {
        let (chain, k) = two_state();
        let sample = sample_hitting_times(&chain, &k, 0, 50, 2, None).unwrap();
        assert!(sample.times.iter().all(|&t| t == 0.0));
        let est = estimate_exp_moment(&sample, 1.0);
        assert_relative_eq!(est.mean, 1.0);
        assert_eq!(est.ci_half_width, 0.0);
    }
}
