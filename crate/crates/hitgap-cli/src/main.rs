//! Command-line front end: each subcommand reads one JSON experiment
//! configuration, runs the corresponding computation from the library, and
//! emits a full-precision JSON report (CSV for sweeps) to stdout or to a
//! file.
//!
//! Exit codes: 0 success, 1 a verification or cross-check failed, 2 bad
//! input or configuration, 3 numerical failure.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hitgap::config::{resolve_seed, ExperimentConfig};
use hitgap::error::{Error, Result};
use hitgap::laplace::{psi_potential_contour, psi_potential_direct, ContourOpts, QuadratureSpec};
use hitgap::potential::{blowup_threshold, exp_moment_potential, lyapunov_potential};
use hitgap::report::{sha256_hex, sweep_csv, to_json_string, ReportEnvelope, SweepRow};
use hitgap::spectral::spectral_gap;
use hitgap::verify::{mc_exp_moment, run_suite, McSettings, SuiteOptions};
use hitgap::{tol, TargetSet};

#[derive(Parser)]
#[command(
    name = "hitgap",
    version,
    about = "Hitting-time thresholds, spectral gaps and exponential-moment \
             cross-checks for finite reversible Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Write the report here instead of stdout (overrides `output` in the
    /// configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral gap and Poincare constant of the instance.
    Gap(CommonArgs),
    /// Blow-up threshold of E exp(alpha tau_K) with its pi(K) * gap lower
    /// bound.
    Threshold(CommonArgs),
    /// Exponential-moment potentials at the configured exponents, plus the
    /// Lyapunov drift certificate at the first one.
    Potential {
        #[command(flatten)]
        common: CommonArgs,
        /// Absolute exponent override; replaces the configured list.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Time-profile potential E_x psi(tau) by the direct route, with a
    /// contour cross-check when the configuration sets `sigma`.
    Psi(CommonArgs),
    /// Monte Carlo estimate of E exp(alpha tau) against the analytic value.
    Mc {
        #[command(flatten)]
        common: CommonArgs,
        /// Seed override (highest priority, above HITGAP_SEED and the
        /// configuration).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the verification suite on the instance.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Seed override (highest priority, above HITGAP_SEED and the
        /// configuration).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Threshold sweep over a seeded random corpus, reported as CSV.
    Sweep(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gap(args) => cmd_gap(args),
        Command::Threshold(args) => cmd_threshold(args),
        Command::Potential { common, alpha } => cmd_potential(common, *alpha),
        Command::Psi(args) => cmd_psi(args),
        Command::Mc { common, seed } => cmd_mc(common, *seed),
        Command::Verify { common, seed } => cmd_verify(common, *seed),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

struct Loaded {
    cfg: ExperimentConfig,
    digest: String,
}

fn load(config: &Path) -> Result<Loaded> {
    let raw = fs::read_to_string(config)?;
    let cfg = ExperimentConfig::from_str(&raw)?;
    Ok(Loaded {
        cfg,
        digest: sha256_hex(raw.as_bytes()),
    })
}

fn emit(flag: Option<&PathBuf>, configured: Option<&str>, content: &str) -> Result<()> {
    let path = flag.cloned().or_else(|| configured.map(PathBuf::from));
    let text = format!("{}\n", content.trim_end_matches('\n'));
    match path {
        Some(p) => {
            fs::write(&p, &text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gap(args: &CommonArgs) -> Result<i32> {
    let Loaded { cfg, digest } = load(&args.config)?;
    let chain = cfg.instance.build()?;
    let pi = chain.invariant_measure()?;
    let t0 = Instant::now();
    let rep = spectral_gap(&chain, &pi)?;
    let mut env = ReportEnvelope::new("gap", &cfg.instance.id());
    env.config_digest = Some(digest);
    env.record_time("spectral_gap", t0.elapsed().as_secs_f64());
    env.payload = rep.to_json();
    emit(
        args.out.as_ref(),
        cfg.output.as_deref(),
        &to_json_string(&env.finish()),
    )?;
    Ok(0)
}

fn cmd_threshold(args: &CommonArgs) -> Result<i32> {
    let Loaded { cfg, digest } = load(&args.config)?;
    let chain = cfg.instance.build()?;
    let pi = chain.invariant_measure()?;
    let k = cfg.require_target()?.build(&chain)?;
    let t0 = Instant::now();
    let thr = blowup_threshold(&chain, &pi, &k)?;
    let mut env = ReportEnvelope::new("threshold", &cfg.instance.id());
    env.config_digest = Some(digest);
    env.record_time("blowup_threshold", t0.elapsed().as_secs_f64());
    env.payload = thr.to_json();
    emit(
        args.out.as_ref(),
        cfg.output.as_deref(),
        &to_json_string(&env.finish()),
    )?;
    Ok(0)
}

fn cmd_potential(args: &CommonArgs, alpha_override: Option<f64>) -> Result<i32> {
    let Loaded { cfg, digest } = load(&args.config)?;
    let chain = cfg.instance.build()?;
    let pi = chain.invariant_measure()?;
    let k = cfg.require_target()?.build(&chain)?;
    let alphas = match alpha_override {
        Some(a) if a > 0.0 => vec![a],
        Some(a) => {
            return Err(Error::Domain(format!(
                "--alpha must be positive, got {a}"
            )))
        }
        None => cfg.alphas.resolve(&chain, &pi, &k)?,
    };
    if alphas.is_empty() {
        return Err(Error::Config {
            issues: vec!["alphas: the list resolved to nothing".into()],
        });
    }
    let t0 = Instant::now();
    let mut potentials = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        potentials.push(exp_moment_potential(&chain, &pi, &k, alpha)?.to_json());
    }
    let cert = lyapunov_potential(&chain, &pi, &k, alphas[0])?;
    let mut env = ReportEnvelope::new("potential", &cfg.instance.id());
    env.config_digest = Some(digest);
    env.record_time("potentials", t0.elapsed().as_secs_f64());
    env.payload = json!({
        "alphas": alphas,
        "potentials": potentials,
        "lyapunov": cert.to_json(),
    });
    emit(
        args.out.as_ref(),
        cfg.output.as_deref(),
        &to_json_string(&env.finish()),
    )?;
    Ok(0)
}

fn cmd_psi(args: &CommonArgs) -> Result<i32> {
    let Loaded { cfg, digest } = load(&args.config)?;
    let chain = cfg.instance.build()?;
    let pi = chain.invariant_measure()?;
    let k = cfg.require_target()?.build(&chain)?;
    let psi = cfg.psi.as_ref().ok_or_else(|| Error::Config {
        issues: vec!["psi: this command needs a psi section".into()],
    })?;
    let quad = QuadratureSpec::default();
    let t0 = Instant::now();
    let direct = psi_potential_direct(&chain, &k, psi, &quad)?;
    let direct_secs = t0.elapsed().as_secs_f64();
    let d = direct.real_vector();

    let mut env = ReportEnvelope::new("psi", &cfg.instance.id());
    env.config_digest = Some(digest);
    env.record_time("direct", direct_secs);
    let mut pass = true;
    let mut payload = json!({ "direct": direct.to_json() });
    if let Some(sigma) = cfg.sigma {
        let t1 = Instant::now();
        let out = psi_potential_contour(&chain, &pi, &k, psi, sigma, &ContourOpts::default())?;
        env.record_time("contour", t1.elapsed().as_secs_f64());
        let agreement = (&out.potential.real_vector() - &d).amax();
        pass = agreement <= tol::CONTOUR_AGREEMENT;
        payload["contour"] = json!({
            "potential": out.potential.to_json(),
            "sigma": out.sigma,
            "t_im": out.t_im,
            "step": out.step,
            "nodes": out.nodes,
            "truncation_bound": out.truncation_bound,
            "envelope_tail": out.envelope_tail,
            "imag_residue": out.imag_residue,
            "agreement": agreement,
            "tolerance": tol::CONTOUR_AGREEMENT,
        });
    }
    payload["pass"] = json!(pass);
    env.payload = payload;
    emit(
        args.out.as_ref(),
        cfg.output.as_deref(),
        &to_json_string(&env.finish()),
    )?;
    Ok(if pass { 0 } else { 1 })
}

fn cmd_mc(args: &CommonArgs, seed_flag: Option<u64>) -> Result<i32> {
    let Loaded { cfg, digest } = load(&args.config)?;
    let chain = cfg.instance.build()?;
    let pi = chain.invariant_measure()?;
    let k = cfg.require_target()?.build(&chain)?;
    let mcc = cfg.mc.clone().ok_or_else(|| Error::Config {
        issues: vec!["mc: this command needs an mc section".into()],
    })?;
    let choice = resolve_seed(seed_flag, mcc.seed.or(cfg.seed))?;
    let settings = McSettings {
        start: mcc.start,
        n_paths: mcc.n_paths,
        alpha_frac: mcc.alpha_frac,
        seed: choice.seed,
    };
    let t0 = Instant::now();
    let rep = mc_exp_moment(&chain, &pi, &k, &settings, &cfg.instance.id())?;
    let mut env = ReportEnvelope::new("mc", &cfg.instance.id());
    env.config_digest = Some(digest);
    env.seed = Some(choice);
    env.record_time("sampling", t0.elapsed().as_secs_f64());
    let pass = rep.pass;
    env.payload = rep.to_json();
    emit(
        args.out.as_ref(),
        cfg.output.as_deref(),
        &to_json_string(&env.finish()),
    )?;
    Ok(if pass { 0 } else { 1 })
}

fn cmd_verify(args: &CommonArgs, seed_flag: Option<u64>) -> Result<i32> {
    let Loaded { cfg, digest } = load(&args.config)?;
    let chain = cfg.instance.build()?;
    let pi = chain.invariant_measure()?;
    let k = cfg.require_target()?.build(&chain)?;
    let choice = resolve_seed(seed_flag, cfg.seed)?;
    let mut opts = SuiteOptions::default();
    if let Some(mcc) = &cfg.mc {
        opts.mc = Some(mcc.settings(choice.seed));
    }
    let t0 = Instant::now();
    let mut reports = run_suite(&chain, &pi, &k, &cfg.instance.id(), &opts)?;
    let suite_secs = t0.elapsed().as_secs_f64();
    if let Some(filter) = &cfg.checks {
        reports.retain(|r| {
            filter
                .iter()
                .any(|c| r.check_id == *c || r.check_id.starts_with(&format!("{c}_")))
        });
        if reports.is_empty() {
            return Err(Error::Config {
                issues: vec![format!("checks: no suite check matches {filter:?}")],
            });
        }
    }
    let all_pass = reports.iter().all(|r| r.pass);
    let skipped = reports.iter().filter(|r| r.skipped.is_some()).count();
    let failed = reports.iter().filter(|r| !r.pass).count();
    let mut env = ReportEnvelope::new("verify", &cfg.instance.id());
    env.config_digest = Some(digest);
    env.seed = Some(choice);
    env.record_time("suite", suite_secs);
    env.payload = json!({
        "reports": reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        "all_pass": all_pass,
        "counts": {
            "total": reports.len(),
            "passed": reports.len() - failed,
            "skipped": skipped,
            "failed": failed,
        },
    });
    emit(
        args.out.as_ref(),
        cfg.output.as_deref(),
        &to_json_string(&env.finish()),
    )?;
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_sweep(args: &CommonArgs) -> Result<i32> {
    let Loaded { cfg, .. } = load(&args.config)?;
    let sw = cfg.sweep.clone();
    let mut rows = Vec::new();
    let mut all_hold = true;
    for i in 0..sw.instances {
        let instance_seed = sw.seed.wrapping_add(i as u64);
        let chain = hitgap::verify::random_reversible_chain(sw.n, instance_seed)?;
        let pi = chain.invariant_measure()?;
        for t in 0..sw.targets {
            // Deterministic small targets spread across the corpus; a set
            // never swallows the whole state space (size <= 3 < n).
            let size = 1 + (i + t) % 3;
            let stride = 1 + (2 * t + i) % (sw.n - 1);
            let states: BTreeSet<usize> = (0..size)
                .map(|j| (7 * i + 11 * t + j * stride) % sw.n)
                .collect();
            let states: Vec<usize> = states.into_iter().collect();
            let k = TargetSet::from_states(sw.n, &states)?;
            let thr = blowup_threshold(&chain, &pi, &k)?;
            if thr.slack < -tol::BOUND_SLACK * thr.alpha_star.max(1.0) {
                all_hold = false;
            }
            let target = format!(
                "{{{}}}",
                states
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            );
            rows.push(SweepRow {
                instance: format!("random_{}_seed{}", sw.n, instance_seed),
                n: sw.n,
                target,
                alpha_star: thr.alpha_star,
                pi_k: thr.pi_k,
                gap: thr.gap,
                lower_bound: thr.lower_bound,
                slack: thr.slack,
            });
        }
    }
    emit(args.out.as_ref(), cfg.output.as_deref(), &sweep_csv(&rows))?;
    Ok(if all_hold { 0 } else { 1 })
}
