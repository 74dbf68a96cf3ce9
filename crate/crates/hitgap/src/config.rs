//! Experiment configuration: one JSON document describing an instance, a
//! target, and the knobs each command needs.
//!
//! Parsing is all-at-once: every problem found is collected into a single
//! [`Error::Config`] rejection, so a bad file is fixed in one round trip
//! rather than one complaint per run.

use std::path::Path;

use serde_json::{Map, Value};

use crate::chain::{FiniteChain, TargetSet};
use crate::diffusion::DiffusionSpec1D;
use crate::error::{Error, Result};
use crate::potential::blowup_threshold;
use crate::psi::PsiFunction;
use crate::verify::{random_reversible_chain, McSettings};

/// How the chain is produced.
#[derive(Debug, Clone)]
pub enum InstanceSpec {
    /// An explicit generator document (the same schema the chain serializes
    /// to: `n`, `Q` as dense rows, optional `labels`).
    Chain(Value),
    BirthDeath { up: Vec<f64>, down: Vec<f64> },
    Random { n: usize, seed: u64 },
    Diffusion(DiffusionSpec1D),
}

impl InstanceSpec {
    pub fn build(&self) -> Result<FiniteChain> {
        match self {
            InstanceSpec::Chain(doc) => FiniteChain::from_json(doc),
            InstanceSpec::BirthDeath { up, down } => FiniteChain::birth_death(up, down),
            InstanceSpec::Random { n, seed } => random_reversible_chain(*n, *seed),
            InstanceSpec::Diffusion(spec) => spec.discretize(),
        }
    }

    /// Short name identifying the instance in reports.
    pub fn id(&self) -> String {
        match self {
            InstanceSpec::Chain(doc) => {
                let n = doc.get("n").and_then(Value::as_u64).unwrap_or(0);
                format!("chain_{n}")
            }
            InstanceSpec::BirthDeath { up, .. } => format!("birth_death_{}", up.len() + 1),
            InstanceSpec::Random { n, seed } => format!("random_{n}_seed{seed}"),
            InstanceSpec::Diffusion(spec) => format!("diffusion_{}", spec.grid()),
        }
    }
}

/// How the target set is selected.
#[derive(Debug, Clone)]
pub enum TargetSpec {
    States(Vec<usize>),
    /// Coordinate window `[lo, hi]`; needs a labelled chain.
    Interval { lo: f64, hi: f64 },
}

impl TargetSpec {
    pub fn build(&self, chain: &FiniteChain) -> Result<TargetSet> {
        match self {
            TargetSpec::States(states) => TargetSet::from_states(chain.n(), states),
            TargetSpec::Interval { lo, hi } => TargetSet::from_interval(chain, *lo, *hi),
        }
    }
}

/// Exponents for the moment commands, either explicit or relative to the
/// blow-up threshold of the instance at hand.
#[derive(Debug, Clone)]
pub enum AlphaSpec {
    Values(Vec<f64>),
    FractionsOfThreshold(Vec<f64>),
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::FractionsOfThreshold(vec![0.25, 0.5, 0.9])
    }
}

impl AlphaSpec {
    pub fn resolve(
        &self,
        chain: &FiniteChain,
        pi: &crate::chain::InvariantMeasure,
        k_set: &TargetSet,
    ) -> Result<Vec<f64>> {
        match self {
            AlphaSpec::Values(v) => Ok(v.clone()),
            AlphaSpec::FractionsOfThreshold(fracs) => {
                let thr = blowup_threshold(chain, pi, k_set)?;
                Ok(fracs.iter().map(|f| f * thr.alpha_star).collect())
            }
        }
    }
}

/// Sampling budget for the Monte Carlo command.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub start: usize,
    pub n_paths: usize,
    pub alpha_frac: f64,
    pub seed: Option<u64>,
    /// Optional time cap; capped paths are reported as censored.
    pub cap: Option<f64>,
}

impl McConfig {
    pub fn settings(&self, fallback_seed: u64) -> McSettings {
        McSettings {
            start: self.start,
            n_paths: self.n_paths,
            alpha_frac: self.alpha_frac,
            seed: self.seed.unwrap_or(fallback_seed),
        }
    }
}

/// Corpus size for the sweep command.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub instances: usize,
    pub n: usize,
    pub targets: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            instances: 20,
            n: 20,
            targets: 3,
            seed: 1,
        }
    }
}

/// The parsed experiment document.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub target: Option<TargetSpec>,
    pub alphas: AlphaSpec,
    pub psi: Option<PsiFunction>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    /// Optional filter of check ids for the verify command.
    pub checks: Option<Vec<String>>,
    pub mc: Option<McConfig>,
    pub sweep: SweepConfig,
    pub output: Option<String>,
}

const KNOWN_KEYS: &[&str] = &[
    "instance", "target", "alphas", "psi", "sigma", "seed", "checks", "mc", "sweep", "output",
];

impl ExperimentConfig {
    pub fn from_value(doc: &Value) -> Result<Self> {
        let mut issues = Vec::new();
        let obj = match doc.as_object() {
            Some(o) => o,
            None => {
                return Err(Error::Config {
                    issues: vec!["configuration must be a JSON object".into()],
                })
            }
        };
        for key in obj.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                issues.push(format!("unknown key {key:?}"));
            }
        }

        let instance = match obj.get("instance") {
            Some(v) => parse_instance(v, &mut issues),
            None => {
                issues.push("instance: required".into());
                None
            }
        };
        let target = obj.get("target").and_then(|v| parse_target(v, &mut issues));
        let alphas = obj
            .get("alphas")
            .and_then(|v| parse_alphas(v, &mut issues))
            .unwrap_or_default();
        let psi = obj.get("psi").and_then(|v| match PsiFunction::from_json(v) {
            Ok(p) => Some(p),
            Err(e) => {
                issues.push(format!("psi: {e}"));
                None
            }
        });
        let sigma = opt_f64(obj, "sigma", &mut issues).filter(|s| {
            if *s > 0.0 {
                true
            } else {
                issues.push(format!("sigma: must be positive, got {s}"));
                false
            }
        });
        let seed = opt_u64(obj, "seed", &mut issues);
        let checks = obj.get("checks").and_then(|v| string_array(v, "checks", &mut issues));
        let mc = obj.get("mc").and_then(|v| parse_mc(v, &mut issues));
        let sweep = obj
            .get("sweep")
            .and_then(|v| parse_sweep(v, &mut issues))
            .unwrap_or_default();
        let output = obj.get("output").and_then(|v| match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                issues.push("output: must be a string path".into());
                None
            }
        });

        if !issues.is_empty() {
            return Err(Error::Config { issues });
        }
        Ok(ExperimentConfig {
            instance: instance.expect("no issues recorded, so the instance parsed"),
            target,
            alphas,
            psi,
            sigma,
            seed,
            checks,
            mc,
            sweep,
            output,
        })
    }

    pub fn from_str(s: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(s)?;
        Self::from_value(&doc)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_str(&s)
    }

    /// The target section, required by most commands.
    pub fn require_target(&self) -> Result<&TargetSpec> {
        self.target.as_ref().ok_or_else(|| Error::Config {
            issues: vec!["target: this command needs a target section".into()],
        })
    }
}

/// Where the run seed came from, echoed into reports so a run can be
/// reproduced from its own output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedChoice {
    pub seed: u64,
    pub source: &'static str,
}

/// Priority: command-line flag, then the `HITGAP_SEED` environment variable,
/// then the configuration file, then zero.
pub fn resolve_seed(cli: Option<u64>, config: Option<u64>) -> Result<SeedChoice> {
    if let Some(seed) = cli {
        return Ok(SeedChoice {
            seed,
            source: "cli",
        });
    }
    if let Ok(raw) = std::env::var("HITGAP_SEED") {
        return match raw.trim().parse::<u64>() {
            Ok(seed) => Ok(SeedChoice {
                seed,
                source: "env",
            }),
            Err(_) => Err(Error::Config {
                issues: vec![format!(
                    "HITGAP_SEED: expected an unsigned integer, got {raw:?}"
                )],
            }),
        };
    }
    if let Some(seed) = config {
        return Ok(SeedChoice {
            seed,
            source: "config",
        });
    }
    Ok(SeedChoice {
        seed: 0,
        source: "default",
    })
}

fn opt_f64(obj: &Map<String, Value>, key: &str, issues: &mut Vec<String>) -> Option<f64> {
    match obj.get(key) {
        None => None,
        Some(v) => match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                issues.push(format!("{key}: must be a finite number, got {v}"));
                None
            }
        },
    }
}

fn opt_u64(obj: &Map<String, Value>, key: &str, issues: &mut Vec<String>) -> Option<u64> {
    match obj.get(key) {
        None => None,
        Some(v) => match v.as_u64() {
            Some(x) => Some(x),
            None => {
                issues.push(format!("{key}: must be an unsigned integer, got {v}"));
                None
            }
        },
    }
}

fn f64_array(v: &Value, path: &str, issues: &mut Vec<String>) -> Option<Vec<f64>> {
    let arr = match v.as_array() {
        Some(a) => a,
        None => {
            issues.push(format!("{path}: must be an array of numbers"));
            return None;
        }
    };
    let mut out = Vec::with_capacity(arr.len());
    for (i, x) in arr.iter().enumerate() {
        match x.as_f64() {
            Some(f) if f.is_finite() => out.push(f),
            _ => {
                issues.push(format!("{path}[{i}]: must be a finite number, got {x}"));
                return None;
            }
        }
    }
    Some(out)
}

fn usize_array(v: &Value, path: &str, issues: &mut Vec<String>) -> Option<Vec<usize>> {
    let arr = match v.as_array() {
        Some(a) => a,
        None => {
            issues.push(format!("{path}: must be an array of state indices"));
            return None;
        }
    };
    let mut out = Vec::with_capacity(arr.len());
    for (i, x) in arr.iter().enumerate() {
        match x.as_u64() {
            Some(u) => out.push(u as usize),
            None => {
                issues.push(format!("{path}[{i}]: must be an unsigned integer, got {x}"));
                return None;
            }
        }
    }
    Some(out)
}

fn string_array(v: &Value, path: &str, issues: &mut Vec<String>) -> Option<Vec<String>> {
    let arr = match v.as_array() {
        Some(a) => a,
        None => {
            issues.push(format!("{path}: must be an array of strings"));
            return None;
        }
    };
    let mut out = Vec::with_capacity(arr.len());
    for (i, x) in arr.iter().enumerate() {
        match x.as_str() {
            Some(s) => out.push(s.to_string()),
            None => {
                issues.push(format!("{path}[{i}]: must be a string, got {x}"));
                return None;
            }
        }
    }
    Some(out)
}

fn parse_instance(v: &Value, issues: &mut Vec<String>) -> Option<InstanceSpec> {
    let obj = match v.as_object() {
        Some(o) => o,
        None => {
            issues.push("instance: must be an object".into());
            return None;
        }
    };
    let kind = match obj.get("kind").and_then(Value::as_str) {
        Some(k) => k,
        None => {
            issues.push(
                "instance.kind: required, one of \"chain\", \"birth_death\", \
                 \"random\", \"diffusion\""
                    .into(),
            );
            return None;
        }
    };
    match kind {
        "chain" => {
            if obj.get("n").and_then(Value::as_u64).is_none() {
                issues.push("instance.n: chain instances need the state count".into());
                return None;
            }
            Some(InstanceSpec::Chain(v.clone()))
        }
        "birth_death" => {
            let up = obj
                .get("up")
                .and_then(|x| f64_array(x, "instance.up", issues));
            let down = obj
                .get("down")
                .and_then(|x| f64_array(x, "instance.down", issues));
            if obj.get("up").is_none() {
                issues.push("instance.up: required for birth_death".into());
            }
            if obj.get("down").is_none() {
                issues.push("instance.down: required for birth_death".into());
            }
            match (up, down) {
                (Some(up), Some(down)) => {
                    if up.len() != down.len() {
                        issues.push(format!(
                            "instance: up and down must have equal length, got {} and {}",
                            up.len(),
                            down.len()
                        ));
                        None
                    } else {
                        Some(InstanceSpec::BirthDeath { up, down })
                    }
                }
                _ => None,
            }
        }
        "random" => {
            let n = match obj.get("n").and_then(Value::as_u64) {
                Some(n) if n >= 2 => n as usize,
                _ => {
                    issues.push("instance.n: random instances need a state count >= 2".into());
                    return None;
                }
            };
            let seed = obj.get("seed").and_then(Value::as_u64).unwrap_or(0);
            Some(InstanceSpec::Random { n, seed })
        }
        "diffusion" => match DiffusionSpec1D::from_json(v) {
            Ok(spec) => Some(InstanceSpec::Diffusion(spec)),
            Err(e) => {
                issues.push(format!("instance: {e}"));
                None
            }
        },
        other => {
            issues.push(format!(
                "instance.kind: unknown kind {other:?}, expected one of \"chain\", \
                 \"birth_death\", \"random\", \"diffusion\""
            ));
            None
        }
    }
}

fn parse_target(v: &Value, issues: &mut Vec<String>) -> Option<TargetSpec> {
    let obj = match v.as_object() {
        Some(o) => o,
        None => {
            issues.push("target: must be an object".into());
            return None;
        }
    };
    match (obj.get("states"), obj.get("interval")) {
        (Some(_), Some(_)) => {
            issues.push("target: give either \"states\" or \"interval\", not both".into());
            None
        }
        (Some(s), None) => {
            let states = usize_array(s, "target.states", issues)?;
            if states.is_empty() {
                issues.push("target.states: must be nonempty".into());
                return None;
            }
            Some(TargetSpec::States(states))
        }
        (None, Some(iv)) => {
            let pair = f64_array(iv, "target.interval", issues)?;
            if pair.len() != 2 {
                issues.push(format!(
                    "target.interval: must be [lo, hi], got {} entries",
                    pair.len()
                ));
                return None;
            }
            Some(TargetSpec::Interval {
                lo: pair[0],
                hi: pair[1],
            })
        }
        (None, None) => {
            issues.push("target: needs either \"states\" or \"interval\"".into());
            None
        }
    }
}

fn parse_alphas(v: &Value, issues: &mut Vec<String>) -> Option<AlphaSpec> {
    let obj = match v.as_object() {
        Some(o) => o,
        None => {
            issues.push("alphas: must be an object".into());
            return None;
        }
    };
    match (obj.get("values"), obj.get("fractions_of_threshold")) {
        (Some(_), Some(_)) => {
            issues.push(
                "alphas: give either \"values\" or \"fractions_of_threshold\", not both".into(),
            );
            None
        }
        (Some(vals), None) => {
            let values = f64_array(vals, "alphas.values", issues)?;
            if values.iter().any(|a| !(*a > 0.0)) {
                issues.push("alphas.values: every exponent must be positive".into());
                return None;
            }
            Some(AlphaSpec::Values(values))
        }
        (None, Some(fr)) => {
            let fracs = f64_array(fr, "alphas.fractions_of_threshold", issues)?;
            if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
                issues.push(
                    "alphas.fractions_of_threshold: fractions must lie strictly \
                     between 0 and 1"
                        .into(),
                );
                return None;
            }
            Some(AlphaSpec::FractionsOfThreshold(fracs))
        }
        (None, None) => {
            issues.push(
                "alphas: needs either \"values\" or \"fractions_of_threshold\"".into(),
            );
            None
        }
    }
}

fn parse_mc(v: &Value, issues: &mut Vec<String>) -> Option<McConfig> {
    let obj = match v.as_object() {
        Some(o) => o,
        None => {
            issues.push("mc: must be an object".into());
            return None;
        }
    };
    let start = match obj.get("start").and_then(Value::as_u64) {
        Some(s) => s as usize,
        None => {
            issues.push("mc.start: required start state index".into());
            return None;
        }
    };
    let n_paths = match obj.get("n_paths").and_then(Value::as_u64) {
        Some(n) if n > 0 => n as usize,
        _ => {
            issues.push("mc.n_paths: required positive path count".into());
            return None;
        }
    };
    let alpha_frac = match obj.get("alpha_frac") {
        None => 0.5,
        Some(x) => match x.as_f64() {
            Some(f) if f > 0.0 && f < 1.0 => f,
            _ => {
                issues.push(format!(
                    "mc.alpha_frac: must lie strictly between 0 and 1, got {x}"
                ));
                return None;
            }
        },
    };
    let seed = opt_u64(obj, "seed", issues);
    let cap = opt_f64(obj, "cap", issues).filter(|c| {
        if *c > 0.0 {
            true
        } else {
            issues.push(format!("mc.cap: must be positive, got {c}"));
            false
        }
    });
    Some(McConfig {
        start,
        n_paths,
        alpha_frac,
        seed,
        cap,
    })
}

fn parse_sweep(v: &Value, issues: &mut Vec<String>) -> Option<SweepConfig> {
    let obj = match v.as_object() {
        Some(o) => o,
        None => {
            issues.push("sweep: must be an object".into());
            return None;
        }
    };
    let base = SweepConfig::default();
    let instances = obj
        .get("instances")
        .and_then(Value::as_u64)
        .map(|x| x as usize)
        .unwrap_or(base.instances);
    let n = obj
        .get("n")
        .and_then(Value::as_u64)
        .map(|x| x as usize)
        .unwrap_or(base.n);
    let targets = obj
        .get("targets")
        .and_then(Value::as_u64)
        .map(|x| x as usize)
        .unwrap_or(base.targets);
    let seed = obj.get("seed").and_then(Value::as_u64).unwrap_or(base.seed);
    if instances == 0 || n < 2 || targets == 0 {
        issues.push("sweep: needs instances >= 1, n >= 2 and targets >= 1".into());
        return None;
    }
    Some(SweepConfig {
        instances,
        n,
        targets,
        seed,
    })
}
