//! Report serialization: full-precision JSON, a run-metadata envelope, and
//! the sweep CSV projection.
//!
//! Numbers are written as `{:.16e}` (17 significant digits), which
//! round-trips every finite double exactly, so re-running a seeded
//! experiment can be compared byte for byte. Non-finite measurements cannot
//! be represented in JSON and appear as `null`; this is a property of the
//! value model, not of the formatter. All run-varying data (the clock and
//! per-step timings) live under the single top-level key `timestamp`, so
//! two reports from identical runs differ in that one field and nowhere
//! else.

use std::collections::BTreeMap;
use std::io;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::ser::Formatter;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::SeedChoice;

struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: io::Write + ?Sized>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: io::Write + ?Sized>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.8e}")
    }
}

/// Compact JSON with every float at full precision.
pub fn to_json_string(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    serde::Serialize::serialize(value, &mut ser).expect("serializing into a Vec cannot fail");
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

/// Hex SHA-256 of a byte string; used to fingerprint the configuration a
/// report was produced from.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Run-metadata wrapper for one command invocation.
#[derive(Debug, Clone)]
pub struct ReportEnvelope {
    pub command: String,
    pub instance_id: String,
    pub seed: Option<SeedChoice>,
    pub config_digest: Option<String>,
    /// Per-step wall-clock seconds; serialized inside `timestamp` because
    /// timings vary between otherwise identical runs.
    pub wall_clock: BTreeMap<String, f64>,
    pub payload: Value,
}

impl ReportEnvelope {
    pub fn new(command: &str, instance_id: &str) -> Self {
        ReportEnvelope {
            command: command.into(),
            instance_id: instance_id.into(),
            seed: None,
            config_digest: None,
            wall_clock: BTreeMap::new(),
            payload: Value::Null,
        }
    }

    pub fn record_time(&mut self, step: &str, seconds: f64) {
        self.wall_clock.insert(step.into(), seconds);
    }

    pub fn finish(self) -> Value {
        let seed = match &self.seed {
            Some(c) => json!({"value": c.seed, "source": c.source}),
            None => Value::Null,
        };
        let unix_seconds = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut clock = Map::new();
        for (k, v) in &self.wall_clock {
            clock.insert(k.clone(), json!(v));
        }
        json!({
            "command": self.command,
            "instance_id": self.instance_id,
            "seed": seed,
            "config_sha256": self.config_digest,
            "timestamp": {
                "unix_seconds": unix_seconds,
                "wall_clock_seconds": Value::Object(clock),
            },
            "payload": self.payload,
        })
    }
}

/// One line of the threshold sweep: the instance, the target, and both
/// sides of the lower bound `alpha_star >= pi(K) * gap`.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub instance: String,
    pub n: usize,
    pub target: String,
    pub alpha_star: f64,
    pub pi_k: f64,
    pub gap: f64,
    pub lower_bound: f64,
    pub slack: f64,
}

/// CSV projection of a sweep, with a `#` comment header naming the columns'
/// meaning and floats at full precision. The format is unquoted, so commas
/// in the name columns are replaced by semicolons.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str("# threshold sweep: alpha_star against the lower bound pi(K) * gap\n");
    out.push_str("instance,n,target,alpha_star,pi_k,gap,lower_bound,slack\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.instance.replace(',', ";"),
            r.n,
            r.target.replace(',', ";"),
            r.alpha_star,
            r.pi_k,
            r.gap,
            r.lower_bound,
            r.slack
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        let xs = [
            0.1,
            1.0 / 3.0,
            2.0_f64.powi(-52),
            6.02214076e23,
            -0.0,
            1.0,
        ];
        for &x in &xs {
            let s = to_json_string(&json!({ "x": x }));
            let back: Value = serde_json::from_str(&s).unwrap();
            let y = back["x"].as_f64().unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{x} reprinted as {s}");
        }
    }

    #[test]
    fn integers_stay_integers() {
        let s = to_json_string(&json!({"n": 42, "k": -3}));
        assert!(s.contains("\"n\":42"), "{s}");
        assert!(s.contains("\"k\":-3"), "{s}");
    }

    #[test]
    fn non_finite_values_become_null_at_construction() {
        let v = json!({"bound": f64::INFINITY, "gap": f64::NAN});
        assert!(v["bound"].is_null());
        assert!(v["gap"].is_null());
        let s = to_json_string(&v);
        assert!(s.contains("\"bound\":null"), "{s}");
    }

    #[test]
    fn envelope_isolates_run_varying_data_under_timestamp() {
        let mut env = ReportEnvelope::new("verify", "two_state");
        env.seed = Some(SeedChoice {
            seed: 7,
            source: "cli",
        });
        env.config_digest = Some(sha256_hex(b""));
        env.record_time("threshold", 0.25);
        env.payload = json!({"reports": []});
        let v = env.finish();
        assert_eq!(v["command"], "verify");
        assert_eq!(v["seed"]["value"], 7);
        assert_eq!(v["seed"]["source"], "cli");
        assert_eq!(
            v["config_sha256"],
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert!(v["timestamp"]["unix_seconds"].as_u64().unwrap() > 1_600_000_000);
        assert!(v["timestamp"]["wall_clock_seconds"]["threshold"].as_f64().unwrap() > 0.0);
        // Everything that varies between identical runs lives under
        // `timestamp`; deleting that one key must make reruns comparable.
        let mut a = v.clone();
        a.as_object_mut().unwrap().remove("timestamp");
        assert!(a.get("timestamp").is_none());
        assert_eq!(a["payload"]["reports"], json!([]));
    }

    #[test]
    fn sweep_csv_has_header_comment_and_full_precision() {
        let rows = vec![SweepRow {
            instance: "random_20_seed1".into(),
            n: 20,
            target: "{0,3}".into(),
            alpha_star: 2.0,
            pi_k: 2.0 / 3.0,
            gap: 3.0,
            lower_bound: 2.0,
            slack: 0.0,
        }];
        let csv = sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with('#'));
        assert_eq!(
            lines[1],
            "instance,n,target,alpha_star,pi_k,gap,lower_bound,slack"
        );
        assert_eq!(lines[2].split(',').count(), 8, "comma in the target was escaped");
        assert!(lines[2].starts_with("random_20_seed1,20,{0;3},"));
        assert!(lines[2].contains("6.6666666666666663e-1"), "{csv}");
    }
}
