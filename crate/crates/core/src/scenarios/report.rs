//! Scenario results and their on-disk forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::consensus::Outcome;
use crate::crypto::Digest;
use crate::netsim::NodeId;

use super::config::{Assertion, ScenarioConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionOutcome {
    pub metric: String,
    pub op: String,
    pub expected: f64,
    /// Absent when the run produced no such metric.
    pub actual: Option<f64>,
    pub passed: bool,
}

impl AssertionOutcome {
    fn judge(a: &Assertion, metrics: &BTreeMap<String, f64>) -> Self {
        let actual = metrics.get(&a.metric).copied();
        let passed = actual.is_some_and(|x| match a.op.as_str() {
            "==" => x == a.value,
            "!=" => x != a.value,
            "<" => x < a.value,
            "<=" => x <= a.value,
            ">" => x > a.value,
            ">=" => x >= a.value,
            _ => false,
        });
        AssertionOutcome {
            metric: a.metric.clone(),
            op: a.op.clone(),
            expected: a.value,
            actual,
            passed,
        }
    }

    /// One line showing what was expected against what happened.
    pub fn diff(&self) -> String {
        let got = self.actual.map_or("missing".to_string(), |x| x.to_string());
        format!("{} {} {} (got {got})", self.metric, self.op, self.expected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub config_hash: Digest,
    pub version: String,
    pub metrics: BTreeMap<String, f64>,
    pub assertions: Vec<AssertionOutcome>,
    /// Each honest node's final outcome per subject.
    pub decisions: Vec<(NodeId, Digest, Outcome)>,
    pub log: Vec<String>,
}

#[derive(Serialize)]
struct Header<'a> {
    name: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
}

#[derive(Serialize)]
struct Summary {
    passed: bool,
    decisions: usize,
    decisions_digest: String,
    log_lines: usize,
    log_digest: String,
}

#[derive(Serialize)]
struct Rendered<'a> {
    scenario: Header<'a>,
    summary: Summary,
    metrics: &'a BTreeMap<String, f64>,
    assertion: &'a [AssertionOutcome],
}

impl ScenarioReport {
    pub fn new(
        cfg: &ScenarioConfig,
        metrics: BTreeMap<String, f64>,
        decisions: Vec<(NodeId, Digest, Outcome)>,
        log: Vec<String>,
    ) -> Self {
        let assertions = cfg
            .assertions
            .iter()
            .map(|a| AssertionOutcome::judge(a, &metrics))
            .collect();
        ScenarioReport {
            name: cfg.name.clone(),
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
            version: VERSION.to_string(),
            metrics,
            assertions,
            decisions,
            log,
        }
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertionOutcome> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn decisions_digest(&self) -> Digest {
        let mut s = String::new();
        for (n, id, o) in &self.decisions {
            let _ = writeln!(s, "{n} {id} {o:?}");
        }
        Digest::of(s.as_bytes())
    }

    pub fn log_digest(&self) -> Digest {
        Digest::of(self.log.join("\n").as_bytes())
    }

    fn header(&self) -> Header<'_> {
        Header {
            name: &self.name,
            version: &self.version,
            seed: self.seed,
            config_hash: self.config_hash.to_hex(),
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "parchain {} seed={} config_hash={}",
            self.version,
            self.seed,
            self.config_hash.to_hex()
        )
    }

    pub fn to_toml(&self) -> String {
        let r = Rendered {
            scenario: self.header(),
            summary: Summary {
                passed: self.passed(),
                decisions: self.decisions.len(),
                decisions_digest: self.decisions_digest().to_hex(),
                log_lines: self.log.len(),
                log_digest: self.log_digest().to_hex(),
            },
            metrics: &self.metrics,
            assertion: &self.assertions,
        };
        toml::to_string(&r).expect("report serializes")
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("# {}\nmetric,value\n", self.header_line());
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// The event log, preceded by a header record.
    pub fn events_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({
            "ev": "header",
            "name": self.name,
            "version": self.version,
            "seed": self.seed,
            "config_hash": self.config_hash.to_hex(),
        }))
        .expect("header serializes");
        out.push('\n');
        for l in &self.log {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    /// Writes report.toml, metrics.csv and events.ndjson into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            (
                "report.toml",
                format!("# {}\n{}", self.header_line(), self.to_toml()),
            ),
            ("metrics.csv", self.metrics_csv()),
            ("events.ndjson", self.events_ndjson()),
        ];
        let mut out = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }
}
