//! Run reports, their JSON schema and report comparison.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "fabric-run-report/1";

/// Quantities deliberately absent from reports: they measure language-model
/// behaviour, which this simulator replaces with deterministic state machines.
pub const NOT_REPRODUCED: [&str; 4] = [
    "llm_calls",
    "token_counts",
    "per_model_completion_rates",
    "remote_model_latency",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub completed: bool,
    pub failure_reason: Option<String>,
    pub wall_time_ms: f64,
    pub message_count: usize,
    pub bytes_on_wire: usize,
    pub ledger_reads: u64,
    /// Adversarial scenarios only: whether the injected fault went undetected.
    pub attack_succeeded: Option<bool>,
    pub expected_failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub runs: usize,
    pub completion_rate: f64,
    pub mean_time_ms: f64,
    pub variance_time_ms: f64,
    pub mean_messages: f64,
    pub mean_bytes_on_wire: f64,
    pub mean_ledger_reads: f64,
    pub defense_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub schema_version: String,
    pub generator: String,
    pub transport: String,
    pub seed: String,
    pub parallel: bool,
    pub not_reproduced: Vec<String>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub metadata: ReportMetadata,
    pub records: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

impl Aggregates {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let n = records.len();
        let times = records.iter().map(|r| r.wall_time_ms);
        let mean_time = mean(times.clone());
        let variance = mean(times.map(|t| (t - mean_time).powi(2)));
        let attacks: Vec<bool> = records.iter().filter_map(|r| r.attack_succeeded).collect();
        let defense_rate = (!attacks.is_empty())
            .then(|| attacks.iter().filter(|a| !**a).count() as f64 / attacks.len() as f64);
        Self {
            runs: n,
            completion_rate: if n == 0 {
                0.0
            } else {
                records.iter().filter(|r| r.completed).count() as f64 / n as f64
            },
            mean_time_ms: mean_time,
            variance_time_ms: variance,
            mean_messages: mean(records.iter().map(|r| r.message_count as f64)),
            mean_bytes_on_wire: mean(records.iter().map(|r| r.bytes_on_wire as f64)),
            mean_ledger_reads: mean(records.iter().map(|r| r.ledger_reads as f64)),
            defense_rate,
        }
    }
}

impl RunReport {
    pub fn new(scenario: impl Into<String>, metadata: ReportMetadata, records: Vec<RunRecord>) -> Self {
        let aggregates = Aggregates::from_records(&records);
        Self {
            scenario: scenario.into(),
            metadata,
            records,
            aggregates,
        }
    }

    /// Honest scenarios pass when every run completes; adversarial ones when
    /// every attack was stopped.
    pub fn passed(&self) -> bool {
        match self.aggregates.defense_rate {
            Some(rate) => rate == 1.0,
            None => self.aggregates.completion_rate == 1.0,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// JSON Schema (draft 2020-12) every report conforms to.
pub const REPORT_SCHEMA: &str = r##"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "$id": "https://agentsim.example/schemas/fabric-run-report/1",
  "title": "fabric run report",
  "type": "object",
  "required": ["scenario", "metadata", "records", "aggregates"],
  "additionalProperties": false,
  "properties": {
    "scenario": {"type": "string", "minLength": 1},
    "metadata": {
      "type": "object",
      "required": ["schema_version", "generator", "transport", "seed", "parallel", "not_reproduced", "note"],
      "additionalProperties": false,
      "properties": {
        "schema_version": {"const": "fabric-run-report/1"},
        "generator": {"type": "string"},
        "transport": {"enum": ["inproc", "http"]},
        "seed": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "parallel": {"type": "boolean"},
        "not_reproduced": {"type": "array", "items": {"type": "string"}},
        "note": {"type": "string"}
      }
    },
    "records": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["run", "completed", "failure_reason", "wall_time_ms", "message_count",
                     "bytes_on_wire", "ledger_reads", "attack_succeeded", "expected_failure_reason"],
        "additionalProperties": false,
        "properties": {
          "run": {"type": "integer", "minimum": 0},
          "completed": {"type": "boolean"},
          "failure_reason": {"type": ["string", "null"]},
          "wall_time_ms": {"type": "number", "minimum": 0},
          "message_count": {"type": "integer", "minimum": 0},
          "bytes_on_wire": {"type": "integer", "minimum": 0},
          "ledger_reads": {"type": "integer", "minimum": 0},
          "attack_succeeded": {"type": ["boolean", "null"]},
          "expected_failure_reason": {"type": ["string", "null"]}
        }
      }
    },
    "aggregates": {
      "type": "object",
      "required": ["runs", "completion_rate", "mean_time_ms", "variance_time_ms", "mean_messages",
                   "mean_bytes_on_wire", "mean_ledger_reads", "defense_rate"],
      "additionalProperties": false,
      "properties": {
        "runs": {"type": "integer", "minimum": 1},
        "completion_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "mean_time_ms": {"type": "number", "minimum": 0},
        "variance_time_ms": {"type": "number", "minimum": 0},
        "mean_messages": {"type": "number", "minimum": 0},
        "mean_bytes_on_wire": {"type": "number", "minimum": 0},
        "mean_ledger_reads": {"type": "number", "minimum": 0},
        "defense_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1}
      }
    }
  }
}"##;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub field: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

/// Aggregate fields that differ between two reports of the same scenario.
pub fn compare_reports(a: &RunReport, b: &RunReport) -> Result<Vec<Delta>, CompareError> {
    if a.scenario != b.scenario {
        return Err(CompareError::SchemaMismatch(format!(
            "scenario {} vs {}",
            a.scenario, b.scenario
        )));
    }
    if a.metadata.schema_version != b.metadata.schema_version {
        return Err(CompareError::SchemaMismatch(format!(
            "schema {} vs {}",
            a.metadata.schema_version, b.metadata.schema_version
        )));
    }
    let (x, y) = (&a.aggregates, &b.aggregates);
    let fields: [(&str, Option<f64>, Option<f64>); 8] = [
        ("runs", Some(x.runs as f64), Some(y.runs as f64)),
        ("completion_rate", Some(x.completion_rate), Some(y.completion_rate)),
        ("mean_time_ms", Some(x.mean_time_ms), Some(y.mean_time_ms)),
        ("variance_time_ms", Some(x.variance_time_ms), Some(y.variance_time_ms)),
        ("mean_messages", Some(x.mean_messages), Some(y.mean_messages)),
        ("mean_bytes_on_wire", Some(x.mean_bytes_on_wire), Some(y.mean_bytes_on_wire)),
        ("mean_ledger_reads", Some(x.mean_ledger_reads), Some(y.mean_ledger_reads)),
        ("defense_rate", x.defense_rate, y.defense_rate),
    ];
    Ok(fields
        .into_iter()
        .filter(|(_, a, b)| a != b)
        .map(|(field, a, b)| Delta {
            field: field.to_string(),
            a,
            b,
        })
        .collect())
}
