//! Issuer-side claim evaluation: decides whether an authenticated peer's
//! disclosed claims justify issuing it an rVC.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{claim_at, Claims};

/// Structured rules over disclosed claims. Keyword rules match
/// case-insensitively against every string value, nested ones included.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimPolicy {
    #[serde(default)]
    pub required_fields: BTreeSet<String>,
    #[serde(default)]
    pub allowed_values: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub require_keywords: BTreeSet<String>,
    #[serde(default)]
    pub deny_keywords: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum Refusal {
    MissingField(String),
    ValueNotAllowed(String),
    DeniedKeyword(String),
    MissingKeyword(String),
}

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Refusal::MissingField(x) => write!(f, "missing-field({x})"),
            Refusal::ValueNotAllowed(x) => write!(f, "value-not-allowed({x})"),
            Refusal::DeniedKeyword(x) => write!(f, "denied-keyword({x})"),
            Refusal::MissingKeyword(x) => write!(f, "missing-keyword({x})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClaimDecision {
    Trusted,
    Refused(Refusal),
}

impl ClaimDecision {
    pub fn is_trusted(&self) -> bool {
        matches!(self, ClaimDecision::Trusted)
    }
}

/// Pluggable evaluator. A free-text or model-backed judge can stand in for
/// the rule-based [`ClaimPolicy`].
pub trait ClaimEvaluator: Send + Sync {
    fn evaluate(&self, claims: &Claims) -> ClaimDecision;
}

impl ClaimEvaluator for ClaimPolicy {
    fn evaluate(&self, claims: &Claims) -> ClaimDecision {
        evaluate_claims(claims, self)
    }
}

fn collect_strings<'a>(value: &'a Value, out: &mut Vec<&'a str>) {
    match value {
        Value::String(s) => out.push(s),
        Value::Array(items) => items.iter().for_each(|v| collect_strings(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_strings(v, out)),
        _ => {}
    }
}

fn value_matches(value: &Value, allowed: &BTreeSet<String>) -> bool {
    match value {
        Value::String(s) => allowed.contains(s),
        Value::Array(items) => !items.is_empty() && items.iter().all(|v| value_matches(v, allowed)),
        Value::Bool(_) | Value::Number(_) => allowed.contains(&value.to_string()),
        _ => false,
    }
}

pub fn evaluate_claims(claims: &Claims, policy: &ClaimPolicy) -> ClaimDecision {
    for field in &policy.required_fields {
        if claim_at(claims, field).is_none() {
            return ClaimDecision::Refused(Refusal::MissingField(field.clone()));
        }
    }
    for (field, allowed) in &policy.allowed_values {
        if let Some(value) = claim_at(claims, field) {
            if !value_matches(value, allowed) {
                return ClaimDecision::Refused(Refusal::ValueNotAllowed(field.clone()));
            }
        }
    }
    let mut texts = Vec::new();
    claims.values().for_each(|v| collect_strings(v, &mut texts));
    let lowered: Vec<String> = texts.iter().map(|s| s.to_lowercase()).collect();
    let mentions = |kw: &str| {
        let kw = kw.to_lowercase();
        lowered.iter().any(|t| t.contains(&kw))
    };
    if let Some(kw) = policy.deny_keywords.iter().find(|kw| mentions(kw)) {
        return ClaimDecision::Refused(Refusal::DeniedKeyword(kw.clone()));
    }
    if let Some(kw) = policy.require_keywords.iter().find(|kw| !mentions(kw)) {
        return ClaimDecision::Refused(Refusal::MissingKeyword(kw.clone()));
    }
    ClaimDecision::Trusted
}
