//! Serializable estimator reports with pre-registered verdicts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub name: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: u64,
    pub verdict: Verdict,
    /// Tolerances used for the verdict plus any auxiliary quantities.
    pub details: BTreeMap<String, Value>,
}

impl StatReport {
    /// Report with a symmetric interval `estimate +- half_width`.
    pub fn new(name: &str, estimate: f64, half_width: f64, n_samples: u64) -> Self {
        let hw = if half_width.is_finite() { half_width.abs() } else { f64::INFINITY };
        Self {
            name: name.to_string(),
            estimate,
            ci_low: estimate - hw,
            ci_high: estimate + hw,
            n_samples,
            verdict: Verdict::Inconclusive,
            details: BTreeMap::new(),
        }
    }

    pub fn with_interval(mut self, lo: f64, hi: f64) -> Self {
        self.ci_low = lo.min(self.estimate);
        self.ci_high = hi.max(self.estimate);
        self
    }

    pub fn detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.details.insert(key.to_string(), value.into());
    }

    pub fn verdict(mut self, v: Verdict) -> Self {
        self.verdict = v;
        self
    }

    pub fn decide(mut self, pass: bool) -> Self {
        self.verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    /// Numeric detail, if present.
    pub fn get(&self, key: &str) -> Option<f64> {
        self.details.get(key).and_then(Value::as_f64)
    }
}

/// JSON numbers cannot carry NaN or infinities; map those to strings.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(x.to_string()), Value::Number)
}
