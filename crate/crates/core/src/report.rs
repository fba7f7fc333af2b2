//! Machine-readable check records and run reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: &str = "1.0";

/// Hex SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a JSON value in its compact serialization.
pub fn digest_json(v: &Value) -> String {
    digest(v.to_string().as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub inputs_digest: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Residual computed in exact arithmetic (and therefore 0 or not).
    pub exact: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grassmann_m: Option<u32>,
    /// Free-form evidence: convergence tables, ratios, failing residuals.
    #[serde(skip_serializing_if = "Value::is_null", default)]
    pub detail: Value,
    pub seconds: f64,
}

impl CheckRecord {
    /// Numeric check: passes when `residual <= tolerance` (NaN fails).
    pub fn numeric(check: impl Into<String>, inputs: &Value, residual: f64, tolerance: f64) -> Self {
        // JSON has no infinities; a non-finite residual is a failure either way
        let residual = if residual.is_finite() { residual } else { f64::MAX };
        CheckRecord {
            check: check.into(),
            inputs_digest: digest_json(inputs),
            residual,
            tolerance,
            pass: residual <= tolerance && residual < f64::MAX,
            exact: false,
            grid_n: None,
            grassmann_m: None,
            detail: Value::Null,
            seconds: 0.0,
        }
    }

    /// Exact check: the residual is the number of nonzero terms left over.
    pub fn exact(check: impl Into<String>, inputs: &Value, nonzero_terms: usize) -> Self {
        let mut r = CheckRecord::numeric(check, inputs, nonzero_terms as f64, 0.0);
        r.exact = true;
        r
    }

    /// Passes when `value >= threshold`; used for negative controls. The
    /// residual is reported as `threshold / value` so that smaller is better.
    pub fn detects(check: impl Into<String>, inputs: &Value, value: f64, threshold: f64) -> Self {
        let residual = if value > 0.0 { threshold / value } else { f64::MAX };
        let mut r = CheckRecord::numeric(check, inputs, residual, 1.0);
        r.detail = serde_json::json!({ "detected": value, "threshold": threshold });
        r
    }

    pub fn grid(mut self, n: usize, m: u32) -> Self {
        self.grid_n = Some(n);
        self.grassmann_m = Some(m);
        self
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn timed(mut self, start: Instant) -> Self {
        self.seconds = start.elapsed().as_secs_f64();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub all_pass: bool,
    pub seconds: f64,
}

impl RunReport {
    pub fn new(command: impl Into<String>, config: &Value, seed: u64) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION.into(),
            command: command.into(),
            config_digest: digest_json(config),
            seed,
            checks: Vec::new(),
            all_pass: true,
            seconds: 0.0,
        }
    }

    pub fn push(&mut self, r: CheckRecord) {
        self.all_pass &= r.pass;
        self.seconds += r.seconds;
        self.checks.push(r);
    }

    pub fn extend(&mut self, rs: impl IntoIterator<Item = CheckRecord>) {
        for r in rs {
            self.push(r);
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// The report with every timing field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.seconds = 0.0;
        for c in &mut r.checks {
            c.seconds = 0.0;
        }
        r
    }
}
