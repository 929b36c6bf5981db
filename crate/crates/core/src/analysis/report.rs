use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not enough data or horizon to decide.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: String,
    pub value: f64,
    pub threshold: f64,
    pub sample_size: usize,
    pub status: Status,
    pub p_value: Option<f64>,
    /// Secondary quantities (z-scores, fitted constants, ...).
    pub details: BTreeMap<String, f64>,
    pub note: Option<String>,
}

impl TestReport {
    pub fn new(name: &str, statistic: &str, value: f64, threshold: f64, sample_size: usize, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            statistic: statistic.to_string(),
            value,
            threshold,
            sample_size,
            status: if passed { Status::Pass } else { Status::Fail },
            p_value: None,
            details: BTreeMap::new(),
            note: None,
        }
    }

    pub fn inconclusive(name: &str, sample_size: usize, note: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            statistic: String::new(),
            value: f64::NAN,
            threshold: f64::NAN,
            sample_size,
            status: Status::Inconclusive,
            p_value: None,
            details: BTreeMap::new(),
            note: Some(note.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn with_p_value(mut self, p: f64) -> Self {
        self.p_value = Some(p);
        self
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Downgrades a pass to a fail when `ok` is false.
    pub fn require(mut self, ok: bool) -> Self {
        if !ok && self.status == Status::Pass {
            self.status = Status::Fail;
        }
        self
    }

    /// One-line summary.
    pub fn line(&self) -> String {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        let mut s = format!(
            "{status} {}: {} = {:.6e} (threshold {:.6e}, n = {})",
            self.name, self.statistic, self.value, self.threshold, self.sample_size
        );
        if let Some(p) = self.p_value {
            s.push_str(&format!(", p = {p:.4}"));
        }
        if let Some(n) = &self.note {
            s.push_str(&format!(" [{n}]"));
        }
        s
    }
}
