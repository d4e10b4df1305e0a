use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "MFR")]
    Mfr,
    #[serde(rename = "GA")]
    Ga,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lm, Method::Mfr, Method::Ga];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lm => "LM",
            Method::Mfr => "MFR",
            Method::Ga => "GA",
        }
    }

    pub(crate) fn key(self) -> u64 {
        match self {
            Method::Lm => 1,
            Method::Mfr => 2,
            Method::Ga => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::BlinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lm" => Ok(Method::Lm),
            "mfr" => Ok(Method::Mfr),
            "ga" => Ok(Method::Ga),
            _ => Err(crate::BlinkError::Domain(format!("unknown method `{s}`"))),
        }
    }
}

/// A lifetime estimate (seconds) from one of the estimators.
///
/// `converged = false` marks a failed estimate; `tau_hat` is then whatever
/// the estimator last held (possibly NaN) and must not be aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub tau_hat: f64,
    pub std_err: f64,
    pub method: Method,
    pub converged: bool,
    pub diagnostics: BTreeMap<String, f64>,
}

impl RateEstimate {
    pub fn new(method: Method, tau_hat: f64, std_err: f64, converged: bool) -> Self {
        RateEstimate {
            tau_hat,
            std_err,
            method,
            converged,
            diagnostics: BTreeMap::new(),
        }
    }

    /// A non-converged placeholder carrying the failure reason as a diagnostic.
    pub fn failed(method: Method, reason: &str) -> Self {
        let mut est = RateEstimate::new(method, f64::NAN, f64::NAN, false);
        est.diagnostics.insert(format!("failed:{reason}"), 1.0);
        est
    }

    pub fn with_diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    /// Switching rate `1 / tau_hat` in 1/s.
    pub fn rate(&self) -> f64 {
        1.0 / self.tau_hat
    }
}
