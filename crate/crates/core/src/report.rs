//! Test outcomes shared by every module and serialized into reports.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestName {
    BootstrapPercentile,
    AsymptoticNormal,
    Permutation,
    LikelihoodRatio,
    #[serde(rename = "HSIC")]
    Hsic,
    JarqueBera,
    ShapiroWilk,
    FirstStageF,
}

impl TestName {
    /// Row label used in printed tables.
    pub fn label(self) -> &'static str {
        match self {
            TestName::BootstrapPercentile => "Bootstrap Percentile",
            TestName::AsymptoticNormal => "Asymptotic Normal",
            TestName::Permutation => "Permutation Test",
            TestName::LikelihoodRatio => "Likelihood Ratio",
            TestName::Hsic => "Independence (HSIC)",
            TestName::JarqueBera => "Jarque-Bera",
            TestName::ShapiroWilk => "Shapiro-Wilk",
            TestName::FirstStageF => "First-stage F",
        }
    }
}

impl fmt::Display for TestName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reject,
    NonReject,
}

impl Decision {
    pub fn from_p(p: f64, alpha: f64) -> Self {
        if p < alpha {
            Decision::Reject
        } else {
            Decision::NonReject
        }
    }

    pub fn is_reject(self) -> bool {
        self == Decision::Reject
    }

    /// `R` / `NR`, as printed in the result tables.
    pub fn code(self) -> &'static str {
        match self {
            Decision::Reject => "R",
            Decision::NonReject => "NR",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrumentStrength {
    Weak,
    Strong,
}

/// Test-specific extras. Every field is optional; unset fields are omitted
/// from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    /// Resamples requested (B or R).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    /// Resamples that entered the reference distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resamples_used: Option<usize>,
    /// Resamples whose estimated ordering contradicted the instrument
    /// layout. The permutation test evaluates every resample under the
    /// observed ordering; the bootstrap refits these under the instrument
    /// ordering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistent_orderings: Option<usize>,
    /// Resamples on which estimation failed outright.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_resamples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhaustive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<InstrumentStrength>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood_unrestricted: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood_restricted: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestName,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub decision: Decision,
    pub alpha: f64,
    #[serde(default)]
    pub payload: Payload,
}

impl TestOutcome {
    /// Outcome decided by `p < alpha`.
    pub fn from_p(test: TestName, statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p = p_value.clamp(0.0, 1.0);
        Self {
            test,
            statistic,
            p_value: Some(p),
            decision: Decision::from_p(p, alpha),
            alpha,
            payload: Payload::default(),
        }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }

    pub fn rejects(&self) -> bool {
        self.decision.is_reject()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rule_and_clamp() {
        let o = TestOutcome::from_p(TestName::JarqueBera, 1.0, 0.049, 0.05);
        assert!(o.rejects());
        let o = TestOutcome::from_p(TestName::JarqueBera, 1.0, 0.05, 0.05);
        assert!(!o.rejects());
        let o = TestOutcome::from_p(TestName::JarqueBera, 1.0, 1.0 + 1e-15, 0.05);
        assert_eq!(o.p_value, Some(1.0));
    }

    #[test]
    fn payload_omits_unset_fields() {
        let o = TestOutcome::from_p(TestName::Hsic, 0.1, 0.5, 0.05);
        let json = serde_json::to_string(&o).unwrap();
        assert!(json.contains("\"HSIC\""));
        assert!(!json.contains("\"ci\""));
        let back: TestOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
    }
}
