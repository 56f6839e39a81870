//! Commit-reveal checks, tolerance comparison and quorum aggregation.
//!
//! The proponent's commitment notarizes their exact output table. A
//! verifier's verdict does not come from hash equality but from comparing
//! the verifier's reproduced table against the proponent's tolerance
//! intervals. Exact reproduction is the degenerate interval `low == high`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hash::HashDigest;
use crate::ratio::Ratio;
use crate::studies::{commit_outputs, OutputTable, ToleranceSpec};
use crate::tokenomics::{NodeId, SettlementKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictValue {
    Match,
    Mismatch,
}

/// Outcome of one tolerance spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceCheck {
    pub metric: String,
    /// Verifier's value for the metric, if reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
    pub in_interval: bool,
    /// Top-k overlap fraction when a ranked-list check is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_ok: Option<bool>,
}

impl ToleranceCheck {
    pub fn passed(&self) -> bool {
        self.in_interval && self.overlap_ok.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    pub checks: Vec<ToleranceCheck>,
}

impl Verdict {
    pub fn is_match(&self) -> bool {
        self.value == VerdictValue::Match
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub request_id: String,
    pub verifier: NodeId,
    pub output_table: OutputTable,
    pub output_hash: HashDigest,
    pub verdict: Verdict,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub min_reports: u32,
    pub accept_threshold: Ratio,
}

impl QuorumConfig {
    pub fn is_valid(&self) -> bool {
        self.min_reports >= 1 && self.accept_threshold.is_unit_interval()
    }
}

impl Default for QuorumConfig {
    fn default() -> Self {
        QuorumConfig {
            min_reports: 3,
            accept_threshold: Ratio::new(2, 3).expect("nonzero denominator"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Pending,
    Accepted,
    Rejected,
    Expired,
}

impl Decision {
    pub fn is_final(self) -> bool {
        self != Decision::Pending
    }

    pub fn settlement_kind(self) -> Option<SettlementKind> {
        match self {
            Decision::Pending => None,
            Decision::Accepted => Some(SettlementKind::Accepted),
            Decision::Rejected => Some(SettlementKind::Rejected),
            Decision::Expired => Some(SettlementKind::Expired),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerificationError {
    #[error("tolerance names metric {0:?} absent from the proponent table")]
    UnknownMetric(String),
    #[error("reports concern more than one request")]
    MixedRequestIds,
    #[error("reports are not ordered by timestamp")]
    UnorderedReports,
}

/// True iff `table` hashes to `committed`.
pub fn verify_commitment(table: &OutputTable, committed: &HashDigest) -> bool {
    commit_outputs(table).is_ok_and(|d| d == *committed)
}

/// Judge a verifier's table against the proponent's tolerance specs.
pub fn compare_outputs(
    proponent: &OutputTable,
    verifier: &OutputTable,
    tolerances: &[ToleranceSpec],
) -> Result<Verdict, VerificationError> {
    let mut checks = Vec::with_capacity(tolerances.len());
    for spec in tolerances {
        if !proponent.metrics.contains_key(&spec.metric) {
            return Err(VerificationError::UnknownMetric(spec.metric.clone()));
        }
        let observed = verifier.metrics.get(&spec.metric).copied();
        let in_interval = observed.is_some_and(|v| spec.low <= v && v <= spec.high);
        let (overlap, overlap_ok) = match spec.list_k {
            Some(k) => {
                let frac = top_k_overlap(
                    &proponent.ranked_features,
                    &verifier.ranked_features,
                    k as usize,
                );
                (Some(frac), Some(frac >= spec.min_overlap.unwrap_or(1.0)))
            }
            None => (None, None),
        };
        checks.push(ToleranceCheck {
            metric: spec.metric.clone(),
            observed,
            in_interval,
            overlap,
            overlap_ok,
        });
    }
    let value = if checks.iter().all(ToleranceCheck::passed) {
        VerdictValue::Match
    } else {
        VerdictValue::Mismatch
    };
    Ok(Verdict { value, checks })
}

/// `|top_k(a) ∩ top_k(b)| / k`. A zero `k` yields 1.0.
pub fn top_k_overlap(a: &[String], b: &[String], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let left: BTreeSet<&str> = a.iter().take(k).map(String::as_str).collect();
    let shared = b
        .iter()
        .take(k)
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .intersection(&left)
        .count();
    shared as f64 / k as f64
}

/// True iff `verifier` may report on a request by `proponent`.
pub fn eligible(verifier: &NodeId, proponent: &NodeId, existing: &[VerifierReport]) -> bool {
    verifier != proponent && !existing.iter().any(|r| &r.verifier == verifier)
}

/// Fold the reports on one request into a decision.
///
/// The decision is taken on the first `min_reports` reports; anything after
/// that is ignored. Below the minimum the request stays pending until
/// `now` passes `deadline`, after which it is expired.
pub fn aggregate(
    reports: &[VerifierReport],
    quorum: &QuorumConfig,
    now: u64,
    deadline: u64,
) -> Result<Decision, VerificationError> {
    if let Some(first) = reports.first() {
        if reports.iter().any(|r| r.request_id != first.request_id) {
            return Err(VerificationError::MixedRequestIds);
        }
    }
    if reports.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(VerificationError::UnorderedReports);
    }
    let needed = quorum.min_reports as usize;
    if reports.len() < needed {
        return Ok(if now > deadline {
            Decision::Expired
        } else {
            Decision::Pending
        });
    }
    let matches = reports[..needed].iter().filter(|r| r.verdict.is_match()).count();
    Ok(if quorum.accept_threshold.is_met_by(matches as u64, needed as u64) {
        Decision::Accepted
    } else {
        Decision::Rejected
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn table(mcc: f64, features: &[&str]) -> OutputTable {
        let mut t = OutputTable::default();
        t.metrics.insert("MCC".into(), mcc);
        t.ranked_features = features.iter().map(|s| s.to_string()).collect();
        t
    }

    fn report(verifier: &str, value: VerdictValue, ts: u64) -> VerifierReport {
        let t = table(0.75, &[]);
        VerifierReport {
            request_id: "r".into(),
            verifier: NodeId::from(verifier),
            output_hash: commit_outputs(&t).unwrap(),
            output_table: t,
            verdict: Verdict { value, checks: vec![] },
            timestamp: ts,
        }
    }

    #[test]
    fn commitment_checks() {
        let t = table(0.75, &["g1"]);
        let d = commit_outputs(&t).unwrap();
        assert!(verify_commitment(&t, &d));
        assert!(!verify_commitment(&table(0.75 + 1e-9, &["g1"]), &d));
        assert!(!verify_commitment(&t, &HashDigest::ZERO));
    }

    #[test]
    fn interval_membership() {
        let spec = [ToleranceSpec::interval("MCC", 0.70, 0.80)];
        let p = table(0.75, &[]);
        assert!(compare_outputs(&p, &table(0.78, &[]), &spec).unwrap().is_match());
        assert!(compare_outputs(&p, &table(0.70, &[]), &spec).unwrap().is_match());
        assert!(!compare_outputs(&p, &table(0.65, &[]), &spec).unwrap().is_match());
        assert!(!compare_outputs(&p, &OutputTable::default(), &spec).unwrap().is_match());
        let bad = [ToleranceSpec::interval("AUC", 0.0, 1.0)];
        assert_eq!(
            compare_outputs(&p, &p, &bad),
            Err(VerificationError::UnknownMetric("AUC".into()))
        );
    }

    #[test]
    fn ranked_list_overlap() {
        let prop: Vec<String> = (0..10).map(|i| alloc::format!("g{i}")).collect();
        // 8 shared in the top 10, two replaced.
        let mut ver = prop.clone();
        ver[3] = "x1".into();
        ver[7] = "x2".into();
        let spec = ToleranceSpec {
            metric: "MCC".into(),
            low: 0.0,
            high: 1.0,
            list_k: Some(10),
            min_overlap: Some(0.7),
        };
        let p = OutputTable { metrics: table(0.75, &[]).metrics, ranked_features: prop };
        let v = OutputTable { metrics: p.metrics.clone(), ranked_features: ver };
        let verdict = compare_outputs(&p, &v, core::slice::from_ref(&spec)).unwrap();
        assert_eq!(verdict.checks[0].overlap, Some(0.8));
        assert!(verdict.is_match());

        let strict = ToleranceSpec { min_overlap: Some(0.9), ..spec };
        assert!(!compare_outputs(&p, &v, &[strict]).unwrap().is_match());
    }

    #[test]
    fn eligibility() {
        let p = NodeId::from("p");
        assert!(!eligible(&p, &p, &[]));
        assert!(eligible(&NodeId::from("v"), &p, &[]));
        let existing = [report("v", VerdictValue::Match, 0)];
        assert!(!eligible(&NodeId::from("v"), &p, &existing));
    }

    #[test]
    fn aggregate_examples() {
        use VerdictValue::*;
        let q = QuorumConfig::default();
        let run = |vs: &[VerdictValue]| {
            let reports: Vec<_> = vs
                .iter()
                .enumerate()
                .map(|(i, v)| report(&alloc::format!("v{i}"), *v, i as u64))
                .collect();
            aggregate(&reports, &q, 5, 10).unwrap()
        };
        assert_eq!(run(&[Match, Match, Match]), Decision::Accepted);
        assert_eq!(run(&[Match, Match, Mismatch]), Decision::Accepted);
        assert_eq!(run(&[Match, Mismatch, Mismatch]), Decision::Rejected);
        assert_eq!(run(&[Match, Match]), Decision::Pending);
        // Late reports beyond the quorum are ignored.
        assert_eq!(run(&[Mismatch, Mismatch, Match, Match, Match]), Decision::Rejected);
    }

    #[test]
    fn aggregate_expiry_and_errors() {
        let q = QuorumConfig::default();
        let two = [report("a", VerdictValue::Match, 1), report("b", VerdictValue::Match, 2)];
        assert_eq!(aggregate(&two, &q, 10, 10).unwrap(), Decision::Pending);
        assert_eq!(aggregate(&two, &q, 11, 10).unwrap(), Decision::Expired);
        assert_eq!(aggregate(&[], &q, 11, 10).unwrap(), Decision::Expired);

        let unordered = [report("a", VerdictValue::Match, 2), report("b", VerdictValue::Match, 1)];
        assert_eq!(
            aggregate(&unordered, &q, 0, 10),
            Err(VerificationError::UnorderedReports)
        );
        let mut mixed = two.clone();
        mixed[1].request_id = "other".into();
        assert_eq!(aggregate(&mixed, &q, 0, 10), Err(VerificationError::MixedRequestIds));
    }
}
