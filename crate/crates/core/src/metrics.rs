//! Exact-set evaluation metrics over graded episodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cases::{ground_truth_calls, ground_truth_profile, CaseKey, CaseRecord, EvidenceProfile};
use crate::domain::{EvidenceCategory, EvidenceSubtype, ValidityClass};
use crate::orchestration::{EvidenceFinding, ToolCall, Trajectory};
use crate::reward::set_f1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no episodes to evaluate")]
    EmptyInput,
    #[error("{} logged case(s) not in the corpus: {}", .0.len(), fmt_keys(.0))]
    CaseMismatch(Vec<CaseKey>),
}

fn fmt_keys(keys: &[CaseKey]) -> String {
    keys.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn mean_indicator(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

/// Sums in sorted order so the result does not depend on episode order.
fn ordered_mean(mut xs: Vec<f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum::<f64>() / n
}

/// Exact-match rate; `None` predictions are misses.
pub fn outcome_accuracy(pairs: &[(Option<ValidityClass>, ValidityClass)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(mean_indicator(pairs.iter().filter(|(p, g)| *p == Some(*g)).count(), pairs.len()))
}

/// (exact-set accuracy, mean per-episode F1).
pub fn set_metrics<T: Ord>(episodes: &[(BTreeSet<T>, BTreeSet<T>)]) -> Result<(f64, f64), MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let acc = mean_indicator(episodes.iter().filter(|(p, g)| p == g).count(), episodes.len());
    let f1 = ordered_mean(episodes.iter().map(|(p, g)| set_f1::<T, f64>(p, g)).collect());
    Ok((acc, f1))
}

pub fn agent_call_metrics(episodes: &[(BTreeSet<ToolCall>, BTreeSet<ToolCall>)]) -> Result<(f64, f64), MetricsError> {
    set_metrics(episodes)
}

pub fn evidence_metrics(episodes: &[(EvidenceProfile, EvidenceProfile)]) -> Result<(f64, f64), MetricsError> {
    set_metrics(episodes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl AgentCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// One supervisor episode as seen by the per-agent breakdown. `findings` is
/// index-aligned with `calls`.
#[derive(Debug, Clone, Copy)]
pub struct AgentEpisode<'a> {
    pub calls: &'a [ToolCall],
    pub findings: &'a [EvidenceFinding],
    pub gold: &'a EvidenceProfile,
}

/// Per-category TP/TN/FP/FN over invoked (category, article) pairs only.
pub fn per_agent_breakdown<'a>(
    episodes: impl IntoIterator<Item = AgentEpisode<'a>>,
) -> BTreeMap<EvidenceCategory, AgentCounts> {
    let mut out: BTreeMap<_, _> = EvidenceCategory::ALL.into_iter().map(|c| (c, AgentCounts::default())).collect();
    for ep in episodes {
        for (call, finding) in ep.calls.iter().zip(ep.findings) {
            let gold: BTreeSet<EvidenceSubtype> = ep
                .gold
                .iter()
                .filter(|i| i.pmid == call.pmid && i.subtype.category() == call.category)
                .map(|i| i.subtype)
                .collect();
            let pred: BTreeSet<EvidenceSubtype> =
                finding.subtypes.iter().copied().filter(|s| s.category() == call.category).collect();
            let counts = out.get_mut(&call.category).expect("all categories present");
            match (gold.is_empty(), pred.is_empty()) {
                (true, true) => counts.tn += 1,
                (true, false) => counts.fp += 1,
                (false, _) if pred == gold => counts.tp += 1,
                (false, _) => counts.fn_ += 1,
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub outcome_acc: f64,
    /// Absent for logs without supervisor episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_call_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_call_f1: Option<f64>,
    pub evidence_acc: f64,
    pub evidence_f1: f64,
    pub n: usize,
    pub per_agent_counts: BTreeMap<EvidenceCategory, AgentCounts>,
}

/// Resolves each logged trajectory to its case and assembles every metric.
pub fn evaluate_run(trajectories: &[Trajectory], cases: &[CaseRecord]) -> Result<MetricsReport, MetricsError> {
    if trajectories.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let by_key: HashMap<CaseKey, &CaseRecord> = cases.iter().map(|c| (c.key(), c)).collect();
    let mut unresolved: Vec<CaseKey> =
        trajectories.iter().map(Trajectory::case_key).filter(|k| !by_key.contains_key(k)).cloned().collect();
    if !unresolved.is_empty() {
        unresolved.sort();
        unresolved.dedup();
        return Err(MetricsError::CaseMismatch(unresolved));
    }

    let mut outcomes = Vec::new();
    let mut calls = Vec::new();
    let mut evidence = Vec::new();
    let mut golds = Vec::new();
    for t in trajectories {
        let case = by_key[t.case_key()];
        outcomes.push((t.predicted_class(), case.gold_class));
        let gold_profile = ground_truth_profile(case);
        match t {
            Trajectory::Supervisor(s) => {
                calls.push((s.call_set(), ground_truth_calls(case)));
                evidence.push((s.predicted_profile(), gold_profile.clone()));
            }
            Trajectory::Single(s) => evidence.push((s.fine_evidence.clone(), gold_profile.clone())),
        }
        golds.push(gold_profile);
    }
    let (evidence_acc, evidence_f1) = evidence_metrics(&evidence)?;
    let (agent_call_acc, agent_call_f1) = match agent_call_metrics(&calls) {
        Ok((a, f)) => (Some(a), Some(f)),
        Err(_) => (None, None),
    };
    let per_agent_counts = per_agent_breakdown(trajectories.iter().zip(&golds).filter_map(|(t, gold)| match t {
        Trajectory::Supervisor(s) => Some(AgentEpisode { calls: &s.calls, findings: &s.observations, gold }),
        Trajectory::Single(_) => None,
    }));
    Ok(MetricsReport {
        outcome_acc: outcome_accuracy(&outcomes)?,
        agent_call_acc,
        agent_call_f1,
        evidence_acc,
        evidence_f1,
        n: trajectories.len(),
        per_agent_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::EvidenceItem;
    use ValidityClass::*;

    #[test]
    fn outcome_examples() {
        assert_eq!(outcome_accuracy(&[(Some(Definitive), Definitive)]), Ok(1.0));
        assert_eq!(outcome_accuracy(&[(Some(Strong), Definitive), (Some(Definitive), Definitive)]), Ok(0.5));
        assert_eq!(outcome_accuracy(&[(None, Limited)]), Ok(0.0));
        assert_eq!(outcome_accuracy(&[]), Err(MetricsError::EmptyInput));
    }

    fn item(pmid: &str, subtype: EvidenceSubtype) -> EvidenceItem {
        EvidenceItem { pmid: pmid.into(), subtype }
    }

    #[test]
    fn evidence_examples() {
        let a = item("1", EvidenceSubtype::ModelNonHumanOrganism);
        let b = item("1", EvidenceSubtype::RescueNonHumanOrganism);
        let (acc, f1) = evidence_metrics(&[(BTreeSet::from([a.clone()]), BTreeSet::from([a, b]))]).unwrap();
        assert_eq!(acc, 0.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(evidence_metrics(&[(BTreeSet::new(), BTreeSet::new())]), Ok((1.0, 1.0)));
        assert_eq!(evidence_metrics(&[]), Err(MetricsError::EmptyInput));
    }

    fn call(category: EvidenceCategory) -> ToolCall {
        ToolCall { category, pmid: "1".into(), pmcid: "PMC1".into(), gene: "G".into(), disease: "D".into() }
    }

    #[test]
    fn breakdown_cases() {
        let gold = BTreeSet::from([item("1", EvidenceSubtype::RescueNonHumanOrganism)]);
        let calls = [call(EvidenceCategory::Expression), call(EvidenceCategory::Rescue)];
        let findings = [
            EvidenceFinding::absent(EvidenceCategory::Expression, "1", "none"),
            EvidenceFinding::new(EvidenceCategory::Rescue, "1", [EvidenceSubtype::RescueHuman], "wrong"),
        ];
        let counts = per_agent_breakdown([AgentEpisode { calls: &calls, findings: &findings, gold: &gold }]);
        assert_eq!(counts[&EvidenceCategory::Expression], AgentCounts { tn: 1, ..Default::default() });
        assert_eq!(counts[&EvidenceCategory::Rescue], AgentCounts { fn_: 1, ..Default::default() });

        let right = [
            EvidenceFinding::new(EvidenceCategory::Expression, "1", [EvidenceSubtype::ExpressionA], "spurious"),
            EvidenceFinding::new(EvidenceCategory::Rescue, "1", [EvidenceSubtype::RescueNonHumanOrganism], "ok"),
        ];
        let counts = per_agent_breakdown([AgentEpisode { calls: &calls, findings: &right, gold: &gold }]);
        assert_eq!(counts[&EvidenceCategory::Expression].fp, 1);
        assert_eq!(counts[&EvidenceCategory::Rescue].tp, 1);
        assert_eq!(counts[&EvidenceCategory::ModelSystem].total(), 0);
    }

    #[test]
    fn counts_serialise_with_fn_key() {
        let json = serde_json::to_string(&AgentCounts { fn_: 2, ..Default::default() }).unwrap();
        assert_eq!(json, r#"{"tp":0,"tn":0,"fp":0,"fn":2}"#);
    }
}
