//! Shared test helpers: the worked-example fixtures and small oracles.
#![allow(dead_code)]

use std::path::PathBuf;

use gdv_core::backends::ScriptedBackend;
use gdv_core::cases::{load_cases, CaseRecord};
use gdv_core::orchestration::{
    run_single_agent_episode, run_supervisor_episode, EvidenceFinding, Observer, Trajectory,
};
use gdv_core::policies::{ScriptedSingleAgent, ScriptedSupervisor};
use serde::Deserialize;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn worked_cases() -> Vec<CaseRecord> {
    load_cases(fixture_dir().join("worked_cases.jsonl")).expect("fixture cases load")
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TraceSpec {
    Supervisor { name: String, tool_text: String, observations: Vec<serde_json::Value>, synthesis_text: String },
    Single { name: String, tool_text: String, final_text: String },
}

fn case_for<'a>(cases: &'a [CaseRecord], name: &str) -> &'a CaseRecord {
    let gene = name.split('_').next().unwrap().to_ascii_uppercase();
    cases.iter().find(|c| c.gene == gene).expect("fixture case exists")
}

/// Replays each recorded trace through the episode runner: the policy turns
/// are scripted and the sub-agent observations come from the recording.
pub fn worked_traces() -> Vec<(String, Trajectory)> {
    let cases = worked_cases();
    let text = std::fs::read_to_string(fixture_dir().join("worked_traces.json")).unwrap();
    let specs: Vec<TraceSpec> = serde_json::from_str(&text).unwrap();
    specs
        .into_iter()
        .map(|spec| match spec {
            TraceSpec::Supervisor { name, tool_text, observations, synthesis_text } => {
                let case = case_for(&cases, &name);
                let recorded = observations.iter().map(|o| EvidenceFinding::from_observation_json(o).unwrap().0);
                let backend = ScriptedBackend::new(recorded);
                let mut policy = ScriptedSupervisor::new(tool_text, synthesis_text);
                let t = run_supervisor_episode(&mut policy, case, Observer::Live(&backend)).unwrap();
                (name, Trajectory::Supervisor(t))
            }
            TraceSpec::Single { name, tool_text, final_text } => {
                let case = case_for(&cases, &name);
                let mut policy = ScriptedSingleAgent::new(tool_text, final_text);
                (name, Trajectory::Single(run_single_agent_episode(&mut policy, case)))
            }
        })
        .collect()
}

pub fn trace<'a>(traces: &'a [(String, Trajectory)], name: &str) -> &'a Trajectory {
    &traces.iter().find(|(n, _)| n == name).expect("trace exists").1
}

/// F1 by explicit pair matching: each predicted element is compared with
/// every gold element, independent of any set intersection routine.
pub fn brute_force_f1<T: PartialEq>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut matched = 0usize;
    for p in pred {
        let mut hit = false;
        for g in gold {
            if p == g {
                hit = true;
            }
        }
        if hit {
            matched += 1;
        }
    }
    if matched == 0 {
        return 0.0;
    }
    let precision = matched as f64 / pred.len() as f64;
    let recall = matched as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
