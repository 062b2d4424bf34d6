//! Fixed policies: scripted replays and gold-label oracles.

use serde_json::json;

use crate::cases::{ground_truth_calls, ground_truth_profile};
use crate::orchestration::{EpisodeInput, EvidenceFinding, FullTextResult, SingleAgentPolicy, SupervisorPolicy};

/// Returns the same two turns every episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedSupervisor {
    pub tool_text: String,
    pub synthesis_text: String,
}

impl ScriptedSupervisor {
    pub fn new(tool_text: impl Into<String>, synthesis_text: impl Into<String>) -> Self {
        ScriptedSupervisor { tool_text: tool_text.into(), synthesis_text: synthesis_text.into() }
    }
}

impl SupervisorPolicy for ScriptedSupervisor {
    fn tool_turn(&mut self, _input: &EpisodeInput<'_>) -> String {
        self.tool_text.clone()
    }

    fn synthesis_turn(&mut self, _input: &EpisodeInput<'_>, _observations: &[EvidenceFinding]) -> String {
        self.synthesis_text.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedSingleAgent {
    pub tool_text: String,
    pub final_text: String,
}

impl ScriptedSingleAgent {
    pub fn new(tool_text: impl Into<String>, final_text: impl Into<String>) -> Self {
        ScriptedSingleAgent { tool_text: tool_text.into(), final_text: final_text.into() }
    }
}

impl SingleAgentPolicy for ScriptedSingleAgent {
    fn tool_turn(&mut self, _input: &EpisodeInput<'_>) -> String {
        self.tool_text.clone()
    }

    fn final_turn(&mut self, _input: &EpisodeInput<'_>, _retrieved: &[FullTextResult]) -> String {
        self.final_text.clone()
    }
}

/// Dispatches exactly the gold (category, article) calls and states the gold class.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSupervisor;

impl SupervisorPolicy for OracleSupervisor {
    fn tool_turn(&mut self, input: &EpisodeInput<'_>) -> String {
        let calls = ground_truth_calls(input.case);
        let mut out = String::from("Dispatching sub-agents for annotated evidence.\n");
        for c in calls {
            out.push_str(&c.to_wire());
            out.push('\n');
        }
        out
    }

    fn synthesis_turn(&mut self, input: &EpisodeInput<'_>, observations: &[EvidenceFinding]) -> String {
        let positive = observations.iter().filter(|o| o.has_evidence).count();
        format!("{positive} sub-agent(s) reported evidence.\nCLASSIFICATION: {}", input.case.gold_class.label())
    }
}

/// Emits the gold class and fine-grained evidence without retrieval.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSingleAgent;

impl SingleAgentPolicy for OracleSingleAgent {
    fn tool_turn(&mut self, _input: &EpisodeInput<'_>) -> String {
        "The abstracts are sufficient.".to_string()
    }

    fn final_turn(&mut self, input: &EpisodeInput<'_>, _retrieved: &[FullTextResult]) -> String {
        let evidence: Vec<_> = ground_truth_profile(input.case)
            .into_iter()
            .map(|item| json!({"type": item.subtype.catalog_name(), "pmid": item.pmid}))
            .collect();
        json!({"classification": input.case.gold_class.label(), "evidence": evidence}).to_string()
    }
}
