//! Supervisor and single-agent episodes.
//!
//! A supervisor episode is exactly one tool turn, one observation step and
//! one synthesis turn. Tool calls travel as
//!
//! ```text
//! <tool_call>{"name": "ExperimentalEvidence_Rescue_agent", "args": {"pmid": "...", "pmcid": "...", "gene": "...", "disease": "..."}}</tool_call>
//! ```
//!
//! and sub-agents answer with an observation object
//! `{"evidence_type", "has_evidence", "pmid", "evidence_subtype", "explanation"}`.
//! Malformed blocks are counted, never raised.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use crate::backends::{AgentBackend, BackendError};
use crate::cases::{CaseKey, CaseRecord, EvidenceItem, EvidenceProfile};
use crate::domain::{parse_validity_label, EvidenceCategory, EvidenceSubtype, ValidityClass};

pub const TOOL_OPEN: &str = "<tool_call>";
pub const TOOL_CLOSE: &str = "</tool_call>";
pub const FULL_TEXT_TOOL: &str = "get_full_text";

/// A supervisor delegation: one sub-agent on one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ToolCall {
    pub category: EvidenceCategory,
    pub pmid: String,
    pub pmcid: String,
    pub gene: String,
    pub disease: String,
}

impl ToolCall {
    /// Wire form, including the surrounding tags.
    pub fn to_wire(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("string serialises");
        format!(
            "{TOOL_OPEN}{{\"name\": {}, \"args\": {{\"pmid\": {}, \"pmcid\": {}, \"gene\": {}, \"disease\": {}}}}}{TOOL_CLOSE}",
            q(&self.category.tool_name()),
            q(&self.pmid),
            q(&self.pmcid),
            q(&self.gene),
            q(&self.disease),
        )
    }
}

/// Sub-agent observation for one (category, article) pair.
///
/// `has_evidence` is true exactly when `subtypes` is nonempty, and every
/// subtype belongs to `category`; the constructors enforce both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvidenceFinding {
    pub category: EvidenceCategory,
    pub has_evidence: bool,
    pub pmid: String,
    pub subtypes: BTreeSet<EvidenceSubtype>,
    pub explanation: String,
}

impl EvidenceFinding {
    /// Builds a finding, dropping subtypes outside `category`. Returns the
    /// finding and the number of subtypes dropped.
    pub fn sanitized(
        category: EvidenceCategory,
        pmid: impl Into<String>,
        subtypes: impl IntoIterator<Item = EvidenceSubtype>,
        explanation: impl Into<String>,
    ) -> (Self, usize) {
        let mut dropped = 0;
        let subtypes: BTreeSet<_> = subtypes
            .into_iter()
            .filter(|s| {
                let keep = s.category() == category;
                dropped += usize::from(!keep);
                keep
            })
            .collect();
        let finding = EvidenceFinding {
            category,
            has_evidence: !subtypes.is_empty(),
            pmid: pmid.into(),
            subtypes,
            explanation: explanation.into(),
        };
        (finding, dropped)
    }

    pub fn new(
        category: EvidenceCategory,
        pmid: impl Into<String>,
        subtypes: impl IntoIterator<Item = EvidenceSubtype>,
        explanation: impl Into<String>,
    ) -> Self {
        Self::sanitized(category, pmid, subtypes, explanation).0
    }

    pub fn absent(category: EvidenceCategory, pmid: impl Into<String>, explanation: impl Into<String>) -> Self {
        Self::new(category, pmid, [], explanation)
    }

    pub fn items(&self) -> impl Iterator<Item = EvidenceItem> + '_ {
        self.subtypes.iter().map(|&subtype| EvidenceItem { pmid: self.pmid.clone(), subtype })
    }

    /// Observation JSON as returned to the supervisor.
    pub fn to_observation_json(&self) -> Value {
        json!({
            "evidence_type": self.category.name(),
            "has_evidence": self.has_evidence,
            "pmid": self.pmid,
            "evidence_subtype": self.subtypes.iter().map(|s| s.label()).collect::<Vec<_>>(),
            "explanation": self.explanation,
        })
    }

    /// Parses and sanitizes an observation object. Subtype strings that do not
    /// belong to the category are dropped; the count of drops is returned.
    pub fn from_observation_json(value: &Value) -> Result<(Self, usize), String> {
        let obs: ObservationWire = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        let category = EvidenceCategory::from_name(&obs.evidence_type).map_err(|e| e.to_string())?;
        let raw = obs.evidence_subtype.into_vec();
        let total = raw.len();
        let parsed: Vec<EvidenceSubtype> =
            raw.iter().filter_map(|s| EvidenceSubtype::parse_in(category, s).ok()).collect();
        let unparsed = total - parsed.len();
        let (finding, wrong_category) = Self::sanitized(category, obs.pmid, parsed, obs.explanation);
        let dropped = unparsed + wrong_category;
        if dropped > 0 {
            tracing::warn!(category = %category, dropped, "dropped non-catalog subtypes from observation");
        }
        Ok((finding, dropped))
    }
}

#[derive(Deserialize)]
struct ObservationWire {
    evidence_type: String,
    #[serde(default)]
    #[allow(dead_code)]
    has_evidence: Option<bool>,
    pmid: String,
    #[serde(default)]
    evidence_subtype: OneOrMany,
    #[serde(default)]
    explanation: String,
}

#[derive(Deserialize, Default)]
#[serde(untagged)]
enum OneOrMany {
    #[default]
    None,
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::None => Vec::new(),
            OneOrMany::One(s) if s.trim().is_empty() => Vec::new(),
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Logged form of a finding; subtypes are re-validated on load.
#[derive(Deserialize)]
struct FindingWire {
    category: EvidenceCategory,
    pmid: String,
    #[serde(default)]
    subtypes: Vec<String>,
    #[serde(default)]
    explanation: String,
}

impl<'de> Deserialize<'de> for EvidenceFinding {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = FindingWire::deserialize(deserializer)?;
        let parsed: Vec<EvidenceSubtype> = w
            .subtypes
            .iter()
            .filter_map(|s| EvidenceSubtype::parse(s).or_else(|_| EvidenceSubtype::parse_in(w.category, s)).ok())
            .collect();
        let unparsed = w.subtypes.len() - parsed.len();
        let (finding, wrong) = EvidenceFinding::sanitized(w.category, w.pmid, parsed, w.explanation);
        if unparsed + wrong > 0 {
            tracing::warn!(category = %w.category, dropped = unparsed + wrong, "dropped invalid subtypes from logged finding");
        }
        Ok(finding)
    }
}

// --- tool block parsing ---------------------------------------------------

enum Block<'a> {
    Closed(&'a str),
    Unclosed,
}

/// Splits text into tool blocks and the prose outside them. An open tag that
/// is followed by another open tag, or by end of text, before its close tag
/// is one unclosed block.
fn scan_blocks(text: &str) -> (Vec<Block<'_>>, String) {
    let mut blocks = Vec::new();
    let mut prose = String::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find(TOOL_OPEN) {
        let open = pos + rel;
        prose.push_str(&text[pos..open]);
        let body = open + TOOL_OPEN.len();
        let close = text[body..].find(TOOL_CLOSE).map(|r| body + r);
        let next_open = text[body..].find(TOOL_OPEN).map(|r| body + r);
        match (close, next_open) {
            (Some(c), n) if n.is_none_or(|n| c < n) => {
                blocks.push(Block::Closed(&text[body..c]));
                pos = c + TOOL_CLOSE.len();
            }
            (_, Some(n)) => {
                blocks.push(Block::Unclosed);
                pos = n;
            }
            (_, None) => {
                blocks.push(Block::Unclosed);
                pos = text.len();
            }
        }
    }
    prose.push_str(&text[pos..]);
    (blocks, prose.trim().to_string())
}

/// Result of parsing one policy turn for sub-agent calls.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedToolBlocks {
    /// Well-formed calls in document order, first occurrence only.
    pub calls: Vec<ToolCall>,
    /// Malformed blocks: bad JSON, missing argument keys, unknown tool, unclosed.
    pub n_err: usize,
    /// Well-formed blocks repeating an earlier call.
    pub n_duplicates: usize,
    /// Total number of blocks seen, closed or not.
    pub n_blocks: usize,
    /// Text outside the tool blocks.
    pub prose: String,
}

const REQUIRED_ARGS: [&str; 4] = ["pmid", "pmcid", "gene", "disease"];

fn parse_call_json(content: &str) -> Option<ToolCall> {
    let value: Value = serde_json::from_str(content.trim()).ok()?;
    let name = value.get("name")?.as_str()?;
    let args = value.get("args")?.as_object()?;
    let mut fields = REQUIRED_ARGS
        .iter()
        .map(|k| args.get(*k).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string));
    let (pmid, pmcid, gene, disease) = (fields.next()??, fields.next()??, fields.next()??, fields.next()??);
    let category = EvidenceCategory::from_tool_name(name).ok()?;
    Some(ToolCall { category, pmid, pmcid, gene, disease })
}

/// Parses every `<tool_call>` block in a supervisor turn. Never fails.
pub fn parse_tool_blocks(text: &str) -> ParsedToolBlocks {
    let (blocks, prose) = scan_blocks(text);
    let mut out = ParsedToolBlocks { n_blocks: blocks.len(), prose, ..Default::default() };
    let mut seen = HashSet::new();
    for block in blocks {
        match block {
            Block::Closed(content) => match parse_call_json(content) {
                Some(call) if seen.insert(call.clone()) => out.calls.push(call),
                Some(_) => out.n_duplicates += 1,
                None => out.n_err += 1,
            },
            Block::Unclosed => out.n_err += 1,
        }
    }
    out
}

/// Parsed `get_full_text` requests of a single-agent turn.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedFullTextCalls {
    pub pmcids: Vec<String>,
    pub n_err: usize,
    pub prose: String,
}

pub fn parse_full_text_calls(text: &str) -> ParsedFullTextCalls {
    let (blocks, prose) = scan_blocks(text);
    let mut out = ParsedFullTextCalls { prose, ..Default::default() };
    for block in blocks {
        let pmcid = match block {
            Block::Closed(content) => serde_json::from_str::<Value>(content.trim()).ok().and_then(|v| {
                if v.get("name")?.as_str()? != FULL_TEXT_TOOL {
                    return None;
                }
                let id = v.get("args")?.get("pmcid")?.as_str()?.trim();
                (!id.is_empty()).then(|| id.to_string())
            }),
            Block::Unclosed => None,
        };
        match pmcid {
            Some(id) => out.pmcids.push(id),
            None => out.n_err += 1,
        }
    }
    out
}

pub fn full_text_call_wire(pmcid: &str) -> String {
    let q = serde_json::to_string(pmcid).expect("string serialises");
    format!("{TOOL_OPEN}{{\"name\": \"{FULL_TEXT_TOOL}\", \"args\": {{\"pmcid\": {q}}}}}{TOOL_CLOSE}")
}

// --- single-agent final output --------------------------------------------

/// Parsed single-agent final object.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SingleAgentOutput {
    pub predicted_class: Option<ValidityClass>,
    pub evidence: EvidenceProfile,
    pub n_err: usize,
}

fn last_output_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let starts: Vec<usize> = text.match_indices('{').map(|(i, _)| i).collect();
    starts.into_iter().rev().find_map(|start| {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) if map.contains_key("classification") && map.contains_key("evidence") => {
                Some(map)
            }
            _ => None,
        }
    })
}

/// Locates the last JSON object carrying `classification` and `evidence`.
/// A missing or unusable object counts one error; each invalid evidence entry
/// is dropped and counts one error.
pub fn parse_single_agent_json(text: &str) -> SingleAgentOutput {
    let Some(obj) = last_output_object(text) else {
        return SingleAgentOutput { n_err: 1, ..Default::default() };
    };
    let Some(entries) = obj.get("evidence").and_then(Value::as_array) else {
        return SingleAgentOutput { n_err: 1, ..Default::default() };
    };
    let predicted_class =
        obj.get("classification").and_then(Value::as_str).and_then(|s| ValidityClass::from_label(s.trim()));
    let mut out = SingleAgentOutput { predicted_class, ..Default::default() };
    for entry in entries {
        let item = (|| {
            let subtype = EvidenceSubtype::parse(entry.get("type")?.as_str()?).ok()?;
            let pmid = entry.get("pmid")?.as_str()?.trim();
            (!pmid.is_empty()).then(|| EvidenceItem { pmid: pmid.to_string(), subtype })
        })();
        match item {
            Some(item) => {
                out.evidence.insert(item);
            }
            None => out.n_err += 1,
        }
    }
    out
}

// --- trajectories ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorTrajectory {
    #[serde(flatten)]
    pub case: CaseKey,
    pub plan_text: String,
    pub calls: Vec<ToolCall>,
    pub n_err: usize,
    pub observations: Vec<EvidenceFinding>,
    pub synth_text: String,
    /// `None` records a classification parse failure.
    pub predicted_class: Option<ValidityClass>,
}

impl SupervisorTrajectory {
    pub fn call_set(&self) -> BTreeSet<ToolCall> {
        self.calls.iter().cloned().collect()
    }

    /// Union of the observed subtypes over all invoked sub-agents.
    pub fn predicted_profile(&self) -> EvidenceProfile {
        self.observations.iter().flat_map(EvidenceFinding::items).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleAgentTrajectory {
    #[serde(flatten)]
    pub case: CaseKey,
    pub fulltext_calls: Vec<String>,
    pub retrieved: Vec<String>,
    pub reason_text: String,
    pub output_text: String,
    pub predicted_class: Option<ValidityClass>,
    pub fine_evidence: EvidenceProfile,
    /// All counted errors: malformed tool blocks, an unusable final object,
    /// and dropped evidence entries.
    pub n_err: usize,
    /// The malformed tool-block share of `n_err`.
    #[serde(default)]
    pub n_tool_err: usize,
}

/// One logged episode; serialised with a `"kind"` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trajectory {
    Supervisor(SupervisorTrajectory),
    Single(SingleAgentTrajectory),
}

impl Trajectory {
    pub fn case_key(&self) -> &CaseKey {
        match self {
            Trajectory::Supervisor(t) => &t.case,
            Trajectory::Single(t) => &t.case,
        }
    }

    pub fn predicted_class(&self) -> Option<ValidityClass> {
        match self {
            Trajectory::Supervisor(t) => t.predicted_class,
            Trajectory::Single(t) => t.predicted_class,
        }
    }
}

// --- episode running ------------------------------------------------------

/// What a policy sees: the case and its rendered abstract context.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInput<'a> {
    pub case: &'a CaseRecord,
    pub context: &'a str,
}

pub trait SupervisorPolicy {
    /// Planning turn; tool blocks in the returned text are executed.
    fn tool_turn(&mut self, input: &EpisodeInput<'_>) -> String;
    /// Synthesis turn; must end with a `CLASSIFICATION:` line.
    fn synthesis_turn(&mut self, input: &EpisodeInput<'_>, observations: &[EvidenceFinding]) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullTextResult {
    pub pmcid: String,
    pub text: Option<String>,
}

pub trait SingleAgentPolicy {
    /// Optional `get_full_text` requests plus reasoning.
    fn tool_turn(&mut self, input: &EpisodeInput<'_>) -> String;
    /// Final turn ending with the classification/evidence JSON object.
    fn final_turn(&mut self, input: &EpisodeInput<'_>, retrieved: &[FullTextResult]) -> String;
}

/// Abstracts in case order, each preceded by its identifier line.
pub fn render_context(case: &CaseRecord) -> String {
    let mut out = format!("Gene: {}\nDisease: {}\n", case.gene, case.disease);
    for a in &case.articles {
        out.push_str(&format!("\nPMID: {}, PMCID: {}\n{}\n", a.pmid, a.pmcid, a.abstract_text));
    }
    out
}

/// Source of observations for a supervisor episode.
#[derive(Clone, Copy)]
pub enum Observer<'a> {
    /// Sub-agent calls go to a backend.
    Live(&'a dyn AgentBackend),
    /// Observations are built from the gold annotations.
    GroundTruth,
}

/// Whether the call names an article of this case by both identifiers.
pub fn call_targets_case(call: &ToolCall, case: &CaseRecord) -> bool {
    case.articles.iter().any(|a| a.pmid == call.pmid && a.pmcid == call.pmcid)
}

pub(crate) fn outside_case_finding(call: &ToolCall) -> EvidenceFinding {
    EvidenceFinding::absent(
        call.category,
        call.pmid.clone(),
        format!("Document PMID {} / {} is not part of this case.", call.pmid, call.pmcid),
    )
}

/// Gold observation for one call.
pub fn gold_finding(call: &ToolCall, case: &CaseRecord) -> EvidenceFinding {
    if !call_targets_case(call, case) {
        return outside_case_finding(call);
    }
    let gold: Vec<_> = case.gold_findings_for(call.category, &call.pmid).collect();
    if gold.is_empty() {
        return EvidenceFinding::absent(
            call.category,
            call.pmid.clone(),
            format!("No {} evidence is annotated for this article.", call.category.catalog_prefix()),
        );
    }
    let explanation = gold.iter().map(|f| f.summary.as_str()).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
    EvidenceFinding::new(call.category, call.pmid.clone(), gold.iter().map(|f| f.subtype), explanation)
}

/// Injected observations: one gold finding per call, index-aligned.
pub fn inject_ground_truth(calls: &[ToolCall], case: &CaseRecord) -> Vec<EvidenceFinding> {
    calls.iter().map(|c| gold_finding(c, case)).collect()
}

/// Runs one parallel batch of sub-agent calls. Results are index-aligned with
/// `calls` whatever the completion order.
pub fn execute_batch(
    calls: &[ToolCall],
    backend: &dyn AgentBackend,
    case: &CaseRecord,
) -> Result<Vec<EvidenceFinding>, BackendError> {
    let eval = |call: &ToolCall| {
        if call_targets_case(call, case) {
            backend.evaluate(call, case)
        } else {
            Ok(outside_case_finding(call))
        }
    };
    let cap = backend.max_in_flight();
    if cap <= 1 {
        return calls.iter().map(eval).collect();
    }
    let mut out = Vec::with_capacity(calls.len());
    for chunk in calls.chunks(cap) {
        let results: Result<Vec<_>, _> = chunk.par_iter().map(eval).collect();
        out.extend(results?);
    }
    Ok(out)
}

/// One supervisor episode: tool turn, one observation batch, synthesis turn.
/// Tool blocks in the synthesis turn are not executed and count as errors.
pub fn run_supervisor_episode<P: SupervisorPolicy + ?Sized>(
    policy: &mut P,
    case: &CaseRecord,
    observer: Observer<'_>,
) -> Result<SupervisorTrajectory, BackendError> {
    let context = render_context(case);
    let input = EpisodeInput { case, context: &context };
    let parsed = parse_tool_blocks(&policy.tool_turn(&input));
    let observations = match observer {
        Observer::Live(backend) => execute_batch(&parsed.calls, backend, case)?,
        Observer::GroundTruth => inject_ground_truth(&parsed.calls, case),
    };
    let synth_text = policy.synthesis_turn(&input, &observations);
    let late = parse_tool_blocks(&synth_text);
    Ok(SupervisorTrajectory {
        case: case.key(),
        plan_text: parsed.prose,
        calls: parsed.calls,
        n_err: parsed.n_err + late.n_blocks,
        observations,
        predicted_class: parse_validity_label(&synth_text).ok(),
        synth_text,
    })
}

/// One single-agent episode with at most one round of full-text retrieval.
pub fn run_single_agent_episode<P: SingleAgentPolicy + ?Sized>(
    policy: &mut P,
    case: &CaseRecord,
) -> SingleAgentTrajectory {
    let context = render_context(case);
    let input = EpisodeInput { case, context: &context };
    let requests = parse_full_text_calls(&policy.tool_turn(&input));
    let results: Vec<FullTextResult> = requests
        .pmcids
        .iter()
        .map(|id| FullTextResult {
            pmcid: id.clone(),
            text: crate::backends::get_full_text(id, case).ok().map(str::to_string),
        })
        .collect();
    let output_text = policy.final_turn(&input, &results);
    let late = scan_blocks(&output_text).0.len();
    let output = parse_single_agent_json(&output_text);
    let n_tool_err = requests.n_err + late;
    SingleAgentTrajectory {
        case: case.key(),
        retrieved: results.iter().filter(|r| r.text.is_some()).map(|r| r.pmcid.clone()).collect(),
        fulltext_calls: requests.pmcids,
        reason_text: requests.prose,
        output_text,
        predicted_class: output.predicted_class,
        fine_evidence: output.evidence,
        n_err: n_tool_err + output.n_err,
        n_tool_err,
    }
}
