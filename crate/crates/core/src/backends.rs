//! Sub-agent backends behind one evaluation interface.

use std::collections::HashMap;
use std::io::Read;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cases::{ArticleRecord, CaseRecord};
use crate::domain::EvidenceCategory;
use crate::orchestration::{gold_finding, EvidenceFinding, ToolCall};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

/// Evaluates one sub-agent call against its document.
pub trait AgentBackend: Sync {
    fn evaluate(&self, call: &ToolCall, case: &CaseRecord) -> Result<EvidenceFinding, BackendError>;

    /// Calls that may be in flight at once; 1 means sequential execution.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Returns the gold annotations for the called (category, article) pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleBackend;

pub fn oracle_evaluate(call: &ToolCall, case: &CaseRecord) -> EvidenceFinding {
    gold_finding(call, case)
}

impl AgentBackend for OracleBackend {
    fn evaluate(&self, call: &ToolCall, case: &CaseRecord) -> Result<EvidenceFinding, BackendError> {
        Ok(oracle_evaluate(call, case))
    }

    fn max_in_flight(&self) -> usize {
        16
    }
}

/// Imperfect-sub-agent stand-in: independent misses and false alarms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub miss_rate: f64,
    pub false_alarm_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [("miss_rate", self.miss_rate), ("false_alarm_rate", self.false_alarm_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        Ok(())
    }
}

/// RNG keyed to the call identity, so results do not depend on batch order.
fn call_rng(seed: u64, case: &CaseRecord, call: &ToolCall) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for part in [seed.to_string().as_str(), &case.gene, &case.disease, &call.pmid, call.category.name()] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes))
}

pub fn noisy_oracle_evaluate(call: &ToolCall, case: &CaseRecord, noise: &NoiseSpec) -> EvidenceFinding {
    let gold = oracle_evaluate(call, case);
    let mut rng = call_rng(noise.seed, case, call);
    let mut kept = Vec::new();
    for &s in call.category.subtypes() {
        if gold.subtypes.contains(&s) {
            if !rng.random_bool(noise.miss_rate) {
                kept.push(s);
            }
        } else if rng.random_bool(noise.false_alarm_rate) {
            kept.push(s);
        }
    }
    let explanation = if kept.is_empty() {
        format!("No {} evidence was identified.", call.category.catalog_prefix())
    } else {
        gold.explanation.clone()
    };
    EvidenceFinding::new(call.category, call.pmid.clone(), kept, explanation)
}

#[derive(Debug, Clone, Copy)]
pub struct NoisyOracleBackend {
    pub noise: NoiseSpec,
}

impl AgentBackend for NoisyOracleBackend {
    fn evaluate(&self, call: &ToolCall, case: &CaseRecord) -> Result<EvidenceFinding, BackendError> {
        Ok(noisy_oracle_evaluate(call, case, &self.noise))
    }

    fn max_in_flight(&self) -> usize {
        16
    }
}

/// Replays recorded findings keyed by (category, pmid); anything not
/// recorded comes back empty.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    findings: HashMap<(EvidenceCategory, String), EvidenceFinding>,
}

impl ScriptedBackend {
    pub fn new(findings: impl IntoIterator<Item = EvidenceFinding>) -> Self {
        ScriptedBackend { findings: findings.into_iter().map(|f| ((f.category, f.pmid.clone()), f)).collect() }
    }
}

impl AgentBackend for ScriptedBackend {
    fn evaluate(&self, call: &ToolCall, _case: &CaseRecord) -> Result<EvidenceFinding, BackendError> {
        Ok(self
            .findings
            .get(&(call.category, call.pmid.clone()))
            .cloned()
            .unwrap_or_else(|| EvidenceFinding::absent(call.category, call.pmid.clone(), "No recorded finding.")))
    }
}

/// Request body of `POST <endpoint>/v1/subagent/evaluate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub category: EvidenceCategory,
    pub gene: String,
    pub disease: String,
    pub pmid: String,
    pub pmcid: String,
    pub document: String,
}

impl RemoteRequest {
    /// Full text when available, the abstract otherwise.
    pub fn new(call: &ToolCall, document: &ArticleRecord) -> Self {
        RemoteRequest {
            category: call.category,
            gene: call.gene.clone(),
            disease: call.disease.clone(),
            pmid: call.pmid.clone(),
            pmcid: call.pmcid.clone(),
            document: document.full_text.clone().unwrap_or_else(|| document.abstract_text.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig { endpoint: endpoint.into(), timeout_secs: 30.0, retries: 2, max_in_flight: 4 }
    }
}

/// HTTP client for LLM sub-agents served elsewhere.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { config, agent }
    }

    fn url(&self) -> String {
        format!("{}/v1/subagent/evaluate", self.config.endpoint.trim_end_matches('/'))
    }

    fn post_once(&self, body: &str) -> Result<String, BackendError> {
        let mut resp = self
            .agent
            .post(&self.url())
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let mut text = String::new();
        resp.body_mut().as_reader().read_to_string(&mut text).map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if status.is_server_error() {
            return Err(BackendError::Unavailable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::MalformedResponse(format!("HTTP {status}: {text}")));
        }
        Ok(text)
    }

    pub fn remote_evaluate(&self, call: &ToolCall, document: &ArticleRecord) -> Result<EvidenceFinding, BackendError> {
        let body = serde_json::to_string(&RemoteRequest::new(call, document)).expect("request serialises");
        let mut attempt = 0;
        let text = loop {
            match self.post_once(&body) {
                Err(BackendError::Unavailable(msg)) if attempt < self.config.retries => {
                    tracing::warn!(attempt, %msg, "sub-agent request failed, retrying");
                    attempt += 1;
                }
                other => break other?,
            }
        };
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let (finding, _) = EvidenceFinding::from_observation_json(&value).map_err(BackendError::MalformedResponse)?;
        if finding.category != call.category {
            return Err(BackendError::MalformedResponse(format!(
                "asked for {} evidence, got {}",
                call.category, finding.category
            )));
        }
        Ok(EvidenceFinding { pmid: call.pmid.clone(), ..finding })
    }
}

impl AgentBackend for RemoteBackend {
    fn evaluate(&self, call: &ToolCall, case: &CaseRecord) -> Result<EvidenceFinding, BackendError> {
        match case.article_by_pmid(&call.pmid) {
            Some(doc) => self.remote_evaluate(call, doc),
            None => Ok(EvidenceFinding::absent(call.category, call.pmid.clone(), "Document is not part of this case.")),
        }
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no full text for {0}")]
pub struct NotFound(pub String);

/// The single-agent `get_full_text` tool.
pub fn get_full_text<'a>(pmcid: &str, case: &'a CaseRecord) -> Result<&'a str, NotFound> {
    case.article_by_pmcid(pmcid).and_then(|a| a.full_text.as_deref()).ok_or_else(|| NotFound(pmcid.to_string()))
}
