//! Case tuples: loading, validation, panel-level splits, the synthetic
//! corpus generator, and the gold call/profile projections used for grading.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EvidenceCategory, EvidenceSubtype, ValidityClass, NUM_CATEGORIES};
use crate::orchestration::ToolCall;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {path}: {message}")]
    Schema { line: usize, path: String, message: String },
    #[error("line {line}: {path}: unknown evidence subtype {value:?}")]
    UnknownSubtype { line: usize, path: String, value: String },
    #[error("line {line}: unknown validity class {value:?}")]
    UnknownValidityClass { line: usize, value: String },
    #[error("line {line}: duplicate case {key}")]
    DuplicateCase { line: usize, key: CaseKey },
    #[error("panel {0:?} is not assigned to any split")]
    UnassignedPanel(String),
    #[error("panel {0:?} is assigned to more than one split")]
    PanelInMultipleSplits(String),
    #[error("split file: {0}")]
    SplitFile(String),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
}

/// Identity of a case: one gene-disease pair within one curation panel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseKey {
    pub gene: String,
    pub disease: String,
    pub panel: String,
}

impl fmt::Display for CaseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {} [{}]", self.gene, self.disease, self.panel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldFinding {
    pub subtype: EvidenceSubtype,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticleRecord {
    pub pmid: String,
    pub pmcid: String,
    pub abstract_text: String,
    pub full_text: Option<String>,
    pub gold_findings: Vec<GoldFinding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub gene: String,
    pub disease: String,
    pub panel: String,
    pub articles: Vec<ArticleRecord>,
    pub gold_class: ValidityClass,
}

/// One element of an evidence profile: a subtype found in one article.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub pmid: String,
    pub subtype: EvidenceSubtype,
}

pub type EvidenceProfile = BTreeSet<EvidenceItem>;

impl CaseRecord {
    pub fn key(&self) -> CaseKey {
        CaseKey { gene: self.gene.clone(), disease: self.disease.clone(), panel: self.panel.clone() }
    }

    pub fn article_by_pmid(&self, pmid: &str) -> Option<&ArticleRecord> {
        self.articles.iter().find(|a| a.pmid == pmid)
    }

    pub fn article_by_pmcid(&self, pmcid: &str) -> Option<&ArticleRecord> {
        self.articles.iter().find(|a| a.pmcid == pmcid)
    }

    /// Gold findings of one category on one article, in annotation order.
    pub fn gold_findings_for<'a>(
        &'a self,
        category: EvidenceCategory,
        pmid: &'a str,
    ) -> impl Iterator<Item = &'a GoldFinding> + 'a {
        self.articles
            .iter()
            .filter(move |a| a.pmid == pmid)
            .flat_map(|a| a.gold_findings.iter())
            .filter(move |f| f.subtype.category() == category)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RawCase::from(self)).expect("case serialises")
    }
}

/// One tool call per (category, article) pair carrying gold evidence.
pub fn ground_truth_calls(case: &CaseRecord) -> BTreeSet<ToolCall> {
    case.articles
        .iter()
        .flat_map(|article| {
            article.gold_findings.iter().map(move |f| ToolCall {
                category: f.subtype.category(),
                pmid: article.pmid.clone(),
                pmcid: article.pmcid.clone(),
                gene: case.gene.clone(),
                disease: case.disease.clone(),
            })
        })
        .collect()
}

/// Flattened, deduplicated gold evidence profile.
pub fn ground_truth_profile(case: &CaseRecord) -> EvidenceProfile {
    case.articles
        .iter()
        .flat_map(|a| a.gold_findings.iter().map(move |f| EvidenceItem { pmid: a.pmid.clone(), subtype: f.subtype }))
        .collect()
}

// --- JSONL schema ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    gene: String,
    disease: String,
    panel: String,
    validity: String,
    articles: Vec<RawArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArticle {
    pmid: String,
    pmcid: String,
    #[serde(rename = "abstract")]
    abstract_text: String,
    #[serde(default)]
    full_text: Option<String>,
    #[serde(default)]
    evidence: Vec<RawEvidence>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvidence {
    category: String,
    subtype: String,
    #[serde(default)]
    summary: String,
}

impl From<&CaseRecord> for RawCase {
    fn from(case: &CaseRecord) -> Self {
        RawCase {
            gene: case.gene.clone(),
            disease: case.disease.clone(),
            panel: case.panel.clone(),
            validity: case.gold_class.label().to_string(),
            articles: case
                .articles
                .iter()
                .map(|a| RawArticle {
                    pmid: a.pmid.clone(),
                    pmcid: a.pmcid.clone(),
                    abstract_text: a.abstract_text.clone(),
                    full_text: a.full_text.clone(),
                    evidence: a
                        .gold_findings
                        .iter()
                        .map(|f| RawEvidence {
                            category: f.subtype.category().name().to_string(),
                            subtype: f.subtype.label().to_string(),
                            summary: f.summary.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn schema(line: usize, path: impl Into<String>, message: impl Into<String>) -> CaseError {
    CaseError::Schema { line, path: path.into(), message: message.into() }
}

fn validate_raw(raw: RawCase, line: usize) -> Result<CaseRecord, CaseError> {
    if raw.gene.trim().is_empty() {
        return Err(schema(line, "gene", "must be nonempty"));
    }
    if raw.disease.trim().is_empty() {
        return Err(schema(line, "disease", "must be nonempty"));
    }
    if raw.articles.is_empty() {
        return Err(schema(line, "articles", "at least one article is required"));
    }
    let gold_class = ValidityClass::from_label(raw.validity.trim())
        .ok_or_else(|| CaseError::UnknownValidityClass { line, value: raw.validity.clone() })?;

    let mut seen_ids = HashSet::new();
    let mut articles = Vec::with_capacity(raw.articles.len());
    for (i, a) in raw.articles.into_iter().enumerate() {
        if a.pmid.trim().is_empty() {
            return Err(schema(line, format!("articles[{i}].pmid"), "must be nonempty"));
        }
        if a.pmcid.trim().is_empty() {
            return Err(schema(line, format!("articles[{i}].pmcid"), "must be nonempty"));
        }
        if !seen_ids.insert((a.pmid.clone(), a.pmcid.clone())) {
            return Err(schema(line, format!("articles[{i}]"), "duplicate (pmid, pmcid) within case"));
        }
        let mut gold_findings = Vec::with_capacity(a.evidence.len());
        for (j, e) in a.evidence.into_iter().enumerate() {
            let category = EvidenceCategory::from_name(&e.category).map_err(|_| {
                schema(
                    line,
                    format!("articles[{i}].evidence[{j}].category"),
                    format!("unknown category {:?}", e.category),
                )
            })?;
            let subtype = EvidenceSubtype::parse_in(category, &e.subtype).map_err(|_| CaseError::UnknownSubtype {
                line,
                path: format!("articles[{i}].evidence[{j}].subtype"),
                value: e.subtype.clone(),
            })?;
            gold_findings.push(GoldFinding { subtype, summary: e.summary });
        }
        articles.push(ArticleRecord {
            pmid: a.pmid,
            pmcid: a.pmcid,
            abstract_text: a.abstract_text,
            full_text: a.full_text,
            gold_findings,
        });
    }
    Ok(CaseRecord { gene: raw.gene, disease: raw.disease, panel: raw.panel, articles, gold_class })
}

/// Parses one JSONL case line; `line` is 1-based and only used for diagnostics.
pub fn parse_case_line(text: &str, line: usize) -> Result<CaseRecord, CaseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawCase = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(line, path, e.into_inner().to_string())
    })?;
    validate_raw(raw, line)
}

pub fn read_cases<R: BufRead>(reader: R) -> Result<Vec<CaseRecord>, CaseError> {
    let mut cases = Vec::new();
    let mut keys = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| schema(line_no, "", e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let case = parse_case_line(&text, line_no)?;
        let key = case.key();
        if !keys.insert(key.clone()) {
            return Err(CaseError::DuplicateCase { line: line_no, key });
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Loads and validates a case JSONL file, preserving file order.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>, CaseError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CaseError::Io { path: path.to_path_buf(), source })?;
    read_cases(BufReader::new(file))
}

pub fn write_cases<W: Write>(mut writer: W, cases: &[CaseRecord]) -> std::io::Result<()> {
    for case in cases {
        writeln!(writer, "{}", case.to_json_line())?;
    }
    Ok(())
}

// --- splits ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub panel_to_split: BTreeMap<String, Split>,
}

/// On-disk split file: panel lists per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn from_file(file: &SplitFile) -> Result<Self, CaseError> {
        let mut panel_to_split = BTreeMap::new();
        for (split, panels) in [(Split::Train, &file.train), (Split::Dev, &file.dev), (Split::Test, &file.test)] {
            for panel in panels {
                if panel_to_split.insert(panel.clone(), split).is_some() {
                    return Err(CaseError::PanelInMultipleSplits(panel.clone()));
                }
            }
        }
        Ok(SplitAssignment { panel_to_split })
    }

    pub fn to_file(&self) -> SplitFile {
        let mut file = SplitFile::default();
        for (panel, split) in &self.panel_to_split {
            match split {
                Split::Train => file.train.push(panel.clone()),
                Split::Dev => file.dev.push(panel.clone()),
                Split::Test => file.test.push(panel.clone()),
            }
        }
        file
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CaseError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| CaseError::Io { path: path.to_path_buf(), source })?;
        let file: SplitFile = serde_json::from_str(&text).map_err(|e| CaseError::SplitFile(e.to_string()))?;
        Self::from_file(&file)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseSplits {
    pub train: Vec<CaseRecord>,
    pub dev: Vec<CaseRecord>,
    pub test: Vec<CaseRecord>,
}

/// Routes each case to the split of its panel, preserving order within splits.
pub fn split_by_panel(cases: &[CaseRecord], assignment: &SplitAssignment) -> Result<CaseSplits, CaseError> {
    let mut out = CaseSplits::default();
    for case in cases {
        let split =
            assignment.panel_to_split.get(&case.panel).ok_or_else(|| CaseError::UnassignedPanel(case.panel.clone()))?;
        match split {
            Split::Train => out.train.push(case.clone()),
            Split::Dev => out.dev.push(case.clone()),
            Split::Test => out.test.push(case.clone()),
        }
    }
    Ok(out)
}

// --- synthetic corpus -----------------------------------------------------

/// Parameters of the desk-scale synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub cases: usize,
    pub articles_min: usize,
    pub articles_max: usize,
    /// Per-category probability that an article carries evidence of that category.
    pub prevalence: [f64; NUM_CATEGORIES],
    /// Standard deviation of the Gaussian noise on article features.
    pub feature_noise: f64,
    pub panels: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            cases: 200,
            articles_min: 1,
            articles_max: 3,
            prevalence: [0.3; NUM_CATEGORIES],
            feature_noise: 0.5,
            panels: 10,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CaseError> {
        let bad = |m: &str| Err(CaseError::InvalidConfig(m.to_string()));
        if self.cases == 0 {
            return bad("case count must be positive");
        }
        if self.articles_min == 0 || self.articles_max < self.articles_min {
            return bad("articles-per-case range must be positive and ordered");
        }
        if self.panels == 0 {
            return bad("panel count must be positive");
        }
        if self.prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("prevalences must lie in [0, 1]");
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return bad("feature noise must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Validity rank implied by evidence breadth: `clamp(round(4/6 * n), 0, 4)`
/// where `n` is the number of distinct categories with gold evidence.
pub fn synthetic_label(distinct_categories: usize) -> ValidityClass {
    let rank = (4.0 / 6.0 * distinct_categories as f64).round().clamp(0.0, 4.0) as u8;
    ValidityClass::from_rank(rank).expect("rank within scale")
}

#[derive(Serialize, Deserialize)]
struct FeaturePayload {
    features: Vec<f64>,
}

/// Feature vector embedded in a synthetic article's abstract, if any.
pub fn article_features(article: &ArticleRecord) -> Option<[f64; NUM_CATEGORIES]> {
    let payload: FeaturePayload = serde_json::from_str(&article.abstract_text).ok()?;
    payload.features.try_into().ok()
}

pub fn synthetic_panel_name(index: usize) -> String {
    format!("PANEL_{index:02}")
}

/// Deterministic synthetic corpus. Feature `k` of an article is `+1` when it
/// carries category-`k` evidence and `-1` otherwise, plus Gaussian noise.
pub fn generate_synthetic_corpus(config: &CorpusConfig, seed: u64) -> Result<Vec<CaseRecord>, CaseError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.feature_noise).map_err(|e| CaseError::InvalidConfig(e.to_string()))?;
    let mut cases = Vec::with_capacity(config.cases);
    for i in 0..config.cases {
        let n_articles = rng.random_range(config.articles_min..=config.articles_max);
        let gene = format!("SYN{i:04}");
        let disease = format!("synthetic disorder {i}");
        let mut present_categories = BTreeSet::new();
        let mut articles = Vec::with_capacity(n_articles);
        for j in 0..n_articles {
            let serial = 30_000_000 + i * 10 + j;
            let mut features = [0.0; NUM_CATEGORIES];
            let mut gold_findings = Vec::new();
            for category in EvidenceCategory::ALL {
                let k = category.index();
                let present = rng.random_bool(config.prevalence[k]);
                let signal = if present { 1.0 } else { -1.0 };
                features[k] = signal + noise.sample(&mut rng);
                if present {
                    let options = category.subtypes();
                    let subtype = options[rng.random_range(0..options.len())];
                    present_categories.insert(category);
                    gold_findings.push(GoldFinding {
                        subtype,
                        summary: format!("Synthetic {} evidence: {}.", category.catalog_prefix(), subtype.label()),
                    });
                }
            }
            let abstract_text =
                serde_json::to_string(&FeaturePayload { features: features.to_vec() }).expect("features serialise");
            articles.push(ArticleRecord {
                pmid: serial.to_string(),
                pmcid: format!("PMC{}", 9_000_000 + i * 10 + j),
                abstract_text,
                full_text: Some(format!("Synthetic full text for {gene}, article {serial}.")),
                gold_findings,
            });
        }
        cases.push(CaseRecord {
            gene,
            disease,
            panel: synthetic_panel_name(i % config.panels),
            articles,
            gold_class: synthetic_label(present_categories.len()),
        });
    }
    Ok(cases)
}

/// Assigns the first 60% of panels to train, the next 20% to dev, the rest to test.
pub fn synthetic_split(panels: usize) -> SplitAssignment {
    let n_train = ((panels as f64) * 0.6).round() as usize;
    let n_dev = ((panels as f64) * 0.2).round() as usize;
    let panel_to_split = (0..panels)
        .map(|p| {
            let split = if p < n_train {
                Split::Train
            } else if p < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
            (synthetic_panel_name(p), split)
        })
        .collect();
    SplitAssignment { panel_to_split }
}
