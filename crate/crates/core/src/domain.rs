//! Evidence schema: validity scale, experimental evidence categories, the
//! sixteen-entry subtype catalog, and the tool-name mapping for sub-agents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("no classification could be parsed from {0:?}")]
    ParseFailure(String),
    #[error("unknown validity class {0:?}")]
    UnknownValidityClass(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("unknown evidence category {0:?}")]
    UnknownCategory(String),
    #[error("unknown evidence subtype {0:?}")]
    UnknownSubtype(String),
}

/// Ordinal gene-disease validity scale. Disputed and Refuted are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValidityClass {
    NoKnownDiseaseRelationship,
    Limited,
    Moderate,
    Strong,
    Definitive,
}

impl ValidityClass {
    pub const ALL: [ValidityClass; 5] = [
        ValidityClass::NoKnownDiseaseRelationship,
        ValidityClass::Limited,
        ValidityClass::Moderate,
        ValidityClass::Strong,
        ValidityClass::Definitive,
    ];

    /// Position on the scale: 0 for No Known Disease Relationship, 4 for Definitive.
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(rank as usize).copied()
    }

    /// Human-readable label as used in prompts and the case JSONL.
    pub fn label(self) -> &'static str {
        match self {
            ValidityClass::NoKnownDiseaseRelationship => "No Known Disease Relationship",
            ValidityClass::Limited => "Limited",
            ValidityClass::Moderate => "Moderate",
            ValidityClass::Strong => "Strong",
            ValidityClass::Definitive => "Definitive",
        }
    }

    /// Exact (case-sensitive) match against the label or the unspaced variant name.
    pub fn from_label(text: &str) -> Option<Self> {
        match text {
            "No Known Disease Relationship" | "NoKnownDiseaseRelationship" => {
                Some(ValidityClass::NoKnownDiseaseRelationship)
            }
            "Limited" => Some(ValidityClass::Limited),
            "Moderate" => Some(ValidityClass::Moderate),
            "Strong" => Some(ValidityClass::Strong),
            "Definitive" => Some(ValidityClass::Definitive),
            _ => None,
        }
    }
}

impl fmt::Display for ValidityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ValidityClass {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_label(s.trim()).ok_or_else(|| DomainError::UnknownValidityClass(s.to_string()))
    }
}

impl Serialize for ValidityClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for ValidityClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const CLASSIFICATION_PREFIX: &str = "CLASSIFICATION:";

/// Extracts the final validity label from a completed response.
///
/// The label after the last `CLASSIFICATION:` wins; without that prefix the
/// whole trimmed text must be a bare label.
pub fn parse_validity_label(text: &str) -> Result<ValidityClass, DomainError> {
    let candidate = match text.rfind(CLASSIFICATION_PREFIX) {
        Some(pos) => {
            let rest = &text[pos + CLASSIFICATION_PREFIX.len()..];
            rest.lines().next().unwrap_or("").trim()
        }
        None => text.trim(),
    };
    ValidityClass::from_label(candidate).ok_or_else(|| DomainError::ParseFailure(candidate.to_string()))
}

/// Experimental evidence categories, one per sub-agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvidenceCategory {
    BiochemicalFunction,
    ProteinInteraction,
    Expression,
    FunctionalAlteration,
    ModelSystem,
    Rescue,
}

/// Number of sub-agents.
pub const NUM_CATEGORIES: usize = 6;

impl EvidenceCategory {
    pub const ALL: [EvidenceCategory; NUM_CATEGORIES] = [
        EvidenceCategory::BiochemicalFunction,
        EvidenceCategory::ProteinInteraction,
        EvidenceCategory::Expression,
        EvidenceCategory::FunctionalAlteration,
        EvidenceCategory::ModelSystem,
        EvidenceCategory::Rescue,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Identifier used in tool names and observation JSON.
    pub fn name(self) -> &'static str {
        match self {
            EvidenceCategory::BiochemicalFunction => "BiochemicalFunction",
            EvidenceCategory::ProteinInteraction => "ProteinInteraction",
            EvidenceCategory::Expression => "Expression",
            EvidenceCategory::FunctionalAlteration => "FunctionalAlteration",
            EvidenceCategory::ModelSystem => "ModelSystem",
            EvidenceCategory::Rescue => "Rescue",
        }
    }

    /// Prefix used by the single-agent allowed-type list.
    pub fn catalog_prefix(self) -> &'static str {
        match self {
            EvidenceCategory::BiochemicalFunction => "Biochemical Function",
            EvidenceCategory::ProteinInteraction => "Protein interactions",
            EvidenceCategory::Expression => "Expression",
            EvidenceCategory::FunctionalAlteration => "Functional Alteration",
            EvidenceCategory::ModelSystem => "Model Systems",
            EvidenceCategory::Rescue => "Rescue",
        }
    }

    fn prefix_aliases(self) -> &'static [&'static str] {
        match self {
            EvidenceCategory::BiochemicalFunction => &["biochemical function"],
            EvidenceCategory::ProteinInteraction => &["protein interactions", "protein interaction"],
            EvidenceCategory::Expression => &["gene expression", "expression"],
            EvidenceCategory::FunctionalAlteration => &["functional alteration"],
            EvidenceCategory::ModelSystem => &["model systems", "model system"],
            EvidenceCategory::Rescue => &["rescue experiments", "rescue"],
        }
    }

    pub fn tool_name(self) -> String {
        format!("ExperimentalEvidence_{}_agent", self.name())
    }

    pub fn from_tool_name(name: &str) -> Result<Self, DomainError> {
        name.strip_prefix("ExperimentalEvidence_")
            .and_then(|rest| rest.strip_suffix("_agent"))
            .and_then(|mid| Self::ALL.into_iter().find(|c| c.name() == mid))
            .ok_or_else(|| DomainError::UnknownTool(name.to_string()))
    }

    /// Lenient lookup: accepts the identifier, the display prefix, or spacing
    /// and plural variants of either ("Model Systems", "model_system", ...).
    pub fn from_name(text: &str) -> Result<Self, DomainError> {
        let key: String = text
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        let found = Self::ALL.into_iter().find(|c| {
            let own = c.name().to_lowercase();
            key == own
                || key.strip_suffix('s') == Some(own.as_str())
                || c.prefix_aliases().iter().any(|a| a.replace(' ', "") == key)
        });
        found.ok_or_else(|| DomainError::UnknownCategory(text.to_string()))
    }

    /// Canonical subtypes of this category, in catalog order.
    pub fn subtypes(self) -> &'static [EvidenceSubtype] {
        use EvidenceSubtype::*;
        match self {
            EvidenceCategory::BiochemicalFunction => &[BiochemicalFunctionA, BiochemicalFunctionB],
            EvidenceCategory::ProteinInteraction => &[
                PhysicalAssociation,
                GeneticInteractionSensuUnexpected,
                NegativeGeneticInteraction,
                PositiveGeneticInteraction,
            ],
            EvidenceCategory::Expression => &[ExpressionA, ExpressionB],
            EvidenceCategory::FunctionalAlteration => {
                &[FunctionalAlterationPatientCells, FunctionalAlterationNonPatientCells]
            }
            EvidenceCategory::ModelSystem => &[ModelNonHumanOrganism, ModelCellCulture],
            EvidenceCategory::Rescue => &[RescueHuman, RescuePatientCells, RescueNonHumanOrganism, RescueCellCulture],
        }
    }
}

impl fmt::Display for EvidenceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for EvidenceCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EvidenceCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::from_name(&s).map_err(serde::de::Error::custom)
    }
}

/// One entry of the sixteen-subtype experimental evidence catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvidenceSubtype {
    BiochemicalFunctionA,
    BiochemicalFunctionB,
    PhysicalAssociation,
    GeneticInteractionSensuUnexpected,
    NegativeGeneticInteraction,
    PositiveGeneticInteraction,
    ExpressionA,
    ExpressionB,
    FunctionalAlterationPatientCells,
    FunctionalAlterationNonPatientCells,
    ModelNonHumanOrganism,
    ModelCellCulture,
    RescueHuman,
    RescuePatientCells,
    RescueNonHumanOrganism,
    RescueCellCulture,
}

impl EvidenceSubtype {
    pub fn all() -> impl Iterator<Item = EvidenceSubtype> {
        EvidenceCategory::ALL.into_iter().flat_map(|c| c.subtypes().iter().copied())
    }

    pub fn category(self) -> EvidenceCategory {
        use EvidenceSubtype::*;
        match self {
            BiochemicalFunctionA | BiochemicalFunctionB => EvidenceCategory::BiochemicalFunction,
            PhysicalAssociation
            | GeneticInteractionSensuUnexpected
            | NegativeGeneticInteraction
            | PositiveGeneticInteraction => EvidenceCategory::ProteinInteraction,
            ExpressionA | ExpressionB => EvidenceCategory::Expression,
            FunctionalAlterationPatientCells | FunctionalAlterationNonPatientCells => {
                EvidenceCategory::FunctionalAlteration
            }
            ModelNonHumanOrganism | ModelCellCulture => EvidenceCategory::ModelSystem,
            RescueHuman | RescuePatientCells | RescueNonHumanOrganism | RescueCellCulture => EvidenceCategory::Rescue,
        }
    }

    /// Canonical label within its category.
    pub fn label(self) -> &'static str {
        use EvidenceSubtype::*;
        match self {
            BiochemicalFunctionA | ExpressionA => "A",
            BiochemicalFunctionB | ExpressionB => "B",
            PhysicalAssociation => "physical association",
            GeneticInteractionSensuUnexpected => "genetic interaction (sensu unexpected)",
            NegativeGeneticInteraction => "negative genetic interaction",
            PositiveGeneticInteraction => "positive genetic interaction",
            FunctionalAlterationPatientCells | RescuePatientCells => "Patient cells",
            FunctionalAlterationNonPatientCells => "Non-patient cells",
            ModelNonHumanOrganism | RescueNonHumanOrganism => "Non-human model organism",
            ModelCellCulture | RescueCellCulture => "Cell culture model",
            RescueHuman => "Human",
        }
    }

    /// Category-qualified name, e.g. `"Model Systems Non-human model organism"`.
    pub fn catalog_name(self) -> String {
        format!("{} {}", self.category().catalog_prefix(), self.label())
    }

    /// Normalised surface forms accepted for this subtype (after any
    /// category prefix has been removed).
    fn aliases(self) -> &'static [&'static str] {
        use EvidenceSubtype::*;
        match self {
            BiochemicalFunctionA => &[
                "a",
                "(a)",
                "shared biochemical function with genes implicated in the disease",
                "(a) shared biochemical function with genes implicated in the disease",
            ],
            BiochemicalFunctionB => &[
                "b",
                "(b)",
                "biochemical function consistent with disease phenotype",
                "(b) biochemical function consistent with disease phenotype",
            ],
            PhysicalAssociation => &["physical association"],
            GeneticInteractionSensuUnexpected => &["genetic interaction (sensu unexpected)"],
            NegativeGeneticInteraction => &["negative genetic interaction"],
            PositiveGeneticInteraction => &["positive genetic interaction"],
            ExpressionA => &[
                "a",
                "(a)",
                "gene expressed in tissues relevant to the disease of interest",
                "(a) gene expressed in tissues relevant to the disease of interest",
            ],
            ExpressionB => &[
                "b",
                "(b)",
                "gene altered in expression in patients who have the disease",
                "(b) gene altered in expression in patients who have the disease",
            ],
            FunctionalAlterationPatientCells => &["patient cells"],
            FunctionalAlterationNonPatientCells => &["non-patient cells"],
            ModelNonHumanOrganism => &["non-human model organism"],
            ModelCellCulture => &["cell culture model"],
            RescueHuman => &["human", "rescue in human"],
            RescuePatientCells => &["patient cells", "rescue in patient cells"],
            RescueNonHumanOrganism => &["non-human model organism", "rescue in non-human model organism"],
            RescueCellCulture => &["cell culture model", "rescue in cell culture model", "rescue in cell culture"],
        }
    }

    /// Parses a subtype of a known category, with or without a category prefix.
    pub fn parse_in(category: EvidenceCategory, text: &str) -> Result<Self, DomainError> {
        let norm = normalize(text);
        let stripped = strip_category_prefix(category, &norm);
        category
            .subtypes()
            .iter()
            .copied()
            .find(|s| {
                let aliases = s.aliases();
                aliases.contains(&norm.as_str()) || stripped.is_some_and(|r| aliases.contains(&r))
            })
            .ok_or_else(|| DomainError::UnknownSubtype(text.to_string()))
    }

    /// Parses a category-qualified subtype name. Unprefixed labels are
    /// accepted only when exactly one category recognises them.
    pub fn parse(text: &str) -> Result<Self, DomainError> {
        let norm = normalize(text);
        for category in EvidenceCategory::ALL {
            if let Some(rest) = strip_category_prefix(category, &norm) {
                if let Some(s) = category.subtypes().iter().find(|s| s.aliases().contains(&rest)) {
                    return Ok(*s);
                }
            }
        }
        let mut hits = EvidenceCategory::ALL
            .into_iter()
            .filter_map(|c| c.subtypes().iter().find(|s| s.aliases().contains(&norm.as_str())));
        match (hits.next(), hits.next()) {
            (Some(s), None) => Ok(*s),
            _ => Err(DomainError::UnknownSubtype(text.to_string())),
        }
    }
}

impl fmt::Display for EvidenceSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.catalog_name())
    }
}

impl Serialize for EvidenceSubtype {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.catalog_name())
    }
}

impl<'de> Deserialize<'de> for EvidenceSubtype {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// True iff `label` names one of `category`'s catalog subtypes.
pub fn validate_subtype(category: EvidenceCategory, label: &str) -> bool {
    EvidenceSubtype::parse_in(category, label).is_ok()
}

/// Lowercase, trim, and collapse internal whitespace.
fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn strip_category_prefix(category: EvidenceCategory, norm: &str) -> Option<&str> {
    category.prefix_aliases().iter().find_map(|prefix| {
        let rest = norm.strip_prefix(prefix)?;
        if !rest.is_empty() && !rest.starts_with([' ', '-', ':', '/']) {
            return None;
        }
        let rest = rest.trim_start_matches([' ', '-', ':', '/']);
        (!rest.is_empty()).then_some(rest)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_follow_the_scale() {
        assert_eq!(ValidityClass::NoKnownDiseaseRelationship.rank(), 0);
        assert_eq!(ValidityClass::Moderate.rank(), 2);
        assert_eq!(ValidityClass::Definitive.rank(), 4);
        let ranks: Vec<u8> = ValidityClass::ALL.iter().map(|c| c.rank()).collect();
        assert_eq!(ranks, vec![0, 1, 2, 3, 4]);
        for c in ValidityClass::ALL {
            assert_eq!(ValidityClass::from_rank(c.rank()), Some(c));
        }
        assert!(ValidityClass::Definitive > ValidityClass::Strong);
    }

    #[test]
    fn classification_line_is_extracted() {
        let text = "<think>maybe CLASSIFICATION: Limited</think>\nCLASSIFICATION: Definitive";
        assert_eq!(parse_validity_label(text), Ok(ValidityClass::Definitive));
        assert_eq!(parse_validity_label("Strong"), Ok(ValidityClass::Strong));
        assert_eq!(
            parse_validity_label("CLASSIFICATION: No Known Disease Relationship\n"),
            Ok(ValidityClass::NoKnownDiseaseRelationship)
        );
        assert!(matches!(parse_validity_label("CLASSIFICATION: Probable"), Err(DomainError::ParseFailure(_))));
        assert!(parse_validity_label("CLASSIFICATION: definitive").is_err());
        assert!(parse_validity_label("CLASSIFICATION: Refuted").is_err());
        assert!(parse_validity_label("CLASSIFICATION: Disputed").is_err());
        assert!(parse_validity_label("").is_err());
    }

    #[test]
    fn tool_names_round_trip() {
        assert_eq!(EvidenceCategory::ModelSystem.tool_name(), "ExperimentalEvidence_ModelSystem_agent");
        assert_eq!(EvidenceCategory::Rescue.tool_name(), "ExperimentalEvidence_Rescue_agent");
        for c in EvidenceCategory::ALL {
            assert_eq!(EvidenceCategory::from_tool_name(&c.tool_name()), Ok(c));
        }
        assert_eq!(
            EvidenceCategory::from_tool_name("ExperimentalEvidence_Foo_agent"),
            Err(DomainError::UnknownTool("ExperimentalEvidence_Foo_agent".into()))
        );
    }

    #[test]
    fn category_names_are_lenient() {
        assert_eq!(EvidenceCategory::from_name("Model Systems"), Ok(EvidenceCategory::ModelSystem));
        assert_eq!(EvidenceCategory::from_name("ModelSystem"), Ok(EvidenceCategory::ModelSystem));
        assert_eq!(EvidenceCategory::from_name("Gene Expression"), Ok(EvidenceCategory::Expression));
        assert_eq!(EvidenceCategory::from_name("protein_interaction"), Ok(EvidenceCategory::ProteinInteraction));
        assert!(EvidenceCategory::from_name("Genetic").is_err());
    }

    #[test]
    fn catalog_has_sixteen_entries() {
        let sizes: Vec<usize> = EvidenceCategory::ALL.iter().map(|c| c.subtypes().len()).collect();
        assert_eq!(sizes, vec![2, 4, 2, 2, 2, 4]);
        assert_eq!(EvidenceSubtype::all().count(), 16);
        for s in EvidenceSubtype::all() {
            assert!(s.category().subtypes().contains(&s));
        }
    }

    #[test]
    fn subtype_validation() {
        assert!(validate_subtype(EvidenceCategory::Rescue, "rescue in non-human model organism"));
        assert!(!validate_subtype(EvidenceCategory::Expression, "Patient cells"));
        assert!(validate_subtype(EvidenceCategory::FunctionalAlteration, "Patient cells"));
        assert!(validate_subtype(EvidenceCategory::ModelSystem, "non-human model organism"));
        assert!(validate_subtype(EvidenceCategory::Rescue, "rescue in cell culture"));
        assert!(validate_subtype(EvidenceCategory::ProteinInteraction, "  Physical   association "));
        assert!(!validate_subtype(EvidenceCategory::ModelSystem, "Telepathy"));
    }

    #[test]
    fn surface_forms_normalise_to_one_label() {
        let want = EvidenceSubtype::RescueNonHumanOrganism;
        for form in [
            "Rescue Non-human model organism",
            "rescue in non-human model organism",
            "Rescue -- non-human model organism",
        ] {
            assert_eq!(EvidenceSubtype::parse(form), Ok(want), "{form}");
        }
        assert_eq!(
            EvidenceSubtype::parse("Model Systems -- non-human model organism"),
            Ok(EvidenceSubtype::ModelNonHumanOrganism)
        );
        assert_eq!(
            EvidenceSubtype::parse("Protein interactions genetic interaction (sensu unexpected)"),
            Ok(EvidenceSubtype::GeneticInteractionSensuUnexpected)
        );
        // ambiguous without a prefix
        assert!(EvidenceSubtype::parse("Patient cells").is_err());
        assert!(EvidenceSubtype::parse("A").is_err());
        assert!(EvidenceSubtype::parse("Telepathy").is_err());
    }

    #[test]
    fn allowed_type_list_parses_completely() {
        let allowed = [
            "Biochemical Function A",
            "Biochemical Function B",
            "Protein interactions genetic interaction (sensu unexpected)",
            "Protein interactions negative genetic interaction",
            "Protein interactions physical association",
            "Protein interactions positive genetic interaction",
            "Expression A",
            "Expression B",
            "Functional Alteration Non-patient cells",
            "Functional Alteration Patient cells",
            "Model Systems Cell culture model",
            "Model Systems Non-human model organism",
            "Rescue Patient cells",
            "Rescue Cell culture model",
            "Rescue Human",
            "Rescue Non-human model organism",
        ];
        let parsed: std::collections::BTreeSet<_> =
            allowed.iter().map(|a| EvidenceSubtype::parse(a).unwrap()).collect();
        assert_eq!(parsed.len(), 16);
    }

    #[test]
    fn label_and_catalog_name_round_trip() {
        for s in EvidenceSubtype::all() {
            assert_eq!(EvidenceSubtype::parse_in(s.category(), s.label()), Ok(s));
            assert_eq!(EvidenceSubtype::parse(&s.catalog_name()), Ok(s));
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<EvidenceSubtype>(&json).unwrap(), s);
        }
    }
}
