//! The FLICC catalog: five root categories of science-denial argumentation
//! and the technique leaves under them.
//!
//! The catalog is loaded from a JSON document with top-level `categories`
//! and `techniques` arrays. It is immutable once validated and is shared
//! read-only across sessions.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize;

const SHIPPED_CATALOG: &str = include_str!("../data/catalog.json");

/// One of the five FLICC roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryId {
    FakeExperts,
    LogicalFallacies,
    ImpossibleExpectations,
    CherryPicking,
    ConspiracyTheories,
}

impl CategoryId {
    pub const ALL: [CategoryId; 5] = [
        CategoryId::FakeExperts,
        CategoryId::LogicalFallacies,
        CategoryId::ImpossibleExpectations,
        CategoryId::CherryPicking,
        CategoryId::ConspiracyTheories,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryId::FakeExperts => "fake_experts",
            CategoryId::LogicalFallacies => "logical_fallacies",
            CategoryId::ImpossibleExpectations => "impossible_expectations",
            CategoryId::CherryPicking => "cherry_picking",
            CategoryId::ConspiracyTheories => "conspiracy_theories",
        }
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CategoryId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CategoryId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FliccCategory {
    pub id: CategoryId,
    pub display_name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallacyTechnique {
    pub id: String,
    pub category: CategoryId,
    pub name: String,
    pub description: String,
    /// Lowercase, trimmed phrases a trainee might use to name the technique.
    pub cue_phrases: Vec<String>,
    /// Denier statements; `{topic}` is replaced with the persona's topic.
    pub example_utterances: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("failed to read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing category `{0}`")]
    MissingCategory(CategoryId),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("{context} references unknown category `{category}`")]
    UnknownCategory { context: String, category: String },
    #[error("invalid technique `{technique}`: {reason}")]
    InvalidTechnique { technique: String, reason: String },
}

/// A cue phrase found in a trainee utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueMention {
    pub technique_id: String,
    pub cue: String,
}

// Wire shape; category ids stay strings so an unknown id is reported as a
// validation error rather than a parse error.
#[derive(Debug, Serialize, Deserialize)]
struct CatalogDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    categories: Vec<RawCategory>,
    techniques: Vec<RawTechnique>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCategory {
    id: String,
    display_name: String,
    description: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTechnique {
    id: String,
    category: String,
    name: String,
    description: String,
    cue_phrases: Vec<String>,
    example_utterances: Vec<String>,
}

/// Validated catalog of categories and techniques.
#[derive(Debug, Clone)]
pub struct Catalog {
    version: Option<String>,
    categories: Vec<FliccCategory>,
    techniques: Vec<FallacyTechnique>,
    index: HashMap<String, usize>,
    // Normalized cue phrases per technique, parallel to `techniques`.
    normalized_cues: Vec<Vec<(String, usize)>>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.categories == other.categories
            && self.techniques == other.techniques
    }
}

impl Catalog {
    /// Parses and validates a catalog document.
    pub fn from_json(source: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDocument =
            serde_json::from_str(source).map_err(|e| CatalogError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        Self::from_document(doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&source)
    }

    /// The catalog bundled with this crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn shipped_source() -> &'static str {
        SHIPPED_CATALOG
    }

    fn from_document(doc: CatalogDocument) -> Result<Self, CatalogError> {
        let mut categories = Vec::with_capacity(doc.categories.len());
        let mut seen_categories = HashSet::new();
        for raw in doc.categories {
            let id = CategoryId::from_str(&raw.id).map_err(|_| CatalogError::UnknownCategory {
                context: "category list".to_string(),
                category: raw.id.clone(),
            })?;
            if !seen_categories.insert(id) {
                return Err(CatalogError::DuplicateId(raw.id));
            }
            categories.push(FliccCategory {
                id,
                display_name: raw.display_name,
                description: raw.description,
            });
        }
        if let Some(missing) = CategoryId::ALL
            .into_iter()
            .find(|c| !seen_categories.contains(c))
        {
            return Err(CatalogError::MissingCategory(missing));
        }

        let mut techniques = Vec::with_capacity(doc.techniques.len());
        let mut index = HashMap::new();
        for raw in doc.techniques {
            let category =
                CategoryId::from_str(&raw.category).map_err(|_| CatalogError::UnknownCategory {
                    context: format!("technique `{}`", raw.id),
                    category: raw.category.clone(),
                })?;
            let technique = FallacyTechnique {
                id: raw.id,
                category,
                name: raw.name,
                description: raw.description,
                cue_phrases: raw.cue_phrases,
                example_utterances: raw.example_utterances,
            };
            validate_technique(&technique)?;
            if index
                .insert(technique.id.clone(), techniques.len())
                .is_some()
            {
                return Err(CatalogError::DuplicateId(technique.id));
            }
            techniques.push(technique);
        }

        let normalized_cues = techniques
            .iter()
            .map(|t| {
                t.cue_phrases
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (normalize(c), i))
                    .collect()
            })
            .collect();

        Ok(Catalog {
            version: doc.version,
            categories,
            techniques,
            index,
            normalized_cues,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        let doc = CatalogDocument {
            version: self.version.clone(),
            categories: self
                .categories
                .iter()
                .map(|c| RawCategory {
                    id: c.id.as_str().to_string(),
                    display_name: c.display_name.clone(),
                    description: c.description.clone(),
                })
                .collect(),
            techniques: self
                .techniques
                .iter()
                .map(|t| RawTechnique {
                    id: t.id.clone(),
                    category: t.category.as_str().to_string(),
                    name: t.name.clone(),
                    description: t.description.clone(),
                    cue_phrases: t.cue_phrases.clone(),
                    example_utterances: t.example_utterances.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn categories(&self) -> &[FliccCategory] {
        &self.categories
    }

    pub fn category(&self, id: CategoryId) -> &FliccCategory {
        self.categories
            .iter()
            .find(|c| c.id == id)
            .expect("validated catalog holds every category")
    }

    pub fn techniques(&self) -> &[FallacyTechnique] {
        &self.techniques
    }

    pub fn technique(&self, id: &str) -> Option<&FallacyTechnique> {
        self.index.get(id).map(|&i| &self.techniques[i])
    }

    pub fn techniques_in(&self, category: CategoryId) -> impl Iterator<Item = &FallacyTechnique> {
        self.techniques
            .iter()
            .filter(move |t| t.category == category)
    }

    /// Every technique whose cue phrase occurs in the normalized utterance,
    /// ordered by the position of its earliest match. Each technique is
    /// reported once, with the cue that matched first.
    pub fn match_technique_mention(&self, text: &str) -> Vec<TechniqueMention> {
        let haystack = normalize(text);
        if haystack.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<(usize, usize, TechniqueMention)> = Vec::new();
        for (order, (technique, cues)) in self
            .techniques
            .iter()
            .zip(&self.normalized_cues)
            .enumerate()
        {
            let earliest = cues
                .iter()
                .filter(|(cue, _)| !cue.is_empty())
                .filter_map(|(cue, i)| haystack.find(cue.as_str()).map(|pos| (pos, *i)))
                .min_by_key(|&(pos, i)| (pos, std::cmp::Reverse(cues[i].0.len())));
            if let Some((pos, cue_index)) = earliest {
                hits.push((
                    pos,
                    order,
                    TechniqueMention {
                        technique_id: technique.id.clone(),
                        cue: technique.cue_phrases[cue_index].clone(),
                    },
                ));
            }
        }
        hits.sort_by_key(|&(pos, order, _)| (pos, order));
        hits.into_iter().map(|(_, _, m)| m).collect()
    }
}

/// Free-function form of [`Catalog::match_technique_mention`].
pub fn match_technique_mention(text: &str, catalog: &Catalog) -> Vec<TechniqueMention> {
    catalog.match_technique_mention(text)
}

fn validate_technique(t: &FallacyTechnique) -> Result<(), CatalogError> {
    let invalid = |reason: String| CatalogError::InvalidTechnique {
        technique: t.id.clone(),
        reason,
    };
    if t.id.trim().is_empty() {
        return Err(invalid("empty id".into()));
    }
    if t.name.trim().is_empty() {
        return Err(invalid("empty name".into()));
    }
    if t.cue_phrases.is_empty() {
        return Err(invalid("no cue phrases".into()));
    }
    for cue in &t.cue_phrases {
        if cue.trim() != cue || cue.to_lowercase() != *cue {
            return Err(invalid(format!(
                "cue phrase `{cue}` is not lowercase and trimmed"
            )));
        }
        if normalize(cue).is_empty() {
            return Err(invalid(format!(
                "cue phrase `{cue}` has no letters or digits"
            )));
        }
    }
    for utterance in &t.example_utterances {
        if let Some(name) = crate::prompting::placeholders(utterance).find(|p| *p != "topic") {
            return Err(invalid(format!(
                "example utterance uses unknown placeholder `{{{name}}}`"
            )));
        }
    }
    Ok(())
}
