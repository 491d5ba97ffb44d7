//! Denier characters: topic, backstory, assigned techniques, one prompt
//! template per behavior mode, and the belief dynamics that govern when the
//! character gives in.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::{placeholders, TEMPLATE_PLACEHOLDERS};
use crate::taxonomy::Catalog;

const SHIPPED_PERSONAS: [(&str, &str); 3] = [
    (
        "climate_denier.json",
        include_str!("../data/personas/climate_denier.json"),
    ),
    (
        "evolution_denier.json",
        include_str!("../data/personas/evolution_denier.json"),
    ),
    (
        "flat_earther.json",
        include_str!("../data/personas/flat_earther.json"),
    ),
];

/// How the character currently behaves; each mode has its own template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorMode {
    /// Argues confidently using the selected technique.
    Default,
    /// The trainee contradicted the bot.
    Defensive,
    /// Belief is close to the concede threshold.
    Doubtful,
    /// The trainee has prevailed.
    Conceding,
}

impl BehaviorMode {
    pub const ALL: [BehaviorMode; 4] = [
        BehaviorMode::Default,
        BehaviorMode::Defensive,
        BehaviorMode::Doubtful,
        BehaviorMode::Conceding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorMode::Default => "default",
            BehaviorMode::Defensive => "defensive",
            BehaviorMode::Doubtful => "doubtful",
            BehaviorMode::Conceding => "conceding",
        }
    }
}

impl fmt::Display for BehaviorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Personality and answering style. May use `{topic}`, `{backstory}`
    /// and `{technique_hint}`.
    pub instructions: String,
    pub max_response_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefParams {
    pub initial_belief: f64,
    /// Belief drop per correct technique identification.
    pub delta_identified: f64,
    pub delta_polite_contradiction: f64,
    pub delta_insult_gain: f64,
    pub concede_threshold: f64,
}

impl Default for BeliefParams {
    fn default() -> Self {
        Self {
            initial_belief: 0.9,
            delta_identified: 0.15,
            delta_polite_contradiction: 0.05,
            delta_insult_gain: 0.10,
            concede_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub topic: String,
    pub display_name: String,
    pub backstory: String,
    pub assigned_techniques: Vec<String>,
    pub templates: BTreeMap<BehaviorMode, PromptTemplate>,
    #[serde(default)]
    pub belief_params: BeliefParams,
    pub opening_line: String,
    /// Whether trainees are shown the assigned techniques up front.
    #[serde(default)]
    pub reveal_techniques: bool,
}

impl Persona {
    pub fn template(&self, mode: BehaviorMode) -> Option<&PromptTemplate> {
        self.templates.get(&mode)
    }

    /// Short content hash identifying this exact persona definition.
    pub fn snapshot_id(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("persona serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("persona serializes")
    }
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("{source_name}: parse error at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("persona `{persona}` references unknown technique `{technique}`")]
    UnknownTechnique { persona: String, technique: String },
    #[error("persona `{persona}` lists technique `{technique}` more than once")]
    DuplicateTechnique { persona: String, technique: String },
    #[error("persona `{persona}` has no assigned techniques")]
    NoTechniques { persona: String },
    #[error("persona `{persona}` is missing a template for mode `{mode}`")]
    MissingTemplate { persona: String, mode: BehaviorMode },
    #[error("persona `{persona}` template `{mode}`: {reason}")]
    InvalidTemplate {
        persona: String,
        mode: BehaviorMode,
        reason: String,
    },
    #[error("persona `{persona}`: {field} = {value} is out of range")]
    OutOfRange {
        persona: String,
        field: &'static str,
        value: f64,
    },
    #[error("persona `{persona}`: {reason}")]
    Invalid { persona: String, reason: String },
    #[error("duplicate persona id `{0}`")]
    DuplicatePersona(String),
}

/// Parses and validates a set of persona documents, each given as
/// `(source name, JSON text)`. The result is sorted by persona id, so the
/// input order never changes the outcome.
pub fn load_personas(
    documents: &[(String, String)],
    catalog: &Catalog,
) -> Result<Vec<Persona>, PersonaError> {
    let mut sorted: Vec<_> = documents.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut personas = Vec::with_capacity(documents.len());
    for (name, text) in sorted {
        let persona: Persona = serde_json::from_str(text).map_err(|e| PersonaError::Parse {
            source_name: name.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        personas.push(persona);
    }
    personas.sort_by(|a, b| a.id.cmp(&b.id));

    let mut seen = HashSet::new();
    for persona in &personas {
        if !seen.insert(persona.id.as_str()) {
            return Err(PersonaError::DuplicatePersona(persona.id.clone()));
        }
        validate_persona(persona, catalog)?;
    }
    Ok(personas)
}

/// Loads every `*.json` file in `dir`.
pub fn load_personas_dir(
    dir: impl AsRef<Path>,
    catalog: &Catalog,
) -> Result<Vec<Persona>, PersonaError> {
    let dir = dir.as_ref();
    let io_err = |source| PersonaError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut documents = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|source| PersonaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        documents.push((path.display().to_string(), text));
    }
    load_personas(&documents, catalog)
}

/// The personas bundled with this crate, validated against `catalog`.
pub fn shipped_personas(catalog: &Catalog) -> Result<Vec<Persona>, PersonaError> {
    load_personas(&shipped_persona_documents(), catalog)
}

pub fn shipped_persona_documents() -> Vec<(String, String)> {
    SHIPPED_PERSONAS
        .iter()
        .map(|(name, text)| (name.to_string(), text.to_string()))
        .collect()
}

pub fn validate_persona(persona: &Persona, catalog: &Catalog) -> Result<(), PersonaError> {
    let id = || persona.id.clone();
    if persona.id.trim().is_empty() {
        return Err(PersonaError::Invalid {
            persona: id(),
            reason: "empty id".into(),
        });
    }
    if persona.opening_line.trim().is_empty() {
        return Err(PersonaError::Invalid {
            persona: id(),
            reason: "empty opening line".into(),
        });
    }
    if persona.assigned_techniques.is_empty() {
        return Err(PersonaError::NoTechniques { persona: id() });
    }
    let mut seen = HashSet::new();
    for technique in &persona.assigned_techniques {
        if catalog.technique(technique).is_none() {
            return Err(PersonaError::UnknownTechnique {
                persona: id(),
                technique: technique.clone(),
            });
        }
        if !seen.insert(technique) {
            return Err(PersonaError::DuplicateTechnique {
                persona: id(),
                technique: technique.clone(),
            });
        }
    }

    for mode in BehaviorMode::ALL {
        let template = persona
            .templates
            .get(&mode)
            .ok_or(PersonaError::MissingTemplate {
                persona: id(),
                mode,
            })?;
        let invalid = |reason: String| PersonaError::InvalidTemplate {
            persona: id(),
            mode,
            reason,
        };
        if template.instructions.trim().is_empty() {
            return Err(invalid("empty instructions".into()));
        }
        if template.max_response_tokens < 16 {
            return Err(invalid(format!(
                "max_response_tokens {} is below 16",
                template.max_response_tokens
            )));
        }
        if let Some(name) =
            placeholders(&template.instructions).find(|p| !TEMPLATE_PLACEHOLDERS.contains(p))
        {
            return Err(invalid(format!("unknown placeholder `{{{name}}}`")));
        }
    }

    let p = &persona.belief_params;
    let check = |field: &'static str, value: f64, ok: bool| {
        if ok && value.is_finite() {
            Ok(())
        } else {
            Err(PersonaError::OutOfRange {
                persona: id(),
                field,
                value,
            })
        }
    };
    check(
        "initial_belief",
        p.initial_belief,
        (0.0..=1.0).contains(&p.initial_belief),
    )?;
    check(
        "delta_identified",
        p.delta_identified,
        p.delta_identified >= 0.0,
    )?;
    check(
        "delta_polite_contradiction",
        p.delta_polite_contradiction,
        p.delta_polite_contradiction >= 0.0,
    )?;
    check(
        "delta_insult_gain",
        p.delta_insult_gain,
        p.delta_insult_gain >= 0.0,
    )?;
    check(
        "concede_threshold",
        p.concede_threshold,
        (0.0..1.0).contains(&p.concede_threshold),
    )?;
    if p.concede_threshold >= p.initial_belief {
        return Err(PersonaError::Invalid {
            persona: id(),
            reason: format!(
                "concede_threshold {} must be below initial_belief {}",
                p.concede_threshold, p.initial_belief
            ),
        });
    }
    Ok(())
}
