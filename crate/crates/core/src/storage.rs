//! File-backed persistence for sessions, transcripts and questionnaires.
//!
//! Layout under the data directory:
//!
//! ```text
//! index.json                        summaries of all stored sessions
//! sessions/<session id>.json        one SessionRecord per session
//! questionnaires/<session id>.json  at most one response per session
//! ```
//!
//! Every write goes to a temporary file first and is then renamed into
//! place, so a crash never leaves a half-written record behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Role, Session, SessionStatus, SuccessReason};
use crate::prompting::script_line;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCORE_MIN: u8 = 1;
pub const SCORE_MAX: u8 = 7;

const SHIPPED_SCALES: &str = include_str!("../data/ueq_scales.json");

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("record {path} has schema version {found}, expected {expected}")]
    Migration {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("corrupt record {path}: {source}")]
    Corrupt {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A persisted session together with the persona revision it ran against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub persona_snapshot_id: String,
    pub session: Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub persona_id: String,
    pub created_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub score: i64,
    pub turn_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<SuccessReason>,
}

impl From<&Session> for SessionSummary {
    fn from(s: &Session) -> Self {
        Self {
            id: s.id.clone(),
            persona_id: s.persona_id.clone(),
            created_at: s.created_at,
            status: s.status,
            score: s.score,
            turn_count: s.turns.len(),
            outcome: s.outcome,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionFilter {
    pub persona_id: Option<String>,
    pub status: Option<SessionStatus>,
}

// ── Transcripts ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptFormat {
    Text,
    Structured,
}

impl std::str::FromStr for TranscriptFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(TranscriptFormat::Text),
            "structured" | "json" => Ok(TranscriptFormat::Structured),
            other => Err(format!("unknown transcript format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique_used: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredTranscript {
    pub session_id: String,
    pub persona_id: String,
    pub status: SessionStatus,
    pub outcome: Option<SuccessReason>,
    pub final_score: i64,
    pub identified: Vec<String>,
    pub turns: Vec<TranscriptTurn>,
    /// Belief after each user turn, starting with the initial value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief_trajectory: Option<Vec<f64>>,
    /// Score after each user turn, starting at zero.
    pub score_trajectory: Vec<i64>,
}

impl StructuredTranscript {
    /// Drops internal state (belief values, per-turn techniques) that the
    /// trainee should not see.
    pub fn redacted(mut self) -> Self {
        self.belief_trajectory = None;
        for t in &mut self.turns {
            t.technique_used = None;
        }
        self
    }
}

pub fn text_transcript(session: &Session) -> String {
    let mut out = String::new();
    for turn in &session.turns {
        out.push_str(&script_line(turn));
        out.push('\n');
    }
    out
}

pub fn structured_transcript(session: &Session, initial_belief: f64) -> StructuredTranscript {
    let users = session.turns.iter().filter(|t| t.role == Role::User);
    let mut beliefs = vec![initial_belief];
    let mut scores = vec![0];
    for t in users {
        if let Some(b) = t.belief_after {
            beliefs.push(b);
        }
        if let Some(s) = t.score_after {
            scores.push(s);
        }
    }
    StructuredTranscript {
        session_id: session.id.clone(),
        persona_id: session.persona_id.clone(),
        status: session.status,
        outcome: session.outcome,
        final_score: session.score,
        identified: session.identified.iter().cloned().collect(),
        turns: session
            .turns
            .iter()
            .map(|t| TranscriptTurn {
                index: t.index,
                role: t.role,
                text: t.text.clone(),
                timestamp: t.timestamp,
                intent: t.intent.as_ref().map(|i| i.label.as_str().to_string()),
                polarity: t.sentiment.as_ref().map(|s| s.polarity),
                technique_used: t.technique_used.clone(),
            })
            .collect(),
        belief_trajectory: Some(beliefs),
        score_trajectory: scores,
    }
}

// ── Questionnaires ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub id: String,
    pub scale: String,
    pub low_anchor: String,
    pub high_anchor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireScales {
    /// True while the item set is a stand-in for the licensed instrument.
    #[serde(default)]
    pub placeholder: bool,
    pub items: Vec<QuestionnaireItem>,
}

impl QuestionnaireScales {
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_SCALES).expect("bundled questionnaire scales are valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&src).map_err(|source| StorageError::Corrupt {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.iter().any(|i| i.id == item_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub session_id: String,
    pub persona_id: String,
    pub submitted_at: DateTime<Utc>,
    pub scores: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStats {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireStats {
    pub persona_id: String,
    pub responses: usize,
    pub items: BTreeMap<String, ItemStats>,
}

// ── Store ───────────────────────────────────────────────────────────────

/// Session ids double as file names, so only a conservative character set
/// is accepted.
pub fn validate_id(id: &str) -> Result<(), StorageError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StorageError::Validation(format!("invalid id `{id}`")))
    }
}

#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        for sub in ["sessions", "questionnaires"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    fn questionnaire_path(&self, id: &str) -> PathBuf {
        self.root.join("questionnaires").join(format!("{id}.json"))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
        let tmp = path.with_extension(format!("json.tmp-{}", std::process::id()));
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StorageError> {
        let src = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&src).map_err(|source| StorageError::Corrupt {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save_session(
        &self,
        session: &Session,
        persona_snapshot_id: &str,
    ) -> Result<(), StorageError> {
        validate_id(&session.id)?;
        let record = SessionRecord {
            schema_version: SCHEMA_VERSION,
            persona_snapshot_id: persona_snapshot_id.to_string(),
            session: session.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&record).expect("session serializes");
        let _guard = self.write_lock.lock().expect("store write lock");
        self.write_atomic(&self.session_path(&session.id), &bytes)?;
        let mut index = self.read_index().unwrap_or_default();
        index.insert(session.id.clone(), SessionSummary::from(session));
        let index_bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        self.write_atomic(&self.index_path(), &index_bytes)
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    fn read_index(&self) -> Option<BTreeMap<String, SessionSummary>> {
        let path = self.index_path();
        path.exists().then(|| Self::read_json(&path).ok()).flatten()
    }

    /// Recreates `index.json` from the session documents.
    pub fn rebuild_index(&self) -> Result<BTreeMap<String, SessionSummary>, StorageError> {
        let dir = self.root.join("sessions");
        let mut index = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let session = self.load_session(id)?;
            index.insert(session.id.clone(), SessionSummary::from(&session));
        }
        let bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        let _guard = self.write_lock.lock().expect("store write lock");
        self.write_atomic(&self.index_path(), &bytes)?;
        Ok(index)
    }

    pub fn load_record(&self, id: &str) -> Result<SessionRecord, StorageError> {
        validate_id(id)?;
        let path = self.session_path(id);
        if !path.exists() {
            return Err(StorageError::NotFound {
                kind: "session",
                id: id.to_string(),
            });
        }
        let value: serde_json::Value = Self::read_json(&path)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(StorageError::Migration {
                path: path.display().to_string(),
                found,
                expected: SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|source| StorageError::Corrupt {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_session(&self, id: &str) -> Result<Session, StorageError> {
        Ok(self.load_record(id)?.session)
    }

    /// Summaries ordered by creation time, then id. Served from the index,
    /// which is rebuilt when missing or unreadable.
    pub fn list_sessions(
        &self,
        filter: &SessionFilter,
    ) -> Result<Vec<SessionSummary>, StorageError> {
        let index = match self.read_index() {
            Some(index) => index,
            None => self.rebuild_index()?,
        };
        let mut out: Vec<SessionSummary> = index
            .into_values()
            .filter(|s| {
                filter
                    .persona_id
                    .as_ref()
                    .is_none_or(|p| *p == s.persona_id)
            })
            .filter(|s| filter.status.is_none_or(|st| st == s.status))
            .collect();
        out.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(out)
    }

    /// Renders a transcript as text lines or pretty JSON. `redact` strips
    /// internal state from the structured form.
    pub fn export_transcript(
        &self,
        id: &str,
        format: &str,
        initial_belief: f64,
        redact: bool,
    ) -> Result<String, StorageError> {
        let format: TranscriptFormat = format.parse().map_err(StorageError::Validation)?;
        let session = self.load_session(id)?;
        Ok(match format {
            TranscriptFormat::Text => text_transcript(&session),
            TranscriptFormat::Structured => {
                let mut doc = structured_transcript(&session, initial_belief);
                if redact {
                    doc = doc.redacted();
                }
                serde_json::to_string_pretty(&doc).expect("transcript serializes")
            }
        })
    }

    pub fn export_text(&self, id: &str) -> Result<String, StorageError> {
        Ok(text_transcript(&self.load_session(id)?))
    }

    pub fn export_structured(
        &self,
        id: &str,
        initial_belief: f64,
    ) -> Result<StructuredTranscript, StorageError> {
        Ok(structured_transcript(
            &self.load_session(id)?,
            initial_belief,
        ))
    }

    /// Stores one response per finished session. Scores must lie in
    /// `1..=7` and, when `scales` is given, name known items.
    pub fn submit_questionnaire(
        &self,
        session_id: &str,
        scores: BTreeMap<String, u8>,
        scales: Option<&QuestionnaireScales>,
    ) -> Result<QuestionnaireResponse, StorageError> {
        let session = self.load_session(session_id)?;
        if !session.status.is_finished() {
            return Err(StorageError::Validation(format!(
                "session is {}; questionnaires are accepted after it ends",
                session.status
            )));
        }
        if scores.is_empty() {
            return Err(StorageError::Validation("no scores submitted".into()));
        }
        for (item, score) in &scores {
            if !(SCORE_MIN..=SCORE_MAX).contains(score) {
                return Err(StorageError::Validation(format!(
                    "score {score} for `{item}` outside {SCORE_MIN}..={SCORE_MAX}"
                )));
            }
            if scales.is_some_and(|s| !s.contains(item)) {
                return Err(StorageError::Validation(format!("unknown item `{item}`")));
            }
        }
        let response = QuestionnaireResponse {
            session_id: session.id.clone(),
            persona_id: session.persona_id.clone(),
            submitted_at: Utc::now(),
            scores,
        };
        let path = self.questionnaire_path(&session.id);
        let bytes = serde_json::to_vec_pretty(&response).expect("response serializes");
        let _guard = self.write_lock.lock().expect("store write lock");
        if path.exists() {
            return Err(StorageError::Conflict(format!(
                "questionnaire already submitted for session `{}`",
                session.id
            )));
        }
        self.write_atomic(&path, &bytes)?;
        Ok(response)
    }

    pub fn questionnaire_responses(&self) -> Result<Vec<QuestionnaireResponse>, StorageError> {
        let dir = self.root.join("questionnaires");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                out.push(Self::read_json::<QuestionnaireResponse>(&path)?);
            }
        }
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        Ok(out)
    }

    pub fn questionnaire_stats(
        &self,
        persona_id: &str,
    ) -> Result<QuestionnaireStats, StorageError> {
        let responses: Vec<_> = self
            .questionnaire_responses()?
            .into_iter()
            .filter(|r| r.persona_id == persona_id)
            .collect();
        Ok(aggregate_questionnaires(persona_id, &responses))
    }
}

pub fn aggregate_questionnaires(
    persona_id: &str,
    responses: &[QuestionnaireResponse],
) -> QuestionnaireStats {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in responses {
        for (item, score) in &r.scores {
            let e = sums.entry(item.clone()).or_default();
            e.0 += f64::from(*score);
            e.1 += 1;
        }
    }
    QuestionnaireStats {
        persona_id: persona_id.to_string(),
        responses: responses.len(),
        items: sums
            .into_iter()
            .map(|(k, (sum, count))| {
                (
                    k,
                    ItemStats {
                        mean: sum / count as f64,
                        count,
                    },
                )
            })
            .collect(),
    }
}
