//! Dynamic prompt composition.
//!
//! A prompt is the behavior-mode template with its placeholders filled in,
//! followed by the most recent turns as a theater script (`User: ...` /
//! `Bot: ...`, one per line) and a trailing `Bot:` cue for the model to
//! complete. Template switching happens only through the mode → template
//! map; this module never looks at intents.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Role, Turn};
use crate::persona::{BehaviorMode, Persona};
use crate::taxonomy::FallacyTechnique;

pub const USER_CUE: &str = "User:";
pub const BOT_CUE: &str = "Bot:";
pub const ROLE_CUES: [&str; 2] = [USER_CUE, BOT_CUE];

pub const TEMPLATE_PLACEHOLDERS: [&str; 3] = ["topic", "backstory", "technique_hint"];

pub const DEFAULT_HISTORY_WINDOW: usize = 50;

/// Substituted when sanitizing leaves nothing.
pub const FALLBACK_REPLY: &str = "Let me think about that.";

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").unwrap());
static MARKDOWN_IMAGE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"!\[[^\]]*\]\([^)]*\)").unwrap());
static HTML_IMAGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<img\b[^>]*>?").unwrap());
static DATA_URI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)data:[a-z0-9.+-]+/[a-z0-9.+-]+(?:;[a-z0-9=.+-]+)*,[^\s)"'>]*"#).unwrap()
});

/// A fully rendered completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub rendered_text: String,
    pub max_response_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub mode: BehaviorMode,
    pub technique_id: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("unresolved placeholder `{{{0}}}` in template")]
    UnresolvedPlaceholder(String),
    #[error("persona has no template for mode `{0}`")]
    MissingTemplate(BehaviorMode),
    #[error("history window must be at least 2, got {0}")]
    WindowTooSmall(usize),
}

/// Names of the `{placeholder}` tokens in `text`, in order of appearance.
pub fn placeholders(text: &str) -> impl Iterator<Item = &str> {
    PLACEHOLDER
        .captures_iter(text)
        .map(|c| c.get(1).unwrap().as_str())
}

/// Single-pass substitution: inserted values are never rescanned, and any
/// placeholder without a value is an error.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = caps.get(1).unwrap().as_str();
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::UnresolvedPlaceholder(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// The text injected for `{technique_hint}`.
pub fn technique_hint(technique: &FallacyTechnique) -> String {
    format!("{}: {}", technique.name, technique.description)
}

/// One theater-script line. Line breaks inside the turn are flattened so
/// each turn occupies exactly one line.
pub fn script_line(turn: &Turn) -> String {
    let cue = match turn.role {
        Role::User => USER_CUE,
        Role::Bot => BOT_CUE,
    };
    let text: String = turn
        .text
        .split(['\r', '\n'])
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    format!("{cue} {text}")
}

pub fn compose_prompt(
    persona: &Persona,
    mode: BehaviorMode,
    technique: &FallacyTechnique,
    history: &[Turn],
    window: usize,
) -> Result<PromptSpec, PromptError> {
    if window < 2 {
        return Err(PromptError::WindowTooSmall(window));
    }
    let template = persona
        .template(mode)
        .ok_or(PromptError::MissingTemplate(mode))?;
    let hint = technique_hint(technique);
    let instructions = render_template(
        &template.instructions,
        &[
            ("topic", persona.topic.as_str()),
            ("backstory", persona.backstory.as_str()),
            ("technique_hint", hint.as_str()),
        ],
    )?;

    let retained = &history[history.len().saturating_sub(window)..];
    let mut rendered_text = instructions;
    for turn in retained {
        rendered_text.push('\n');
        rendered_text.push_str(&script_line(turn));
    }
    rendered_text.push('\n');
    rendered_text.push_str(BOT_CUE);

    let mut stop_sequences = template.stop_sequences.clone();
    if !stop_sequences.iter().any(|s| s.trim() == USER_CUE) {
        stop_sequences.push(USER_CUE.to_string());
    }

    Ok(PromptSpec {
        rendered_text,
        max_response_tokens: template.max_response_tokens,
        stop_sequences,
        mode,
        technique_id: technique.id.clone(),
    })
}

/// Cleans raw model output for display: removes image markup and data-URI
/// payloads, cuts at the first leaked role cue, trims, and falls back to
/// [`FALLBACK_REPLY`] when nothing is left.
pub fn sanitize_response(raw: &str) -> String {
    let mut text = MARKDOWN_IMAGE.replace_all(raw, "").into_owned();
    text = HTML_IMAGE.replace_all(&text, "").into_owned();
    text = DATA_URI.replace_all(&text, "").into_owned();
    // Unterminated image markup.
    while text.contains("![") {
        text = text.replace("![", "[");
    }
    if let Some(cut) = ROLE_CUES.iter().filter_map(|cue| text.find(cue)).min() {
        text.truncate(cut);
    }
    let trimmed = text.trim();
    if trimmed.is_empty() {
        FALLBACK_REPLY.to_string()
    } else {
        trimmed.to_string()
    }
}
