//! Lexicon-based polarity scoring of trainee input.
//!
//! Each token found in the lexicon contributes its polarity; a token
//! preceded within two tokens by a negator has its polarity multiplied by
//! -0.5. The overall polarity is the mean of the contributions.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_tokens;

const SHIPPED_LEXICON: &str = include_str!("../data/sentiment_lexicon.tsv");

pub const NEGATION_WINDOW: usize = 2;
pub const NEGATION_FACTOR: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub polarity: f64,
    /// `(token, contributed polarity)` in order of appearance.
    pub matched_terms: Vec<(String, f64)>,
}

impl SentimentScore {
    pub fn neutral() -> Self {
        Self {
            polarity: 0.0,
            matched_terms: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, f64>,
}

impl Lexicon {
    /// Parses `word<TAB>polarity` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(source: &str) -> Result<Self, LexiconError> {
        let mut entries = HashMap::new();
        for (i, raw) in source.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: String| LexiconError::Line {
                line: i + 1,
                reason,
            };
            let (word, value) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `word<TAB>polarity`".into()))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(err("empty word".into()));
            }
            let polarity: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("`{}` is not a number", value.trim())))?;
            if !(-1.0..=1.0).contains(&polarity) {
                return Err(err(format!("polarity {polarity} outside [-1, 1]")));
            }
            entries.insert(word, polarity);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&source)
    }

    pub fn shipped() -> Self {
        Self::parse(SHIPPED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(w, p)| (w.into().to_lowercase(), p.clamp(-1.0, 1.0)))
                .collect(),
        }
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.entries.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn score(&self, text: &str) -> SentimentScore {
        score_sentiment(text, self)
    }
}

fn is_negator(token: &str) -> bool {
    matches!(token, "not" | "never" | "no" | "cannot") || token.ends_with("n't")
}

pub fn score_sentiment(text: &str, lexicon: &Lexicon) -> SentimentScore {
    let tokens = word_tokens(text);
    let mut matched_terms = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        let Some(base) = lexicon.get(token) else {
            continue;
        };
        let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i]
            .iter()
            .any(|t| is_negator(t));
        let value = if negated {
            base * NEGATION_FACTOR
        } else {
            base
        };
        matched_terms.push((token.clone(), value));
    }
    if matched_terms.is_empty() {
        return SentimentScore::neutral();
    }
    let polarity = matched_terms.iter().map(|(_, v)| v).sum::<f64>() / matched_terms.len() as f64;
    SentimentScore {
        polarity: polarity.clamp(-1.0, 1.0),
        matched_terms,
    }
}
