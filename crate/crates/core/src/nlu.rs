//! Intent classification of trainee utterances and LLM-assisted
//! conversation analysis.
//!
//! Classification is a strict rule cascade; the first rule that fires wins:
//!
//! | rule                        | label              | confidence |
//! |-----------------------------|--------------------|-----------:|
//! | technique cue phrase        | `identify_fallacy` | 1.0 |
//! | insult lexicon              | `insult`           | 1.0 |
//! | quit phrase                 | `quit`             | 1.0 |
//! | contradiction pattern       | `contradict`       | 0.5 |
//! | evidence marker / URL / citation | `provide_evidence` | 0.5 |
//! | `?` or interrogative opener | `ask_question`     | 0.5 |
//! | agreement phrase            | `agree`            | 1.0 |
//! | greeting phrase             | `greet`            | 1.0 |
//! | nothing                     | `other`            | 0.1 |

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Role, Turn};
use crate::llm::{GenerationRequest, LlmError, LlmGateway};
use crate::taxonomy::Catalog;
use crate::text::{contains_phrase, normalize};

pub const LEXICON_CONFIDENCE: f64 = 1.0;
pub const PATTERN_CONFIDENCE: f64 = 0.5;
pub const FALLBACK_CONFIDENCE: f64 = 0.1;

const PATTERN_FILES: [(&str, &str); 7] = [
    ("insults.txt", include_str!("../data/nlu/insults.txt")),
    ("quit.txt", include_str!("../data/nlu/quit.txt")),
    (
        "contradiction.txt",
        include_str!("../data/nlu/contradiction.txt"),
    ),
    ("evidence.txt", include_str!("../data/nlu/evidence.txt")),
    (
        "interrogatives.txt",
        include_str!("../data/nlu/interrogatives.txt"),
    ),
    ("agreement.txt", include_str!("../data/nlu/agreement.txt")),
    ("greetings.txt", include_str!("../data/nlu/greetings.txt")),
];

const SEED_SET: &str = include_str!("../data/nlu/seed.tsv");

static URL_LIKE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:https?://|www\.)\S+|\b[a-z0-9-]+\.(?:org|com|gov|edu|net|int)(?:/\S*)?\b|\bdoi:\S+")
        .unwrap()
});
static CITED_YEAR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\(\s*(?:19|20)\d{2}[a-z]?\s*\)|\b(?:in|from) (?:19|20)\d{2}\b").unwrap()
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentLabel {
    Greet,
    Contradict,
    ProvideEvidence,
    IdentifyFallacy,
    AskQuestion,
    Agree,
    Insult,
    Quit,
    Other,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 9] = [
        IntentLabel::Greet,
        IntentLabel::Contradict,
        IntentLabel::ProvideEvidence,
        IntentLabel::IdentifyFallacy,
        IntentLabel::AskQuestion,
        IntentLabel::Agree,
        IntentLabel::Insult,
        IntentLabel::Quit,
        IntentLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentLabel::Greet => "greet",
            IntentLabel::Contradict => "contradict",
            IntentLabel::ProvideEvidence => "provide_evidence",
            IntentLabel::IdentifyFallacy => "identify_fallacy",
            IntentLabel::AskQuestion => "ask_question",
            IntentLabel::Agree => "agree",
            IntentLabel::Insult => "insult",
            IntentLabel::Quit => "quit",
            IntentLabel::Other => "other",
        }
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntentLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntentLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown intent label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentResult {
    pub label: IntentLabel,
    pub confidence: f64,
    pub mentioned_techniques: Vec<String>,
}

impl IntentResult {
    fn new(label: IntentLabel, confidence: f64) -> Self {
        Self {
            label,
            confidence,
            mentioned_techniques: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("{file}:{line}: {reason}")]
    Invalid {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Phrases from one pattern file, normalized. Patterns written with a
/// leading `^` only match at the start of the utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatternSet {
    anywhere: Vec<String>,
    anchored: Vec<String>,
}

impl PatternSet {
    pub fn parse(file: &str, source: &str) -> Result<Self, PatternError> {
        let mut set = PatternSet::default();
        for (i, raw) in source.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (anchored, body) = match line.strip_prefix('^') {
                Some(rest) => (true, rest),
                None => (false, line),
            };
            if body.to_lowercase() != body {
                return Err(PatternError::Invalid {
                    file: file.to_string(),
                    line: i + 1,
                    reason: format!("pattern `{line}` is not lowercase"),
                });
            }
            let normalized = normalize(body);
            if normalized.is_empty() {
                return Err(PatternError::Invalid {
                    file: file.to_string(),
                    line: i + 1,
                    reason: "empty pattern".into(),
                });
            }
            if anchored {
                set.anchored.push(normalized);
            } else {
                set.anywhere.push(normalized);
            }
        }
        Ok(set)
    }

    /// `normalized` must already be [`normalize`]d.
    pub fn matches(&self, normalized: &str) -> bool {
        self.anywhere.iter().any(|p| contains_phrase(normalized, p))
            || self.anchored.iter().any(|p| {
                normalized.starts_with(p.as_str())
                    && (normalized.len() == p.len() || normalized.as_bytes()[p.len()] == b' ')
            })
    }

    pub fn len(&self) -> usize {
        self.anywhere.len() + self.anchored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic rule-cascade classifier. Stateless once built.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentClassifier {
    insults: PatternSet,
    quit: PatternSet,
    contradiction: PatternSet,
    evidence: PatternSet,
    interrogatives: PatternSet,
    agreement: PatternSet,
    greetings: PatternSet,
}

impl IntentClassifier {
    pub fn shipped() -> Self {
        Self::from_sources(|name| {
            PATTERN_FILES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| Ok(s.to_string()))
                .expect("bundled pattern file")
        })
        .expect("bundled pattern files are valid")
    }

    /// Loads the seven pattern files (`insults.txt`, `quit.txt`, ...) from
    /// `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PatternError> {
        let dir = dir.as_ref();
        Self::from_sources(|name| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| PatternError::Io {
                path: path.display().to_string(),
                source,
            })
        })
    }

    fn from_sources(
        mut read: impl FnMut(&str) -> Result<String, PatternError>,
    ) -> Result<Self, PatternError> {
        let mut load = |name: &str| -> Result<PatternSet, PatternError> {
            PatternSet::parse(name, &read(name)?)
        };
        Ok(Self {
            insults: load("insults.txt")?,
            quit: load("quit.txt")?,
            contradiction: load("contradiction.txt")?,
            evidence: load("evidence.txt")?,
            interrogatives: load("interrogatives.txt")?,
            agreement: load("agreement.txt")?,
            greetings: load("greetings.txt")?,
        })
    }

    pub fn pattern_file_names() -> impl Iterator<Item = &'static str> {
        PATTERN_FILES.iter().map(|(n, _)| *n)
    }

    /// Total, pure classification of one utterance.
    pub fn classify(&self, text: &str, catalog: &Catalog) -> IntentResult {
        let mentions = catalog.match_technique_mention(text);
        if !mentions.is_empty() {
            return IntentResult {
                label: IntentLabel::IdentifyFallacy,
                confidence: LEXICON_CONFIDENCE,
                mentioned_techniques: mentions.into_iter().map(|m| m.technique_id).collect(),
            };
        }
        let normalized = normalize(text);
        if normalized.is_empty() && !text.contains('?') {
            return IntentResult::new(IntentLabel::Other, FALLBACK_CONFIDENCE);
        }
        if self.insults.matches(&normalized) {
            return IntentResult::new(IntentLabel::Insult, LEXICON_CONFIDENCE);
        }
        if self.quit.matches(&normalized) {
            return IntentResult::new(IntentLabel::Quit, LEXICON_CONFIDENCE);
        }
        if self.contradiction.matches(&normalized) {
            return IntentResult::new(IntentLabel::Contradict, PATTERN_CONFIDENCE);
        }
        if self.evidence.matches(&normalized)
            || URL_LIKE.is_match(text)
            || CITED_YEAR.is_match(text)
        {
            return IntentResult::new(IntentLabel::ProvideEvidence, PATTERN_CONFIDENCE);
        }
        if text.contains('?') || self.interrogatives.matches(&normalized) {
            return IntentResult::new(IntentLabel::AskQuestion, PATTERN_CONFIDENCE);
        }
        if self.agreement.matches(&normalized) {
            return IntentResult::new(IntentLabel::Agree, LEXICON_CONFIDENCE);
        }
        if self.greetings.matches(&normalized) {
            return IntentResult::new(IntentLabel::Greet, LEXICON_CONFIDENCE);
        }
        IntentResult::new(IntentLabel::Other, FALLBACK_CONFIDENCE)
    }
}

/// Classifies with the bundled pattern files.
pub fn classify_intent(text: &str, catalog: &Catalog) -> IntentResult {
    static SHIPPED: LazyLock<IntentClassifier> = LazyLock::new(IntentClassifier::shipped);
    SHIPPED.classify(text, catalog)
}

// ── Labeled seed set ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SeedExample {
    pub label: IntentLabel,
    pub text: String,
    /// Utterance carries both a technique cue and an insult.
    pub priority_conflict: bool,
}

pub fn parse_seed_set(source: &str) -> Result<Vec<SeedExample>, String> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let label = cols
            .next()
            .unwrap_or_default()
            .parse::<IntentLabel>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        let text = cols
            .next()
            .ok_or_else(|| format!("line {}: missing utterance", i + 1))?
            .to_string();
        let priority_conflict = cols.next().map(str::trim) == Some("conflict");
        out.push(SeedExample {
            label,
            text,
            priority_conflict,
        });
    }
    Ok(out)
}

pub fn shipped_seed_set() -> Vec<SeedExample> {
    parse_seed_set(SEED_SET).expect("bundled seed set is valid")
}

// ── Self-contradiction analysis ─────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContradictionVerdict {
    pub contradicts: bool,
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 2 user turns, got {0}")]
    InsufficientHistory(usize),
    #[error("analysis unavailable: {0}")]
    Unavailable(#[from] LlmError),
}

const CONTRADICTION_INSTRUCTIONS: &str = "\
You check conversations for self-contradiction. Read the numbered statements \
made by one person and decide whether any statement contradicts an earlier one. \
Answer with yes or no first, then give a one-sentence reason.

Statements:
1. I never eat meat.
2. I had a great steak yesterday.
Answer: yes, statement 2 contradicts statement 1.

Statements:
1. The climate has changed before.
2. That does not mean the current warming is natural.
Answer: no, statement 2 refines statement 1 without contradicting it.

Statements:
1. Fossils are rare because conditions must be just right.
2. Fossils are extremely common, you can find them anywhere.
Answer: yes, statement 2 contradicts statement 1.
";

/// The few-shot analysis prompt for the user turns in `history`.
pub fn self_contradiction_prompt(history: &[Turn]) -> String {
    let mut prompt = String::from(CONTRADICTION_INSTRUCTIONS);
    prompt.push_str("\nStatements:\n");
    for (n, turn) in history.iter().filter(|t| t.role == Role::User).enumerate() {
        let text = turn.text.replace(['\r', '\n'], " ");
        prompt.push_str(&format!("{}. {}\n", n + 1, text));
    }
    prompt.push_str("Answer:");
    prompt
}

/// Asks the model whether the trainee contradicts themselves. Callers treat
/// an error as "no contradiction".
pub fn detect_self_contradiction(
    history: &[Turn],
    gateway: &dyn LlmGateway,
) -> Result<ContradictionVerdict, AnalysisError> {
    let user_turns = history.iter().filter(|t| t.role == Role::User).count();
    if user_turns < 2 {
        return Err(AnalysisError::InsufficientHistory(user_turns));
    }
    let request = GenerationRequest {
        prompt: self_contradiction_prompt(history),
        max_tokens: 64,
        temperature: 0.0,
        stop_sequences: vec!["\nStatements:".to_string()],
        context: None,
    };
    let reply = gateway.generate(&request)?.text;
    Ok(parse_verdict(&reply))
}

pub fn parse_verdict(reply: &str) -> ContradictionVerdict {
    let first: String = reply
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match first.as_str() {
        "yes" => ContradictionVerdict {
            contradicts: true,
            rationale: reply.trim().to_string(),
        },
        "no" => ContradictionVerdict {
            contradicts: false,
            rationale: reply.trim().to_string(),
        },
        _ => ContradictionVerdict {
            contradicts: false,
            rationale: "unparseable".to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockGateway;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn classify(text: &str) -> IntentResult {
        classify_intent(text, &Catalog::shipped())
    }

    #[test]
    fn contradiction_example() {
        let r = classify("You are wrong about that");
        assert_eq!(r.label, IntentLabel::Contradict);
        assert!(r.confidence >= 0.5);
        assert!(r.mentioned_techniques.is_empty());
    }

    #[test]
    fn empty_is_other() {
        assert_eq!(
            classify(""),
            IntentResult::new(IntentLabel::Other, FALLBACK_CONFIDENCE)
        );
    }

    #[test]
    fn cue_beats_evidence() {
        let r = classify("That is cherry picking, you ignored the other studies");
        assert_eq!(r.label, IntentLabel::IdentifyFallacy);
        assert_eq!(r.confidence, 1.0);
        assert_eq!(r.mentioned_techniques, vec!["cherry_picked_data"]);
    }

    #[test]
    fn cue_beats_insult() {
        let r = classify("You idiot, that's a straw man");
        assert_eq!(r.label, IntentLabel::IdentifyFallacy);
        assert_eq!(classify("You idiot").label, IntentLabel::Insult);
    }

    #[test]
    fn rule_order() {
        assert_eq!(classify("goodbye, you are wrong").label, IntentLabel::Quit);
        assert_eq!(
            classify("Studies show it, right?").label,
            IntentLabel::ProvideEvidence
        );
        assert_eq!(
            classify("see https://climate.nasa.gov").label,
            IntentLabel::ProvideEvidence
        );
        assert_eq!(classify("Why though").label, IntentLabel::AskQuestion);
        assert_eq!(classify("?").label, IntentLabel::AskQuestion);
        assert_eq!(classify("Fair enough").label, IntentLabel::Agree);
        assert_eq!(classify("hi").label, IntentLabel::Greet);
        assert_eq!(classify("this thing").label, IntentLabel::Other);
        assert_eq!(classify("No way").label, IntentLabel::Contradict);
        assert_eq!(classify("I know nothing").label, IntentLabel::Other);
    }

    #[test]
    fn pattern_file_validation() {
        assert!(PatternSet::parse("x", "Hello\n").is_err());
        assert!(PatternSet::parse("x", "^ !\n").is_err());
        let set = PatternSet::parse("x", "# c\n\n^no\nyou're wrong\n").unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.matches("no way"));
        assert!(!set.matches("i know nothing"));
        assert!(set.matches("well youre wrong"));
    }

    #[test]
    fn shipped_classifier_loads_from_dir() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/nlu");
        assert_eq!(
            IntentClassifier::from_dir(dir).unwrap(),
            IntentClassifier::shipped()
        );
    }

    #[test]
    fn seed_set_is_large_enough() {
        let seed = shipped_seed_set();
        assert!(seed.len() >= 50);
        assert!(seed.iter().any(|s| s.priority_conflict));
        for label in IntentLabel::ALL {
            assert!(seed.iter().any(|s| s.label == label), "{label}");
        }
    }

    fn turns(texts: &[&str]) -> Vec<Turn> {
        let mut out = vec![Turn::plain(0, Role::Bot, "opening".into())];
        for t in texts {
            let i = out.len();
            out.push(Turn::plain(i, Role::User, t.to_string()));
            out.push(Turn::plain(i + 1, Role::Bot, "reply".into()));
        }
        out
    }

    fn scripted(reply: &str) -> MockGateway {
        MockGateway::with_script(Arc::new(Catalog::shipped()), [reply])
    }

    #[test]
    fn self_contradiction_verdicts() {
        let h = turns(&["I never eat meat", "steak is my favourite"]);
        let v =
            detect_self_contradiction(&h, &scripted("Yes: turn 3 contradicts turn 1")).unwrap();
        assert!(v.contradicts);
        assert_eq!(v.rationale, "Yes: turn 3 contradicts turn 1");

        let v = detect_self_contradiction(&h, &scripted("No")).unwrap();
        assert_eq!(
            v,
            ContradictionVerdict {
                contradicts: false,
                rationale: "No".into()
            }
        );

        let v = detect_self_contradiction(&h, &scripted("Maybe?")).unwrap();
        assert_eq!(
            v,
            ContradictionVerdict {
                contradicts: false,
                rationale: "unparseable".into()
            }
        );
    }

    #[test]
    fn self_contradiction_preconditions_and_failures() {
        let short = turns(&["only one"]);
        assert!(matches!(
            detect_self_contradiction(&short, &scripted("yes")),
            Err(AnalysisError::InsufficientHistory(1))
        ));
        let h = turns(&["a", "b"]);
        let exhausted =
            MockGateway::with_script(Arc::new(Catalog::shipped()), Vec::<String>::new());
        assert!(matches!(
            detect_self_contradiction(&h, &exhausted),
            Err(AnalysisError::Unavailable(LlmError::ScriptExhausted))
        ));
        let prompt = self_contradiction_prompt(&h);
        assert!(prompt.ends_with("1. a\n2. b\nAnswer:"));
    }

    proptest! {
        #[test]
        fn classification_is_total_and_valid(text in ".{0,120}") {
            let catalog = Catalog::shipped();
            let r = classify_intent(&text, &catalog);
            prop_assert!((0.0..=1.0).contains(&r.confidence));
            prop_assert_eq!(
                r.label == IntentLabel::IdentifyFallacy,
                !r.mentioned_techniques.is_empty()
            );
            prop_assert_eq!(classify_intent(&text, &catalog), r);
        }
    }
}
