//! The session state machine.
//!
//! Each trainee turn runs the same pipeline: classify intent, score
//! sentiment, check for a correct identification, update belief and score,
//! pick the behavior mode, then either conclude (the trainee prevailed) or
//! select the next technique, compose a prompt, call the gateway and
//! sanitize the reply. The session is only modified once the whole turn has
//! succeeded, so a gateway failure leaves it untouched.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::llm::{GenerationRequest, LlmError, LlmGateway, RequestContext, DEFAULT_TEMPERATURE};
use crate::nlu::{IntentClassifier, IntentLabel, IntentResult, LEXICON_CONFIDENCE};
use crate::persona::{BehaviorMode, BeliefParams, Persona};
use crate::prompting::{compose_prompt, sanitize_response, PromptError, DEFAULT_HISTORY_WINDOW};
use crate::sentiment::{Lexicon, SentimentScore};
use crate::taxonomy::Catalog;

/// Slack for float comparisons against belief thresholds.
pub const BELIEF_EPSILON: f64 = 1e-9;
/// Polarity at or above which a contradiction counts as polite.
pub const POLITE_POLARITY: f64 = -0.1;
/// Polarity below which a turn counts as hostile even without an insult.
pub const HOSTILE_POLARITY: f64 = -0.5;

pub const FAREWELL_REPLY: &str = "Fine, suit yourself. I still think I am right. Goodbye.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Bot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Succeeded,
    Concluded,
    Abandoned,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Active => "active",
            SessionStatus::Succeeded => "succeeded",
            SessionStatus::Concluded => "concluded",
            SessionStatus::Abandoned => "abandoned",
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, SessionStatus::Concluded | SessionStatus::Abandoned)
    }
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SessionStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(SessionStatus::Active),
            "succeeded" => Ok(SessionStatus::Succeeded),
            "concluded" => Ok(SessionStatus::Concluded),
            "abandoned" => Ok(SessionStatus::Abandoned),
            other => Err(format!("unknown session status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessReason {
    AllIdentified,
    Persuaded,
    #[serde(rename = "none")]
    Unmet,
}

impl SuccessReason {
    pub fn is_success(self) -> bool {
        self != SuccessReason::Unmet
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SuccessReason::AllIdentified => "all_identified",
            SuccessReason::Persuaded => "persuaded",
            SuccessReason::Unmet => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<SentimentScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique_used: Option<String>,
    pub timestamp: DateTime<Utc>,
    /// Belief after this user turn was processed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief_after: Option<f64>,
    /// Score after this user turn was processed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_after: Option<i64>,
}

impl Turn {
    /// A turn carrying only text.
    pub fn plain(index: usize, role: Role, text: String) -> Self {
        Self {
            index,
            role,
            text,
            intent: None,
            sentiment: None,
            technique_used: None,
            timestamp: Utc::now(),
            belief_after: None,
            score_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub persona_id: String,
    pub created_at: DateTime<Utc>,
    pub turns: Vec<Turn>,
    pub belief: f64,
    pub score: i64,
    pub identified: BTreeSet<String>,
    pub mode: BehaviorMode,
    pub status: SessionStatus,
    pub last_technique: Option<String>,
    #[serde(default)]
    pub outcome: Option<SuccessReason>,
}

impl Session {
    pub fn bot_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Bot).count()
    }

    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotResponse {
    pub text: String,
    pub session_status: SessionStatus,
    pub score: i64,
    pub newly_identified: Option<String>,
    /// True exactly when this turn moved the session to `succeeded`.
    pub success_signal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_reason: Option<SuccessReason>,
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("session is {0}; no further turns accepted")]
    SessionClosed(SessionStatus),
    #[error("session `{0}` is already processing a turn")]
    SessionBusy(String),
    #[error("upstream LLM error: {0}")]
    Upstream(#[from] LlmError),
    #[error("prompt error: {0}")]
    Prompt(#[from] PromptError),
}

impl DialogueError {
    pub fn is_retryable(&self) -> bool {
        match self {
            DialogueError::Upstream(e) => e.is_retryable(),
            DialogueError::SessionBusy(_) => true,
            _ => false,
        }
    }
}

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringRules {
    pub identify_points: i64,
    pub polite_points: i64,
    pub insult_penalty: i64,
}

impl Default for ScoringRules {
    fn default() -> Self {
        Self {
            identify_points: 10,
            polite_points: 1,
            insult_penalty: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub history_window: usize,
    pub temperature: f64,
    pub scoring: ScoringRules,
    /// The bot turns doubtful once belief is within this margin of the
    /// concede threshold.
    pub doubtful_margin: f64,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            history_window: DEFAULT_HISTORY_WINDOW,
            temperature: DEFAULT_TEMPERATURE,
            scoring: ScoringRules::default(),
            doubtful_margin: 0.1,
        }
    }
}

// ── Pure rules ──────────────────────────────────────────────────────────

/// Exactly one branch applies, tested in order: correct identification,
/// polite contradiction or evidence, insult or hostile tone, no change.
pub fn update_belief(
    belief: f64,
    intent: IntentLabel,
    polarity: f64,
    correct_identification: bool,
    params: &BeliefParams,
) -> f64 {
    let next = if correct_identification {
        belief - params.delta_identified
    } else if matches!(
        intent,
        IntentLabel::Contradict | IntentLabel::ProvideEvidence
    ) && polarity >= POLITE_POLARITY
    {
        belief - params.delta_polite_contradiction
    } else if intent == IntentLabel::Insult || polarity < HOSTILE_POLARITY {
        belief + params.delta_insult_gain
    } else {
        belief
    };
    next.clamp(0.0, 1.0)
}

/// Components sum: identification points, a civility point for
/// non-negative polarity, and an insult penalty.
pub fn update_score(
    score: i64,
    intent: IntentLabel,
    polarity: f64,
    correct_identification: bool,
    rules: &ScoringRules,
) -> i64 {
    let mut next = score;
    if correct_identification {
        next += rules.identify_points;
    }
    if polarity >= 0.0 {
        next += rules.polite_points;
    }
    if intent == IntentLabel::Insult {
        next -= rules.insult_penalty;
    }
    next
}

/// Round-robin over the assigned techniques, continuing after the last one
/// used. Already identified techniques are skipped unless every technique
/// has been identified.
pub fn select_technique(persona: &Persona, session: &Session) -> String {
    let assigned = &persona.assigned_techniques;
    let unidentified: Vec<&String> = assigned
        .iter()
        .filter(|t| !session.identified.contains(*t))
        .collect();
    let candidates: HashSet<&String> = if unidentified.is_empty() {
        assigned.iter().collect()
    } else {
        unidentified.into_iter().collect()
    };
    if candidates.len() == 1 {
        return (*candidates.iter().next().unwrap()).clone();
    }
    let start = session
        .last_technique
        .as_ref()
        .and_then(|last| assigned.iter().position(|t| t == last))
        .map(|p| p + 1)
        .unwrap_or(0);
    (0..assigned.len())
        .map(|k| &assigned[(start + k) % assigned.len()])
        .find(|t| candidates.contains(t) && Some(*t) != session.last_technique.as_ref())
        .expect("at least two candidates exist")
        .clone()
}

/// All-identified takes precedence over persuasion.
pub fn check_success(session: &Session, persona: &Persona) -> SuccessReason {
    let all_identified = persona
        .assigned_techniques
        .iter()
        .all(|t| session.identified.contains(t));
    if all_identified {
        SuccessReason::AllIdentified
    } else if session.belief <= persona.belief_params.concede_threshold + BELIEF_EPSILON {
        SuccessReason::Persuaded
    } else {
        SuccessReason::Unmet
    }
}

pub fn next_mode(
    success: SuccessReason,
    belief: f64,
    intent: IntentLabel,
    params: &BeliefParams,
    doubtful_margin: f64,
) -> BehaviorMode {
    if success.is_success() {
        BehaviorMode::Conceding
    } else if belief <= params.concede_threshold + doubtful_margin + BELIEF_EPSILON {
        BehaviorMode::Doubtful
    } else if intent == IntentLabel::Contradict {
        BehaviorMode::Defensive
    } else {
        BehaviorMode::Default
    }
}

pub fn acknowledgment(technique_name: &str) -> String {
    format!("You got me — that was {technique_name}.")
}

// ── Per-session exclusion ───────────────────────────────────────────────

/// Tracks sessions with a turn in flight. Acquiring a busy session fails
/// immediately instead of waiting.
#[derive(Debug, Clone, Default)]
pub struct SessionLocks {
    busy: Arc<Mutex<HashSet<String>>>,
}

#[derive(Debug)]
pub struct SessionLockGuard {
    busy: Arc<Mutex<HashSet<String>>>,
    id: String,
}

impl SessionLocks {
    pub fn try_acquire(&self, session_id: &str) -> Result<SessionLockGuard, DialogueError> {
        let mut busy = self.busy.lock().expect("session lock set");
        if !busy.insert(session_id.to_string()) {
            return Err(DialogueError::SessionBusy(session_id.to_string()));
        }
        Ok(SessionLockGuard {
            busy: self.busy.clone(),
            id: session_id.to_string(),
        })
    }
}

impl Drop for SessionLockGuard {
    fn drop(&mut self) {
        if let Ok(mut busy) = self.busy.lock() {
            busy.remove(&self.id);
        }
    }
}

// ── Engine ──────────────────────────────────────────────────────────────

pub struct DialogueEngine {
    catalog: Arc<Catalog>,
    personas: BTreeMap<String, Arc<Persona>>,
    classifier: Arc<IntentClassifier>,
    lexicon: Arc<Lexicon>,
    gateway: Arc<dyn LlmGateway>,
    config: DialogueConfig,
}

impl DialogueEngine {
    pub fn new(
        catalog: Arc<Catalog>,
        personas: Vec<Persona>,
        classifier: Arc<IntentClassifier>,
        lexicon: Arc<Lexicon>,
        gateway: Arc<dyn LlmGateway>,
        config: DialogueConfig,
    ) -> Self {
        Self {
            catalog,
            personas: personas
                .into_iter()
                .map(|p| (p.id.clone(), Arc::new(p)))
                .collect(),
            classifier,
            lexicon,
            gateway,
            config,
        }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn config(&self) -> &DialogueConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<dyn LlmGateway> {
        &self.gateway
    }

    pub fn personas(&self) -> impl Iterator<Item = &Arc<Persona>> {
        self.personas.values()
    }

    pub fn persona(&self, id: &str) -> Result<&Arc<Persona>, DialogueError> {
        self.personas
            .get(id)
            .ok_or_else(|| DialogueError::NotFound {
                kind: "persona",
                id: id.to_string(),
            })
    }

    /// New active session whose first turn is the persona's opening line,
    /// argued with the first assigned technique.
    pub fn start_session(&self, persona_id: &str) -> Result<Session, DialogueError> {
        let persona = self.persona(persona_id)?;
        let opening_technique = persona.assigned_techniques[0].clone();
        let mut opening = Turn::plain(0, Role::Bot, persona.opening_line.clone());
        opening.technique_used = Some(opening_technique.clone());
        Ok(Session {
            id: Uuid::new_v4().to_string(),
            persona_id: persona.id.clone(),
            created_at: Utc::now(),
            turns: vec![opening],
            belief: persona.belief_params.initial_belief,
            score: 0,
            identified: BTreeSet::new(),
            mode: BehaviorMode::Default,
            status: SessionStatus::Active,
            last_technique: Some(opening_technique),
            outcome: None,
        })
    }

    /// Runs one trainee turn. On error `session` is left exactly as it was.
    pub fn process_turn(
        &self,
        session: &mut Session,
        user_text: &str,
    ) -> Result<BotResponse, DialogueError> {
        self.run_turn(session, user_text, None)
    }

    /// Explicit identification through the flag control. Scored exactly like
    /// naming the technique in chat and recorded as a synthetic
    /// `identify_fallacy` user turn.
    pub fn identify(
        &self,
        session: &mut Session,
        technique_id: &str,
    ) -> Result<BotResponse, DialogueError> {
        let technique =
            self.catalog
                .technique(technique_id)
                .ok_or_else(|| DialogueError::NotFound {
                    kind: "technique",
                    id: technique_id.to_string(),
                })?;
        let text = format!("[flagged: {}]", technique.name);
        let intent = IntentResult {
            label: IntentLabel::IdentifyFallacy,
            confidence: LEXICON_CONFIDENCE,
            mentioned_techniques: vec![technique.id.clone()],
        };
        self.run_turn(session, &text, Some(intent))
    }

    /// Ends an active session without success.
    pub fn abandon(&self, session: &mut Session) -> Result<(), DialogueError> {
        if session.status != SessionStatus::Active {
            return Err(DialogueError::SessionClosed(session.status));
        }
        session.status = SessionStatus::Abandoned;
        Ok(())
    }

    fn run_turn(
        &self,
        session: &mut Session,
        user_text: &str,
        intent_override: Option<IntentResult>,
    ) -> Result<BotResponse, DialogueError> {
        if session.status != SessionStatus::Active {
            return Err(DialogueError::SessionClosed(session.status));
        }
        let text = user_text.trim();
        if text.is_empty() {
            return Err(DialogueError::Validation("message text is empty".into()));
        }
        let persona = self.persona(&session.persona_id)?.clone();
        let params = persona.belief_params;
        let mut next = session.clone();

        let intent =
            intent_override.unwrap_or_else(|| self.classifier.classify(text, &self.catalog));
        let sentiment = self.lexicon.score(text);

        let correct = intent.label == IntentLabel::IdentifyFallacy
            && next.last_technique.as_ref().is_some_and(|last| {
                intent.mentioned_techniques.contains(last) && !next.identified.contains(last)
            });
        let newly_identified = if correct {
            let id = next.last_technique.clone().expect("checked above");
            next.identified.insert(id.clone());
            Some(id)
        } else {
            None
        };

        next.belief = update_belief(
            next.belief,
            intent.label,
            sentiment.polarity,
            correct,
            &params,
        );
        next.score = update_score(
            next.score,
            intent.label,
            sentiment.polarity,
            correct,
            &self.config.scoring,
        );
        let success = check_success(&next, &persona);
        next.mode = next_mode(
            success,
            next.belief,
            intent.label,
            &params,
            self.config.doubtful_margin,
        );

        let label = intent.label;
        next.turns.push(Turn {
            index: next.turns.len(),
            role: Role::User,
            text: text.to_string(),
            intent: Some(intent),
            sentiment: Some(sentiment),
            technique_used: None,
            timestamp: Utc::now(),
            belief_after: Some(next.belief),
            score_after: Some(next.score),
        });

        let ack = newly_identified.as_ref().map(|id| {
            let name = self
                .catalog
                .technique(id)
                .map(|t| t.name.as_str())
                .unwrap_or(id);
            acknowledgment(name)
        });
        let with_ack = |reply: String| match &ack {
            Some(a) => format!("{a} {reply}"),
            None => reply,
        };

        let (bot_text, technique_used) = if success.is_success() {
            let technique_id = next
                .last_technique
                .clone()
                .unwrap_or_else(|| persona.assigned_techniques[0].clone());
            let reply = self.generate(&persona, &next, BehaviorMode::Conceding, &technique_id)?;
            next.status = SessionStatus::Succeeded;
            next.outcome = Some(success);
            (with_ack(reply), None)
        } else if label == IntentLabel::Quit {
            next.status = SessionStatus::Abandoned;
            (with_ack(FAREWELL_REPLY.to_string()), None)
        } else {
            let technique_id = select_technique(&persona, &next);
            let reply = self.generate(&persona, &next, next.mode, &technique_id)?;
            next.last_technique = Some(technique_id.clone());
            (with_ack(reply), Some(technique_id))
        };

        let mut bot_turn = Turn::plain(next.turns.len(), Role::Bot, bot_text.clone());
        bot_turn.technique_used = technique_used;
        next.turns.push(bot_turn);

        let success_signal = next.status == SessionStatus::Succeeded;
        if success_signal {
            next.status = SessionStatus::Concluded;
        }

        let response = BotResponse {
            text: bot_text,
            session_status: next.status,
            score: next.score,
            newly_identified,
            success_signal,
            success_reason: next.outcome,
        };
        *session = next;
        Ok(response)
    }

    fn generate(
        &self,
        persona: &Persona,
        session: &Session,
        mode: BehaviorMode,
        technique_id: &str,
    ) -> Result<String, DialogueError> {
        let technique =
            self.catalog
                .technique(technique_id)
                .ok_or_else(|| DialogueError::NotFound {
                    kind: "technique",
                    id: technique_id.to_string(),
                })?;
        let spec = compose_prompt(
            persona,
            mode,
            technique,
            &session.turns,
            self.config.history_window,
        )?;
        let request = GenerationRequest {
            prompt: spec.rendered_text,
            max_tokens: spec.max_response_tokens,
            temperature: self.config.temperature,
            stop_sequences: spec.stop_sequences,
            context: Some(RequestContext {
                persona_id: persona.id.clone(),
                topic: persona.topic.clone(),
                technique_id: Some(technique.id.clone()),
                mode,
                bot_turn: session.bot_turn_count(),
            }),
        };
        let result = self.gateway.generate(&request)?;
        Ok(sanitize_response(&result.text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockGateway;
    use crate::persona::shipped_personas;
    use proptest::prelude::*;

    fn persona_with(assigned: &[&str]) -> Persona {
        let catalog = Catalog::shipped();
        let mut p = shipped_personas(&catalog)
            .unwrap()
            .into_iter()
            .find(|p| p.id == "evolution_denier")
            .unwrap();
        p.assigned_techniques = assigned.iter().map(|s| s.to_string()).collect();
        p
    }

    fn bare_session(last: Option<&str>, identified: &[&str]) -> Session {
        Session {
            id: "s".into(),
            persona_id: "evolution_denier".into(),
            created_at: Utc::now(),
            turns: vec![],
            belief: 0.9,
            score: 0,
            identified: identified.iter().map(|s| s.to_string()).collect(),
            mode: BehaviorMode::Default,
            status: SessionStatus::Active,
            last_technique: last.map(str::to_string),
            outcome: None,
        }
    }

    fn engine_with(gateway: Arc<dyn LlmGateway>) -> DialogueEngine {
        let catalog = Arc::new(Catalog::shipped());
        let personas = shipped_personas(&catalog).unwrap();
        DialogueEngine::new(
            catalog,
            personas,
            Arc::new(IntentClassifier::shipped()),
            Arc::new(Lexicon::shipped()),
            gateway,
            DialogueConfig::default(),
        )
    }

    fn engine() -> DialogueEngine {
        engine_with(Arc::new(MockGateway::new(Arc::new(Catalog::shipped()))))
    }

    #[test]
    fn belief_examples() {
        let d = BeliefParams::default();
        let b = update_belief(0.9, IntentLabel::Contradict, 0.0, true, &d);
        assert!((b - 0.75).abs() < 1e-12);
        assert_eq!(
            update_belief(0.0, IntentLabel::Contradict, 0.2, false, &d),
            0.0
        );
        assert_eq!(
            update_belief(0.95, IntentLabel::Insult, -0.8, false, &d),
            1.0
        );
        // Impolite contradiction falls through to the hostile branch.
        let b = update_belief(0.5, IntentLabel::Contradict, -0.6, false, &d);
        assert!((b - 0.6).abs() < 1e-12);
        assert_eq!(
            update_belief(0.5, IntentLabel::AskQuestion, 0.0, false, &d),
            0.5
        );
    }

    #[test]
    fn score_examples() {
        let r = ScoringRules::default();
        assert_eq!(
            update_score(0, IntentLabel::IdentifyFallacy, 0.3, true, &r),
            11
        );
        assert_eq!(update_score(0, IntentLabel::Insult, -0.9, false, &r), -5);
        assert_eq!(update_score(7, IntentLabel::Other, 0.0, false, &r), 8);
    }

    // Oracle: walk assigned techniques cyclically after `last`, skipping
    // identified ones and `last` itself when there is a choice.
    fn round_robin_oracle(assigned: &[&str], last: Option<&str>, identified: &[&str]) -> String {
        let mut pool: Vec<&str> = assigned
            .iter()
            .copied()
            .filter(|t| !identified.contains(t))
            .collect();
        if pool.is_empty() {
            pool = assigned.to_vec();
        }
        if pool.len() == 1 {
            return pool[0].to_string();
        }
        let start = last
            .and_then(|l| assigned.iter().position(|t| *t == l))
            .map_or(0, |p| p + 1);
        for k in 0..assigned.len() {
            let t = assigned[(start + k) % assigned.len()];
            if pool.contains(&t) && Some(t) != last {
                return t.to_string();
            }
        }
        unreachable!()
    }

    #[test]
    fn select_technique_examples() {
        let abc = ["quote_mining", "anecdote", "straw_man"];
        let p = persona_with(&abc);
        let s = bare_session(Some("quote_mining"), &[]);
        assert_eq!(select_technique(&p, &s), "anecdote");
        assert_eq!(
            round_robin_oracle(&abc, Some("quote_mining"), &[]),
            "anecdote"
        );

        let single = persona_with(&["quote_mining"]);
        assert_eq!(
            select_technique(
                &single,
                &bare_session(Some("quote_mining"), &["quote_mining"])
            ),
            "quote_mining"
        );

        let ab = persona_with(&["quote_mining", "anecdote"]);
        let s = bare_session(Some("anecdote"), &["quote_mining"]);
        assert_eq!(select_technique(&ab, &s), "anecdote");
    }

    proptest! {
        #[test]
        fn select_technique_matches_oracle(
            last in proptest::option::of(0usize..4),
            mask in 0u8..16,
        ) {
            let all = ["quote_mining", "anecdote", "straw_man", "red_herring"];
            let p = persona_with(&all);
            let identified: Vec<&str> = (0..4).filter(|i| mask & (1 << i) != 0).map(|i| all[i]).collect();
            let last = last.map(|i| all[i]);
            let s = bare_session(last, &identified);
            let got = select_technique(&p, &s);
            prop_assert_eq!(&got, &round_robin_oracle(&all, last, &identified));
            let remaining = all.iter().filter(|t| !identified.contains(t)).count();
            if remaining >= 2 {
                prop_assert!(Some(got.as_str()) != last);
                prop_assert!(!identified.contains(&got.as_str()));
            }
        }
    }

    #[test]
    fn check_success_examples() {
        let p = persona_with(&["quote_mining", "anecdote"]);
        let mut s = bare_session(None, &["quote_mining", "anecdote"]);
        s.belief = 0.1;
        assert_eq!(check_success(&s, &p), SuccessReason::AllIdentified);
        let s = bare_session(None, &[]);
        assert_eq!(check_success(&s, &p), SuccessReason::Unmet);
        let mut s = bare_session(None, &["quote_mining"]);
        s.belief = 0.15;
        assert_eq!(check_success(&s, &p), SuccessReason::Persuaded);
    }

    #[test]
    fn start_session_contract() {
        let e = engine();
        let a = e.start_session("evolution_denier").unwrap();
        let b = e.start_session("evolution_denier").unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(a.belief, 0.9);
        assert_eq!(a.score, 0);
        assert_eq!(a.status, SessionStatus::Active);
        assert_eq!(a.mode, BehaviorMode::Default);
        assert_eq!(a.turns.len(), 1);
        assert_eq!(a.turns[0].role, Role::Bot);
        assert_eq!(
            a.turns[0].technique_used.as_deref(),
            Some("magnified_minority")
        );
        assert!(matches!(
            e.start_session("x"),
            Err(DialogueError::NotFound {
                kind: "persona",
                ..
            })
        ));
    }

    #[test]
    fn polite_identification_of_last_technique() {
        let e = engine();
        let mut s = e.start_session("evolution_denier").unwrap();
        let r = e
            .process_turn(&mut s, "Please, that is a minority of scientists, thanks.")
            .unwrap();
        assert_eq!(r.newly_identified.as_deref(), Some("magnified_minority"));
        assert_eq!(r.score, 11);
        assert!((s.belief - 0.75).abs() < 1e-12);
        assert!(r
            .text
            .starts_with("You got me — that was Magnified minority. "));
        assert!(!r.success_signal);
        assert_eq!(s.turns.len(), 3);
        assert_eq!(
            s.turns[2].technique_used.as_deref(),
            Some("demand_for_certainty")
        );
    }

    #[test]
    fn naming_a_technique_not_just_used_scores_nothing_extra() {
        let e = engine();
        let mut s = e.start_session("evolution_denier").unwrap();
        let r = e.process_turn(&mut s, "That is quote mining.").unwrap();
        assert_eq!(r.newly_identified, None);
        assert_eq!(r.score, 1);
        assert!(s.identified.is_empty());
    }

    #[test]
    fn final_identification_concludes() {
        let e = engine();
        let mut s = e.start_session("evolution_denier").unwrap();
        s.identified.insert("demand_for_certainty".into());
        s.identified.insert("quote_mining".into());
        let r = e
            .process_turn(&mut s, "A tiny minority of scientists proves nothing")
            .unwrap();
        assert!(r.success_signal);
        assert_eq!(r.session_status, SessionStatus::Concluded);
        assert_eq!(r.success_reason, Some(SuccessReason::AllIdentified));
        assert_eq!(s.outcome, Some(SuccessReason::AllIdentified));
        assert!(r.text.contains("rethink"));
        assert_eq!(s.turns.last().unwrap().technique_used, None);
        assert!(matches!(
            e.process_turn(&mut s, "hello?"),
            Err(DialogueError::SessionClosed(SessionStatus::Concluded))
        ));
    }

    #[test]
    fn empty_text_rejected_without_change() {
        let e = engine();
        let mut s = e.start_session("evolution_denier").unwrap();
        let before = s.clone();
        assert!(matches!(
            e.process_turn(&mut s, "   "),
            Err(DialogueError::Validation(_))
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn gateway_failure_rolls_back() {
        let catalog = Arc::new(Catalog::shipped());
        let e = engine_with(Arc::new(MockGateway::with_script(catalog, ["only one"])));
        let mut s = e.start_session("evolution_denier").unwrap();
        e.process_turn(&mut s, "hello").unwrap();
        let before = s.clone();
        let err = e
            .process_turn(&mut s, "that's a tiny minority of scientists")
            .unwrap_err();
        assert!(matches!(
            err,
            DialogueError::Upstream(LlmError::ScriptExhausted)
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn quit_abandons() {
        let e = engine();
        let mut s = e.start_session("climate_denier").unwrap();
        let r = e.process_turn(&mut s, "goodbye").unwrap();
        assert_eq!(r.session_status, SessionStatus::Abandoned);
        assert!(!r.success_signal);
        assert_eq!(r.text, FAREWELL_REPLY);
    }

    #[test]
    fn explicit_identification_matches_chat_identification() {
        let e = engine();
        let mut chat = e.start_session("climate_denier").unwrap();
        let mut flag = e.start_session("climate_denier").unwrap();
        let a = e.process_turn(&mut chat, "that is cherry picking").unwrap();
        let b = e.identify(&mut flag, "cherry_picked_data").unwrap();
        assert_eq!(a.score, b.score);
        assert_eq!(a.newly_identified, b.newly_identified);
        let synthetic = &flag.turns[1];
        assert_eq!(
            synthetic.intent.as_ref().unwrap().label,
            IntentLabel::IdentifyFallacy
        );
        assert!(matches!(
            e.identify(&mut flag, "nope"),
            Err(DialogueError::NotFound {
                kind: "technique",
                ..
            })
        ));
    }

    #[test]
    fn modes_follow_intent_and_belief() {
        let d = BeliefParams::default();
        assert_eq!(
            next_mode(SuccessReason::Unmet, 0.9, IntentLabel::Contradict, &d, 0.1),
            BehaviorMode::Defensive
        );
        assert_eq!(
            next_mode(SuccessReason::Unmet, 0.3, IntentLabel::Contradict, &d, 0.1),
            BehaviorMode::Doubtful
        );
        assert_eq!(
            next_mode(SuccessReason::Persuaded, 0.2, IntentLabel::Other, &d, 0.1),
            BehaviorMode::Conceding
        );
        assert_eq!(
            next_mode(SuccessReason::Unmet, 0.9, IntentLabel::Greet, &d, 0.1),
            BehaviorMode::Default
        );
    }

    #[test]
    fn session_locks_are_exclusive() {
        let locks = SessionLocks::default();
        let g = locks.try_acquire("a").unwrap();
        assert!(matches!(
            locks.try_acquire("a"),
            Err(DialogueError::SessionBusy(_))
        ));
        assert!(locks.try_acquire("b").is_ok());
        drop(g);
        assert!(locks.try_acquire("a").is_ok());
    }

    fn intent_strategy() -> impl Strategy<Value = IntentLabel> {
        prop::sample::select(IntentLabel::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn belief_stays_in_unit_interval(
            steps in proptest::collection::vec((intent_strategy(), -1.0f64..=1.0, any::<bool>()), 0..300)
        ) {
            let d = BeliefParams::default();
            let mut b = d.initial_belief;
            for (intent, polarity, correct) in steps {
                b = update_belief(b, intent, polarity, correct, &d);
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }

        #[test]
        fn polite_pressure_never_raises_belief(
            steps in proptest::collection::vec(
                (prop::sample::select(vec![IntentLabel::Contradict, IntentLabel::ProvideEvidence]), -0.1f64..=1.0),
                0..200)
        ) {
            let d = BeliefParams::default();
            let mut b = d.initial_belief;
            for (intent, polarity) in steps {
                let next = update_belief(b, intent, polarity, false, &d);
                prop_assert!(next <= b);
                b = next;
            }
        }

        #[test]
        fn insults_never_lower_belief(
            polarities in proptest::collection::vec(-1.0f64..=1.0, 0..200)
        ) {
            let d = BeliefParams::default();
            let mut b = d.initial_belief;
            for polarity in polarities {
                let next = update_belief(b, IntentLabel::Insult, polarity, false, &d);
                prop_assert!(next >= b);
                b = next;
            }
        }
    }
}
