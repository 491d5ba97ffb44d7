//! Core of a conversational trainer for recognizing science-denial
//! argumentation techniques.
//!
//! A trainee argues with a simulated denier persona. Each turn is
//! classified, scored for tone, and fed into a belief model; the persona's
//! reply is generated by a language model from a prompt that depends on the
//! current behavior mode and the rhetorical technique chosen for the turn.

pub mod dialogue;
pub mod llm;
pub mod nlu;
pub mod persona;
pub mod prompting;
pub mod sentiment;
pub mod storage;
pub mod taxonomy;
pub mod text;

pub use dialogue::{
    BotResponse, DialogueConfig, DialogueEngine, DialogueError, Role, Session, SessionLocks,
    SessionStatus, SuccessReason, Turn,
};
pub use llm::{HttpCompletionClient, LlmConfig, LlmError, LlmGateway, MockGateway};
pub use nlu::{IntentClassifier, IntentLabel, IntentResult};
pub use persona::{BehaviorMode, Persona};
pub use sentiment::{Lexicon, SentimentScore};
pub use storage::FileStore;
pub use taxonomy::Catalog;
