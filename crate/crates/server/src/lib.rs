//! HTTP/SSE service and operator tooling for the denial training chatbot.

pub mod api;
pub mod config;
pub mod error;
pub mod events;
pub mod simulate;

pub use api::{router, AppState, ServerOptions};
pub use error::{ApiError, ErrorCode};
