//! Per-session event fan-out for the server-sent event stream.
//!
//! Publishing waits until every subscribed stream has taken the event (or a
//! short deadline passes), so a success event is on the wire no later than
//! the HTTP response of the turn that caused it.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc};

use denial_core::dialogue::{Session, SessionStatus, SuccessReason};

pub const DELIVERY_DEADLINE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Success,
    Concluded,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Success => "success",
            EventKind::Concluded => "concluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    pub session_id: String,
    pub status: SessionStatus,
    pub score: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<SuccessReason>,
}

#[derive(Debug, Clone)]
pub struct SessionEvent {
    pub kind: EventKind,
    pub payload: EventPayload,
    ack: Option<mpsc::UnboundedSender<()>>,
}

impl SessionEvent {
    /// Signals the publisher that this event has been handed to the stream.
    pub fn acknowledge(&self) {
        if let Some(ack) = &self.ack {
            let _ = ack.send(());
        }
    }
}

/// Events describing how `session` ended, in delivery order. Empty while
/// the session is active.
pub fn terminal_events(session: &Session) -> Vec<(EventKind, EventPayload)> {
    let payload = EventPayload {
        session_id: session.id.clone(),
        status: session.status,
        score: session.score,
        reason: session.outcome,
    };
    let mut out = Vec::new();
    if session.outcome.is_some_and(SuccessReason::is_success) {
        out.push((EventKind::Success, payload.clone()));
    }
    if session.status.is_finished() {
        out.push((EventKind::Concluded, payload));
    }
    out
}

#[derive(Debug, Default)]
pub struct EventHub {
    channels: Mutex<HashMap<String, broadcast::Sender<SessionEvent>>>,
}

impl EventHub {
    pub fn subscribe(&self, session_id: &str) -> broadcast::Receiver<SessionEvent> {
        let mut channels = self.channels.lock().expect("event hub lock");
        channels
            .entry(session_id.to_string())
            .or_insert_with(|| broadcast::channel(16).0)
            .subscribe()
    }

    /// Sends each event to current subscribers and waits for them to take
    /// it. Channels of finished sessions are dropped afterwards.
    pub async fn publish(&self, session_id: &str, events: Vec<(EventKind, EventPayload)>) {
        if events.is_empty() {
            return;
        }
        let sender = {
            let channels = self.channels.lock().expect("event hub lock");
            channels.get(session_id).cloned()
        };
        if let Some(sender) = sender {
            for (kind, payload) in events {
                let (ack_tx, mut ack_rx) = mpsc::unbounded_channel();
                let event = SessionEvent {
                    kind,
                    payload,
                    ack: Some(ack_tx),
                };
                let Ok(receivers) = sender.send(event) else {
                    break;
                };
                let wait = async {
                    for _ in 0..receivers {
                        if ack_rx.recv().await.is_none() {
                            break;
                        }
                    }
                };
                let _ = tokio::time::timeout(DELIVERY_DEADLINE, wait).await;
            }
        }
        self.channels
            .lock()
            .expect("event hub lock")
            .remove(session_id);
    }
}
