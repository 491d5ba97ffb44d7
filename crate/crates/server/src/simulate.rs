//! Scripted sessions for the `simulate` command.
//!
//! A script holds one trainee message per line; blank lines and lines
//! starting with `#` are ignored. The report leaves out ids and timestamps
//! so identical inputs produce byte-identical output.

use std::fmt::Write as _;

use denial_core::dialogue::{DialogueEngine, DialogueError, Session, SuccessReason};
use denial_core::prompting::script_line;

pub fn parse_script(source: &str) -> Vec<String> {
    source
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub session: Session,
    pub success_signals: usize,
    /// User turns processed before the session ended or the script ran out.
    pub turns_processed: usize,
    pub unused_lines: usize,
}

impl SimulationReport {
    pub fn outcome(&self) -> SuccessReason {
        self.session.outcome.unwrap_or(SuccessReason::Unmet)
    }

    pub fn succeeded(&self) -> bool {
        self.outcome().is_success()
    }

    pub fn render(&self) -> String {
        let s = &self.session;
        let mut out = String::new();
        let _ = writeln!(out, "persona: {}", s.persona_id);
        let _ = writeln!(out, "--- transcript ---");
        for turn in &s.turns {
            let _ = writeln!(out, "{}", script_line(turn));
        }
        let _ = writeln!(out, "--- final state ---");
        let _ = writeln!(out, "status: {}", s.status);
        let _ = writeln!(out, "reason: {}", self.outcome().as_str());
        let _ = writeln!(out, "score: {}", s.score);
        let _ = writeln!(out, "belief: {:.2}", s.belief);
        let identified: Vec<&str> = s.identified.iter().map(String::as_str).collect();
        let _ = writeln!(out, "identified: {}", identified.join(", "));
        let _ = writeln!(out, "user_turns: {}", self.turns_processed);
        let _ = writeln!(out, "success_signals: {}", self.success_signals);
        if self.unused_lines > 0 {
            let _ = writeln!(out, "unused_script_lines: {}", self.unused_lines);
        }
        let _ = writeln!(
            out,
            "{}",
            if self.succeeded() {
                "SUCCESS"
            } else {
                "NO SUCCESS"
            }
        );
        out
    }
}

pub fn run_simulation(
    engine: &DialogueEngine,
    persona_id: &str,
    lines: &[String],
) -> Result<SimulationReport, DialogueError> {
    let mut session = engine.start_session(persona_id)?;
    let mut success_signals = 0;
    let mut turns_processed = 0;
    for line in lines {
        if session.status.is_finished() {
            break;
        }
        let response = engine.process_turn(&mut session, line)?;
        turns_processed += 1;
        if response.success_signal {
            success_signals += 1;
        }
    }
    Ok(SimulationReport {
        session,
        success_signals,
        turns_processed,
        unused_lines: lines.len() - turns_processed,
    })
}
