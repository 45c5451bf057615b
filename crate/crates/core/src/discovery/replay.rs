use serde::Serialize;

use super::candidate::parse_candidate;
use super::prompts::{feedback_message, Outcome};

/// A published discovery transcript: alternating model proposals and
/// feedback messages separated by `==========` lines.
pub const RUN_LOG: &str = include_str!("../../data/run_log.txt");

const SEPARATOR: &str = "==========";
const FITNESS_PREFIX: &str = "Fitness: ";
const ERROR_PREFIX: &str = "Code not valid. Error:\n";
const NEXT_SUFFIX: &str = "\nPlease generate the next one.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunLogEntry {
    pub thought: String,
    pub name: String,
    pub code: String,
    /// The user message that answered this proposal.
    pub feedback: String,
}

fn parse_proposal(block: &str) -> Option<(String, String, String)> {
    let rest = block.strip_prefix("thought\n")?;
    let (thought, rest) = rest.split_once("\nname\n")?;
    let (name, code) = rest.split_once("\ncode\n")?;
    Some((thought.to_owned(), name.to_owned(), code.to_owned()))
}

/// Splits a transcript into proposal/feedback pairs. Returns `None` if the
/// layout is not recognized.
pub fn parse_run_log(text: &str) -> Option<Vec<RunLogEntry>> {
    let body = text.strip_prefix(SEPARATOR)?.strip_prefix('\n')?;
    let body = body.strip_suffix('\n').unwrap_or(body);
    let segments: Vec<&str> = body.split(&format!("\n{SEPARATOR}\n")).collect();
    if !segments.len().is_multiple_of(2) {
        return None;
    }
    segments
        .chunks(2)
        .map(|pair| {
            let (thought, name, code) = parse_proposal(pair[0])?;
            Some(RunLogEntry { thought, name, code, feedback: pair[1].to_owned() })
        })
        .collect()
}

/// The outcome a logged feedback message reports.
fn logged_outcome(feedback: &str) -> Option<Outcome> {
    let body = feedback.strip_suffix(NEXT_SUFFIX)?;
    if let Some(v) = body.strip_prefix(FITNESS_PREFIX) {
        return v.strip_suffix('.')?.parse().ok().map(Outcome::Fitness);
    }
    body.strip_prefix(ERROR_PREFIX).map(|e| Outcome::Error(e.to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub entries: usize,
    /// Names recovered by the candidate parser, in order.
    pub parsed_names: Vec<String>,
    pub name_mismatches: Vec<usize>,
    /// Entries whose regenerated feedback differs from the log.
    pub feedback_mismatches: Vec<usize>,
    pub fitness_messages: usize,
    pub error_messages: usize,
}

impl ReplayReport {
    pub fn is_faithful(&self) -> bool {
        self.entries > 0 && self.name_mismatches.is_empty() && self.feedback_mismatches.is_empty()
    }
}

/// Feeds each logged proposal, re-encoded as the JSON a model would send,
/// through the candidate parser, and regenerates each feedback message from
/// its logged outcome.
pub fn check_replay(entries: &[RunLogEntry]) -> ReplayReport {
    let mut report = ReplayReport {
        entries: entries.len(),
        parsed_names: Vec::with_capacity(entries.len()),
        name_mismatches: Vec::new(),
        feedback_mismatches: Vec::new(),
        fitness_messages: 0,
        error_messages: 0,
    };
    for (i, e) in entries.iter().enumerate() {
        let response = format!(
            "{{\n    \"thought\": {},\n    \"name\": {},\n    \"code\": {}\n}}",
            serde_json::Value::from(e.thought.as_str()),
            serde_json::Value::from(e.name.as_str()),
            serde_json::Value::from(e.code.as_str()),
        );
        match parse_candidate(&response) {
            Ok(c) => {
                if c.name != e.name {
                    report.name_mismatches.push(i);
                }
                report.parsed_names.push(c.name);
            }
            Err(_) => {
                report.name_mismatches.push(i);
                report.parsed_names.push(String::new());
            }
        }
        match logged_outcome(&e.feedback) {
            Some(outcome) => {
                match outcome {
                    Outcome::Fitness(_) => report.fitness_messages += 1,
                    Outcome::Error(_) => report.error_messages += 1,
                }
                if feedback_message(&outcome).content != e.feedback {
                    report.feedback_mismatches.push(i);
                }
            }
            None => report.feedback_mismatches.push(i),
        }
    }
    report
}
