use serde::{Deserialize, Serialize};

use super::ChatMessage;

const SYSTEM_TEMPLATE: &str = include_str!("../../data/system_prompt.txt");
const EXAMPLE_SLOT: &str = "{example_code}";
const REPLAY_EXAMPLE: &str = include_str!("../../data/replay/sigmoid_loss.py");
const DSL_REFERENCE: &str = include_str!("../../data/dsl_reference.txt");

const NEXT: &str = "Please generate the next one.";

/// Published burn-in listings and scores, used only to reproduce the
/// original prompt text.
const REPLAY_ENTRIES: [(&str, f64); 4] = [
    (include_str!("../../data/replay/logistic_log_loss.py"), 7.8875),
    (include_str!("../../data/replay/hinge_loss.py"), 7.88125),
    (include_str!("../../data/replay/ipo_loss.py"), 7.84),
    (include_str!("../../data/replay/kto_pair_loss.py"), 7.603125),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnInEntry {
    pub name: String,
    pub source: String,
    pub fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Original listings in the system example and burn-in entries.
    Replay,
    /// Objective-language sources, with a language reference appended to the
    /// system prompt.
    #[default]
    Dsl,
}

/// The published burn-in entries.
pub fn replay_burn_in() -> Vec<BurnInEntry> {
    REPLAY_ENTRIES
        .iter()
        .map(|(src, fitness)| BurnInEntry {
            name: src
                .trim_start_matches("def ")
                .split('(')
                .next()
                .unwrap_or_default()
                .to_owned(),
            source: (*src).to_owned(),
            fitness: *fitness,
        })
        .collect()
}

pub(crate) fn system_prompt(mode: ContextMode, dsl_example: &str) -> String {
    match mode {
        ContextMode::Replay => SYSTEM_TEMPLATE.replacen(EXAMPLE_SLOT, REPLAY_EXAMPLE, 1),
        ContextMode::Dsl => {
            let mut s = SYSTEM_TEMPLATE.replacen(EXAMPLE_SLOT, dsl_example.trim_end(), 1);
            s.push_str("\n\n");
            s.push_str(DSL_REFERENCE.trim_end());
            s
        }
    }
}

/// The first user message listing prior results.
pub(crate) fn results_message<'a>(entries: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let blocks: Vec<String> = entries
        .into_iter()
        .map(|(source, fitness)| {
            format!(
                "{{\n    \"code\": \"\n{}\n    \",\n    \"fitness\": {}\n}}",
                source.trim_end_matches('\n'),
                format_fitness(fitness)
            )
        })
        .collect();
    format!(
        "Here are some results we've obtained:\n\n[\n{}\n]\n\n{NEXT}",
        blocks.join(",\n")
    )
}

/// Shortest decimal that round-trips.
pub(crate) fn format_fitness(v: f64) -> String {
    format!("{v}")
}

/// System prompt plus the first user message. Returns `None` for an empty
/// burn-in list.
pub fn build_burn_in_context(
    burn_in: &[BurnInEntry],
    mode: ContextMode,
    dsl_example: &str,
) -> Option<Vec<ChatMessage>> {
    if burn_in.is_empty() {
        return None;
    }
    Some(vec![
        ChatMessage::system(system_prompt(mode, dsl_example)),
        ChatMessage::user(results_message(
            burn_in.iter().map(|e| (e.source.as_str(), e.fitness)),
        )),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Fitness(f64),
    Error(String),
}

pub fn feedback_message(outcome: &Outcome) -> ChatMessage {
    ChatMessage::user(match outcome {
        Outcome::Fitness(v) => format!("Fitness: {}.\n{NEXT}", format_fitness(*v)),
        Outcome::Error(e) => format!("Code not valid. Error:\n{e}\n{NEXT}"),
    })
}
