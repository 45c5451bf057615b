use serde_json::Value;
use thiserror::Error;

use crate::loss_catalog::PreferenceBatch;
use crate::objective_dsl::{check_program, eval_program, grad_program, parse_program, ObjectiveProgram};
use crate::preference_sim::SimRng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCandidate {
    pub thought: String,
    pub name: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ParseFailure(pub String);

const KEYS: [&str; 3] = ["thought", "name", "code"];

/// End offset (exclusive) of the balanced object starting at `start`.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Escapes raw control characters inside string literals, which chat models
/// often emit in multi-line code values.
fn escape_raw_controls(object: &str) -> String {
    let mut out = String::with_capacity(object.len());
    let mut in_string = false;
    let mut escaped = false;
    for c in object.chars() {
        if in_string {
            match c {
                _ if escaped => {
                    escaped = false;
                    out.push(c);
                }
                '\\' => {
                    escaped = true;
                    out.push(c);
                }
                '"' => {
                    in_string = false;
                    out.push(c);
                }
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                '\t' => out.push_str("\\t"),
                c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
                c => out.push(c),
            }
        } else {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
        }
    }
    out
}

fn parse_object(slice: &str) -> Option<serde_json::Map<String, Value>> {
    let parsed = serde_json::from_str::<Value>(slice)
        .ok()
        .or_else(|| serde_json::from_str::<Value>(&escape_raw_controls(slice)).ok())?;
    match parsed {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

/// Extracts `thought`, `name` and `code` from the first balanced JSON object
/// in `response`. Surrounding prose and code fences are ignored.
pub fn parse_candidate(response: &str) -> Result<ParsedCandidate, ParseFailure> {
    let mut object = None;
    let mut saw_balanced = false;
    for (start, _) in response.match_indices('{') {
        let Some(end) = balanced_end(response, start) else {
            continue;
        };
        saw_balanced = true;
        if let Some(map) = parse_object(&response[start..end]) {
            object = Some(map);
            break;
        }
    }
    let map = object.ok_or_else(|| {
        ParseFailure(if saw_balanced {
            "response contains no valid JSON object".into()
        } else {
            "response contains no balanced JSON object".into()
        })
    })?;
    let mut fields = KEYS.iter().map(|k| match map.get(*k) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseFailure(format!("key \"{k}\" must be a string"))),
        None => Err(ParseFailure(format!("missing key \"{k}\""))),
    });
    let thought = fields.next().expect("three keys")?;
    let name = fields.next().expect("three keys")?;
    let code = fields.next().expect("three keys")?;
    Ok(ParsedCandidate { thought, name, code })
}

/// A seeded batch of plausible log-probabilities for validation.
pub(crate) fn probe_batch(n: usize, seed: u64) -> PreferenceBatch {
    let mut rng = SimRng::new(seed);
    let n = n.max(1);
    let (mut pcl, mut prl, mut rcl, mut rrl) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let c = -3.0 + rng.normal();
        let r = -3.0 + rng.normal();
        rcl.push(c);
        rrl.push(r);
        pcl.push(c + 0.5 * rng.normal());
        prl.push(r + 0.5 * rng.normal());
    }
    PreferenceBatch::new(pcl, prl, rcl, rrl).expect("finite probe")
}

/// Parses, checks, evaluates and differentiates `source` on a seeded probe
/// batch of `n_probe` pairs at `beta`. The first failure is returned as the
/// text fed back to the model.
pub fn validate_candidate(
    source: &str,
    n_probe: usize,
    seed: u64,
    beta: f64,
) -> Result<ObjectiveProgram, String> {
    let program = parse_program(source).map_err(|d| d.to_string())?;
    check_program(&program).map_err(|d| d.to_string())?;
    let batch = probe_batch(n_probe, seed);
    eval_program(&program, &batch, beta).map_err(|e| e.to_string())?;
    grad_program(&program, &batch, beta).map_err(|e| format!("gradient: {e}"))?;
    Ok(program)
}
