//! A small, total expression language for candidate objectives.
//!
//! A program is a sequence of `let` bindings followed by one result
//! expression over the inputs `pcl`, `prl`, `rcl`, `rrl` (per-example
//! log-probabilities) and the scalar `beta`:
//!
//! ```text
//! let rho = (pcl - prl) - (rcl - rrl)
//! -logsigmoid(beta * rho)
//! ```
//!
//! There are no loops, user functions or I/O, so evaluation always halts.

mod ast;
mod builtins;
mod checker;
mod eval;
mod lexer;
mod parser;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch_math::{CompGraph, MathError, NodeId};
use crate::loss_catalog::{build_batch_loss, BatchLeaves, LossId, LossParams, Variant};

pub use ast::{BinOp, Binding, Expr, ExprKind, Func, Leaf, Var};
pub use builtins::builtin_source;
pub use checker::{check_program, Shape};
pub use eval::{build_program, eval_program, grad_program, ProgramGradient};
pub use parser::parse_program;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    Lex,
    Syntax,
    UnboundName,
    Arity,
    Type,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::Lex => "lex",
            DiagnosticKind::Syntax => "syntax",
            DiagnosticKind::UnboundName => "unbound-name",
            DiagnosticKind::Arity => "arity",
            DiagnosticKind::Type => "type",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} error at {line}:{column}: {message}", kind.as_str())]
pub struct ParseDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub kind: DiagnosticKind,
}

impl ParseDiagnostic {
    pub(crate) fn new(span: Span, kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Self {
            line: span.line,
            column: span.column,
            message: message.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error(transparent)]
    Diagnostic(#[from] ParseDiagnostic),
    #[error("non-finite value {value} at element {index}")]
    FiniteViolation { index: usize, value: f64 },
    #[error("result length {len:?} is neither N nor 2N for N = {n}")]
    Shape { len: Option<usize>, n: usize },
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// A parsed program. Bindings are in source order; names are unique and
/// each is bound before use.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveProgram {
    pub bindings: Vec<Binding>,
    pub result: Expr,
    pub source: String,
}

impl ObjectiveProgram {
    /// Canonical text: one binding per line, minimal parentheses, comments
    /// dropped.
    pub fn render(&self) -> String {
        let r = ast::Renderer {
            names: &self.bindings,
        };
        let mut out = String::new();
        for b in &self.bindings {
            out.push_str("let ");
            out.push_str(&b.name);
            out.push_str(" = ");
            r.expr(&b.expr, &mut out).expect("writing to a String");
            out.push('\n');
        }
        r.expr(&self.result, &mut out).expect("writing to a String");
        out.push('\n');
        out
    }

    /// Number of AST nodes across bindings and result.
    pub fn size(&self) -> usize {
        let mut n = 0;
        for e in self.bindings.iter().map(|b| &b.expr).chain([&self.result]) {
            e.walk(&mut |_| n += 1);
        }
        n
    }
}

impl fmt::Display for ObjectiveProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Something the trainer can minimize: a catalog loss or a checked program.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Catalog { id: LossId, variant: Variant },
    Program { name: String, program: Arc<ObjectiveProgram> },
}

impl Objective {
    pub fn catalog(id: LossId) -> Self {
        Objective::Catalog {
            id,
            variant: Variant::default(),
        }
    }

    /// Parses and checks `source`.
    pub fn from_source(name: impl Into<String>, source: &str) -> Result<Self, ParseDiagnostic> {
        let program = parse_program(source)?;
        check_program(&program)?;
        Ok(Objective::Program {
            name: name.into(),
            program: Arc::new(program),
        })
    }

    pub fn name(&self) -> String {
        match self {
            Objective::Catalog { id, .. } => id.to_string(),
            Objective::Program { name, .. } => name.clone(),
        }
    }

    /// `as_discovered` / `beta_corrected` for catalog losses, `program`
    /// otherwise.
    pub fn variant_label(&self) -> &'static str {
        match self {
            Objective::Catalog { variant, .. } => variant.as_str(),
            Objective::Program { .. } => "program",
        }
    }

    /// Emits the per-example loss vector into `g`.
    pub fn build(
        &self,
        g: &mut CompGraph,
        leaves: &BatchLeaves,
        beta: f64,
    ) -> Result<NodeId, DslError> {
        match self {
            Objective::Catalog { id, variant } => {
                let params =
                    LossParams::new(beta, *variant).map_err(|_| DslError::InvalidBeta(beta))?;
                Ok(build_batch_loss(g, *id, &params, leaves)?)
            }
            Objective::Program { program, .. } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(DslError::InvalidBeta(beta));
                }
                build_program(program, g, leaves, beta)
            }
        }
    }
}
