use super::ast::{Expr, ExprKind, Func, Leaf, Var};
use super::{DiagnosticKind, ObjectiveProgram, ParseDiagnostic};

pub(crate) const SCALAR_RESULT_MESSAGE: &str =
    "per-input shape required: Expected loss shape to be per input (e.g. (10,)), got scalar";

/// Static length class of an expression: a scalar, or a vector of length
/// `k * N` for batch size `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
}

impl Shape {
    fn describe(self) -> String {
        match self {
            Shape::Scalar => "scalar".into(),
            Shape::Vector(1) => "N-vector".into(),
            Shape::Vector(k) => format!("{k}N-vector"),
        }
    }
}

/// Verifies arity, operand shapes and that the result is per-input
/// (length `N` or `2N`). Returns the result shape on success.
pub fn check_program(p: &ObjectiveProgram) -> Result<Shape, ParseDiagnostic> {
    let mut shapes = Vec::with_capacity(p.bindings.len());
    for b in &p.bindings {
        let s = shape_of(&b.expr, &shapes)?;
        shapes.push(s);
    }
    let result = shape_of(&p.result, &shapes)?;
    match result {
        Shape::Vector(1) | Shape::Vector(2) => Ok(result),
        Shape::Scalar => Err(ParseDiagnostic::new(
            p.result.span,
            DiagnosticKind::Type,
            SCALAR_RESULT_MESSAGE,
        )),
        Shape::Vector(k) => Err(ParseDiagnostic::new(
            p.result.span,
            DiagnosticKind::Type,
            format!("per-input shape required: result has length {k}N, expected N or 2N"),
        )),
    }
}

fn type_error(e: &Expr, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic::new(e.span, DiagnosticKind::Type, message)
}

fn broadcast(e: &Expr, what: &str, shapes: &[Shape]) -> Result<Shape, ParseDiagnostic> {
    let mut out = Shape::Scalar;
    for &s in shapes {
        out = match (out, s) {
            (Shape::Scalar, s) | (s, Shape::Scalar) => s,
            (Shape::Vector(a), Shape::Vector(b)) if a == b => s,
            (a, b) => {
                return Err(type_error(
                    e,
                    format!(
                        "length mismatch in {what}: {} vs {}",
                        a.describe(),
                        b.describe()
                    ),
                ))
            }
        };
    }
    Ok(out)
}

fn is_literal(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Number(_) => true,
        ExprKind::Neg(inner) => matches!(inner.kind, ExprKind::Number(_)),
        _ => false,
    }
}

fn shape_of(e: &Expr, bound: &[Shape]) -> Result<Shape, ParseDiagnostic> {
    match &e.kind {
        ExprKind::Number(_) => Ok(Shape::Scalar),
        ExprKind::Var(Var::Leaf(Leaf::Beta)) => Ok(Shape::Scalar),
        ExprKind::Var(Var::Leaf(_)) => Ok(Shape::Vector(1)),
        ExprKind::Var(Var::Bound(i)) => Ok(bound[*i]),
        ExprKind::Neg(inner) => shape_of(inner, bound),
        ExprKind::Binary(_, a, b) => {
            let sa = shape_of(a, bound)?;
            let sb = shape_of(b, bound)?;
            broadcast(e, "arithmetic", &[sa, sb])
        }
        ExprKind::Call(func, args) => {
            if args.len() != func.arity() {
                return Err(ParseDiagnostic::new(
                    e.span,
                    DiagnosticKind::Arity,
                    format!(
                        "`{}` takes {} argument{}, got {}",
                        func.name(),
                        func.arity(),
                        if func.arity() == 1 { "" } else { "s" },
                        args.len()
                    ),
                ));
            }
            let shapes = args
                .iter()
                .map(|a| shape_of(a, bound))
                .collect::<Result<Vec<_>, _>>()?;
            match func {
                Func::Mean | Func::Var | Func::Std => match shapes[0] {
                    Shape::Vector(_) => Ok(Shape::Scalar),
                    Shape::Scalar => Err(type_error(
                        e,
                        format!("`{}` needs a vector argument, got scalar", func.name()),
                    )),
                },
                Func::Pow => {
                    if !is_literal(&args[1]) {
                        return Err(type_error(
                            &args[1],
                            "`pow` exponent must be a numeric literal",
                        ));
                    }
                    Ok(shapes[0])
                }
                Func::Concat => match (shapes[0], shapes[1]) {
                    (Shape::Vector(a), Shape::Vector(b)) => Ok(Shape::Vector(a + b)),
                    _ => Err(type_error(e, "`concat` operands must be per-input vectors")),
                },
                _ => broadcast(e, func.name(), &shapes),
            }
        }
    }
}
