use crate::batch_math::{BatchVector, CompGraph, MathError, NodeId, OpCode, StatKind};
use crate::loss_catalog::{BatchLeaves, PreferenceBatch};

use super::ast::{BinOp, Expr, ExprKind, Func, Leaf, Var};
use super::{check_program, DslError, ObjectiveProgram};

/// Checks the program, then emits it into `g` over already registered batch
/// leaves and returns the result node.
pub fn build_program(
    p: &ObjectiveProgram,
    g: &mut CompGraph,
    leaves: &BatchLeaves,
    beta: f64,
) -> Result<NodeId, DslError> {
    check_program(p)?;
    let beta = g.scalar(beta);
    let env = Env {
        leaves,
        beta,
    };
    let mut bound = Vec::with_capacity(p.bindings.len());
    for b in &p.bindings {
        let id = env.emit(g, &b.expr, &bound)?;
        bound.push(id);
    }
    Ok(env.emit(g, &p.result, &bound)?)
}

struct Env<'a> {
    leaves: &'a BatchLeaves,
    beta: NodeId,
}

impl Env<'_> {
    fn emit(&self, g: &mut CompGraph, e: &Expr, bound: &[NodeId]) -> Result<NodeId, MathError> {
        match &e.kind {
            ExprKind::Number(v) => Ok(g.scalar(*v)),
            ExprKind::Var(Var::Leaf(leaf)) => Ok(match leaf {
                Leaf::PolicyChosen => self.leaves.pcl,
                Leaf::PolicyRejected => self.leaves.prl,
                Leaf::ReferenceChosen => self.leaves.rcl,
                Leaf::ReferenceRejected => self.leaves.rrl,
                Leaf::Beta => self.beta,
            }),
            ExprKind::Var(Var::Bound(i)) => Ok(bound[*i]),
            ExprKind::Neg(inner) => {
                let x = self.emit(g, inner, bound)?;
                g.neg(x)
            }
            ExprKind::Binary(op, a, b) => {
                let a = self.emit(g, a, bound)?;
                let b = self.emit(g, b, bound)?;
                match op {
                    BinOp::Add => g.add(a, b),
                    BinOp::Sub => g.sub(a, b),
                    BinOp::Mul => g.mul(a, b),
                    BinOp::Div => g.div(a, b),
                }
            }
            ExprKind::Call(Func::Pow, args) => {
                let x = self.emit(g, &args[0], bound)?;
                let exponent = literal_value(&args[1]).expect("checked: literal exponent");
                g.pow(x, exponent)
            }
            ExprKind::Call(func, args) => {
                let ids = args
                    .iter()
                    .map(|a| self.emit(g, a, bound))
                    .collect::<Result<Vec<_>, _>>()?;
                match func {
                    Func::Mean => g.reduce(StatKind::Mean, ids[0]),
                    Func::Var => g.reduce(StatKind::Variance, ids[0]),
                    Func::Std => g.reduce(StatKind::Std, ids[0]),
                    other => g.apply(op_code(*other), &ids),
                }
            }
        }
    }
}

fn literal_value(e: &Expr) -> Option<f64> {
    match &e.kind {
        ExprKind::Number(v) => Some(*v),
        ExprKind::Neg(inner) => literal_value(inner).map(|v| -v),
        _ => None,
    }
}

fn op_code(f: Func) -> OpCode {
    match f {
        Func::Exp => OpCode::Exp,
        Func::Log => OpCode::Log,
        Func::Log1p => OpCode::Log1p,
        Func::Sigmoid => OpCode::Sigmoid,
        Func::LogSigmoid => OpCode::LogSigmoid,
        Func::Relu => OpCode::Relu,
        Func::Abs => OpCode::Abs,
        Func::ClampMin => OpCode::ClampMin,
        Func::Min => OpCode::Min,
        Func::Max => OpCode::Max,
        Func::Where => OpCode::Where,
        Func::IndicatorLt => OpCode::IndicatorLt,
        Func::IndicatorGt => OpCode::IndicatorGt,
        Func::Concat => OpCode::Concat,
        Func::Pow | Func::Mean | Func::Var | Func::Std => {
            unreachable!("handled before op-code dispatch")
        }
    }
}

fn checked_build(
    p: &ObjectiveProgram,
    batch: &PreferenceBatch,
    beta: f64,
) -> Result<(CompGraph, NodeId), DslError> {
    let mut g = CompGraph::new();
    let leaves = batch.add_leaves(&mut g);
    let out = build_program(p, &mut g, &leaves, beta)?;
    let n = batch.len();
    match g.value(out).len() {
        Some(len) if len == n || len == 2 * n => {}
        len => return Err(DslError::Shape { len, n }),
    }
    Ok((g, out))
}

/// Per-example losses of a checked program (length `N` or `2N`).
pub fn eval_program(
    p: &ObjectiveProgram,
    batch: &PreferenceBatch,
    beta: f64,
) -> Result<BatchVector, DslError> {
    let (g, out) = checked_build(p, batch, beta)?;
    let v = g.value(out).as_vector().cloned().expect("checked vector result");
    match v.first_non_finite() {
        Some(index) => Err(DslError::FiniteViolation {
            index,
            value: v[index],
        }),
        None => Ok(v),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramGradient {
    pub pcl: BatchVector,
    pub prl: BatchVector,
}

/// Gradient of the mean of the result with respect to the policy
/// log-probabilities.
pub fn grad_program(
    p: &ObjectiveProgram,
    batch: &PreferenceBatch,
    beta: f64,
) -> Result<ProgramGradient, DslError> {
    let (mut g, out) = checked_build(p, batch, beta)?;
    let v = g.value(out).as_vector().expect("checked vector result");
    if let Some(index) = v.first_non_finite() {
        return Err(DslError::FiniteViolation {
            index,
            value: v[index],
        });
    }
    let mean = g.mean(out)?;
    let mut grads = g.gradient(mean, &["pcl", "prl"])?;
    let pcl = grads.remove("pcl").expect("requested leaf");
    let prl = grads.remove("prl").expect("requested leaf");
    for v in [&pcl, &prl] {
        if let Some(index) = v.first_non_finite() {
            return Err(DslError::FiniteViolation {
                index,
                value: v[index],
            });
        }
    }
    Ok(ProgramGradient { pcl, prl })
}
