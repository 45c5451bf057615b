//! Batched scalar arithmetic with reductions and reverse-mode differentiation.
//!
//! Every quantity is either a scalar or a [`BatchVector`] of per-example
//! values. Binary operations broadcast scalars against vectors. A
//! [`CompGraph`] records operations eagerly (each node caches its forward
//! value) so that [`CompGraph::gradient`] can run a single reverse sweep.
//!
//! All sums are left-to-right folds so results are bit-reproducible.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{op} expects {expected} operand(s), got {got}")]
    Arity {
        op: OpCode,
        expected: usize,
        got: usize,
    },
    #[error("batch vectors must hold at least one element")]
    Empty,
    #[error("{0} reduces a vector, got a scalar")]
    ScalarReduction(&'static str),
    #[error("non-finite evaluation at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },
    #[error("unknown leaf `{0}`")]
    UnknownLeaf(String),
    #[error("gradient output must be a node of this graph")]
    UnknownNode,
}

/// Ordered per-example values; length fixed at creation and at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchVector(Vec<f64>);

impl BatchVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MathError> {
        if values.is_empty() {
            return Err(MathError::Empty);
        }
        Ok(Self(values))
    }

    pub fn filled(len: usize, value: f64) -> Result<Self, MathError> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

impl std::ops::Index<usize> for BatchVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for BatchVector {
    type Error = MathError;
    fn try_from(v: Vec<f64>) -> Result<Self, MathError> {
        Self::new(v)
    }
}

/// A node value: either a broadcastable scalar or a vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(BatchVector),
}

impl Value {
    pub fn len(&self) -> Option<usize> {
        match self {
            Value::Scalar(_) => None,
            Value::Vector(v) => Some(v.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(s) => Some(*s),
            Value::Vector(_) => None,
        }
    }

    pub fn as_vector(&self) -> Option<&BatchVector> {
        match self {
            Value::Scalar(_) => None,
            Value::Vector(v) => Some(v),
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            Value::Scalar(s) => *s,
            Value::Vector(v) => v.0[i],
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        match self {
            Value::Scalar(s) => vec![*s],
            Value::Vector(v) => v.0.clone(),
        }
    }
}

impl From<f64> for Value {
    fn from(s: f64) -> Self {
        Value::Scalar(s)
    }
}

impl From<BatchVector> for Value {
    fn from(v: BatchVector) -> Self {
        Value::Vector(v)
    }
}

/// Elementwise operation codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpCode {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Log1p,
    Sigmoid,
    LogSigmoid,
    Relu,
    Abs,
    /// Power with a fixed real exponent.
    Pow(f64),
    /// `max(x, bound)`; gradient flows to `x` only where `x > bound`.
    ClampMin,
    Min,
    Max,
    /// `1` where `a < b`, else `0`.
    IndicatorLt,
    /// `1` where `a > b`, else `0`.
    IndicatorGt,
    /// `where(cond, a, b)`: `a` where `cond != 0`, else `b`.
    Where,
    Concat,
}

impl OpCode {
    pub fn arity(self) -> usize {
        use OpCode::*;
        match self {
            Neg | Exp | Log | Log1p | Sigmoid | LogSigmoid | Relu | Abs | Pow(_) => 1,
            Add | Sub | Mul | Div | ClampMin | Min | Max | IndicatorLt | IndicatorGt | Concat => 2,
            Where => 3,
        }
    }

    pub fn name(self) -> &'static str {
        use OpCode::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            Neg => "neg",
            Exp => "exp",
            Log => "log",
            Log1p => "log1p",
            Sigmoid => "sigmoid",
            LogSigmoid => "logsigmoid",
            Relu => "relu",
            Abs => "abs",
            Pow(_) => "pow",
            ClampMin => "clamp_min",
            Min => "min",
            Max => "max",
            IndicatorLt => "indicator_lt",
            IndicatorGt => "indicator_gt",
            Where => "where",
            Concat => "concat",
        }
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` in the branch form `min(0, x) - log1p(exp(-|x|))`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn unary(op: OpCode, x: f64) -> f64 {
    match op {
        OpCode::Neg => -x,
        OpCode::Exp => x.exp(),
        OpCode::Log => x.ln(),
        OpCode::Log1p => x.ln_1p(),
        OpCode::Sigmoid => sigmoid(x),
        OpCode::LogSigmoid => log_sigmoid(x),
        OpCode::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        OpCode::Abs => x.abs(),
        OpCode::Pow(p) => x.powf(p),
        _ => unreachable!("not a unary op"),
    }
}

fn binary(op: OpCode, a: f64, b: f64) -> f64 {
    match op {
        OpCode::Add => a + b,
        OpCode::Sub => a - b,
        OpCode::Mul => a * b,
        OpCode::Div => a / b,
        OpCode::ClampMin | OpCode::Max => {
            if a >= b || a.is_nan() {
                a
            } else {
                b
            }
        }
        OpCode::Min => {
            if a <= b || a.is_nan() {
                a
            } else {
                b
            }
        }
        OpCode::IndicatorLt => f64::from(u8::from(a < b)),
        OpCode::IndicatorGt => f64::from(u8::from(a > b)),
        _ => unreachable!("not a binary op"),
    }
}

/// Output length of a broadcast over `args`, `None` when all are scalars.
fn broadcast_len(args: &[&Value]) -> Result<Option<usize>, MathError> {
    let mut len: Option<usize> = None;
    for a in args {
        if let Some(n) = a.len() {
            match len {
                None => len = Some(n),
                Some(m) if m != n => return Err(MathError::LengthMismatch { left: m, right: n }),
                _ => {}
            }
        }
    }
    Ok(len)
}

/// Applies an elementwise operation, broadcasting scalar operands.
pub fn apply_op(op: OpCode, args: &[&Value]) -> Result<Value, MathError> {
    if args.len() != op.arity() {
        return Err(MathError::Arity {
            op,
            expected: op.arity(),
            got: args.len(),
        });
    }
    if op == OpCode::Concat {
        let mut out = args[0].to_vec();
        out.extend(args[1].to_vec());
        return Ok(Value::Vector(BatchVector(out)));
    }
    let len = broadcast_len(args)?;
    let eval = |i: usize| -> f64 {
        match op.arity() {
            1 => unary(op, args[0].get(i)),
            2 => binary(op, args[0].get(i), args[1].get(i)),
            _ => {
                if args[0].get(i) != 0.0 {
                    args[1].get(i)
                } else {
                    args[2].get(i)
                }
            }
        }
    };
    Ok(match len {
        None => Value::Scalar(eval(0)),
        Some(n) => Value::Vector(BatchVector((0..n).map(eval).collect())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatKind {
    Mean,
    Variance,
    Std,
}

impl StatKind {
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::Variance => "var",
            StatKind::Std => "std",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStat {
    pub value: f64,
    pub kind: StatKind,
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |acc, x| acc + x) / xs.len() as f64
}

/// Unbiased sample variance; a single element has variance 0.
fn variance_of(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean_of(xs);
    xs.iter().fold(0.0, |acc, x| acc + (x - m) * (x - m)) / (xs.len() - 1) as f64
}

/// Mean, unbiased sample variance (divisor N-1) or its square root.
pub fn reduce(kind: StatKind, a: &BatchVector) -> ScalarStat {
    let value = match kind {
        StatKind::Mean => mean_of(&a.0),
        StatKind::Variance => variance_of(&a.0),
        StatKind::Std => variance_of(&a.0).sqrt(),
    };
    ScalarStat { value, kind }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf(String),
    Constant,
    Apply(OpCode),
    Reduce(StatKind),
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    operands: Vec<NodeId>,
    value: Value,
}

/// A tape of operations in topological order with cached forward values.
#[derive(Debug, Clone, Default)]
pub struct CompGraph {
    nodes: Vec<Node>,
}

impl CompGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, kind: NodeKind, operands: Vec<NodeId>, value: Value) -> NodeId {
        self.nodes.push(Node {
            kind,
            operands,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a named vector input.
    pub fn leaf(&mut self, name: &str, values: BatchVector) -> NodeId {
        self.push(NodeKind::Leaf(name.to_owned()), Vec::new(), Value::Vector(values))
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(NodeKind::Constant, Vec::new(), Value::Scalar(value))
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn apply(&mut self, op: OpCode, operands: &[NodeId]) -> Result<NodeId, MathError> {
        let args: Vec<&Value> = operands.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = apply_op(op, &args)?;
        Ok(self.push(NodeKind::Apply(op), operands.to_vec(), value))
    }

    pub fn reduce(&mut self, kind: StatKind, a: NodeId) -> Result<NodeId, MathError> {
        let value = match &self.nodes[a.0].value {
            Value::Vector(v) => reduce(kind, v).value,
            Value::Scalar(_) => return Err(MathError::ScalarReduction(kind.name())),
        };
        Ok(self.push(NodeKind::Reduce(kind), vec![a], Value::Scalar(value)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Div, &[a, b])
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Neg, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Exp, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Sigmoid, &[a])
    }
    pub fn logsigmoid(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::LogSigmoid, &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Relu, &[a])
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Abs, &[a])
    }
    pub fn pow(&mut self, a: NodeId, exponent: f64) -> Result<NodeId, MathError> {
        self.apply(OpCode::Pow(exponent), &[a])
    }
    pub fn clamp_min(&mut self, a: NodeId, bound: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::ClampMin, &[a, bound])
    }
    pub fn indicator_lt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::IndicatorLt, &[a, b])
    }
    pub fn indicator_gt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::IndicatorGt, &[a, b])
    }
    pub fn select(&mut self, cond: NodeId, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Where, &[cond, a, b])
    }
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.apply(OpCode::Concat, &[a, b])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.reduce(StatKind::Mean, a)
    }
    pub fn var(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.reduce(StatKind::Variance, a)
    }
    pub fn std(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.reduce(StatKind::Std, a)
    }

    /// Gradient of the sum of `output` with respect to the named leaves.
    ///
    /// Kinks use the zero subgradient: `relu'(0) = abs'(0) = 0`, indicators
    /// and `where` conditions carry no gradient.
    pub fn gradient(
        &self,
        output: NodeId,
        wrt: &[&str],
    ) -> Result<BTreeMap<String, BatchVector>, MathError> {
        if output.0 >= self.nodes.len() {
            return Err(MathError::UnknownNode);
        }
        let mut leaves = BTreeMap::new();
        for name in wrt {
            let id = self
                .nodes
                .iter()
                .position(|n| matches!(&n.kind, NodeKind::Leaf(l) if l == name))
                .ok_or_else(|| MathError::UnknownLeaf((*name).to_owned()))?;
            leaves.insert((*name).to_owned(), id);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.len().unwrap_or(1)]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.kind {
                NodeKind::Leaf(_) | NodeKind::Constant => {
                    grads[idx] = Some(g);
                }
                NodeKind::Reduce(kind) => {
                    let x = node.operands[0];
                    let xs = self.nodes[x.0].value.to_vec();
                    let n = xs.len();
                    let local: Vec<f64> = match kind {
                        StatKind::Mean => vec![g[0] / n as f64; n],
                        StatKind::Variance | StatKind::Std if n < 2 => vec![0.0; n],
                        StatKind::Variance => {
                            let m = mean_of(&xs);
                            let d = (n - 1) as f64;
                            xs.iter().map(|x| g[0] * 2.0 * (x - m) / d).collect()
                        }
                        StatKind::Std => {
                            let m = mean_of(&xs);
                            let d = (n - 1) as f64;
                            let s = node.value.get(0);
                            if s > 0.0 {
                                xs.iter().map(|x| g[0] * (x - m) / (d * s)).collect()
                            } else {
                                vec![0.0; n]
                            }
                        }
                    };
                    accumulate(&mut grads, x, &self.nodes[x.0].value, local);
                }
                NodeKind::Apply(op) => self.backprop_apply(*op, node, &g, &mut grads),
            }
        }

        Ok(leaves
            .into_iter()
            .map(|(name, id)| {
                let n = self.nodes[id].value.len().unwrap_or(1);
                let g = grads[id].take().unwrap_or_else(|| vec![0.0; n]);
                (name, BatchVector(g))
            })
            .collect())
    }

    fn backprop_apply(&self, op: OpCode, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let ops = &node.operands;
        let val = |k: usize| &self.nodes[ops[k].0].value;
        let out = &node.value;
        let n = g.len();
        let push = |grads: &mut [Option<Vec<f64>>], k: usize, local: Vec<f64>| {
            accumulate(grads, ops[k], &self.nodes[ops[k].0].value, local);
        };
        match op {
            OpCode::Add => {
                push(grads, 0, g.to_vec());
                push(grads, 1, g.to_vec());
            }
            OpCode::Sub => {
                push(grads, 0, g.to_vec());
                push(grads, 1, g.iter().map(|v| -v).collect());
            }
            OpCode::Mul => {
                let (a, b) = (val(0), val(1));
                push(grads, 0, (0..n).map(|i| g[i] * b.get(i)).collect());
                push(grads, 1, (0..n).map(|i| g[i] * a.get(i)).collect());
            }
            OpCode::Div => {
                let (a, b) = (val(0), val(1));
                push(grads, 0, (0..n).map(|i| g[i] / b.get(i)).collect());
                push(
                    grads,
                    1,
                    (0..n)
                        .map(|i| -g[i] * a.get(i) / (b.get(i) * b.get(i)))
                        .collect(),
                );
            }
            OpCode::Concat => {
                let split = val(0).len().unwrap_or(1);
                push(grads, 0, g[..split].to_vec());
                push(grads, 1, g[split..].to_vec());
            }
            OpCode::Where => {
                let c = val(0);
                push(
                    grads,
                    1,
                    (0..n).map(|i| if c.get(i) != 0.0 { g[i] } else { 0.0 }).collect(),
                );
                push(
                    grads,
                    2,
                    (0..n).map(|i| if c.get(i) != 0.0 { 0.0 } else { g[i] }).collect(),
                );
            }
            OpCode::IndicatorLt | OpCode::IndicatorGt => {}
            OpCode::ClampMin | OpCode::Max | OpCode::Min => {
                let (a, b) = (val(0), val(1));
                let pick_a = |i: usize| match op {
                    OpCode::ClampMin => a.get(i) > b.get(i),
                    OpCode::Max => a.get(i) >= b.get(i),
                    _ => a.get(i) <= b.get(i),
                };
                push(
                    grads,
                    0,
                    (0..n).map(|i| if pick_a(i) { g[i] } else { 0.0 }).collect(),
                );
                push(
                    grads,
                    1,
                    (0..n).map(|i| if pick_a(i) { 0.0 } else { g[i] }).collect(),
                );
            }
            _ => {
                let a = val(0);
                let local = (0..n)
                    .map(|i| {
                        let x = a.get(i);
                        let d = match op {
                            OpCode::Neg => -1.0,
                            OpCode::Exp => out.get(i),
                            OpCode::Log => 1.0 / x,
                            OpCode::Log1p => 1.0 / (1.0 + x),
                            OpCode::Sigmoid => {
                                let s = out.get(i);
                                s * (1.0 - s)
                            }
                            OpCode::LogSigmoid => sigmoid(-x),
                            OpCode::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            OpCode::Abs => {
                                if x > 0.0 {
                                    1.0
                                } else if x < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            OpCode::Pow(p) => p * x.powf(p - 1.0),
                            _ => unreachable!(),
                        };
                        g[i] * d
                    })
                    .collect();
                push(grads, 0, local);
            }
        }
    }
}

/// Adds `local` into the gradient slot of `target`, summing when the
/// target is a broadcast scalar.
fn accumulate(grads: &mut [Option<Vec<f64>>], target: NodeId, target_value: &Value, local: Vec<f64>) {
    let local = match target_value {
        Value::Scalar(_) => vec![local.iter().fold(0.0, |acc, v| acc + v)],
        Value::Vector(_) => local,
    };
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, l) in existing.iter_mut().zip(local) {
                *e += l;
            }
        }
        slot @ None => *slot = Some(local),
    }
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_gradient<F>(f: F, x: &BatchVector, h: f64) -> Result<BatchVector, MathError>
where
    F: Fn(&BatchVector) -> f64,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.0[i];
        probe.0[i] = orig + h;
        let up = f(&probe);
        probe.0[i] = orig - h;
        let down = f(&probe);
        probe.0[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(MathError::NonFiniteEvaluation { coordinate: i });
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(BatchVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bv(v: &[f64]) -> BatchVector {
        BatchVector::new(v.to_vec()).unwrap()
    }

    fn vecval(v: &[f64]) -> Value {
        Value::Vector(bv(v))
    }

    #[test]
    fn elementwise_examples() {
        let s = apply_op(OpCode::Sigmoid, &[&vecval(&[0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(s, vecval(&[0.5, 0.5, 0.5]));
        let r = apply_op(OpCode::Relu, &[&vecval(&[-1.0, 0.0, 2.0])]).unwrap();
        assert_eq!(r, vecval(&[0.0, 0.0, 2.0]));
        let n = apply_op(OpCode::Neg, &[&Value::Scalar(0.0)]).unwrap();
        let e = apply_op(OpCode::Exp, &[&n]).unwrap();
        let l = apply_op(OpCode::Log1p, &[&e]).unwrap();
        assert!((l.as_scalar().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn concat_and_indicators() {
        let c = apply_op(OpCode::Concat, &[&vecval(&[1.0, 2.0]), &vecval(&[3.0])]).unwrap();
        assert_eq!(c, vecval(&[1.0, 2.0, 3.0]));
        let lt = apply_op(OpCode::IndicatorLt, &[&vecval(&[-1.0, 0.0, 1.0]), &Value::Scalar(0.0)]).unwrap();
        assert_eq!(lt, vecval(&[1.0, 0.0, 0.0]));
        let gt = apply_op(OpCode::IndicatorGt, &[&vecval(&[-1.0, 0.0, 1.0]), &Value::Scalar(0.0)]).unwrap();
        assert_eq!(gt, vecval(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = apply_op(OpCode::Add, &[&vecval(&[1.0, 2.0]), &vecval(&[1.0])]).unwrap_err();
        assert_eq!(err, MathError::LengthMismatch { left: 2, right: 1 });
        assert!(matches!(
            apply_op(OpCode::Add, &[&vecval(&[1.0])]),
            Err(MathError::Arity { .. })
        ));
        assert_eq!(BatchVector::new(vec![]), Err(MathError::Empty));
    }

    #[test]
    fn domain_violations_propagate_non_finite() {
        let l = apply_op(OpCode::Log, &[&vecval(&[-1.0, 1.0])]).unwrap();
        assert_eq!(l.as_vector().unwrap().first_non_finite(), Some(0));
        let d = apply_op(OpCode::Div, &[&vecval(&[1.0]), &Value::Scalar(0.0)]).unwrap();
        assert!(d.as_vector().unwrap()[0].is_infinite());
    }

    #[test]
    fn reductions() {
        assert_eq!(reduce(StatKind::Mean, &bv(&[1.0, 2.0, 3.0])).value, 2.0);
        assert_eq!(reduce(StatKind::Variance, &bv(&[1.0, 2.0, 3.0])).value, 1.0);
        assert_eq!(reduce(StatKind::Std, &bv(&[5.0; 4])).value, 0.0);
        assert_eq!(reduce(StatKind::Variance, &bv(&[7.0])).value, 0.0);
        assert_eq!(reduce(StatKind::Std, &bv(&[7.0])).value, 0.0);
    }

    #[test]
    fn logsigmoid_is_stable_for_large_arguments() {
        assert_eq!(log_sigmoid(800.0), 0.0);
        assert_eq!(log_sigmoid(-800.0), -800.0);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    fn grad_at(x: f64, build: impl Fn(&mut CompGraph, NodeId) -> NodeId) -> f64 {
        let mut g = CompGraph::new();
        let leaf = g.leaf("x", bv(&[x]));
        let out = build(&mut g, leaf);
        g.gradient(out, &["x"]).unwrap()["x"][0]
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(grad_at(0.0, |g, x| g.logsigmoid(x).unwrap()), 0.5);
        let d = grad_at(2.0, |g, x| {
            let one = g.scalar(1.0);
            let t = g.sub(one, x).unwrap();
            g.relu(t).unwrap()
        });
        assert_eq!(d, 0.0);
        let d = grad_at(0.0, |g, x| {
            let n = g.neg(x).unwrap();
            g.exp(n).unwrap()
        });
        assert_eq!(d, -1.0);
    }

    #[test]
    fn kink_conventions() {
        assert_eq!(grad_at(0.0, |g, x| g.relu(x).unwrap()), 0.0);
        assert_eq!(grad_at(0.0, |g, x| g.abs(x).unwrap()), 0.0);
        let d = grad_at(0.3, |g, x| {
            let z = g.scalar(0.0);
            g.indicator_gt(x, z).unwrap()
        });
        assert_eq!(d, 0.0);
    }

    #[test]
    fn reduction_gradients_match_finite_differences() {
        let x = bv(&[0.3, -1.2, 2.5, 0.7]);
        for kind in [StatKind::Mean, StatKind::Variance, StatKind::Std] {
            let mut g = CompGraph::new();
            let leaf = g.leaf("x", x.clone());
            let sq = g.pow(leaf, 2.0).unwrap();
            let s = g.reduce(kind, sq).unwrap();
            let ad = g.gradient(s, &["x"]).unwrap().remove("x").unwrap();
            let fd = finite_diff_gradient(
                |v| {
                    let sq: Vec<f64> = v.iter().map(|a| a * a).collect();
                    reduce(kind, &bv(&sq)).value
                },
                &x,
                1e-5,
            )
            .unwrap();
            for (a, b) in ad.iter().zip(fd.iter()) {
                assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn broadcast_scalar_gradient_is_summed() {
        let mut g = CompGraph::new();
        let x = g.leaf("x", bv(&[1.0, 2.0, 3.0]));
        let b = g.leaf("b", bv(&[2.0]));
        let mb = g.mean(b).unwrap();
        let y = g.mul(x, mb).unwrap();
        let grads = g.gradient(y, &["x", "b"]).unwrap();
        assert_eq!(grads["x"].as_slice(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads["b"].as_slice(), &[6.0]);
    }

    #[test]
    fn concat_gradient_splits() {
        let mut g = CompGraph::new();
        let a = g.leaf("a", bv(&[1.0, 2.0]));
        let b = g.leaf("b", bv(&[3.0, 4.0]));
        let two = g.scalar(2.0);
        let b2 = g.mul(b, two).unwrap();
        let c = g.concat(a, b2).unwrap();
        let grads = g.gradient(c, &["a", "b"]).unwrap();
        assert_eq!(grads["a"].as_slice(), &[1.0, 1.0]);
        assert_eq!(grads["b"].as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn unknown_leaf_is_reported() {
        let mut g = CompGraph::new();
        let a = g.leaf("a", bv(&[1.0]));
        assert_eq!(
            g.gradient(a, &["b"]),
            Err(MathError::UnknownLeaf("b".into()))
        );
    }

    #[test]
    fn finite_diff_examples() {
        let x = bv(&[0.1, -3.0, 7.0]);
        let fd = finite_diff_gradient(|v| v.iter().sum(), &x, 1e-5).unwrap();
        assert!(fd.iter().all(|d| (d - 1.0).abs() < 1e-10));
        let beta = 0.05;
        let dpo = |v: &BatchVector| -log_sigmoid(beta * v[0]);
        let fd = finite_diff_gradient(dpo, &bv(&[0.0]), 1e-5).unwrap();
        assert!((fd[0] + 0.025).abs() < 1e-8);
        let err = finite_diff_gradient(|v| v[1].ln(), &bv(&[1.0, 1e-6]), 1e-5).unwrap_err();
        assert_eq!(err, MathError::NonFiniteEvaluation { coordinate: 1 });
    }

    proptest! {
        #[test]
        fn add_broadcast_is_symmetric(v in prop::collection::vec(-1e6f64..1e6, 1..32), s in -1e6f64..1e6) {
            let a = vecval(&v);
            let left = apply_op(OpCode::Add, &[&a, &Value::Scalar(s)]).unwrap();
            let right = apply_op(OpCode::Add, &[&Value::Scalar(s), &a]).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn variance_is_translation_invariant(v in prop::collection::vec(-10.0f64..10.0, 2..64), c in -10.0f64..10.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = reduce(StatKind::Variance, &bv(&v)).value;
            let b = reduce(StatKind::Variance, &bv(&shifted)).value;
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
            prop_assert!(a >= 0.0);
            let s = reduce(StatKind::Std, &bv(&v)).value;
            prop_assert_eq!(s, a.sqrt());
        }

        #[test]
        fn evaluation_is_deterministic(v in prop::collection::vec(-50.0f64..50.0, 1..16)) {
            let run = || {
                let mut g = CompGraph::new();
                let x = g.leaf("x", bv(&v));
                let s = g.sigmoid(x).unwrap();
                let l = g.logsigmoid(x).unwrap();
                let m = g.mul(s, l).unwrap();
                let r = g.var(m).unwrap();
                let out = g.add(m, r).unwrap();
                let grad = g.gradient(out, &["x"]).unwrap();
                (g.value(out).clone(), grad)
            };
            let (a, ga) = run();
            let (b, gb) = run();
            prop_assert_eq!(a, b);
            prop_assert_eq!(ga, gb);
        }
    }
}
