use std::fmt::{self, Write};

use super::Span;

/// Interface variables every program may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leaf {
    PolicyChosen,
    PolicyRejected,
    ReferenceChosen,
    ReferenceRejected,
    Beta,
}

impl Leaf {
    pub const ALL: [Leaf; 5] = [
        Leaf::PolicyChosen,
        Leaf::PolicyRejected,
        Leaf::ReferenceChosen,
        Leaf::ReferenceRejected,
        Leaf::Beta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Leaf::PolicyChosen => "pcl",
            Leaf::PolicyRejected => "prl",
            Leaf::ReferenceChosen => "rcl",
            Leaf::ReferenceRejected => "rrl",
            Leaf::Beta => "beta",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Log1p,
    Sigmoid,
    LogSigmoid,
    Relu,
    Abs,
    Pow,
    ClampMin,
    Mean,
    Var,
    Std,
    Min,
    Max,
    Where,
    IndicatorLt,
    IndicatorGt,
    Concat,
}

impl Func {
    pub const ALL: [Func; 18] = [
        Func::Exp,
        Func::Log,
        Func::Log1p,
        Func::Sigmoid,
        Func::LogSigmoid,
        Func::Relu,
        Func::Abs,
        Func::Pow,
        Func::ClampMin,
        Func::Mean,
        Func::Var,
        Func::Std,
        Func::Min,
        Func::Max,
        Func::Where,
        Func::IndicatorLt,
        Func::IndicatorGt,
        Func::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Log1p => "log1p",
            Func::Sigmoid => "sigmoid",
            Func::LogSigmoid => "logsigmoid",
            Func::Relu => "relu",
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::ClampMin => "clamp_min",
            Func::Mean => "mean",
            Func::Var => "var",
            Func::Std => "std",
            Func::Min => "min",
            Func::Max => "max",
            Func::Where => "where",
            Func::IndicatorLt => "indicator_lt",
            Func::IndicatorGt => "indicator_gt",
            Func::Concat => "concat",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Exp
            | Func::Log
            | Func::Log1p
            | Func::Sigmoid
            | Func::LogSigmoid
            | Func::Relu
            | Func::Abs
            | Func::Mean
            | Func::Var
            | Func::Std => 1,
            Func::Pow
            | Func::ClampMin
            | Func::Min
            | Func::Max
            | Func::IndicatorLt
            | Func::IndicatorGt
            | Func::Concat => 2,
            Func::Where => 3,
        }
    }

    pub fn is_reduction(self) -> bool {
        matches!(self, Func::Mean | Func::Var | Func::Std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// A variable reference: an interface leaf or an earlier binding (by index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Leaf(Leaf),
    Bound(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary(op, ..) => op.precedence(),
            ExprKind::Neg(_) => 3,
            _ => 4,
        }
    }

    /// Visits this expression and all its descendants, parents first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Neg(e) => e.walk(f),
            ExprKind::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
            ExprKind::Number(_) | ExprKind::Var(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub name: String,
    pub expr: Expr,
    pub span: Span,
}

pub(crate) fn render_number(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) struct Renderer<'a> {
    pub names: &'a [Binding],
}

impl Renderer<'_> {
    pub fn expr(&self, e: &Expr, out: &mut String) -> fmt::Result {
        match &e.kind {
            ExprKind::Number(v) => out.push_str(&render_number(*v)),
            ExprKind::Var(Var::Leaf(l)) => out.push_str(l.name()),
            ExprKind::Var(Var::Bound(i)) => out.push_str(&self.names[*i].name),
            ExprKind::Neg(inner) => {
                out.push('-');
                self.child(inner, inner.precedence() < 4, out)?;
            }
            ExprKind::Binary(op, a, b) => {
                let p = op.precedence();
                self.child(a, a.precedence() < p, out)?;
                write!(out, " {} ", op.symbol())?;
                self.child(b, b.precedence() <= p, out)?;
            }
            ExprKind::Call(func, args) => {
                out.push_str(func.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.expr(a, out)?;
                }
                out.push(')');
            }
        }
        Ok(())
    }

    fn child(&self, e: &Expr, paren: bool, out: &mut String) -> fmt::Result {
        if paren {
            out.push('(');
            self.expr(e, out)?;
            out.push(')');
            Ok(())
        } else {
            self.expr(e, out)
        }
    }
}
