use super::ast::{BinOp, Binding, Expr, ExprKind, Func, Leaf, Var};
use super::lexer::{tokenize, Tok, Token};
use super::{DiagnosticKind, ObjectiveProgram, ParseDiagnostic, Span};

const MAX_DEPTH: usize = 200;
const MAX_SOURCE_BYTES: usize = 64 * 1024;

/// Parses source text into a program. Never panics; the first problem found
/// is returned as a diagnostic.
pub fn parse_program(source: &str) -> Result<ObjectiveProgram, ParseDiagnostic> {
    if source.len() > MAX_SOURCE_BYTES {
        return Err(ParseDiagnostic::new(
            Span { line: 1, column: 1 },
            DiagnosticKind::Syntax,
            format!("source exceeds {MAX_SOURCE_BYTES} bytes"),
        ));
    }
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        bindings: Vec::new(),
        depth: 0,
    };
    let result = p.program()?;
    Ok(ObjectiveProgram {
        bindings: p.bindings,
        result,
        source: source.to_owned(),
    })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    bindings: Vec<Binding>,
    depth: usize,
}

fn syntax(span: Span, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic::new(span, DiagnosticKind::Syntax, message)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, context: &str) -> Result<Token, ParseDiagnostic> {
        let t = self.bump();
        if t.tok == want {
            Ok(t)
        } else {
            Err(syntax(
                t.span,
                format!("expected {} {context}, found {}", want.describe(), t.tok.describe()),
            ))
        }
    }

    fn program(&mut self) -> Result<Expr, ParseDiagnostic> {
        while self.peek().tok == Tok::Let {
            self.binding()?;
            let t = self.bump();
            match t.tok {
                Tok::Newline => {}
                Tok::Eof => {
                    return Err(syntax(t.span, "program must end with a result expression"))
                }
                other => {
                    return Err(syntax(
                        t.span,
                        format!("expected end of line after binding, found {}", other.describe()),
                    ))
                }
            }
        }
        let result = self.expr()?;
        let t = self.bump();
        match t.tok {
            Tok::Eof => Ok(result),
            Tok::Newline => Err(syntax(
                self.peek().span,
                "the result expression must be the last line",
            )),
            other => Err(syntax(
                t.span,
                format!("unexpected {} after expression", other.describe()),
            )),
        }
    }

    fn binding(&mut self) -> Result<(), ParseDiagnostic> {
        let let_tok = self.bump();
        let name_tok = self.bump();
        let name = match name_tok.tok {
            Tok::Ident(name) => name,
            other => {
                return Err(syntax(
                    name_tok.span,
                    format!("expected a name after `let`, found {}", other.describe()),
                ))
            }
        };
        if Leaf::from_name(&name).is_some() {
            return Err(syntax(name_tok.span, format!("cannot rebind input `{name}`")));
        }
        if Func::from_name(&name).is_some() {
            return Err(syntax(name_tok.span, format!("cannot bind function name `{name}`")));
        }
        if self.bindings.iter().any(|b| b.name == name) {
            return Err(syntax(name_tok.span, format!("`{name}` is already bound")));
        }
        self.expect(Tok::Assign, "in binding")?;
        let expr = self.expr()?;
        self.bindings.push(Binding {
            name,
            expr,
            span: let_tok.span,
        });
        Ok(())
    }

    fn nested<T>(
        &mut self,
        span: Span,
        f: impl FnOnce(&mut Self) -> Result<T, ParseDiagnostic>,
    ) -> Result<T, ParseDiagnostic> {
        if self.depth >= MAX_DEPTH {
            return Err(syntax(span, "expression nested too deeply"));
        }
        self.depth += 1;
        let r = f(self);
        self.depth -= 1;
        r
    }

    fn expr(&mut self) -> Result<Expr, ParseDiagnostic> {
        let span = self.peek().span;
        self.nested(span, |p| {
            let mut lhs = p.term()?;
            loop {
                let op = match p.peek().tok {
                    Tok::Plus => BinOp::Add,
                    Tok::Minus => BinOp::Sub,
                    _ => return Ok(lhs),
                };
                let op_span = p.bump().span;
                let rhs = p.term()?;
                lhs = Expr {
                    kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                    span: op_span,
                };
            }
        })
    }

    fn term(&mut self) -> Result<Expr, ParseDiagnostic> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let op_span = self.bump().span;
            let rhs = self.factor()?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span: op_span,
            };
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseDiagnostic> {
        if self.peek().tok == Tok::Minus {
            let span = self.bump().span;
            let inner = self.atom()?;
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseDiagnostic> {
        let t = self.bump();
        let span = t.span;
        match t.tok {
            Tok::Number(v) => Ok(Expr {
                kind: ExprKind::Number(v),
                span,
            }),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "to close `(`")?;
                Ok(e)
            }
            Tok::Ident(name) if self.peek().tok == Tok::LParen => {
                let func = Func::from_name(&name).ok_or_else(|| {
                    ParseDiagnostic::new(
                        span,
                        DiagnosticKind::UnboundName,
                        format!("unknown function `{name}`"),
                    )
                })?;
                self.bump();
                let args = self.nested(span, |p| p.arguments())?;
                Ok(Expr {
                    kind: ExprKind::Call(func, args),
                    span,
                })
            }
            Tok::Ident(name) => {
                if let Some(leaf) = Leaf::from_name(&name) {
                    return Ok(Expr {
                        kind: ExprKind::Var(Var::Leaf(leaf)),
                        span,
                    });
                }
                if let Some(i) = self.bindings.iter().position(|b| b.name == name) {
                    return Ok(Expr {
                        kind: ExprKind::Var(Var::Bound(i)),
                        span,
                    });
                }
                if Func::from_name(&name).is_some() {
                    return Err(syntax(span, format!("function `{name}` must be called")));
                }
                Err(ParseDiagnostic::new(
                    span,
                    DiagnosticKind::UnboundName,
                    format!("unbound name `{name}`"),
                ))
            }
            other => Err(syntax(
                span,
                format!("expected an expression, found {}", other.describe()),
            )),
        }
    }

    fn arguments(&mut self) -> Result<Vec<Expr>, ParseDiagnostic> {
        let mut args = vec![self.expr()?];
        loop {
            let t = self.bump();
            match t.tok {
                Tok::Comma => args.push(self.expr()?),
                Tok::RParen => return Ok(args),
                other => {
                    return Err(syntax(
                        t.span,
                        format!("expected `,` or `)` in call, found {}", other.describe()),
                    ))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binding_then_result() {
        let p = parse_program("let l = (pcl - prl) - (rcl - rrl)\n-logsigmoid(beta * l)").unwrap();
        assert_eq!(p.bindings.len(), 1);
        assert_eq!(p.bindings[0].name, "l");
        assert!(matches!(p.result.kind, ExprKind::Neg(_)));
    }

    #[test]
    fn unknown_function_points_at_call() {
        let d = parse_program("let x = foo(pcl)").unwrap_err();
        assert_eq!(d.kind, DiagnosticKind::UnboundName);
        assert_eq!((d.line, d.column), (1, 9));
    }

    #[test]
    fn unbound_and_forward_references() {
        let d = parse_program("let a = b\nlet b = 1\na").unwrap_err();
        assert_eq!(d.kind, DiagnosticKind::UnboundName);
        assert_eq!(d.column, 9);
    }

    #[test]
    fn precedence_and_associativity() {
        let p = parse_program("pcl - prl - rcl * rrl / beta").unwrap();
        let ExprKind::Binary(BinOp::Sub, lhs, rhs) = &p.result.kind else { panic!() };
        assert!(matches!(lhs.kind, ExprKind::Binary(BinOp::Sub, ..)));
        let ExprKind::Binary(BinOp::Div, inner, _) = &rhs.kind else { panic!() };
        assert!(matches!(inner.kind, ExprKind::Binary(BinOp::Mul, ..)));
    }

    #[test]
    fn syntax_errors() {
        for src in [
            "",
            "let x = pcl",
            "let pcl = 1\npcl",
            "let exp = 1\npcl",
            "let a = 1\nlet a = 2\na",
            "pcl +",
            "(pcl",
            "pcl\nprl",
            "exp",
            "--pcl",
            "mean(pcl,)",
            "pcl prl",
        ] {
            let d = parse_program(src).unwrap_err();
            assert_eq!(d.kind, DiagnosticKind::Syntax, "{src:?}: {d}");
        }
    }

    #[test]
    fn deep_nesting_is_rejected_without_overflow() {
        let src = format!("{}pcl{}", "(".repeat(5000), ")".repeat(5000));
        assert_eq!(parse_program(&src).unwrap_err().kind, DiagnosticKind::Syntax);
        let src = format!("{}pcl{}", "exp(".repeat(5000), ")".repeat(5000));
        assert_eq!(parse_program(&src).unwrap_err().kind, DiagnosticKind::Syntax);
    }

    #[test]
    fn multiline_call_arguments() {
        let p = parse_program("concat(\n  pcl,\n  prl\n)\n").unwrap();
        assert!(matches!(p.result.kind, ExprKind::Call(Func::Concat, _)));
    }
}
