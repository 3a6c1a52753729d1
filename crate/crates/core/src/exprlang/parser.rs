use super::lexer::{tokenize, Tok};
use super::{BinOp, Expr, ExprError, ExprKind, Func, Span, UnOp};

/// Parses an expression string.
pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let expr = p.expr()?;
    match p.peek() {
        Tok::Eof => Ok(expr),
        _ => Err(p.unexpected("end of input")),
    }
}

struct Parser {
    tokens: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ExprError {
        ExprError::Syntax {
            span: self.span(),
            message: format!("expected {expected}, found {}", self.peek().describe()),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let cond = self.or()?;
        if *self.peek() != Tok::Question {
            return Ok(cond);
        }
        self.bump();
        let then = self.expr()?;
        self.expect(Tok::Colon, "':'")?;
        let otherwise = self.expr()?;
        let span = cond.span;
        Ok(Expr::new(
            ExprKind::Ternary(Box::new(cond), Box::new(then), Box::new(otherwise)),
            span,
        ))
    }

    fn binary_chain(
        &mut self,
        next: fn(&mut Self) -> Result<Expr, ExprError>,
        op_of: fn(&Tok) -> Option<BinOp>,
    ) -> Result<Expr, ExprError> {
        let mut lhs = next(self)?;
        while let Some(op) = op_of(self.peek()) {
            self.bump();
            let rhs = next(self)?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        self.binary_chain(Self::and, |t| (*t == Tok::OrOr).then_some(BinOp::Or))
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        self.binary_chain(Self::cmp, |t| (*t == Tok::AndAnd).then_some(BinOp::And))
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.add()?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::EqEq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add()?;
        let span = lhs.span;
        Ok(Expr::new(
            ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
            span,
        ))
    }

    fn add(&mut self) -> Result<Expr, ExprError> {
        self.binary_chain(Self::mul, |t| match t {
            Tok::Plus => Some(BinOp::Add),
            Tok::Minus => Some(BinOp::Sub),
            _ => None,
        })
    }

    fn mul(&mut self) -> Result<Expr, ExprError> {
        self.binary_chain(Self::unary, |t| match t {
            Tok::Star => Some(BinOp::Mul),
            Tok::Slash => Some(BinOp::Div),
            Tok::Percent => Some(BinOp::Rem),
            _ => None,
        })
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        let op = match self.peek() {
            Tok::Minus => UnOp::Neg,
            Tok::Bang => UnOp::Not,
            _ => return self.postfix(),
        };
        let (_, span) = self.bump();
        let operand = self.postfix()?;
        Ok(Expr::new(ExprKind::Unary(op, Box::new(operand)), span))
    }

    fn postfix(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.atom()?;
        while *self.peek() == Tok::LBracket {
            self.bump();
            let index = self.expr()?;
            self.expect(Tok::RBracket, "']'")?;
            let span = base.span;
            base = Expr::new(ExprKind::Index(Box::new(base), Box::new(index)), span);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Float(v) => {
                self.bump();
                ExprKind::Float(v)
            }
            Tok::Int(v) => {
                self.bump();
                ExprKind::Int(v)
            }
            Tok::True => {
                self.bump();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.bump();
                ExprKind::Bool(false)
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                return Ok(inner);
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() != Tok::LParen {
                    ExprKind::Column(name)
                } else {
                    let func = Func::from_name(&name).ok_or_else(|| ExprError::Syntax {
                        span,
                        message: format!("unknown function '{name}'"),
                    })?;
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen, "')' or ','")?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Syntax {
                            span,
                            message: format!(
                                "{}() takes {} argument(s), {} given",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    ExprKind::Call(func, args)
                }
            }
            _ => return Err(self.unexpected("expression")),
        };
        Ok(Expr::new(kind, span))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(e: &Expr) -> String {
        e.to_string()
    }

    #[test]
    fn logical_and_is_root() {
        let e = parse("Jet_pt[0] > 30 && MET_pt > 50").unwrap();
        assert!(matches!(e.kind, ExprKind::Binary(BinOp::And, _, _)));
        assert_eq!(shape(&e), "((Jet_pt[0] > 30) && (MET_pt > 50))");
    }

    #[test]
    fn incomplete_input_reports_position() {
        match parse("1 + ") {
            Err(ExprError::Syntax { span, message }) => {
                assert_eq!(span, Span { line: 1, col: 5 });
                assert!(message.contains("end of input"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ternary_has_lowest_precedence() {
        let e = parse("a ? b : c + 1").unwrap();
        match &e.kind {
            ExprKind::Ternary(_, _, otherwise) => {
                assert_eq!(shape(otherwise), "(c + 1)");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precedence_ladder() {
        assert_eq!(
            shape(&parse("-a * b + c % 2 < d || e && !f").unwrap()),
            "(((((-a) * b) + (c % 2)) < d) || (e && (!f)))"
        );
        assert_eq!(shape(&parse("a - b - c").unwrap()), "((a - b) - c)");
        assert_eq!(
            shape(&parse("a ? b : c ? d : e").unwrap()),
            "(a ? b : (c ? d : e))"
        );
    }

    #[test]
    fn comparisons_do_not_chain() {
        assert!(parse("a < b < c").is_err());
    }

    #[test]
    fn function_arity_and_names() {
        assert!(parse("where(a)").is_err());
        assert!(parse("frobnicate(a)").is_err());
        assert!(parse("sum(where(Jet_pt, Jet_eta < 2.4))").is_ok());
        assert!(parse("len()").is_err());
    }

    #[test]
    fn error_on_unbalanced() {
        assert!(parse("(a + b").is_err());
        assert!(parse("a]").is_err());
        assert!(parse("v[1").is_err());
    }
}
