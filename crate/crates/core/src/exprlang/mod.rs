//! Expression language for `define`, `filter` and `vary` bodies.
//!
//! Expressions operate on one event at a time. Scalars are `f64`, `i64` and
//! `bool`; vector columns hold a variable number of values per event and
//! combine elementwise with scalars and with vectors of the same length.
//!
//! ```text
//! expr    := or ( "?" expr ":" expr )?
//! or      := and ( "||" and )*
//! and     := cmp ( "&&" cmp )*
//! cmp     := add ( ("<" | "<=" | ">" | ">=" | "==" | "!=") add )?
//! add     := mul ( ("+" | "-") mul )*
//! mul     := unary ( ("*" | "/" | "%") unary )*
//! unary   := ("!" | "-")? postfix
//! postfix := atom ( "[" expr "]" )*
//! atom    := number | "true" | "false" | ident | ident "(" args ")" | "(" expr ")"
//! ```
//!
//! Built-in functions: `len`, `sum`, `min`, `max`, `abs`, `sqrt`, `log`,
//! `exp` and `where(values, mask)`.

mod eval;
mod lexer;
mod parser;
mod printer;
mod typecheck;

use std::fmt;

pub use eval::{EvalError, MapContext, RowContext, Value};
pub use parser::parse;
pub use typecheck::{compile, typecheck, Compiled, Scope};

/// 1-based source position of a node or token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem
        )
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Len,
    Sum,
    Min,
    Max,
    Abs,
    Sqrt,
    Log,
    Exp,
    Where,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "len" => Func::Len,
            "sum" => Func::Sum,
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "exp" => Func::Exp,
            "where" => Func::Where,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Len => "len",
            Func::Sum => "sum",
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Where => "where",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Where => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Float(f64),
    Int(i64),
    Bool(bool),
    Column(String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Index(Box<Expr>, Box<Expr>),
}

/// Parsed expression. Equality compares structure only, not spans.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use ExprKind::*;
        match (&self.kind, &other.kind) {
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Int(a), Int(b)) => a == b,
            (Bool(a), Bool(b)) => a == b,
            (Column(a), Column(b)) => a == b,
            (Unary(o1, a), Unary(o2, b)) => o1 == o2 && a == b,
            (Binary(o1, a1, b1), Binary(o2, a2, b2)) => o1 == o2 && a1 == a2 && b1 == b2,
            (Ternary(c1, a1, b1), Ternary(c2, a2, b2)) => c1 == c2 && a1 == a2 && b1 == b2,
            (Call(f1, a1), Call(f2, a2)) => f1 == f2 && a1 == a2,
            (Index(v1, i1), Index(v2, i2)) => v1 == v2 && i1 == i2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }

    /// Distinct column names referenced, in first-occurrence order.
    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_columns(&mut |name| {
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        });
        out
    }

    fn visit_columns(&self, f: &mut dyn FnMut(&str)) {
        match &self.kind {
            ExprKind::Float(_) | ExprKind::Int(_) | ExprKind::Bool(_) => {}
            ExprKind::Column(name) => f(name),
            ExprKind::Unary(_, e) => e.visit_columns(f),
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                a.visit_columns(f);
                b.visit_columns(f);
            }
            ExprKind::Ternary(c, a, b) => {
                c.visit_columns(f);
                a.visit_columns(f);
                b.visit_columns(f);
            }
            ExprKind::Call(_, args) => args.iter().for_each(|a| a.visit_columns(f)),
        }
    }
}

/// Static type of an expression or column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ValueType {
    F64,
    I64,
    Bool,
    VecF64,
    VecI64,
    VecBool,
}

impl ValueType {
    pub fn is_vector(self) -> bool {
        matches!(self, ValueType::VecF64 | ValueType::VecI64 | ValueType::VecBool)
    }

    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            ValueType::F64 | ValueType::I64 | ValueType::VecF64 | ValueType::VecI64
        )
    }

    pub fn is_boolean(self) -> bool {
        matches!(self, ValueType::Bool | ValueType::VecBool)
    }

    /// Scalar type of the elements (identity for scalars).
    pub fn element(self) -> ValueType {
        match self {
            ValueType::VecF64 => ValueType::F64,
            ValueType::VecI64 => ValueType::I64,
            ValueType::VecBool => ValueType::Bool,
            s => s,
        }
    }

    pub fn vector_of(scalar: ValueType) -> ValueType {
        match scalar {
            ValueType::F64 | ValueType::VecF64 => ValueType::VecF64,
            ValueType::I64 | ValueType::VecI64 => ValueType::VecI64,
            ValueType::Bool | ValueType::VecBool => ValueType::VecBool,
        }
    }

    pub fn from_dtype(d: crate::colstore::Dtype) -> ValueType {
        use crate::colstore::Dtype;
        match d {
            Dtype::F64 => ValueType::F64,
            Dtype::I64 => ValueType::I64,
            Dtype::Bool => ValueType::Bool,
            Dtype::VecF64 => ValueType::VecF64,
            Dtype::VecI64 => ValueType::VecI64,
        }
    }

    /// Storage type, if values of this type can be written to a file.
    pub fn to_dtype(self) -> Option<crate::colstore::Dtype> {
        use crate::colstore::Dtype;
        Some(match self {
            ValueType::F64 => Dtype::F64,
            ValueType::I64 => Dtype::I64,
            ValueType::Bool => Dtype::Bool,
            ValueType::VecF64 => Dtype::VecF64,
            ValueType::VecI64 => Dtype::VecI64,
            ValueType::VecBool => return None,
        })
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::F64 => "F64",
            ValueType::I64 => "I64",
            ValueType::Bool => "BOOL",
            ValueType::VecF64 => "VEC_F64",
            ValueType::VecI64 => "VEC_I64",
            ValueType::VecBool => "VEC_BOOL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at {span}: {message}")]
    Syntax { span: Span, message: String },
    #[error("unknown column '{name}' at {span}")]
    UnknownColumn { span: Span, name: String },
    #[error("type error at {span}: {message}")]
    Type { span: Span, message: String },
}

impl ExprError {
    pub fn span(&self) -> Span {
        match self {
            ExprError::Syntax { span, .. }
            | ExprError::UnknownColumn { span, .. }
            | ExprError::Type { span, .. } => *span,
        }
    }
}

/// Either a static (parse/type) or a runtime failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(ExprError),
    #[error(transparent)]
    Eval(EvalError),
}
