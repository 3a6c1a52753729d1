use std::collections::HashMap;

use super::eval::Value;
use super::{BinOp, Expr, ExprError, ExprKind, Func, Span, UnOp, ValueType};

/// Resolves column names to an evaluation slot and a type.
pub trait Scope {
    fn resolve(&self, name: &str) -> Option<(usize, ValueType)>;
}

/// Slot = position in the list.
impl Scope for [(String, ValueType)] {
    fn resolve(&self, name: &str) -> Option<(usize, ValueType)> {
        self.iter()
            .position(|(n, _)| n == name)
            .map(|i| (i, self[i].1))
    }
}

impl Scope for Vec<(String, ValueType)> {
    fn resolve(&self, name: &str) -> Option<(usize, ValueType)> {
        self.as_slice().resolve(name)
    }
}

impl Scope for HashMap<String, (usize, ValueType)> {
    fn resolve(&self, name: &str) -> Option<(usize, ValueType)> {
        self.get(name).copied()
    }
}

impl<F> Scope for F
where
    F: Fn(&str) -> Option<(usize, ValueType)>,
{
    fn resolve(&self, name: &str) -> Option<(usize, ValueType)> {
        self(name)
    }
}

/// Type-checked expression with column references bound to slots.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub(super) root: Node,
    ty: ValueType,
    slots: Vec<usize>,
}

impl Compiled {
    pub fn ty(&self) -> ValueType {
        self.ty
    }

    /// Distinct slots read by the expression.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }
}

#[derive(Debug, Clone)]
pub(super) enum Node {
    Const(Value<'static>),
    Slot(usize),
    Unary(UnOp, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    /// Carries the result type so that mixed numeric branches can be promoted.
    Ternary(Box<Node>, Box<Node>, Box<Node>, ValueType),
    Call(Func, Vec<Node>),
    Index(Box<Node>, Box<Node>),
}

/// Returns the static type of `expr` under `scope`.
pub fn typecheck<S: Scope + ?Sized>(expr: &Expr, scope: &S) -> Result<ValueType, ExprError> {
    compile(expr, scope).map(|c| c.ty)
}

pub fn compile<S: Scope + ?Sized>(expr: &Expr, scope: &S) -> Result<Compiled, ExprError> {
    let mut slots = Vec::new();
    let (root, ty) = check(expr, scope, &mut slots)?;
    Ok(Compiled { root, ty, slots })
}

fn type_error(span: Span, message: String) -> ExprError {
    ExprError::Type { span, message }
}

/// Result type of an arithmetic operation on numeric operands.
fn arithmetic_result(a: ValueType, b: ValueType) -> ValueType {
    let float = a.element() == ValueType::F64 || b.element() == ValueType::F64;
    let elem = if float { ValueType::F64 } else { ValueType::I64 };
    if a.is_vector() || b.is_vector() {
        ValueType::vector_of(elem)
    } else {
        elem
    }
}

fn bool_result(a: ValueType, b: ValueType) -> ValueType {
    if a.is_vector() || b.is_vector() {
        ValueType::VecBool
    } else {
        ValueType::Bool
    }
}

fn check<S: Scope + ?Sized>(
    expr: &Expr,
    scope: &S,
    slots: &mut Vec<usize>,
) -> Result<(Node, ValueType), ExprError> {
    let span = expr.span;
    Ok(match &expr.kind {
        ExprKind::Float(v) => (Node::Const(Value::F64(*v)), ValueType::F64),
        ExprKind::Int(v) => (Node::Const(Value::I64(*v)), ValueType::I64),
        ExprKind::Bool(v) => (Node::Const(Value::Bool(*v)), ValueType::Bool),
        ExprKind::Column(name) => {
            let (slot, ty) = scope.resolve(name).ok_or_else(|| ExprError::UnknownColumn {
                span,
                name: name.clone(),
            })?;
            if !slots.contains(&slot) {
                slots.push(slot);
            }
            (Node::Slot(slot), ty)
        }
        ExprKind::Unary(op, e) => {
            let (node, ty) = check(e, scope, slots)?;
            let ok = match op {
                UnOp::Neg => ty.is_numeric(),
                UnOp::Not => ty.is_boolean(),
            };
            if !ok {
                let sym = if *op == UnOp::Neg { "-" } else { "!" };
                return Err(type_error(span, format!("unary '{sym}' not defined on {ty}")));
            }
            (Node::Unary(*op, Box::new(node)), ty)
        }
        ExprKind::Binary(op, a, b) => {
            let (na, ta) = check(a, scope, slots)?;
            let (nb, tb) = check(b, scope, slots)?;
            let mismatch = || {
                type_error(
                    span,
                    format!("operator '{}' not defined on {ta} and {tb}", op.symbol()),
                )
            };
            let ty = if op.is_arithmetic() {
                if !(ta.is_numeric() && tb.is_numeric()) {
                    return Err(mismatch());
                }
                arithmetic_result(ta, tb)
            } else if op.is_comparison() {
                let numeric = ta.is_numeric() && tb.is_numeric();
                let boolean = ta.is_boolean()
                    && tb.is_boolean()
                    && matches!(op, BinOp::Eq | BinOp::Ne);
                if !(numeric || boolean) {
                    return Err(mismatch());
                }
                bool_result(ta, tb)
            } else {
                if !(ta.is_boolean() && tb.is_boolean()) {
                    return Err(mismatch());
                }
                bool_result(ta, tb)
            };
            (Node::Binary(*op, Box::new(na), Box::new(nb)), ty)
        }
        ExprKind::Ternary(c, a, b) => {
            let (nc, tc) = check(c, scope, slots)?;
            if tc != ValueType::Bool {
                return Err(type_error(
                    c.span,
                    format!("condition must be BOOL, found {tc}"),
                ));
            }
            let (na, ta) = check(a, scope, slots)?;
            let (nb, tb) = check(b, scope, slots)?;
            let ty = if ta == tb {
                ta
            } else if ta.is_numeric() && tb.is_numeric() && ta.is_vector() == tb.is_vector() {
                arithmetic_result(ta, tb)
            } else {
                return Err(type_error(
                    span,
                    format!("branches have incompatible types {ta} and {tb}"),
                ));
            };
            (
                Node::Ternary(Box::new(nc), Box::new(na), Box::new(nb), ty),
                ty,
            )
        }
        ExprKind::Index(v, i) => {
            let (nv, tv) = check(v, scope, slots)?;
            let (ni, ti) = check(i, scope, slots)?;
            if !tv.is_vector() {
                return Err(type_error(span, format!("cannot index into {tv}")));
            }
            if ti != ValueType::I64 {
                return Err(type_error(i.span, format!("index must be I64, found {ti}")));
            }
            (Node::Index(Box::new(nv), Box::new(ni)), tv.element())
        }
        ExprKind::Call(func, args) => {
            let mut nodes = Vec::with_capacity(args.len());
            let mut types = Vec::with_capacity(args.len());
            for a in args {
                let (n, t) = check(a, scope, slots)?;
                nodes.push(n);
                types.push(t);
            }
            if types.len() != func.arity() {
                return Err(type_error(
                    span,
                    format!("{}() takes {} argument(s)", func.name(), func.arity()),
                ));
            }
            let t = types[0];
            let bad = || {
                type_error(
                    span,
                    format!(
                        "{}() not defined on {}",
                        func.name(),
                        types
                            .iter()
                            .map(|t| t.to_string())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                )
            };
            let ty = match func {
                Func::Len if t.is_vector() => ValueType::I64,
                Func::Sum => match t {
                    ValueType::VecF64 => ValueType::F64,
                    ValueType::VecI64 | ValueType::VecBool => ValueType::I64,
                    _ => return Err(bad()),
                },
                Func::Min | Func::Max => match t {
                    ValueType::VecF64 | ValueType::VecI64 => t.element(),
                    _ => return Err(bad()),
                },
                Func::Abs if t.is_numeric() => t,
                Func::Sqrt | Func::Log | Func::Exp if t.is_numeric() => {
                    if t.is_vector() {
                        ValueType::VecF64
                    } else {
                        ValueType::F64
                    }
                }
                Func::Where if t.is_vector() && types[1] == ValueType::VecBool => t,
                _ => return Err(bad()),
            };
            (Node::Call(*func, nodes), ty)
        }
    })
}
