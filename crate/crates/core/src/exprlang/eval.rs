use std::borrow::Cow;

use super::typecheck::{compile, Compiled, Node, Scope};
use super::{BinOp, Expr, ExprError, Func, UnOp, ValueType};

/// Runtime value. Vector values borrow from the row context when they are
/// plain column reads and own their data when computed.
#[derive(Debug, Clone, PartialEq)]
pub enum Value<'a> {
    F64(f64),
    I64(i64),
    Bool(bool),
    VecF64(Cow<'a, [f64]>),
    VecI64(Cow<'a, [i64]>),
    VecBool(Cow<'a, [bool]>),
}

impl Value<'_> {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::F64(_) => ValueType::F64,
            Value::I64(_) => ValueType::I64,
            Value::Bool(_) => ValueType::Bool,
            Value::VecF64(_) => ValueType::VecF64,
            Value::VecI64(_) => ValueType::VecI64,
            Value::VecBool(_) => ValueType::VecBool,
        }
    }

    pub fn into_owned(self) -> Value<'static> {
        match self {
            Value::F64(v) => Value::F64(v),
            Value::I64(v) => Value::I64(v),
            Value::Bool(v) => Value::Bool(v),
            Value::VecF64(v) => Value::VecF64(Cow::Owned(v.into_owned())),
            Value::VecI64(v) => Value::VecI64(Cow::Owned(v.into_owned())),
            Value::VecBool(v) => Value::VecBool(Cow::Owned(v.into_owned())),
        }
    }

    /// Re-borrows without copying vector data.
    pub fn borrowed(&self) -> Value<'_> {
        match self {
            Value::F64(v) => Value::F64(*v),
            Value::I64(v) => Value::I64(*v),
            Value::Bool(v) => Value::Bool(*v),
            Value::VecF64(v) => Value::VecF64(Cow::Borrowed(v)),
            Value::VecI64(v) => Value::VecI64(Cow::Borrowed(v)),
            Value::VecBool(v) => Value::VecBool(Cow::Borrowed(v)),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Numeric scalar as f64 (I64 promoted).
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F64(v) => Some(*v),
            Value::I64(v) => Some(*v as f64),
            _ => None,
        }
    }

    /// Numeric scalar or vector flattened to f64 values.
    pub fn to_f64_vec(&self) -> Option<Vec<f64>> {
        match self {
            Value::F64(v) => Some(vec![*v]),
            Value::I64(v) => Some(vec![*v as f64]),
            Value::VecF64(v) => Some(v.to_vec()),
            Value::VecI64(v) => Some(v.iter().map(|&x| x as f64).collect()),
            _ => None,
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            Value::VecF64(v) => Some(v.len()),
            Value::VecI64(v) => Some(v.len()),
            Value::VecBool(v) => Some(v.len()),
            _ => None,
        }
    }

    fn is_float(&self) -> bool {
        matches!(self, Value::F64(_) | Value::VecF64(_))
    }

    /// Element `i` as a number; scalars broadcast.
    fn num(&self, i: usize) -> Num {
        match self {
            Value::F64(v) => Num::F(*v),
            Value::I64(v) => Num::I(*v),
            Value::VecF64(v) => Num::F(v[i]),
            Value::VecI64(v) => Num::I(v[i]),
            _ => unreachable!("typechecked numeric operand"),
        }
    }

    fn boolean(&self, i: usize) -> bool {
        match self {
            Value::Bool(v) => *v,
            Value::VecBool(v) => v[i],
            _ => unreachable!("typechecked boolean operand"),
        }
    }
}

impl From<f64> for Value<'static> {
    fn from(v: f64) -> Self {
        Value::F64(v)
    }
}

impl From<i64> for Value<'static> {
    fn from(v: i64) -> Self {
        Value::I64(v)
    }
}

impl From<bool> for Value<'static> {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<Vec<f64>> for Value<'static> {
    fn from(v: Vec<f64>) -> Self {
        Value::VecF64(Cow::Owned(v))
    }
}

impl From<Vec<i64>> for Value<'static> {
    fn from(v: Vec<i64>) -> Self {
        Value::VecI64(Cow::Owned(v))
    }
}

impl From<Vec<bool>> for Value<'static> {
    fn from(v: Vec<bool>) -> Self {
        Value::VecBool(Cow::Owned(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("integer division by zero")]
    DivisionByZero,
    #[error("{func}() of an empty vector")]
    EmptyReduction { func: &'static str },
}

/// Per-event values, addressed by the slots assigned at compile time.
pub trait RowContext {
    fn get(&self, slot: usize) -> Value<'_>;
}

#[derive(Clone, Copy)]
enum Num {
    I(i64),
    F(f64),
}

impl Num {
    fn f(self) -> f64 {
        match self {
            Num::I(v) => v as f64,
            Num::F(v) => v,
        }
    }

    fn i(self) -> i64 {
        match self {
            Num::I(v) => v,
            Num::F(_) => unreachable!("integer path only sees integers"),
        }
    }
}

fn int_op(op: BinOp, a: i64, b: i64) -> Result<i64, EvalError> {
    Ok(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div if b == 0 => return Err(EvalError::DivisionByZero),
        BinOp::Div => a.wrapping_div(b),
        BinOp::Rem if b == 0 => return Err(EvalError::DivisionByZero),
        BinOp::Rem => a.wrapping_rem(b),
        _ => unreachable!("arithmetic operator"),
    })
}

fn float_op(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Rem => a % b,
        _ => unreachable!("arithmetic operator"),
    }
}

fn compare(op: BinOp, a: Num, b: Num) -> bool {
    if let (Num::I(x), Num::I(y)) = (a, b) {
        return match op {
            BinOp::Lt => x < y,
            BinOp::Le => x <= y,
            BinOp::Gt => x > y,
            BinOp::Ge => x >= y,
            BinOp::Eq => x == y,
            BinOp::Ne => x != y,
            _ => unreachable!("comparison operator"),
        };
    }
    let (x, y) = (a.f(), b.f());
    match op {
        BinOp::Lt => x < y,
        BinOp::Le => x <= y,
        BinOp::Gt => x > y,
        BinOp::Ge => x >= y,
        BinOp::Eq => x == y,
        BinOp::Ne => x != y,
        _ => unreachable!("comparison operator"),
    }
}

/// Common length of the vector operands, `None` when both are scalars.
fn broadcast_len(a: &Value, b: &Value) -> Result<Option<usize>, EvalError> {
    match (a.len(), b.len()) {
        (Some(l), Some(r)) if l != r => Err(EvalError::LengthMismatch { left: l, right: r }),
        (Some(n), _) | (_, Some(n)) => Ok(Some(n)),
        (None, None) => Ok(None),
    }
}

fn binary<'c>(op: BinOp, a: &Value, b: &Value) -> Result<Value<'c>, EvalError> {
    let n = broadcast_len(a, b)?;
    if op.is_arithmetic() {
        let float = a.is_float() || b.is_float();
        return Ok(match (n, float) {
            (None, true) => Value::F64(float_op(op, a.num(0).f(), b.num(0).f())),
            (None, false) => Value::I64(int_op(op, a.num(0).i(), b.num(0).i())?),
            (Some(n), true) => Value::VecF64(Cow::Owned(
                (0..n)
                    .map(|i| float_op(op, a.num(i).f(), b.num(i).f()))
                    .collect(),
            )),
            (Some(n), false) => Value::VecI64(Cow::Owned(
                (0..n)
                    .map(|i| int_op(op, a.num(i).i(), b.num(i).i()))
                    .collect::<Result<_, _>>()?,
            )),
        });
    }
    let boolean_operands = matches!(a, Value::Bool(_) | Value::VecBool(_));
    let elem = |i: usize| -> bool {
        if boolean_operands {
            let (x, y) = (a.boolean(i), b.boolean(i));
            match op {
                BinOp::Eq => x == y,
                BinOp::Ne => x != y,
                BinOp::And => x && y,
                BinOp::Or => x || y,
                _ => unreachable!("boolean operator"),
            }
        } else {
            compare(op, a.num(i), b.num(i))
        }
    };
    Ok(match n {
        None => Value::Bool(elem(0)),
        Some(n) => Value::VecBool(Cow::Owned((0..n).map(elem).collect())),
    })
}

fn unary<'c>(op: UnOp, v: Value<'c>) -> Value<'c> {
    match (op, v) {
        (UnOp::Neg, Value::F64(x)) => Value::F64(-x),
        (UnOp::Neg, Value::I64(x)) => Value::I64(x.wrapping_neg()),
        (UnOp::Neg, Value::VecF64(v)) => Value::VecF64(v.iter().map(|x| -x).collect()),
        (UnOp::Neg, Value::VecI64(v)) => {
            Value::VecI64(v.iter().map(|x| x.wrapping_neg()).collect())
        }
        (UnOp::Not, Value::Bool(b)) => Value::Bool(!b),
        (UnOp::Not, Value::VecBool(v)) => Value::VecBool(v.iter().map(|b| !b).collect()),
        _ => unreachable!("typechecked unary operand"),
    }
}

fn promote(v: Value<'_>, ty: ValueType) -> Value<'_> {
    match (v, ty) {
        (Value::I64(x), ValueType::F64) => Value::F64(x as f64),
        (Value::VecI64(v), ValueType::VecF64) => {
            Value::VecF64(v.iter().map(|&x| x as f64).collect())
        }
        (v, _) => v,
    }
}

fn map_f64<'c>(v: Value<'c>, f: fn(f64) -> f64) -> Value<'c> {
    match v {
        Value::F64(x) => Value::F64(f(x)),
        Value::I64(x) => Value::F64(f(x as f64)),
        Value::VecF64(v) => Value::VecF64(v.iter().map(|&x| f(x)).collect()),
        Value::VecI64(v) => Value::VecF64(v.iter().map(|&x| f(x as f64)).collect()),
        _ => unreachable!("typechecked numeric argument"),
    }
}

fn extremum<T: Copy + PartialOrd>(
    v: &[T],
    func: Func,
) -> Result<T, EvalError> {
    let (first, rest) = v.split_first().ok_or(EvalError::EmptyReduction {
        func: func.name(),
    })?;
    Ok(rest.iter().fold(*first, |acc, &x| {
        let better = if func == Func::Min { x < acc } else { x > acc };
        if better {
            x
        } else {
            acc
        }
    }))
}

fn call<'c>(func: Func, mut args: Vec<Value<'c>>) -> Result<Value<'c>, EvalError> {
    let arg = args.remove(0);
    Ok(match func {
        Func::Len => Value::I64(arg.len().expect("typechecked vector") as i64),
        Func::Sum => match arg {
            Value::VecF64(v) => Value::F64(v.iter().fold(0.0, |acc, x| acc + x)),
            Value::VecI64(v) => Value::I64(v.iter().fold(0i64, |acc, x| acc.wrapping_add(*x))),
            Value::VecBool(v) => Value::I64(v.iter().filter(|b| **b).count() as i64),
            _ => unreachable!("typechecked sum argument"),
        },
        Func::Min | Func::Max => match arg {
            Value::VecF64(v) => Value::F64(extremum(&v, func)?),
            Value::VecI64(v) => Value::I64(extremum(&v, func)?),
            _ => unreachable!("typechecked extremum argument"),
        },
        Func::Abs => match arg {
            Value::F64(x) => Value::F64(x.abs()),
            Value::I64(x) => Value::I64(x.wrapping_abs()),
            Value::VecF64(v) => Value::VecF64(v.iter().map(|x| x.abs()).collect()),
            Value::VecI64(v) => Value::VecI64(v.iter().map(|x| x.wrapping_abs()).collect()),
            _ => unreachable!("typechecked abs argument"),
        },
        Func::Sqrt => map_f64(arg, f64::sqrt),
        Func::Log => map_f64(arg, f64::ln),
        Func::Exp => map_f64(arg, f64::exp),
        Func::Where => {
            let mask = match args.remove(0) {
                Value::VecBool(m) => m,
                _ => unreachable!("typechecked mask"),
            };
            let n = arg.len().expect("typechecked vector");
            if n != mask.len() {
                return Err(EvalError::LengthMismatch {
                    left: n,
                    right: mask.len(),
                });
            }
            fn pick<T: Copy>(v: &[T], m: &[bool]) -> Vec<T> {
                v.iter().zip(m).filter(|(_, k)| **k).map(|(x, _)| *x).collect()
            }
            match arg {
                Value::VecF64(v) => Value::VecF64(Cow::Owned(pick(&v, &mask))),
                Value::VecI64(v) => Value::VecI64(Cow::Owned(pick(&v, &mask))),
                Value::VecBool(v) => Value::VecBool(Cow::Owned(pick(&v, &mask))),
                _ => unreachable!("typechecked vector"),
            }
        }
    })
}

fn eval_node<'c, C: RowContext + ?Sized>(node: &Node, ctx: &'c C) -> Result<Value<'c>, EvalError> {
    Ok(match node {
        Node::Const(v) => v.clone(),
        Node::Slot(s) => ctx.get(*s),
        Node::Unary(op, e) => unary(*op, eval_node(e, ctx)?),
        Node::Binary(op @ (BinOp::And | BinOp::Or), a, b) => {
            let lhs = eval_node(a, ctx)?;
            if let Value::Bool(l) = lhs {
                // scalar short-circuit
                match (op, l) {
                    (BinOp::And, false) => return Ok(Value::Bool(false)),
                    (BinOp::Or, true) => return Ok(Value::Bool(true)),
                    _ => {}
                }
            }
            let rhs = eval_node(b, ctx)?;
            binary(*op, &lhs, &rhs)?
        }
        Node::Binary(op, a, b) => {
            let lhs = eval_node(a, ctx)?;
            let rhs = eval_node(b, ctx)?;
            binary(*op, &lhs, &rhs)?
        }
        Node::Ternary(c, a, b, ty) => {
            let cond = eval_node(c, ctx)?
                .as_bool()
                .expect("typechecked condition");
            let v = if cond {
                eval_node(a, ctx)?
            } else {
                eval_node(b, ctx)?
            };
            promote(v, *ty)
        }
        Node::Index(v, i) => {
            let index = match eval_node(i, ctx)? {
                Value::I64(i) => i,
                _ => unreachable!("typechecked index"),
            };
            let vector = eval_node(v, ctx)?;
            let len = vector.len().expect("typechecked vector");
            if index < 0 || index as usize >= len {
                return Err(EvalError::IndexOutOfRange { index, len });
            }
            let i = index as usize;
            match vector {
                Value::VecF64(v) => Value::F64(v[i]),
                Value::VecI64(v) => Value::I64(v[i]),
                Value::VecBool(v) => Value::Bool(v[i]),
                _ => unreachable!("typechecked vector"),
            }
        }
        Node::Call(func, args) => {
            let args = args
                .iter()
                .map(|a| eval_node(a, ctx))
                .collect::<Result<Vec<_>, _>>()?;
            call(*func, args)?
        }
    })
}

impl Compiled {
    pub fn eval<'c, C: RowContext + ?Sized>(&self, ctx: &'c C) -> Result<Value<'c>, EvalError> {
        eval_node(&self.root, ctx)
    }
}

/// Name-addressed context for one event, mostly for tests and examples.
#[derive(Debug, Clone, Default)]
pub struct MapContext {
    values: Vec<(String, Value<'static>)>,
}

impl MapContext {
    pub fn new() -> Self {
        MapContext::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value<'static>>) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<Value<'static>>) {
        let name = name.into();
        let value = value.into();
        match self.values.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.values.push((name, value)),
        }
    }

    pub fn scope(&self) -> Vec<(String, ValueType)> {
        self.values.iter().map(|(n, v)| (n.clone(), v.ty())).collect()
    }

    /// Typechecks `expr` against this context's columns and evaluates it.
    pub fn eval(&self, expr: &Expr) -> Result<Value<'static>, super::Error> {
        let compiled = compile(expr, &self.scope())?;
        Ok(compiled.eval(self)?.into_owned())
    }
}

impl Scope for MapContext {
    fn resolve(&self, name: &str) -> Option<(usize, ValueType)> {
        self.values
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| (i, self.values[i].1.ty()))
    }
}

impl RowContext for MapContext {
    fn get(&self, slot: usize) -> Value<'_> {
        self.values[slot].1.borrowed()
    }
}

impl From<ExprError> for super::Error {
    fn from(e: ExprError) -> Self {
        super::Error::Expr(e)
    }
}

impl From<EvalError> for super::Error {
    fn from(e: EvalError) -> Self {
        super::Error::Eval(e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn eval(src: &str, ctx: &MapContext) -> Result<Value<'static>, super::super::Error> {
        ctx.eval(&parse(src).unwrap())
    }

    fn jets() -> MapContext {
        MapContext::new()
            .with("Jet_pt", vec![10.0, 20.0, 30.0])
            .with("Jet_eta", vec![0.5, 3.0, -1.0])
            .with("nJet", 3i64)
            .with("MET_pt", 42.5)
    }

    #[test]
    fn reductions_and_masks() {
        let ctx = jets();
        assert_eq!(eval("sum(Jet_pt)", &ctx).unwrap(), Value::F64(60.0));
        assert_eq!(
            eval("where(Jet_pt, Jet_pt > 15)", &ctx).unwrap(),
            Value::from(vec![20.0, 30.0])
        );
        let two = MapContext::new()
            .with("Jet_pt", vec![50.0, 40.0])
            .with("Jet_eta", vec![1.0, 3.0]);
        assert_eq!(
            eval("len(where(Jet_pt, Jet_eta < 2.4))", &two).unwrap(),
            Value::I64(1)
        );
        assert_eq!(eval("max(Jet_pt)", &ctx).unwrap(), Value::F64(30.0));
        assert_eq!(eval("sum(abs(Jet_eta) < 2.4)", &ctx).unwrap(), Value::I64(2));
    }

    #[test]
    fn empty_vectors() {
        let ctx = MapContext::new().with("v", Vec::<f64>::new());
        assert_eq!(eval("sum(v)", &ctx).unwrap(), Value::F64(0.0));
        assert!(matches!(
            eval("min(v)", &ctx),
            Err(super::super::Error::Eval(EvalError::EmptyReduction { .. }))
        ));
        assert!(matches!(
            eval("v[0]", &ctx),
            Err(super::super::Error::Eval(EvalError::IndexOutOfRange {
                index: 0,
                len: 0
            }))
        ));
    }

    #[test]
    fn division_rules() {
        let ctx = MapContext::new().with("i", 7i64).with("x", 1.0);
        assert!(matches!(
            eval("i / 0", &ctx),
            Err(super::super::Error::Eval(EvalError::DivisionByZero))
        ));
        assert!(matches!(
            eval("i % 0", &ctx),
            Err(super::super::Error::Eval(EvalError::DivisionByZero))
        ));
        assert_eq!(eval("i / 2", &ctx).unwrap(), Value::I64(3));
        assert_eq!(eval("x / 0", &ctx).unwrap(), Value::F64(f64::INFINITY));
        match eval("(x - 1.0) / 0", &ctx).unwrap() {
            Value::F64(v) => assert!(v.is_nan()),
            other => panic!("{other:?}"),
        }
        assert_eq!(eval("i / 2.0", &ctx).unwrap(), Value::F64(3.5));
    }

    #[test]
    fn vector_length_mismatch() {
        let ctx = MapContext::new()
            .with("a", vec![1.0, 2.0])
            .with("b", vec![1.0]);
        assert!(matches!(
            eval("a + b", &ctx),
            Err(super::super::Error::Eval(EvalError::LengthMismatch {
                left: 2,
                right: 1
            }))
        ));
        assert_eq!(
            eval("a * 2 + 1", &ctx).unwrap(),
            Value::from(vec![3.0, 5.0])
        );
    }

    #[test]
    fn short_circuit_skips_errors() {
        let ctx = MapContext::new().with("v", Vec::<f64>::new());
        assert_eq!(
            eval("len(v) > 0 && v[0] > 1.0", &ctx).unwrap(),
            Value::Bool(false)
        );
        assert_eq!(
            eval("len(v) == 0 || v[0] > 1.0", &ctx).unwrap(),
            Value::Bool(true)
        );
        assert_eq!(
            eval("len(v) > 0 ? v[0] : -1.0", &ctx).unwrap(),
            Value::F64(-1.0)
        );
    }

    #[test]
    fn ternary_promotes_integer_branch() {
        let ctx = MapContext::new().with("c", true);
        assert_eq!(eval("c ? 1 : 2.5", &ctx).unwrap(), Value::F64(1.0));
    }

    #[test]
    fn mixed_comparison_promotes() {
        let ctx = MapContext::new().with("n", 3i64).with("v", vec![2.5, 3.0, 3.5]);
        assert_eq!(eval("n < 3.5", &ctx).unwrap(), Value::Bool(true));
        assert_eq!(
            eval("v >= n", &ctx).unwrap(),
            Value::from(vec![false, true, true])
        );
        assert_eq!(
            eval("!(v >= n) && true", &ctx).unwrap(),
            Value::from(vec![true, false, false])
        );
    }
}
