use nalgebra::DMatrix;
use num_traits::ToPrimitive;

use super::{Expression, ExprError, Func, Node, Result, Var};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Add,
    Sub,
    Mul,
    /// Index into the tape's table of printed quotients.
    Div(usize),
    Neg,
    Pow(i32),
    Sin,
    Cos,
    Exp,
}

/// Postfix evaluation program for one expression.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    quotients: Vec<String>,
    depth: usize,
}

impl Tape {
    pub fn compile(node: &Node) -> Self {
        let mut tape = Tape {
            ops: Vec::new(),
            quotients: Vec::new(),
            depth: 0,
        };
        tape.emit(node);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &tape.ops {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div(_) => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        tape.depth = max_depth;
        tape
    }

    fn emit(&mut self, node: &Node) {
        // Slots are resolved lazily against n at evaluation time through
        // `Var::slot`, so the tape stores the raw (kind, index) encoding.
        match node {
            Node::Const(c) => self.ops.push(Op::Const(c.to_f64().unwrap_or(f64::NAN))),
            Node::Var(v) => self.ops.push(Op::Var(encode_var(*v))),
            Node::Add(a, b) => self.binary(a, b, Op::Add),
            Node::Sub(a, b) => self.binary(a, b, Op::Sub),
            Node::Mul(a, b) => self.binary(a, b, Op::Mul),
            Node::Div(a, b) => {
                self.quotients.push(node.to_string());
                let idx = self.quotients.len() - 1;
                self.binary(a, b, Op::Div(idx))
            }
            Node::Neg(a) => {
                self.emit(a);
                self.ops.push(Op::Neg);
            }
            Node::Pow(a, k) => {
                self.emit(a);
                self.ops.push(Op::Pow(i32::try_from(*k).unwrap_or(i32::MAX)));
            }
            Node::Func(f, a) => {
                self.emit(a);
                self.ops.push(match f {
                    Func::Sin => Op::Sin,
                    Func::Cos => Op::Cos,
                    Func::Exp => Op::Exp,
                });
            }
        }
    }

    fn binary(&mut self, a: &Node, b: &Node, op: Op) {
        self.emit(a);
        self.emit(b);
        self.ops.push(op);
    }

    /// Evaluates at the flattened point `z = (x1..xn, y1..yn)`.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let n = z.len() / 2;
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth.max(1));
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(code) => stack.push(z[decode_slot(code, n)]),
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(-a);
                }
                Op::Pow(k) => {
                    let a = stack.pop().unwrap();
                    stack.push(a.powi(k));
                }
                Op::Sin => {
                    let a = stack.pop().unwrap();
                    stack.push(a.sin());
                }
                Op::Cos => {
                    let a = stack.pop().unwrap();
                    stack.push(a.cos());
                }
                Op::Exp => {
                    let a = stack.pop().unwrap();
                    stack.push(a.exp());
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div(_) => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div(idx) => {
                            if b == 0.0 {
                                return Err(ExprError::DivisionByZero {
                                    subexpression: self.quotients[idx].clone(),
                                });
                            }
                            a / b
                        }
                        _ => unreachable!(),
                    });
                }
            }
        }
        Ok(stack.pop().unwrap_or(0.0))
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(c)] if *c == 0.0)
    }
}

fn encode_var(v: Var) -> usize {
    match v.kind {
        super::VarKind::Base => 2 * (v.index - 1),
        super::VarKind::Fibre => 2 * (v.index - 1) + 1,
    }
}

fn decode_slot(code: usize, n: usize) -> usize {
    let index = code / 2;
    if code % 2 == 0 {
        index
    } else {
        n + index
    }
}

/// Value, gradient and Hessian of an expression at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// Ordered `(d/dx1..d/dxn, d/dy1..d/dyn)`.
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Precompiled value, gradient and Hessian tapes for repeated evaluation.
///
/// Only the upper triangle of the Hessian is compiled; the lower triangle is
/// mirrored, so evaluated Hessians are exactly symmetric.
#[derive(Debug, Clone)]
pub struct JetEvaluator {
    n: usize,
    value: Tape,
    gradient: Vec<Tape>,
    hessian: Vec<(usize, usize, Tape)>,
}

impl JetEvaluator {
    pub fn new(e: &Expression) -> Self {
        let n = e.dim();
        let first: Vec<Node> = (0..2 * n)
            .map(|slot| e.root().derivative(Var::from_slot(slot, n)))
            .collect();
        let mut hessian = Vec::new();
        for i in 0..2 * n {
            for j in i..2 * n {
                let second = first[i].derivative(Var::from_slot(j, n));
                hessian.push((i, j, Tape::compile(&second)));
            }
        }
        JetEvaluator {
            n,
            value: Tape::compile(e.root()),
            gradient: first.iter().map(Tape::compile).collect(),
            hessian,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != 2 * self.n {
            return Err(ExprError::DimensionMismatch {
                expected: 2 * self.n,
                found: z.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        self.value.eval(z)
    }

    /// Writes the gradient into `out` (length `2n`).
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(z)?;
        for (slot, tape) in out.iter_mut().zip(&self.gradient) {
            *slot = tape.eval(z)?;
        }
        Ok(())
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.n];
        self.gradient_into(z, &mut out)?;
        Ok(out)
    }

    pub fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let m = 2 * self.n;
        let mut h = DMatrix::zeros(m, m);
        for (i, j, tape) in &self.hessian {
            let v = tape.eval(z)?;
            h[(*i, *j)] = v;
            h[(*j, *i)] = v;
        }
        Ok(h)
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<Jet> {
        Ok(Jet {
            value: self.value(z)?,
            gradient: self.gradient(z)?,
            hessian: self.hessian(z)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_matches_direct_arithmetic() {
        let e = Expression::parse("exp(x1)*sin(y2) - x2^3/(1 + y1^2)", 2).unwrap();
        let z = [0.3, -1.1, 0.7, 2.0];
        let expected = 0.3f64.exp() * 2.0f64.sin() - (-1.1f64).powi(3) / (1.0 + 0.49);
        let got = e.evaluate(&z).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_tape_detection() {
        let e = Expression::parse("x1", 1).unwrap();
        let d = e.differentiate(Var::y(1)).unwrap();
        assert!(d.compile().is_constant_zero());
        assert!(!e.compile().is_constant_zero());
    }
}
