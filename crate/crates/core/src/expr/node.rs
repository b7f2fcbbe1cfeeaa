use std::collections::BTreeSet;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{is_one, rational_from_int, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    pub fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }
}

/// Expression tree node. Subtraction and negation are kept as distinct
/// nodes so that printing reproduces the parsed tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Const(BigRational),
    Var(Var),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, u32),
    Func(Func, Box<Node>),
}

fn int(v: i64) -> Node {
    Node::Const(rational_from_int(v))
}

fn pow_rational(base: &BigRational, exp: u32) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

// Constructors below fold constants and apply the 0/1 identities. Nothing
// else is rewritten.
impl Node {
    pub fn is_const_zero(&self) -> bool {
        matches!(self, Node::Const(c) if c.is_zero())
    }

    pub fn is_const_one(&self) -> bool {
        matches!(self, Node::Const(c) if is_one(c))
    }

    pub fn add(a: Node, b: Node) -> Node {
        match (a, b) {
            (Node::Const(x), Node::Const(y)) => Node::Const(x + y),
            (a, b) if a.is_const_zero() => b,
            (a, b) if b.is_const_zero() => a,
            (a, b) => Node::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Node, b: Node) -> Node {
        match (a, b) {
            (Node::Const(x), Node::Const(y)) => Node::Const(x - y),
            (a, b) if b.is_const_zero() => a,
            (a, b) if a.is_const_zero() => Node::neg(b),
            (a, b) => Node::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Node, b: Node) -> Node {
        match (a, b) {
            (Node::Const(x), Node::Const(y)) => Node::Const(x * y),
            (a, b) if a.is_const_zero() || b.is_const_zero() => int(0),
            (a, b) if a.is_const_one() => b,
            (a, b) if b.is_const_one() => a,
            (a, b) => Node::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Node, b: Node) -> Node {
        match (a, b) {
            (Node::Const(x), Node::Const(y)) if !y.is_zero() => Node::Const(x / y),
            (a, b) if b.is_const_one() => a,
            (a, b) if a.is_const_zero() && !b.is_const_zero() => int(0),
            (a, b) => Node::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Node) -> Node {
        match a {
            Node::Const(x) => Node::Const(-x),
            a => Node::Neg(Box::new(a)),
        }
    }

    pub fn pow(a: Node, exp: u32) -> Node {
        match a {
            _ if exp == 0 => int(1),
            a if exp == 1 => a,
            Node::Const(x) => Node::Const(pow_rational(&x, exp)),
            a => Node::Pow(Box::new(a), exp),
        }
    }

    pub fn func(f: Func, a: Node) -> Node {
        Node::Func(f, Box::new(a))
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(*v);
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.collect_vars(out),
        }
    }

    pub fn derivative(&self, v: Var) -> Node {
        match self {
            Node::Const(_) => int(0),
            Node::Var(w) => int(i64::from(*w == v)),
            Node::Add(a, b) => Node::add(a.derivative(v), b.derivative(v)),
            Node::Sub(a, b) => Node::sub(a.derivative(v), b.derivative(v)),
            Node::Mul(a, b) => Node::add(
                Node::mul(a.derivative(v), (**b).clone()),
                Node::mul((**a).clone(), b.derivative(v)),
            ),
            Node::Div(a, b) => {
                let db = b.derivative(v);
                if db.is_const_zero() {
                    Node::div(a.derivative(v), (**b).clone())
                } else {
                    Node::div(
                        Node::sub(
                            Node::mul(a.derivative(v), (**b).clone()),
                            Node::mul((**a).clone(), db),
                        ),
                        Node::pow((**b).clone(), 2),
                    )
                }
            }
            Node::Neg(a) => Node::neg(a.derivative(v)),
            Node::Pow(a, k) => {
                let da = a.derivative(v);
                if da.is_const_zero() {
                    return int(0);
                }
                Node::mul(
                    Node::mul(int(i64::from(*k)), Node::pow((**a).clone(), k - 1)),
                    da,
                )
            }
            Node::Func(f, a) => {
                let da = a.derivative(v);
                if da.is_const_zero() {
                    return int(0);
                }
                let outer = match f {
                    Func::Sin => Node::func(Func::Cos, (**a).clone()),
                    Func::Cos => Node::neg(Node::func(Func::Sin, (**a).clone())),
                    Func::Exp => self.clone(),
                };
                Node::mul(outer, da)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(..) => 3,
            Node::Pow(..) => 4,
            Node::Const(_) | Node::Var(_) | Node::Func(..) => 5,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "(")?;
            self.write_bare(f)?;
            write!(f, ")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write_const(f, c),
            Node::Var(v) => write!(f, "{v}"),
            Node::Add(a, b) => {
                a.write_at(f, 1)?;
                write!(f, " + ")?;
                b.write_at(f, 2)
            }
            Node::Sub(a, b) => {
                a.write_at(f, 1)?;
                write!(f, " - ")?;
                b.write_at(f, 2)
            }
            Node::Mul(a, b) => {
                a.write_at(f, 2)?;
                write!(f, "*")?;
                b.write_at(f, 3)
            }
            Node::Div(a, b) => {
                a.write_at(f, 2)?;
                write!(f, "/")?;
                b.write_at(f, 3)
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                a.write_at(f, 3)
            }
            Node::Pow(a, k) => {
                a.write_at(f, 5)?;
                write!(f, "^{k}")
            }
            Node::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_bare(f)?;
                write!(f, ")")
            }
        }
    }
}

// Negative and non-integer constants are parenthesised so that they reparse
// to a single folded constant.
fn write_const(f: &mut fmt::Formatter<'_>, c: &BigRational) -> fmt::Result {
    if c.is_integer() && !c.is_negative() {
        write!(f, "{}", c.numer())
    } else if c.is_integer() {
        write!(f, "({})", c.numer())
    } else {
        write!(f, "({}/{})", c.numer(), c.denom())
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_bare(f)
    }
}
