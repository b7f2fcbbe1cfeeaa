use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::{ExprError, Func, Node, Result, Var};

/// Parses a decimal or `a/b` literal into an exact rational.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num = parse_rational(num)?;
        let den = parse_rational(den)?;
        if den.is_zero() {
            return None;
        }
        return Some(num / den);
    }
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let bytes = body.as_bytes();
    let (value, used) = decimal_literal(bytes)?;
    if used != bytes.len() {
        return None;
    }
    Some(if negative { -value } else { value })
}

// digits ['.' digits] [('e'|'E') ['+'|'-'] digits]; returns the value and
// the number of bytes consumed.
fn decimal_literal(bytes: &[u8]) -> Option<(BigRational, usize)> {
    let mut pos = 0;
    let mut mantissa = BigInt::zero();
    let mut scale: i64 = 0;
    let mut digits = 0;
    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
        mantissa = mantissa * 10 + (bytes[pos] - b'0');
        pos += 1;
        digits += 1;
    }
    if pos < bytes.len() && bytes[pos] == b'.' {
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            mantissa = mantissa * 10 + (bytes[pos] - b'0');
            scale -= 1;
            pos += 1;
            digits += 1;
        }
    }
    if digits == 0 {
        return None;
    }
    if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
        let mut look = pos + 1;
        let mut sign = 1;
        if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
            if bytes[look] == b'-' {
                sign = -1;
            }
            look += 1;
        }
        let start = look;
        let mut exp: i64 = 0;
        while look < bytes.len() && bytes[look].is_ascii_digit() {
            exp = exp.checked_mul(10)?.checked_add(i64::from(bytes[look] - b'0'))?;
            look += 1;
        }
        if look > start {
            scale += sign * exp;
            pos = look;
        }
    }
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        BigRational::from_integer(mantissa * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(mantissa, num_traits::pow(ten, (-scale) as usize))
    };
    Some((value, pos))
}

pub(super) struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    n: usize,
}

// Binary constructors used while parsing: the tree is kept as written except
// that operations on two literal constants are folded.
fn fold_binary(a: Node, b: Node, op: u8) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => match op {
            b'+' => Node::Const(x + y),
            b'-' => Node::Const(x - y),
            b'*' => Node::Const(x * y),
            _ if !y.is_zero() => Node::Const(x / y),
            _ => Node::Div(Box::new(Node::Const(x)), Box::new(Node::Const(y))),
        },
        (a, b) => {
            let (a, b) = (Box::new(a), Box::new(b));
            match op {
                b'+' => Node::Add(a, b),
                b'-' => Node::Sub(a, b),
                b'*' => Node::Mul(a, b),
                _ => Node::Div(a, b),
            }
        }
    }
}

impl<'a> Parser<'a> {
    pub(super) fn new(src: &'a str, n: usize) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            n,
        }
    }

    pub(super) fn parse(mut self) -> Result<Node> {
        let node = self.expr()?;
        self.skip_ws();
        if self.pos < self.bytes.len() {
            return Err(self.error("unexpected trailing input"));
        }
        Ok(node)
    }

    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = fold_binary(lhs, rhs, op);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = fold_binary(lhs, rhs, op);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.factor()?;
            return Ok(match inner {
                Node::Const(c) => Node::Const(-c),
                other => Node::Neg(Box::new(other)),
            });
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == start {
                return Err(self.error("expected a non-negative integer exponent"));
            }
            let exp: u32 = self.src[start..self.pos].parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: "exponent too large".into(),
            })?;
            return Ok(match base {
                Node::Const(c) => {
                    let mut acc = BigRational::one();
                    for _ in 0..exp {
                        acc *= &c;
                    }
                    Node::Const(acc)
                }
                other => Node::Pow(Box::new(other), exp),
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let (value, used) = decimal_literal(&self.bytes[self.pos..])
                    .ok_or_else(|| self.error("malformed number"))?;
                self.pos += used;
                Ok(Node::Const(value))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = &self.src[start..self.pos];
                if let Some(func) = Func::from_name(word) {
                    self.expect(b'(')?;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    return Ok(Node::Func(func, Box::new(arg)));
                }
                self.variable(word, start)
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn variable(&self, word: &str, start: usize) -> Result<Node> {
        let (kind, digits) = word.split_at(1);
        let make: fn(usize) -> Var = match kind {
            "x" => Var::x,
            "y" => Var::y,
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unknown identifier `{word}`"),
                })
            }
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ExprError::Syntax {
                offset: start,
                message: format!("unknown identifier `{word}`"),
            });
        }
        let out_of_range = || ExprError::VariableOutOfRange {
            name: word.to_string(),
            offset: start,
            n: self.n,
        };
        let index: usize = digits.parse().map_err(|_| out_of_range())?;
        let var = make(index);
        if !var.is_declared(self.n) {
            return Err(out_of_range());
        }
        Ok(Node::Var(var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn rational_literals() {
        assert_eq!(parse_rational("1/3"), Some(q(1, 3)));
        assert_eq!(parse_rational("-2/4"), Some(q(-1, 2)));
        assert_eq!(parse_rational("0.03"), Some(q(3, 100)));
        assert_eq!(parse_rational("2.5e-1"), Some(q(1, 4)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
    }

    #[test]
    fn unknown_function_is_a_syntax_error() {
        let err = Parser::new("tan(x1)", 1).parse().unwrap_err();
        assert!(matches!(err, ExprError::Syntax { offset: 0, .. }));
    }

    #[test]
    fn unbalanced_parenthesis() {
        let err = Parser::new("(x1 + y1", 1).parse().unwrap_err();
        assert!(matches!(err, ExprError::Syntax { offset: 8, .. }));
    }

    #[test]
    fn precedence_of_unary_minus_and_power() {
        let node = Parser::new("-x1^2", 1).parse().unwrap();
        assert!(matches!(node, Node::Neg(ref inner) if matches!(**inner, Node::Pow(_, 2))));
        let node = Parser::new("x1 - y1 - x1", 1).parse().unwrap();
        assert!(matches!(node, Node::Sub(ref lhs, _) if matches!(**lhs, Node::Sub(_, _))));
    }
}
