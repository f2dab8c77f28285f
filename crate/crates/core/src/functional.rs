//! A small expression language for linear functionals of the mean vectors.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*        at most one non-scalar factor
//! unary  := '-' unary | atom
//! atom   := number | '(' expr ')' | M(g, v) | Tot(g) | Tot | Tot<S>(g) | Tot<S>
//! ```
//!
//! `g` and `v` are labels or 1-based indices. `Tot(g)` sums every variable of
//! group `g`; `Tot` averages `Tot(g)` over groups. `Tot<S>` restricts the sum
//! to the variables of model section `S` (e.g. `TotA(2)`).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Scalar(f64),
    Linear(DVector<f64>),
}

struct Parser<'a> {
    spec: &'a ModelSpec,
    src: &'a str,
    pos: usize,
}

/// Parses `expr` into a coefficient vector over the group-major mean vector.
pub fn parse_functional(spec: &ModelSpec, expr: &str) -> Result<DVector<f64>> {
    let mut p = Parser { spec, src: expr, pos: 0 };
    let value = p.expr()?;
    p.skip_ws();
    if p.pos != expr.len() {
        return Err(p.error(format!("unexpected `{}`", &expr[p.pos..])));
    }
    match value {
        Value::Linear(v) => Ok(v),
        Value::Scalar(_) => Err(p.error("expression is a constant, not a functional of the means".into())),
    }
}

impl<'a> Parser<'a> {
    fn error(&self, message: String) -> Error {
        Error::parse(format!("functional `{}`", self.src), message)
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.src[self.pos..].chars().next().map_or(1, char::len_utf8);
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}` at offset {}", self.pos)))
        }
    }

    fn zeros(&self) -> DVector<f64> {
        DVector::zeros(self.spec.g0() * self.spec.v0())
    }

    fn expr(&mut self) -> Result<Value> {
        let mut acc = self.term()?;
        loop {
            let sign = if self.eat('+') {
                1.0
            } else if self.eat('-') {
                -1.0
            } else {
                return Ok(acc);
            };
            let rhs = self.term()?;
            acc = match (acc, rhs) {
                (Value::Linear(a), Value::Linear(b)) => Value::Linear(a + b * sign),
                (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(a + sign * b),
                _ => return Err(self.error("cannot add a constant to a functional".into())),
            };
        }
    }

    fn term(&mut self) -> Result<Value> {
        let mut acc = self.unary()?;
        while self.eat('*') {
            let rhs = self.unary()?;
            acc = match (acc, rhs) {
                (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(a * b),
                (Value::Scalar(a), Value::Linear(v)) | (Value::Linear(v), Value::Scalar(a)) => Value::Linear(v * a),
                _ => return Err(self.error("product of two functionals is not linear".into())),
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Value> {
        if self.eat('-') {
            return Ok(match self.unary()? {
                Value::Scalar(a) => Value::Scalar(-a),
                Value::Linear(v) => Value::Linear(-v),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Value> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(')')?;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() => self.call(),
            Some(c) => Err(self.error(format!("unexpected `{c}`"))),
            None => Err(self.error("unexpected end of expression".into())),
        }
    }

    fn number(&mut self) -> Result<Value> {
        let start = self.pos;
        let rest = &self.src[start..];
        let mut len = rest
            .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E'))
            .unwrap_or(rest.len());
        // allow a signed exponent such as 1e-3
        if len > 0 && rest[..len].ends_with(['e', 'E']) && rest[len..].starts_with(['+', '-']) {
            let tail = &rest[len + 1..];
            len += 1 + tail.find(|c: char| !c.is_ascii_digit()).unwrap_or(tail.len());
        }
        let text = &rest[..len];
        self.pos += len;
        text.parse::<f64>()
            .map(Value::Scalar)
            .map_err(|_| self.error(format!("invalid number `{text}`")))
    }

    fn ident(&mut self) -> &'a str {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    /// Raw text up to the next `,` or `)`, trimmed.
    fn argument(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.find([',', ')']).ok_or_else(|| self.error("unterminated argument list".into()))?;
        self.pos += len;
        Ok(rest[..len].trim())
    }

    fn call(&mut self) -> Result<Value> {
        let name = self.ident();
        if name == "M" {
            self.expect('(')?;
            let arg = self.argument()?;
            let g = self.group(arg)?;
            self.expect(',')?;
            let arg = self.argument()?;
            let v = self.variable(arg)?;
            self.expect(')')?;
            let mut f = self.zeros();
            f[g * self.spec.v0() + v] = 1.0;
            return Ok(Value::Linear(f));
        }
        let Some(section) = name.strip_prefix("Tot") else {
            return Err(self.error(format!("unknown name `{name}`")));
        };
        let vars: Vec<usize> = if section.is_empty() {
            (0..self.spec.v0()).collect()
        } else {
            self.spec
                .sections
                .iter()
                .find(|(label, _)| label == section)
                .map(|(_, idx)| idx.clone())
                .ok_or_else(|| self.error(format!("model declares no section `{section}`")))?
        };
        let v0 = self.spec.v0();
        let mut f = self.zeros();
        if self.eat('(') {
            let arg = self.argument()?;
            let g = self.group(arg)?;
            self.expect(')')?;
            for &v in &vars {
                f[g * v0 + v] = 1.0;
            }
        } else {
            let w = 1.0 / self.spec.g0() as f64;
            for g in 0..self.spec.g0() {
                for &v in &vars {
                    f[g * v0 + v] = w;
                }
            }
        }
        Ok(Value::Linear(f))
    }

    fn lookup(&self, what: &str, token: &str, labels: &[String]) -> Result<usize> {
        if let Some(i) = labels.iter().position(|l| l == token) {
            return Ok(i);
        }
        match token.parse::<usize>() {
            Ok(i) if (1..=labels.len()).contains(&i) => Ok(i - 1),
            _ => Err(self.error(format!("unknown {what} `{token}`"))),
        }
    }

    fn group(&self, token: &str) -> Result<usize> {
        self.lookup("group", token, &self.spec.group_labels)
    }

    fn variable(&self, token: &str) -> Result<usize> {
        self.lookup("variable", token, &self.spec.variable_labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::exam_model;

    #[test]
    fn atoms_and_arithmetic() {
        let spec = exam_model();
        let f = parse_functional(&spec, "M(class2, q3) - 0.5*M(1,8)").unwrap();
        assert_eq!(f[8 + 2], 1.0);
        assert_eq!(f[7], -0.5);
        assert_eq!(f.iter().filter(|x| **x != 0.0).count(), 2);
        let g = parse_functional(&spec, "2 * (M(1,1) + M(1,2)) * 1e-1").unwrap();
        assert!((g[0] - 0.2).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn totals_and_sections() {
        let spec = exam_model();
        let t = parse_functional(&spec, "Tot").unwrap();
        assert!(t.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let a = parse_functional(&spec, "TotA(2) - TotB(2)").unwrap();
        assert_eq!(a.rows(8, 8).as_slice(), &[1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let sum = parse_functional(&spec, "Tot(1)+Tot(2)+Tot(3)").unwrap() / 3.0;
        assert!((sum - t).amax() < 1e-15);
    }

    #[test]
    fn errors_name_the_problem() {
        let spec = exam_model();
        for bad in ["M(4,1)", "M(1,q9)", "TotC", "Tot * Tot", "3", "M(1,1) +", "Foo(1)", "Tot + 1"] {
            let err = parse_functional(&spec, bad).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{bad}: {err}");
        }
    }
}
