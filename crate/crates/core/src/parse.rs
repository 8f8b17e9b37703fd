//! Parsers for polynomial literals such as `1 + 2*x1^2 - 3/4*x1*x3` and
//! form literals such as `x2*dx1^dx3 - (x1 + 1) dx2^dx3`.
//!
//! Polynomials are sums of products of factors; a factor is a rational or
//! decimal number, a coordinate `x<i>` (1-based), or a parenthesized
//! expression, with an optional non-negative integer power `^k`. Unary minus
//! is accepted. A form term is an optional product coefficient followed by a
//! wedge of differentials `dx<i>` joined by `^` or `∧`.

use num_rational::BigRational;
use num_traits::One;

use crate::error::{Error, Result};
use crate::field::Coefficient;
use crate::form::Form;
use crate::multi_index::MultiIndex;
use crate::poly::{parse_rational, Polynomial};

pub fn parse_polynomial(src: &str, nvars: usize) -> Result<Polynomial> {
    let mut p = Parser { src, bytes: src.as_bytes(), pos: 0, nvars };
    let out = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.error(format!("unexpected '{}'", &src[p.pos..p.pos + 1])));
    }
    Ok(out)
}

/// Parses a form literal on a chart of dimension `dim`. The degree is read
/// from the terms; `degree` is required only when the literal has no
/// differentials to infer it from (for example `0`) and must agree otherwise.
pub fn parse_form(src: &str, dim: usize, degree: Option<usize>) -> Result<Form<Polynomial>> {
    let mut p = Parser { src, bytes: src.as_bytes(), pos: 0, nvars: dim };
    let mut terms: Vec<(usize, Polynomial, Vec<usize>)> = Vec::new();
    let mut first = true;
    loop {
        let sign = match p.peek() {
            Some(b'+') => {
                p.pos += 1;
                1
            }
            Some(b'-') => {
                p.pos += 1;
                -1
            }
            None if !first => break,
            _ if first => 1,
            Some(c) => return Err(p.error(format!("expected '+' or '-' between terms, found '{}'", c as char))),
            None => break,
        };
        first = false;
        p.skip_ws();
        let start = p.pos;
        let coeff = if p.at_differential() { Polynomial::one(dim) } else { p.coefficient()? };
        if p.peek() == Some(b'*') {
            p.pos += 1;
            if !p.at_differential() {
                return Err(p.error("expected a differential dx<i> after '*'".into()));
            }
        }
        let mut axes = Vec::new();
        if p.at_differential() {
            loop {
                axes.push(p.differential()?);
                if !p.eat_wedge() {
                    break;
                }
                if !p.at_differential() {
                    return Err(p.error("expected a differential after the wedge".into()));
                }
            }
        }
        terms.push((start, if sign < 0 { -&coeff } else { coeff }, axes));
        if p.peek().is_none() {
            break;
        }
    }
    let inferred = terms.iter().find(|t| !t.2.is_empty()).map(|t| t.2.len());
    let deg = match (inferred, degree) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Parse { line: 1, column: 1, message: format!("form literal has degree {} but degree {} was declared", a, b) })
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => 0,
    };
    let mut out = Form::zero(dim, deg);
    for (start, c, axes) in terms {
        if axes.is_empty() && c.is_zero() {
            continue;
        }
        if axes.len() != deg {
            p.pos = start;
            return Err(p.error(format!("term of degree {} in a form of degree {}", axes.len(), deg)));
        }
        if deg == 0 {
            out.accumulate(MultiIndex::empty(), c)?;
            continue;
        }
        let zero_based: Vec<usize> = axes.iter().map(|a| a - 1).collect();
        let (idx, parity) = match MultiIndex::sort_with_parity(&zero_based) {
            (Some(i), parity) => (i, parity),
            (None, _) => continue,
        };
        out.accumulate(idx, c.signed(parity.sign()))?;
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl Parser<'_> {
    fn error(&self, message: String) -> Error {
        let before = &self.src[..self.pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Error::Parse { line, column, message }
    }

    fn at_differential(&mut self) -> bool {
        self.peek();
        self.bytes[self.pos..].starts_with(b"dx")
    }

    fn differential(&mut self) -> Result<usize> {
        self.skip_ws();
        self.pos += 2;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let i: usize = self.src[start..self.pos].parse().map_err(|_| self.error("expected axis number after 'dx'".into()))?;
        if i == 0 || i > self.nvars {
            self.pos = start;
            return Err(self.error(format!("differential dx{} outside 1..={}", i, self.nvars)));
        }
        Ok(i)
    }

    fn eat_wedge(&mut self) -> bool {
        self.skip_ws();
        let rest = &self.bytes[self.pos..];
        if rest.starts_with(b"^") {
            self.pos += 1;
            true
        } else if rest.starts_with("∧".as_bytes()) {
            self.pos += "∧".len();
            true
        } else {
            false
        }
    }

    /// A product of factors, stopping before `* dx` or a bare `dx`.
    fn coefficient(&mut self) -> Result<Polynomial> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    let save = self.pos;
                    self.pos += 1;
                    if self.at_differential() {
                        self.pos = save;
                        break;
                    }
                    acc = &acc * &self.unary()?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let d = self.number()?;
                    if num_traits::Zero::is_zero(&d) {
                        return Err(self.error("division by zero".into()));
                    }
                    acc = acc.scale(&(BigRational::one() / d));
                }
                Some(b'(') => acc = &acc * &self.power()?,
                _ => break,
            }
        }
        Ok(acc)
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

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                b'+' => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                b'-' => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = &acc * &self.unary()?;
                }
                Some(b'/') => {
                    // division only by numeric literals
                    self.pos += 1;
                    let d = self.number()?;
                    if num_traits::Zero::is_zero(&d) {
                        return Err(self.error("division by zero".into()));
                    }
                    acc = acc.scale(&(BigRational::one() / d));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected non-negative integer exponent".into()));
            }
            let k: u32 = self.src[start..self.pos].parse().map_err(|_| self.error("exponent too large".into()))?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn number(&mut self) -> Result<BigRational> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        // exponent part of a decimal literal
        if self.pos < self.bytes.len() && (self.bytes[self.pos] == b'e' || self.bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && (self.bytes[self.pos] == b'-' || self.bytes[self.pos] == b'+') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = save;
            }
        }
        if start == self.pos {
            return Err(self.error("expected number".into()));
        }
        parse_rational(&self.src[start..self.pos]).map_err(|_| {
            let mut e = self.error(format!("invalid number '{}'", &self.src[start..self.pos]));
            if let Error::Parse { column, .. } = &mut e {
                *column = start + 1;
            }
            e
        })
    }

    fn atom(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(b'x') => {
                let at = self.pos;
                self.pos += 1;
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let i: usize = self.src[start..self.pos]
                    .parse()
                    .map_err(|_| self.error("expected coordinate number after 'x'".into()))?;
                if i == 0 || i > self.nvars {
                    self.pos = at;
                    return Err(self.error(format!("coordinate x{} outside 1..={}", i, self.nvars)));
                }
                Ok(Polynomial::var(self.nvars, i - 1))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let r = self.number()?;
                Ok(Polynomial::constant(self.nvars, r))
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of input".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::rational;

    #[test]
    fn parses_and_normalizes() {
        let p = parse_polynomial("(1 + x1)^2 - 2*x1 - x1^2", 2).unwrap();
        assert_eq!(p, Polynomial::one(2));
        let q = parse_polynomial("3/4*x1*x3 - x2/2", 3).unwrap();
        assert_eq!(q.eval_rational(&[rational(2, 1), rational(1, 1), rational(1, 1)]), rational(1, 1));
        let r = parse_polynomial("-x1", 1).unwrap();
        assert_eq!(r.eval_rational(&[rational(3, 1)]), rational(-3, 1));
        let s = parse_polynomial("1.5e-1 * x1", 1).unwrap();
        assert_eq!(s.eval_rational(&[rational(1, 1)]), rational(3, 20));
    }

    #[test]
    fn parses_form_literals() {
        let a = parse_form("x2*dx1^dx3 - (x1 + 1) dx3∧dx2 + dx1 ^ dx1", 3, None).unwrap();
        let idx = |v: &[usize]| MultiIndex::from_one_based(v).unwrap();
        let expect = Form::from_terms(
            3,
            2,
            [(idx(&[1, 3]), parse_polynomial("x2", 3).unwrap()), (idx(&[2, 3]), parse_polynomial("x1 + 1", 3).unwrap())],
        )
        .unwrap();
        assert_eq!(a, expect);
        let z = parse_form("0", 2, Some(1)).unwrap();
        assert!(z.is_zero() && z.degree() == 1);
        assert_eq!(parse_form("x1^2", 2, None).unwrap().degree(), 0);
    }

    #[test]
    fn form_errors_carry_location() {
        match parse_form("x1*dx1 +\n  x2*dx1^dx2", 2, None) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {:?}", other),
        }
        match parse_form("dx1 + dx7", 3, None) {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 9),
            other => panic!("unexpected {:?}", other),
        }
        assert!(parse_form("x1 dx1 x2", 2, None).is_err());
        assert!(parse_form("dx1", 2, Some(2)).is_err());
    }

    #[test]
    fn errors_carry_location() {
        match parse_polynomial("1 + x4", 3) {
            Err(Error::Parse { column, .. }) => assert!(column >= 5),
            other => panic!("unexpected {:?}", other),
        }
        assert!(parse_polynomial("1 +", 2).is_err());
        assert!(parse_polynomial("x1 ^ -1", 2).is_err());
        assert!(parse_polynomial("x1 $ 2", 2).is_err());
    }
}
