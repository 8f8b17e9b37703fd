//! Exact multivariate polynomials over the rationals.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
pub type Exponents = Vec<u32>;

/// A polynomial in `nvars` variables with exact rational coefficients, kept in
/// normal form (no zero coefficients stored).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Exponents, BigRational>,
}

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rational_from_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // fall back through the string form for huge numerators/denominators
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: BigRational) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn from_integer(nvars: usize, c: i64) -> Self {
        Polynomial::constant(nvars, BigRational::from_integer(BigInt::from(c)))
    }

    pub fn one(nvars: usize) -> Self {
        Polynomial::from_integer(nvars, 1)
    }

    /// The coordinate function `x^i` (0-based).
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable {} out of range for {} variables", i, nvars);
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Polynomial::zero(nvars);
        p.add_term(e, BigRational::one());
        p
    }

    pub fn monomial(exponents: Exponents, c: BigRational) -> Self {
        let mut p = Polynomial::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Exponents, BigRational)>) -> Result<Self> {
        let mut p = Polynomial::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(Error::DimensionMismatch(format!(
                    "monomial has {} exponents, polynomial has {} variables",
                    e.len(),
                    nvars
                )));
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    pub fn add_term(&mut self, e: Exponents, c: BigRational) {
        debug_assert_eq!(e.len(), self.nvars);
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(e) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &BigRational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn total_degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|e| e.iter().all(|&k| k == 0))
    }

    pub fn constant_term(&self) -> BigRational {
        self.terms.get(&vec![0; self.nvars]).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Polynomial::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    /// Exact partial derivative with respect to variable `i` (0-based).
    pub fn partial(&self, i: usize) -> Self {
        let mut out = Polynomial::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            let k = e2[i];
            e2[i] -= 1;
            out.add_term(e2, c * BigRational::from_integer(BigInt::from(k)));
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Polynomial::one(self.nvars);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    pub fn eval_rational(&self, x: &[BigRational]) -> BigRational {
        assert_eq!(x.len(), self.nvars);
        let mut acc = BigRational::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (xi, &k) in x.iter().zip(e) {
                for _ in 0..k {
                    t *= xi;
                }
            }
            acc += t;
        }
        acc
    }

    /// Floating-point evaluation. For repeated evaluation prefer [`Polynomial::compile`].
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.compile().eval(x)
    }

    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), rational_to_f64(c)))
                .collect(),
        }
    }

    /// Substitutes `subs[i]` for variable `i`. All substitutes must share the
    /// same variable count, which becomes the variable count of the result.
    pub fn compose(&self, subs: &[Polynomial]) -> Result<Self> {
        if subs.len() != self.nvars {
            return Err(Error::DimensionMismatch(format!(
                "composition needs {} substitutes, got {}",
                self.nvars,
                subs.len()
            )));
        }
        let m = subs.first().map(|p| p.nvars).unwrap_or(0);
        if subs.iter().any(|p| p.nvars != m) {
            return Err(Error::DimensionMismatch("substitutes have differing variable counts".into()));
        }
        // cache powers per variable
        let mut powers: Vec<Vec<Polynomial>> = subs.iter().map(|p| vec![Polynomial::one(m), p.clone()]).collect();
        let mut out = Polynomial::zero(m);
        for (e, c) in &self.terms {
            let mut t = Polynomial::constant(m, c.clone());
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while powers[i].len() <= k as usize {
                    let next = powers[i].last().unwrap() * &subs[i];
                    powers[i].push(next);
                }
                t = &t * &powers[i][k as usize];
            }
            out = &out + &t;
        }
        Ok(out)
    }

    /// Re-expresses the polynomial in shifted variables: returns `q` with
    /// `q(y) = p(y + offset)`.
    pub fn shift(&self, offset: &[BigRational]) -> Self {
        let subs: Vec<Polynomial> = (0..self.nvars)
            .map(|i| &Polynomial::var(self.nvars, i) + &Polynomial::constant(self.nvars, offset[i].clone()))
            .collect();
        self.compose(&subs).expect("shift keeps the variable count")
    }

    /// Applies `f(total_degree)` as a rational weight to every monomial.
    pub fn map_by_degree(&self, f: impl Fn(u32) -> BigRational) -> Self {
        let mut out = Polynomial::zero(self.nvars);
        for (e, c) in &self.terms {
            let d: u32 = e.iter().sum();
            out.add_term(e.clone(), c * f(d));
        }
        out
    }

    /// Embeds into a larger variable set: variable `i` becomes `map[i]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Self {
        let mut out = Polynomial::zero(nvars);
        for (e, c) in &self.terms {
            let mut e2 = vec![0; nvars];
            for (i, &k) in e.iter().enumerate() {
                e2[map[i]] += k;
            }
            out.add_term(e2, c.clone());
        }
        out
    }

    /// Largest absolute coefficient, as f64 (0 for the zero polynomial).
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().map(|c| rational_to_f64(&c.abs())).fold(0.0, f64::max)
    }
}

/// A polynomial with f64 coefficients for fast repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    nvars: usize,
    terms: Vec<(Exponents, f64)>,
}

impl CompiledPoly {
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut t = *c;
            for (xi, &k) in x.iter().zip(e) {
                t *= xi.powi(k as i32);
            }
            acc += t;
        }
        acc
    }

    /// Value and gradient at `x`.
    pub fn eval_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut t = *c;
            for (xi, &k) in x.iter().zip(e) {
                t *= xi.powi(k as i32);
            }
            acc += t;
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let mut d = *c * k as f64;
                for (j, (xj, &kj)) in x.iter().zip(e).enumerate() {
                    let p = if j == i { kj - 1 } else { kj };
                    d *= xj.powi(p as i32);
                }
                grad[i] += d;
            }
        }
        acc
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "polynomial variable counts differ");
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "polynomial variable counts differ");
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), -c.clone())).collect(),
        }
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "polynomial variable counts differ");
        let mut out = Polynomial::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Exponents = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (e, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { "-" } else { "+" })?;
            }
            let is_const = e.iter().all(|&p| p == 0);
            let unit = mag.is_one();
            if !unit || is_const {
                if mag.is_integer() {
                    write!(f, "{}", mag.numer())?;
                } else {
                    write!(f, "{}/{}", mag.numer(), mag.denom())?;
                }
            }
            let mut first = unit && !is_const;
            for (i, &p) in e.iter().enumerate() {
                if p == 0 {
                    continue;
                }
                if !first {
                    write!(f, "*")?;
                }
                first = false;
                write!(f, "x{}", i + 1)?;
                if p > 1 {
                    write!(f, "^{}", p)?;
                }
            }
        }
        Ok(())
    }
}

/// Serialized form of a polynomial: a sparse list of monomials with rational
/// coefficients written as `"p/q"` strings.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyDoc {
    nvars: usize,
    monomials: Vec<MonomialDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonomialDoc {
    exponents: Vec<u32>,
    coefficient: String,
}

pub fn format_rational(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse { line: 0, column: 0, message: format!("invalid rational '{}'", s) };
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(n, d))
        }
        None => {
            if let Ok(n) = s.parse::<BigInt>() {
                return Ok(BigRational::from_integer(n));
            }
            // decimal literal: exact decimal value, not the binary float
            parse_decimal(s).ok_or_else(bad)
        }
    }
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(p) => (&s[..p], s[p + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = format!("{}{}", int, frac);
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let num: BigInt = digits.parse().ok()?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(num);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -r } else { r })
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyDoc {
            nvars: self.nvars,
            monomials: self
                .terms
                .iter()
                .map(|(e, c)| MonomialDoc { exponents: e.clone(), coefficient: format_rational(c) })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = PolyDoc::deserialize(d)?;
        let mut terms = Vec::with_capacity(doc.monomials.len());
        for m in doc.monomials {
            let c = parse_rational(&m.coefficient).map_err(serde::de::Error::custom)?;
            terms.push((m.exponents, c));
        }
        Polynomial::from_terms(doc.nvars, terms).map_err(serde::de::Error::custom)
    }
}
