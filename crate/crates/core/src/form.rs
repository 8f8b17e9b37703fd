//! Differential forms on an N-dimensional coordinate chart.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Coefficient;
use crate::multi_index::MultiIndex;
use crate::poly::Polynomial;

/// A differential form of fixed degree. Absent multi-indices have zero
/// coefficient; a form of degree greater than the chart dimension is
/// identically zero and has no terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Form<C> {
    dim: usize,
    degree: usize,
    terms: BTreeMap<MultiIndex, C>,
}

/// Pointwise form values: constant coefficients.
pub type FormValue = Form<f64>;

impl<C: Coefficient> Form<C> {
    pub fn zero(dim: usize, degree: usize) -> Self {
        Form { dim, degree, terms: BTreeMap::new() }
    }

    pub fn from_terms(dim: usize, degree: usize, terms: impl IntoIterator<Item = (MultiIndex, C)>) -> Result<Self> {
        let mut f = Form::zero(dim, degree);
        for (idx, c) in terms {
            f.check_index(&idx)?;
            f.accumulate(idx, c)?;
        }
        Ok(f)
    }

    fn check_index(&self, idx: &MultiIndex) -> Result<()> {
        if idx.valency() != self.degree {
            return Err(Error::DegreeOutOfRange(format!(
                "multi-index {} has valency {}, form has degree {}",
                idx,
                idx.valency(),
                self.degree
            )));
        }
        if idx.max_index().is_some_and(|m| m >= self.dim) {
            return Err(Error::DimensionMismatch(format!("multi-index {} exceeds chart dimension {}", idx, self.dim)));
        }
        Ok(())
    }

    /// Adds `c` to the coefficient at `idx`, dropping the entry if it cancels.
    pub fn accumulate(&mut self, idx: MultiIndex, c: C) -> Result<()> {
        if let Some(first) = self.terms.values().next() {
            if !first.compatible(&c) {
                return Err(Error::IncompatibleFields(format!("term {} does not match the form's representation", idx)));
            }
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(idx) {
            Entry::Vacant(v) => {
                if !c.is_zero() {
                    v.insert(c);
                }
            }
            Entry::Occupied(mut o) => {
                let s = o.get().add(&c);
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
        Ok(())
    }

    fn push_signed(&mut self, idx: MultiIndex, c: C, sign: i32) {
        if sign == 0 {
            return;
        }
        self.accumulate(idx, c.signed(sign)).expect("compatible by construction");
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> &BTreeMap<MultiIndex, C> {
        &self.terms
    }

    pub fn into_terms(self) -> BTreeMap<MultiIndex, C> {
        self.terms
    }

    pub fn coefficient(&self, idx: &MultiIndex) -> Option<&C> {
        self.terms.get(idx)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!("{}: chart dimensions {} and {}", what, self.dim, other.dim)));
        }
        if self.degree != other.degree {
            return Err(Error::DegreeOutOfRange(format!("{}: degrees {} and {}", what, self.degree, other.degree)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sum")?;
        let mut out = self.clone();
        for (idx, c) in &other.terms {
            out.accumulate(idx.clone(), c.clone())?;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.map(|c| c.neg())
    }

    /// Applies `f` to every coefficient, keeping indices.
    pub fn map<D: Coefficient>(&self, f: impl Fn(&C) -> D) -> Form<D> {
        let mut out = Form::zero(self.dim, self.degree);
        for (idx, c) in &self.terms {
            let v = f(c);
            if !v.is_zero() {
                out.terms.insert(idx.clone(), v);
            }
        }
        out
    }

    /// Multiplies every coefficient by the scalar field `s`.
    pub fn mul_scalar(&self, s: &C) -> Self {
        self.map(|c| c.mul(s))
    }

    /// Exterior product, with the shuffle sign of each merged index pair.
    pub fn wedge(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "wedge of forms on charts of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        if let (Some(a), Some(b)) = (self.terms.values().next(), other.terms.values().next()) {
            if !a.compatible(b) {
                return Err(Error::IncompatibleFields("wedge of forms with different coefficient grids".into()));
            }
        }
        let degree = self.degree + other.degree;
        let mut out = Form::zero(self.dim, degree);
        if degree > self.dim {
            return Ok(out);
        }
        for (i, a) in &self.terms {
            for (j, b) in &other.terms {
                let (k, parity) = i.join(j);
                if let Some(k) = k {
                    out.push_signed(k, a.mul(b), parity.sign());
                }
            }
        }
        Ok(out)
    }

    /// Exterior derivative `Σ_j ∂_j a_I dx^j ∧ dx^I`.
    pub fn exterior_derivative(&self) -> Self {
        let mut out = Form::zero(self.dim, self.degree + 1);
        if self.degree >= self.dim {
            return out;
        }
        for (idx, c) in &self.terms {
            for j in 0..self.dim {
                if idx.contains(j) {
                    continue;
                }
                let dc = c.partial(j);
                if dc.is_zero() {
                    continue;
                }
                let (k, parity) = idx.prepend(j);
                out.push_signed(k.expect("j not in idx"), dc, parity.sign());
            }
        }
        out
    }

    /// Interior product with the vector field whose components are `v`.
    pub fn interior(&self, v: &[C]) -> Result<Self> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch(format!("vector has {} components, chart has {}", v.len(), self.dim)));
        }
        let mut out = Form::zero(self.dim, self.degree.saturating_sub(1));
        if self.degree == 0 {
            return Ok(out);
        }
        for (idx, c) in &self.terms {
            for (pos, &i) in idx.indices().iter().enumerate() {
                let sign = if pos % 2 == 0 { 1 } else { -1 };
                let term = c.mul(&v[i]);
                if !term.is_zero() {
                    out.push_signed(idx.remove_at(pos), term, sign);
                }
            }
        }
        Ok(out)
    }

    /// Pointwise evaluation to a constant-coefficient form.
    pub fn eval(&self, x: &[f64]) -> FormValue {
        let mut out = Form::zero(self.dim, self.degree);
        for (idx, c) in &self.terms {
            let v = c.eval(x);
            if v != 0.0 {
                out.terms.insert(idx.clone(), v);
            }
        }
        out
    }

    /// Restricts to the terms whose multi-index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&MultiIndex) -> bool) -> Self {
        Form {
            dim: self.dim,
            degree: self.degree,
            terms: self.terms.iter().filter(|(i, _)| keep(i)).map(|(i, c)| (i.clone(), c.clone())).collect(),
        }
    }
}

impl Form<Polynomial> {
    /// The constant basis form `dx^I`.
    pub fn basis(dim: usize, idx: MultiIndex) -> Result<Self> {
        let deg = idx.valency();
        Form::from_terms(dim, deg, [(idx, Polynomial::one(dim))])
    }

    /// `dx^i` for a 0-based coordinate `i`.
    pub fn dx(dim: usize, i: usize) -> Self {
        Form::basis(dim, MultiIndex::single(i)).expect("valid coordinate")
    }

    pub fn scalar(p: Polynomial) -> Self {
        let dim = p.nvars();
        Form::from_terms(dim, 0, [(MultiIndex::empty(), p)]).expect("0-form")
    }

    /// True when every coefficient is constant, which makes the form closed.
    pub fn has_constant_coefficients(&self) -> bool {
        self.terms.values().all(|p| p.is_constant())
    }

    /// Largest absolute rational coefficient over all terms.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().map(|p| p.max_abs_coefficient()).fold(0.0, f64::max)
    }
}

impl FormValue {
    pub fn basis_value(dim: usize, idx: MultiIndex, c: f64) -> Result<Self> {
        let deg = idx.valency();
        Form::from_terms(dim, deg, [(idx, c)])
    }

    /// Coefficients in the lexicographic basis of all multi-indices of this degree.
    pub fn dense(&self) -> Vec<f64> {
        MultiIndex::all(self.dim, self.degree)
            .iter()
            .map(|i| self.terms.get(i).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn from_dense(dim: usize, degree: usize, values: &[f64]) -> Self {
        let mut out = Form::zero(dim, degree);
        for (i, v) in MultiIndex::all(dim, degree).into_iter().zip(values) {
            if *v != 0.0 {
                out.terms.insert(i, *v);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|c| c * s)
    }
}

/// Serialized document for a form: chart dimension, degree, representation
/// kind, and a list of (1-based multi-index, coefficient) entries.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormDoc<C> {
    pub chart_dim: usize,
    pub degree: usize,
    pub kind: String,
    pub terms: Vec<TermDoc<C>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDoc<C> {
    pub index: MultiIndex,
    pub coefficient: C,
}

impl<C: Coefficient + Serialize> Serialize for Form<C> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FormDoc {
            chart_dim: self.dim,
            degree: self.degree,
            kind: C::KIND.to_string(),
            terms: self
                .terms
                .iter()
                .map(|(i, c)| TermDoc { index: i.clone(), coefficient: c.clone() })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de, C: Coefficient + DeserializeOwned> Deserialize<'de> for Form<C> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = FormDoc::<C>::deserialize(d)?;
        if doc.kind != C::KIND {
            return Err(serde::de::Error::custom(format!(
                "expected a form of kind '{}', found '{}'",
                C::KIND,
                doc.kind
            )));
        }
        Form::from_terms(doc.chart_dim, doc.degree, doc.terms.into_iter().map(|t| (t.index, t.coefficient)))
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_polynomial;
    use crate::poly::rational;

    fn p(s: &str, n: usize) -> Polynomial {
        parse_polynomial(s, n).unwrap()
    }

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::from_one_based(v).unwrap()
    }

    #[test]
    fn wedge_basis_and_antisymmetry() {
        let dx1 = Form::dx(2, 0);
        let dx2 = Form::dx(2, 1);
        let a = dx1.wedge(&dx2).unwrap();
        assert_eq!(a, Form::basis(2, idx(&[1, 2])).unwrap());
        let b = dx2.wedge(&dx1).unwrap();
        assert_eq!(b, a.neg());
        assert!(dx1.wedge(&dx1).unwrap().is_zero());
    }

    #[test]
    fn wedge_dimension_mismatch() {
        assert!(Form::dx(2, 0).wedge(&Form::dx(3, 0)).is_err());
    }

    #[test]
    fn wedge_beyond_top_degree_is_zero() {
        let a = Form::basis(2, idx(&[1, 2])).unwrap();
        let w = a.wedge(&Form::dx(2, 0)).unwrap();
        assert_eq!(w.degree(), 3);
        assert!(w.is_zero());
    }

    #[test]
    fn derivative_examples() {
        // d(x1 dx2) = dx1∧dx2
        let a = Form::from_terms(2, 1, [(idx(&[2]), p("x1", 2))]).unwrap();
        assert_eq!(a.exterior_derivative(), Form::basis(2, idx(&[1, 2])).unwrap());
        // d(x1 x2 dx1 + x1^2 dx2) = x1 dx1∧dx2
        let b = Form::from_terms(2, 1, [(idx(&[1]), p("x1*x2", 2)), (idx(&[2]), p("x1^2", 2))]).unwrap();
        let db = b.exterior_derivative();
        assert_eq!(db, Form::from_terms(2, 2, [(idx(&[1, 2]), p("x1", 2))]).unwrap());
        // d∘d on a 0-form
        let f = Form::scalar(p("x1^3*x2 - 5*x2^2*x1 + 7", 2));
        assert!(f.exterior_derivative().exterior_derivative().is_zero());
    }

    #[test]
    fn top_degree_derivative_is_zero_form_of_next_degree() {
        let a = Form::from_terms(2, 2, [(idx(&[1, 2]), p("x1*x2", 2))]).unwrap();
        let d = a.exterior_derivative();
        assert!(d.is_zero());
        assert_eq!(d.degree(), 3);
        let z: Form<Polynomial> = Form::zero(3, 1);
        assert!(z.exterior_derivative().is_zero());
        assert!(z.wedge(&z).unwrap().is_zero());
    }

    #[test]
    fn interior_product_of_area_form() {
        // ι_v (dx1∧dx2) = v1 dx2 - v2 dx1
        let a = Form::basis(2, idx(&[1, 2])).unwrap();
        let v = [p("x1", 2), p("x2", 2)];
        let r = a.interior(&v).unwrap();
        let expect = Form::from_terms(2, 1, [(idx(&[1]), p("-x2", 2)), (idx(&[2]), p("x1", 2))]).unwrap();
        assert_eq!(r, expect);
    }

    #[test]
    fn rejects_bad_terms() {
        assert!(Form::from_terms(2, 1, [(idx(&[1, 2]), p("1", 2))]).is_err());
        assert!(Form::from_terms(2, 1, [(idx(&[3]), p("1", 2))]).is_err());
    }

    #[test]
    fn serialization_uses_one_based_indices() {
        let a = Form::from_terms(3, 1, [(idx(&[3]), Polynomial::constant(3, rational(1, 2)))]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"index\":[3]"), "{}", s);
        let back: Form<Polynomial> = serde_json::from_str(&s).unwrap();
        assert_eq!(a, back);
        let wrong_kind = s.replace("polynomial", "sampled");
        assert!(serde_json::from_str::<Form<Polynomial>>(&wrong_kind).is_err());
    }
}
