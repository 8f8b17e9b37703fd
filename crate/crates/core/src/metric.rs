//! Riemannian metrics on a coordinate chart.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::form::FormValue;
use crate::multi_index::MultiIndex;
use crate::poly::{CompiledPoly, Polynomial};

#[derive(Clone)]
enum Kind {
    Euclidean,
    Diagonal(Vec<Polynomial>, Vec<CompiledPoly>),
    Dense(Vec<Vec<Polynomial>>, Vec<Vec<CompiledPoly>>),
    Callable(Arc<str>, Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>),
}

/// A symmetric positive-definite matrix field `g(x)` on an N-dimensional chart.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    kind: Kind,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Euclidean => write!(f, "Euclidean({})", self.dim),
            Kind::Diagonal(d, _) => write!(f, "Diagonal({:?})", d),
            Kind::Dense(m, _) => write!(f, "Dense({:?})", m),
            Kind::Callable(l, _) => write!(f, "Callable({})", l),
        }
    }
}

/// The metric and derived quantities at one point.
#[derive(Clone, Debug)]
pub struct MetricAt {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub sqrt_det: f64,
    /// Lower Cholesky factor of `g`.
    pub chol: DMatrix<f64>,
}

impl MetricField {
    pub fn euclidean(dim: usize) -> Self {
        MetricField { dim, kind: Kind::Euclidean }
    }

    pub fn diagonal(entries: Vec<Polynomial>) -> Result<Self> {
        let dim = entries.len();
        if entries.iter().any(|p| p.nvars() != dim) {
            return Err(Error::DimensionMismatch("metric entries must be polynomials in the chart dimension".into()));
        }
        let compiled = entries.iter().map(|p| p.compile()).collect();
        Ok(MetricField { dim, kind: Kind::Diagonal(entries, compiled) })
    }

    pub fn dense(entries: Vec<Vec<Polynomial>>) -> Result<Self> {
        let dim = entries.len();
        if entries.iter().any(|row| row.len() != dim || row.iter().any(|p| p.nvars() != dim)) {
            return Err(Error::DimensionMismatch("dense metric must be an N x N array of N-variable polynomials".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if entries[i][j] != entries[j][i] {
                    return Err(Error::InvalidProblem(format!(
                        "metric entries ({},{}) and ({},{}) differ",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        let compiled = entries.iter().map(|r| r.iter().map(|p| p.compile()).collect()).collect();
        Ok(MetricField { dim, kind: Kind::Dense(entries, compiled) })
    }

    pub fn callable(dim: usize, label: impl Into<Arc<str>>, f: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        MetricField { dim, kind: Kind::Callable(label.into(), Arc::new(f)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, Kind::Euclidean)
    }

    /// `c² g` for a constant `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let base = self.clone();
        let c2 = c * c;
        MetricField::callable(self.dim, format!("{}^2 * {:?}", c, self), move |x| base.eval(x) * c2)
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        match &self.kind {
            Kind::Euclidean => DMatrix::identity(d, d),
            Kind::Diagonal(_, c) => DMatrix::from_fn(d, d, |i, j| if i == j { c[i].eval(x) } else { 0.0 }),
            Kind::Dense(_, c) => DMatrix::from_fn(d, d, |i, j| c[i][j].eval(x)),
            Kind::Callable(_, f) => f(x),
        }
    }

    /// Evaluates and checks symmetry and positive-definiteness at `x`.
    pub fn at(&self, x: &[f64]) -> Result<MetricAt> {
        let g = self.eval(x);
        if let Kind::Euclidean = self.kind {
            let d = self.dim;
            return Ok(MetricAt { g: g.clone(), g_inv: g.clone(), sqrt_det: 1.0, chol: DMatrix::identity(d, d) });
        }
        let asym = (&g - g.transpose()).abs().max();
        if !asym.is_finite() || asym > 1e-12 * (1.0 + g.abs().max()) {
            return Err(Error::MetricNotSpd { point: x.to_vec() });
        }
        let chol = g.clone().cholesky().ok_or_else(|| Error::MetricNotSpd { point: x.to_vec() })?;
        let l = chol.l();
        let sqrt_det: f64 = l.diagonal().iter().product();
        let g_inv = chol.inverse();
        Ok(MetricAt { g, g_inv, sqrt_det, chol: l })
    }

    /// `√det g(x)`, the Riemannian volume density.
    pub fn sqrt_det(&self, x: &[f64]) -> Result<f64> {
        if let Kind::Diagonal(_, c) = &self.kind {
            let mut det = 1.0;
            for ci in c {
                let v = ci.eval(x);
                if !(v > 0.0) {
                    return Err(Error::MetricNotSpd { point: x.to_vec() });
                }
                det *= v;
            }
            return Ok(det.sqrt());
        }
        self.at(x).map(|m| m.sqrt_det)
    }
}

impl MetricAt {
    /// Inverse-metric pairing of two covectors, `g⁻¹(p, q)`.
    pub fn covector_dot(&self, p: &[f64], q: &[f64]) -> f64 {
        let d = p.len();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += p[i] * self.g_inv[(i, j)] * q[j];
            }
        }
        acc
    }

    /// Induced inner product of basis ℓ-covectors: `⟨dx^I, dx^J⟩ = det g⁻¹[I, J]`.
    pub fn basis_dot(&self, i: &MultiIndex, j: &MultiIndex) -> f64 {
        let l = i.valency();
        if l == 0 {
            return 1.0;
        }
        let m = DMatrix::from_fn(l, l, |a, b| self.g_inv[(i.indices()[a], j.indices()[b])]);
        m.determinant()
    }

    /// Induced inner product of two ℓ-covectors.
    pub fn form_dot(&self, a: &FormValue, b: &FormValue) -> f64 {
        let mut acc = 0.0;
        for (i, ca) in a.terms() {
            for (j, cb) in b.terms() {
                acc += ca * cb * self.basis_dot(i, j);
            }
        }
        acc
    }
}
