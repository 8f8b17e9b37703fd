//! Coefficient fields for differential forms.
//!
//! Three representations share one trait: exact rational polynomials,
//! grid-sampled values with a fixed 4th-order stencil, and black-box
//! callables. Plain `f64` is also a coefficient (a constant field), which is
//! how pointwise form values are represented.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Operations a coefficient needs for the exterior algebra.
pub trait Coefficient: Clone + Send + Sync + fmt::Debug {
    /// Short name used in serialized documents.
    const KIND: &'static str;
    /// Whether arithmetic in this representation is exact.
    const EXACT: bool;

    /// A constant field with value `c` in the same representation (same
    /// variable count or grid) as `self`.
    fn constant_like(&self, c: f64) -> Self;
    /// A size measure used for residual tolerances: largest absolute
    /// coefficient or sample value.
    fn magnitude(&self) -> f64;

    fn is_zero(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn partial(&self, axis: usize) -> Self;
    fn eval(&self, x: &[f64]) -> f64;

    /// Whether `self` and `other` may be combined pointwise.
    fn compatible(&self, _other: &Self) -> bool {
        true
    }

    fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    fn signed(&self, sign: i32) -> Self {
        if sign < 0 {
            self.neg()
        } else {
            self.clone()
        }
    }
}

impl Coefficient for Polynomial {
    const KIND: &'static str = "polynomial";
    const EXACT: bool = true;

    fn constant_like(&self, c: f64) -> Self {
        let r = crate::poly::rational_from_f64(c).expect("finite constant");
        Polynomial::constant(self.nvars(), r)
    }
    fn magnitude(&self) -> f64 {
        self.max_abs_coefficient()
    }

    fn is_zero(&self) -> bool {
        Polynomial::is_zero(self)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn partial(&self, axis: usize) -> Self {
        Polynomial::partial(self, axis)
    }
    fn eval(&self, x: &[f64]) -> f64 {
        Polynomial::eval(self, x)
    }
    fn compatible(&self, other: &Self) -> bool {
        self.nvars() == other.nvars()
    }
}

impl Coefficient for f64 {
    const KIND: &'static str = "constant";
    const EXACT: bool = false;

    fn constant_like(&self, c: f64) -> Self {
        c
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn partial(&self, _axis: usize) -> Self {
        0.0
    }
    fn eval(&self, _x: &[f64]) -> f64 {
        *self
    }
}

/// An axis-aligned coordinate box `[lo, hi]` in N dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoordBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch("box corners differ in dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidProblem(format!("degenerate box lo={:?} hi={:?}", lo, hi)));
        }
        Ok(CoordBox { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        CoordBox { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a < *v && *v < *b)
    }
}

/// A regular grid of nodes over a box, `shape[a]` nodes along axis `a`
/// including both endpoints. Values are stored row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(rename = "box")]
    pub bounds: CoordBox,
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: CoordBox, shape: Vec<usize>) -> Result<Self> {
        if shape.len() != bounds.dim() {
            return Err(Error::DimensionMismatch("grid shape and box differ in dimension".into()));
        }
        if shape.iter().any(|&m| m < 2) {
            return Err(Error::InvalidProblem("grids need at least 2 nodes per axis".into()));
        }
        Ok(Grid { bounds, shape })
    }

    pub fn uniform(bounds: CoordBox, nodes: usize) -> Result<Self> {
        let d = bounds.dim();
        Grid::new(bounds, vec![nodes; d])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.bounds.side(axis) / (self.shape[axis] - 1) as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.spacing(a)).collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for a in (0..self.dim().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.shape[a + 1];
        }
        s
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        out
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, m)| acc * m + i)
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        // endpoints exact
        if i + 1 == self.shape[axis] {
            self.bounds.hi[axis]
        } else {
            self.bounds.lo[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi(flat).iter().enumerate().map(|(a, &i)| self.coordinate(a, i)).collect()
    }

    pub fn is_boundary(&self, idx: &[usize]) -> bool {
        idx.iter().zip(&self.shape).any(|(&i, &m)| i == 0 || i + 1 == m)
    }
}

/// 4th-order first-derivative stencil weights (to be divided by `12 h`) for
/// node `i` on an axis with `m >= 5` nodes: returns (first node, weights).
pub fn derivative_stencil(i: usize, m: usize) -> (usize, [f64; 5]) {
    debug_assert!(m >= 5);
    if i == 0 {
        (0, [-25.0, 48.0, -36.0, 16.0, -3.0])
    } else if i == 1 {
        (0, [-3.0, -10.0, 18.0, -6.0, 1.0])
    } else if i + 2 == m {
        (m - 5, [-1.0, 6.0, -18.0, 10.0, 3.0])
    } else if i + 1 == m {
        (m - 5, [3.0, -16.0, 36.0, -48.0, 25.0])
    } else {
        (i - 2, [1.0, -8.0, 0.0, 8.0, -1.0])
    }
}

/// Cubic (4-point Lagrange) interpolation weights on an axis with `m >= 4`
/// nodes at fractional node coordinate `s` in `[0, m-1]`: returns (first node, weights).
pub fn cubic_weights(s: f64, m: usize) -> (usize, [f64; 4]) {
    debug_assert!(m >= 4);
    let cell = (s.floor().max(0.0) as usize).min(m - 2);
    let start = cell.saturating_sub(1).min(m - 4);
    let mut w = [0.0; 4];
    for (a, wa) in w.iter_mut().enumerate() {
        let xa = (start + a) as f64;
        let mut v = 1.0;
        for b in 0..4 {
            if b != a {
                let xb = (start + b) as f64;
                v *= (s - xb) / (xa - xb);
            }
        }
        *wa = v;
    }
    (start, w)
}

/// Values on a regular grid. Derivatives use 4th-order central differences
/// (one-sided 4th order at the boundary); off-grid evaluation uses
/// tensor-product cubic interpolation.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl SampledField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} nodes but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        Ok(SampledField { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        SampledField { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let n = grid.len();
        SampledField { grid, values: vec![c; n] }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.grid == other.grid, "sampled fields live on different grids");
        SampledField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl fmt::Debug for SampledField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SampledField(shape={:?}, max|v|={:e})", self.grid.shape, self.max_abs())
    }
}

impl Coefficient for SampledField {
    const KIND: &'static str = "sampled";
    const EXACT: bool = false;

    fn constant_like(&self, c: f64) -> Self {
        SampledField::constant(self.grid.clone(), c)
    }
    fn magnitude(&self) -> f64 {
        self.max_abs()
    }

    fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    fn neg(&self) -> Self {
        SampledField { grid: self.grid.clone(), values: self.values.iter().map(|v| -v).collect() }
    }

    fn mul(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    fn partial(&self, axis: usize) -> Self {
        let g = &self.grid;
        let m = g.shape[axis];
        assert!(m >= 5, "4th-order stencil needs at least 5 nodes along axis {}", axis + 1);
        let stride = g.strides()[axis];
        let scale = 1.0 / (12.0 * g.spacing(axis));
        let mut out = vec![0.0; self.values.len()];
        for (k, o) in out.iter_mut().enumerate() {
            let i = (k / stride) % m;
            let base = k - i * stride;
            let (start, w) = derivative_stencil(i, m);
            let mut acc = 0.0;
            for (t, wt) in w.iter().enumerate() {
                acc += wt * self.values[base + (start + t) * stride];
            }
            *o = acc * scale;
        }
        SampledField { grid: g.clone(), values: out }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let strides = g.strides();
        let mut starts = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        for a in 0..d {
            let s = (x[a] - g.bounds.lo[a]) / g.spacing(a);
            let (st, w) = if g.shape[a] >= 4 {
                let (st, w) = cubic_weights(s, g.shape[a]);
                (st, w.to_vec())
            } else {
                // linear fallback on very coarse axes
                let cell = (s.floor().max(0.0) as usize).min(g.shape[a] - 2);
                let t = s - cell as f64;
                (cell, vec![1.0 - t, t])
            };
            starts.push(st);
            weights.push(w);
        }
        // tensor-product sum
        let counts: Vec<usize> = weights.iter().map(|w| w.len()).collect();
        let total: usize = counts.iter().product();
        let mut acc = 0.0;
        for t in 0..total {
            let mut rem = t;
            let mut w = 1.0;
            let mut flat = 0;
            for a in (0..d).rev() {
                let ia = rem % counts[a];
                rem /= counts[a];
                w *= weights[a][ia];
                flat += (starts[a] + ia) * strides[a];
            }
            acc += w * self.values[flat];
        }
        acc
    }

    fn compatible(&self, other: &Self) -> bool {
        self.grid == other.grid
    }
}

/// A black-box scalar field. Partial derivatives use a 4th-order central
/// difference with step [`CallableField::STEP`].
#[derive(Clone)]
pub struct CallableField {
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    label: Arc<str>,
}

impl CallableField {
    pub const STEP: f64 = 1e-3;

    pub fn new(label: impl Into<Arc<str>>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CallableField { f: Arc::new(f), label: label.into() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for CallableField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Callable({})", self.label)
    }
}

impl Coefficient for CallableField {
    const KIND: &'static str = "callable";
    const EXACT: bool = false;

    fn constant_like(&self, c: f64) -> Self {
        CallableField::new(format!("{}", c), move |_| c)
    }
    /// Callables cannot be inspected; their magnitude is unknown.
    fn magnitude(&self) -> f64 {
        f64::NAN
    }

    fn is_zero(&self) -> bool {
        false
    }

    fn add(&self, other: &Self) -> Self {
        let (a, b) = (self.f.clone(), other.f.clone());
        CallableField::new(format!("({} + {})", self.label, other.label), move |x| a(x) + b(x))
    }

    fn neg(&self) -> Self {
        let a = self.f.clone();
        CallableField::new(format!("-{}", self.label), move |x| -a(x))
    }

    fn mul(&self, other: &Self) -> Self {
        let (a, b) = (self.f.clone(), other.f.clone());
        CallableField::new(format!("{}*{}", self.label, other.label), move |x| a(x) * b(x))
    }

    fn partial(&self, axis: usize) -> Self {
        let a = self.f.clone();
        let h = Self::STEP;
        CallableField::new(format!("d{}({})", axis + 1, self.label), move |x| {
            let mut y = x.to_vec();
            let mut at = |dx: f64| {
                y[axis] = x[axis] + dx;
                a(&y)
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
