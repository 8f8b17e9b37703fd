//! Falsification tests for quasiconvexity of integrands `F(x, p)` over
//! boxes, in the Euclidean and the volume-weighted Riemannian sense.
//!
//! A trial draws a test field `ζ` vanishing on the boundary of the region
//! `D` and evaluates
//!
//! ```text
//! gap(ζ) = (1/𝓥) ∫_D F(x, p + dζ) dVol − F(x₀, p),   𝓥 = √det g(x₀)·|D|
//! ```
//!
//! A gap below `−tol` is a violation. Not finding one proves nothing.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::CoordBox;
use crate::metric::MetricField;
use crate::multi_index::MultiIndex;
use crate::pullback::Diffeomorphism;
use crate::quadrature::{gauss_legendre_on, TensorRule};
use crate::relaxation::GaugedCost;
use crate::rng::{normal, stream_rng, streams};

/// A continuous function of a point and a form value in the dense
/// lexicographic basis of degree [`Integrand::slot_degree`].
pub trait Integrand: Send + Sync {
    fn dim(&self) -> usize;
    fn slot_degree(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], p: &[f64]) -> f64;
    fn name(&self) -> String;
}

impl fmt::Debug for dyn Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Integrand({})", self.name())
    }
}

/// `sign · g⁻¹(x)(p, p)`.
#[derive(Clone, Debug)]
pub struct MetricQuadratic {
    pub metric: MetricField,
    pub sign: f64,
}

impl Integrand for MetricQuadratic {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        match self.metric.at(x) {
            Ok(m) => self.sign * m.covector_dot(p, p),
            Err(_) => f64::NAN,
        }
    }
    fn name(&self) -> String {
        if self.sign < 0.0 { "negated metric quadratic".into() } else { "metric quadratic".into() }
    }
}

/// `pᵀ A p + b·p + c`, independent of `x`.
#[derive(Clone, Debug)]
pub struct ConstantQuadratic {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl Integrand for ConstantQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn eval(&self, _x: &[f64], p: &[f64]) -> f64 {
        let v = DVector::from_column_slice(p);
        (v.transpose() * &self.a * &v)[(0, 0)] + self.b.iter().zip(p).map(|(b, p)| b * p).sum::<f64>() + self.c
    }
    fn name(&self) -> String {
        "constant quadratic".into()
    }
}

/// The Euclidean length `|p|`.
#[derive(Clone, Debug)]
pub struct EuclideanNorm {
    pub dim: usize,
}

impl Integrand for EuclideanNorm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], p: &[f64]) -> f64 {
        p.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
    fn name(&self) -> String {
        "norm".into()
    }
}

/// `min(|p − e|², |p + e|²)`.
#[derive(Clone, Debug)]
pub struct DoubleWell {
    pub e: Vec<f64>,
}

impl Integrand for DoubleWell {
    fn dim(&self) -> usize {
        self.e.len()
    }
    fn eval(&self, _x: &[f64], p: &[f64]) -> f64 {
        let (mut minus, mut plus) = (0.0, 0.0);
        for (pi, ei) in p.iter().zip(&self.e) {
            minus += (pi - ei) * (pi - ei);
            plus += (pi + ei) * (pi + ei);
        }
        minus.min(plus)
    }
    fn name(&self) -> String {
        "double well".into()
    }
}

/// A closure integrand.
#[derive(Clone)]
pub struct FnIntegrand {
    pub dim: usize,
    pub slot_degree: usize,
    pub label: String,
    pub f: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
}

impl Integrand for FnIntegrand {
    fn dim(&self) -> usize {
        self.dim
    }
    fn slot_degree(&self) -> usize {
        self.slot_degree
    }
    fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        (self.f)(x, p)
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// `α F + β`.
#[derive(Clone)]
pub struct AffineRescaled {
    pub inner: Arc<dyn Integrand>,
    pub alpha: f64,
    pub beta: f64,
}

impl Integrand for AffineRescaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn slot_degree(&self) -> usize {
        self.inner.slot_degree()
    }
    fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        self.alpha * self.inner.eval(x, p) + self.beta
    }
    fn name(&self) -> String {
        format!("{} * ({}) + {}", self.alpha, self.inner.name(), self.beta)
    }
}

/// A gauged cost viewed as an integrand of its ℓ-form argument.
#[derive(Clone)]
pub struct CostIntegrand {
    pub gauged: GaugedCost,
}

impl Integrand for CostIntegrand {
    fn dim(&self) -> usize {
        self.gauged.layout.n + self.gauged.layout.k
    }
    fn slot_degree(&self) -> usize {
        self.gauged.layout.ell
    }
    fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        self.gauged.eval_dense(x, p)
    }
    fn name(&self) -> String {
        format!("gauged {}", self.gauged.cost.name())
    }
}

/// `F̂(x̂, p̂) = √det g(Φ(x̂)) · F(Φ(x̂), DΦ(x̂)^{-T} p̂)`.
#[derive(Clone)]
pub struct ReducedIntegrand {
    pub inner: Arc<dyn Integrand>,
    pub phi: Diffeomorphism,
    pub metric: MetricField,
}

impl Integrand for ReducedIntegrand {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, xh: &[f64], ph: &[f64]) -> f64 {
        let x = self.phi.apply(xh);
        let (Ok(p), Ok(sd)) = (self.phi.pushforward_covector(xh, ph), self.metric.sqrt_det(&x)) else {
            return f64::NAN;
        };
        sd * self.inner.eval(&x, &p)
    }
    fn name(&self) -> String {
        format!("reduced {}", self.inner.name())
    }
}

/// Rewrites an integrand on a curved chart as one on the reference box of
/// `phi`, for Euclidean testing.
pub fn change_of_variables_reduction(
    f: Arc<dyn Integrand>,
    phi: Diffeomorphism,
    metric: MetricField,
) -> Result<ReducedIntegrand> {
    if f.slot_degree() != 1 {
        return Err(Error::InvalidProblem("change of variables is implemented for 1-form slots".into()));
    }
    if phi.dim() != f.dim() || metric.dim() != f.dim() {
        return Err(Error::DimensionMismatch(format!(
            "integrand on dimension {}, map on {}, metric on {}",
            f.dim(),
            phi.dim(),
            metric.dim()
        )));
    }
    Ok(ReducedIntegrand { inner: f, phi, metric })
}

/// `𝓥(x₀, D) = ∫_D √det g(x₀)/√det g(x) dVol(x)` by quadrature, next to the
/// closed form `√det g(x₀)·|D|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeGrowth {
    pub value: f64,
    pub quadrature: f64,
    pub sqrt_det_center: f64,
}

pub fn volume_growth_factor(x0: &[f64], region: &CoordBox, metric: &MetricField) -> Result<VolumeGrowth> {
    if !region.contains(x0) {
        return Err(Error::InvalidProblem(format!("point {:?} is outside the region", x0)));
    }
    let sd0 = metric.sqrt_det(x0)?;
    let rule = TensorRule::new(region, 4, 2);
    let mut quadrature = 0.0;
    for (x, w) in rule.points.iter().zip(&rule.weights) {
        let sd = metric.sqrt_det(x)?;
        quadrature += w * (sd0 / sd) * sd;
    }
    Ok(VolumeGrowth { value: sd0 * region.volume(), quadrature, sqrt_det_center: sd0 })
}

/// Test-field families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `A · Π 4y(1−y) · q(y)` with `y` the normalized coordinates and `q` a
    /// random quadratic.
    Bubble,
    /// `A · min` over faces of the normalized distance to the face, measured
    /// against the apex: linear on each pyramid from the apex to a face.
    Hat,
}

/// One test field of degree r−1, one scalar component per (r−1)-index.
/// Hat components share the apex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub family: Family,
    pub region: CoordBox,
    pub amplitudes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub apex: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shapes: Vec<Vec<f64>>,
}

fn shape_len(dim: usize) -> usize {
    1 + dim + dim * (dim + 1) / 2
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn components(&self) -> usize {
        self.amplitudes.len()
    }

    fn normalized(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|a| (x[a] - self.region.lo[a]) / self.region.side(a)).collect()
    }

    /// Which pyramid of a hat contains `x`: `2a` for the lower face of axis
    /// `a`, `2a + 1` for the upper.
    pub fn hat_piece(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for a in 0..self.dim() {
            let lo = (x[a] - self.region.lo[a]) / (self.apex[a] - self.region.lo[a]);
            let hi = (self.region.hi[a] - x[a]) / (self.region.hi[a] - self.apex[a]);
            if lo < best.0 {
                best = (lo, 2 * a);
            }
            if hi < best.0 {
                best = (hi, 2 * a + 1);
            }
        }
        best.1
    }

    fn quadratic(&self, comp: usize, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim();
        let s = &self.shapes[comp];
        let mut v = s[0];
        for a in 0..d {
            v += s[1 + a] * u[a];
        }
        let mut k = 1 + d;
        for a in 0..d {
            for b in a..d {
                v += s[k] * u[a] * u[b];
                k += 1;
            }
        }
        if let Some(g) = grad {
            g[..d].copy_from_slice(&s[1..d + 1]);
            let mut k = 1 + d;
            for a in 0..d {
                for b in a..d {
                    g[a] += s[k] * u[b];
                    g[b] += s[k] * u[a];
                    k += 1;
                }
            }
        }
        v
    }

    pub fn value(&self, comp: usize, x: &[f64]) -> f64 {
        let d = self.dim();
        match self.family {
            Family::Bubble => {
                let y = self.normalized(x);
                let u: Vec<f64> = y.iter().map(|t| t - 0.5).collect();
                let b: f64 = y.iter().map(|t| 4.0 * t * (1.0 - t)).product();
                self.amplitudes[comp] * b * self.quadratic(comp, &u, None)
            }
            Family::Hat => {
                let piece = self.hat_piece(x);
                let a = piece / 2;
                let r = if piece.is_multiple_of(2) {
                    (x[a] - self.region.lo[a]) / (self.apex[a] - self.region.lo[a])
                } else {
                    (self.region.hi[a] - x[a]) / (self.region.hi[a] - self.apex[a])
                };
                debug_assert!(a < d);
                self.amplitudes[comp] * r
            }
        }
    }

    /// Gradient of component `comp` at `x`; `piece` selects the hat pyramid
    /// when known.
    pub fn gradient(&self, comp: usize, x: &[f64], piece: Option<usize>, out: &mut [f64]) {
        let d = self.dim();
        match self.family {
            Family::Bubble => {
                let y = self.normalized(x);
                let u: Vec<f64> = y.iter().map(|t| t - 0.5).collect();
                let f: Vec<f64> = y.iter().map(|t| 4.0 * t * (1.0 - t)).collect();
                let b: f64 = f.iter().product();
                let mut qg = vec![0.0; d];
                let q = self.quadratic(comp, &u, Some(&mut qg));
                for a in 0..d {
                    let others: f64 = (0..d).filter(|&c| c != a).map(|c| f[c]).product();
                    let db = 4.0 * (1.0 - 2.0 * y[a]) * others;
                    out[a] = self.amplitudes[comp] * (db * q + b * qg[a]) / self.region.side(a);
                }
            }
            Family::Hat => {
                let piece = piece.unwrap_or_else(|| self.hat_piece(x));
                out.fill(0.0);
                let a = piece / 2;
                out[a] = if piece.is_multiple_of(2) {
                    self.amplitudes[comp] / (self.apex[a] - self.region.lo[a])
                } else {
                    -self.amplitudes[comp] / (self.region.hi[a] - self.apex[a])
                };
            }
        }
    }

    fn params(&self) -> Vec<f64> {
        let mut v = self.amplitudes.clone();
        v.extend(&self.apex);
        for s in &self.shapes {
            v.extend(s);
        }
        v
    }

    fn with_params(&self, v: &[f64]) -> TestFunction {
        let mut out = self.clone();
        let c = self.amplitudes.len();
        out.amplitudes.copy_from_slice(&v[..c]);
        let mut k = c;
        for a in 0..self.apex.len() {
            let (lo, side) = (self.region.lo[a], self.region.side(a));
            out.apex[a] = v[k].clamp(lo + 0.05 * side, lo + 0.95 * side);
            k += 1;
        }
        for s in out.shapes.iter_mut() {
            let len = s.len();
            s.copy_from_slice(&v[k..k + len]);
            k += len;
        }
        out
    }
}

/// Quadrature nodes for a test field; hat fields get a collapsed rule on
/// each pyramid so that kinks never cross a cell.
struct FieldRule {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    pieces: Vec<Option<usize>>,
}

fn field_rule(tf: &TestFunction, order: usize, cells: usize) -> FieldRule {
    match tf.family {
        Family::Bubble => {
            let r = TensorRule::new(&tf.region, order, cells);
            let n = r.len();
            FieldRule { points: r.points, weights: r.weights, pieces: vec![None; n] }
        }
        Family::Hat => {
            let d = tf.dim();
            let mut ts = Vec::new();
            let mut tw = Vec::new();
            for c in 0..cells {
                let (x, w) = gauss_legendre_on(order, c as f64 / cells as f64, (c + 1) as f64 / cells as f64);
                ts.extend(x);
                tw.extend(w);
            }
            let mut rule = FieldRule { points: Vec::new(), weights: Vec::new(), pieces: Vec::new() };
            for a in 0..d {
                let others: Vec<usize> = (0..d).filter(|&b| b != a).collect();
                let face = if others.is_empty() {
                    TensorRule { points: vec![vec![]], weights: vec![1.0] }
                } else {
                    let lo = others.iter().map(|&b| tf.region.lo[b]).collect();
                    let hi = others.iter().map(|&b| tf.region.hi[b]).collect();
                    TensorRule::new(&CoordBox::new(lo, hi).expect("sub-box of a valid box"), order, cells)
                };
                for (piece_side, val) in [(0, tf.region.lo[a]), (1, tf.region.hi[a])] {
                    let height = (tf.apex[a] - val).abs();
                    for (z, wz) in face.points.iter().zip(&face.weights) {
                        let mut zf = vec![0.0; d];
                        zf[a] = val;
                        for (k, &b) in others.iter().enumerate() {
                            zf[b] = z[k];
                        }
                        for (&t, &wt) in ts.iter().zip(&tw) {
                            let x: Vec<f64> = (0..d).map(|i| tf.apex[i] + t * (zf[i] - tf.apex[i])).collect();
                            rule.points.push(x);
                            rule.weights.push(wz * wt * t.powi(d as i32 - 1) * height);
                            rule.pieces.push(Some(2 * a + piece_side));
                        }
                    }
                }
            }
            rule
        }
    }
}

/// Options shared by the quasiconvexity tests.
#[derive(Clone, Debug, PartialEq)]
pub struct QcOptions {
    pub trials: usize,
    pub seed: u64,
    pub order: usize,
    pub cells: usize,
    /// Violation threshold relative to `1 + |F(x₀, p)|`.
    pub relative_tolerance: f64,
    /// Families used in turn, trial `t` drawing from `families[t % len]`.
    pub families: Vec<Family>,
    /// Gradient scales are drawn log-uniformly from this range.
    pub scale_range: (f64, f64),
    /// Each trial tests on a random sub-box containing `x₀` whose sides are
    /// these fractions of the region's; `(1, 1)` uses the whole region.
    pub subbox_range: (f64, f64),
    /// Objective evaluations allowed when sharpening a witness (0 disables).
    pub sharpen_evaluations: usize,
}

impl Default for QcOptions {
    fn default() -> Self {
        QcOptions {
            trials: 1000,
            seed: 0,
            order: 4,
            cells: 8,
            relative_tolerance: 1e-7,
            families: vec![Family::Bubble, Family::Hat],
            scale_range: (1e-2, 1e1),
            subbox_range: (0.2, 0.8),
            sharpen_evaluations: 80,
        }
    }
}

/// Result of a quasiconvexity test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QcReport {
    pub violation_found: bool,
    pub worst_gap: f64,
    pub worst_trial: Option<usize>,
    pub witness: Option<TestFunction>,
    /// Gap of the witness after sharpening.
    pub witness_gap: Option<f64>,
    /// Gap of the witness at doubled quadrature order.
    pub certified_gap: Option<f64>,
    /// The certified gap stays below half the negative tolerance.
    pub certified: bool,
    pub tolerance: f64,
    pub reference_value: f64,
    pub volume_growth: f64,
    pub trials: usize,
    /// Trials aborted by a non-finite integrand value.
    pub nonfinite_trials: usize,
    /// Per-trial gaps in trial order (`+∞` for aborted trials).
    pub gaps: Vec<f64>,
    pub families: Vec<Family>,
}

#[derive(Clone, Copy)]
enum Geometry<'a> {
    Riemannian(&'a MetricField),
    Euclidean,
}

/// Which slot of the dense degree-r basis each (component, j) derivative
/// contributes to, with sign.
fn derivative_map(dim: usize, r: usize) -> (usize, Vec<(usize, usize, usize, f64)>) {
    let comps = MultiIndex::all(dim, r - 1);
    let slots = MultiIndex::all(dim, r);
    let mut map = Vec::new();
    for (ci, i) in comps.iter().enumerate() {
        for j in 0..dim {
            if i.contains(j) {
                continue;
            }
            let (k, parity) = i.prepend(j);
            let k = k.expect("j not in i");
            let slot = slots.binary_search(&k).expect("valid multi-index");
            map.push((ci, j, slot, parity.sign() as f64));
        }
    }
    (comps.len(), map)
}

struct Engine<'a> {
    f: &'a dyn Integrand,
    p: Vec<f64>,
    region: CoordBox,
    geometry: Geometry<'a>,
    comps: usize,
    dmap: Vec<(usize, usize, usize, f64)>,
    x0: Vec<f64>,
    /// `√det g(x₀)`, or 1 for Lebesgue averaging.
    density: f64,
    reference: f64,
    opts: &'a QcOptions,
}

impl<'a> Engine<'a> {
    fn new(
        f: &'a dyn Integrand,
        x0: &[f64],
        p: &[f64],
        region: &CoordBox,
        geometry: Geometry<'a>,
        opts: &'a QcOptions,
    ) -> Result<(Self, f64)> {
        let dim = f.dim();
        let r = f.slot_degree();
        if r == 0 || r > dim {
            return Err(Error::DegreeOutOfRange(format!("slot degree {} on dimension {}", r, dim)));
        }
        if region.dim() != dim || x0.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "integrand on dimension {}, region of dimension {}, point of dimension {}",
                dim,
                region.dim(),
                x0.len()
            )));
        }
        let slots = MultiIndex::all(dim, r).len();
        if p.len() != slots {
            return Err(Error::DimensionMismatch(format!("form value has {} components, expected {}", p.len(), slots)));
        }
        if !region.contains(x0) {
            return Err(Error::InvalidProblem(format!("point {:?} is outside the region", x0)));
        }
        if opts.families.is_empty() || opts.order == 0 || opts.cells == 0 {
            return Err(Error::InvalidProblem("test options need a family, an order and a cell count".into()));
        }
        let (lo, hi) = opts.subbox_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidProblem(format!("sub-box fractions must satisfy 0 < lo ≤ hi ≤ 1, got ({}, {})", lo, hi)));
        }
        let (density, growth) = match geometry {
            Geometry::Riemannian(g) => {
                if g.dim() != dim {
                    return Err(Error::DimensionMismatch(format!("metric of dimension {} on dimension {}", g.dim(), dim)));
                }
                let v = volume_growth_factor(x0, region, g)?;
                (v.sqrt_det_center, v.value)
            }
            Geometry::Euclidean => (1.0, region.volume()),
        };
        let reference = f.eval(x0, p);
        if !reference.is_finite() {
            return Err(Error::InvalidProblem(format!("integrand is not finite at the base point: {}", reference)));
        }
        let (comps, dmap) = derivative_map(dim, r);
        Ok((
            Engine {
                f,
                p: p.to_vec(),
                region: region.clone(),
                geometry,
                comps,
                dmap,
                x0: x0.to_vec(),
                density,
                reference,
                opts,
            },
            growth,
        ))
    }

    fn tolerance(&self) -> f64 {
        self.opts.relative_tolerance * (1.0 + self.reference.abs())
    }

    fn draw(&self, trial: usize) -> TestFunction {
        let mut rng = stream_rng(self.opts.seed, streams::QC_TRIAL, trial as u64);
        let family = self.opts.families[trial % self.opts.families.len()];
        let dim = self.region.dim();
        let region = self.subbox(&mut rng);
        let (lo, hi) = self.opts.scale_range;
        let scale = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        let mean_side = (0..dim).map(|a| region.side(a)).sum::<f64>() / dim as f64;
        match family {
            Family::Bubble => {
                let shapes =
                    (0..self.comps).map(|_| (0..shape_len(dim)).map(|_| normal(&mut rng)).collect()).collect();
                TestFunction {
                    family,
                    region,
                    amplitudes: vec![scale * mean_side; self.comps],
                    apex: Vec::new(),
                    shapes,
                }
            }
            Family::Hat => {
                let apex = (0..dim)
                    .map(|a| region.lo[a] + region.side(a) * (0.15 + 0.7 * rng.random::<f64>()))
                    .collect();
                let amplitudes = (0..self.comps).map(|_| scale * mean_side * normal(&mut rng)).collect();
                TestFunction { family, region, amplitudes, apex, shapes: Vec::new() }
            }
        }
    }

    /// A sub-box of the region containing `x₀`.
    fn subbox<R: Rng>(&self, rng: &mut R) -> CoordBox {
        let (lo, hi) = self.opts.subbox_range;
        if lo == 1.0 {
            return self.region.clone();
        }
        let dim = self.region.dim();
        let mut a = Vec::with_capacity(dim);
        let mut b = Vec::with_capacity(dim);
        for i in 0..dim {
            let side = self.region.side(i) * (lo + (hi - lo) * rng.random::<f64>());
            let min = self.region.lo[i].max(self.x0[i] - side);
            let max = self.x0[i].min(self.region.hi[i] - side);
            let start = min + (max - min).max(0.0) * rng.random::<f64>();
            a.push(start);
            b.push(start + side);
        }
        CoordBox::new(a, b).expect("positive sides")
    }

    /// The gap of `tf`, or `+∞` if the integrand is not finite at a node.
    fn gap(&self, tf: &TestFunction, order: usize) -> f64 {
        let rule = field_rule(tf, order, self.opts.cells);
        let dim = self.region.dim();
        let mut grads = vec![vec![0.0; dim]; self.comps];
        let mut w = self.p.clone();
        let mut sum = 0.0;
        for ((x, &weight), &piece) in rule.points.iter().zip(&rule.weights).zip(&rule.pieces) {
            for (c, g) in grads.iter_mut().enumerate() {
                tf.gradient(c, x, piece, g);
            }
            w.copy_from_slice(&self.p);
            for &(c, j, slot, sign) in &self.dmap {
                w[slot] += sign * grads[c][j];
            }
            let v = self.f.eval(x, &w);
            if !v.is_finite() {
                return f64::INFINITY;
            }
            match self.geometry {
                Geometry::Riemannian(g) => {
                    let Ok(sd) = g.sqrt_det(x) else {
                        return f64::INFINITY;
                    };
                    sum += weight * (v * sd);
                }
                Geometry::Euclidean => {
                    sum += weight * v;
                }
            }
        }
        sum / (self.density * tf.region.volume()) - self.reference
    }

    /// Compass search over the field parameters, deterministic.
    fn sharpen(&self, tf: &TestFunction, start_gap: f64) -> (TestFunction, f64) {
        let mut theta = tf.params();
        let mut best = (tf.clone(), start_gap);
        let mut steps: Vec<f64> = theta.iter().map(|t| 0.25 * t.abs().max(0.1)).collect();
        let mut evals = 0;
        while evals < self.opts.sharpen_evaluations {
            let mut improved = false;
            for i in 0..theta.len() {
                for dir in [1.0, -1.0] {
                    if evals >= self.opts.sharpen_evaluations {
                        break;
                    }
                    let mut trial = theta.clone();
                    trial[i] += dir * steps[i];
                    let cand = tf.with_params(&trial);
                    let g = self.gap(&cand, self.opts.order);
                    evals += 1;
                    if g < best.1 {
                        theta = cand.params();
                        best = (cand, g);
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                steps.iter_mut().for_each(|s| *s *= 0.5);
                if steps.iter().all(|s| *s < 1e-6) {
                    break;
                }
            }
        }
        best
    }

    fn run(&self, growth: f64) -> QcReport {
        let opts = self.opts;
        let gaps: Vec<f64> =
            (0..opts.trials).into_par_iter().map(|t| self.gap(&self.draw(t), opts.order)).collect();
        let mut worst = (f64::INFINITY, None);
        let mut nonfinite = 0;
        for (t, &g) in gaps.iter().enumerate() {
            if !g.is_finite() {
                nonfinite += 1;
            } else if g < worst.0 {
                worst = (g, Some(t));
            }
        }
        let tol = self.tolerance();
        let violation = worst.0 < -tol;
        let mut report = QcReport {
            violation_found: violation,
            worst_gap: worst.0,
            worst_trial: worst.1,
            witness: None,
            witness_gap: None,
            certified_gap: None,
            certified: false,
            tolerance: tol,
            reference_value: self.reference,
            volume_growth: growth,
            trials: opts.trials,
            nonfinite_trials: nonfinite,
            gaps,
            families: opts.families.clone(),
        };
        if let (true, Some(t)) = (violation, worst.1) {
            let tf = self.draw(t);
            let (tf, g) = if opts.sharpen_evaluations > 0 { self.sharpen(&tf, worst.0) } else { (tf, worst.0) };
            let certified = self.gap(&tf, 2 * opts.order);
            report.witness = Some(tf);
            report.witness_gap = Some(g);
            report.certified_gap = Some(certified);
            report.certified = certified < -tol / 2.0;
        }
        report
    }
}

/// Volume-weighted test of an integrand with a 1-form slot.
pub fn riemannian_qc_test(
    f: &dyn Integrand,
    x0: &[f64],
    p: &[f64],
    region: &CoordBox,
    metric: &MetricField,
    opts: &QcOptions,
) -> Result<QcReport> {
    require_one_form(f)?;
    let (engine, growth) = Engine::new(f, x0, p, region, Geometry::Riemannian(metric), opts)?;
    Ok(engine.run(growth))
}

/// Lebesgue-averaged test of an integrand with a 1-form slot.
pub fn euclidean_qc_test(f: &dyn Integrand, x0: &[f64], p: &[f64], region: &CoordBox, opts: &QcOptions) -> Result<QcReport> {
    require_one_form(f)?;
    let (engine, growth) = Engine::new(f, x0, p, region, Geometry::Euclidean, opts)?;
    Ok(engine.run(growth))
}

/// The same test with an ℓ-form slot and (ℓ−1)-form test fields, `dζ` in
/// place of the gradient.
pub fn form_slot_qc_test(
    f: &dyn Integrand,
    x0: &[f64],
    p: &[f64],
    region: &CoordBox,
    metric: &MetricField,
    opts: &QcOptions,
) -> Result<QcReport> {
    let (engine, growth) = Engine::new(f, x0, p, region, Geometry::Riemannian(metric), opts)?;
    Ok(engine.run(growth))
}

fn require_one_form(f: &dyn Integrand) -> Result<()> {
    if f.slot_degree() != 1 {
        return Err(Error::InvalidProblem(format!(
            "integrand has a {}-form slot; use the form-slot test",
            f.slot_degree()
        )));
    }
    Ok(())
}

/// The gap of one test field under the Riemannian test, at a given
/// quadrature order.
pub fn riemannian_gap(
    f: &dyn Integrand,
    x0: &[f64],
    p: &[f64],
    metric: &MetricField,
    tf: &TestFunction,
    opts: &QcOptions,
    order: usize,
) -> Result<f64> {
    let (engine, _) = Engine::new(f, x0, p, &tf.region, Geometry::Riemannian(metric), opts)?;
    Ok(engine.gap(tf, order))
}

/// The test field drawn for `trial` on `region` around `x0` (for slot
/// degree 1). Its sub-box is the one every slot degree sees.
pub fn draw_test_function(region: &CoordBox, x0: &[f64], trial: usize, opts: &QcOptions) -> Result<TestFunction> {
    let f = EuclideanNorm { dim: region.dim() };
    let p = vec![0.0; region.dim()];
    let (engine, _) = Engine::new(&f, x0, &p, region, Geometry::Euclidean, opts)?;
    Ok(engine.draw(trial))
}

/// Matched Riemannian and reduced Euclidean gaps for one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchedGap {
    pub riemannian: f64,
    pub euclidean: f64,
    pub riemannian_violation: bool,
    pub euclidean_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChangeOfVariablesReport {
    pub sqrt_det_center: f64,
    pub pairs: Vec<MatchedGap>,
    /// Largest `|gap_E − √det g(x₀)·gap_R| / (√det g(x₀)·|gap_R|)`.
    pub max_relative_error: f64,
    pub decisions_agree: bool,
}

/// Runs the Riemannian test of `f` on `(region, metric)` and, with the same
/// test fields pulled back by `phi`, the Euclidean test of the reduced
/// integrand on the parallelotope `Φ⁻¹(region)`. For affine `Φ` the gaps
/// satisfy `gap_E = √det g(x₀) · gap_R`.
pub fn change_of_variables_check(
    f: Arc<dyn Integrand>,
    phi: &Diffeomorphism,
    metric: &MetricField,
    x0: &[f64],
    p: &[f64],
    region: &CoordBox,
    opts: &QcOptions,
) -> Result<ChangeOfVariablesReport> {
    let reduced = change_of_variables_reduction(f.clone(), phi.clone(), metric.clone())?;
    let inverse = phi
        .inverse()
        .ok_or_else(|| Error::InvalidProblem("change of variables needs the inverse map".into()))?;
    let (engine, growth) = Engine::new(f.as_ref(), x0, p, region, Geometry::Riemannian(metric), opts)?;
    let sd0 = growth / region.volume();
    let xh0 = inverse.apply(x0);
    let ph = phi.pullback_covector(&xh0, p);
    let j0 = phi.jacobian(&xh0).determinant().abs();
    if j0 == 0.0 {
        return Err(Error::SingularJacobian { point: xh0 });
    }
    let reference_hat = reduced.eval(&xh0, &ph);
    let tol_r = engine.tolerance();
    let tol_e = opts.relative_tolerance * (1.0 + reference_hat.abs());
    let dim = region.dim();
    let pairs: Vec<MatchedGap> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let tf = engine.draw(t);
            let gap_r = engine.gap(&tf, opts.order);
            let rule = field_rule(&tf, opts.order, opts.cells);
            let mut g = vec![0.0; dim];
            let mut sum = 0.0;
            for ((x, &w), &piece) in rule.points.iter().zip(&rule.weights).zip(&rule.pieces) {
                let xh = inverse.apply(x);
                let jac = phi.jacobian(&xh);
                tf.gradient(0, x, piece, &mut g);
                let pg: Vec<f64> = (0..dim).map(|a| ph[a] + (0..dim).map(|b| jac[(b, a)] * g[b]).sum::<f64>()).collect();
                sum += (w / jac.determinant().abs()) * reduced.eval(&xh, &pg);
            }
            let gap_e = sum / (tf.region.volume() / j0) - reference_hat;
            MatchedGap {
                riemannian: gap_r,
                euclidean: gap_e,
                riemannian_violation: gap_r < -tol_r,
                euclidean_violation: gap_e < -tol_e,
            }
        })
        .collect();
    let max_relative_error = pairs
        .iter()
        .map(|m| (m.euclidean - sd0 * m.riemannian).abs() / (sd0 * m.riemannian.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let decisions_agree = pairs.iter().all(|m| m.riemannian_violation == m.euclidean_violation);
    Ok(ChangeOfVariablesReport { sqrt_det_center: sd0, pairs, max_relative_error, decisions_agree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_polynomial;

    fn opts(trials: usize) -> QcOptions {
        QcOptions { trials, seed: 11, ..QcOptions::default() }
    }

    #[test]
    fn growth_factor_examples() {
        let b = CoordBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let g = MetricField::diagonal(vec![parse_polynomial("1", 2).unwrap(), parse_polynomial("(1+x1)^2", 2).unwrap()])
            .unwrap();
        let v = volume_growth_factor(&[0.0, 0.0], &b, &g).unwrap();
        assert!((v.value - 1.0).abs() < 1e-14);
        assert!((v.quadrature - 1.0).abs() < 1e-12);
        let e = volume_growth_factor(&[0.3, 0.2], &b, &MetricField::euclidean(2)).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn hat_rule_has_region_volume_and_zero_mean_gradient() {
        let region = CoordBox::new(vec![0.0, -1.0, 0.5], vec![2.0, 0.5, 1.0]).unwrap();
        let tf = TestFunction {
            family: Family::Hat,
            region: region.clone(),
            amplitudes: vec![0.7],
            apex: vec![0.4, 0.1, 0.8],
            shapes: vec![],
        };
        let rule = field_rule(&tf, 3, 2);
        let vol: f64 = rule.weights.iter().sum();
        assert!((vol - region.volume()).abs() < 1e-13);
        let mut mean = [0.0; 3];
        let mut g = [0.0; 3];
        for ((x, w), piece) in rule.points.iter().zip(&rule.weights).zip(&rule.pieces) {
            assert_eq!(tf.hat_piece(x), piece.unwrap());
            tf.gradient(0, x, *piece, &mut g);
            for a in 0..3 {
                mean[a] += w * g[a];
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 1e-13), "{:?}", mean);
    }

    #[test]
    fn bubble_gradient_matches_differences() {
        let region = CoordBox::new(vec![0.0, 1.0], vec![2.0, 1.5]).unwrap();
        let whole = QcOptions { subbox_range: (1.0, 1.0), ..opts(1) };
        let tf = draw_test_function(&region, &[1.0, 1.25], 0, &whole).unwrap();
        assert_eq!(tf.family, Family::Bubble);
        assert_eq!(tf.region, region);
        let x = [0.7, 1.2];
        let mut g = [0.0; 2];
        tf.gradient(0, &x, None, &mut g);
        for a in 0..2 {
            let h = 1e-6;
            let mut xp = x;
            xp[a] += h;
            let mut xm = x;
            xm[a] -= h;
            let fd = (tf.value(0, &xp) - tf.value(0, &xm)) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        assert_eq!(tf.value(0, &[0.0, 1.3]), 0.0);
    }

    #[test]
    fn sub_boxes_contain_the_base_point() {
        let region = CoordBox::new(vec![-1.0, 0.0, 2.0], vec![1.0, 3.0, 2.5]).unwrap();
        let x0 = [0.9, 0.1, 2.2];
        for t in 0..50 {
            let tf = draw_test_function(&region, &x0, t, &opts(1)).unwrap();
            assert!(tf.region.contains(&x0));
            for a in 0..3 {
                let frac = tf.region.side(a) / region.side(a);
                assert!((0.2 - 1e-12..=0.8 + 1e-12).contains(&frac), "{}", frac);
                assert!(tf.region.lo[a] >= region.lo[a] - 1e-12 && tf.region.hi[a] <= region.hi[a] + 1e-12);
            }
        }
    }

    #[test]
    fn negated_quadratic_is_caught_and_convex_is_not() {
        let region = CoordBox::unit(2);
        let neg = MetricQuadratic { metric: MetricField::euclidean(2), sign: -1.0 };
        let r = euclidean_qc_test(&neg, &[0.5, 0.5], &[0.0, 0.0], &region, &opts(20)).unwrap();
        assert!(r.violation_found && r.certified);
        let pos = MetricQuadratic { metric: MetricField::euclidean(2), sign: 1.0 };
        let r = euclidean_qc_test(&pos, &[0.5, 0.5], &[0.3, -1.0], &region, &opts(200)).unwrap();
        assert!(!r.violation_found, "worst gap {}", r.worst_gap);
    }

    #[test]
    fn double_well_is_caught_by_a_hat() {
        let region = CoordBox::unit(2);
        let f = DoubleWell { e: vec![1.0, 0.0] };
        let o = QcOptions { families: vec![Family::Hat], ..opts(50) };
        let r = euclidean_qc_test(&f, &[0.5, 0.5], &[0.0, 0.0], &region, &o).unwrap();
        assert!(r.violation_found && r.certified, "{}", r.worst_gap);
        assert!(r.certified_gap.unwrap() < -0.2);
    }

    #[test]
    fn null_field_gap_vanishes_for_x_independent_integrands() {
        let region = CoordBox::new(vec![0.2, 0.1], vec![0.9, 0.4]).unwrap();
        let f = DoubleWell { e: vec![1.0, 0.5] };
        let tf = TestFunction {
            family: Family::Bubble,
            region: region.clone(),
            amplitudes: vec![0.0],
            apex: vec![],
            shapes: vec![vec![1.0; shape_len(2)]],
        };
        let g = riemannian_gap(&f, &[0.3, 0.3], &[0.2, 0.7], &MetricField::euclidean(2), &tf, &opts(1), 4).unwrap();
        assert!(g.abs() < 1e-14);
    }

    #[test]
    fn form_slot_variant_runs_on_two_forms() {
        let region = CoordBox::unit(3);
        let f = FnIntegrand {
            dim: 3,
            slot_degree: 2,
            label: "neg".into(),
            f: Arc::new(|_, p: &[f64]| -p.iter().map(|c| c * c).sum::<f64>()),
        };
        let r = form_slot_qc_test(&f, &[0.5; 3], &[0.0; 3], &region, &MetricField::euclidean(3), &QcOptions {
            cells: 2,
            ..opts(4)
        })
        .unwrap();
        assert!(r.violation_found);
    }
}
