//! Costs on shadow tuples, gauge forms, admissibility of shadow data and the
//! gauged problem over potentials.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::bundle::{
    check_closedness, horizontal_projection, shadow_reconstruct, BundleChart, ShadowData, ShadowTuple, StarDomain,
};
use crate::comass::{comass_with_gradient, ComassOptions};
use crate::error::{Error, Result};
use crate::form::{Form, FormValue};
use crate::homotopy::homotopy_operator;
use crate::metric::{MetricAt, MetricField};
use crate::multi_index::MultiIndex;
use crate::poly::Polynomial;
use crate::quadrature::TensorRule;

/// Two-sided growth constants `a₁ + b₁‖·‖^s ≤ c ≤ a₂ + b₂‖·‖^s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub s: f64,
}

/// Assigns every ℓ-index slot of the dense basis to `f` (⋆ = ℓ) or to a
/// shadow component with split position ⋆ < ℓ.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowLayout {
    pub n: usize,
    pub k: usize,
    pub ell: usize,
    pub slots: Vec<MultiIndex>,
    pub stars: Vec<usize>,
}

impl ShadowLayout {
    pub fn new(n: usize, k: usize, ell: usize) -> Self {
        let slots = MultiIndex::all(n + k, ell);
        let stars = slots.iter().map(|i| i.horizontal_prefix_len(n)).collect();
        ShadowLayout { n, k, ell, slots, stars }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_horizontal(&self, slot: usize) -> bool {
        self.stars[slot] == self.ell
    }

    /// The projection of the ℓ-form with dense coefficients `w`.
    pub fn tuple(&self, w: &[f64]) -> ShadowTuple<f64> {
        horizontal_projection(&FormValue::from_dense(self.n + self.k, self.ell, w), self.n)
    }
}

/// A pointwise cost on shadow tuples with values in `(−∞, +∞]`.
pub trait CostFunction: Send + Sync {
    fn name(&self) -> String;

    fn growth(&self) -> Option<GrowthConstants> {
        None
    }

    /// `c(x; f, g₁…g_I)`.
    fn eval(&self, x: &[f64], t: &ShadowTuple<f64>) -> f64;

    /// `c ∘ pr_H` at dense ℓ-form coefficients `w`.
    fn gauged(&self, x: &[f64], layout: &ShadowLayout, w: &[f64]) -> f64 {
        self.eval(x, &layout.tuple(w))
    }

    /// `c ∘ pr_H` with its gradient in `w`, or `None` when the cost supplies
    /// no derivative.
    fn gauged_with_gradient(&self, _x: &[f64], _layout: &ShadowLayout, _w: &[f64], _grad: &mut [f64]) -> Option<f64> {
        None
    }
}

impl fmt::Debug for dyn CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CostFunction({})", self.name())
    }
}

fn tuple_coefficients(t: &ShadowTuple<f64>) -> impl Iterator<Item = f64> + '_ {
    t.f.terms().values().copied().chain(t.components.iter().flat_map(|c| c.g.terms().values().copied()))
}

/// The zero cost.
#[derive(Clone, Debug, Default)]
pub struct ZeroCost;

impl CostFunction for ZeroCost {
    fn name(&self) -> String {
        "zero".into()
    }
    fn eval(&self, _x: &[f64], _t: &ShadowTuple<f64>) -> f64 {
        0.0
    }
    fn gauged(&self, _x: &[f64], _layout: &ShadowLayout, _w: &[f64]) -> f64 {
        0.0
    }
    fn gauged_with_gradient(&self, _x: &[f64], _l: &ShadowLayout, _w: &[f64], grad: &mut [f64]) -> Option<f64> {
        grad.fill(0.0);
        Some(0.0)
    }
}

/// `scale · Σ (coefficients of f and every gᵢ)²`, plus a constant.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub scale: f64,
    pub offset: f64,
}

impl QuadraticCost {
    pub fn new() -> Self {
        QuadraticCost { scale: 1.0, offset: 0.0 }
    }
    pub fn negated() -> Self {
        QuadraticCost { scale: -1.0, offset: 0.0 }
    }
}

impl Default for QuadraticCost {
    fn default() -> Self {
        Self::new()
    }
}

impl CostFunction for QuadraticCost {
    fn name(&self) -> String {
        match (self.scale, self.offset) {
            (s, o) if s == 1.0 && o == 0.0 => "quadratic".into(),
            (s, o) if s == -1.0 && o == 0.0 => "negated_quadratic".into(),
            (s, o) => format!("quadratic(scale={}, offset={})", s, o),
        }
    }
    fn eval(&self, _x: &[f64], t: &ShadowTuple<f64>) -> f64 {
        self.offset + self.scale * tuple_coefficients(t).map(|c| c * c).sum::<f64>()
    }
    // Each coefficient of w appears exactly once in the projection.
    fn gauged(&self, _x: &[f64], _layout: &ShadowLayout, w: &[f64]) -> f64 {
        self.offset + self.scale * w.iter().map(|c| c * c).sum::<f64>()
    }
    fn gauged_with_gradient(&self, _x: &[f64], _l: &ShadowLayout, w: &[f64], grad: &mut [f64]) -> Option<f64> {
        for (g, c) in grad.iter_mut().zip(w) {
            *g = 2.0 * self.scale * c;
        }
        Some(self.offset + self.scale * w.iter().map(|c| c * c).sum::<f64>())
    }
}

/// `‖(f; g₁…g_I)‖^s` with the tuple norm `comass(f) + Σ comass(gᵢ)`.
#[derive(Clone, Debug)]
pub struct ComassPowerCost {
    pub s: f64,
    pub metric: MetricField,
    pub options: ComassOptions,
}

impl ComassPowerCost {
    pub fn new(s: f64, metric: MetricField) -> Self {
        ComassPowerCost { s, metric, options: ComassOptions::default() }
    }

    fn metric_at(&self, x: &[f64]) -> MetricAt {
        self.metric.at(x).unwrap_or_else(|e| panic!("cost evaluated where the metric is invalid: {}", e))
    }
}

/// `comass(f) + Σ comass(gᵢ)` under the metric data `m`.
pub fn tuple_norm(t: &ShadowTuple<f64>, m: &MetricAt, opts: &ComassOptions) -> f64 {
    let mut total = comass_with_gradient(&t.f, m, opts).0;
    for c in &t.components {
        total += comass_with_gradient(&c.g, m, opts).0;
    }
    total
}

impl CostFunction for ComassPowerCost {
    fn name(&self) -> String {
        format!("comass_power {}", self.s)
    }
    fn growth(&self) -> Option<GrowthConstants> {
        Some(GrowthConstants { a1: 0.0, a2: 0.0, b1: 1.0, b2: 1.0, s: self.s })
    }
    fn eval(&self, x: &[f64], t: &ShadowTuple<f64>) -> f64 {
        tuple_norm(t, &self.metric_at(x), &self.options).powf(self.s)
    }
    fn gauged_with_gradient(&self, x: &[f64], layout: &ShadowLayout, w: &[f64], grad: &mut [f64]) -> Option<f64> {
        let m = self.metric_at(x);
        let dim = layout.n + layout.k;
        grad.fill(0.0);
        // f part: the horizontal slots, as a dense ℓ-form.
        let f_dense: Vec<f64> =
            w.iter().enumerate().map(|(i, &c)| if layout.is_horizontal(i) { c } else { 0.0 }).collect();
        let (mut norm, fg) = comass_with_gradient(&FormValue::from_dense(dim, layout.ell, &f_dense), &m, &self.options);
        for (i, g) in fg.into_iter().enumerate() {
            if layout.is_horizontal(i) {
                grad[i] = g;
            }
        }
        // Each shadow is a single term c·dx^H, with comass |c|·|dx^H|.
        for (i, &c) in w.iter().enumerate() {
            if layout.is_horizontal(i) || c == 0.0 {
                continue;
            }
            let (h, _) = layout.slots[i].split_at(layout.stars[i]);
            let len = m.basis_dot(&h, &h).sqrt();
            norm += c.abs() * len;
            grad[i] = c.signum() * len;
        }
        let value = norm.powf(self.s);
        let outer = if norm > 0.0 { self.s * norm.powf(self.s - 1.0) } else { 0.0 };
        for g in grad.iter_mut() {
            *g *= outer;
        }
        Some(value)
    }
}

/// `min(|w − e|², |w + e|²)` in coordinate coefficients, with `e` the first
/// basis slot of the projected tuple.
#[derive(Clone, Debug, Default)]
pub struct DoubleWellCost;

impl CostFunction for DoubleWellCost {
    fn name(&self) -> String {
        "double_well".into()
    }
    fn eval(&self, x: &[f64], t: &ShadowTuple<f64>) -> f64 {
        let w = t.reconstruct().dense();
        let layout = ShadowLayout::new(t.n, t.k, t.ell);
        self.gauged(x, &layout, &w)
    }
    fn gauged(&self, _x: &[f64], _layout: &ShadowLayout, w: &[f64]) -> f64 {
        let rest: f64 = w.iter().skip(1).map(|c| c * c).sum();
        let w0 = w.first().copied().unwrap_or(0.0);
        ((w0 - 1.0).powi(2)).min((w0 + 1.0).powi(2)) + rest
    }
    fn gauged_with_gradient(&self, x: &[f64], layout: &ShadowLayout, w: &[f64], grad: &mut [f64]) -> Option<f64> {
        for (g, c) in grad.iter_mut().zip(w) {
            *g = 2.0 * c;
        }
        if let Some(&w0) = w.first() {
            // the nearer well is active; ties go to +e
            grad[0] = if w0 >= 0.0 { 2.0 * (w0 - 1.0) } else { 2.0 * (w0 + 1.0) };
        }
        Some(self.gauged(x, layout, w))
    }
}

/// `Σ |coefficients|`, a convex cost without a derivative.
#[derive(Clone, Debug, Default)]
pub struct AbsCost;

impl CostFunction for AbsCost {
    fn name(&self) -> String {
        "abs".into()
    }
    fn eval(&self, _x: &[f64], t: &ShadowTuple<f64>) -> f64 {
        tuple_coefficients(t).map(f64::abs).sum()
    }
}

/// Names accepted by [`named_cost`].
pub const NAMED_COSTS: [&str; 4] = ["zero", "negated_quadratic", "double_well", "abs"];

/// Registered costs addressed as `named:<id>`.
pub fn named_cost(id: &str) -> Option<Arc<dyn CostFunction>> {
    match id {
        "zero" => Some(Arc::new(ZeroCost)),
        "negated_quadratic" => Some(Arc::new(QuadraticCost::negated())),
        "double_well" => Some(Arc::new(DoubleWellCost)),
        "abs" => Some(Arc::new(AbsCost)),
        _ => None,
    }
}

/// `c_gauge = c ∘ pr_H` as a pointwise function of an ℓ-form value.
#[derive(Clone)]
pub struct GaugedCost {
    pub cost: Arc<dyn CostFunction>,
    pub layout: ShadowLayout,
}

impl GaugedCost {
    pub fn eval(&self, x: &[f64], w: &FormValue) -> f64 {
        self.cost.eval(x, &horizontal_projection(w, self.layout.n))
    }

    pub fn eval_dense(&self, x: &[f64], w: &[f64]) -> f64 {
        self.cost.gauged(x, &self.layout, w)
    }
}

pub fn gauged_cost(cost: Arc<dyn CostFunction>, n: usize, k: usize, ell: usize) -> GaugedCost {
    GaugedCost { cost, layout: ShadowLayout::new(n, k, ell) }
}

/// The fixed potential `ξ̃` of degree ℓ−1 defining the boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeForm {
    pub xi_tilde: Form<Polynomial>,
}

impl GaugeForm {
    pub fn new(xi_tilde: Form<Polynomial>) -> Self {
        GaugeForm { xi_tilde }
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        GaugeForm { xi_tilde: Form::zero(dim, degree) }
    }

    pub fn degree(&self) -> usize {
        self.xi_tilde.degree()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub closed: bool,
    pub closedness_residual: f64,
    /// Largest metric norm of `ι_ν (f + Σ g∧ϑ + d̄ξ̃)` over boundary samples.
    pub max_normal_pairing: f64,
    /// Boundary point where the largest pairing occurred.
    pub worst_point: Option<Vec<f64>>,
}

/// Options for [`check_admissible`].
#[derive(Clone, Debug)]
pub struct AdmissibilityOptions {
    pub tolerance: f64,
    /// Boundary samples per tangential axis on each face.
    pub per_axis: usize,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        AdmissibilityOptions { tolerance: 1e-9, per_axis: 8 }
    }
}

/// Unit normal vector `ν♯ = g⁻¹ν / |ν|` for the covector `ν`.
fn unit_normal_vector(m: &MetricAt, nu: &[f64]) -> Vec<f64> {
    let len = m.covector_dot(nu, nu).sqrt();
    let d = nu.len();
    (0..d).map(|i| (0..d).map(|j| m.g_inv[(i, j)] * nu[j]).sum::<f64>() / len).collect()
}

/// Checks that `f + Σ gᵢ∧ϑⁱ` is closed and that its sum with `d̄ξ̃` has no
/// normal component on the boundary of the domain.
pub fn check_admissible(
    sd: &ShadowData<Polynomial>,
    gauge: &GaugeForm,
    dom: &StarDomain,
    chart: &BundleChart,
    opts: &AdmissibilityOptions,
) -> Result<AdmissibilityReport> {
    if gauge.degree() + 1 != sd.ell {
        return Err(Error::DegreeOutOfRange(format!(
            "gauge of degree {} for shadow data of degree {}",
            gauge.degree(),
            sd.ell
        )));
    }
    let closedness = check_closedness(sd, opts.tolerance)?;
    let total = shadow_reconstruct(sd)?.add(&gauge.xi_tilde.exterior_derivative())?;
    let compiled: Vec<(MultiIndex, _)> = total.terms().iter().map(|(i, c)| (i.clone(), c.compile())).collect();
    let dim = chart.dim();
    let mut worst = 0.0;
    let mut worst_point = None;
    for (x, nu) in dom.boundary_samples(opts.per_axis) {
        let m = chart.metric.at(&x)?;
        let v = unit_normal_vector(&m, &nu);
        let value = Form::from_terms(dim, sd.ell, compiled.iter().map(|(i, c)| (i.clone(), c.eval(&x))))?;
        let contracted = value.interior(&v)?;
        let pairing = m.form_dot(&contracted, &contracted).max(0.0).sqrt();
        if pairing > worst {
            worst = pairing;
            worst_point = Some(x);
        }
    }
    Ok(AdmissibilityReport {
        admissible: closedness.closed && worst <= opts.tolerance,
        closed: closedness.closed,
        closedness_residual: closedness.residual_max,
        max_normal_pairing: worst,
        worst_point,
    })
}

/// Grid and quadrature settings shared by the gauged objective and the
/// minimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretization {
    /// Nodes per axis of the potential grid.
    pub resolution: usize,
    /// Gauss–Legendre points per axis in each quadrature cell.
    pub quadrature_order: usize,
    /// Quadrature cells per axis for objectives of polynomial potentials.
    pub cells: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization { resolution: 17, quadrature_order: 4, cells: 4, tolerance: 1e-9, seed: 0 }
    }
}

/// The gauged problem: minimize `∫ c∘pr_H(d̄ξ) dVol` over potentials `ξ` of
/// degree ℓ−1 with the trace of `ξ̃` on the boundary.
#[derive(Clone)]
pub struct GaugedProblem {
    pub chart: BundleChart,
    pub domain: StarDomain,
    pub cost: Arc<dyn CostFunction>,
    pub gauge: GaugeForm,
    pub s: f64,
    pub discretization: Discretization,
}

impl fmt::Debug for GaugedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaugedProblem")
            .field("n", &self.chart.n)
            .field("k", &self.chart.k)
            .field("ell", &self.ell())
            .field("cost", &self.cost.name())
            .field("s", &self.s)
            .field("discretization", &self.discretization)
            .finish()
    }
}

/// Packages the gauged problem after checking dimensions and degrees.
pub fn relax(
    cost: Arc<dyn CostFunction>,
    gauge: GaugeForm,
    domain: StarDomain,
    chart: BundleChart,
    s: f64,
    discretization: Discretization,
) -> Result<GaugedProblem> {
    let dim = chart.dim();
    if gauge.xi_tilde.dim() != dim || domain.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "chart of dimension {}, gauge on dimension {}, domain of dimension {}",
            dim,
            gauge.xi_tilde.dim(),
            domain.dim()
        )));
    }
    if gauge.degree() + 1 > dim {
        return Err(Error::DegreeOutOfRange(format!(
            "gauge of degree {} has no derivative on a chart of dimension {}",
            gauge.degree(),
            dim
        )));
    }
    if s <= 1.0 || !s.is_finite() {
        return Err(Error::InvalidProblem(format!("Sobolev exponent must exceed 1, got {}", s)));
    }
    let b = domain.bounds();
    let c = chart.bounds.clone();
    if (0..dim).any(|a| b.lo[a] < c.lo[a] || b.hi[a] > c.hi[a]) {
        return Err(Error::InvalidProblem("domain box is not contained in the chart box".into()));
    }
    Ok(GaugedProblem { chart, domain, cost, gauge, s, discretization })
}

impl GaugedProblem {
    /// Degree ℓ of the forms the cost sees.
    pub fn ell(&self) -> usize {
        self.gauge.degree() + 1
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn layout(&self) -> ShadowLayout {
        ShadowLayout::new(self.chart.n, self.chart.k, self.ell())
    }

    pub fn gauged_cost(&self) -> GaugedCost {
        GaugedCost { cost: self.cost.clone(), layout: self.layout() }
    }

    pub fn quadrature(&self) -> TensorRule {
        TensorRule::new(self.domain.bounds(), self.discretization.quadrature_order, self.discretization.cells)
    }

    /// `∫ integrand(x) √det g(x) dx`; `+∞` if any node is `+∞`.
    fn integrate_weighted(&self, integrand: impl Fn(&[f64]) -> f64 + Sync) -> Result<f64> {
        let rule = self.quadrature();
        let metric = &self.chart.metric;
        let failed = std::sync::Mutex::new(None);
        let v = rule.integrate(|x| match metric.at(x) {
            Ok(m) => integrand(x) * m.sqrt_det,
            Err(e) => {
                failed.lock().expect("not poisoned").get_or_insert(e);
                f64::NAN
            }
        });
        if let Some(e) = failed.into_inner().expect("not poisoned") {
            return Err(e);
        }
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }

    /// The gauged objective at a polynomial potential.
    pub fn objective_at_potential(&self, xi: &Form<Polynomial>) -> Result<f64> {
        if xi.degree() != self.gauge.degree() || xi.dim() != self.dim() {
            return Err(Error::DegreeOutOfRange(format!(
                "potential of degree {} on dimension {}, problem expects degree {} on dimension {}",
                xi.degree(),
                xi.dim(),
                self.gauge.degree(),
                self.dim()
            )));
        }
        let w = xi.exterior_derivative();
        let compiled: Vec<_> = self.layout().slots.iter().map(|i| w.coefficient(i).map(|c| c.compile())).collect();
        let layout = self.layout();
        let cost = &self.cost;
        self.integrate_weighted(|x| {
            let dense: Vec<f64> = compiled.iter().map(|c| c.as_ref().map_or(0.0, |c| c.eval(x))).collect();
            cost.gauged(x, &layout, &dense)
        })
    }

    /// The objective of the ungauged problem at shadow data: the integral of
    /// the cost of the merged tuple.
    pub fn objective_at_shadow(&self, sd: &ShadowData<Polynomial>) -> Result<f64> {
        let tuple = sd.canonical_tuple()?;
        let cost = &self.cost;
        self.integrate_weighted(|x| cost.eval(x, &tuple.eval(x)))
    }

    /// A potential `ξ = ξ̃ + K(h − d̄ξ̃)` with `d̄ξ = h = f + Σ g∧ϑ`, and the
    /// largest deviation `|ξ − ξ̃|` over boundary samples.
    pub fn representative(&self, sd: &ShadowData<Polynomial>, per_axis: usize) -> Result<(Form<Polynomial>, f64)> {
        let closedness = check_closedness(sd, 0.0)?;
        if !closedness.closed {
            return Err(Error::NotClosed { residual: closedness.residual_max, tolerance: 0.0 });
        }
        let h = shadow_reconstruct(sd)?;
        let defect = h.sub(&self.gauge.xi_tilde.exterior_derivative())?;
        let correction = homotopy_operator(&defect, self.domain.center_exact());
        let xi = self.gauge.xi_tilde.add(&correction)?;
        let compiled: Vec<_> = correction.terms().values().map(|c| c.compile()).collect();
        let trace = self
            .domain
            .boundary_samples(per_axis)
            .iter()
            .flat_map(|(x, _)| compiled.iter().map(move |c| c.eval(x).abs()))
            .fold(0.0, f64::max);
        Ok((xi, trace))
    }
}

/// Outcome of [`coercivity_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub holds: bool,
    pub lower_holds: bool,
    pub upper_holds: bool,
    /// Constants used for the check: the declared ones, or fitted ones.
    pub constants: GrowthConstants,
    pub fitted: bool,
    /// Least-squares slope of `ln(c − a₁)` against `ln ‖·‖` on the larger half
    /// of the samples.
    pub growth_exponent: Option<f64>,
    /// Indices of samples violating a declared envelope.
    pub violations: Vec<usize>,
}

/// Slack allowed between the fitted growth exponent and `s`.
pub const EXPONENT_TOLERANCE: f64 = 0.05;

/// Evaluates the two-sided `s`-growth condition on samples `(x, tuple)`.
///
/// With declared constants every sample is checked against both envelopes
/// (relative slack `1e−9`). Without them, `b₁`/`b₂` are the extreme ratios
/// `c/‖·‖^s` over the larger half of the samples by norm, `a₁`/`a₂` the
/// extreme offsets; the condition is then judged by the growth exponent.
pub fn coercivity_check(
    cost: &dyn CostFunction,
    samples: &[(Vec<f64>, ShadowTuple<f64>)],
    metric: &MetricField,
    s: f64,
    declared: Option<GrowthConstants>,
) -> Result<CoercivityReport> {
    if samples.is_empty() {
        return Err(Error::InvalidProblem("coercivity check needs at least one sample".into()));
    }
    let opts = ComassOptions::default();
    let mut pts = Vec::with_capacity(samples.len());
    for (x, t) in samples {
        let m = metric.at(x)?;
        pts.push((tuple_norm(t, &m, &opts), cost.eval(x, t)));
    }
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0));
    let top: Vec<usize> = order[order.len() / 2..].to_vec();

    if let Some(c) = declared {
        let mut violations = Vec::new();
        let (mut lower, mut upper) = (true, true);
        for (i, &(r, v)) in pts.iter().enumerate() {
            let lo = c.a1 + c.b1 * r.powf(c.s);
            let hi = c.a2 + c.b2 * r.powf(c.s);
            let slack = 1e-9 * (1.0 + v.abs());
            let l_ok = v >= lo - slack;
            let u_ok = v <= hi + slack;
            lower &= l_ok;
            upper &= u_ok;
            if !(l_ok && u_ok) {
                violations.push(i);
            }
        }
        let exponent = growth_exponent(&pts, &top, c.a1);
        return Ok(CoercivityReport {
            holds: lower && upper,
            lower_holds: lower,
            upper_holds: upper,
            constants: c,
            fitted: false,
            growth_exponent: exponent,
            violations,
        });
    }

    let scaled: Vec<f64> = top.iter().filter(|&&i| pts[i].0 > 0.0).map(|&i| pts[i].1 / pts[i].0.powf(s)).collect();
    let b1 = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let b2 = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a1 = pts.iter().map(|&(r, v)| v - b1 * r.powf(s)).fold(f64::INFINITY, f64::min);
    let a2 = pts.iter().map(|&(r, v)| v - b2 * r.powf(s)).fold(f64::NEG_INFINITY, f64::max);
    let exponent = growth_exponent(&pts, &top, a1);
    let lower = b1 > 0.0 && b1.is_finite() && exponent.is_some_and(|p| p >= s - EXPONENT_TOLERANCE);
    let upper = b2.is_finite() && exponent.is_some_and(|p| p <= s + EXPONENT_TOLERANCE);
    Ok(CoercivityReport {
        holds: lower && upper,
        lower_holds: lower,
        upper_holds: upper,
        constants: GrowthConstants { a1, a2, b1, b2, s },
        fitted: true,
        growth_exponent: exponent,
        violations: Vec::new(),
    })
}

fn growth_exponent(pts: &[(f64, f64)], top: &[usize], a1: f64) -> Option<f64> {
    let xy: Vec<(f64, f64)> = top
        .iter()
        .map(|&i| pts[i])
        .filter(|&(r, v)| r > 0.0 && v - a1 > 1e-12 * (1.0 + v.abs()))
        .map(|(r, v)| (r.ln(), (v - a1).ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::shadow_decompose;
    use crate::field::CoordBox;
    use crate::parse::parse_polynomial;

    fn p(s: &str, n: usize) -> Polynomial {
        parse_polynomial(s, n).unwrap()
    }

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::from_one_based(v).unwrap()
    }

    fn chart(n: usize, k: usize) -> BundleChart {
        BundleChart::new(n, k, MetricField::euclidean(n + k), CoordBox::unit(n + k)).unwrap()
    }

    #[test]
    fn zero_and_horizontal_costs() {
        let layout = ShadowLayout::new(2, 1, 2);
        let w = FormValue::from_dense(3, 2, &[2.0, 0.0, 0.0]);
        let t = horizontal_projection(&w, 2);
        assert_eq!(ZeroCost.eval(&[0.0; 3], &t), 0.0);
        let c = ComassPowerCost::new(2.0, MetricField::euclidean(3));
        assert!((c.eval(&[0.0; 3], &t) - 4.0).abs() < 1e-12);
        assert!((c.gauged(&[0.0; 3], &layout, &w.dense()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn comass_power_gradient_matches_differences() {
        let metric = MetricField::diagonal(vec![p("1", 4), p("2", 4), p("1 + x1^2", 4), p("3", 4)]).unwrap();
        let c = ComassPowerCost::new(2.5, metric);
        let layout = ShadowLayout::new(2, 2, 2);
        let x = [0.3, 0.1, 0.2, 0.4];
        let w: Vec<f64> = (0..layout.len()).map(|i| 0.3 + 0.17 * i as f64 * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut grad = vec![0.0; w.len()];
        let v = c.gauged_with_gradient(&x, &layout, &w, &mut grad).unwrap();
        assert!((v - c.gauged(&x, &layout, &w)).abs() < 1e-10 * v);
        for i in 0..w.len() {
            let h = 1e-6;
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (c.gauged(&x, &layout, &wp) - c.gauged(&x, &layout, &wm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "slot {}: {} vs {}", i, fd, grad[i]);
        }
    }

    #[test]
    fn double_well_gradient() {
        let layout = ShadowLayout::new(1, 1, 1);
        let mut g = vec![0.0; 2];
        let v = DoubleWellCost.gauged_with_gradient(&[0.0, 0.0], &layout, &[0.5, 0.25], &mut g).unwrap();
        assert!((v - (0.25 + 0.0625)).abs() < 1e-15);
        assert_eq!(g, vec![-1.0, 0.5]);
        DoubleWellCost.gauged_with_gradient(&[0.0, 0.0], &layout, &[-0.5, 0.0], &mut g).unwrap();
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn constant_normal_component_is_not_admissible() {
        let ch = chart(2, 1);
        let dom = StarDomain::centered(CoordBox::unit(3));
        let sd = ShadowData {
            ell: 2,
            n: 2,
            k: 1,
            f: Form::basis(3, idx(&[1, 2])).unwrap(),
            entries: vec![],
            purely_vertical: false,
        };
        let r = check_admissible(&sd, &GaugeForm::zero(3, 1), &dom, &ch, &AdmissibilityOptions::default()).unwrap();
        assert!(r.closed);
        assert!(!r.admissible);
        assert!((r.max_normal_pairing - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bubble_potential_with_opposite_gauge_is_admissible() {
        // ξ = b² η vanishes to first order on the boundary, with b the
        // product of x(1−x) over all axes; the gauge is zero.
        let ch = chart(2, 1);
        let dom = StarDomain::centered(CoordBox::unit(3));
        let b = p("x1*(1-x1)*x2*(1-x2)*x3*(1-x3)", 3);
        let bb = &b * &b;
        let eta = Form::from_terms(3, 1, [(idx(&[1]), p("1 + x3", 3)), (idx(&[3]), p("x2", 3))]).unwrap();
        let xi = eta.mul_scalar(&bb);
        let sd = shadow_decompose(&xi, 2).unwrap();
        let r = check_admissible(&sd, &GaugeForm::zero(3, 1), &dom, &ch, &AdmissibilityOptions::default()).unwrap();
        assert!(r.admissible, "{:?}", r);
    }

    #[test]
    fn representative_reproduces_shadow_form() {
        let ch = chart(1, 1);
        let dom = StarDomain::centered(CoordBox::unit(2));
        let gauge = GaugeForm::new(Form::from_terms(2, 0, [(MultiIndex::empty(), p("x1 + 2*x2", 2))]).unwrap());
        let prob = relax(Arc::new(QuadraticCost::new()), gauge.clone(), dom, ch, 2.0, Discretization::default()).unwrap();
        let xi0 = Form::from_terms(2, 0, [(MultiIndex::empty(), p("x1*x2 + x2^3", 2))]).unwrap();
        let sd = shadow_decompose(&xi0, 1).unwrap();
        let (xi, defect) = prob.representative(&sd, 4).unwrap();
        assert_eq!(xi.exterior_derivative(), xi0.exterior_derivative());
        assert!(defect > 0.0);
        let a = prob.objective_at_potential(&xi0).unwrap();
        let b = prob.objective_at_shadow(&sd).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn coercivity_of_powers() {
        let metric = MetricField::euclidean(2);
        let samples: Vec<_> = (0..10)
            .map(|i| {
                let w = FormValue::from_dense(2, 1, &[2f64.powi(i), 0.5 * 2f64.powi(i)]);
                (vec![0.5, 0.5], horizontal_projection(&w, 1))
            })
            .collect();
        let exact = ComassPowerCost::new(3.0, metric.clone());
        let r = coercivity_check(&exact, &samples, &metric, 3.0, None).unwrap();
        assert!(r.holds, "{:?}", r);
        assert!((r.constants.b1 - 1.0).abs() < 1e-12 && (r.constants.b2 - 1.0).abs() < 1e-12);
        let half = ComassPowerCost::new(1.5, metric.clone());
        let r = coercivity_check(&half, &samples, &metric, 3.0, None).unwrap();
        assert!(!r.lower_holds, "{:?}", r);
    }

    #[test]
    fn relax_rejects_inconsistent_degrees() {
        let ch = chart(1, 1);
        let dom = StarDomain::centered(CoordBox::unit(2));
        let r = relax(Arc::new(ZeroCost), GaugeForm::zero(2, 2), dom, ch, 2.0, Discretization::default());
        assert!(r.is_err());
    }
}
