//! Problem files: a versioned TOML schema describing the chart, domain,
//! cost, gauge, discretization and the optional form, quasiconvexity and
//! comass blocks used by the command-line tool.
//!
//! Unknown keys are rejected. Literal parse errors are reported at their
//! line and column in the document.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::bundle::{BundleChart, StarDomain};
use crate::error::{Error, Result};
use crate::field::CoordBox;
use crate::form::Form;
use crate::metric::MetricField;
use crate::minimizer::{GradientMode, MinimizeOptions};
use crate::parse::{parse_form, parse_polynomial};
use crate::poly::Polynomial;
use crate::pullback::Diffeomorphism;
use crate::quasiconvexity::{
    ConstantQuadratic, CostIntegrand, DoubleWell, EuclideanNorm, Family, Integrand, MetricQuadratic, QcOptions,
};
use crate::relaxation::{named_cost, relax, ComassPowerCost, CostFunction, Discretization, GaugeForm, GaugedProblem, QuadraticCost};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub chart: ChartSpec,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub gauge: Option<LiteralSpec>,
    #[serde(default)]
    pub form: Option<LiteralSpec>,
    #[serde(default)]
    pub discretization: DiscretizationSpec,
    #[serde(default)]
    pub qc: Option<QcSpec>,
    #[serde(default)]
    pub comass: Option<ComassSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub n: usize,
    pub k: usize,
    /// `"euclidean"` (default), `"diagonal"` or `"dense"`.
    #[serde(default = "d_metric")]
    pub metric: String,
    #[serde(default)]
    pub diagonal: Option<Vec<Spanned<String>>>,
    #[serde(default)]
    pub dense: Option<Vec<Vec<Spanned<String>>>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub phi: Option<PhiSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSpec {
    pub components: Vec<Spanned<String>>,
    #[serde(default)]
    pub inverse: Option<Vec<Spanned<String>>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// `"quadratic"`, `"comass_power <s>"` or `"named:<id>"`.
    pub spec: String,
    /// Sobolev exponent; defaults to the comass power, else 2.
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub offset: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LiteralSpec {
    pub literal: Spanned<String>,
    #[serde(default)]
    pub degree: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSpec {
    #[serde(default = "d_resolution")]
    pub resolution: usize,
    #[serde(default = "d_order")]
    pub quadrature_order: usize,
    #[serde(default = "d_cells")]
    pub cells: usize,
    #[serde(default = "d_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_iterations")]
    pub max_iterations: usize,
    #[serde(default = "d_gtol")]
    pub gradient_tolerance: f64,
    #[serde(default = "d_mode")]
    pub gradient_mode: String,
    #[serde(default)]
    pub refinement: Vec<usize>,
}

fn d_metric() -> String {
    "euclidean".into()
}
fn d_resolution() -> usize {
    17
}
fn d_order() -> usize {
    4
}
fn d_cells() -> usize {
    4
}
fn d_tolerance() -> f64 {
    1e-9
}
fn d_iterations() -> usize {
    2000
}
fn d_gtol() -> f64 {
    1e-10
}
fn d_mode() -> String {
    "auto".into()
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        DiscretizationSpec {
            resolution: d_resolution(),
            quadrature_order: d_order(),
            cells: d_cells(),
            tolerance: d_tolerance(),
            seed: 0,
            max_iterations: d_iterations(),
            gradient_tolerance: d_gtol(),
            gradient_mode: d_mode(),
            refinement: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QcSpec {
    /// `metric_quadratic`, `negated_metric_quadratic`, `double_well`, `norm`,
    /// `quadratic` (with `matrix`) or `cost`.
    pub integrand: String,
    pub x0: Vec<f64>,
    pub p: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Well direction of `double_well`; defaults to the first axis.
    #[serde(default)]
    pub e: Option<Vec<f64>>,
    #[serde(default = "d_mode_qc")]
    pub mode: String,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_order")]
    pub order: usize,
    #[serde(default = "d_qc_cells")]
    pub cells: usize,
    #[serde(default = "d_qc_tol")]
    pub relative_tolerance: f64,
    #[serde(default = "d_families")]
    pub families: Vec<Family>,
    /// Side fractions of the random sub-boxes; `[1.0, 1.0]` tests on the
    /// whole region.
    #[serde(default = "d_subbox")]
    pub subbox: [f64; 2],
}

fn d_mode_qc() -> String {
    "riemannian".into()
}
fn d_trials() -> usize {
    1000
}
fn d_qc_cells() -> usize {
    8
}
fn d_qc_tol() -> f64 {
    1e-7
}
fn d_subbox() -> [f64; 2] {
    [0.2, 0.8]
}
fn d_families() -> Vec<Family> {
    vec![Family::Bubble, Family::Hat]
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComassSpec {
    pub point: Vec<f64>,
    #[serde(default = "d_restarts")]
    pub restarts: usize,
}

fn d_restarts() -> usize {
    32
}

/// How the quasiconvexity test averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QcMode {
    Riemannian,
    Euclidean,
}

/// Everything the quasiconvexity subcommand needs.
pub struct QcSetup {
    pub integrand: Arc<dyn Integrand>,
    pub x0: Vec<f64>,
    pub p: Vec<f64>,
    pub region: CoordBox,
    pub metric: MetricField,
    pub mode: QcMode,
    pub options: QcOptions,
}

/// A problem file with its source text, for locating literal errors.
#[derive(Clone, Debug)]
pub struct Problem {
    pub file: ProblemFile,
    pub source: String,
}

fn location(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Problem {
    pub fn from_toml(source: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(source).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s: Range<usize>| location(source, s.start));
            Error::Parse { line, column, message: e.message().trim().to_string() }
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidProblem(format!(
                "unsupported schema_version {} (expected {})",
                file.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(Problem { file, source: source.to_string() })
    }

    /// Re-bases a literal parse error onto the document position.
    fn relocate(&self, lit: &Spanned<String>, e: Error) -> Error {
        match e {
            Error::Parse { line, column, message } => {
                // Offsets are exact for single-line basic strings.
                let span = lit.span();
                let body = span.start + 1;
                let inner = lit.get_ref();
                let offset = inner
                    .split('\n')
                    .take(line - 1)
                    .map(|l| l.len() + 1)
                    .sum::<usize>()
                    + inner.split('\n').nth(line - 1).map_or(0, |l| l.char_indices().nth(column - 1).map_or(l.len(), |(i, _)| i));
                let (line, column) = location(&self.source, body + offset);
                Error::Parse { line, column, message }
            }
            other => other,
        }
    }

    fn polynomial(&self, lit: &Spanned<String>) -> Result<Polynomial> {
        parse_polynomial(lit.get_ref(), self.dim()).map_err(|e| self.relocate(lit, e))
    }

    pub fn dim(&self) -> usize {
        self.file.chart.n + self.file.chart.k
    }

    pub fn metric(&self) -> Result<MetricField> {
        let dim = self.dim();
        let c = &self.file.chart;
        let m = match (c.metric.as_str(), &c.diagonal, &c.dense) {
            ("euclidean", None, None) => MetricField::euclidean(dim),
            ("diagonal", Some(diagonal), None) => {
                MetricField::diagonal(diagonal.iter().map(|e| self.polynomial(e)).collect::<Result<_>>()?)?
            }
            ("dense", None, Some(dense)) => MetricField::dense(
                dense
                    .iter()
                    .map(|row| row.iter().map(|e| self.polynomial(e)).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?,
            )?,
            (kind, _, _) => {
                return Err(Error::InvalidProblem(format!(
                    "metric '{}' needs exactly its own entry list: euclidean takes none, diagonal takes 'diagonal', dense takes 'dense'",
                    kind
                )))
            }
        };
        if m.dim() != dim {
            return Err(Error::DimensionMismatch(format!("metric of dimension {} on a chart of dimension {}", m.dim(), dim)));
        }
        Ok(m)
    }

    pub fn chart(&self) -> Result<BundleChart> {
        let c = &self.file.chart;
        let bounds = CoordBox::new(c.lo.clone(), c.hi.clone())?;
        let chart = BundleChart::new(c.n, c.k, self.metric()?, bounds)?;
        match &c.phi {
            None => Ok(chart),
            Some(phi) => {
                let comps = phi.components.iter().map(|e| self.polynomial(e)).collect::<Result<_>>()?;
                let inverse = match &phi.inverse {
                    Some(inv) => Some(inv.iter().map(|e| self.polynomial(e)).collect::<Result<_>>()?),
                    None => None,
                };
                chart.with_phi(Diffeomorphism::new(comps, inverse)?)
            }
        }
    }

    pub fn domain(&self) -> Result<StarDomain> {
        let c = &self.file.chart;
        let d = self.file.domain.clone().unwrap_or(DomainSpec { lo: None, hi: None, center: None });
        let bounds = CoordBox::new(d.lo.unwrap_or_else(|| c.lo.clone()), d.hi.unwrap_or_else(|| c.hi.clone()))?;
        match d.center {
            Some(x0) => StarDomain::new(bounds, &x0),
            None => Ok(StarDomain::centered(bounds)),
        }
    }

    /// The cost and its Sobolev exponent.
    pub fn cost(&self) -> Result<(Arc<dyn CostFunction>, f64)> {
        let spec = self.file.cost.as_ref().ok_or_else(|| Error::InvalidProblem("missing [cost] block".into()))?;
        let words: Vec<&str> = spec.spec.split_whitespace().collect();
        let (cost, s): (Arc<dyn CostFunction>, f64) = match words.as_slice() {
            ["quadratic"] => (
                Arc::new(QuadraticCost { scale: spec.scale.unwrap_or(1.0), offset: spec.offset.unwrap_or(0.0) }),
                spec.s.unwrap_or(2.0),
            ),
            ["comass_power", s] => {
                let s: f64 = s.parse().map_err(|_| Error::InvalidProblem(format!("invalid comass power '{}'", s)))?;
                (Arc::new(ComassPowerCost::new(s, self.metric()?)), spec.s.unwrap_or(s))
            }
            [named] if named.starts_with("named:") => {
                let id = &named["named:".len()..];
                let cost = named_cost(id).ok_or_else(|| {
                    Error::InvalidProblem(format!("unknown named cost '{}'; registered: {}", id, crate::relaxation::NAMED_COSTS.join(", ")))
                })?;
                (cost, spec.s.unwrap_or(2.0))
            }
            _ => return Err(Error::InvalidProblem(format!("unknown cost spec '{}'", spec.spec))),
        };
        if !matches!(words.as_slice(), ["quadratic"]) && (spec.scale.is_some() || spec.offset.is_some()) {
            return Err(Error::InvalidProblem("scale and offset apply to the quadratic cost only".into()));
        }
        Ok((cost, s))
    }

    fn literal(&self, spec: &LiteralSpec) -> Result<Form<Polynomial>> {
        parse_form(spec.literal.get_ref(), self.dim(), spec.degree).map_err(|e| self.relocate(&spec.literal, e))
    }

    pub fn gauge(&self) -> Result<GaugeForm> {
        let spec = self.file.gauge.as_ref().ok_or_else(|| Error::InvalidProblem("missing [gauge] block".into()))?;
        Ok(GaugeForm::new(self.literal(spec)?))
    }

    /// The `[form]` block.
    pub fn form(&self) -> Result<Form<Polynomial>> {
        let spec = self.file.form.as_ref().ok_or_else(|| Error::InvalidProblem("missing [form] block".into()))?;
        self.literal(spec)
    }

    pub fn discretization(&self) -> Discretization {
        let d = &self.file.discretization;
        Discretization {
            resolution: d.resolution,
            quadrature_order: d.quadrature_order,
            cells: d.cells,
            tolerance: d.tolerance,
            seed: d.seed,
        }
    }

    pub fn minimize_options(&self) -> Result<MinimizeOptions> {
        let d = &self.file.discretization;
        let gradient_mode = match d.gradient_mode.as_str() {
            "auto" => GradientMode::Auto,
            "adjoint" => GradientMode::Adjoint,
            "finite-difference" => GradientMode::FiniteDifference,
            other => {
                return Err(Error::InvalidProblem(format!(
                    "unknown gradient_mode '{}'; use auto, adjoint or finite-difference",
                    other
                )))
            }
        };
        Ok(MinimizeOptions {
            max_iterations: d.max_iterations,
            gradient_tolerance: d.gradient_tolerance,
            gradient_mode,
            ..MinimizeOptions::default()
        })
    }

    pub fn gauged_problem(&self) -> Result<GaugedProblem> {
        let (cost, s) = self.cost()?;
        relax(cost, self.gauge()?, self.domain()?, self.chart()?, s, self.discretization())
    }

    pub fn qc_setup(&self) -> Result<QcSetup> {
        let q = self.file.qc.as_ref().ok_or_else(|| Error::InvalidProblem("missing [qc] block".into()))?;
        let dim = self.dim();
        let metric = self.metric()?;
        let integrand: Arc<dyn Integrand> = match q.integrand.as_str() {
            "metric_quadratic" => Arc::new(MetricQuadratic { metric: metric.clone(), sign: 1.0 }),
            "negated_metric_quadratic" => Arc::new(MetricQuadratic { metric: metric.clone(), sign: -1.0 }),
            "norm" => Arc::new(EuclideanNorm { dim }),
            "double_well" => {
                let e = q.e.clone().unwrap_or_else(|| {
                    let mut e = vec![0.0; dim];
                    e[0] = 1.0;
                    e
                });
                Arc::new(DoubleWell { e })
            }
            "quadratic" => {
                let rows = q.matrix.as_ref().ok_or_else(|| Error::InvalidProblem("the quadratic integrand needs 'matrix'".into()))?;
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::DimensionMismatch(format!("matrix must be {}x{}", dim, dim)));
                }
                let a = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                Arc::new(ConstantQuadratic { a, b: vec![0.0; dim], c: 0.0 })
            }
            "cost" => {
                let p = self.gauged_problem()?;
                Arc::new(CostIntegrand { gauged: p.gauged_cost() })
            }
            other => return Err(Error::InvalidProblem(format!("unknown qc integrand '{}'", other))),
        };
        let mode = match q.mode.as_str() {
            "riemannian" => QcMode::Riemannian,
            "euclidean" => QcMode::Euclidean,
            other => return Err(Error::InvalidProblem(format!("unknown qc mode '{}'", other))),
        };
        let slot = crate::multi_index::binomial(dim, integrand.slot_degree());
        if q.x0.len() != dim || q.p.len() != slot {
            return Err(Error::DimensionMismatch(format!(
                "x0 needs {} entries and p needs {} for this integrand",
                dim, slot
            )));
        }
        let options = QcOptions {
            trials: q.trials,
            seed: self.file.discretization.seed,
            order: q.order,
            cells: q.cells,
            relative_tolerance: q.relative_tolerance,
            families: q.families.clone(),
            subbox_range: (q.subbox[0], q.subbox[1]),
            ..QcOptions::default()
        };
        Ok(QcSetup {
            integrand,
            x0: q.x0.clone(),
            p: q.p.clone(),
            region: CoordBox::new(q.lo.clone(), q.hi.clone())?,
            metric,
            mode,
            options,
        })
    }
}
