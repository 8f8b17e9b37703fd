use std::fs;
use std::path::Path;
use std::time::Instant;

use fibreforms::bundle::{index_set, summed_binomial_bound};
use fibreforms::config::{Problem, QcMode};
use fibreforms::minimizer::{minimize, refinement_study, Init, Termination};
use fibreforms::quasiconvexity::{
    draw_test_function, euclidean_qc_test, form_slot_qc_test, riemannian_qc_test, QcReport,
};
use fibreforms::relaxation::{check_admissible, coercivity_check, AdmissibilityOptions};
use fibreforms::rng::{normal, stream_rng};
use fibreforms::{check_closedness, shadow_decompose, shadow_reconstruct, Error, Polynomial, ShadowData};
use serde::{Deserialize, Serialize};

use crate::output::{Cell, OutputDir};

/// Overrides and switches shared by the subcommands. Recorded verbatim in
/// the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub resolution: Option<usize>,
    pub trials: Option<usize>,
    pub quadrature_order: Option<usize>,
    #[serde(default)]
    pub euclidean: bool,
    #[serde(default)]
    pub shadow: Option<String>,
    #[serde(default)]
    pub from: Option<String>,
}

/// Process outcome: exit code plus a message for stderr.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

impl Exit {
    pub fn config(message: impl Into<String>) -> Self {
        Exit { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Exit { code: EXIT_RUNTIME, message: message.into() }
    }

    /// Classifies a library error; `origin` prefixes parse locations.
    pub fn from_error(e: Error, origin: &str) -> Self {
        match e {
            Error::Parse { line, column, message } => Exit::config(format!("{}:{}:{}: {}", origin, line, column, message)),
            Error::InvalidProblem(_)
            | Error::DimensionMismatch(_)
            | Error::DegreeOutOfRange(_)
            | Error::InvalidMultiIndex(_)
            | Error::NoInteriorDofs(_)
            | Error::Json(_) => Exit::config(format!("{}: {}", origin, e)),
            other => Exit::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Exit {
    fn from(e: std::io::Error) -> Self {
        Exit::runtime(format!("i/o error: {}", e))
    }
}

/// A loaded problem file with overrides applied.
pub struct Context {
    pub problem: Problem,
    pub origin: String,
    pub options: RunOptions,
}

impl Context {
    pub fn new(text: &str, origin: &str, options: RunOptions) -> Result<Self, Exit> {
        let mut problem = Problem::from_toml(text).map_err(|e| Exit::from_error(e, origin))?;
        let d = &mut problem.file.discretization;
        if let Some(s) = options.seed {
            d.seed = s;
        }
        if let Some(r) = options.resolution {
            d.resolution = r;
        }
        if let Some(q) = options.quadrature_order {
            d.quadrature_order = q;
            if let Some(qc) = problem.file.qc.as_mut() {
                qc.order = q;
            }
        }
        if let Some(t) = options.trials {
            if let Some(qc) = problem.file.qc.as_mut() {
                qc.trials = t;
            }
        }
        if let Some(tol) = options.tolerance {
            problem.file.discretization.tolerance = tol;
            if let Some(qc) = problem.file.qc.as_mut() {
                qc.relative_tolerance = tol;
            }
        }
        Ok(Context { problem, origin: origin.to_string(), options })
    }

    fn lift<T>(&self, r: fibreforms::Result<T>) -> Result<T, Exit> {
        r.map_err(|e| Exit::from_error(e, &self.origin))
    }

    fn tolerance(&self) -> f64 {
        self.problem.file.discretization.tolerance
    }
}

#[derive(Serialize)]
struct DecomposeReport {
    n: usize,
    k: usize,
    ell: usize,
    entries: usize,
    index_set_size: usize,
    summed_binomial_display: usize,
    within_bound: bool,
    purely_vertical: bool,
    reconstruction_matches: bool,
    closed: bool,
    residual_max: f64,
}

pub fn decompose(ctx: &Context, out: &mut OutputDir) -> Result<i32, Exit> {
    let chart = ctx.lift(ctx.problem.chart())?;
    let xi = ctx.lift(ctx.problem.form())?;
    let sd = ctx.lift(shadow_decompose(&xi, chart.n))?;
    let closedness = ctx.lift(check_closedness(&sd, ctx.tolerance()))?;
    let reconstruction_matches = ctx.lift(shadow_reconstruct(&sd))? == xi.exterior_derivative();
    let bound = index_set(chart.n, chart.k, sd.ell).len();
    let report = DecomposeReport {
        n: chart.n,
        k: chart.k,
        ell: sd.ell,
        entries: sd.entries.len(),
        index_set_size: bound,
        summed_binomial_display: summed_binomial_bound(chart.n, chart.k, sd.ell),
        within_bound: sd.entries.len() <= bound,
        purely_vertical: sd.purely_vertical,
        reconstruction_matches,
        closed: closedness.closed,
        residual_max: closedness.residual_max,
    };
    out.write_json("shadow.json", &sd)?;
    out.write_json("decompose.json", &report)?;
    Ok(if report.reconstruction_matches && report.closed && report.within_bound { EXIT_OK } else { EXIT_VIOLATION })
}

#[derive(Serialize)]
struct ShadowCheck {
    source: String,
    entries: usize,
    closed: bool,
    closedness_residual: f64,
    admissible: bool,
    max_normal_pairing: f64,
    worst_point: Option<Vec<f64>>,
    tolerance: f64,
}

pub fn check_shadow(ctx: &Context, out: &mut OutputDir) -> Result<i32, Exit> {
    let chart = ctx.lift(ctx.problem.chart())?;
    let (sd, source): (ShadowData<Polynomial>, String) = match &ctx.options.shadow {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Exit::config(format!("{}: {}", path, e)))?;
            let sd: ShadowData<Polynomial> = serde_json::from_str(&text).map_err(|e| {
                Exit::config(format!("{}:{}:{}: {}", path, e.line(), e.column(), e))
            })?;
            (sd, path.clone())
        }
        None => {
            let xi = ctx.lift(ctx.problem.form())?;
            (ctx.lift(shadow_decompose(&xi, chart.n))?, "form".to_string())
        }
    };
    ctx.lift(sd.validate())?;
    if sd.n != chart.n || sd.k != chart.k {
        return Err(Exit::config(format!("shadow data for (n, k) = ({}, {}) on a ({}, {}) chart", sd.n, sd.k, chart.n, chart.k)));
    }
    let gauge = ctx.lift(ctx.problem.gauge())?;
    let domain = ctx.lift(ctx.problem.domain())?;
    let opts = AdmissibilityOptions { tolerance: ctx.tolerance(), ..AdmissibilityOptions::default() };
    let rep = ctx.lift(check_admissible(&sd, &gauge, &domain, &chart, &opts))?;
    let report = ShadowCheck {
        source,
        entries: sd.entries.len(),
        closed: rep.closed,
        closedness_residual: rep.closedness_residual,
        admissible: rep.admissible,
        max_normal_pairing: rep.max_normal_pairing,
        worst_point: rep.worst_point,
        tolerance: opts.tolerance,
    };
    out.write_json("check-shadow.json", &report)?;
    Ok(if report.admissible { EXIT_OK } else { EXIT_VIOLATION })
}

#[derive(Serialize)]
struct RelaxReport {
    n: usize,
    k: usize,
    ell: usize,
    cost: String,
    s: f64,
    slots: Vec<String>,
    objective_at_gauge: f64,
    objective_at_form: Option<f64>,
    coercivity: fibreforms::relaxation::CoercivityReport,
}

pub fn relax(ctx: &Context, out: &mut OutputDir) -> Result<i32, Exit> {
    let problem = ctx.lift(ctx.problem.gauged_problem())?;
    let layout = problem.layout();
    let at_gauge = ctx.lift(problem.objective_at_potential(&problem.gauge.xi_tilde))?;
    let at_form = match &ctx.problem.file.form {
        Some(_) => Some(ctx.lift(ctx.problem.form().and_then(|xi| problem.objective_at_potential(&xi)))?),
        None => None,
    };
    // geometric scalings of one random direction at the domain center
    let seed = ctx.problem.file.discretization.seed;
    let mut rng = stream_rng(seed, fibreforms::rng::streams::COERCIVITY, 0);
    let w0: Vec<f64> = (0..layout.len()).map(|_| normal(&mut rng)).collect();
    let x0 = problem.domain.center();
    let samples: Vec<_> = (0..10)
        .map(|i| {
            let t = 2f64.powi(i);
            (x0.clone(), layout.tuple(&w0.iter().map(|c| c * t).collect::<Vec<_>>()))
        })
        .collect();
    let coercivity = ctx.lift(coercivity_check(problem.cost.as_ref(), &samples, &problem.chart.metric, problem.s, problem.cost.growth()))?;
    let report = RelaxReport {
        n: problem.chart.n,
        k: problem.chart.k,
        ell: problem.ell(),
        cost: problem.cost.name(),
        s: problem.s,
        slots: layout.slots.iter().map(|i| i.to_string()).collect(),
        objective_at_gauge: at_gauge,
        objective_at_form: at_form,
        coercivity,
    };
    out.write_json("relax.json", &report)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct QcSummary<'a> {
    integrand: String,
    mode: &'static str,
    x0: &'a [f64],
    p: &'a [f64],
    #[serde(flatten)]
    report: &'a QcReport,
}

pub fn qc_test(ctx: &Context, out: &mut OutputDir) -> Result<i32, Exit> {
    let setup = ctx.lift(ctx.problem.qc_setup())?;
    let mode = if ctx.options.euclidean { QcMode::Euclidean } else { setup.mode };
    let f = setup.integrand.as_ref();
    let report = match (mode, f.slot_degree()) {
        (QcMode::Euclidean, 1) => euclidean_qc_test(f, &setup.x0, &setup.p, &setup.region, &setup.options),
        (QcMode::Riemannian, 1) => riemannian_qc_test(f, &setup.x0, &setup.p, &setup.region, &setup.metric, &setup.options),
        (QcMode::Riemannian, _) => form_slot_qc_test(f, &setup.x0, &setup.p, &setup.region, &setup.metric, &setup.options),
        (QcMode::Euclidean, _) => {
            let flat = fibreforms::MetricField::euclidean(f.dim());
            form_slot_qc_test(f, &setup.x0, &setup.p, &setup.region, &flat, &setup.options)
        }
    };
    let report = ctx.lift(report)?;
    let summary = QcSummary {
        integrand: f.name(),
        mode: if mode == QcMode::Euclidean { "euclidean" } else { "riemannian" },
        x0: &setup.x0,
        p: &setup.p,
        report: &report,
    };
    let dim = setup.region.dim();
    let mut rows = Vec::with_capacity(report.gaps.len());
    for (t, g) in report.gaps.iter().enumerate() {
        let tf = ctx.lift(draw_test_function(&setup.region, &setup.x0, t, &setup.options))?;
        let mut row = vec![
            Cell::Int(t as i64),
            Cell::Text(format!("{:?}", tf.family).to_lowercase()),
            Cell::Float(*g),
            Cell::Text(if *g < -report.tolerance { "violation" } else { "pass" }.into()),
        ];
        row.extend(tf.region.lo.iter().chain(&tf.region.hi).map(|v| Cell::Float(*v)));
        rows.push(row);
    }
    let mut header: Vec<String> = ["trial", "family", "gap", "decision"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=dim).map(|a| format!("lo{}", a)));
    header.extend((1..=dim).map(|a| format!("hi{}", a)));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv("qc-gaps.csv", &header, &rows)?;
    if report.violation_found {
        out.write_json("qc-witness.json", &report.witness)?;
    }
    out.write_json("qc.json", &summary)?;
    Ok(if report.violation_found { EXIT_VIOLATION } else { EXIT_OK })
}

pub fn minimize_cmd(ctx: &Context, out: &mut OutputDir) -> Result<i32, Exit> {
    let problem = ctx.lift(ctx.problem.gauged_problem())?;
    let mut options = ctx.lift(ctx.problem.minimize_options())?;
    if let Some(t) = ctx.options.tolerance {
        options.gradient_tolerance = t;
    }
    let (field, report) = ctx.lift(minimize(&problem, Init::Gauge, &options))?;
    let rows: Vec<Vec<Cell>> =
        report.history.iter().enumerate().map(|(i, v)| vec![Cell::Int(i as i64), Cell::Float(*v)]).collect();
    out.write_csv("history.csv", &["iteration", "objective"], &rows)?;
    out.write_json("field.json", &field.to_form())?;
    let refinement = &ctx.problem.file.discretization.refinement;
    if !refinement.is_empty() {
        let study = ctx.lift(refinement_study(&problem, refinement, &options))?;
        let rows: Vec<Vec<Cell>> = study
            .rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Int(r.resolution as i64),
                    Cell::Float(r.h),
                    Cell::Float(r.objective),
                    Cell::Int(r.iterations as i64),
                    Cell::Text(format!("{:?}", r.termination).to_lowercase()),
                ]
            })
            .collect();
        out.write_csv("refinement.csv", &["resolution", "h", "objective", "iterations", "termination"], &rows)?;
        out.write_json("refinement.json", &study)?;
    }
    out.write_json("solve.json", &report)?;
    Ok(match report.termination {
        Termination::Converged | Termination::Stagnated => EXIT_OK,
        Termination::LineSearchStall | Termination::MaxIterations => EXIT_NOT_CONVERGED,
    })
}

#[derive(Serialize)]
struct ComassReport {
    point: Vec<f64>,
    value: f64,
    closed_form: bool,
    maximizer: Vec<Vec<f64>>,
    simple_vector: Vec<f64>,
}

pub fn comass_cmd(ctx: &Context, out: &mut OutputDir) -> Result<i32, Exit> {
    let spec = ctx.problem.file.comass.as_ref().ok_or_else(|| Exit::config(format!("{}: missing [comass] block", ctx.origin)))?;
    let form = ctx.lift(ctx.problem.form())?;
    let metric = ctx.lift(ctx.problem.metric())?;
    if spec.point.len() != metric.dim() {
        return Err(Exit::config(format!("{}: comass point needs {} coordinates", ctx.origin, metric.dim())));
    }
    let value = form.eval(&spec.point);
    let m = ctx.lift(metric.at(&spec.point))?;
    let opts = fibreforms::ComassOptions {
        restarts: spec.restarts,
        seed: ctx.problem.file.discretization.seed,
        ..fibreforms::ComassOptions::default()
    };
    let r = fibreforms::comass_value(&value, &m, &opts);
    out.write_json(
        "comass.json",
        &ComassReport {
            point: spec.point.clone(),
            value: r.value,
            closed_form: r.closed_form,
            maximizer: r.maximizer,
            simple_vector: r.simple_vector,
        },
    )?;
    Ok(EXIT_OK)
}

/// Collects the headline numbers of the reports found in a directory.
pub fn report(from: &Path, out: &mut OutputDir) -> Result<i32, Exit> {
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let read = |name: &str| -> Result<Option<serde_json::Value>, Exit> {
        let path = from.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| Exit::config(format!("{}: {}", path.display(), e)))
    };
    let mut push = |source: &str, key: &str, v: &serde_json::Value| {
        let cell = match v {
            serde_json::Value::Number(n) if n.is_f64() => Cell::Float(n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::Number(n) => Cell::Int(n.as_i64().unwrap_or(0)),
            serde_json::Value::Null => Cell::Float(f64::NAN),
            other => Cell::Text(other.to_string().trim_matches('"').to_string()),
        };
        rows.push(vec![Cell::Text(source.into()), Cell::Text(key.into()), cell]);
    };
    let picks: [(&str, &[&str]); 6] = [
        ("decompose.json", &["entries", "index_set_size", "reconstruction_matches", "closed", "residual_max"]),
        ("check-shadow.json", &["closed", "admissible", "max_normal_pairing"]),
        ("relax.json", &["cost", "s", "objective_at_gauge"]),
        ("qc.json", &["integrand", "mode", "violation_found", "worst_gap", "certified_gap", "certified", "trials"]),
        ("solve.json", &["objective", "termination", "iterations", "gradient_norm", "descent_violations", "dofs"]),
        ("comass.json", &["value", "closed_form"]),
    ];
    for (file, keys) in picks {
        if let Some(doc) = read(file)? {
            for key in keys {
                if let Some(v) = doc.get(*key) {
                    push(file, key, v);
                }
            }
        }
    }
    if let Some(doc) = read("refinement.json")? {
        for key in ["max_successive_change", "nonincreasing", "relaxation_gap_suspected"] {
            if let Some(v) = doc.get(key) {
                push("refinement.json", key, v);
            }
        }
    }
    if rows.is_empty() {
        return Err(Exit::config(format!("{}: no reports found", from.display())));
    }
    out.write_csv("report.csv", &["source", "quantity", "value"], &rows)?;
    Ok(EXIT_OK)
}

/// Wall-clock timing, printed only on request and never written to files.
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }
    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
