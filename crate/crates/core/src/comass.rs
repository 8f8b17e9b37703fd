//! Comass of a covector: the supremum of its pairing with simple unit
//! multivectors.
//!
//! Forms of degree 0, 1, N−1 and N are always simple, and for them (and for
//! any other detectably simple form) the comass equals the induced metric
//! norm. Otherwise the supremum is approximated by multi-start projected
//! gradient ascent over g-orthonormal ℓ-frames.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Result;
use crate::form::{Form, FormValue};
use crate::metric::{MetricAt, MetricField};
use crate::multi_index::MultiIndex;
use crate::rng::{stream_rng, streams};

/// Tunables for the ascent.
#[derive(Clone, Debug)]
pub struct ComassOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ComassOptions {
    fn default() -> Self {
        ComassOptions { restarts: 32, max_iterations: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ComassResult {
    pub value: f64,
    /// g-orthonormal vectors `v_1..v_ℓ` whose wedge attains `value`.
    pub maximizer: Vec<Vec<f64>>,
    /// Components `χ^I = det V[I,:]` of the maximizing simple ℓ-vector, in the
    /// lexicographic basis; also the gradient of the comass in the coefficients.
    pub simple_vector: Vec<f64>,
    /// True when the value came from the closed-form norm of a simple form.
    pub closed_form: bool,
}

/// Comass of a form at a point.
pub fn comass<C: crate::field::Coefficient>(a: &Form<C>, g: &MetricField, x: &[f64]) -> Result<ComassResult> {
    let m = g.at(x)?;
    Ok(comass_value(&a.eval(x), &m, &ComassOptions::default()))
}

/// Comass of a constant-coefficient form under the metric data `m`.
pub fn comass_value(a: &FormValue, m: &MetricAt, opts: &ComassOptions) -> ComassResult {
    let n = a.dim();
    let l = a.degree();
    let basis = MultiIndex::all(n, l);
    if a.is_zero() || l > n {
        return ComassResult {
            value: 0.0,
            maximizer: Vec::new(),
            simple_vector: vec![0.0; basis.len()],
            closed_form: true,
        };
    }
    if l == 0 {
        let c = a.terms().values().next().copied().unwrap_or(0.0);
        return ComassResult { value: c.abs(), maximizer: Vec::new(), simple_vector: vec![c.signum()], closed_form: true };
    }
    if l == 1 {
        let p = a.dense();
        let v = &m.g_inv * DVector::from_column_slice(&p);
        let norm = p.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
        let dir: Vec<f64> = v.iter().map(|t| t / norm).collect();
        return ComassResult { value: norm, simple_vector: dir.clone(), maximizer: vec![dir], closed_form: true };
    }
    let best = ascend(a, &basis, m, opts);
    if let Some(norm) = simple_norm(a, m) {
        // exact value; the ascent supplies the maximizing frame
        return ComassResult { value: norm, closed_form: true, ..best };
    }
    best
}

/// Comass and its gradient with respect to the dense coefficients of `a`.
/// Uses the closed form whenever the form is simple.
pub fn comass_with_gradient(a: &FormValue, m: &MetricAt, opts: &ComassOptions) -> (f64, Vec<f64>) {
    let n = a.dim();
    let l = a.degree();
    let basis = MultiIndex::all(n, l);
    if a.is_zero() {
        return (0.0, vec![0.0; basis.len()]);
    }
    if l <= 1 {
        let r = comass_value(a, m, opts);
        return (r.value, r.simple_vector);
    }
    if let Some(norm) = simple_norm(a, m) {
        // d|a|/da = G a / |a| with G the induced Gram matrix
        let dense = a.dense();
        let grad = basis
            .iter()
            .map(|i| basis.iter().zip(&dense).map(|(j, c)| m.basis_dot(i, j) * c).sum::<f64>() / norm)
            .collect();
        return (norm, grad);
    }
    let r = ascend(a, &basis, m, opts);
    (r.value, r.simple_vector)
}

/// The induced norm when `a` is detectably simple: a single term, degree N or
/// N−1, or a 2-form with `a ∧ a = 0`.
pub fn simple_norm(a: &FormValue, m: &MetricAt) -> Option<f64> {
    let n = a.dim();
    let l = a.degree();
    let simple = a.num_terms() <= 1
        || l + 1 >= n
        || l <= 1
        || (l == 2 && {
            let aa = a.wedge(a).expect("same chart");
            aa.max_abs() <= 1e-14 * a.max_abs().powi(2)
        });
    if simple {
        Some(m.form_dot(a, a).max(0.0).sqrt())
    } else {
        None
    }
}

fn frame_value(coeffs: &[(Vec<usize>, f64)], v: &DMatrix<f64>) -> f64 {
    let l = v.ncols();
    coeffs
        .iter()
        .map(|(rows, c)| c * DMatrix::from_fn(l, l, |a, b| v[(rows[a], b)]).determinant())
        .sum()
}

fn frame_gradient(coeffs: &[(Vec<usize>, f64)], v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, l) = v.shape();
    let mut grad = DMatrix::zeros(n, l);
    for (rows, c) in coeffs {
        let sub = DMatrix::from_fn(l, l, |a, b| v[(rows[a], b)]);
        // d det(S)/dS = cofactor matrix
        for a in 0..l {
            for b in 0..l {
                let minor = sub.clone().remove_row(a).remove_column(b);
                let cof = if (a + b) % 2 == 0 { 1.0 } else { -1.0 } * if l == 1 { 1.0 } else { minor.determinant() };
                grad[(rows[a], b)] += c * cof;
            }
        }
    }
    grad
}

fn gram_schmidt(u: &mut DMatrix<f64>) -> bool {
    let l = u.ncols();
    for b in 0..l {
        for a in 0..b {
            let d = u.column(a).dot(&u.column(b));
            let ca = u.column(a).clone_owned();
            let mut cb = u.column_mut(b);
            cb -= ca * d;
        }
        let norm = u.column(b).norm();
        if !(norm > 1e-300) {
            return false;
        }
        u.column_mut(b).scale_mut(1.0 / norm);
    }
    true
}

fn ascend(a: &FormValue, basis: &[MultiIndex], m: &MetricAt, opts: &ComassOptions) -> ComassResult {
    let n = a.dim();
    let l = a.degree();
    let coeffs: Vec<(Vec<usize>, f64)> = a.terms().iter().map(|(i, c)| (i.indices().to_vec(), *c)).collect();
    // v = L^{-T} u maps Euclidean-orthonormal frames to g-orthonormal ones
    let lt_inv = m.chol.transpose().try_inverse().expect("Cholesky factor is invertible");
    let l_inv = lt_inv.transpose();
    let value_of = |u: &DMatrix<f64>| frame_value(&coeffs, &(&lt_inv * u));

    let runs: Vec<(f64, DMatrix<f64>)> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(opts.seed, streams::COMASS, r as u64);
            let mut u = DMatrix::from_fn(n, l, |_, _| crate::rng::normal(&mut rng));
            while !gram_schmidt(&mut u) {
                u = DMatrix::from_fn(n, l, |_, _| crate::rng::normal(&mut rng));
            }
            let mut f = value_of(&u);
            if f < 0.0 {
                u.column_mut(0).neg_mut();
                f = -f;
            }
            let mut step = 0.5;
            for _ in 0..opts.max_iterations {
                let gv = frame_gradient(&coeffs, &(&lt_inv * &u));
                let gu = &l_inv * gv;
                // project onto the tangent space of the Stiefel manifold
                let utg = u.transpose() * &gu;
                let sym = (&utg + utg.transpose()) * 0.5;
                let dir = &gu - &u * sym;
                let dn = dir.norm();
                if !(dn > 1e-15 * (1.0 + f.abs())) {
                    break;
                }
                let mut accepted = false;
                while step > 1e-16 {
                    let mut cand = &u + &dir * (step / dn);
                    if gram_schmidt(&mut cand) {
                        let fc = value_of(&cand);
                        if fc > f {
                            u = cand;
                            f = fc;
                            accepted = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
                step = (step * 2.0).min(1.0);
            }
            (f, u)
        })
        .collect();

    // fixed-order reduction: first strict maximum wins
    let mut best = 0;
    for (k, (f, _)) in runs.iter().enumerate() {
        if *f > runs[best].0 {
            best = k;
        }
    }
    let (value, u) = &runs[best];
    let v = &lt_inv * u;
    let maximizer: Vec<Vec<f64>> = (0..l).map(|c| v.column(c).iter().copied().collect()).collect();
    let simple_vector = basis
        .iter()
        .map(|i| DMatrix::from_fn(l, l, |a, b| v[(i.indices()[a], b)]).determinant())
        .collect();
    ComassResult { value: *value, maximizer, simple_vector, closed_form: false }
}

/// Pairing of a form value with the simple ℓ-vector spanned by `vectors`.
pub fn pair_with_frame(a: &FormValue, vectors: &[Vec<f64>]) -> f64 {
    let l = vectors.len();
    a.terms()
        .iter()
        .map(|(i, c)| c * DMatrix::from_fn(l, l, |r, col| vectors[col][i.indices()[r]]).determinant())
        .sum()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricField;

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::from_one_based(v).unwrap()
    }

    fn flat(n: usize) -> MetricAt {
        MetricField::euclidean(n).at(&vec![0.0; n]).unwrap()
    }

    #[test]
    fn one_form_comass_is_metric_norm() {
        let a = FormValue::basis_value(3, idx(&[1]), 3.0).unwrap();
        let r = comass_value(&a, &flat(3), &ComassOptions::default());
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn top_degree_comass() {
        let a = FormValue::basis_value(3, idx(&[1, 2, 3]), -2.5).unwrap();
        let r = comass_value(&a, &flat(3), &ComassOptions::default());
        assert!((r.value - 2.5).abs() < 1e-12);
        assert!((pair_with_frame(&a, &r.maximizer).abs() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn symplectic_form_has_unit_comass() {
        let a = Form::from_terms(4, 2, [(idx(&[1, 2]), 1.0), (idx(&[3, 4]), 1.0)]).unwrap();
        assert!(simple_norm(&a, &flat(4)).is_none());
        let r = comass_value(&a, &flat(4), &ComassOptions::default());
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
        assert!(!r.closed_form);
        assert!((pair_with_frame(&a, &r.maximizer) - r.value).abs() < 1e-12);
    }

    #[test]
    fn curved_metric_one_form() {
        let g = MetricField::diagonal(vec![
            crate::parse::parse_polynomial("4", 2).unwrap(),
            crate::parse::parse_polynomial("1", 2).unwrap(),
        ])
        .unwrap();
        let m = g.at(&[0.0, 0.0]).unwrap();
        let a = FormValue::basis_value(2, idx(&[1]), 2.0).unwrap();
        // |2 dx1|_g = sqrt(4 / 4) = 1
        let r = comass_value(&a, &m, &ComassOptions::default());
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_for_generic_two_form() {
        let a = Form::from_terms(4, 2, [(idx(&[1, 2]), 1.0), (idx(&[3, 4]), 0.5), (idx(&[1, 3]), 0.2)]).unwrap();
        let m = flat(4);
        let opts = ComassOptions::default();
        let (v, g) = comass_with_gradient(&a, &m, &opts);
        let dense = a.dense();
        let h = 1e-6;
        for k in 0..dense.len() {
            let mut p = dense.clone();
            p[k] += h;
            let mut q = dense.clone();
            q[k] -= h;
            let fd = (comass_with_gradient(&FormValue::from_dense(4, 2, &p), &m, &opts).0
                - comass_with_gradient(&FormValue::from_dense(4, 2, &q), &m, &opts).0)
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5, "k={} fd={} g={} v={}", k, fd, g[k], v);
        }
    }
}
