//! Radial homotopy operator on star-shaped domains:
//! `(K a)(x) = ∫₀¹ t^{ℓ−1} ι_{x−x₀} a(x₀ + t(x−x₀)) dt`,
//! satisfying `dK + Kd = id` in degrees `ℓ ≥ 1`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::bundle::StarDomain;
use crate::error::{Error, Result};
use crate::field::{CallableField, Coefficient};
use crate::form::Form;
use crate::multi_index::MultiIndex;
use crate::poly::Polynomial;
use crate::quadrature::gauss_legendre_on;

/// Number of Gauss–Legendre nodes in `t` for non-polynomial coefficients.
pub const T_NODES: usize = 16;

/// Exact homotopy operator for polynomial coefficients.
pub fn homotopy_operator(a: &Form<Polynomial>, center: &[BigRational]) -> Form<Polynomial> {
    let dim = a.dim();
    let ell = a.degree();
    let mut out = Form::zero(dim, ell.saturating_sub(1));
    if ell == 0 {
        return out;
    }
    let neg: Vec<BigRational> = center.iter().map(|c| -c.clone()).collect();
    for (idx, c) in a.terms() {
        // ∫ t^{ℓ−1} t^{|α|} dt = 1/(ℓ+|α|) on monomials centered at x₀.
        let weighted = c
            .shift(center)
            .map_by_degree(|d| BigRational::new(BigInt::from(1), BigInt::from(ell as u64 + d as u64)))
            .shift(&neg);
        for (pos, &i) in idx.indices().iter().enumerate() {
            let radial = &Polynomial::var(dim, i) - &Polynomial::constant(dim, center[i].clone());
            let coeff = &weighted * &radial;
            let sign = if pos % 2 == 0 { 1 } else { -1 };
            out.accumulate(idx.remove_at(pos), coeff.signed(sign)).expect("same representation");
        }
    }
    out
}

/// A primitive `ξ` with `dξ = h` on the star domain. Fails unless `h` is
/// closed.
pub fn poincare_antiderivative(h: &Form<Polynomial>, dom: &StarDomain) -> Result<Form<Polynomial>> {
    check_degree(h.degree(), h.dim(), dom)?;
    let dh = h.exterior_derivative();
    if !dh.is_zero() {
        return Err(Error::NotClosed { residual: dh.max_abs_coefficient(), tolerance: 0.0 });
    }
    Ok(homotopy_operator(h, dom.center_exact()))
}

fn check_degree(ell: usize, dim: usize, dom: &StarDomain) -> Result<()> {
    if ell == 0 {
        return Err(Error::DegreeOutOfRange("a 0-form has no antiderivative".into()));
    }
    if dim != dom.dim() {
        return Err(Error::DimensionMismatch(format!("form of dimension {} on a domain of dimension {}", dim, dom.dim())));
    }
    Ok(())
}

/// Homotopy operator for black-box coefficients, by Gauss–Legendre
/// quadrature in `t`.
pub fn homotopy_operator_callable(a: &Form<CallableField>, center: &[f64]) -> Form<CallableField> {
    let dim = a.dim();
    let ell = a.degree();
    let mut out = Form::zero(dim, ell.saturating_sub(1));
    if ell == 0 {
        return out;
    }
    // Contributions to each output index: (sign, coefficient, radial axis).
    let mut parts: BTreeMap<MultiIndex, Vec<(f64, CallableField, usize)>> = BTreeMap::new();
    for (idx, c) in a.terms() {
        for (pos, &i) in idx.indices().iter().enumerate() {
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            parts.entry(idx.remove_at(pos)).or_default().push((sign, c.clone(), i));
        }
    }
    let (ts, ws) = gauss_legendre_on(T_NODES, 0.0, 1.0);
    let weights: Arc<Vec<(f64, f64)>> =
        Arc::new(ts.iter().zip(&ws).map(|(&t, &w)| (t, w * t.powi(ell as i32 - 1))).collect());
    let x0: Arc<Vec<f64>> = Arc::new(center.to_vec());
    for (idx, contribs) in parts {
        let weights = weights.clone();
        let x0 = x0.clone();
        let label = format!("K[{}]", idx);
        let field = CallableField::new(label, move |x: &[f64]| {
            let mut y = vec![0.0; x.len()];
            let mut total = 0.0;
            for &(t, w) in weights.iter() {
                for (a, yi) in y.iter_mut().enumerate() {
                    *yi = x0[a] + t * (x[a] - x0[a]);
                }
                for (sign, c, i) in &contribs {
                    total += w * sign * c.eval(&y) * (x[*i] - x0[*i]);
                }
            }
            total
        });
        out.accumulate(idx, field).expect("same representation");
    }
    out
}

/// Numeric primitive of a closed form with black-box coefficients. Closedness
/// is probed at `probes` by finite differences and must stay below `tol`.
pub fn poincare_antiderivative_callable(
    h: &Form<CallableField>,
    dom: &StarDomain,
    probes: &[Vec<f64>],
    tol: f64,
) -> Result<Form<CallableField>> {
    check_degree(h.degree(), h.dim(), dom)?;
    let dh = h.exterior_derivative();
    let residual = probes
        .iter()
        .flat_map(|x| dh.terms().values().map(move |c| c.eval(x).abs()))
        .fold(0.0, f64::max);
    if residual > tol {
        return Err(Error::NotClosed { residual, tolerance: tol });
    }
    Ok(homotopy_operator_callable(h, &dom.center()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CoordBox;
    use crate::parse::parse_polynomial;
    use crate::poly::rational;

    fn p(s: &str, n: usize) -> Polynomial {
        parse_polynomial(s, n).unwrap()
    }

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::from_one_based(v).unwrap()
    }

    #[test]
    fn area_form_primitive() {
        let h = Form::basis(2, idx(&[1, 2])).unwrap();
        let xi = homotopy_operator(&h, &[rational(0, 1), rational(0, 1)]);
        let expected = Form::from_terms(2, 1, [(idx(&[1]), p("-x2/2", 2)), (idx(&[2]), p("x1/2", 2))]).unwrap();
        assert_eq!(xi, expected);
        assert_eq!(xi.exterior_derivative(), h);
    }

    #[test]
    fn homotopy_identity_off_center() {
        let a = Form::from_terms(3, 2, [(idx(&[1, 3]), p("x1*x2 + x3^2", 3)), (idx(&[2, 3]), p("x1 - 3", 3))]).unwrap();
        let c = [rational(1, 3), rational(-1, 2), rational(2, 1)];
        let lhs = homotopy_operator(&a.exterior_derivative(), &c).add(&homotopy_operator(&a, &c).exterior_derivative()).unwrap();
        assert_eq!(lhs, a);
    }

    #[test]
    fn rejects_non_closed_input() {
        let h = Form::from_terms(2, 1, [(idx(&[1]), p("x2", 2))]).unwrap();
        let dom = StarDomain::centered(CoordBox::unit(2));
        assert!(matches!(poincare_antiderivative(&h, &dom), Err(Error::NotClosed { .. })));
    }

    #[test]
    fn callable_matches_polynomial() {
        let h = Form::from_terms(2, 2, [(idx(&[1, 2]), p("1 + x1^2*x2", 2))]).unwrap();
        let hc = h.map(|c| {
            let c = c.clone();
            CallableField::new("h", move |x| c.eval(x))
        });
        let dom = StarDomain::new(CoordBox::unit(2), &[0.25, 0.5]).unwrap();
        let exact = poincare_antiderivative(&h, &dom).unwrap();
        let numeric = poincare_antiderivative_callable(&hc, &dom, &[vec![0.3, 0.3]], 1e-6).unwrap();
        for x in [[0.1, 0.9], [0.7, 0.2]] {
            for (i, c) in exact.terms() {
                let v = numeric.coefficient(i).unwrap().eval(&x);
                assert!((v - c.eval(&x)).abs() < 1e-12);
            }
        }
    }
}
