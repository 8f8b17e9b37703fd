//! Polynomial diffeomorphisms and the pullback of forms.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::form::Form;
use crate::poly::{CompiledPoly, Polynomial};

/// A polynomial map from a reference chart onto a target chart of the same
/// dimension, optionally with a polynomial inverse.
#[derive(Clone, Debug)]
pub struct Diffeomorphism {
    components: Vec<Polynomial>,
    inverse: Option<Vec<Polynomial>>,
    compiled: Vec<CompiledPoly>,
    jacobian: Vec<Vec<CompiledPoly>>,
}

impl Diffeomorphism {
    pub fn new(components: Vec<Polynomial>, inverse: Option<Vec<Polynomial>>) -> Result<Self> {
        let dim = components.len();
        if components.iter().any(|p| p.nvars() != dim) {
            return Err(Error::DimensionMismatch("map components must be polynomials in the chart dimension".into()));
        }
        if let Some(inv) = &inverse {
            if inv.len() != dim || inv.iter().any(|p| p.nvars() != dim) {
                return Err(Error::DimensionMismatch("inverse map has the wrong shape".into()));
            }
        }
        let compiled = components.iter().map(|p| p.compile()).collect();
        let jacobian = components
            .iter()
            .map(|p| (0..dim).map(|j| p.partial(j).compile()).collect())
            .collect();
        Ok(Diffeomorphism { components, inverse, compiled, jacobian })
    }

    pub fn identity(dim: usize) -> Self {
        let comps: Vec<Polynomial> = (0..dim).map(|i| Polynomial::var(dim, i)).collect();
        Diffeomorphism::new(comps.clone(), Some(comps)).expect("identity is well formed")
    }

    /// The affine map `x ↦ A x + b` with rational entries, with its exact inverse
    /// when `A` is invertible over the rationals.
    pub fn affine(a: &[Vec<num_rational::BigRational>], b: &[num_rational::BigRational]) -> Result<Self> {
        let dim = b.len();
        let comps: Vec<Polynomial> = (0..dim)
            .map(|i| {
                let mut p = Polynomial::constant(dim, b[i].clone());
                for j in 0..dim {
                    p = &p + &Polynomial::var(dim, j).scale(&a[i][j]);
                }
                p
            })
            .collect();
        let inverse = rational_inverse(a).map(|ainv| {
            (0..dim)
                .map(|i| {
                    let mut p = Polynomial::zero(dim);
                    for j in 0..dim {
                        let shifted = &Polynomial::var(dim, j) - &Polynomial::constant(dim, b[j].clone());
                        p = &p + &shifted.scale(&ainv[i][j]);
                    }
                    p
                })
                .collect()
        });
        Diffeomorphism::new(comps, inverse)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn inverse(&self) -> Option<Diffeomorphism> {
        self.inverse
            .as_ref()
            .map(|inv| Diffeomorphism::new(inv.clone(), Some(self.components.clone())).expect("shape checked"))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.compiled.iter().map(|p| p.eval(x)).collect()
    }

    /// Jacobian matrix `∂Φ^i/∂x^j` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.jacobian[i][j].eval(x))
    }

    /// Pulls a covector at `Φ(x)` back to `x`: `p̂ = DΦ(x)^T p`.
    pub fn pullback_covector(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let j = self.jacobian(x);
        let pv = nalgebra::DVector::from_column_slice(p);
        (j.transpose() * pv).as_slice().to_vec()
    }

    /// Pushes a covector at `x` forward to `Φ(x)`: `p = DΦ(x)^{-T} p̂`.
    pub fn pushforward_covector(&self, x: &[f64], p_hat: &[f64]) -> Result<Vec<f64>> {
        let j = self.jacobian(x);
        let lu = j.transpose().lu();
        lu.solve(&nalgebra::DVector::from_column_slice(p_hat))
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::SingularJacobian { point: x.to_vec() })
    }

    /// Pullback `Φ^# a = Σ_I a_I∘Φ dΦ^{i_1} ∧ … ∧ dΦ^{i_ℓ}`, exact for
    /// polynomial coefficients.
    pub fn pullback(&self, a: &Form<Polynomial>) -> Result<Form<Polynomial>> {
        if a.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "form lives on a chart of dimension {}, map has dimension {}",
                a.dim(),
                self.dim()
            )));
        }
        let dim = self.dim();
        let differentials: Vec<Form<Polynomial>> = self
            .components
            .iter()
            .map(|phi| Form::scalar(phi.clone()).exterior_derivative())
            .collect();
        let mut out = Form::zero(dim, a.degree());
        for (idx, c) in a.terms() {
            let mut term = Form::scalar(c.compose(&self.components)?);
            for &i in idx.indices() {
                term = term.wedge(&differentials[i])?;
            }
            out = out.add(&term)?;
        }
        Ok(out)
    }
}

fn rational_inverse(a: &[Vec<num_rational::BigRational>]) -> Option<Vec<Vec<num_rational::BigRational>>> {
    use num_traits::{One, Zero};
    let n = a.len();
    let mut m: Vec<Vec<num_rational::BigRational>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { One::one() } else { Zero::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        let inv = num_rational::BigRational::one() / m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v * &inv;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in 0..2 * n {
                    let t = &m[col][c] * &f;
                    m[r][c] = &m[r][c] - &t;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multi_index::MultiIndex;
    use crate::parse::parse_polynomial;
    use crate::poly::rational;

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::from_one_based(v).unwrap()
    }

    #[test]
    fn identity_pullback_is_identity() {
        let a = Form::from_terms(2, 1, [(idx(&[1]), parse_polynomial("x1*x2^2", 2).unwrap())]).unwrap();
        assert_eq!(Diffeomorphism::identity(2).pullback(&a).unwrap(), a);
    }

    #[test]
    fn scalar_chain_rule() {
        let phi = Diffeomorphism::new(vec![parse_polynomial("2*x1", 1).unwrap()], None).unwrap();
        let dy = Form::dx(1, 0);
        let expect = Form::from_terms(1, 1, [(idx(&[1]), Polynomial::from_integer(1, 2))]).unwrap();
        assert_eq!(phi.pullback(&dy).unwrap(), expect);
    }

    #[test]
    fn shear_preserves_area_form() {
        let phi = Diffeomorphism::new(
            vec![parse_polynomial("x1", 2).unwrap(), parse_polynomial("x1 + x2", 2).unwrap()],
            None,
        )
        .unwrap();
        let area = Form::basis(2, idx(&[1, 2])).unwrap();
        let pulled = phi.pullback(&area).unwrap();
        assert_eq!(pulled, area);
        // numeric cofactor oracle: the coefficient equals det DΦ
        let det = phi.jacobian(&[0.3, -0.2]).determinant();
        assert!((det - 1.0).abs() < 1e-15);
    }

    #[test]
    fn affine_inverse_is_exact() {
        let a = vec![vec![rational(2, 1), rational(1, 1)], vec![rational(0, 1), rational(3, 1)]];
        let b = vec![rational(1, 2), rational(-1, 1)];
        let phi = Diffeomorphism::affine(&a, &b).unwrap();
        let inv = phi.inverse().unwrap();
        let x = [0.25, 0.75];
        let back = inv.apply(&phi.apply(&x));
        assert!((back[0] - x[0]).abs() < 1e-14 && (back[1] - x[1]).abs() < 1e-14);
        let p = [1.0, -2.0];
        let ph = phi.pullback_covector(&x, &p);
        let p2 = phi.pushforward_covector(&x, &ph).unwrap();
        assert!((p2[0] - p[0]).abs() < 1e-14 && (p2[1] - p[1]).abs() < 1e-14);
    }

    #[test]
    fn pullback_dimension_mismatch() {
        assert!(Diffeomorphism::identity(2).pullback(&Form::dx(3, 0)).is_err());
    }
}
