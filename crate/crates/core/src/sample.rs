//! Seeded random polynomials, forms and boxes for tests and benchmarks.

use num_rational::BigRational;
use rand::Rng;

use crate::field::CoordBox;
use crate::form::Form;
use crate::multi_index::MultiIndex;
use crate::poly::{rational, Polynomial};

/// A small nonzero rational `p/q` with `|p| ≤ 9`, `1 ≤ q ≤ 4`.
pub fn rational_coefficient<R: Rng>(rng: &mut R) -> BigRational {
    let mut num = rng.random_range(-9i64..=9);
    if num == 0 {
        num = 1;
    }
    rational(num, rng.random_range(1i64..=4))
}

/// A polynomial with at most `max_terms` monomials of total degree at most
/// `max_degree`.
pub fn polynomial<R: Rng>(rng: &mut R, nvars: usize, max_degree: u32, max_terms: usize) -> Polynomial {
    let mut p = Polynomial::zero(nvars);
    let terms = rng.random_range(1..=max_terms.max(1));
    for _ in 0..terms {
        let mut e = vec![0u32; nvars];
        let degree = rng.random_range(0..=max_degree);
        for _ in 0..degree {
            if nvars > 0 {
                e[rng.random_range(0..nvars)] += 1;
            }
        }
        p.add_term(e, rational_coefficient(rng));
    }
    p
}

/// A form of the given degree with at most `max_terms` nonzero components.
pub fn form<R: Rng>(rng: &mut R, dim: usize, degree: usize, max_degree: u32, max_terms: usize) -> Form<Polynomial> {
    let all = MultiIndex::all(dim, degree);
    let mut out = Form::zero(dim, degree);
    if all.is_empty() {
        return out;
    }
    let terms = rng.random_range(1..=max_terms.max(1));
    for _ in 0..terms {
        let idx = all[rng.random_range(0..all.len())].clone();
        out.accumulate(idx, polynomial(rng, dim, max_degree, 3)).expect("index of the right valency");
    }
    out
}

/// A box inside `[-2, 2]^dim` with sides in `[0.2, 2]`.
pub fn coord_box<R: Rng>(rng: &mut R, dim: usize) -> CoordBox {
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for _ in 0..dim {
        let side = rng.random_range(0.2..2.0);
        let a = rng.random_range(-2.0..2.0 - side);
        lo.push(a);
        hi.push(a + side);
    }
    CoordBox::new(lo, hi).expect("ordered bounds")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn draws_are_reproducible() {
        let a = form(&mut stream_rng(3, 0, 7), 4, 2, 3, 4);
        let b = form(&mut stream_rng(3, 0, 7), 4, 2, 3, 4);
        assert_eq!(a, b);
        assert_eq!(a.degree(), 2);
        let bx = coord_box(&mut stream_rng(1, 0, 0), 3);
        assert!((0..3).all(|i| bx.side(i) >= 0.2 && bx.lo[i] >= -2.0 && bx.hi[i] <= 2.0));
    }
}
