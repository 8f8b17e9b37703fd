//! Gauss–Legendre quadrature on boxes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Coefficient, CoordBox};

/// Nodes and weights of the `order`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(order: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (x.iter().map(|t| mid + half * t).collect(), w.iter().map(|t| t * half).collect())
}

/// A tensor-product composite rule: the box is split into `cells` equal
/// sub-intervals per axis, each carrying an `order`-point rule.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn new(bounds: &CoordBox, order: usize, cells: usize) -> Self {
        let d = bounds.dim();
        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
            .map(|a| {
                let mut xs = Vec::new();
                let mut ws = Vec::new();
                let h = bounds.side(a) / cells as f64;
                for c in 0..cells {
                    let lo = bounds.lo[a] + c as f64 * h;
                    let hi = if c + 1 == cells { bounds.hi[a] } else { lo + h };
                    let (x, w) = gauss_legendre_on(order, lo, hi);
                    xs.extend(x);
                    ws.extend(w);
                }
                (xs, ws)
            })
            .collect();
        let counts: Vec<usize> = axes.iter().map(|(x, _)| x.len()).collect();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for t in 0..total {
            let mut rem = t;
            let mut p = vec![0.0; d];
            let mut w = 1.0;
            for a in (0..d).rev() {
                let i = rem % counts[a];
                rem /= counts[a];
                p[a] = axes[a].0[i];
                w *= axes[a].1[i];
            }
            points.push(p);
            weights.push(w);
        }
        TensorRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_q f(x_q)`, evaluated in parallel and reduced in node order.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
        let vals: Vec<f64> = self.points.par_iter().zip(&self.weights).map(|(p, w)| w * f(p)).collect();
        vals.iter().sum()
    }
}

/// `∫_box f · density` by tensor-product Gauss–Legendre quadrature with
/// `order` points per axis. Fails if the density is not positive at a node.
pub fn integrate<C: Coefficient, D: Coefficient>(f: &C, bounds: &CoordBox, density: &D, order: usize) -> Result<f64> {
    let rule = TensorRule::new(bounds, order, 1);
    let vals: Vec<Result<f64>> = rule
        .points
        .par_iter()
        .zip(&rule.weights)
        .map(|(p, w)| {
            let rho = density.eval(p);
            if !(rho > 0.0) {
                return Err(Error::NonpositiveDensity { value: rho, point: p.clone() });
            }
            Ok(w * f.eval(p) * rho)
        })
        .collect();
    let mut acc = 0.0;
    for v in vals {
        acc += v?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CallableField;
    use crate::parse::parse_polynomial;

    #[test]
    fn rules_integrate_monomials_exactly() {
        for order in 1..=12 {
            let (x, w) = gauss_legendre(order);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for p in 0..2 * order {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "order {} power {}", order, p);
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let one = parse_polynomial("1", 2).unwrap();
        let sq = CoordBox::unit(2);
        assert!((integrate(&one, &sq, &one, 2).unwrap() - 1.0).abs() < 1e-15);
        let x1 = parse_polynomial("x1", 2).unwrap();
        assert!((integrate(&x1, &sq, &one, 2).unwrap() - 0.5).abs() < 1e-15);
        // sqrt det diag(1, (1+x1)^2) = 1 + x1; closed form ∫0^1 (1+x) dx = 3/2
        let density = parse_polynomial("1 + x1", 2).unwrap();
        assert!((integrate(&one, &sq, &density, 3).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_density_is_rejected() {
        let f = CallableField::new("one", |_| 1.0);
        let rho = CallableField::new("neg", |x: &[f64]| x[0] - 0.5);
        assert!(matches!(
            integrate(&f, &CoordBox::unit(1), &rho, 4),
            Err(Error::NonpositiveDensity { .. })
        ));
    }

    #[test]
    fn composite_rule_matches_single_rule_on_polynomials() {
        let b = CoordBox::new(vec![-1.0, 0.5], vec![2.0, 1.5]).unwrap();
        let f = |x: &[f64]| x[0].powi(3) * x[1] + x[1].powi(2);
        let a = TensorRule::new(&b, 3, 1).integrate(f);
        let c = TensorRule::new(&b, 2, 4).integrate(f);
        assert!((a - c).abs() < 1e-12);
    }
}
