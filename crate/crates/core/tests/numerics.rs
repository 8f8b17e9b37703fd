use std::sync::Arc;

use fibreforms::comass::{comass_value, ComassOptions};
use fibreforms::minimizer::{minimize, DiscreteProblem, Init, MinimizeOptions};
use fibreforms::poly::rational_to_f64;
use fibreforms::quadrature::{gauss_legendre_on, TensorRule};
use fibreforms::quasiconvexity::{
    euclidean_qc_test, riemannian_qc_test, volume_growth_factor, ConstantQuadratic, DoubleWell, QcOptions,
};
use fibreforms::relaxation::{relax, CostFunction, Discretization, GaugeForm, QuadraticCost, ShadowLayout};
use fibreforms::rng::stream_rng;
use fibreforms::{sample, BundleChart, CoordBox, Form, FormValue, MetricField, MultiIndex, StarDomain};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn exact_box_integral(p: &fibreforms::Polynomial, b: &CoordBox) -> f64 {
    p.terms()
        .map(|(e, c)| {
            let mut v = rational_to_f64(c);
            for (a, &k) in e.iter().enumerate() {
                let k = k as i32 + 1;
                v *= (b.hi[a].powi(k) - b.lo[a].powi(k)) / k as f64;
            }
            v
        })
        .sum()
}

fn constant_form(dim: usize, degree: usize, coeffs: &[f64]) -> FormValue {
    let all = MultiIndex::all(dim, degree);
    Form::from_terms(dim, degree, all.into_iter().zip(coeffs.iter().copied())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1(order in 1usize..=12, lo in -2.0f64..0.0, len in 0.1f64..3.0) {
        let hi = lo + len;
        let (x, w) = gauss_legendre_on(order, lo, hi);
        for m in 0..2 * order {
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(m as i32)).sum();
            let exact = (hi.powi(m as i32 + 1) - lo.powi(m as i32 + 1)) / (m + 1) as f64;
            prop_assert!((approx - exact).abs() <= 1e-12 * (1.0 + exact.abs()), "order {} degree {}", order, m);
        }
    }

    #[test]
    fn tensor_rule_integrates_polynomials(dim in 1usize..=3, cells in 1usize..=3, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 20, 0);
        let b = sample::coord_box(&mut rng, dim);
        let p = sample::polynomial(&mut rng, dim, 5, 4);
        let compiled = p.compile();
        let approx = TensorRule::new(&b, 3, cells).integrate(|x| compiled.eval(x));
        let exact = exact_box_integral(&p, &b);
        prop_assert!((approx - exact).abs() <= 1e-10 * (1.0 + exact.abs()), "{} vs {}", approx, exact);
    }

    #[test]
    fn comass_lies_between_coordinate_pairings_and_the_norm(coeffs in proptest::collection::vec(-2.0f64..2.0, 6), t in -3.0f64..3.0) {
        let a = constant_form(4, 2, &coeffs);
        let m = MetricField::euclidean(4).at(&[0.0; 4]).unwrap();
        let opts = ComassOptions::default();
        let c = comass_value(&a, &m, &opts).value;
        let max = coeffs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let norm = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(c >= max - 1e-9 && c <= norm + 1e-9, "{} not in [{}, {}]", c, max, norm);
        let ct = comass_value(&a.scaled(t), &m, &opts).value;
        prop_assert!((ct - t.abs() * c).abs() <= 1e-7 * (1.0 + ct));
    }

    #[test]
    fn quadratic_cost_sees_every_coefficient_once(n in 1usize..=3, k in 1usize..=2, seed in any::<u64>()) {
        let dim = n + k;
        let ell = 1 + (seed as usize) % dim;
        let layout = ShadowLayout::new(n, k, ell);
        let w: Vec<f64> = (0..layout.len()).map(|i| ((seed >> (i % 60)) & 7) as f64 - 3.5).collect();
        let x = vec![0.5; dim];
        let v = QuadraticCost::new().gauged(&x, &layout, &w);
        prop_assert_eq!(v, w.iter().map(|c| c * c).sum::<f64>());
        prop_assert_eq!(layout.len(), MultiIndex::all(dim, ell).len());
    }

    #[test]
    fn flat_volume_growth_is_volume(dim in 1usize..=4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 21, 0);
        let b = sample::coord_box(&mut rng, dim);
        let v = volume_growth_factor(&b.center(), &b, &MetricField::euclidean(dim)).unwrap();
        prop_assert!((v.value - b.volume()).abs() <= 1e-12 * b.volume());
        prop_assert!((v.quadrature - b.volume()).abs() <= 1e-10 * b.volume());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn flat_riemannian_and_euclidean_tests_agree_bitwise(seed in any::<u64>(), well in any::<bool>()) {
        let mut rng = stream_rng(seed, 22, 0);
        let region = sample::coord_box(&mut rng, 2);
        let x0 = region.center();
        let p = [0.2, -0.4];
        let f: Box<dyn fibreforms::quasiconvexity::Integrand> = if well {
            Box::new(DoubleWell { e: vec![1.0, 0.0] })
        } else {
            Box::new(ConstantQuadratic { a: DMatrix::identity(2, 2), b: vec![0.0, 1.0], c: 0.0 })
        };
        let opts = QcOptions { trials: 6, seed, cells: 3, ..QcOptions::default() };
        let r = riemannian_qc_test(f.as_ref(), &x0, &p, &region, &MetricField::euclidean(2), &opts).unwrap();
        let e = euclidean_qc_test(f.as_ref(), &x0, &p, &region, &opts).unwrap();
        prop_assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&e).unwrap());
        if !well {
            prop_assert!(!r.violation_found);
        }
    }

    #[test]
    fn minimizer_descends_pins_the_boundary_and_repeats(seed in any::<u64>(), resolution in 5usize..=8) {
        let gauge = Form::scalar(sample::polynomial(&mut stream_rng(seed, 23, 0), 2, 3, 3));
        let chart = BundleChart::new(1, 1, MetricField::euclidean(2), CoordBox::unit(2)).unwrap();
        let disc = Discretization { resolution, quadrature_order: 3, ..Discretization::default() };
        let cost: Arc<dyn CostFunction> = Arc::new(QuadraticCost::new());
        let problem = relax(cost, GaugeForm::new(gauge), StarDomain::centered(CoordBox::unit(2)), chart, 2.0, disc).unwrap();
        let opts = MinimizeOptions { max_iterations: 300, ..MinimizeOptions::default() };
        let (field, report) = minimize(&problem, Init::Gauge, &opts).unwrap();
        let (again, report2) = minimize(&problem, Init::Gauge, &opts).unwrap();
        prop_assert_eq!(report.descent_violations, 0);
        prop_assert!(report.objective <= report.initial_objective);
        prop_assert!(report.history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs())));
        prop_assert_eq!(report.objective.to_bits(), report2.objective.to_bits());
        prop_assert_eq!(&field.values, &again.values);
        let gauge_field = DiscreteProblem::new(&problem, resolution).unwrap().gauge_field();
        for node in 0..field.grid.len() {
            if field.grid.is_boundary(&field.grid.multi(node)) {
                prop_assert_eq!(field.values[0][node].to_bits(), gauge_field.values[0][node].to_bits());
            }
        }
    }
}
