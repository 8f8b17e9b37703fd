use fibreforms::bundle::{index_set, ShadowData};
use fibreforms::rng::stream_rng;
use fibreforms::{
    check_closedness, homotopy_operator, horizontal_projection, poincare_antiderivative, sample, shadow_decompose,
    shadow_reconstruct, CoordBox, Polynomial, StarDomain,
};
use proptest::prelude::*;

fn shapes() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=3, 1usize..=2)
        .prop_flat_map(|(n, k)| (Just(n), Just(k), 1..=n + k, any::<u64>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_represents_the_derivative((n, k, ell, seed) in shapes()) {
        let xi = sample::form(&mut stream_rng(seed, 10, 0), n + k, ell - 1, 3, 4);
        let sd = shadow_decompose(&xi, n).unwrap();
        prop_assert_eq!(sd.ell, ell);
        prop_assert_eq!(shadow_reconstruct(&sd).unwrap(), xi.exterior_derivative());
        prop_assert!(sd.entries.len() <= index_set(n, k, ell).len());
        for e in &sd.entries {
            prop_assert!(e.theta.exterior_derivative().is_zero());
            prop_assert_eq!(e.g.degree() + e.theta.degree(), ell);
        }
        let c = check_closedness(&sd, 0.0).unwrap();
        prop_assert!(c.closed);
        prop_assert_eq!(c.residual_max, 0.0);
        sd.validate().unwrap();
    }

    #[test]
    fn shadow_data_survives_json((n, k, ell, seed) in shapes()) {
        let xi = sample::form(&mut stream_rng(seed, 11, 0), n + k, ell - 1, 2, 3);
        let sd = shadow_decompose(&xi, n).unwrap();
        let back: ShadowData<Polynomial> = serde_json::from_str(&serde_json::to_string(&sd).unwrap()).unwrap();
        prop_assert_eq!(back, sd);
    }

    #[test]
    fn projection_reassembles_the_form((n, k, ell, seed) in shapes()) {
        let w = sample::form(&mut stream_rng(seed, 12, 0), n + k, ell, 2, 4);
        prop_assert_eq!(horizontal_projection(&w, n).reconstruct(), w);
    }

    #[test]
    fn homotopy_formula_holds(dim in 1usize..=4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 13, 0);
        let degree = 1 + (seed as usize) % dim;
        let a = sample::form(&mut rng, dim, degree, 3, 3);
        let center: Vec<_> = (0..dim).map(|_| sample::rational_coefficient(&mut rng)).collect();
        let lhs = homotopy_operator(&a, &center).exterior_derivative()
            .add(&homotopy_operator(&a.exterior_derivative(), &center)).unwrap();
        prop_assert_eq!(lhs, a);
    }

    #[test]
    fn antiderivatives_of_exact_forms(dim in 1usize..=4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 14, 0);
        let degree = (seed as usize) % dim;
        let h = sample::form(&mut rng, dim, degree, 3, 3).exterior_derivative();
        let dom = StarDomain::centered(CoordBox::unit(dim));
        let xi = poincare_antiderivative(&h, &dom).unwrap();
        prop_assert_eq!(xi.exterior_derivative(), h);
    }

    #[test]
    fn non_closed_forms_have_no_antiderivative(dim in 2usize..=4, seed in any::<u64>()) {
        let a = sample::form(&mut stream_rng(seed, 15, 0), dim, 1, 3, 3);
        prop_assume!(!a.exterior_derivative().is_zero());
        prop_assert!(poincare_antiderivative(&a, &StarDomain::centered(CoordBox::unit(dim))).is_err());
    }
}
