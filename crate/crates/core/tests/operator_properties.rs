use hrg_core::lattice::LatticeSpec;
use hrg_core::operators::*;
use proptest::prelude::*;

fn field(l: usize, d: usize, n: usize, seed: &[f64]) -> Field {
    let spec = LatticeSpec::new(l, d, n).unwrap();
    Field::from_fn(spec, |i| seed[i % seed.len()] + (i as f64 * 0.37).sin())
}

fn shape() -> impl Strategy<Value = (usize, usize, usize)> {
    prop_oneof![
        (Just(3usize), 1usize..=2, 1usize..=3),
        (Just(5usize), 1usize..=2, 1usize..=2),
        (Just(3usize), Just(3usize), 1usize..=2),
    ]
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_decomposition_reconstructs((l, d, n) in shape(), v in values()) {
        let f = field(l, d, n, &v);
        let mut sum = Field::constant(*f.spec(), mean_total(&f));
        for k in 1..=n {
            sum = sum.add(&fluct_level(&f, k).unwrap());
        }
        prop_assert!(sum.max_abs_diff(&f) <= 1e-12);
    }

    #[test]
    fn fluctuation_levels_are_orthogonal((l, d, n) in shape(), v in values()) {
        let f = field(l, d, n, &v);
        for j in 1..=n {
            let pj = fluct_level(&f, j).unwrap();
            for k in 1..=n {
                let pkj = fluct_level(&pj, k).unwrap();
                let expect = if j == k { pj.clone() } else { Field::zeros(*f.spec()) };
                prop_assert!(pkj.max_abs_diff(&expect) <= 1e-13, "P{k}P{j}");
            }
        }
    }

    #[test]
    fn coarsen_factorises_over_block_constants((l, d, n) in shape(), v in values(), w in values()) {
        let f = field(l, d, n, &v);
        let c = field(l, d, n - 1, &w);
        let lhs = coarsen(&f.mul(&refine(&c))).unwrap();
        let rhs = coarsen(&f).unwrap().mul(&c);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-13);
        prop_assert!(coarsen(&refine(&c)).unwrap().max_abs_diff(&c) <= 1e-14);
        prop_assert!(fluct(&refine(&c)).unwrap().max_abs() <= 1e-14);
    }

    #[test]
    fn coarsen_composes((l, d, n) in shape(), v in values()) {
        let f = field(l, d, n, &v);
        for a in 0..=n {
            let two = coarsen_by(&coarsen_by(&f, a).unwrap(), n - a).unwrap();
            prop_assert!((two.values()[0] - mean_total(&f)).abs() <= 1e-13);
        }
    }

    #[test]
    fn laplacian_and_inverse((l, d, n) in shape(), v in values()) {
        let g = fluct_level(&field(l, d, n, &v), 1).unwrap();
        // P₁-images are fixed by the inverse.
        prop_assert!(apply_inverse_laplacian(&g).unwrap().max_abs_diff(&g) <= 1e-12);
        let f = field(l, d, n, &v);
        let zero_mean = f.shift(-mean_total(&f));
        let back = apply_inverse_laplacian(&apply_neg_laplacian(&zero_mean)).unwrap();
        prop_assert!(back.max_abs_diff(&zero_mean) <= 1e-10 * (1.0 + zero_mean.max_abs()));
        let full = apply_fluct_propagator(&zero_mean, n).unwrap();
        prop_assert!(full.max_abs_diff(&apply_inverse_laplacian(&zero_mean).unwrap()) <= 1e-12 * (1.0 + full.max_abs()));
    }

    #[test]
    fn laplacian_is_positive_on_mean_zero((l, d, n) in shape(), v in values()) {
        let f = field(l, d, n, &v);
        let lap = apply_neg_laplacian(&f);
        let quad: f64 = f.values().iter().zip(lap.values()).map(|(a, b)| a * b).sum();
        prop_assert!(quad >= -1e-10);
        prop_assert!(apply_neg_laplacian(&Field::constant(*f.spec(), 2.5)).max_abs() <= 1e-13);
    }
}

#[test]
fn dense_oracle_matches_every_kind() {
    for (l, d, n) in [
        (3usize, 2usize, 1usize),
        (3, 2, 2),
        (3, 1, 3),
        (5, 1, 2),
        (5, 2, 1),
    ] {
        let spec = LatticeSpec::new(l, d, n).unwrap();
        let f = Field::from_fn(spec, |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0);
        let g = f.shift(-mean_total(&f));
        let c = coarsen(&f).unwrap();
        let cases: Vec<(DenseKind, &Field, Field)> = vec![
            (DenseKind::Coarsen, &f, coarsen(&f).unwrap()),
            (DenseKind::Refine, &c, refine(&c)),
            (DenseKind::Fluct, &f, fluct(&f).unwrap()),
            (DenseKind::NegLaplacian, &f, apply_neg_laplacian(&f)),
            (DenseKind::Inverse, &g, apply_inverse_laplacian(&g).unwrap()),
            (
                DenseKind::Propagator(1),
                &f,
                apply_fluct_propagator(&f, 1).unwrap(),
            ),
            (
                DenseKind::Propagator(n),
                &g,
                apply_fluct_propagator(&g, n).unwrap(),
            ),
        ];
        for (kind, input, expect) in cases {
            let op = assemble_dense_operator(kind, &spec, DEFAULT_DENSE_CAP).unwrap();
            let got = op.apply(input).unwrap();
            assert!(
                got.max_abs_diff(&expect) <= 1e-12,
                "{kind:?} at L={l} d={d} n={n}"
            );
        }
    }
}
