use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wf_simplex::charts::{build_simplex_partition, Chart, ChartMap};
use wf_simplex::discretize::assemble_simplex_generator;
use wf_simplex::multiplier::Multiplier;
use wf_simplex::poly::{carre_du_champ_poly, rat_to_f64, wf_apply, Poly};
use wf_simplex::simplex::{binomial, build_grid};
use wf_simplex::wf1d::{discretize_1d, resolvent_1d, sup_norm, sup_norm_complex, Kind1D};
use wf_simplex::wfmc::resample;

fn simplex_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, d + 1).prop_map(move |w| {
        let e: Vec<f64> = w.iter().map(|u| -(1.0 - u).ln()).collect();
        let s: f64 = e.iter().sum();
        e[..d].iter().map(|v| v / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lattice_size_is_binomial(d in 1usize..=3, n in 1u32..=20) {
        let g = build_grid(d, n).unwrap();
        prop_assert_eq!(g.len() as u128, binomial(u64::from(n) + d as u64, d as u64));
    }

    #[test]
    fn generator_is_markov(d in 1usize..=3, n in 4u32..=14) {
        let gen = assemble_simplex_generator(Arc::new(build_grid(d, n).unwrap())).unwrap();
        let rep = gen.matrix().markov_report(1e-12);
        prop_assert!(rep.ok, "{rep:?}");
        prop_assert!(rep.min_offdiag >= 0.0);
        prop_assert!(rep.max_abs_row_sum <= 1e-12);
    }

    #[test]
    fn generator_is_exact_on_cubics(d in 1usize..=3, n in 4u32..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Poly::random(&mut rng, d, 3);
        let au = wf_apply(&u);
        let gen = assemble_simplex_generator(Arc::new(build_grid(d, n).unwrap())).unwrap();
        let vals = gen.grid().sample(|x| u.eval_f64(x));
        let got = gen.apply(&vals).unwrap();
        let scale = 1.0 + rat_to_f64(&u.max_abs_coeff());
        for (i, g) in got.iter().enumerate() {
            let want = au.eval_f64(&gen.grid().coords(i));
            prop_assert!((g - want).abs() <= 1e-11 * scale * f64::from(n * n), "node {i}: {g} vs {want}");
        }
    }

    #[test]
    fn product_rule_defines_carre_du_champ(d in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Poly::random(&mut rng, d, 3);
        let g = Poly::random(&mut rng, d, 2);
        let lhs = &(&wf_apply(&(&f * &g)) - &(&f * &wf_apply(&g))) - &(&g * &wf_apply(&f));
        prop_assert!((&lhs - &carre_du_champ_poly(&f, &g)).is_zero());
    }

    #[test]
    fn carre_du_champ_is_nonnegative(d in 1usize..=3, seed in any::<u64>(), x in simplex_point(3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Poly::random(&mut rng, d, 3);
        let x: Vec<f64> = x[..d].iter().map(|v| v * 0.999).collect();
        prop_assert!(carre_du_champ_poly(&f, &f).eval_f64(&x) >= -1e-9);
    }

    #[test]
    fn partition_squares_sum_to_one(dim in 2usize..=3, delta in 0.05f64..0.45, x in simplex_point(3)) {
        let p = build_simplex_partition(dim, delta).unwrap();
        let [a, b] = p.eval(&x[..dim]);
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert!((a * a + b * b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn charts_round_trip(second in any::<bool>(), dim in 2usize..=3, delta in 0.05f64..0.45, seed in any::<u64>()) {
        let which = if second { Chart::Chart2 } else { Chart::Chart1 };
        let c = ChartMap::new(which, dim, delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = c.random_prism_point(&mut rng);
        let x = c.forward(&r);
        prop_assert!(x.iter().all(|v| *v >= 0.0) && x.iter().sum::<f64>() <= 1.0 + 1e-12);
        prop_assert!(c.in_region(&x));
        let back = c.inverse(&x).unwrap();
        for (a, b) in r.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn resampling_keeps_the_population(counts in prop::collection::vec(0u64..500, 2..=4), seed in any::<u64>()) {
        let mut c = counts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        resample(&mut c, &mut rng);
        prop_assert_eq!(c.iter().sum::<u64>(), counts.iter().sum::<u64>());
        // lost types stay lost
        for (old, new) in counts.iter().zip(&c) {
            if *old == 0 {
                prop_assert_eq!(*new, 0);
            }
        }
    }

    #[test]
    fn resolvent_contracts_on_positive_axis(lam in 0.01f64..1e4, n in 8usize..=64, u in prop::collection::vec(-1.0f64..1.0, 65)) {
        let op = discretize_1d(Kind1D::XOneMinusX, &Multiplier::constant(1.0), n).unwrap();
        let u = &u[..op.len()];
        let r = resolvent_1d(&op, Complex64::new(lam, 0.0)).unwrap();
        let v = r.apply_real(u).unwrap();
        prop_assert!(lam * sup_norm_complex(&v) <= sup_norm(u) * (1.0 + 1e-10) + 1e-14);
    }
}
