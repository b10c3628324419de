mod common;

use consensus_core::analysis::pe_check;
use consensus_core::controller::regulator_f;
use consensus_core::filter_form::{build_filter_matrices, hinf_norm, is_hurwitz, FilterVector};
use consensus_core::graph::{build_h, smallest_eigenvalue, Topology};
use consensus_core::leader::{build_g, omegas_from_theta, pi_bound, theta_from_omegas, LeaderSpec};
use consensus_core::observer::{coupling_z, filtered_form_residual, leader_filtered_steady_state};
use consensus_core::poly;
use consensus_core::sim::{NetworkLayout, NetworkState};
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn topology() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<usize>)> {
    (1usize..10, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, p) = common::random_topology(&mut rng, n);
        (n, e, p)
    })
}

/// Monic Hurwitz polynomial of the given degree, highest degree first.
fn hurwitz_poly(degree: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.2f64..3.0, 0.1f64..3.0, any::<bool>()), degree).prop_map(
        move |parts| {
            let mut p = vec![1.0];
            let mut left = degree;
            let mut it = parts.into_iter();
            while left > 0 {
                let (re, im, pair) = it.next().unwrap();
                if pair && left >= 2 {
                    p = poly::mul(&p, &[1.0, 2.0 * re, re * re + im * im]);
                    left -= 2;
                } else {
                    p = poly::mul(&p, &[1.0, re]);
                    left -= 1;
                }
            }
            p
        },
    )
}

fn filter_vector(l: usize) -> impl Strategy<Value = FilterVector> {
    hurwitz_poly(2 * l - 1).prop_map(|p| FilterVector::new(p[1..].to_vec()).unwrap())
}

/// Distinct frequencies at least 0.1 apart in `[0.2, 3]`.
fn frequencies(max_l: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..3.0, 1..=max_l)
        .prop_filter("distinct", |w| {
            let mut s = w.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|p| p[1] - p[0] > 0.1)
        })
}

fn leader(max_l: usize) -> impl Strategy<Value = LeaderSpec> {
    frequencies(max_l).prop_flat_map(|w| {
        let l = w.len();
        (
            Just(w),
            prop::collection::vec(-5.0f64..5.0, l),
            prop::collection::vec(-3.2f64..3.2, l),
        )
            .prop_map(|(w, amp, ph)| LeaderSpec::new(amp, ph, w, 3.0).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn h_matches_laplacian_oracle_and_is_positive_definite((n, edges, pins) in topology()) {
        let t = Topology::new(n, edges.clone(), pins.clone()).unwrap();
        let h = build_h(&t).unwrap();
        let oracle = common::h_oracle(n, &edges, &pins);
        prop_assert_eq!(&h, &oracle);
        let l1 = smallest_eigenvalue(&h).unwrap();
        prop_assert!(l1 > 0.0);
        for i in 0..n {
            prop_assert!(l1 <= h[(i, i)] + 1e-12);
        }
        prop_assert!(h.clone().cholesky().is_some());
    }

    #[test]
    fn coupling_is_minus_h_times_error((n, edges, pins) in topology(), seed in any::<u64>()) {
        use rand::Rng;
        let t = Topology::new(n, edges, pins).unwrap();
        let h = build_h(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y0: f64 = rng.random_range(-5.0..5.0);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z = coupling_z(&y, y0, &t).unwrap();
        let want = -(&h * DVector::from_iterator(n, y.iter().map(|v| v - y0)));
        prop_assert!(common::max_abs_diff(&z, want.as_slice()) <= 1e-12);
    }

    #[test]
    fn theta_norm_within_pi(w in frequencies(5), bar in 3.0f64..4.0) {
        let theta = theta_from_omegas(&w);
        let norm2: f64 = theta.iter().map(|t| t * t).sum();
        prop_assert!(norm2 <= pi_bound(bar, w.len()) * (1.0 + 1e-12));
    }

    #[test]
    fn omega_theta_round_trip(w in frequencies(4)) {
        let mut sorted = w.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let back = omegas_from_theta(&theta_from_omegas(&w));
        prop_assert!(common::max_abs_diff(&back, &sorted) <= 1e-9, "{:?} vs {:?}", back, sorted);
    }

    #[test]
    fn g_has_eigenvalues_at_plus_minus_i_omega(w in frequencies(4)) {
        let g = build_g(&theta_from_omegas(&w));
        let eig = g.complex_eigenvalues();
        for &wk in &w {
            for target in [Complex::new(0.0, wk), Complex::new(0.0, -wk)] {
                let d = eig.iter().map(|z| (z - target).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(d < 1e-6, "missing {} in {:?}", target, eig);
            }
        }
    }

    #[test]
    fn filter_matrix_characteristic_polynomial(fv in (1usize..4).prop_flat_map(filter_vector),
                                               re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let fm = build_filter_matrices(&fv);
        let n = fm.dim();
        let s = Complex::new(re, im);
        let sys = DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { s } else { Complex::new(0.0, 0.0) };
            d - Complex::new(fm.a[(i, j)], 0.0)
        });
        let det = sys.determinant();
        let mut p = vec![1.0];
        p.extend_from_slice(fv.coeffs());
        let want = p.iter().fold(Complex::new(0.0, 0.0), |acc, &c| acc * s + c);
        prop_assert!((det - want).norm() <= 1e-9 * (1.0 + want.norm()));
    }

    #[test]
    fn hurwitz_agrees_with_roots(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, stable) = common::random_polynomial(&mut rng, 8);
        prop_assert_eq!(is_hurwitz(&p).unwrap(), stable);
        let scaled: Vec<f64> = p.iter().map(|c| 3.5 * c).collect();
        prop_assert!(is_hurwitz(&scaled).is_err());
    }

    #[test]
    fn hinf_scales_linearly(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = common::random_stable_siso(&mut rng);
        let base = hinf_norm(&sys.a, &sys.b, &sys.c).unwrap();
        let scaled = hinf_norm(&sys.a, &sys.b, &(&sys.c * c)).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + c * base));
    }

    #[test]
    fn regulator_reproduces_leader_derivatives(ld in leader(3), t in 0.0f64..20.0) {
        let v = ld.virtual_state(t);
        let theta = ld.theta();
        for s in 1..=4 {
            let f = regulator_f(v.as_slice(), &theta, s);
            let want = ld.output_derivative(t, s - 1);
            prop_assert!((f - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn steady_state_filters_satisfy_the_filtered_form(
        (fv, ld) in (1usize..=3).prop_flat_map(|l| (filter_vector(l), leader(3).prop_filter("l", move |s| s.l() == l))),
        t in 0.0f64..20.0,
    ) {
        let fm = build_filter_matrices(&fv);
        let ss = leader_filtered_steady_state(&ld, &fm, t);
        let r = filtered_form_residual(&ss, &fm, fv.a1(), &ld.theta(), ld.output(t), ld.output_derivative(t, 1));
        let scale: f64 = 1.0 + ld.amplitudes().iter().map(|a| a.abs()).sum::<f64>();
        prop_assert!(r.abs() <= 1e-9 * scale, "residual {}", r);
    }

    #[test]
    fn flatten_round_trip(n in 1usize..5, r in 1usize..4, l in 1usize..4, seed in any::<u64>()) {
        use rand::Rng;
        let lay = NetworkLayout::new(n, r, l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..lay.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let st = NetworkState::unflatten(&lay, &flat).unwrap();
        prop_assert_eq!(st.flatten(&lay), flat);
    }

    #[test]
    fn pe_epsilon_robust_to_tiny_noise(w in 0.5f64..3.0, amp in 1e-12f64..1e-9) {
        let h = 1e-3;
        let times: Vec<f64> = (0..=30_000).map(|k| k as f64 * h).collect();
        let clean: Vec<Vec<f64>> = times.iter().map(|&t| vec![(w * t).sin(), (w * t).cos()]).collect();
        let noisy: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| vec![(w * t).sin() + amp * (400.0 * t).sin(), (w * t).cos()])
            .collect();
        let window = 2.0 * std::f64::consts::PI / w;
        let a = pe_check(&times, &clean, window, 0.0, 1e-4).unwrap();
        let b = pe_check(&times, &noisy, window, 0.0, 1e-4).unwrap();
        prop_assert!((a.epsilon - b.epsilon).abs() <= 1e-8);
        prop_assert_eq!(a.persistently_exciting, b.persistently_exciting);
    }
}
