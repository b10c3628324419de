mod common;

use consensus_core::analysis::{check_theorem1_hypothesis, summarize, PEOptions};
use consensus_core::controller::{control_input, vhat_derivative};
use consensus_core::export::{read_csv, write_csv};
use consensus_core::observer::{
    centralized_observer_derivative, coupling_z, filtered_form_residual,
    leader_filtered_derivative, leader_filtered_steady_state, observer_derivative,
    LeaderFilteredState, ObserverGains,
};
use consensus_core::scenario::{parse_scenario, LoadOptions, REFERENCE_SCENARIO};
use consensus_core::sim::{
    closed_loop_derivative, run_from, run_simulation, tracking_errors, Rk4, SimConfig, SimError,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn short(t_end: f64) -> SimConfig {
    SimConfig {
        dt: 1e-4,
        t_end,
        record_stride: 100,
    }
}

/// Integrates the leader filters from zero and returns the filtered-form
/// residual on a 0.1 s grid up to `t_end`.
fn leader_filter_residuals(s: &consensus_core::Scenario, agent: usize, t_end: f64) -> Vec<(f64, f64)> {
    let a = &s.agents[agent];
    let fm = &a.matrices;
    let theta = s.leader.theta();
    let n = fm.dim();
    let mut x = vec![0.0; 2 * n];
    let mut rk = Rk4::new(2 * n);
    let dt = 1e-3;
    let mut out = Vec::new();
    let steps = (t_end / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        if k % 100 == 0 {
            let st = LeaderFilteredState {
                eta: DVector::from_column_slice(&x[..n]),
                chi: DVector::from_column_slice(&x[n..]),
            };
            let r = filtered_form_residual(
                &st,
                fm,
                a.filter.a1(),
                &theta,
                s.leader.output(t),
                s.leader.output_derivative(t, 1),
            );
            out.push((t, r));
        }
        if k == steps {
            break;
        }
        rk.step(
            |t, x, d| {
                let st = LeaderFilteredState {
                    eta: DVector::from_column_slice(&x[..n]),
                    chi: DVector::from_column_slice(&x[n..]),
                };
                let dd = leader_filtered_derivative(&st, fm, s.leader.output(t));
                d[..n].copy_from_slice(dd.eta.as_slice());
                d[n..].copy_from_slice(dd.chi.as_slice());
            },
            t,
            dt,
            &mut x,
        );
    }
    out
}

#[test]
fn leader_filters_forget_their_initial_state() {
    let s = common::reference();
    let at = |res: &[(f64, f64)], t: f64| res.iter().find(|(s, _)| (s - t).abs() < 1e-9).unwrap().1;
    let first = leader_filter_residuals(&s, 0, 20.0);
    assert!(at(&first, 20.0).abs() < 1e-4, "{}", at(&first, 20.0));
    for i in 0..s.agents.len() {
        let res = leader_filter_residuals(&s, i, 60.0);
        let late = res
            .iter()
            .filter(|(t, _)| *t >= 40.0)
            .map(|(_, r)| r.abs())
            .fold(0.0, f64::max);
        assert!(late < 1e-4, "agent {}: {late}", i + 1);
        let ss = leader_filtered_steady_state(&s.leader, &s.agents[i].matrices, 60.0);
        let r = filtered_form_residual(
            &ss,
            &s.agents[i].matrices,
            s.agents[i].filter.a1(),
            &s.leader.theta(),
            s.leader.output(60.0),
            s.leader.output_derivative(60.0, 1),
        );
        assert!(r.abs() < 1e-10);
    }
}

#[test]
fn runs_are_bitwise_deterministic() {
    let s = common::reference();
    let a = run_simulation(&s, &short(3.0)).unwrap();
    let b = run_simulation(&s, &short(3.0)).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.states.iter().flatten().zip(b.states.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn zero_leader_keeps_everything_at_zero() {
    let s = common::reference_with("amplitudes = \"5,2\"", "amplitudes = \"0,0\"");
    let traj = run_simulation(&s, &short(5.0)).unwrap();
    assert!(traj.states.iter().flatten().all(|&v| v == 0.0));
    let te = tracking_errors(&traj);
    let sum = summarize(&te, &s, PEOptions::default());
    assert!(sum.final_e.iter().all(|&e| e == 0.0));
    let pe = sum.pe.unwrap();
    assert!(pe.iter().all(|r| !r.persistently_exciting && r.epsilon == 0.0));
}

#[test]
fn flat_vector_field_matches_typed_operations() {
    let s = common::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lay = s.layout();
    let gains = ObserverGains {
        kappa: s.gains.kappa,
        mu: s.gains.mu,
    };
    for _ in 0..20 {
        let t: f64 = rng.random_range(0.0..50.0);
        let flat: Vec<f64> = (0..lay.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let st = consensus_core::sim::NetworkState::unflatten(&lay, &flat).unwrap();
        let got = closed_loop_derivative(&st, t, &s).unwrap();

        let y_hats: Vec<f64> = st.agents.iter().map(|a| a.observer.y_hat).collect();
        let z = coupling_z(&y_hats, s.leader.output(t), &s.topology).unwrap();
        for (i, (a, d)) in st.agents.iter().zip(&s.agents).enumerate() {
            let obs = observer_derivative(&a.observer, z[i], &d.matrices, d.filter.a1(), gains);
            let vh = vhat_derivative(&a.v_hat, a.observer.y_hat, &a.observer.theta_hat, &d.controller);
            let u = control_input(a.x.as_slice(), &a.v_hat, &a.observer.theta_hat, &d.controller);
            let g = &got.agents[i];
            let tol = 1e-9;
            assert!((&g.observer.eta_hat - &obs.eta_hat).amax() < tol);
            assert!((&g.observer.chi_hat - &obs.chi_hat).amax() < tol);
            assert!((&g.observer.theta_hat - &obs.theta_hat).amax() < tol);
            assert!((g.observer.y_hat - obs.y_hat).abs() < tol);
            assert!((&g.v_hat - &vh).amax() < tol);
            let r = s.follower_order;
            for k in 0..r - 1 {
                assert_eq!(g.x[k], a.x[k + 1]);
            }
            assert!((g.x[r - 1] - u).abs() < tol);
        }
    }
}

#[test]
fn observer_at_consensus_matches_centralized_observer() {
    let s = common::reference();
    let gains = ObserverGains {
        kappa: s.gains.kappa,
        mu: s.gains.mu,
    };
    let gt = common::ground_truth(&s, 7.3);
    let y = s.leader.output(7.3);
    for (a, d) in gt.agents.iter().zip(&s.agents) {
        let filtered = LeaderFilteredState {
            eta: a.observer.eta_hat.clone(),
            chi: a.observer.chi_hat.clone(),
        };
        let mut off = a.observer.clone();
        off.y_hat += 0.3;
        off.theta_hat[0] -= 0.2;
        let z = y - off.y_hat;
        let dist = observer_derivative(&off, z, &d.matrices, d.filter.a1(), gains);
        let (dth, dy) = centralized_observer_derivative(
            &off.theta_hat,
            off.y_hat,
            &filtered,
            &d.matrices,
            d.filter.a1(),
            gains,
            y,
        );
        assert!((&dist.theta_hat - &dth).amax() < 1e-9);
        // The only difference is the a1 term, evaluated at ŷ instead of y.
        let shift = d.filter.a1() * (off.y_hat - y);
        assert!((dist.y_hat - (dy + shift)).abs() < 1e-9);
    }
}

#[test]
fn single_follower_network_converges() {
    let text = "
[topology]
n_followers = 1
pins = \"1\"
[leader]
amplitudes = \"5,2\"
frequencies = \"1.5,1\"
omega_bar = 1.5
[follower]
order = 2
[observer]
kappa = 500
[controller]
alpha = \"6,11\"
L_poly = \"(s+3)^4\"
[agent.1]
a = \"2,2,1.5\"
";
    let s = parse_scenario(text, LoadOptions::default()).unwrap();
    assert_eq!(s.pinning.lambda1, 1.0);
    assert!(s.gains.mu > s.gains.mu_min);
    let te = tracking_errors(&run_simulation(&s, &short(120.0)).unwrap());
    let k = te.final_index();
    let a = &te.agents[0];
    assert!(a.e[k].abs() < 1e-3, "{}", a.e[k]);
    assert!(a.theta_err[k] < 1e-2, "{}", a.theta_err[k]);
}

#[test]
fn reference_run_properties() {
    let s = common::reference();
    let te = tracking_errors(&run_simulation(&s, &s.sim).unwrap());
    assert!(te.agents.iter().all(|a| a.e[0] == 0.0));

    // Running maximum of |e| over the trailing 50 s window.
    let envelope = |t: f64| {
        te.agents
            .iter()
            .map(|a| {
                te.times
                    .iter()
                    .zip(&a.e)
                    .filter(|(&s, _)| s > t - 50.0 - 1e-9 && s <= t + 1e-9)
                    .map(|(_, e)| e.abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    let env: Vec<f64> = [50.0, 100.0, 150.0, 200.0].iter().map(|&t| envelope(t)).collect();
    assert!(env.windows(2).all(|w| w[1] < w[0]), "{env:?}");

    let early = te.times.iter().position(|&t| t > 10.0).unwrap();
    let has_zero = te
        .agents
        .iter()
        .any(|a| a.omega_hat[..early].iter().any(|w| w.iter().any(|&x| x == 0.0)));
    assert!(has_zero, "expected clamped frequency estimates early on");

    let sum = summarize(&te, &s, PEOptions::default());
    assert!(!sum.outside_guarantee);
    for w in &sum.final_omega_hat {
        assert!((w[0] - 1.5).abs() < 0.05 && (w[1] - 1.0).abs() < 0.05, "{w:?}");
    }
    assert!(sum.max_state_magnitude < 1e3);
    let text = sum.to_text();
    assert!(text.contains("agent.3.pe = PE"));
    assert!(text.contains("witness"));
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let s = common::reference();
    let x0 = common::ground_truth(&s, 0.0).flatten(&s.layout());
    let te = tracking_errors(&run_from(&s, &short(10.0), x0).unwrap());
    for a in &te.agents {
        let worst = a
            .e
            .iter()
            .chain(&a.y_tilde)
            .chain(&a.theta_err)
            .chain(&a.vtilde_norm)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}

#[test]
fn low_mu_is_rejected_by_the_simulator_and_flagged_when_allowed() {
    let text = REFERENCE_SCENARIO.replace("mu = 56", "mu = 10");
    let mut s = parse_scenario(
        &text,
        LoadOptions {
            allow_unsafe_gains: true,
        },
    )
    .unwrap();
    let traj = run_simulation(&s, &short(2.0)).unwrap();
    assert!(traj.outside_guarantee);
    let sum = summarize(&tracking_errors(&traj), &s, PEOptions::default());
    assert!(sum.to_text().contains("outside_guarantee = true"));

    s.allow_unsafe_gains = false;
    assert!(matches!(
        run_simulation(&s, &short(2.0)),
        Err(SimError::InvalidGains { .. })
    ));
}

#[test]
fn oversized_step_trips_the_divergence_guard() {
    let s = common::reference();
    let cfg = SimConfig {
        dt: 0.05,
        t_end: 50.0,
        record_stride: 1,
    };
    assert!(matches!(run_simulation(&s, &cfg), Err(SimError::Diverged { .. })));
}

#[test]
fn csv_round_trip_preserves_series() {
    let s = common::reference();
    let te = tracking_errors(&run_simulation(&s, &short(30.0)).unwrap());
    for full in [false, true] {
        let mut buf = Vec::new();
        write_csv(&te, &mut buf, full).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times.len(), te.times.len());
        assert_eq!(back.agents.len(), 5);
        assert_eq!(back.has_full_state(), full);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * (1.0 + b.abs());
        for (a, b) in back.agents.iter().zip(&te.agents) {
            assert!(a.e.iter().zip(&b.e).all(|(x, y)| close(*x, *y)));
            assert!(a.u.iter().zip(&b.u).all(|(x, y)| close(*x, *y)));
            assert!(a
                .omega_hat
                .iter()
                .flatten()
                .zip(b.omega_hat.iter().flatten())
                .all(|(x, y)| close(*x, *y)));
        }
        if full {
            let from_csv = check_theorem1_hypothesis(&back, &s, PEOptions::default()).unwrap();
            let direct = check_theorem1_hypothesis(&te, &s, PEOptions::default()).unwrap();
            for (a, b) in from_csv.iter().zip(&direct) {
                assert!((a.epsilon - b.epsilon).abs() < 1e-6);
            }
        } else {
            assert!(check_theorem1_hypothesis(&back, &s, PEOptions::default()).is_err());
        }
    }
}
