#![allow(dead_code)]

use consensus_core::leader::LeaderSpec;
use consensus_core::observer::leader_filtered_steady_state;
use consensus_core::scenario::{parse_scenario, LoadOptions, Scenario, REFERENCE_SCENARIO};
use consensus_core::sim::{AgentState, NetworkState};
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

pub fn reference() -> Scenario {
    parse_scenario(REFERENCE_SCENARIO, LoadOptions::default()).unwrap()
}

pub fn reference_with(from: &str, to: &str) -> Scenario {
    assert!(REFERENCE_SCENARIO.contains(from), "{from}");
    parse_scenario(&REFERENCE_SCENARIO.replace(from, to), LoadOptions::default()).unwrap()
}

/// Only the 1.5 rad/s component is active.
pub fn single_sinusoid() -> Scenario {
    reference_with("amplitudes = \"5,2\"", "amplitudes = \"5,0\"")
}

/// Every state at its consensus value at time `t`.
pub fn ground_truth(s: &Scenario, t: f64) -> NetworkState {
    let leader: &LeaderSpec = &s.leader;
    let l = leader.l();
    let r = s.follower_order;
    let theta = leader.theta();
    let v = leader.virtual_state(t);
    let agents = s
        .agents
        .iter()
        .map(|a| {
            let mut st = AgentState::zeros(r, l);
            for k in 0..r {
                st.x[k] = leader.output_derivative(t, k);
            }
            let ss = leader_filtered_steady_state(leader, &a.matrices, t);
            st.observer.eta_hat = ss.eta;
            st.observer.chi_hat = ss.chi;
            st.observer.theta_hat = DVector::from_column_slice(&theta);
            st.observer.y_hat = leader.output(t);
            st.v_hat = v.clone();
            st
        })
        .collect();
    NetworkState { agents }
}

/// `H` from the full `(N+1)`-node Laplacian with the leader row and column
/// removed.
pub fn h_oracle(n: usize, edges: &[(usize, usize)], pins: &[usize]) -> DMatrix<f64> {
    let mut adj = DMatrix::<f64>::zeros(n + 1, n + 1);
    for &(i, j) in edges {
        if i != j {
            adj[(i - 1, j - 1)] = 1.0;
            adj[(j - 1, i - 1)] = 1.0;
        }
    }
    for &p in pins {
        adj[(p - 1, n)] = 1.0;
        adj[(n, p - 1)] = 1.0;
    }
    let mut lap = -adj.clone();
    for i in 0..=n {
        lap[(i, i)] = adj.row(i).sum();
    }
    lap.view((0, 0), (n, n)).into_owned()
}

/// Connected random follower graph with at least one pin.
pub fn random_topology<R: Rng>(rng: &mut R, n: usize) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut edges = Vec::new();
    for j in 2..=n {
        edges.push((rng.random_range(1..j), j));
    }
    for i in 1..=n {
        for j in i + 1..=n {
            if rng.random_bool(0.2) {
                edges.push((i, j));
            }
        }
    }
    let mut pins: Vec<usize> = (1..=n).filter(|_| rng.random_bool(0.4)).collect();
    if pins.is_empty() {
        pins.push(rng.random_range(1..=n));
    }
    (edges, pins)
}

/// Random stable third-order SISO system in controllable form:
/// `(A, B, C)` and the numerator/denominator of its transfer function,
/// lowest degree first.
pub struct Siso {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

pub fn random_stable_siso<R: Rng>(rng: &mut R) -> Siso {
    // One real pole and one lightly to moderately damped complex pair.
    let p = -rng.random_range(0.2..5.0);
    let sigma = -rng.random_range(0.1..3.0);
    let w: f64 = rng.random_range(0.1..20.0);
    // (s - p)(s² - 2σ s + σ² + w²), lowest degree first.
    let q = [sigma * sigma + w * w, -2.0 * sigma, 1.0];
    let den = vec![-p * q[0], q[0] - p * q[1], q[1] - p, 1.0];
    let num: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 1)] = 1.0;
    a[(1, 2)] = 1.0;
    for j in 0..3 {
        a[(2, j)] = -den[j];
    }
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 3, &num);
    Siso { a, b, c, num, den }
}

fn horner(p: &[f64], s: Complex<f64>) -> Complex<f64> {
    p.iter().rev().fold(Complex::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Brute-force peak of `|num(iω)/den(iω)|` over `ω = 0` and a dense
/// log grid.
pub fn brute_force_peak(num: &[f64], den: &[f64], points: usize) -> f64 {
    let gain = |w: f64| {
        let s = Complex::new(0.0, w);
        (horner(num, s) / horner(den, s)).norm()
    };
    let (lo, hi) = (1e-3f64.ln(), 1e4f64.ln());
    (0..points)
        .map(|k| gain((lo + (hi - lo) * k as f64 / (points - 1) as f64).exp()))
        .fold(gain(0.0), f64::max)
}

/// Monic polynomial (highest degree first) with random roots whose real
/// parts stay at least 0.05 away from the imaginary axis. Returns the
/// coefficients and whether every root is in the open left half plane.
pub fn random_polynomial<R: Rng>(rng: &mut R, max_degree: usize) -> (Vec<f64>, bool) {
    let degree = rng.random_range(1..=max_degree);
    let mut p = vec![1.0];
    let mut stable = true;
    let mut left = degree;
    let re = |rng: &mut R| {
        let mag = rng.random_range(0.05..2.0);
        if rng.random_bool(0.8) { -mag } else { mag }
    };
    while left > 0 {
        if left >= 2 && rng.random_bool(0.5) {
            let a = re(rng);
            let b: f64 = rng.random_range(0.1..2.0);
            stable &= a < 0.0;
            p = consensus_core::poly::mul(&p, &[1.0, -2.0 * a, a * a + b * b]);
            left -= 2;
        } else {
            let a = re(rng);
            stable &= a < 0.0;
            p = consensus_core::poly::mul(&p, &[1.0, -a]);
            left -= 1;
        }
    }
    (p, stable)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
