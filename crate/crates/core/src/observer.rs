//! Distributed adaptive observer of each follower, and the single-agent
//! filtered forms of the leader that serve as ground truth for it.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::filter_form::FilterMatrices;
use crate::graph::Topology;
use crate::leader::LeaderSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expected {expected} follower estimates, got {got}")]
pub struct DimensionError {
    pub expected: usize,
    pub got: usize,
}

/// `η̂_i`, `χ̂_i`, `θ̂_i`, `ŷ_i` of one follower.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub eta_hat: DVector<f64>,
    pub chi_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub y_hat: f64,
}

impl ObserverState {
    pub fn zeros(l: usize) -> Self {
        Self {
            eta_hat: DVector::zeros(2 * l - 1),
            chi_hat: DVector::zeros(2 * l - 1),
            theta_hat: DVector::zeros(l),
            y_hat: 0.0,
        }
    }
}

/// Filter states `η_i`, `χ_i` driven by the true leader output.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderFilteredState {
    pub eta: DVector<f64>,
    pub chi: DVector<f64>,
}

/// `z_i = Σ_{j ∈ N̄_i} (ŷ_j - ŷ_i)` with the leader's entry equal to its
/// true output.
pub fn coupling_z(
    y_hats: &[f64],
    leader_y: f64,
    topology: &Topology,
) -> Result<Vec<f64>, DimensionError> {
    let n = topology.n_followers();
    if y_hats.len() != n {
        return Err(DimensionError {
            expected: n,
            got: y_hats.len(),
        });
    }
    let mut z = vec![0.0; n];
    coupling_z_into(y_hats, leader_y, topology, &mut z);
    Ok(z)
}

pub(crate) fn coupling_z_into(y_hats: &[f64], leader_y: f64, topology: &Topology, z: &mut [f64]) {
    z.fill(0.0);
    for (i, j) in topology.edges() {
        let d = y_hats[j - 1] - y_hats[i - 1];
        z[i - 1] += d;
        z[j - 1] -= d;
    }
    for p in topology.pins() {
        z[p - 1] += leader_y - y_hats[p - 1];
    }
}

/// Gains shared by the observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverGains {
    pub kappa: f64,
    pub mu: f64,
}

/// Observer rates over a flat state slice laid out as
/// `[η̂ (2l-1) | χ̂ (2l-1) | θ̂ (l) | ŷ]`.
pub(crate) fn observer_rates(
    state: &[f64],
    z: f64,
    fm: &FilterMatrices,
    a1: f64,
    gains: ObserverGains,
    out: &mut [f64],
) {
    let n = fm.dim();
    let l = fm.l();
    let (eta, rest) = state.split_at(n);
    let (chi, rest) = rest.split_at(n);
    let (theta, rest) = rest.split_at(l);
    let y_hat = rest[0];

    let (d_eta, rest) = out.split_at_mut(n);
    let (d_chi, rest) = rest.split_at_mut(n);
    let (d_theta, rest) = rest.split_at_mut(l);

    // η̂' = A η̂ + B ŷ ;  χ̂' = Aᵀ χ̂ + E ŷ
    for r in 0..n {
        let mut acc = fm.b[r] * y_hat;
        let mut acc_t = fm.e[r] * y_hat;
        for c in 0..n {
            acc += fm.a[(r, c)] * eta[c];
            acc_t += fm.a[(c, r)] * chi[c];
        }
        d_eta[r] = acc;
        d_chi[r] = acc_t;
    }

    // θ̂' = κ F χ̂ z ;  ŷ' = Eᵀη̂ + a1 ŷ + χ̂ᵀFᵀθ̂ + μ z
    let mut regressor = 0.0;
    for k in 0..l {
        let mut f_chi = 0.0;
        for c in 0..n {
            f_chi += fm.f[(k, c)] * chi[c];
        }
        d_theta[k] = gains.kappa * f_chi * z;
        regressor += f_chi * theta[k];
    }
    let e_eta: f64 = (0..n).map(|c| fm.e[c] * eta[c]).sum();
    rest[0] = e_eta + a1 * y_hat + regressor + gains.mu * z;
}

pub fn observer_derivative(
    s: &ObserverState,
    z: f64,
    fm: &FilterMatrices,
    a1: f64,
    gains: ObserverGains,
) -> ObserverState {
    let n = fm.dim();
    let l = fm.l();
    let mut flat = Vec::with_capacity(2 * n + l + 1);
    flat.extend_from_slice(s.eta_hat.as_slice());
    flat.extend_from_slice(s.chi_hat.as_slice());
    flat.extend_from_slice(s.theta_hat.as_slice());
    flat.push(s.y_hat);
    let mut out = vec![0.0; flat.len()];
    observer_rates(&flat, z, fm, a1, gains, &mut out);
    ObserverState {
        eta_hat: DVector::from_column_slice(&out[..n]),
        chi_hat: DVector::from_column_slice(&out[n..2 * n]),
        theta_hat: DVector::from_column_slice(&out[2 * n..2 * n + l]),
        y_hat: out[2 * n + l],
    }
}

/// Single-agent adaptive observer with direct access to the leader output.
/// Returns `(θ̂', ŷ')`.
#[allow(clippy::too_many_arguments)]
pub fn centralized_observer_derivative(
    theta_hat: &DVector<f64>,
    y_hat: f64,
    filtered: &LeaderFilteredState,
    fm: &FilterMatrices,
    a1: f64,
    gains: ObserverGains,
    leader_y: f64,
) -> (DVector<f64>, f64) {
    let err = leader_y - y_hat;
    let f_chi = &fm.f * &filtered.chi;
    let d_theta = &f_chi * (gains.kappa * err);
    let d_y = fm.e.dot(&filtered.eta) + a1 * leader_y + f_chi.dot(theta_hat) + gains.mu * err;
    (d_theta, d_y)
}

/// `η' = A η + B y`, `χ' = Aᵀ χ + E y`.
pub fn leader_filtered_derivative(
    s: &LeaderFilteredState,
    fm: &FilterMatrices,
    leader_y: f64,
) -> LeaderFilteredState {
    LeaderFilteredState {
        eta: &fm.a * &s.eta + &fm.b * leader_y,
        chi: fm.a.transpose() * &s.chi + &fm.e * leader_y,
    }
}

/// `ẏ - (Eᵀη + a1 y + χᵀFᵀθ)`. Vanishes once the filters have forgotten
/// their initial condition.
pub fn filtered_form_residual(
    s: &LeaderFilteredState,
    fm: &FilterMatrices,
    a1: f64,
    theta: &[f64],
    leader_y: f64,
    leader_dy: f64,
) -> f64 {
    let f_chi = &fm.f * &s.chi;
    let th = DVector::from_column_slice(theta);
    leader_dy - (fm.e.dot(&s.eta) + a1 * leader_y + f_chi.dot(&th))
}

/// Periodic steady state of the leader filters at time `t`: the forced
/// response of each sinusoid through `(iωI - A)^{-1} B` and
/// `(iωI - Aᵀ)^{-1} E`.
pub fn leader_filtered_steady_state(
    leader: &LeaderSpec,
    fm: &FilterMatrices,
    t: f64,
) -> LeaderFilteredState {
    let n = fm.dim();
    let mut eta = DVector::zeros(n);
    let mut chi = DVector::zeros(n);
    let at = fm.a.transpose();
    for ((&phi, &w), &psi) in leader
        .amplitudes()
        .iter()
        .zip(leader.frequencies())
        .zip(leader.phases())
    {
        // φ sin(ωt + ψ) = Im(φ e^{i(ωt+ψ)})
        let phasor = Complex::from_polar(phi, w * t + psi);
        eta += forced_response(&fm.a, &fm.b, w).map(|x| (x * phasor).im);
        chi += forced_response(&at, &fm.e, w).map(|x| (x * phasor).im);
    }
    LeaderFilteredState { eta, chi }
}

fn forced_response(a: &DMatrix<f64>, input: &DVector<f64>, w: f64) -> DVector<Complex<f64>> {
    let n = a.nrows();
    let sys = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { Complex::new(0.0, w) } else { Complex::new(0.0, 0.0) };
        d - Complex::new(a[(i, j)], 0.0)
    });
    sys.lu()
        .solve(&input.map(|x| Complex::new(x, 0.0)))
        .expect("iωI - A is invertible for Hurwitz A")
}
