//! The uncertain leader: a sum of sinusoids, its virtual exosystem
//! realization `v̇ = g(θ) v`, and the frequency reparameterization `θ`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::poly;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LeaderError {
    #[error("leader needs at least one sinusoid")]
    Empty,
    #[error("amplitudes, phases and frequencies must have equal length (got {0}, {1}, {2})")]
    LengthMismatch(usize, usize, usize),
    #[error("frequency omega_{0} = {1} must satisfy 0 < omega <= omega_bar = {2}")]
    FrequencyOutOfRange(usize, f64, f64),
    #[error("omega_bar must be positive, got {0}")]
    NonPositiveBound(f64),
}

/// `y(t) = Σ φ_k sin(ω_k t + ψ_k)` with a known frequency bound `ω̄`.
///
/// Frequencies may sit on the bound itself (`ω_k ≤ ω̄`); `π` stays a valid
/// bound on `‖θ‖²` in that case.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSpec {
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    frequencies: Vec<f64>,
    omega_bar: f64,
}

impl LeaderSpec {
    pub fn new(
        amplitudes: Vec<f64>,
        phases: Vec<f64>,
        frequencies: Vec<f64>,
        omega_bar: f64,
    ) -> Result<Self, LeaderError> {
        let l = frequencies.len();
        if l == 0 {
            return Err(LeaderError::Empty);
        }
        if amplitudes.len() != l || phases.len() != l {
            return Err(LeaderError::LengthMismatch(
                amplitudes.len(),
                phases.len(),
                l,
            ));
        }
        // NaN bounds fall through to the range check below.
        if omega_bar <= 0.0 {
            return Err(LeaderError::NonPositiveBound(omega_bar));
        }
        for (k, &w) in frequencies.iter().enumerate() {
            if !(w > 0.0 && w <= omega_bar) {
                return Err(LeaderError::FrequencyOutOfRange(k + 1, w, omega_bar));
            }
        }
        Ok(Self {
            amplitudes,
            phases,
            frequencies,
            omega_bar,
        })
    }

    /// Number of sinusoids `l`.
    pub fn l(&self) -> usize {
        self.frequencies.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn omega_bar(&self) -> f64 {
        self.omega_bar
    }

    /// Distinct frequencies with nonzero amplitudes, i.e. rich of order `2l`.
    /// Non-rich leaders are allowed; they just void the parameter
    /// convergence guarantee.
    pub fn is_sufficiently_rich(&self) -> bool {
        let distinct = self.frequencies.iter().enumerate().all(|(i, a)| {
            self.frequencies[i + 1..]
                .iter()
                .all(|b| (a - b).abs() > 1e-12 * a.abs().max(b.abs()))
        });
        distinct && self.amplitudes.iter().all(|&a| a != 0.0)
    }

    pub fn output(&self, t: f64) -> f64 {
        self.output_derivative(t, 0)
    }

    /// Exact `order`-th time derivative of the leader signal.
    pub fn output_derivative(&self, t: f64, order: usize) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.frequencies)
            .zip(&self.phases)
            .map(|((&phi, &w), &psi)| {
                let arg = w * t + psi;
                let shifted = match order % 4 {
                    0 => arg.sin(),
                    1 => arg.cos(),
                    2 => -arg.sin(),
                    _ => -arg.cos(),
                };
                phi * w.powi(order as i32) * shifted
            })
            .sum()
    }

    pub fn theta(&self) -> Vec<f64> {
        theta_from_omegas(&self.frequencies)
    }

    /// Ground-truth exosystem state `v(t)`, built from analytic derivatives
    /// of `y` so that `C v = y` and `v̇ = g(θ) v` hold exactly.
    pub fn virtual_state(&self, t: f64) -> DVector<f64> {
        let derivs: Vec<f64> = (0..2 * self.l())
            .map(|m| self.output_derivative(t, m))
            .collect();
        let coeffs = virtual_state_coefficients(&self.theta());
        DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .map(|row| row.iter().zip(&derivs).map(|(c, d)| c * d).sum()),
        )
    }
}

/// Row `j` expresses `v_{j+1}` as a combination of `y, ẏ, ÿ, …`.
///
/// `v_1 = y`, `v_{2k} = v̇_{2k-1}`, `v_{2k+1} = v̇_{2k} + θ_k y`.
fn virtual_state_coefficients(theta: &[f64]) -> Vec<Vec<f64>> {
    let n = 2 * theta.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut first = vec![0.0; n];
    first[0] = 1.0;
    rows.push(first);
    for j in 1..n {
        let prev = &rows[j - 1];
        let mut row = vec![0.0; n];
        row[1..].copy_from_slice(&prev[..n - 1]);
        // v_{j+1} with j even (1-based index odd, ≥ 3) picks up θ_{j/2} y.
        if j % 2 == 0 {
            row[0] += theta[j / 2 - 1];
        }
        rows.push(row);
    }
    rows
}

/// `θ_k` is the k-th elementary symmetric polynomial of `ω_1², …, ω_l²`, read
/// off the expansion of `Π (s² + ω_k²)`.
pub fn theta_from_omegas(omegas: &[f64]) -> Vec<f64> {
    let squares: Vec<f64> = omegas.iter().map(|w| -(w * w)).collect();
    poly::from_real_roots(&squares)[1..].to_vec()
}

/// Recovers frequency estimates from a (possibly inexact) `θ̂`.
///
/// Roots `z_k` of `z^l + θ_1 z^{l-1} + … + θ_l` give `ω̂_k = sqrt(-Re z_k)`.
/// Complex roots and roots with positive real part yield `0`. The result
/// is sorted in descending order.
pub fn omegas_from_theta(theta: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(theta.len() + 1);
    p.push(1.0);
    p.extend_from_slice(theta);
    let mut out: Vec<f64> = if theta.len() == 1 {
        vec![if theta[0] >= 0.0 { theta[0].sqrt() } else { 0.0 }]
    } else if theta.len() == 2 {
        quadratic_roots(theta[0], theta[1])
    } else {
        poly::roots(&p)
            .into_iter()
            .map(|z| {
                let tol = 1e-6 * (1.0 + z.norm());
                if z.im.abs() <= tol && -z.re >= 0.0 {
                    (-z.re).sqrt()
                } else {
                    0.0
                }
            })
            .collect()
    };
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// `z² + b z + c = 0` solved in the closed form used for two sinusoids.
fn quadratic_roots(b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return vec![0.0, 0.0];
    }
    let sq = disc.sqrt();
    // ω² = (θ_1 ± sqrt(θ_1² - 4θ_2)) / 2; a negative ω² is clamped.
    [(b + sq) / 2.0, (b - sq) / 2.0]
        .into_iter()
        .map(|w2| if w2 >= 0.0 { w2.sqrt() } else { 0.0 })
        .collect()
}

/// `g(θ)`: superdiagonal of ones, `-θ_k` at row `2k` of the first column.
pub fn build_g(theta: &[f64]) -> DMatrix<f64> {
    let n = 2 * theta.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        g[(i, i + 1)] = 1.0;
    }
    for (k, &th) in theta.iter().enumerate() {
        g[(2 * k + 1, 0)] = -th;
    }
    g
}

/// `out = g(θ) v` without forming `g`.
pub fn apply_g(theta: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for j in 0..n {
        let next = if j + 1 < n { v[j + 1] } else { 0.0 };
        out[j] = if j % 2 == 1 {
            next - theta[j / 2] * v[0]
        } else {
            next
        };
    }
}

/// The fixed canonical matrices of the exosystem.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalForms {
    /// Upper shift matrix `[0 I; 0 0]`.
    pub m: DMatrix<f64>,
    /// Output selector `e_1ᵀ` as a `1 × 2l` row.
    pub c: DMatrix<f64>,
    /// Unit vectors `E_{2k}`, `k = 1..l`.
    pub e2k: Vec<DVector<f64>>,
}

pub fn canonical_forms(l: usize) -> CanonicalForms {
    let n = 2 * l;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        m[(i, i + 1)] = 1.0;
    }
    let mut c = DMatrix::zeros(1, n);
    c[(0, 0)] = 1.0;
    let e2k = (1..=l)
        .map(|k| {
            let mut e = DVector::zeros(n);
            e[2 * k - 1] = 1.0;
            e
        })
        .collect();
    CanonicalForms { m, c, e2k }
}

/// Upper bound on `‖θ‖²` from the known frequency bound:
/// `π = Σ_k C(l,k)² ω̄^{4k}`.
pub fn pi_bound(omega_bar: f64, l: usize) -> f64 {
    let mut binom = 1.0;
    let mut total = 0.0;
    for k in 1..=l {
        binom = binom * (l + 1 - k) as f64 / k as f64;
        total += binom * binom * omega_bar.powi(4 * k as i32);
    }
    total
}
