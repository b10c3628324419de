//! Observer-based tracking controller: the local exosystem estimate `v̂_i`
//! and the control law built from the regulator functions `f_s`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::filter_form::is_hurwitz;
use crate::leader::apply_g;
use crate::poly;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("alpha must have at least one coefficient")]
    EmptyAlpha,
    #[error("alpha polynomial {0:?} is not Hurwitz")]
    AlphaNotHurwitz(Vec<f64>),
    #[error("observer polynomial {0:?} is not Hurwitz")]
    ObserverPolyNotHurwitz(Vec<f64>),
    #[error("observer polynomial must be monic of degree 2l >= 2 (got {0:?})")]
    BadObserverPoly(Vec<f64>),
    #[error("Luenberger gain has length {got}, expected {expected}")]
    GainLength { expected: usize, got: usize },
}

/// Gains of the control law for a chain of `r` integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerDesign {
    /// `α_1, …, α_r, α_{r+1} = 1`, with `α_1` the constant coefficient.
    alpha: Vec<f64>,
    /// Luenberger gain `L_i` of length `2l`.
    l_gain: Vec<f64>,
}

impl ControllerDesign {
    /// `alpha` lists `α_1, …, α_r`; the leading `α_{r+1} = 1` is implied.
    pub fn new(alpha: &[f64], l_gain: Vec<f64>) -> Result<Self, ControllerError> {
        if alpha.is_empty() {
            return Err(ControllerError::EmptyAlpha);
        }
        // α_{r+1} λ^r + α_r λ^{r-1} + … + α_1
        let mut p = vec![1.0];
        p.extend(alpha.iter().rev());
        if !is_hurwitz(&p).unwrap_or(false) {
            return Err(ControllerError::AlphaNotHurwitz(alpha.to_vec()));
        }
        if l_gain.len() < 2 || l_gain.len() % 2 != 0 {
            return Err(ControllerError::BadObserverPoly(l_gain));
        }
        let mut q = vec![1.0];
        q.extend_from_slice(&l_gain);
        if !is_hurwitz(&q).unwrap_or(false) {
            return Err(ControllerError::ObserverPolyNotHurwitz(q));
        }
        let mut full = alpha.to_vec();
        full.push(1.0);
        Ok(Self {
            alpha: full,
            l_gain,
        })
    }

    /// Relative degree `r` of the follower.
    pub fn r(&self) -> usize {
        self.alpha.len() - 1
    }

    /// `α_1, …, α_{r+1}`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn l_gain(&self) -> &[f64] {
        &self.l_gain
    }

    pub fn with_l_gain(&self, l_gain: Vec<f64>) -> Result<Self, ControllerError> {
        if l_gain.len() != self.l_gain.len() {
            return Err(ControllerError::GainLength {
                expected: self.l_gain.len(),
                got: l_gain.len(),
            });
        }
        Self::new(&self.alpha[..self.r()], l_gain)
    }
}

/// `f_s(v, θ) = C g(θ)^{s-1} v` for `s ≥ 1`.
pub fn regulator_f(v: &[f64], theta: &[f64], s: usize) -> f64 {
    assert!(s >= 1, "regulator index starts at 1");
    let mut cur = v.to_vec();
    let mut next = vec![0.0; v.len()];
    for _ in 1..s {
        apply_g(theta, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    cur[0]
}

/// `f_1, …, f_{count}` evaluated by repeated application of `g(θ)`.
pub(crate) fn regulator_series(v: &[f64], theta: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let n = v.len();
    let (cur, next) = scratch.split_at_mut(n);
    cur.copy_from_slice(v);
    for (s, f) in out.iter_mut().enumerate() {
        if s > 0 {
            apply_g(theta, cur, next);
            cur.copy_from_slice(next);
        }
        *f = cur[0];
    }
}

/// `L_k` is the k-th coefficient of the monic target polynomial, since
/// `M - LC` is a left companion matrix.
pub fn design_l(desired: &[f64]) -> Result<Vec<f64>, ControllerError> {
    if desired.len() < 3 || desired.len() % 2 == 0 || desired[0] != 1.0 {
        return Err(ControllerError::BadObserverPoly(desired.to_vec()));
    }
    if !is_hurwitz(desired).unwrap_or(false) {
        return Err(ControllerError::ObserverPolyNotHurwitz(desired.to_vec()));
    }
    Ok(desired[1..].to_vec())
}

/// `M - L C` for a gain `L` of length `2l`.
pub fn observer_error_matrix(l_gain: &[f64]) -> DMatrix<f64> {
    let mut p = vec![1.0];
    p.extend_from_slice(l_gain);
    poly::companion(&p)
}

/// `Φ`: companion matrix with last row `-α_1, …, -α_r`.
pub fn error_system_matrix(alpha: &[f64]) -> DMatrix<f64> {
    let r = alpha.len() - 1;
    let mut phi = DMatrix::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        phi[(i, i + 1)] = 1.0;
    }
    for j in 0..r {
        phi[(r - 1, j)] = -alpha[j];
    }
    phi
}

pub(crate) fn vhat_rates(v_hat: &[f64], y_hat: f64, theta_hat: &[f64], l_gain: &[f64], out: &mut [f64]) {
    let n = v_hat.len();
    let innov = v_hat[0] - y_hat;
    for j in 0..n {
        let shift = if j + 1 < n { v_hat[j + 1] } else { 0.0 };
        out[j] = shift - l_gain[j] * innov;
        if j % 2 == 1 {
            out[j] -= theta_hat[j / 2] * y_hat;
        }
    }
}

/// `v̂' = M v̂ - L (C v̂ - ŷ) - Σ_k θ̂_k E_{2k} ŷ`.
pub fn vhat_derivative(
    v_hat: &DVector<f64>,
    y_hat: f64,
    theta_hat: &DVector<f64>,
    cd: &ControllerDesign,
) -> DVector<f64> {
    let mut out = DVector::zeros(v_hat.len());
    vhat_rates(
        v_hat.as_slice(),
        y_hat,
        theta_hat.as_slice(),
        cd.l_gain(),
        out.as_mut_slice(),
    );
    out
}

pub(crate) fn control_from_series(alpha: &[f64], f: &[f64], x: &[f64]) -> f64 {
    let feedforward: f64 = alpha.iter().zip(f).map(|(a, f)| a * f).sum();
    let feedback: f64 = alpha.iter().zip(x).map(|(a, x)| a * x).sum();
    feedforward - feedback
}

/// `u = Σ_{s=1}^{r+1} α_s f_s(v̂, θ̂) - Σ_{s=1}^{r} α_s x_s`.
pub fn control_input(
    x: &[f64],
    v_hat: &DVector<f64>,
    theta_hat: &DVector<f64>,
    cd: &ControllerDesign,
) -> f64 {
    let n = v_hat.len();
    let mut scratch = vec![0.0; 2 * n];
    let mut f = vec![0.0; cd.r() + 1];
    regulator_series(v_hat.as_slice(), theta_hat.as_slice(), &mut scratch, &mut f);
    control_from_series(cd.alpha(), &f, x)
}
