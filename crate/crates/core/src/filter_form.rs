//! Filtered-transformation matrices of each agent and the gain bounds that
//! depend on them (`γ_{i,1}`, `γ_{i,2}` and the lower bound on `μ`).

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("empty coefficient list")]
    EmptyPolynomial,
    #[error("polynomial is not monic (leading coefficient {0})")]
    NotMonic(f64),
    #[error("filter polynomial with coefficients {0:?} is not Hurwitz")]
    NotHurwitz(Vec<f64>),
    #[error("filter vector has length {0}; expected 2l-1 for some l >= 1")]
    BadLength(usize),
    #[error("state matrix is not Hurwitz; the H-infinity norm is unbounded")]
    UnstableSystem,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lambda1 must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("mu = {mu} is below the bound {bound:.4}")]
    MuBelowBound { mu: f64, bound: f64 },
    #[error("at least one agent is required")]
    NoAgents,
}

/// Routh–Hurwitz test on a monic polynomial `[1, c_1, …, c_n]`.
///
/// A zero pivot counts as not Hurwitz, so marginal cases are rejected.
pub fn is_hurwitz(coeffs: &[f64]) -> Result<bool, FilterError> {
    let (&lead, _) = coeffs.split_first().ok_or(FilterError::EmptyPolynomial)?;
    if lead != 1.0 {
        return Err(FilterError::NotMonic(lead));
    }
    let n = coeffs.len() - 1;
    if n == 0 {
        // A nonzero constant has no roots.
        return Ok(true);
    }
    let width = n / 2 + 1;
    let row = |start: usize| -> Vec<f64> {
        (0..width)
            .map(|j| coeffs.get(start + 2 * j).copied().unwrap_or(0.0))
            .collect()
    };
    let mut prev = row(0);
    let mut cur = row(1);
    for _ in 0..n {
        let pivot = cur[0];
        if !(pivot > 0.0) {
            return Ok(false);
        }
        let next: Vec<f64> = (0..width)
            .map(|j| {
                let a = prev.get(j + 1).copied().unwrap_or(0.0);
                let b = cur.get(j + 1).copied().unwrap_or(0.0);
                (pivot * a - prev[0] * b) / pivot
            })
            .collect();
        prev = cur;
        cur = next;
    }
    Ok(true)
}

/// Stable filter coefficients `a_i = (a_{i,1}, …, a_{i,2l-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterVector(Vec<f64>);

impl FilterVector {
    pub fn new(a: Vec<f64>) -> Result<Self, FilterError> {
        if a.len() % 2 == 0 {
            return Err(FilterError::BadLength(a.len()));
        }
        let mut p = Vec::with_capacity(a.len() + 1);
        p.push(1.0);
        p.extend_from_slice(&a);
        if !is_hurwitz(&p)? {
            return Err(FilterError::NotHurwitz(a));
        }
        Ok(Self(a))
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    /// Number of sinusoids this filter is sized for.
    pub fn l(&self) -> usize {
        (self.0.len() + 1) / 2
    }

    pub fn a1(&self) -> f64 {
        self.0[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrices {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub e: DVector<f64>,
    pub f: DMatrix<f64>,
}

impl FilterMatrices {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn l(&self) -> usize {
        self.f.nrows()
    }
}

/// `A = [-a | (I; 0)]`, `B_s = a_{s+1} - a_s a_1`, `B_{2l-1} = -a_{2l-1} a_1`,
/// `E = e_1`, `F = blkdiag(I_{l-1} ⊗ [-1, 0], -1)`.
pub fn build_filter_matrices(fv: &FilterVector) -> FilterMatrices {
    let a = fv.coeffs();
    let n = a.len();
    let l = fv.l();
    let a1 = a[0];

    let mut am = DMatrix::zeros(n, n);
    for i in 0..n {
        am[(i, 0)] = -a[i];
        if i + 1 < n {
            am[(i, i + 1)] = 1.0;
        }
    }
    let b = DVector::from_fn(n, |s, _| {
        if s + 1 < n {
            a[s + 1] - a[s] * a1
        } else {
            -a[s] * a1
        }
    });
    let mut e = DVector::zeros(n);
    e[0] = 1.0;
    FilterMatrices {
        a: am,
        b,
        e,
        f: selector_f(l),
    }
}

/// `F` picks the odd entries `χ_1, χ_3, …, χ_{2l-1}` with a minus sign.
pub fn selector_f(l: usize) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(l, 2 * l - 1);
    for k in 0..l {
        f[(k, 2 * k)] = -1.0;
    }
    f
}

pub fn is_hurwitz_matrix(a: &DMatrix<f64>) -> bool {
    a.complex_eigenvalues().iter().all(|z| z.re < 0.0)
}

fn gain_at(a: &DMatrix<f64>, input: &DMatrix<f64>, output: &DMatrix<f64>, w: f64) -> f64 {
    let n = a.nrows();
    let sys = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { Complex::new(0.0, w) } else { Complex::new(0.0, 0.0) };
        d - Complex::new(a[(i, j)], 0.0)
    });
    let rhs = input.map(|x| Complex::new(x, 0.0));
    let Some(x) = sys.lu().solve(&rhs) else {
        return f64::INFINITY;
    };
    let g = output.map(|x| Complex::new(x, 0.0)) * x;
    if g.ncols() == 1 || g.nrows() == 1 {
        g.norm()
    } else {
        g.singular_values().max()
    }
}

/// Frequencies of the coarse sweep in [`hinf_norm`].
pub const SWEEP_POINTS: usize = 2000;
const SWEEP_LO: f64 = 1e-3;
const SWEEP_HI: f64 = 1e4;

/// `sup_ω σ_max(OUT (iωI - A)^{-1} IN)`.
///
/// Log-spaced sweep over `[1e-3, 1e4]` rad/s plus `ω = 0`, followed by a
/// golden-section refinement around the best sample.
pub fn hinf_norm(
    a: &DMatrix<f64>,
    input: &DMatrix<f64>,
    output: &DMatrix<f64>,
) -> Result<f64, FilterError> {
    let n = a.nrows();
    if a.ncols() != n || input.nrows() != n || output.ncols() != n {
        return Err(FilterError::Dimension(format!(
            "A {}x{}, IN {}x{}, OUT {}x{}",
            a.nrows(),
            a.ncols(),
            input.nrows(),
            input.ncols(),
            output.nrows(),
            output.ncols()
        )));
    }
    if !is_hurwitz_matrix(a) {
        return Err(FilterError::UnstableSystem);
    }
    let ratio = (SWEEP_HI / SWEEP_LO).ln() / (SWEEP_POINTS - 1) as f64;
    let mut grid = Vec::with_capacity(SWEEP_POINTS + 1);
    grid.push(0.0);
    grid.extend((0..SWEEP_POINTS).map(|k| SWEEP_LO * (ratio * k as f64).exp()));
    let gains: Vec<f64> = grid.iter().map(|&w| gain_at(a, input, output, w)).collect();
    let (best, &peak) = gains
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("grid is nonempty");

    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let refined = golden_max(|w| gain_at(a, input, output, w), lo, hi, 1e-5);
    Ok(peak.max(refined))
}

/// Golden-section search for a maximum on `[lo, hi]`, stopping once the
/// bracket is below `rel_tol` relative to its upper end.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > rel_tol * hi.max(1e-12) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    f1.max(f2).max(f(lo)).max(f(hi))
}

/// `γ_{i,1} = ‖Eᵀ(sI - A_i)^{-1} B_i‖_∞`.
pub fn gamma1(fm: &FilterMatrices) -> Result<f64, FilterError> {
    let input = DMatrix::from_column_slice(fm.dim(), 1, fm.b.as_slice());
    let output = DMatrix::from_row_slice(1, fm.dim(), fm.e.as_slice());
    hinf_norm(&fm.a, &input, &output)
}

/// `γ_{i,2} = ‖F(sI - A_iᵀ)^{-1} E‖_∞`.
pub fn gamma2(fm: &FilterMatrices) -> Result<f64, FilterError> {
    let input = DMatrix::from_column_slice(fm.dim(), 1, fm.e.as_slice());
    hinf_norm(&fm.a.transpose(), &input, &fm.f)
}

/// `(2 ā λ₁ + (1 + π) λ₁² + γ̄₁² + γ̄₂²) / (2 λ₁²)`.
pub fn mu_lower_bound(
    a_bar: f64,
    lambda1: f64,
    pi: f64,
    gamma1_bar: f64,
    gamma2_bar: f64,
) -> Result<f64, FilterError> {
    if !(lambda1 > 0.0) {
        return Err(FilterError::NonPositiveLambda(lambda1));
    }
    let l2 = lambda1 * lambda1;
    Ok((2.0 * a_bar * lambda1 + (1.0 + pi) * l2 + gamma1_bar.powi(2) + gamma2_bar.powi(2))
        / (2.0 * l2))
}

/// Margin applied to the `μ` bound when no `μ` is supplied.
pub const DEFAULT_MU_MARGIN: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    pub kappa: f64,
    pub mu: f64,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub a_bar: f64,
    pub gamma1_bar: f64,
    pub gamma2_bar: f64,
    pub lambda1: f64,
    pub pi: f64,
    pub mu_min: f64,
}

impl GainDesign {
    pub fn satisfies_bound(&self) -> bool {
        self.mu > self.mu_min
    }
}

/// Options controlling [`assemble_gain_design`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainOptions {
    pub kappa: f64,
    /// `None` picks `margin * mu_min`.
    pub mu: Option<f64>,
    pub margin: f64,
    /// Accept a supplied `μ` at or below the bound.
    pub allow_unsafe: bool,
}

impl GainOptions {
    pub fn new(kappa: f64, mu: Option<f64>) -> Self {
        Self {
            kappa,
            mu,
            margin: DEFAULT_MU_MARGIN,
            allow_unsafe: false,
        }
    }
}

pub fn assemble_gain_design(
    agents: &[FilterVector],
    lambda1: f64,
    pi: f64,
    opts: GainOptions,
) -> Result<GainDesign, FilterError> {
    if agents.is_empty() {
        return Err(FilterError::NoAgents);
    }
    if !(opts.kappa > 0.0) {
        return Err(FilterError::NonPositiveKappa(opts.kappa));
    }
    let mut gamma1s = Vec::with_capacity(agents.len());
    let mut gamma2s = Vec::with_capacity(agents.len());
    for fv in agents {
        let fm = build_filter_matrices(fv);
        gamma1s.push(gamma1(&fm)?);
        gamma2s.push(gamma2(&fm)?);
    }
    let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a1s: Vec<f64> = agents.iter().map(FilterVector::a1).collect();
    let a_bar = max(&a1s);
    let gamma1_bar = max(&gamma1s);
    let gamma2_bar = max(&gamma2s);
    let mu_min = mu_lower_bound(a_bar, lambda1, pi, gamma1_bar, gamma2_bar)?;
    let mu = match opts.mu {
        Some(mu) if mu <= mu_min && !opts.allow_unsafe => {
            return Err(FilterError::MuBelowBound { mu, bound: mu_min })
        }
        Some(mu) => mu,
        None => opts.margin * mu_min,
    };
    Ok(GainDesign {
        kappa: opts.kappa,
        mu,
        gamma1: gamma1s,
        gamma2: gamma2s,
        a_bar,
        gamma1_bar,
        gamma2_bar,
        lambda1,
        pi,
        mu_min,
    })
}
