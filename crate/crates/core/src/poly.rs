//! Small polynomial helpers. Coefficients are stored highest degree first,
//! so `[1, a1, a2]` is `s^2 + a1 s + a2`.

use nalgebra::{Complex, DMatrix};

/// Product of two polynomials.
pub fn mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    if p.is_empty() || q.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// Expands `Π (s - r_k)` for real roots `r_k`.
pub fn from_real_roots(roots: &[f64]) -> Vec<f64> {
    roots.iter().fold(vec![1.0], |acc, &r| mul(&acc, &[1.0, -r]))
}

/// Expands `(s + c)^n`.
pub fn binomial_power(c: f64, n: usize) -> Vec<f64> {
    (0..n).fold(vec![1.0], |acc, _| mul(&acc, &[1.0, c]))
}

/// Left companion matrix of a monic polynomial: first column holds the
/// negated coefficients, ones on the superdiagonal. Its characteristic
/// polynomial is the input polynomial.
pub fn companion(monic: &[f64]) -> DMatrix<f64> {
    let n = monic.len() - 1;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = -monic[i + 1] / monic[0];
        if i + 1 < n {
            m[(i, i + 1)] = 1.0;
        }
    }
    m
}

/// All complex roots via companion-matrix eigenvalues.
pub fn roots(p: &[f64]) -> Vec<Complex<f64>> {
    let first = p.iter().position(|&c| c != 0.0);
    let Some(first) = first else {
        return Vec::new();
    };
    let p = &p[first..];
    if p.len() < 2 {
        return Vec::new();
    }
    companion(p).complex_eigenvalues().iter().copied().collect()
}
