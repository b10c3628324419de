//! Post-run checks: persistency of excitation, convergence times and the
//! text summary.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scenario::Scenario;
use crate::sim::TrackingErrors;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("need at least two samples")]
    TooFewSamples,
    #[error("sample {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sampling grid is not uniform near t = {t}")]
    NonUniformGrid { t: f64 },
    #[error("window T0 = {window} must be positive")]
    BadWindow { window: f64 },
    #[error("window T0 = {window} does not fit in [{t0}, {t_end}]")]
    WindowTooLong { window: f64, t0: f64, t_end: f64 },
    #[error("trajectory has no chi_hat columns; record the full state")]
    MissingColumns,
}

/// Result of a sliding-window Gram test.
#[derive(Debug, Clone, PartialEq)]
pub struct PEReport {
    pub window: f64,
    pub t0: f64,
    /// Minimum of `window_min_eigs`.
    pub epsilon: f64,
    pub window_starts: Vec<f64>,
    pub window_min_eigs: Vec<f64>,
    pub threshold: f64,
    pub persistently_exciting: bool,
}

pub const DEFAULT_PE_THRESHOLD: f64 = 1e-4;

const GRID_TOL: f64 = 1e-3;

fn grid_step(times: &[f64]) -> Result<f64, AnalysisError> {
    if times.len() < 2 {
        return Err(AnalysisError::TooFewSamples);
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for w in times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > GRID_TOL * h {
            return Err(AnalysisError::NonUniformGrid { t: w[0] });
        }
    }
    Ok(h)
}

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of `(1/T₀)∫ f fᵀ` over windows `[t, t + T₀]`,
/// `t ≥ t₀`, advanced by `T₀/4`. The grid must be uniform.
pub fn pe_check(
    times: &[f64],
    samples: &[Vec<f64>],
    window: f64,
    t0: f64,
    threshold: f64,
) -> Result<PEReport, AnalysisError> {
    if !(window > 0.0) {
        return Err(AnalysisError::BadWindow { window });
    }
    let h = grid_step(times)?;
    let n = samples.first().map_or(0, Vec::len);
    for (index, s) in samples.iter().enumerate() {
        if s.len() != n {
            return Err(AnalysisError::Dimension {
                index,
                expected: n,
                got: s.len(),
            });
        }
    }
    if samples.len() != times.len() {
        return Err(AnalysisError::Dimension {
            index: samples.len().min(times.len()),
            expected: times.len(),
            got: samples.len(),
        });
    }
    let t_end = times[times.len() - 1];
    let first = ((t0 - times[0]) / h - 1e-9).ceil().max(0.0) as usize;
    let span = (window / h).round() as usize;
    if span == 0 || first + span > times.len() - 1 {
        return Err(AnalysisError::WindowTooLong { window, t0, t_end });
    }
    let stride = (span / 4).max(1);

    let mut starts = Vec::new();
    let mut eigs = Vec::new();
    let mut k = first;
    while k + span < times.len() {
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for j in k..=k + span {
            let w = if j == k || j == k + span { 0.5 } else { 1.0 };
            let f = DVector::from_column_slice(&samples[j]);
            gram += w * &f * f.transpose();
        }
        gram /= span as f64;
        starts.push(times[k]);
        eigs.push(min_eigenvalue(gram));
        k += stride;
    }
    let epsilon = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PEReport {
        window: span as f64 * h,
        t0,
        epsilon,
        window_starts: starts,
        window_min_eigs: eigs,
        threshold,
        persistently_exciting: epsilon >= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PEOptions {
    /// Window length; `None` uses two periods of the slowest recovered
    /// frequency.
    pub window: Option<f64>,
    /// Start of the test interval; `None` uses half the run.
    pub t0: Option<f64>,
    pub threshold: f64,
}

impl Default for PEOptions {
    fn default() -> Self {
        Self {
            window: None,
            t0: None,
            threshold: DEFAULT_PE_THRESHOLD,
        }
    }
}

/// Runs [`pe_check`] on `F χ̂_i(t)` for every agent.
pub fn check_theorem1_hypothesis(
    te: &TrackingErrors,
    scenario: &Scenario,
    opts: PEOptions,
) -> Result<Vec<PEReport>, AnalysisError> {
    if !te.has_full_state() || te.times.is_empty() {
        return Err(AnalysisError::MissingColumns);
    }
    let t_first = te.times[0];
    let t_end = te.times[te.times.len() - 1];
    let t0 = opts.t0.unwrap_or(t_first + 0.5 * (t_end - t_first));
    let omega_bar = scenario.leader.omega_bar();
    let last = te.final_index();

    te.agents
        .iter()
        .zip(&scenario.agents)
        .map(|(series, design)| {
            let window = opts.window.unwrap_or_else(|| {
                let w_min = series.omega_hat[last]
                    .iter()
                    .copied()
                    .filter(|&w| w >= 1e-2 * omega_bar)
                    .fold(f64::INFINITY, f64::min);
                let w_min = if w_min.is_finite() { w_min } else { omega_bar };
                (2.0 * 2.0 * PI / w_min).min(t_end - t0)
            });
            let chi = &series.full.as_ref().expect("checked above").chi_hat;
            let f = &design.matrices.f;
            let samples: Vec<Vec<f64>> = chi
                .iter()
                .map(|c| (f * DVector::from_column_slice(c)).as_slice().to_vec())
                .collect();
            pe_check(&te.times, &samples, window, t0, opts.threshold)
        })
        .collect()
}

/// First sample time after which `|series|` stays below `threshold`.
pub fn convergence_time(times: &[f64], series: &[f64], threshold: f64) -> Option<f64> {
    match series.iter().rposition(|v| !(v.abs() < threshold)) {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len().min(series.len()) => Some(times[k + 1]),
        Some(_) => None,
    }
}

pub const CONVERGENCE_THRESHOLDS: [f64; 2] = [1e-1, 1e-2];

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub outside_guarantee: bool,
    pub t_end: f64,
    pub max_state_magnitude: f64,
    pub final_e: Vec<f64>,
    pub final_theta_err: Vec<f64>,
    pub final_omega_hat: Vec<Vec<f64>>,
    pub final_vtilde: Vec<f64>,
    /// `Err` carries the reason when the check could not run.
    pub pe: Result<Vec<PEReport>, AnalysisError>,
    /// `(threshold, per-agent time for |e_i|)`.
    pub convergence: Vec<(f64, Vec<Option<f64>>)>,
}

pub fn summarize(te: &TrackingErrors, scenario: &Scenario, pe_opts: PEOptions) -> Summary {
    let last = te.final_index();
    let mut max_mag = 0.0f64;
    let mut bump = |xs: &[f64]| {
        for v in xs {
            max_mag = if v.is_nan() { f64::NAN } else { max_mag.max(v.abs()) };
        }
    };
    for a in &te.agents {
        bump(&a.y);
        bump(&a.y_hat);
        bump(&a.u);
        for th in &a.theta_hat {
            bump(th);
        }
        if let Some(full) = &a.full {
            for block in [&full.x, &full.eta_hat, &full.chi_hat, &full.v_hat] {
                for s in block {
                    bump(s);
                }
            }
        }
    }
    let convergence = CONVERGENCE_THRESHOLDS
        .iter()
        .map(|&thr| {
            (
                thr,
                te.agents
                    .iter()
                    .map(|a| convergence_time(&te.times, &a.e, thr))
                    .collect(),
            )
        })
        .collect();
    Summary {
        outside_guarantee: !scenario.gains.satisfies_bound(),
        t_end: te.times[last],
        max_state_magnitude: max_mag,
        final_e: te.agents.iter().map(|a| a.e[last]).collect(),
        final_theta_err: te.agents.iter().map(|a| a.theta_err[last]).collect(),
        final_omega_hat: te.agents.iter().map(|a| a.omega_hat[last].clone()).collect(),
        final_vtilde: te.agents.iter().map(|a| a.vtilde_norm[last]).collect(),
        pe: check_theorem1_hypothesis(te, scenario, pe_opts),
        convergence,
    }
}

fn g(x: f64) -> String {
    crate::export::fmt_g9(x)
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "outside_guarantee = {}", self.outside_guarantee);
        let _ = writeln!(s, "t_end = {}", g(self.t_end));
        let _ = writeln!(s, "max_state_magnitude = {}", g(self.max_state_magnitude));
        let max = |xs: &[f64]| xs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let _ = writeln!(s, "max_final_abs_e = {}", g(max(&self.final_e)));
        let _ = writeln!(s, "max_final_theta_err = {}", g(max(&self.final_theta_err)));
        let _ = writeln!(s, "max_final_vtilde = {}", g(max(&self.final_vtilde)));
        for (i, e) in self.final_e.iter().enumerate() {
            let id = i + 1;
            let _ = writeln!(s, "agent.{id}.final_e = {}", g(*e));
            let _ = writeln!(s, "agent.{id}.final_theta_err = {}", g(self.final_theta_err[i]));
            let w: Vec<String> = self.final_omega_hat[i].iter().map(|&w| g(w)).collect();
            let _ = writeln!(s, "agent.{id}.final_omega_hat = {}", w.join(","));
            let _ = writeln!(s, "agent.{id}.final_vtilde = {}", g(self.final_vtilde[i]));
        }
        for (thr, times) in &self.convergence {
            for (i, t) in times.iter().enumerate() {
                let v = t.map_or_else(|| "not reached".to_string(), g);
                let _ = writeln!(s, "agent.{}.convergence_time[{}] = {v}", i + 1, g(*thr));
            }
        }
        match &self.pe {
            Ok(reports) => {
                for (i, r) in reports.iter().enumerate() {
                    let id = i + 1;
                    let verdict = if r.persistently_exciting { "PE" } else { "not-PE" };
                    let _ = writeln!(s, "agent.{id}.pe = {verdict}");
                    let _ = writeln!(s, "agent.{id}.pe_epsilon = {}", g(r.epsilon));
                    let _ = writeln!(s, "agent.{id}.pe_window = {}", g(r.window));
                    let _ = writeln!(s, "agent.{id}.pe_t0 = {}", g(r.t0));
                }
                if let Some(r) = reports.first() {
                    let _ = writeln!(s, "pe_threshold = {}", g(r.threshold));
                }
                let _ = writeln!(
                    s,
                    "pe_note = (epsilon, window, t0) is one witness of excitation, not a unique constant"
                );
            }
            Err(e) => {
                let _ = writeln!(s, "pe = unavailable ({e})");
            }
        }
        s
    }
}
