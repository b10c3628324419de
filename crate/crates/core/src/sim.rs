//! Closed-loop network integration: followers, distributed observers and
//! exosystem estimators, driven by the analytic leader output.
//!
//! State layout. The flat state vector is the concatenation over followers
//! `i = 1..N` of the block
//!
//! ```text
//! [ x_i (r) | η̂_i (2l-1) | χ̂_i (2l-1) | θ̂_i (l) | ŷ_i (1) | v̂_i (2l) ]
//! ```
//!
//! so each block has `r + 7l - 1` entries. This layout is stable.

use nalgebra::DVector;
use thiserror::Error;

use crate::controller::{control_from_series, regulator_series, vhat_rates};
use crate::leader::{omegas_from_theta, LeaderSpec};
use crate::observer::{coupling_z_into, observer_rates, ObserverGains, ObserverState};
use crate::scenario::Scenario;

/// States above this magnitude abort a run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state dimension {got} does not match layout dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("state diverged at t = {t:.6} s (|state| = {magnitude:e} > 1e9); check mu and the step size")]
    Diverged { t: f64, magnitude: f64 },
    #[error("mu = {mu} does not exceed the bound {mu_min:.4}; pass the unsafe-gains override to run anyway")]
    InvalidGains { mu: f64, mu_min: f64 },
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 200.0,
            record_stride: 100,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(SimError::Config(format!(
                "t_end = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkLayout {
    pub n: usize,
    pub r: usize,
    pub l: usize,
}

impl NetworkLayout {
    pub fn new(n: usize, r: usize, l: usize) -> Self {
        Self { n, r, l }
    }

    pub fn filter_dim(&self) -> usize {
        2 * self.l - 1
    }

    pub fn observer_len(&self) -> usize {
        2 * self.filter_dim() + self.l + 1
    }

    pub fn block_len(&self) -> usize {
        self.r + self.observer_len() + 2 * self.l
    }

    pub fn dim(&self) -> usize {
        self.n * self.block_len()
    }

    pub fn block(&self, agent: usize) -> std::ops::Range<usize> {
        let b = self.block_len();
        agent * b..(agent + 1) * b
    }

    pub fn x(&self, agent: usize) -> std::ops::Range<usize> {
        let s = agent * self.block_len();
        s..s + self.r
    }

    pub fn observer(&self, agent: usize) -> std::ops::Range<usize> {
        let s = agent * self.block_len() + self.r;
        s..s + self.observer_len()
    }

    pub fn eta_hat(&self, agent: usize) -> std::ops::Range<usize> {
        let s = self.observer(agent).start;
        s..s + self.filter_dim()
    }

    pub fn chi_hat(&self, agent: usize) -> std::ops::Range<usize> {
        let s = self.observer(agent).start + self.filter_dim();
        s..s + self.filter_dim()
    }

    pub fn theta_hat(&self, agent: usize) -> std::ops::Range<usize> {
        let s = self.observer(agent).start + 2 * self.filter_dim();
        s..s + self.l
    }

    pub fn y_hat(&self, agent: usize) -> usize {
        self.observer(agent).end - 1
    }

    pub fn v_hat(&self, agent: usize) -> std::ops::Range<usize> {
        let s = self.observer(agent).end;
        s..s + 2 * self.l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub observer: ObserverState,
    pub v_hat: DVector<f64>,
}

impl AgentState {
    pub fn zeros(r: usize, l: usize) -> Self {
        Self {
            x: DVector::zeros(r),
            observer: ObserverState::zeros(l),
            v_hat: DVector::zeros(2 * l),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub agents: Vec<AgentState>,
}

impl NetworkState {
    pub fn flatten(&self, layout: &NetworkLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.dim()];
        for (i, a) in self.agents.iter().enumerate() {
            out[layout.x(i)].copy_from_slice(a.x.as_slice());
            out[layout.eta_hat(i)].copy_from_slice(a.observer.eta_hat.as_slice());
            out[layout.chi_hat(i)].copy_from_slice(a.observer.chi_hat.as_slice());
            out[layout.theta_hat(i)].copy_from_slice(a.observer.theta_hat.as_slice());
            out[layout.y_hat(i)] = a.observer.y_hat;
            out[layout.v_hat(i)].copy_from_slice(a.v_hat.as_slice());
        }
        out
    }

    pub fn unflatten(layout: &NetworkLayout, flat: &[f64]) -> Result<Self, SimError> {
        if flat.len() != layout.dim() {
            return Err(SimError::Dimension {
                expected: layout.dim(),
                got: flat.len(),
            });
        }
        let v = |r: std::ops::Range<usize>| DVector::from_column_slice(&flat[r]);
        let agents = (0..layout.n)
            .map(|i| AgentState {
                x: v(layout.x(i)),
                observer: ObserverState {
                    eta_hat: v(layout.eta_hat(i)),
                    chi_hat: v(layout.chi_hat(i)),
                    theta_hat: v(layout.theta_hat(i)),
                    y_hat: flat[layout.y_hat(i)],
                },
                v_hat: v(layout.v_hat(i)),
            })
            .collect();
        Ok(Self { agents })
    }
}

/// Closed-loop vector field with preallocated scratch space.
pub struct Dynamics<'a> {
    scenario: &'a Scenario,
    layout: NetworkLayout,
    gains: ObserverGains,
    y_hats: Vec<f64>,
    z: Vec<f64>,
    g_scratch: Vec<f64>,
    f_series: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        let layout = scenario.layout();
        Self {
            scenario,
            layout,
            gains: ObserverGains {
                kappa: scenario.gains.kappa,
                mu: scenario.gains.mu,
            },
            y_hats: vec![0.0; layout.n],
            z: vec![0.0; layout.n],
            g_scratch: vec![0.0; 4 * layout.l],
            f_series: vec![0.0; layout.r + 1],
        }
    }

    pub fn layout(&self) -> NetworkLayout {
        self.layout
    }

    pub fn eval(&mut self, t: f64, state: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let leader_y = self.scenario.leader.output(t);
        for i in 0..lay.n {
            self.y_hats[i] = state[lay.y_hat(i)];
        }
        coupling_z_into(&self.y_hats, leader_y, &self.scenario.topology, &mut self.z);

        for (i, agent) in self.scenario.agents.iter().enumerate() {
            let x = &state[lay.x(i)];
            let theta_hat = &state[lay.theta_hat(i)];
            let v_hat = &state[lay.v_hat(i)];
            let y_hat = state[lay.y_hat(i)];

            regulator_series(v_hat, theta_hat, &mut self.g_scratch, &mut self.f_series);
            let u = control_from_series(agent.controller.alpha(), &self.f_series, x);
            let dx = &mut out[lay.x(i)];
            for s in 0..lay.r - 1 {
                dx[s] = x[s + 1];
            }
            dx[lay.r - 1] = u;

            observer_rates(
                &state[lay.observer(i)],
                self.z[i],
                &agent.matrices,
                agent.filter.a1(),
                self.gains,
                &mut out[lay.observer(i)],
            );
            vhat_rates(
                v_hat,
                y_hat,
                theta_hat,
                agent.controller.l_gain(),
                &mut out[lay.v_hat(i)],
            );
        }
    }
}

fn max_abs(x: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for v in x {
        if v.is_nan() {
            return f64::NAN;
        }
        m = m.max(v.abs());
    }
    m
}

fn guard(t: f64, x: &[f64]) -> Result<(), SimError> {
    let m = max_abs(x);
    if m.is_nan() || m > DIVERGENCE_LIMIT {
        Err(SimError::Diverged { t, magnitude: m })
    } else {
        Ok(())
    }
}

/// Closed-loop derivative of a typed network state at time `t`.
pub fn closed_loop_derivative(
    state: &NetworkState,
    t: f64,
    scenario: &Scenario,
) -> Result<NetworkState, SimError> {
    let mut dyns = Dynamics::new(scenario);
    let layout = dyns.layout();
    if state.agents.len() != layout.n {
        return Err(SimError::Dimension {
            expected: layout.n,
            got: state.agents.len(),
        });
    }
    let flat = state.flatten(&layout);
    guard(t, &flat)?;
    let mut out = vec![0.0; flat.len()];
    dyns.eval(t, &flat, &mut out);
    NetworkState::unflatten(&layout, &out)
}

/// Classical fourth-order Runge–Kutta with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn step<F>(&mut self, mut f: F, t: f64, dt: f64, x: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let half = 0.5 * dt;
        f(t, x, &mut self.k1);
        for j in 0..x.len() {
            self.tmp[j] = x[j] + half * self.k1[j];
        }
        f(t + half, &self.tmp, &mut self.k2);
        for j in 0..x.len() {
            self.tmp[j] = x[j] + half * self.k2[j];
        }
        f(t + half, &self.tmp, &mut self.k3);
        for j in 0..x.len() {
            self.tmp[j] = x[j] + dt * self.k3[j];
        }
        f(t + dt, &self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        for j in 0..x.len() {
            x[j] += sixth * (self.k1[j] + 2.0 * (self.k2[j] + self.k3[j]) + self.k4[j]);
        }
    }
}

/// One RK4 step of the closed loop.
pub fn step_rk4(
    state: &NetworkState,
    t: f64,
    dt: f64,
    scenario: &Scenario,
) -> Result<NetworkState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::Config(format!("dt must be positive, got {dt}")));
    }
    let mut dyns = Dynamics::new(scenario);
    let layout = dyns.layout();
    let mut x = state.flatten(&layout);
    let mut rk = Rk4::new(x.len());
    rk.step(|t, s, o| dyns.eval(t, s, o), t, dt, &mut x);
    guard(t + dt, &x)?;
    NetworkState::unflatten(&layout, &x)
}

/// Recorded closed-loop run. States are stored in full so every derived
/// quantity can be recomputed against the analytic leader.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub layout: NetworkLayout,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub leader: LeaderSpec,
    /// `α` of each agent, needed to recompute `u_i`.
    pub alphas: Vec<Vec<f64>>,
    /// Set when the run used gains outside the convergence guarantee.
    pub outside_guarantee: bool,
}

/// Integrates the closed loop from the scenario's initial state.
pub fn run_simulation(scenario: &Scenario, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    let x0 = scenario.initial_state().flatten(&scenario.layout());
    run_from(scenario, cfg, x0)
}

/// Integrates the closed loop from an explicit flat initial state.
pub fn run_from(
    scenario: &Scenario,
    cfg: &SimConfig,
    mut x: Vec<f64>,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let outside = !scenario.gains.satisfies_bound();
    if outside && !scenario.allow_unsafe_gains {
        return Err(SimError::InvalidGains {
            mu: scenario.gains.mu,
            mu_min: scenario.gains.mu_min,
        });
    }
    let mut dyns = Dynamics::new(scenario);
    let layout = dyns.layout();
    if x.len() != layout.dim() {
        return Err(SimError::Dimension {
            expected: layout.dim(),
            got: x.len(),
        });
    }
    guard(0.0, &x)?;

    let n_steps = cfg.n_steps();
    let n_samples = n_steps / cfg.record_stride + 2;
    let mut times = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    times.push(0.0);
    states.push(x.clone());

    let mut rk = Rk4::new(x.len());
    for k in 0..n_steps {
        let t = k as f64 * cfg.dt;
        rk.step(|t, s, o| dyns.eval(t, s, o), t, cfg.dt, &mut x);
        let t_next = (k + 1) as f64 * cfg.dt;
        guard(t_next, &x)?;
        if (k + 1) % cfg.record_stride == 0 || k + 1 == n_steps {
            times.push(t_next);
            states.push(x.clone());
        }
    }

    Ok(Trajectory {
        layout,
        times,
        states,
        leader: scenario.leader.clone(),
        alphas: scenario
            .agents
            .iter()
            .map(|a| a.controller.alpha().to_vec())
            .collect(),
        outside_guarantee: outside,
    })
}

/// Full internal state of one agent over time, as recorded by the
/// simulator (absent when a trajectory is read back from a plain CSV).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FullStateSeries {
    pub x: Vec<Vec<f64>>,
    pub eta_hat: Vec<Vec<f64>>,
    pub chi_hat: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentSeries {
    pub y: Vec<f64>,
    /// `e_i = y_i - y_{N+1}`.
    pub e: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// `ỹ_i = ŷ_i - y_{N+1}`.
    pub y_tilde: Vec<f64>,
    pub u: Vec<f64>,
    pub theta_hat: Vec<Vec<f64>>,
    /// `‖θ̂_i - θ‖`.
    pub theta_err: Vec<f64>,
    pub omega_hat: Vec<Vec<f64>>,
    /// `‖v̂_i - v‖`.
    pub vtilde_norm: Vec<f64>,
    pub full: Option<FullStateSeries>,
}

/// Per-agent error and estimate series on the recorded time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingErrors {
    pub l: usize,
    pub r: usize,
    pub times: Vec<f64>,
    pub agents: Vec<AgentSeries>,
}

impl TrackingErrors {
    pub fn final_index(&self) -> usize {
        self.times.len() - 1
    }

    pub fn has_full_state(&self) -> bool {
        self.agents.iter().all(|a| a.full.is_some())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Recomputes every derived series from the recorded states and the
/// analytic leader.
pub fn tracking_errors(traj: &Trajectory) -> TrackingErrors {
    let lay = traj.layout;
    let theta = traj.leader.theta();
    let mut agents: Vec<AgentSeries> = (0..lay.n)
        .map(|_| AgentSeries {
            full: Some(FullStateSeries::default()),
            ..Default::default()
        })
        .collect();
    let mut scratch = vec![0.0; 4 * lay.l];
    let mut f = vec![0.0; lay.r + 1];
    for (&t, s) in traj.times.iter().zip(&traj.states) {
        let y0 = traj.leader.output(t);
        let v = traj.leader.virtual_state(t);
        for (i, a) in agents.iter_mut().enumerate() {
            let x = &s[lay.x(i)];
            let th = &s[lay.theta_hat(i)];
            let vh = &s[lay.v_hat(i)];
            let yh = s[lay.y_hat(i)];
            regulator_series(vh, th, &mut scratch, &mut f);
            a.y.push(x[0]);
            a.e.push(x[0] - y0);
            a.y_hat.push(yh);
            a.y_tilde.push(yh - y0);
            a.u.push(control_from_series(&traj.alphas[i], &f, x));
            a.theta_hat.push(th.to_vec());
            a.theta_err.push(dist(th, &theta));
            a.omega_hat.push(omegas_from_theta(th));
            a.vtilde_norm.push(dist(vh, v.as_slice()));
            let full = a.full.as_mut().expect("full state present");
            full.x.push(x.to_vec());
            full.eta_hat.push(s[lay.eta_hat(i)].to_vec());
            full.chi_hat.push(s[lay.chi_hat(i)].to_vec());
            full.v_hat.push(vh.to_vec());
        }
    }
    TrackingErrors {
        l: lay.l,
        r: lay.r,
        times: traj.times.clone(),
        agents,
    }
}
