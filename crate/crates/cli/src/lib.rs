//! Subcommands behind the `consensus-sim` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use consensus_core::analysis::{self, PEOptions, Summary};
use consensus_core::controller::observer_error_matrix;
use consensus_core::export::{self, fmt_g9};
use consensus_core::scenario::{Config, LoadOptions, Scenario, ScenarioError};
use consensus_core::sim::{self, SimConfig, SimError};
use rayon::prelude::*;
use thiserror::Error;

pub const THREADS_ENV: &str = "CONSENSUS_SIM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Validation(String),
    #[error("simulation diverged: {0}")]
    Diverged(SimError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    /// 0 success, 1 validation failure, 2 runtime divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged(_) => 2,
            _ => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Diverged { .. } => CliError::Diverged(e),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: PathBuf,
    pub allow_unsafe_gains: bool,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

impl Common {
    pub fn load(&self) -> Result<Scenario, CliError> {
        let mut s = consensus_core::load_scenario(
            &self.config,
            LoadOptions {
                allow_unsafe_gains: self.allow_unsafe_gains,
            },
        )?;
        if let Some(dt) = self.dt {
            s.sim.dt = dt;
        }
        if let Some(t) = self.t_end {
            s.sim.t_end = t;
        }
        s.sim.validate()?;
        Ok(s)
    }
}

/// Design report and whether every check passed.
pub fn design_report(s: &Scenario) -> (String, bool) {
    let g = &s.gains;
    let mut out = String::new();
    let mut ok = g.satisfies_bound();
    let _ = writeln!(out, "n_followers = {}", s.agents.len());
    let _ = writeln!(out, "lambda1 = {}", fmt_g9(s.pinning.lambda1));
    for (i, (g1, g2)) in g.gamma1.iter().zip(&g.gamma2).enumerate() {
        let _ = writeln!(out, "agent.{}.gamma1 = {}", i + 1, fmt_g9(*g1));
        let _ = writeln!(out, "agent.{}.gamma2 = {}", i + 1, fmt_g9(*g2));
    }
    let _ = writeln!(out, "a_bar = {}", fmt_g9(g.a_bar));
    let _ = writeln!(out, "gamma1_bar = {}", fmt_g9(g.gamma1_bar));
    let _ = writeln!(out, "gamma2_bar = {}", fmt_g9(g.gamma2_bar));
    let _ = writeln!(out, "pi = {}", fmt_g9(g.pi));
    let _ = writeln!(out, "mu_min = {}", fmt_g9(g.mu_min));
    let _ = writeln!(out, "mu = {}", fmt_g9(g.mu));
    let _ = writeln!(out, "kappa = {}", fmt_g9(g.kappa));
    let _ = writeln!(out, "mu_check = {}", if g.satisfies_bound() { "pass" } else { "FAIL" });
    for (i, a) in s.agents.iter().enumerate() {
        let eig = observer_error_matrix(a.controller.l_gain()).complex_eigenvalues();
        let eig: Vec<(f64, f64)> = eig.iter().map(|z| (z.re, z.im)).collect();
        ok &= eig.iter().all(|(re, _)| *re < 0.0);
        let text: Vec<String> = cluster_eigenvalues(&eig)
            .into_iter()
            .map(|((re, im), m)| {
                let z = if im == 0.0 {
                    fmt_g9(re)
                } else {
                    format!("{}{}{}i", fmt_g9(re), if im < 0.0 { "-" } else { "+" }, fmt_g9(im.abs()))
                };
                if m > 1 { format!("{z} (x{m})") } else { z }
            })
            .collect();
        let _ = writeln!(out, "agent.{}.l_eigenvalues = {}", i + 1, text.join(","));
    }
    let _ = writeln!(out, "status = {}", if ok { "pass" } else { "FAIL" });
    (out, ok)
}

/// Groups eigenvalues closer than the rounding scatter of a repeated
/// eigenvalue and reports each group by its centroid and size. The
/// centroid of a cluster is far better conditioned than its members.
pub fn cluster_eigenvalues(eig: &[(f64, f64)]) -> Vec<((f64, f64), usize)> {
    let mut groups: Vec<Vec<(f64, f64)>> = Vec::new();
    for &z in eig {
        let near = |w: &(f64, f64)| {
            let d = ((z.0 - w.0).powi(2) + (z.1 - w.1).powi(2)).sqrt();
            d <= 1e-2 * (1.0 + z.0.hypot(z.1))
        };
        match groups.iter_mut().find(|g| g.iter().any(near)) {
            Some(g) => g.push(z),
            None => groups.push(vec![z]),
        }
    }
    let snap = |x: f64| {
        let r = (x * 1e9).round() / 1e9;
        if r == 0.0 { 0.0 } else { r }
    };
    let mut out: Vec<((f64, f64), usize)> = groups
        .iter()
        .map(|g| {
            let m = g.len() as f64;
            let re = g.iter().map(|z| z.0).sum::<f64>() / m;
            let im = g.iter().map(|z| z.1).sum::<f64>() / m;
            ((snap(re), snap(im)), g.len())
        })
        .collect();
    out.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    out
}

pub fn cmd_design(common: &Common) -> Result<(String, bool), CliError> {
    Ok(design_report(&common.load()?))
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub out: PathBuf,
    pub force: bool,
    pub full_state: bool,
}

pub const OUTPUT_FILES: [&str; 3] = ["trajectory.csv", "summary.txt", "design.txt"];

fn prepare_out_dir(out: &Path, files: &[&str], force: bool) -> Result<(), CliError> {
    if !force {
        if let Some(f) = files.iter().find(|f| out.join(f).exists()) {
            return Err(CliError::Validation(format!(
                "{} already exists; pass --force to overwrite",
                out.join(f).display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))
}

pub fn cmd_simulate(common: &Common, opts: &SimulateOptions) -> Result<Summary, CliError> {
    let s = common.load()?;
    prepare_out_dir(&opts.out, &OUTPUT_FILES, opts.force)?;
    let (design, _) = design_report(&s);
    let traj = sim::run_simulation(&s, &s.sim)?;
    let te = sim::tracking_errors(&traj);
    let summary = analysis::summarize(&te, &s, PEOptions::default());

    let csv_path = opts.out.join("trajectory.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    export::write_csv(&te, std::io::BufWriter::new(file), opts.full_state)
        .map_err(io_err(&csv_path))?;
    let p = opts.out.join("summary.txt");
    fs::write(&p, summary.to_text()).map_err(io_err(&p))?;
    let p = opts.out.join("design.txt");
    fs::write(&p, design).map_err(io_err(&p))?;
    Ok(summary)
}

pub fn cmd_analyze(
    common: &Common,
    trajectory: &Path,
    report: Option<&Path>,
) -> Result<String, CliError> {
    let s = common.load()?;
    let file = fs::File::open(trajectory).map_err(io_err(trajectory))?;
    let mut te = export::read_csv(BufReader::new(file)).map_err(|e| CliError::Io {
        path: trajectory.to_path_buf(),
        message: e.to_string(),
    })?;
    if te.agents.len() != s.agents.len() || te.l != s.leader.l() {
        return Err(CliError::Validation(format!(
            "trajectory has {} agents and l = {}, scenario has {} and l = {}",
            te.agents.len(),
            te.l,
            s.agents.len(),
            s.leader.l()
        )));
    }
    if te.r == 0 {
        te.r = s.follower_order;
    }
    let text = analysis::summarize(&te, &s, PEOptions::default()).to_text();
    if let Some(p) = report {
        fs::write(p, &text).map_err(io_err(p))?;
    }
    Ok(text)
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub kappa: f64,
    pub status: String,
    pub summary: Option<Summary>,
}

pub const SWEEP_HEADER: &str = "index,mu,kappa,status,max_final_abs_e,max_final_theta_err,max_final_vtilde,convergence_time_1e-2,pe_min_epsilon";

impl SweepRow {
    pub fn csv_line(&self, index: usize) -> String {
        let fields = match &self.summary {
            None => vec![String::new(); 5],
            Some(s) => {
                let max = |xs: &[f64]| xs.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let conv = s
                    .convergence
                    .iter()
                    .find(|(thr, _)| *thr == 1e-2)
                    .and_then(|(_, ts)| {
                        ts.iter()
                            .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)))
                    })
                    .map_or_else(|| "not reached".to_string(), fmt_g9);
                let pe = s.pe.as_ref().map_or_else(
                    |_| String::new(),
                    |r| fmt_g9(r.iter().map(|r| r.epsilon).fold(f64::INFINITY, f64::min)),
                );
                vec![
                    fmt_g9(max(&s.final_e)),
                    fmt_g9(max(&s.final_theta_err)),
                    fmt_g9(max(&s.final_vtilde)),
                    conv,
                    pe,
                ]
            }
        };
        let status = self.status.replace([',', '\n'], ";");
        format!(
            "{index},{},{},{status},{}",
            fmt_g9(self.mu),
            fmt_g9(self.kappa),
            fields.join(",")
        )
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Validation(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Validation(e.to_string()))
}

fn run_point(base: &Config, mu: f64, kappa: f64, common: &Common, sim: SimConfig) -> SweepRow {
    let mut cfg = base.clone();
    cfg.set("observer", "mu", fmt_g9(mu));
    cfg.set("observer", "kappa", fmt_g9(kappa));
    let row = |status: String, summary| SweepRow {
        mu,
        kappa,
        status,
        summary,
    };
    let s = match Scenario::from_config(
        &cfg,
        LoadOptions {
            allow_unsafe_gains: common.allow_unsafe_gains,
        },
    ) {
        Ok(s) => s,
        Err(e) => return row(format!("invalid: {e}"), None),
    };
    match sim::run_simulation(&s, &sim) {
        Ok(traj) => {
            let te = sim::tracking_errors(&traj);
            let summary = analysis::summarize(&te, &s, PEOptions::default());
            let status = if summary.outside_guarantee { "ok (outside guarantee)" } else { "ok" };
            row(status.into(), Some(summary))
        }
        Err(e @ SimError::Diverged { .. }) => row(format!("diverged: {e}"), None),
        Err(e) => row(format!("invalid: {e}"), None),
    }
}

/// Runs every `(μ, κ)` pair. Rows come back in grid order, `μ` outermost.
pub fn cmd_sweep(common: &Common, opts: &SweepOptions) -> Result<Vec<SweepRow>, CliError> {
    let s = common.load()?;
    if opts.mu.is_empty() && opts.kappa.is_empty() {
        return Err(CliError::Validation("sweep grid is empty; give --mu and/or --kappa".into()));
    }
    let mus = if opts.mu.is_empty() { vec![s.gains.mu] } else { opts.mu.clone() };
    let kappas = if opts.kappa.is_empty() { vec![s.gains.kappa] } else { opts.kappa.clone() };
    let grid: Vec<(f64, f64)> = mus
        .iter()
        .flat_map(|&m| kappas.iter().map(move |&k| (m, k)))
        .collect();
    if let Some(out) = &opts.out {
        prepare_out_dir(out, &["sweep.csv"], opts.force)?;
    }
    let mut base = s.to_config();
    base.remove("observer", "mu");
    let sim_cfg = s.sim;
    let rows: Vec<SweepRow> = thread_pool()?.install(|| {
        grid.par_iter()
            .map(|&(mu, kappa)| run_point(&base, mu, kappa, common, sim_cfg))
            .collect()
    });
    if let Some(out) = &opts.out {
        let p = out.join("sweep.csv");
        fs::write(&p, sweep_csv(&rows)).map_err(io_err(&p))?;
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&r.csv_line(i));
        s.push('\n');
    }
    s
}

pub fn parse_grid(v: &str) -> Result<Vec<f64>, String> {
    consensus_core::scenario::parse_list(v)
}
