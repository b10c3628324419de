//! Scenario aggregation and the INI-style configuration format.
//!
//! ```text
//! [topology]
//! n_followers = 5
//! edges = "1-2,1-4,2-3,4-5"
//! pins = "1,3,5"
//!
//! [leader]
//! amplitudes = "5,2"
//! frequencies = "1.5,1"
//! phases = "0,0"
//! omega_bar = 1.5
//!
//! [follower]
//! order = 2
//!
//! [observer]
//! kappa = 500
//! mu = 56            # optional; defaults to mu_margin * bound
//! mu_margin = 1.25
//!
//! [controller]
//! alpha = "6,11"
//! l_coeffs = "12,54,108,81"   # or L_poly = "(s+3)^4"
//!
//! [sim]
//! dt = 1e-4
//! t_end = 200
//! record_stride = 100
//!
//! [agent.1]
//! a = "2.5,2.49,1.49"
//! ```
//!
//! Agent sections may also carry `l_coeffs` (per-agent Luenberger gain) and
//! initial conditions `x0`, `eta_hat0`, `chi_hat0`, `theta_hat0`, `y_hat0`,
//! `v_hat0`. Anything not given starts at zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::controller::{design_l, ControllerDesign};
use crate::filter_form::{
    assemble_gain_design, build_filter_matrices, FilterError, FilterMatrices, FilterVector,
    GainDesign, GainOptions, DEFAULT_MU_MARGIN,
};
use crate::graph::{PinningMatrix, Topology};
use crate::leader::{pi_bound, LeaderSpec};
use crate::poly;
use crate::sim::{AgentState, NetworkLayout, NetworkState, SimConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("[{section}] {key}: {message}")]
    Invalid {
        section: String,
        key: String,
        message: String,
    },
}

fn invalid(section: &str, key: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        section: section.into(),
        key: key.into(),
        message: message.into(),
    }
}

/// Parsed but not yet validated configuration: section -> key -> value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut cfg = Config::default();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ScenarioError::Parse {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim().to_string();
                cfg.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ScenarioError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let section = current.as_ref().ok_or_else(|| ScenarioError::Parse {
                line: line_no,
                message: "key outside of any section".into(),
            })?;
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            let key = key.trim().to_string();
            let entries = cfg.sections.get_mut(section).expect("section exists");
            if entries.insert(key.clone(), value.to_string()).is_some() {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}` in [{section}]"),
                });
            }
        }
        Ok(cfg)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn remove(&mut self, section: &str, key: &str) {
        if let Some(s) = self.sections.get_mut(section) {
            s.remove(key);
        }
    }

    fn require(&self, section: &str, key: &str) -> Result<&str, ScenarioError> {
        self.get(section, key)
            .ok_or_else(|| invalid(section, key, "missing required key"))
    }

    fn number(&self, section: &str, key: &str) -> Result<Option<f64>, ScenarioError> {
        self.get(section, key)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid(section, key, format!("`{v}` is not a number")))
            })
            .transpose()
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ScenarioError> {
        self.get(section, key)
            .map(|v| parse_list(v).map_err(|m| invalid(section, key, m)))
            .transpose()
    }

    fn integer(&self, section: &str, key: &str) -> Result<Option<usize>, ScenarioError> {
        self.get(section, key)
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| invalid(section, key, format!("`{v}` is not a nonnegative integer")))
            })
            .transpose()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                if v.contains(',') || v.contains(' ') || v.contains('^') {
                    let _ = writeln!(out, "{k} = \"{v}\"");
                } else {
                    let _ = writeln!(out, "{k} = {v}");
                }
            }
            out.push('\n');
        }
        out
    }

    fn agent_sections(&self) -> Vec<(usize, &str)> {
        self.sections
            .keys()
            .filter_map(|k| {
                k.strip_prefix("agent.")
                    .and_then(|id| id.parse::<usize>().ok())
                    .map(|id| (id, k.as_str()))
            })
            .collect()
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' | ';' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

pub fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect()
}

fn parse_edges(v: &str) -> Result<Vec<(usize, usize)>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|e| {
            let (a, b) = e
                .split_once('-')
                .ok_or_else(|| format!("edge `{e}` must look like `i-j`"))?;
            let p = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("edge `{e}` has a non-integer endpoint"))
            };
            Ok((p(a)?, p(b)?))
        })
        .collect()
}

fn parse_indices(v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("`{s}` is not an index")))
        .collect()
}

/// Parses `(s+c)^n` or `(s-c)^n` into monic coefficients.
pub fn parse_binomial_poly(v: &str) -> Result<Vec<f64>, String> {
    let compact: String = v.chars().filter(|c| !c.is_whitespace()).collect();
    let err = || format!("`{v}` is not of the form (s+c)^n");
    let (base, exp) = compact.split_once('^').ok_or_else(err)?;
    let inner = base
        .strip_prefix("(s")
        .and_then(|b| b.strip_suffix(')'))
        .ok_or_else(err)?;
    let c: f64 = inner.parse().map_err(|_| err())?;
    let n: usize = exp.parse().map_err(|_| err())?;
    Ok(poly::binomial_power(c, n))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// Initial condition of one agent; `None` fields start at zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentInit {
    pub x: Option<Vec<f64>>,
    pub eta_hat: Option<Vec<f64>>,
    pub chi_hat: Option<Vec<f64>>,
    pub theta_hat: Option<Vec<f64>>,
    pub y_hat: Option<f64>,
    pub v_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDesign {
    pub filter: FilterVector,
    pub matrices: FilterMatrices,
    pub controller: ControllerDesign,
    pub init: AgentInit,
}

/// Everything a run needs, validated for mutual consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub pinning: PinningMatrix,
    pub leader: LeaderSpec,
    pub follower_order: usize,
    pub agents: Vec<AgentDesign>,
    pub gains: GainDesign,
    pub mu_margin: f64,
    /// `μ` as given in the file; `None` when derived from the margin.
    pub mu_requested: Option<f64>,
    pub sim: SimConfig,
    pub allow_unsafe_gains: bool,
}

/// Load-time switches that are not part of the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadOptions {
    pub allow_unsafe_gains: bool,
}

impl Scenario {
    pub fn layout(&self) -> NetworkLayout {
        NetworkLayout::new(self.agents.len(), self.follower_order, self.leader.l())
    }

    pub fn theta(&self) -> Vec<f64> {
        self.leader.theta()
    }

    pub fn initial_state(&self) -> NetworkState {
        let r = self.follower_order;
        let l = self.leader.l();
        let agents = self
            .agents
            .iter()
            .map(|a| {
                let mut s = AgentState::zeros(r, l);
                let fill = |dst: &mut DVector<f64>, src: &Option<Vec<f64>>| {
                    if let Some(v) = src {
                        dst.copy_from_slice(v);
                    }
                };
                fill(&mut s.x, &a.init.x);
                fill(&mut s.observer.eta_hat, &a.init.eta_hat);
                fill(&mut s.observer.chi_hat, &a.init.chi_hat);
                fill(&mut s.observer.theta_hat, &a.init.theta_hat);
                fill(&mut s.v_hat, &a.init.v_hat);
                if let Some(y) = a.init.y_hat {
                    s.observer.y_hat = y;
                }
                s
            })
            .collect();
        NetworkState { agents }
    }

    pub fn from_config(cfg: &Config, opts: LoadOptions) -> Result<Self, ScenarioError> {
        // topology
        let n = cfg
            .integer("topology", "n_followers")?
            .ok_or_else(|| invalid("topology", "n_followers", "missing required key"))?;
        let edges = parse_edges(cfg.get("topology", "edges").unwrap_or(""))
            .map_err(|m| invalid("topology", "edges", m))?;
        let pins = parse_indices(cfg.require("topology", "pins")?)
            .map_err(|m| invalid("topology", "pins", m))?;
        let topology = Topology::new(n, edges, pins).map_err(|e| {
            invalid(
                "topology",
                "edges/pins",
                format!("{e} (the leader must reach every follower)"),
            )
        })?;
        let pinning = PinningMatrix::from_topology(&topology)
            .map_err(|e| invalid("topology", "edges/pins", e.to_string()))?;

        // leader
        let req_list = |s: &str, k: &str| -> Result<Vec<f64>, ScenarioError> {
            cfg.list(s, k)?.ok_or_else(|| invalid(s, k, "missing required key"))
        };
        let freqs = req_list("leader", "frequencies")?;
        let amps = req_list("leader", "amplitudes")?;
        let phases = cfg.list("leader", "phases")?.unwrap_or_else(|| vec![0.0; freqs.len()]);
        let omega_bar = cfg
            .number("leader", "omega_bar")?
            .ok_or_else(|| invalid("leader", "omega_bar", "missing required key"))?;
        let leader = LeaderSpec::new(amps, phases, freqs, omega_bar)
            .map_err(|e| invalid("leader", "frequencies", e.to_string()))?;
        let l = leader.l();

        // controller
        let alpha = req_list("controller", "alpha")?;
        let r = cfg.integer("follower", "order")?.unwrap_or(alpha.len());
        if r == 0 {
            return Err(invalid("follower", "order", "follower order must be at least 1"));
        }
        if alpha.len() != r {
            return Err(invalid(
                "controller",
                "alpha",
                format!("expected {r} coefficients (follower order), got {}", alpha.len()),
            ));
        }
        let shared_l = match (cfg.list("controller", "l_coeffs")?, cfg.get("controller", "L_poly")) {
            (Some(c), _) => c,
            (None, Some(p)) => {
                let poly = parse_binomial_poly(p).map_err(|m| invalid("controller", "L_poly", m))?;
                design_l(&poly).map_err(|e| invalid("controller", "L_poly", e.to_string()))?
            }
            (None, None) => {
                return Err(invalid("controller", "l_coeffs", "missing required key"));
            }
        };
        if shared_l.len() != 2 * l {
            return Err(invalid(
                "controller",
                "l_coeffs",
                format!("expected 2l = {} coefficients, got {}", 2 * l, shared_l.len()),
            ));
        }
        let base_controller = ControllerDesign::new(&alpha, shared_l)
            .map_err(|e| invalid("controller", "alpha/l_coeffs", e.to_string()))?;

        // agents
        let mut ids = cfg.agent_sections();
        ids.sort();
        let found: Vec<usize> = ids.iter().map(|(i, _)| *i).collect();
        let expected: Vec<usize> = (1..=n).collect();
        if found != expected {
            return Err(invalid(
                "agent.*",
                "a",
                format!("need sections [agent.1] .. [agent.{n}], found {found:?}"),
            ));
        }
        let mut agents = Vec::with_capacity(n);
        for (_, sec) in &ids {
            let a = cfg.list(sec, "a")?.ok_or_else(|| invalid(sec, "a", "missing required key"))?;
            if a.len() != 2 * l - 1 {
                return Err(invalid(
                    sec,
                    "a",
                    format!("expected 2l-1 = {} coefficients, got {}", 2 * l - 1, a.len()),
                ));
            }
            let filter = FilterVector::new(a).map_err(|e| {
                invalid(sec, "a", format!("{e}; the stable-filter polynomial condition on a_i fails"))
            })?;
            let controller = match cfg.list(sec, "l_coeffs")? {
                Some(lc) => base_controller
                    .with_l_gain(lc)
                    .map_err(|e| invalid(sec, "l_coeffs", e.to_string()))?,
                None => base_controller.clone(),
            };
            let dims = [
                ("x0", r),
                ("eta_hat0", 2 * l - 1),
                ("chi_hat0", 2 * l - 1),
                ("theta_hat0", l),
                ("v_hat0", 2 * l),
            ];
            let mut vecs = Vec::new();
            for (key, dim) in dims {
                let v = cfg.list(sec, key)?;
                if let Some(v) = &v {
                    if v.len() != dim {
                        return Err(invalid(sec, key, format!("expected {dim} entries, got {}", v.len())));
                    }
                }
                vecs.push(v);
            }
            let mut vecs = vecs.into_iter();
            let init = AgentInit {
                x: vecs.next().flatten(),
                eta_hat: vecs.next().flatten(),
                chi_hat: vecs.next().flatten(),
                theta_hat: vecs.next().flatten(),
                v_hat: vecs.next().flatten(),
                y_hat: cfg.number(sec, "y_hat0")?,
            };
            agents.push(AgentDesign {
                matrices: build_filter_matrices(&filter),
                filter,
                controller,
                init,
            });
        }

        // gains
        let kappa = cfg
            .number("observer", "kappa")?
            .ok_or_else(|| invalid("observer", "kappa", "missing required key"))?;
        let mu_requested = cfg.number("observer", "mu")?;
        let mu_margin = cfg.number("observer", "mu_margin")?.unwrap_or(DEFAULT_MU_MARGIN);
        if !(mu_margin > 1.0) {
            return Err(invalid("observer", "mu_margin", "margin must exceed 1"));
        }
        let filters: Vec<FilterVector> = agents.iter().map(|a| a.filter.clone()).collect();
        let gains = assemble_gain_design(
            &filters,
            pinning.lambda1,
            pi_bound(leader.omega_bar(), l),
            GainOptions {
                kappa,
                mu: mu_requested,
                margin: mu_margin,
                allow_unsafe: opts.allow_unsafe_gains,
            },
        )
        .map_err(|e| match e {
            FilterError::NonPositiveKappa(_) => invalid("observer", "kappa", e.to_string()),
            FilterError::MuBelowBound { .. } => invalid(
                "observer",
                "mu",
                format!("{e}; choose mu above the bound or pass --allow-unsafe-gains"),
            ),
            other => invalid("agent.*", "a", other.to_string()),
        })?;

        // sim
        let defaults = SimConfig::default();
        let sim = SimConfig {
            dt: cfg.number("sim", "dt")?.unwrap_or(defaults.dt),
            t_end: cfg.number("sim", "t_end")?.unwrap_or(defaults.t_end),
            record_stride: cfg.integer("sim", "record_stride")?.unwrap_or(defaults.record_stride),
        };
        sim.validate().map_err(|e| invalid("sim", "dt/t_end", e.to_string()))?;

        Ok(Self {
            topology,
            pinning,
            leader,
            follower_order: r,
            agents,
            gains,
            mu_margin,
            mu_requested,
            sim,
            allow_unsafe_gains: opts.allow_unsafe_gains,
        })
    }

    /// Serializes the validated scenario back to the config grammar.
    pub fn to_config(&self) -> Config {
        let mut c = Config::default();
        let t = &self.topology;
        c.set("topology", "n_followers", t.n_followers().to_string());
        c.set(
            "topology",
            "edges",
            t.edges().map(|(i, j)| format!("{i}-{j}")).collect::<Vec<_>>().join(","),
        );
        c.set(
            "topology",
            "pins",
            t.pins().map(|p| p.to_string()).collect::<Vec<_>>().join(","),
        );
        c.set("leader", "amplitudes", fmt_list(self.leader.amplitudes()));
        c.set("leader", "frequencies", fmt_list(self.leader.frequencies()));
        c.set("leader", "phases", fmt_list(self.leader.phases()));
        c.set("leader", "omega_bar", format!("{}", self.leader.omega_bar()));
        c.set("follower", "order", self.follower_order.to_string());
        c.set("observer", "kappa", format!("{}", self.gains.kappa));
        if let Some(mu) = self.mu_requested {
            c.set("observer", "mu", format!("{mu}"));
        }
        c.set("observer", "mu_margin", format!("{}", self.mu_margin));
        let base = &self.agents[0].controller;
        c.set("controller", "alpha", fmt_list(&base.alpha()[..base.r()]));
        c.set("controller", "l_coeffs", fmt_list(base.l_gain()));
        c.set("sim", "dt", format!("{}", self.sim.dt));
        c.set("sim", "t_end", format!("{}", self.sim.t_end));
        c.set("sim", "record_stride", self.sim.record_stride.to_string());
        for (i, a) in self.agents.iter().enumerate() {
            let sec = format!("agent.{}", i + 1);
            c.set(&sec, "a", fmt_list(a.filter.coeffs()));
            if a.controller.l_gain() != base.l_gain() {
                c.set(&sec, "l_coeffs", fmt_list(a.controller.l_gain()));
            }
            let init = &a.init;
            let opt = |c: &mut Config, k: &str, v: &Option<Vec<f64>>| {
                if let Some(v) = v {
                    c.set(&sec, k, fmt_list(v));
                }
            };
            opt(&mut c, "x0", &init.x);
            opt(&mut c, "eta_hat0", &init.eta_hat);
            opt(&mut c, "chi_hat0", &init.chi_hat);
            opt(&mut c, "theta_hat0", &init.theta_hat);
            opt(&mut c, "v_hat0", &init.v_hat);
            if let Some(y) = init.y_hat {
                c.set(&sec, "y_hat0", format!("{y}"));
            }
        }
        c
    }
}

pub fn parse_scenario(text: &str, opts: LoadOptions) -> Result<Scenario, ScenarioError> {
    Scenario::from_config(&Config::parse(text)?, opts)
}

pub fn load_scenario(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, opts)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, scenario.to_config().to_text())
}

/// The five-follower scenario used throughout the examples and tests.
pub const REFERENCE_SCENARIO: &str = include_str!("../../../scenarios/reference.cfg");
