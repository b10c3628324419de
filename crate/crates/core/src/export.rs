//! Long-format trajectory CSV: one row per (sample, agent).

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::sim::{AgentSeries, FullStateSeries, TrackingErrors};

/// Formats like C's `%.9g`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("empty file")]
    Empty,
    #[error("unexpected header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

pub fn header(l: usize, r: usize, full_state: bool) -> Vec<String> {
    let mut h: Vec<String> = ["t", "agent", "y", "e", "yhat", "ytilde", "u"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=l).map(|k| format!("theta_hat_{k}")));
    h.push("theta_err".into());
    h.extend((1..=l).map(|k| format!("omega_hat_{k}")));
    h.push("vtilde_norm".into());
    if full_state {
        h.extend((1..=r).map(|k| format!("x_{k}")));
        h.extend((1..=2 * l - 1).map(|k| format!("eta_hat_{k}")));
        h.extend((1..=2 * l - 1).map(|k| format!("chi_hat_{k}")));
        h.extend((1..=2 * l).map(|k| format!("v_hat_{k}")));
    }
    h
}

/// Writes the trajectory. Full-state columns are appended when requested
/// and available.
pub fn write_csv<W: Write>(te: &TrackingErrors, mut w: W, full_state: bool) -> io::Result<()> {
    let full_state = full_state && te.has_full_state();
    writeln!(w, "{}", header(te.l, te.r, full_state).join(","))?;
    let mut line = String::new();
    for (k, &t) in te.times.iter().enumerate() {
        for (i, a) in te.agents.iter().enumerate() {
            line.clear();
            line.push_str(&fmt_g9(t));
            line.push_str(&format!(",{}", i + 1));
            let mut push = |v: f64| {
                line.push(',');
                line.push_str(&fmt_g9(v));
            };
            for v in [a.y[k], a.e[k], a.y_hat[k], a.y_tilde[k], a.u[k]] {
                push(v);
            }
            a.theta_hat[k].iter().for_each(|&v| push(v));
            push(a.theta_err[k]);
            a.omega_hat[k].iter().for_each(|&v| push(v));
            push(a.vtilde_norm[k]);
            if let (true, Some(f)) = (full_state, &a.full) {
                for block in [&f.x[k], &f.eta_hat[k], &f.chi_hat[k], &f.v_hat[k]] {
                    block.iter().for_each(|&v| push(v));
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

/// Reads a file produced by [`write_csv`].
pub fn read_csv<R: BufRead>(reader: R) -> Result<TrackingErrors, CsvError> {
    let mut lines = reader.lines();
    let head = lines.next().ok_or(CsvError::Empty)??;
    let cols: Vec<&str> = head.trim().split(',').collect();
    let l = cols.iter().filter(|c| c.starts_with("theta_hat_")).count();
    let r = cols.iter().filter(|c| c.starts_with("x_")).count();
    let full = r > 0;
    if l == 0 || cols != header(l, r, full) {
        return Err(CsvError::Header(head));
    }

    let mut times: Vec<f64> = Vec::new();
    let mut agents: Vec<AgentSeries> = Vec::new();
    let mut expected_agent = 1usize;
    let mut n_agents: Option<usize> = None;
    for (idx, row) in lines.enumerate() {
        let line_no = idx + 2;
        let row = row?;
        if row.trim().is_empty() {
            continue;
        }
        let err = |message: String| CsvError::Row {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let agent: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("bad agent index `{}`", fields[1])))?;
        let vals = fields
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != 1)
            .map(|(_, f)| f.parse::<f64>().map_err(|_| err(format!("`{f}` is not a number"))))
            .collect::<Result<Vec<f64>, _>>()?;
        let t = vals[0];

        if agent == 1 {
            if let Some(&prev) = times.last() {
                if n_agents.is_none() {
                    n_agents = Some(expected_agent - 1);
                }
                if expected_agent - 1 != n_agents.unwrap() {
                    return Err(err("incomplete sample block".into()));
                }
                if !(t > prev) {
                    return Err(err("times must increase".into()));
                }
            }
            times.push(t);
        } else if agent != expected_agent || times.last() != Some(&t) {
            return Err(err(format!("expected agent {expected_agent} at t = {t}")));
        }
        if n_agents.is_some_and(|n| agent > n) {
            return Err(err(format!("agent {agent} beyond the first block")));
        }
        expected_agent = agent + 1;
        if agents.len() < agent {
            agents.push(AgentSeries {
                full: full.then(FullStateSeries::default),
                ..Default::default()
            });
        }
        let a = &mut agents[agent - 1];
        let mut it = vals[1..].iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let base = take(5);
        a.y.push(base[0]);
        a.e.push(base[1]);
        a.y_hat.push(base[2]);
        a.y_tilde.push(base[3]);
        a.u.push(base[4]);
        a.theta_hat.push(take(l));
        a.theta_err.push(take(1)[0]);
        a.omega_hat.push(take(l));
        a.vtilde_norm.push(take(1)[0]);
        if let Some(f) = a.full.as_mut() {
            f.x.push(take(r));
            f.eta_hat.push(take(2 * l - 1));
            f.chi_hat.push(take(2 * l - 1));
            f.v_hat.push(take(2 * l));
        }
    }
    if times.is_empty() {
        return Err(CsvError::Empty);
    }
    if let Some(n) = n_agents {
        if expected_agent - 1 != n {
            return Err(CsvError::Row {
                line: 0,
                message: "file ends inside a sample block".into(),
            });
        }
    }
    Ok(TrackingErrors {
        l,
        r,
        times,
        agents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_c_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1e-5, "1e-05"),
            (1.5e-4, "0.00015"),
            (2.0f64.sqrt() * 1e-7, "1.41421356e-07"),
            (9.9999999996, "10"),
            (45.0857, "45.0857"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g9(x), want, "{x}");
        }
    }

    #[test]
    fn header_layout() {
        let h = header(2, 2, false).join(",");
        assert_eq!(
            h,
            "t,agent,y,e,yhat,ytilde,u,theta_hat_1,theta_hat_2,theta_err,omega_hat_1,omega_hat_2,vtilde_norm"
        );
        assert_eq!(header(2, 2, true).len(), 13 + 2 + 3 + 3 + 4);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(read_csv("".as_bytes()), Err(CsvError::Empty)));
        assert!(matches!(read_csv("a,b\n".as_bytes()), Err(CsvError::Header(_))));
        let h = header(1, 1, false).join(",");
        let text = format!("{h}\n0,1,1,2,3,4,5,6,7,8\n");
        assert!(matches!(read_csv(text.as_bytes()), Err(CsvError::Row { line: 2, .. })));
    }
}
