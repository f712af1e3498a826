//! Plain-text CSV emission and parsing of states, trajectories and logs.
//!
//! Every file starts with `# key: value` comment lines, then one line of
//! column names, then data. Floats are written with 17 significant digits
//! so that reading a file back reproduces the values bit for bit.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid, WaveFunction};
use crate::optimize::IterationRecord;
use crate::potential::ControlTrajectory;

/// `# key: value` lines written at the top of each file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}: {v}")?;
        }
        Ok(())
    }
}

#[inline]
fn f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parsed numeric table with its header comments and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a file written by this module (or any comma-separated numeric
/// table with optional `#` comments and one line of column names).
pub fn read_table(r: impl BufRead) -> Result<Table> {
    let mut header = Header::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            if let Some((k, v)) = c.split_once(':') {
                header = header.with(k.trim(), v.trim());
            }
            continue;
        }
        let cells: Vec<&str> = t.split(',').map(str::trim).collect();
        if columns.is_none() {
            columns = Some(cells.iter().map(|s| s.to_string()).collect());
            continue;
        }
        let width = columns.as_ref().map_or(0, Vec::len);
        if cells.len() != width {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {width} fields, found {}", cells.len()),
            });
        }
        let row = cells
            .iter()
            .map(|c| {
                c.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("{c:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let columns = columns.ok_or(Error::Parse {
        line: 0,
        message: "no column header found".into(),
    })?;
    Ok(Table { header, columns, rows })
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing column {name:?}"),
        })?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Columns `z, re, im, density`.
pub fn write_wavefunction(w: &mut impl Write, header: &Header, grid: &SpatialGrid, psi: &WaveFunction) -> Result<()> {
    crate::grid::check_len(grid.len(), psi.len())?;
    header.write_to(w)?;
    writeln!(w, "z,re,im,density")?;
    for (z, v) in grid.coords().iter().zip(psi.values()) {
        writeln!(w, "{},{},{},{}", f(*z), f(v.re), f(v.im), f(v.norm_sqr()))?;
    }
    Ok(())
}

/// Returns the `z` column and the state.
pub fn read_wavefunction(r: impl BufRead) -> Result<(Vec<f64>, WaveFunction)> {
    let t = read_table(r)?;
    let z = t.column("z")?;
    let re = t.column("re")?;
    let im = t.column("im")?;
    let psi = WaveFunction::new(re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect())?;
    Ok((z, psi))
}

/// Columns `t, lambda`.
pub fn write_trajectory(
    w: &mut impl Write,
    header: &Header,
    time_grid: &TimeGrid,
    control: &ControlTrajectory,
) -> Result<()> {
    control.check_grid(time_grid)?;
    header.write_to(w)?;
    writeln!(w, "t,lambda")?;
    for (n, l) in control.samples().iter().enumerate() {
        writeln!(w, "{},{}", f(time_grid.time(n)), f(*l))?;
    }
    Ok(())
}

/// Returns the time column and the trajectory.
pub fn read_trajectory(r: impl BufRead) -> Result<(Vec<f64>, ControlTrajectory)> {
    let t = read_table(r)?;
    let times = t.column("t")?;
    let lam = t.column("lambda")?;
    Ok((times, ControlTrajectory::new(lam)?))
}

/// Density carpet: first row is `z`, first column is `t`.
pub fn write_density_carpet(
    w: &mut impl Write,
    header: &Header,
    grid: &SpatialGrid,
    times: &[f64],
    states: &[WaveFunction],
) -> Result<()> {
    crate::grid::check_len(times.len(), states.len())?;
    header.write_to(w)?;
    let mut line = String::from("t\\z");
    for z in grid.coords() {
        line.push(',');
        line.push_str(&f(*z));
    }
    writeln!(w, "{line}")?;
    for (t, psi) in times.iter().zip(states) {
        crate::grid::check_len(grid.len(), psi.len())?;
        line.clear();
        line.push_str(&f(*t));
        for v in psi.values() {
            line.push(',');
            line.push_str(&f(v.norm_sqr()));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub const CONVERGENCE_COLUMNS: &str = "iteration,cost,grad_norm,step,wall_time,cost_evaluations,gradient_evaluations";

pub fn write_convergence_log(w: &mut impl Write, header: &Header, records: &[IterationRecord]) -> Result<()> {
    header.write_to(w)?;
    writeln!(w, "{CONVERGENCE_COLUMNS}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iteration,
            f(r.cost),
            f(r.grad_norm),
            f(r.step),
            f(r.wall_time),
            r.cost_evaluations,
            r.gradient_evaluations
        )?;
    }
    Ok(())
}

/// Generic numeric table with the given column names.
pub fn write_columns(w: &mut impl Write, header: &Header, names: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    header.write_to(w)?;
    writeln!(w, "{}", names.join(","))?;
    for r in rows {
        crate::grid::check_len(names.len(), r.len())?;
        let cells: Vec<String> = r.iter().map(|v| f(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Columns `t, state_error`.
pub fn write_error_evolution(w: &mut impl Write, header: &Header, samples: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|(t, e)| vec![*t, *e]).collect();
    write_columns(w, header, &["t", "state_error"], &rows)
}
