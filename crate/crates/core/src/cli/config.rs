//! Flat sectioned key=value run configuration: sections in square
//! brackets, comma-separated arrays, `#`/`;` comments. Unknown keys are
//! rejected and every default that fills a missing key is echoed into the
//! run manifest.

use crate::continuation::{ContinuationOptions, FoldOptions};
use crate::error::{Error, Result};
use crate::mesh::{build_grid, Grid, GridField};
use crate::model::{CustomTable, NonlinearityFamily, ProblemSpec};
use crate::operator::NewtonOptions;
use crate::quotient::ProbeOptions;
use crate::spectral::EigenOptions;
use crate::sublinear::FixedPointOptions;
use serde::Serialize;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize)]
pub struct GridConfig {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub n_per_axis: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemConfig {
    pub m: usize,
    pub space_dim: usize,
    pub q: Vec<f64>,
    pub gamma: f64,
    pub gamma0: f64,
    pub family: String,
    pub a: Vec<f64>,
    pub a_file: Option<String>,
    pub b: f64,
    pub b_lin: Vec<f64>,
    pub table_file: Option<String>,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub tol_newton: f64,
    pub max_newton_iter: usize,
    pub delta_floor: Option<f64>,
    pub tol_fixed_point: f64,
    pub tol_corrector: f64,
    pub ds0: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub arclength_budget: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub eig_tol: Option<f64>,
    pub eig_max_iter: usize,
    pub stability_tol: Option<f64>,
    pub fold_tol_f: f64,
    pub fold_tol_fv: f64,
    pub probe_trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputConfig {
    pub dir: String,
    pub formats: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub seed: u64,
    pub sweep_n_per_axis: Vec<usize>,
    pub defaults_applied: Vec<String>,
}

struct Entries {
    rows: Vec<(String, String, String)>,
    consumed: Vec<bool>,
    defaults: Vec<String>,
}

impl Entries {
    fn lookup(&mut self, section: &str, key: &str) -> Option<String> {
        for (i, (s, k, v)) in self.rows.iter().enumerate() {
            if s == section && k == key {
                self.consumed[i] = true;
                return Some(v.clone());
            }
        }
        None
    }

    fn take<T, F>(&mut self, section: &str, key: &str, default: T, parse: F) -> Result<T>
    where
        F: Fn(&str) -> Result<T>,
    {
        match self.lookup(section, key) {
            Some(raw) => parse(&raw),
            None => {
                self.defaults.push(format!("{section}.{key}"));
                Ok(default)
            }
        }
    }

    fn take_optional<T, F>(&mut self, section: &str, key: &str, parse: F) -> Result<Option<T>>
    where
        F: Fn(&str) -> Result<T>,
    {
        match self.lookup(section, key) {
            Some(raw) => Ok(Some(parse(&raw)?)),
            None => Ok(None),
        }
    }
}

fn parse_f64(raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("expected a real number, got '{raw}'")))
}

fn parse_usize(raw: &str) -> Result<usize> {
    raw.trim()
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("expected a nonnegative integer, got '{raw}'")))
}

fn parse_u64(raw: &str) -> Result<u64> {
    raw.trim()
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("expected a nonnegative integer, got '{raw}'")))
}

fn parse_f64_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',').map(parse_f64).collect()
}

fn parse_usize_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(parse_usize).collect()
}

fn parse_string(raw: &str) -> Result<String> {
    Ok(raw.trim().to_string())
}

fn parse_string_list(raw: &str) -> Result<Vec<String>> {
    Ok(raw.split(',').map(|s| s.trim().to_string()).collect())
}

const KNOWN_SECTIONS: &[&str] = &["grid", "problem", "solver", "output", "run", "sweep"];

/// Parses and validates a configuration; every model invariant is
/// re-validated here so a broken config fails before any solve starts.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut rows = Vec::new();
    let mut section = String::new();
    let mut seen_sections = BTreeSet::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find(['#', ';']) {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            if !KNOWN_SECTIONS.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "line {}: unknown section [{name}]",
                    lineno + 1
                )));
            }
            seen_sections.insert(name.clone());
            section = name;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        if section.is_empty() {
            return Err(Error::Config(format!(
                "line {}: key '{}' appears before any [section]",
                lineno + 1,
                key.trim()
            )));
        }
        rows.push((
            section.clone(),
            key.trim().to_ascii_lowercase(),
            value.trim().to_string(),
        ));
    }
    let consumed = vec![false; rows.len()];
    let mut e = Entries {
        rows,
        consumed,
        defaults: Vec::new(),
    };

    let dim = e.take("grid", "dim", 1usize, |r| parse_usize(r))?;
    let lengths = e.take("grid", "lengths", vec![1.0; dim.max(1)], |r| {
        parse_f64_list(r)
    })?;
    let n_per_axis = e.take("grid", "n_per_axis", vec![127; dim.max(1)], |r| {
        parse_usize_list(r)
    })?;

    let m = e.take("problem", "m", 1usize, |r| parse_usize(r))?;
    let space_dim = e.take("problem", "space_dim", dim, |r| parse_usize(r))?;
    let q = e.take("problem", "q", vec![0.5; m.max(1)], |r| parse_f64_list(r))?;
    let gamma = e.take("problem", "gamma", 3.0, |r| parse_f64(r))?;
    let gamma0 = e.take("problem", "gamma0", gamma, |r| parse_f64(r))?;
    let family = e.take(
        "problem",
        "family",
        if m == 1 {
            "scalar-power".to_string()
        } else {
            "power-coupled".to_string()
        },
        |r| parse_string(r).map(|s| s.to_ascii_lowercase()),
    )?;
    let a = e.take("problem", "a", vec![1.0; m.max(1)], |r| parse_f64_list(r))?;
    let a_file = e.take_optional("problem", "a_file", parse_string)?;
    let b = e.take("problem", "b", 1.0, |r| parse_f64(r))?;
    let b_lin = e.take("problem", "b_lin", vec![0.0; m.max(1)], |r| {
        parse_f64_list(r)
    })?;
    let table_file = e.take_optional("problem", "table_file", parse_string)?;
    let default_c2 = (0.45 * (gamma - 1.0) * b).max(1e-8);
    let c0 = e.take("problem", "c0", 1.0f64.max(b_lin.iter().cloned().fold(0.0, f64::max)), |r| parse_f64(r))?;
    let c1 = e.take("problem", "c1", b.max(1.0), |r| parse_f64(r))?;
    let c2 = e.take("problem", "c2", default_c2, |r| parse_f64(r))?;
    let c3 = e.take("problem", "c3", default_c2, |r| parse_f64(r))?;

    let tol_newton = e.take("solver", "tol_newton", 1e-11, |r| parse_f64(r))?;
    let max_newton_iter = e.take("solver", "max_newton_iter", 50usize, |r| parse_usize(r))?;
    let delta_floor = e.take_optional("solver", "delta_floor", parse_f64)?;
    let tol_fixed_point = e.take("solver", "tol_fixed_point", 1e-12, |r| parse_f64(r))?;
    let tol_corrector = e.take("solver", "tol_corrector", 1e-11, |r| parse_f64(r))?;
    let ds0 = e.take("solver", "ds0", 0.05, |r| parse_f64(r))?;
    let ds_max = e.take("solver", "ds_max", 0.5, |r| parse_f64(r))?;
    let max_steps = e.take("solver", "max_steps", 500usize, |r| parse_usize(r))?;
    let arclength_budget = e.take("solver", "arclength_budget", 40.0, |r| parse_f64(r))?;
    let lambda_min = e.take("solver", "lambda_min", 0.0, |r| parse_f64(r))?;
    let lambda_max = e.take("solver", "lambda_max", 1e12, |r| parse_f64(r))?;
    let eig_tol = e.take_optional("solver", "eig_tol", parse_f64)?;
    let eig_max_iter = e.take("solver", "eig_max_iter", 400usize, |r| parse_usize(r))?;
    let stability_tol = e.take_optional("solver", "stability_tol", parse_f64)?;
    let fold_tol_f = e.take("solver", "fold_tol_f", 1e-11, |r| parse_f64(r))?;
    let fold_tol_fv = e.take("solver", "fold_tol_fv", 1e-9, |r| parse_f64(r))?;
    let probe_trials = e.take("solver", "probe_trials", 100usize, |r| parse_usize(r))?;

    let dir = e.take("output", "dir", "out".to_string(), parse_string)?;
    let formats = e.take(
        "output",
        "formats",
        vec!["csv".to_string(), "json".to_string()],
        parse_string_list,
    )?;
    for f in &formats {
        if f != "csv" && f != "json" {
            return Err(Error::Config(format!(
                "unknown output format '{f}' (expected csv and/or json)"
            )));
        }
    }

    let seed = e.take("run", "seed", 42u64, |r| parse_u64(r))?;
    let sweep_n = if seen_sections.contains("sweep") {
        e.take("sweep", "n_per_axis", Vec::new(), |r| parse_usize_list(r))?
    } else {
        Vec::new()
    };

    // unknown keys are rejected
    for (i, (s, k, _)) in e.rows.iter().enumerate() {
        if !e.consumed[i] {
            return Err(Error::Config(format!("unknown key '{k}' in section [{s}]")));
        }
    }

    let config = RunConfig {
        grid: GridConfig {
            dim,
            lengths,
            n_per_axis,
        },
        problem: ProblemConfig {
            m,
            space_dim,
            q,
            gamma,
            gamma0,
            family,
            a,
            a_file,
            b,
            b_lin,
            table_file,
            c0,
            c1,
            c2,
            c3,
        },
        solver: SolverConfig {
            tol_newton,
            max_newton_iter,
            delta_floor,
            tol_fixed_point,
            tol_corrector,
            ds0,
            ds_max,
            max_steps,
            arclength_budget,
            lambda_min,
            lambda_max,
            eig_tol,
            eig_max_iter,
            stability_tol,
            fold_tol_f,
            fold_tol_fv,
            probe_trials,
        },
        output: OutputConfig { dir, formats },
        seed,
        sweep_n_per_axis: sweep_n,
        defaults_applied: e.defaults,
    };
    // validate the model invariants now; broken configs must fail at load
    let grid = config.build_grid()?;
    config.build_problem(&grid)?;
    Ok(config)
}

impl RunConfig {
    pub fn build_grid(&self) -> Result<Grid> {
        build_grid(self.grid.dim, &self.grid.lengths, &self.grid.n_per_axis)
    }

    /// Grid with the interior node counts replaced (used by sweeps).
    pub fn build_grid_with_n(&self, n: &[usize]) -> Result<Grid> {
        build_grid(self.grid.dim, &self.grid.lengths, n)
    }

    pub fn build_problem(&self, grid: &Grid) -> Result<ProblemSpec> {
        let p = &self.problem;
        let n = grid.n_nodes();
        let a_fields: Vec<GridField> = match &p.a_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|err| {
                    Error::Config(format!("cannot read a_file '{path}': {err}"))
                })?;
                read_columns_csv(&text, p.m, n)?
            }
            None => {
                let consts = broadcast(&p.a, p.m, "problem.a")?;
                consts
                    .iter()
                    .map(|&c| GridField::constant(n, c))
                    .collect()
            }
        };
        let family = match p.family.as_str() {
            "scalar-power" => NonlinearityFamily::ScalarPower {
                b: GridField::constant(n, p.b),
            },
            "power-coupled" => NonlinearityFamily::PowerCoupled {
                b_lin: broadcast(&p.b_lin, p.m, "problem.b_lin")?
                    .iter()
                    .map(|&c| GridField::constant(n, c))
                    .collect(),
                b_pow: GridField::constant(n, p.b),
            },
            "custom-table" => {
                let path = p.table_file.as_ref().ok_or_else(|| {
                    Error::Config("custom-table family needs problem.table_file".into())
                })?;
                let text = std::fs::read_to_string(path).map_err(|err| {
                    Error::Config(format!("cannot read table_file '{path}': {err}"))
                })?;
                NonlinearityFamily::CustomTable(read_table_csv(&text)?)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown family '{other}' (expected scalar-power, power-coupled or custom-table)"
                )))
            }
        };
        let q = broadcast(&p.q, p.m, "problem.q")?;
        ProblemSpec::new(
            p.m,
            p.space_dim,
            q,
            a_fields,
            family,
            p.gamma,
            p.gamma0,
            (p.c0, p.c1),
            (p.c2, p.c3),
        )
        .map_err(|err| Error::Config(err.to_string()))
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.solver.tol_newton,
            max_iter: self.solver.max_newton_iter,
            delta_floor: self.solver.delta_floor,
            max_backtracks: 40,
        }
    }

    pub fn fixed_point_options(&self) -> FixedPointOptions {
        FixedPointOptions {
            tol: self.solver.tol_fixed_point,
            ..Default::default()
        }
    }

    pub fn eig_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.solver.eig_tol,
            max_iter: self.solver.eig_max_iter,
        }
    }

    pub fn continuation_options(&self) -> ContinuationOptions {
        ContinuationOptions {
            ds0: self.solver.ds0,
            ds_max: self.solver.ds_max,
            max_steps: self.solver.max_steps,
            arclength_budget: self.solver.arclength_budget,
            lambda_min: self.solver.lambda_min,
            lambda_max: self.solver.lambda_max,
            corrector_tol: self.solver.tol_corrector,
            delta_floor: self.solver.delta_floor,
            eig: self.eig_options(),
            stability_tol: self.solver.stability_tol,
            ..Default::default()
        }
    }

    pub fn fold_options(&self) -> FoldOptions {
        FoldOptions {
            tol_f: self.solver.fold_tol_f,
            tol_fv: self.solver.fold_tol_fv,
            delta_floor: self.solver.delta_floor,
            eig: self.eig_options(),
            ..Default::default()
        }
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions {
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn broadcast(values: &[f64], m: usize, what: &str) -> Result<Vec<f64>> {
    if values.len() == m {
        Ok(values.to_vec())
    } else if values.len() == 1 {
        Ok(vec![values[0]; m])
    } else {
        Err(Error::Config(format!(
            "{what} needs 1 or {m} entries, got {}",
            values.len()
        )))
    }
}

/// CSV with one row per node and one column per component (no header).
fn read_columns_csv(text: &str, m: usize, n: usize) -> Result<Vec<GridField>> {
    let mut fields = vec![GridField::zeros(n); m];
    let mut row = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if row >= n {
            return Err(Error::Config(format!("coefficient table has more than {n} rows")));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != m {
            return Err(Error::Config(format!(
                "coefficient table row {row} has {} columns, need {m}",
                cols.len()
            )));
        }
        for (i, c) in cols.iter().enumerate() {
            fields[i].0[row] = parse_f64(c)?;
        }
        row += 1;
    }
    if row != n {
        return Err(Error::Config(format!(
            "coefficient table has {row} rows, grid has {n} nodes"
        )));
    }
    Ok(fields)
}

/// CSV with rows t,g,dg (header line optional).
fn read_table_csv(text: &str) -> Result<CustomTable> {
    let mut t = Vec::new();
    let mut g = Vec::new();
    let mut dg = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(|c: char| c.is_alphabetic()) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Config(format!(
                "table rows need t,g,dg; got '{line}'"
            )));
        }
        t.push(parse_f64(cols[0])?);
        g.push(parse_f64(cols[1])?);
        dg.push(parse_f64(cols[2])?);
    }
    CustomTable::new(t, g, dg, 0.2).map_err(|err| Error::Config(err.to_string()))
}
