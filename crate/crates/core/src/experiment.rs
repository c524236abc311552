//! Named (β, ρ, bequest) cells, their runs, and side-by-side outputs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::dp::{backward_solve, Problem, Solution};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::merton::merton_solve;
use crate::sim::{
    calibrate_bequest, simulate_paths, wealth_parametrize, write_curve_csv, write_ensemble_csv,
    write_paths_csv, EnsembleStats, MertonPolicy, Policy, SimPath,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BequestMode {
    Zero,
    Fixed(f64),
    /// Chosen so that expected terminal wealth matches the calibration target.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub name: String,
    pub beta: f64,
    pub rho: f64,
    pub bequest: BequestMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentMatrix {
    pub cells: Vec<Cell>,
}

impl ExperimentMatrix {
    /// β ∈ {0, 0.1, 1} × ρ ∈ {0, 10%} × {no bequest, calibrated bequest}.
    pub fn baseline() -> Self {
        let mut cells = Vec::new();
        for bequest in [BequestMode::Zero, BequestMode::Calibrated] {
            for rho in [0.0, 0.10] {
                for beta in [0.0, 0.1, 1.0] {
                    let tag = match bequest {
                        BequestMode::Calibrated => "calibrated",
                        _ => "zero",
                    };
                    cells.push(Cell {
                        name: format!("beta{beta}_rho{}_{tag}", (rho * 100.0f64).round()),
                        beta,
                        rho,
                        bequest,
                    });
                }
            }
        }
        Self { cells }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::invalid("experiment.cells", "must not be empty"));
        }
        let mut seen = HashSet::new();
        for (k, c) in self.cells.iter().enumerate() {
            let field = |f: &str| format!("experiment.cells[{k}].{f}");
            let safe = c
                .name
                .chars()
                .all(|ch| ch.is_ascii_alphanumeric() || "_-.".contains(ch));
            if c.name.is_empty() || !safe || c.name.starts_with('.') {
                return Err(Error::invalid(
                    field("name"),
                    "use letters, digits, '_', '-' or '.', not starting with '.'",
                ));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::invalid(field("name"), format!("duplicate {:?}", c.name)));
            }
            if !(c.beta.is_finite() && c.beta >= 0.0) {
                return Err(Error::invalid(field("beta"), "must be finite and >= 0"));
            }
            if !c.rho.is_finite() {
                return Err(Error::invalid(field("rho"), "must be finite"));
            }
            if let BequestMode::Fixed(b) = c.bequest {
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::invalid(field("bequest"), "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// The configured problem with a cell's β, ρ and bequest weight.
pub fn cell_problem(cfg: &RunConfig, cell: &Cell, bequest_b: f64) -> Problem {
    let mut prefs = cfg.prefs;
    prefs.beta = cell.beta;
    prefs.rho = cell.rho;
    prefs.bequest_b = bequest_b;
    Problem::new(cfg.market, prefs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub b: f64,
    pub expected_terminal_wealth: f64,
    pub target: f64,
    pub trials: Vec<(f64, f64)>,
}

/// Forward results for one policy: ensemble statistics plus the first few
/// individual paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub stats: EnsembleStats,
    pub sample_paths: Vec<SimPath>,
}

pub fn simulate_run(cfg: &RunConfig, policy: &dyn Policy, problem: &Problem) -> Result<SimulationRun> {
    let sim = &cfg.simulation;
    let mut paths = simulate_paths(policy, problem, sim.n_paths, sim.master_seed)?;
    let stats = EnsembleStats::from_paths(&paths, sim.master_seed);
    paths.truncate(sim.paths_written);
    Ok(SimulationRun {
        stats,
        sample_paths: paths,
    })
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: Cell,
    pub bequest_b: f64,
    pub calibration: Option<CalibrationSummary>,
    pub run: SimulationRun,
}

/// Solves and simulates one cell, calibrating the bequest weight first if
/// the cell asks for it. Returns the solution alongside the run.
pub fn run_cell(cfg: &RunConfig, cell: &Cell) -> Result<(CellRun, Solution)> {
    let (b, calibration, solution) = match cell.bequest {
        BequestMode::Zero | BequestMode::Fixed(_) => {
            let b = match cell.bequest {
                BequestMode::Fixed(b) => b,
                _ => 0.0,
            };
            let sol = backward_solve(&cell_problem(cfg, cell, b), &cfg.grid, &cfg.solver)?;
            (b, None, sol)
        }
        BequestMode::Calibrated => {
            let cal = calibrate_bequest(
                &cell_problem(cfg, cell, 0.0),
                &cfg.grid,
                &cfg.solver,
                cfg.simulation.n_paths,
                cfg.simulation.master_seed,
                cfg.calibration_target,
            )?;
            let summary = CalibrationSummary {
                b: cal.b,
                expected_terminal_wealth: cal.expected_terminal_wealth,
                target: cal.target,
                trials: cal.trials,
            };
            (cal.b, Some(summary), cal.solution)
        }
    };
    let problem = cell_problem(cfg, cell, b);
    let run = simulate_run(cfg, &solution.policy, &problem)?;
    Ok((
        CellRun {
            cell: cell.clone(),
            bequest_b: b,
            calibration,
            run,
        },
        solution,
    ))
}

pub fn run_matrix(cfg: &RunConfig) -> Result<Vec<CellRun>> {
    cfg.experiment
        .cells
        .iter()
        .map(|c| run_cell(cfg, c).map(|(run, _)| run))
        .collect()
}

/// Creates parent directories, buffers, and maps failures to [`Error::Io`].
pub fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// `ensemble.csv`, `curve.csv` and `paths.csv` in `dir`.
pub fn write_simulation(dir: &Path, run: &SimulationRun) -> Result<Vec<PathBuf>> {
    let curve = wealth_parametrize(&run.stats);
    Ok(vec![
        write_file(&dir.join("ensemble.csv"), |o| write_ensemble_csv(&run.stats, o))?,
        write_file(&dir.join("curve.csv"), |o| write_curve_csv(&curve, o))?,
        write_file(&dir.join("paths.csv"), |o| write_paths_csv(&run.sample_paths, o))?,
    ])
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<PathBuf> {
    write_file(path, |o| {
        serde_json::to_writer_pretty(&mut *o, value).map_err(std::io::Error::other)?;
        writeln!(o)
    })
}

#[derive(Serialize)]
struct CellSummary<'a> {
    cell: &'a Cell,
    bequest_b: f64,
    calibration: &'a Option<CalibrationSummary>,
    terminal_mean_wealth: f64,
    min_wealth: f64,
    negative_wealth: usize,
    escape_fraction: f64,
}

pub fn write_cell(dir: &Path, run: &CellRun) -> Result<Vec<PathBuf>> {
    let mut files = write_simulation(dir, &run.run)?;
    let stats = &run.run.stats;
    files.push(write_json(
        &dir.join("summary.json"),
        &CellSummary {
            cell: &run.cell,
            bequest_b: run.bequest_b,
            calibration: &run.calibration,
            terminal_mean_wealth: stats.terminal_mean_wealth(),
            min_wealth: stats.min_wealth,
            negative_wealth: stats.negative_wealth,
            escape_fraction: stats.escapes.fraction(),
        },
    )?);
    Ok(files)
}

type Column = (String, Vec<Option<f64>>);

fn write_columns(path: &Path, t: &[f64], columns: &[Column]) -> Result<PathBuf> {
    write_file(path, |o| {
        write!(o, "step,t")?;
        for (name, _) in columns {
            write!(o, ",{name}")?;
        }
        writeln!(o)?;
        for (k, &tk) in t.iter().enumerate() {
            write!(o, "{},{}", k + 1, fmt_f64(tk))?;
            for (_, col) in columns {
                let v = col.get(k).copied().flatten();
                write!(o, ",{}", v.map(fmt_f64).unwrap_or_default())?;
            }
            writeln!(o)?;
        }
        Ok(())
    })
}

/// Closed-form Merton ensembles on the same seeds, one per distinct ρ in
/// the matrix, keyed by column name.
fn merton_references(cfg: &RunConfig) -> Result<BTreeMap<String, SimulationRun>> {
    let mut out = BTreeMap::new();
    for cell in &cfg.experiment.cells {
        let name = format!("merton_rho{}", cell.rho);
        if out.contains_key(&name) {
            continue;
        }
        let mut c = cell.clone();
        c.beta = 0.0;
        let problem = cell_problem(cfg, &c, 0.0);
        let policy = MertonPolicy {
            solution: merton_solve(&problem.market, &problem.prefs),
            horizon: problem.prefs.horizon,
            n_steps: cfg.grid.n_steps,
        };
        out.insert(name, simulate_run(cfg, &policy, &problem)?);
    }
    Ok(out)
}

/// Per-cell folders plus one CSV per series with a column per cell and per
/// closed-form reference.
pub fn write_comparison(dir: &Path, cfg: &RunConfig, runs: &[CellRun]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for r in runs {
        files.extend(write_cell(&dir.join("cells").join(&r.cell.name), r)?);
    }
    let Some(first) = runs.first() else {
        return Ok(files);
    };
    let t: Vec<f64> = first.run.stats.steps.iter().map(|s| s.t).collect();
    let references = merton_references(cfg)?;
    let series: Vec<(&str, &SimulationRun)> = runs
        .iter()
        .map(|r| (r.cell.name.as_str(), &r.run))
        .chain(references.iter().map(|(k, v)| (k.as_str(), v)))
        .collect();

    type Extract = fn(&SimulationRun) -> Vec<Option<f64>>;
    let tables: [(&str, Extract); 6] = [
        ("mean_C", |r| r.stats.steps.iter().map(|s| s.mean_c).collect()),
        ("mean_omega", |r| r.stats.steps.iter().map(|s| s.mean_omega).collect()),
        ("mean_W", |r| r.stats.steps.iter().map(|s| Some(s.mean_w)).collect()),
        ("sensitivity_C", |r| {
            r.stats
                .steps
                .iter()
                .map(|s| match (s.mean_c, s.std_c) {
                    (Some(m), Some(sd)) if m > 0.0 => Some(sd / m),
                    (Some(_), Some(_)) => Some(0.0),
                    _ => None,
                })
                .collect()
        }),
        ("path0_C", |r| match r.sample_paths.first() {
            Some(p) => p.steps.iter().map(|s| s.c).collect(),
            None => Vec::new(),
        }),
        ("path0_omega", |r| match r.sample_paths.first() {
            Some(p) => p.steps.iter().map(|s| s.omega).collect(),
            None => Vec::new(),
        }),
    ];
    for (name, extract) in tables {
        let columns: Vec<Column> = series
            .iter()
            .map(|(n, r)| (n.to_string(), extract(r)))
            .collect();
        files.push(write_columns(&dir.join(format!("compare_{name}.csv")), &t, &columns)?);
    }

    files.push(write_file(&dir.join("compare_curves.csv"), |o| {
        writeln!(o, "series,t,E_W,E_C,E_omega,monotone_flag")?;
        for (n, r) in &series {
            let curve = wealth_parametrize(&r.stats);
            for p in &curve.points {
                writeln!(
                    o,
                    "{n},{},{},{},{},{}",
                    fmt_f64(p.t),
                    fmt_f64(p.e_w),
                    fmt_f64(p.e_c),
                    fmt_f64(p.e_omega),
                    curve.monotone as u8
                )?;
            }
        }
        Ok(())
    })?);

    files.push(write_file(&dir.join("compare_bequest.csv"), |o| {
        writeln!(o, "cell,beta,rho,bequest_b,E_W_T,target,trials")?;
        for r in runs {
            let (target, trials) = r
                .calibration
                .as_ref()
                .map_or((String::new(), 0), |c| (fmt_f64(c.target), c.trials.len()));
            writeln!(
                o,
                "{},{},{},{},{},{target},{trials}",
                r.cell.name,
                fmt_f64(r.cell.beta),
                fmt_f64(r.cell.rho),
                fmt_f64(r.bequest_b),
                fmt_f64(r.run.stats.terminal_mean_wealth())
            )?;
        }
        Ok(())
    })?);

    files.push(write_file(&dir.join("plot.py"), |o| o.write_all(PLOT_STUB.as_bytes()))?);
    Ok(files)
}

/// Plotting script written next to the comparison CSVs.
pub const PLOT_STUB: &str = r#"#!/usr/bin/env python3
"""Plots the comparison CSVs in this directory. Needs pandas and matplotlib."""
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent

for name, label in [
    ("mean_C", "E[C]"),
    ("mean_omega", "E[omega]"),
    ("mean_W", "E[W]"),
    ("sensitivity_C", "std(C) / E[C]"),
    ("path0_C", "C, first path"),
    ("path0_omega", "omega, first path"),
]:
    df = pd.read_csv(here / f"compare_{name}.csv")
    ax = df.drop(columns=["step"]).plot(x="t", figsize=(8, 5))
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    ax.figure.savefig(here / f"{name}.png", dpi=120)
    plt.close(ax.figure)

curves = pd.read_csv(here / "compare_curves.csv")
for y, label in [("E_C", "E[C]"), ("E_omega", "E[omega]")]:
    fig, ax = plt.subplots(figsize=(8, 5))
    for series, g in curves.groupby("series"):
        ax.plot(g["E_W"], g[y], label=series)
    ax.set_xlabel("E[W]")
    ax.set_ylabel(label)
    ax.legend(fontsize=7)
    fig.savefig(here / f"curve_{y}.png", dpi=120)
    plt.close(fig)
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn baseline_matrix_shape() {
        let m = ExperimentMatrix::baseline();
        assert_eq!(m.cells.len(), 12);
        m.validate().unwrap();
        assert_eq!(m.cells[0].name, "beta0_rho0_zero");
        assert_eq!(m.cells[11].name, "beta1_rho10_calibrated");
        assert_eq!(
            m.cells.iter().filter(|c| c.bequest == BequestMode::Calibrated).count(),
            6
        );
    }

    #[test]
    fn rejects_bad_cells() {
        let cell = |name: &str| Cell {
            name: name.into(),
            beta: 0.0,
            rho: 0.0,
            bequest: BequestMode::Zero,
        };
        for cells in [
            vec![cell("a"), cell("a")],
            vec![cell("../x")],
            vec![cell("")],
            vec![Cell {
                bequest: BequestMode::Fixed(-1.0),
                ..cell("a")
            }],
        ] {
            assert!(ExperimentMatrix { cells }.validate().is_err());
        }
    }

    fn tiny() -> RunConfig {
        parse_config(
            r#"
            grid.n_steps = 6
            grid.w_nodes = 15
            grid.cbar_nodes = 7
            simulation.n_paths = 16
            simulation.paths_written = 2
            experiment.cells = [
              { name = "merton", beta = 0.0, rho = 0.1 },
              { name = "habit", beta = 1.0, rho = 0.1, bequest = 0.5 },
            ]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn comparison_matches_individual_cells() {
        let cfg = tiny();
        let runs = run_matrix(&cfg).unwrap();
        assert_eq!(runs[1].bequest_b, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let files = write_comparison(dir.path(), &cfg, &runs).unwrap();
        assert!(files.iter().all(|f| f.exists()));

        let (alone, _) = run_cell(&cfg, &cfg.experiment.cells[1]).unwrap();
        let solo = tempfile::tempdir().unwrap();
        write_cell(solo.path(), &alone).unwrap();
        for f in ["ensemble.csv", "curve.csv", "paths.csv", "summary.json"] {
            assert_eq!(
                fs::read(dir.path().join("cells/habit").join(f)).unwrap(),
                fs::read(solo.path().join(f)).unwrap(),
                "{f}"
            );
        }

        let text = fs::read_to_string(dir.path().join("compare_mean_C.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,t,merton,habit,merton_rho0.1"));
        assert_eq!(text.lines().count(), 1 + 7);
        assert!(text.lines().last().unwrap().ends_with(",,,"));
    }
}
