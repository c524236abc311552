//! Run configuration: a flat TOML file of dotted keys.
//!
//! ```toml
//! market.mu = 0.05
//! preferences.rho = 0.0
//! preferences.T = 10
//! grid.w_nodes = 121
//! simulation.master_seed = 7
//! experiment.cells = [
//!   { name = "habit", beta = 1.0, rho = 0.1, bequest = "calibrated" },
//! ]
//! ```
//!
//! Every key is optional. Missing keys take the baseline values; `c0` and
//! the grid bounds follow `w0` and `T` unless set explicitly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::{GridSpec, HabitSpacing, OptimizerSpec, SolverOptions, WealthSpacing};
use crate::error::{Error, Result};
use crate::experiment::{BequestMode, Cell, ExperimentMatrix};
use crate::model::{MarketParams, Preferences};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    /// Number of individual paths written to `paths.csv`.
    pub paths_written: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            master_seed: 20_240_501,
            paths_written: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub market: MarketParams,
    pub prefs: Preferences,
    pub grid: GridSpec,
    pub solver: SolverOptions,
    pub simulation: SimulationConfig,
    /// Expected terminal wealth sought by bequest calibration.
    pub calibration_target: f64,
    pub output_dir: PathBuf,
    pub experiment: ExperimentMatrix,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.prefs.validate()?;
        self.grid.validate()?;
        if !(1..=200).contains(&self.solver.quadrature_nodes) {
            return Err(Error::invalid("quadrature.nodes", "must be in 1..=200"));
        }
        self.solver.optimizer.validate()?;
        if self.simulation.n_paths == 0 {
            return Err(Error::invalid("simulation.n_paths", "must be >= 1"));
        }
        if !(self.calibration_target.is_finite() && self.calibration_target > 0.0) {
            return Err(Error::invalid("calibration.target", "must be finite and > 0"));
        }
        self.experiment.validate()
    }

    /// Renders every resolved key so that the output reloads to an equal
    /// configuration.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let m = &self.market;
        let p = &self.prefs;
        let g = &self.grid;
        let o = &self.solver.optimizer;
        let sim = &self.simulation;
        let lines: [(&str, String); 30] = [
            ("market.mu", num(m.mu)),
            ("market.sigma", num(m.sigma)),
            ("market.r", num(m.r)),
            ("preferences.gamma", num(p.gamma)),
            ("preferences.rho", num(p.rho)),
            ("preferences.beta", num(p.beta)),
            ("preferences.c0", num(p.c0)),
            ("preferences.bequest_b", num(p.bequest_b)),
            ("preferences.bequest_habit_scaled", p.bequest_habit_scaled.to_string()),
            ("preferences.T", num(p.horizon)),
            ("preferences.w0", num(p.w0)),
            ("grid.n_steps", g.n_steps.to_string()),
            ("grid.w_min", num(g.w_min)),
            ("grid.w_max", num(g.w_max)),
            ("grid.w_nodes", g.w_nodes.to_string()),
            ("grid.w_spacing", quoted(wealth_spacing_name(g.w_spacing))),
            ("grid.cbar_min", num(g.cbar_min)),
            ("grid.cbar_max", num(g.cbar_max)),
            ("grid.cbar_nodes", g.cbar_nodes.to_string()),
            ("grid.cbar_spacing", quoted(habit_spacing_name(g.cbar_spacing))),
            ("quadrature.nodes", self.solver.quadrature_nodes.to_string()),
            ("optimizer.scan_points", o.scan_points.to_string()),
            ("optimizer.golden_rounds", o.golden_rounds.to_string()),
            ("optimizer.tolerance", num(o.tolerance)),
            ("simulation.n_paths", sim.n_paths.to_string()),
            ("simulation.master_seed", seed_literal(sim.master_seed)),
            ("simulation.paths_written", sim.paths_written.to_string()),
            ("calibration.target", num(self.calibration_target)),
            ("output.dir", quoted(&self.output_dir.to_string_lossy())),
            ("experiment.cells", String::new()),
        ];
        for (k, v) in &lines[..lines.len() - 1] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("experiment.cells = [\n");
        for c in &self.experiment.cells {
            let bequest = match c.bequest {
                BequestMode::Zero => quoted("zero"),
                BequestMode::Calibrated => quoted("calibrated"),
                BequestMode::Fixed(b) => num(b),
            };
            let _ = writeln!(
                s,
                "  {{ name = {}, beta = {}, rho = {}, bequest = {} }},",
                quoted(&c.name),
                num(c.beta),
                num(c.rho),
                bequest
            );
        }
        s.push_str("]\n");
        s
    }
}

fn num(x: f64) -> String {
    // `{:?}` is the shortest representation that parses back to the same bits.
    format!("{x:?}")
}

fn seed_literal(seed: u64) -> String {
    if i64::try_from(seed).is_ok() {
        seed.to_string()
    } else {
        quoted(&seed.to_string())
    }
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_owned()).to_string()
}

fn wealth_spacing_name(s: WealthSpacing) -> &'static str {
    match s {
        WealthSpacing::Log => "log",
        WealthSpacing::Linear => "linear",
    }
}

fn habit_spacing_name(s: HabitSpacing) -> &'static str {
    match s {
        HabitSpacing::LogShifted => "log-shifted",
        HabitSpacing::Linear => "linear",
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Raw {
    market: RawMarket,
    preferences: RawPrefs,
    grid: RawGrid,
    quadrature: RawQuadrature,
    optimizer: OptimizerSpec,
    simulation: RawSimulation,
    calibration: RawCalibration,
    output: RawOutput,
    experiment: RawExperiment,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawMarket {
    mu: Option<f64>,
    sigma: Option<f64>,
    r: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPrefs {
    gamma: Option<f64>,
    rho: Option<f64>,
    beta: Option<f64>,
    c0: Option<f64>,
    bequest_b: Option<f64>,
    bequest_habit_scaled: Option<bool>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    w0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawGrid {
    n_steps: Option<usize>,
    w_min: Option<f64>,
    w_max: Option<f64>,
    w_nodes: Option<usize>,
    w_spacing: Option<WealthSpacing>,
    cbar_min: Option<f64>,
    cbar_max: Option<f64>,
    cbar_nodes: Option<usize>,
    cbar_spacing: Option<HabitSpacing>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawQuadrature {
    nodes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSimulation {
    n_paths: Option<usize>,
    master_seed: Option<Seed>,
    paths_written: Option<usize>,
}

/// TOML integers are signed 64-bit, so seeds above `i64::MAX` are written
/// as decimal strings.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Seed {
    Int(u64),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCalibration {
    target: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawExperiment {
    cells: Option<Vec<RawCell>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    name: String,
    beta: f64,
    rho: f64,
    #[serde(default)]
    bequest: Option<RawBequest>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawBequest {
    Fixed(f64),
    Named(String),
}

/// Parses config text, fills defaults and validates.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: Raw = toml::from_str(text).map_err(|e| parse_error(text, &e))?;

    let pd = Preferences::default();
    let w0 = raw.preferences.w0.unwrap_or(pd.w0);
    let horizon = raw.preferences.horizon.unwrap_or(pd.horizon);
    let prefs = Preferences {
        gamma: raw.preferences.gamma.unwrap_or(pd.gamma),
        rho: raw.preferences.rho.unwrap_or(pd.rho),
        beta: raw.preferences.beta.unwrap_or(pd.beta),
        c0: raw.preferences.c0.unwrap_or(w0 / horizon),
        bequest_b: raw.preferences.bequest_b.unwrap_or(pd.bequest_b),
        bequest_habit_scaled: raw
            .preferences
            .bequest_habit_scaled
            .unwrap_or(pd.bequest_habit_scaled),
        horizon,
        w0,
    };
    // Grid defaults depend on w0 and T; validate those first so the error
    // names the right field.
    prefs.validate()?;

    let md = MarketParams::default();
    let market = MarketParams {
        mu: raw.market.mu.unwrap_or(md.mu),
        sigma: raw.market.sigma.unwrap_or(md.sigma),
        r: raw.market.r.unwrap_or(md.r),
    };

    let gd = GridSpec::baseline(&prefs);
    let rg = raw.grid;
    let grid = GridSpec {
        n_steps: rg.n_steps.unwrap_or(gd.n_steps),
        w_min: rg.w_min.unwrap_or(gd.w_min),
        w_max: rg.w_max.unwrap_or(gd.w_max),
        w_nodes: rg.w_nodes.unwrap_or(gd.w_nodes),
        w_spacing: rg.w_spacing.unwrap_or(gd.w_spacing),
        cbar_min: rg.cbar_min.unwrap_or(gd.cbar_min),
        cbar_max: rg.cbar_max.unwrap_or(gd.cbar_max),
        cbar_nodes: rg.cbar_nodes.unwrap_or(gd.cbar_nodes),
        cbar_spacing: rg.cbar_spacing.unwrap_or(gd.cbar_spacing),
    };

    let solver = SolverOptions {
        quadrature_nodes: raw
            .quadrature
            .nodes
            .unwrap_or(SolverOptions::default().quadrature_nodes),
        optimizer: raw.optimizer,
    };

    let sd = SimulationConfig::default();
    let simulation = SimulationConfig {
        n_paths: raw.simulation.n_paths.unwrap_or(sd.n_paths),
        master_seed: match raw.simulation.master_seed {
            None => sd.master_seed,
            Some(Seed::Int(s)) => s,
            Some(Seed::Text(s)) => s.trim().parse().map_err(|_| {
                Error::invalid("simulation.master_seed", format!("not a u64: {s:?}"))
            })?,
        },
        paths_written: raw.simulation.paths_written.unwrap_or(sd.paths_written),
    };

    let experiment = match raw.experiment.cells {
        None => ExperimentMatrix::baseline(),
        Some(cells) => ExperimentMatrix {
            cells: cells
                .into_iter()
                .enumerate()
                .map(|(k, c)| {
                    let bequest = match c.bequest {
                        None => BequestMode::Zero,
                        Some(RawBequest::Fixed(b)) => BequestMode::Fixed(b),
                        Some(RawBequest::Named(s)) => match s.as_str() {
                            "zero" => BequestMode::Zero,
                            "calibrated" => BequestMode::Calibrated,
                            _ => {
                                return Err(Error::invalid(
                                    format!("experiment.cells[{k}].bequest"),
                                    format!("expected \"zero\", \"calibrated\" or a number, got {s:?}"),
                                ))
                            }
                        },
                    };
                    Ok(Cell {
                        name: c.name,
                        beta: c.beta,
                        rho: c.rho,
                        bequest,
                    })
                })
                .collect::<Result<_>>()?,
        },
    };

    let cfg = RunConfig {
        market,
        prefs,
        grid,
        solver,
        simulation,
        calibration_target: raw.calibration.target.unwrap_or(w0),
        output_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        experiment,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    Error::Parse {
        line,
        column,
        message: e.message().trim().to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_baseline() {
        let c = parse_config("").unwrap();
        assert_eq!(c.market, MarketParams::default());
        assert_eq!(c.prefs.w0, 1e6);
        assert_eq!(c.prefs.horizon, 10.0);
        assert_eq!(c.prefs.c0, 1e5);
        assert_eq!(c.prefs.gamma, 0.5);
        assert_eq!((c.market.r, c.market.mu, c.market.sigma), (0.03, 0.05, 0.25));
        assert_eq!(c.grid, GridSpec::baseline(&c.prefs));
        assert_eq!(c.solver, SolverOptions::default());
        assert_eq!(c.simulation.n_paths, 1000);
        assert_eq!(c.calibration_target, 1e6);
        assert_eq!(c.experiment.cells.len(), 12);
    }

    #[test]
    fn dependent_defaults_follow_w0_and_horizon() {
        let c = parse_config("preferences.w0 = 2e5\npreferences.T = 5").unwrap();
        assert_eq!(c.prefs.c0, 4e4);
        assert_eq!(c.grid.n_steps, 50);
        assert_eq!(c.grid.w_max, 1e6);
        assert_eq!(c.calibration_target, 2e5);
        let c = parse_config("preferences.c0 = 123.0\n[grid]\nw_nodes = 31").unwrap();
        assert_eq!(c.prefs.c0, 123.0);
        assert_eq!(c.grid.w_nodes, 31);
    }

    #[test]
    fn validation_names_the_field() {
        for (text, field) in [
            ("market.sigma = -1", "market.sigma"),
            ("preferences.gamma = 0", "preferences.gamma"),
            ("preferences.gamma = 1.5", "preferences.gamma"),
            ("preferences.beta = -0.1", "preferences.beta"),
            ("preferences.T = 0", "preferences.T"),
            ("grid.w_nodes = 4", "grid.w_nodes"),
            ("quadrature.nodes = 0", "quadrature.nodes"),
            ("simulation.n_paths = 0", "simulation.n_paths"),
            ("experiment.cells = []", "experiment.cells"),
        ] {
            match parse_config(text) {
                Err(Error::Invalid { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_config("market.mu = 0.05\nmarket.sigma = = 2\n") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
        match parse_config("\n\nmarket.vol = 0.2") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("vol"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config("experiment.cells = [{ name = \"a\", beta = 0.0, rho = 0.0, bequest = \"lots\" }]"),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
            preferences.beta = 0.0
            preferences.bequest_b = 0.39
            preferences.bequest_habit_scaled = true
            grid.cbar_spacing = "log-shifted"
            optimizer.tolerance = 1e-5
            simulation.master_seed = "18446744073709551615"
            output.dir = "runs/a b"
            experiment.cells = [
              { name = "m", beta = 0.0, rho = 0.1 },
              { name = "h", beta = 1.0, rho = 0.0, bequest = 0.5 },
              { name = "c", beta = 1.0, rho = 0.0, bequest = "calibrated" },
            ]
        "#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.prefs.beta, 0.0);
        assert_eq!(c.experiment.cells[1].bequest, BequestMode::Fixed(0.5));
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        let base = RunConfig::default();
        assert_eq!(parse_config(&base.to_toml()).unwrap(), base);
    }
}
