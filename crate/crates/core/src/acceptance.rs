//! The acceptance suite behind `habitdp check` and the `acceptance` test
//! target. Each criterion yields one [`Verdict`].
//!
//! The oracle and grid-refinement checks use the configured grid, as do the
//! zero-bequest cells of the experiment matrix. Calibrated cells re-solve the
//! program a dozen or more times each, so they run on a grid scaled by
//! [`AcceptanceOptions::calibration_grid_scale`].

use std::fmt;
use std::time::{Duration, Instant};

use crate::config::RunConfig;
use crate::dp::{
    backward_solve, build_grids, encode_snapshot, interp2, policy_lookup, write_tables_csv,
    EscapeTally, GridSpec, Problem, QuadratureRule, Solution, SolverOptions, Surface,
};
use crate::error::{Error, Result};
use crate::experiment::{cell_problem, run_cell, BequestMode, Cell, CellRun, ExperimentMatrix};
use crate::merton::{merton_consumption, merton_solve};
use crate::model::{bequest, habit_update, utility, wealth_step, MarketParams, Preferences};
use crate::sim::{
    calibrate_bequest, consumption_sensitivity, linear_fit, mid_horizon, wealth_parametrize,
    write_curve_csv, write_ensemble_csv, write_paths_csv, EnsembleStats,
};

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: &'static str,
    pub title: &'static str,
    pub passed: bool,
    /// Non-gating checks are reported but do not fail the suite.
    pub gating: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.passed, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-MISS",
        };
        write!(f, "{tag} [{}] {}: {}", self.id, self.title, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct AcceptanceOptions {
    pub base: RunConfig,
    /// Node-count scale for the zero-bequest matrix cells.
    pub matrix_grid_scale: f64,
    /// Node-count scale for the calibrated matrix cells.
    pub calibration_grid_scale: f64,
    pub runtime_limit: Duration,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            matrix_grid_scale: 1.0,
            calibration_grid_scale: 0.5,
            runtime_limit: Duration::from_secs(300),
        }
    }
}

pub enum Event<'a> {
    Progress(&'a str),
    Verdict(&'a Verdict),
}

const MERTON_WEIGHT_TOL: f64 = 0.03;
const MERTON_CONSUMPTION_TOL: f64 = 0.02;
const WEIGHT_CAP: f64 = 0.66;
const TREND_TOL: f64 = 0.02;
const FINAL_WEIGHT_TOL: f64 = 0.05;
const NOISE_BAND: f64 = 0.01;
const SENSITIVITY_SHARE: f64 = 0.9;
const LINEAR_R2: f64 = 0.999;
const INTERCEPT_SHARE: f64 = 0.02;
const CONVEXITY_RATIO: f64 = 5.0;
const CALIBRATION_TOL: f64 = 0.01;
const SOFT_B_TOL: f64 = 0.15;
const GRID_DOUBLING_TOL: f64 = 0.005;
const QUADRATURE_TOL: f64 = 0.001;

struct Suite<'a> {
    opts: &'a AcceptanceOptions,
    on_event: &'a mut dyn FnMut(Event<'_>),
    verdicts: Vec<Verdict>,
}

impl Suite<'_> {
    fn progress(&mut self, msg: impl AsRef<str>) {
        (self.on_event)(Event::Progress(msg.as_ref()));
    }

    fn record(&mut self, id: &'static str, title: &'static str, gating: bool, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        let v = Verdict {
            id,
            title,
            passed,
            gating,
            detail,
        };
        (self.on_event)(Event::Verdict(&v));
        self.verdicts.push(v);
    }
}

/// Runs every criterion in order, reporting progress and verdicts as they
/// arrive, and returns the verdicts.
pub fn run_acceptance(opts: &AcceptanceOptions, on_event: &mut dyn FnMut(Event<'_>)) -> Vec<Verdict> {
    let mut s = Suite {
        opts,
        on_event,
        verdicts: Vec::new(),
    };

    s.progress("criterion 1: Merton oracle on the default grid");
    let c1 = merton_oracle(&mut s);
    s.record("1", "Merton oracle equivalence", true, c1);

    s.progress("running the experiment matrix");
    let matrix = run_matrix(&mut s);
    match &matrix {
        Ok(m) => {
            s.record("2", "No bankruptcy across the matrix", true, no_bankruptcy(m));
            s.record("3", "Habit lowers initial consumption", true, habit_ordering(m));
            s.record("4", "Weight dominance and trend", true, weight_trend(m));
            s.record("5", "Consumption peak", true, consumption_peak(m));
            s.record("6", "Sensitivity smoothing", true, sensitivity(m));
            s.record("7", "Merton linearity in wealth space", true, linearity(m));
            s.record("8", "Bequest calibration hits the target", true, calibration_hard(m));
            s.progress("criterion 8: reference bequest weights");
            let soft = calibration_soft(&mut s, m);
            s.record("8-soft", "Calibrated b near reference values", false, soft);
        }
        Err(e) => {
            for (id, title) in [
                ("2", "No bankruptcy across the matrix"),
                ("3", "Habit lowers initial consumption"),
                ("4", "Weight dominance and trend"),
                ("5", "Consumption peak"),
                ("6", "Sensitivity smoothing"),
                ("7", "Merton linearity in wealth space"),
                ("8", "Bequest calibration hits the target"),
            ] {
                s.record(id, title, true, Err(Error::Mismatch(format!("experiment matrix failed: {e}"))));
            }
        }
    }

    s.progress("criterion 9: refinement and pure-math checks");
    let c9 = hygiene(&mut s);
    s.record("9", "Numerical hygiene", true, c9);

    s.progress("criterion 10: determinism across thread counts");
    let c10 = determinism(s.opts);
    s.record("10", "Determinism", true, c10);

    s.verdicts
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn baseline_problem(base: &RunConfig, beta: f64, rho: f64, b: f64) -> Problem {
    Problem::new(
        base.market,
        Preferences {
            beta,
            rho,
            bequest_b: b,
            ..base.prefs
        },
    )
}

/// Step whose weight is the last one that matters: with no bequest the last
/// step consumes everything and its weight is arbitrary.
fn last_informative_step(n_steps: usize, bequest_b: f64) -> usize {
    if bequest_b == 0.0 {
        n_steps - 1
    } else {
        n_steps
    }
}

fn merton_oracle(s: &mut Suite<'_>) -> Result<(bool, String)> {
    let base = &s.opts.base;
    let mut ok = true;
    let mut parts = Vec::new();
    for rho in [0.10, 0.0] {
        let problem = baseline_problem(base, 0.0, rho, 0.0);
        let started = Instant::now();
        let sol = single_threaded(|| backward_solve(&problem, &base.grid, &base.solver))?;
        let elapsed = started.elapsed();
        let g = sol.grid();
        let (nw, nc) = (g.w.len(), g.cbar.len());
        let omega_star = merton_solve(&problem.market, &problem.prefs).omega_star_clamped;
        let last = last_informative_step(g.n_steps(), 0.0);
        let mut worst: (f64, usize, f64, f64) = (0.0, 0, 0.0, 0.0);
        for i in 1..=last {
            let om = &sol.policy.omega[i - 1];
            for iw in 1..nw - 1 {
                for ic in 1..nc - 1 {
                    let d = (om[iw * nc + ic] - omega_star).abs();
                    if d > worst.0 {
                        worst = (d, i, g.w.nodes()[iw], g.cbar.nodes()[ic]);
                    }
                }
            }
        }
        let w0 = problem.prefs.w0;
        let c_dp = policy_lookup(&sol.policy, 1, w0, 0.0).c;
        let msol = merton_solve(&problem.market, &problem.prefs);
        let c_cf = merton_consumption(g.time(1), w0, &msol, problem.prefs.horizon)?;
        let rel = c_dp / c_cf - 1.0;
        let pass = worst.0 <= MERTON_WEIGHT_TOL
            && rel.abs() <= MERTON_CONSUMPTION_TOL
            && elapsed <= s.opts.runtime_limit;
        ok &= pass;
        parts.push(format!(
            "rho={rho}: max|omega-{omega_star:.2}|={:.4} (step {}, W={:.0}, Cbar={:.0}) over steps 1..={last}, \
             C(t1,W0)={c_dp:.0} vs {c_cf:.0} ({:+.2}%), solve {:.0}s",
            worst.0,
            worst.1,
            worst.2,
            worst.3,
            100.0 * rel,
            elapsed.as_secs_f64()
        ));
        s.progress(parts.last().unwrap());
    }
    Ok((ok, parts.join("; ")))
}

struct Matrix {
    runs: Vec<CellRun>,
    /// Settings the calibrated cells ran with.
    calibration_cfg: RunConfig,
}

impl Matrix {
    fn find(&self, beta: f64, rho: f64, calibrated: bool) -> Result<&CellRun> {
        self.runs
            .iter()
            .find(|r| {
                r.cell.beta == beta
                    && r.cell.rho == rho
                    && (r.cell.bequest == BequestMode::Calibrated) == calibrated
            })
            .ok_or_else(|| Error::Mismatch(format!("no cell for beta={beta}, rho={rho}")))
    }
}

fn matrix_config(opts: &AcceptanceOptions, scale: f64) -> RunConfig {
    let mut cfg = opts.base.clone();
    cfg.grid = cfg.grid.scaled(scale);
    cfg.experiment = ExperimentMatrix::baseline();
    cfg.calibration_target = cfg.prefs.w0;
    cfg
}

fn run_matrix(s: &mut Suite<'_>) -> Result<Matrix> {
    let cfg = matrix_config(s.opts, s.opts.matrix_grid_scale);
    let calibration_cfg = matrix_config(s.opts, s.opts.calibration_grid_scale);
    let mut runs = Vec::new();
    for cell in &cfg.experiment.cells {
        let started = Instant::now();
        let cell_cfg = match cell.bequest {
            BequestMode::Calibrated => &calibration_cfg,
            _ => &cfg,
        };
        let (run, _) = run_cell(cell_cfg, cell)?;
        s.progress(format!(
            "  {}: b={:.4}, E[W_T]={:.0}, {:.0}s",
            cell.name,
            run.bequest_b,
            run.run.stats.terminal_mean_wealth(),
            started.elapsed().as_secs_f64()
        ));
        runs.push(run);
    }
    Ok(Matrix { runs, calibration_cfg })
}

fn stats(r: &CellRun) -> &EnsembleStats {
    &r.run.stats
}

fn no_bankruptcy(m: &Matrix) -> Result<(bool, String)> {
    let negatives: usize = m.runs.iter().map(|r| stats(r).negative_wealth).sum();
    let min = m
        .runs
        .iter()
        .map(|r| stats(r).min_wealth)
        .fold(f64::INFINITY, f64::min);
    let paths: usize = m.runs.iter().map(|r| stats(r).n_paths).sum();
    Ok((
        negatives == 0 && min >= 0.0,
        format!(
            "{} cells, {paths} paths: {negatives} negative-wealth path-steps, min W = {min:.3e}",
            m.runs.len()
        ),
    ))
}

fn habit_ordering(m: &Matrix) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for rho in [0.0, 0.10] {
        let c1 = |beta| -> Result<f64> { Ok(stats(m.find(beta, rho, false)?).mean_consumption()[0]) };
        let (a, b, c) = (c1(1.0)?, c1(0.1)?, c1(0.0)?);
        ok &= a < b && b < c;
        parts.push(format!("rho={rho}: E[C1] beta=1 {a:.0} < beta=0.1 {b:.0} < beta=0 {c:.0}"));
    }
    Ok((ok, parts.join("; ")))
}

fn weight_trend(m: &Matrix) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in m.runs.iter().filter(|r| r.cell.beta > 0.0) {
        let om = stats(r).mean_omega();
        let last = last_informative_step(om.len(), r.bequest_b);
        let series = &om[..last];
        let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut running = f64::NEG_INFINITY;
        let mut worst_drop: f64 = 0.0;
        for &x in series {
            worst_drop = worst_drop.max(running - x);
            running = running.max(x);
        }
        let final_gap = (series[last - 1] - 0.64).abs();
        let pass = max <= WEIGHT_CAP && worst_drop <= TREND_TOL && final_gap <= FINAL_WEIGHT_TOL;
        ok &= pass;
        parts.push(format!(
            "{}: max {max:.4}, worst drop {worst_drop:.4}, step {last} {:.4}{}",
            r.cell.name,
            series[last - 1],
            if pass { "" } else { " (miss)" }
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn consumption_peak(m: &Matrix) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [0.1, 1.0] {
        let c = stats(m.find(beta, 0.10, false)?).mean_consumption();
        let (arg, max) = c
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &x)| if x > acc.1 { (k, x) } else { acc });
        let interior = arg > 0 && arg + 1 < c.len();
        ok &= interior;
        parts.push(format!(
            "beta={beta}: max E[C]={max:.0} at step {} of {} (E[C1]={:.0}, E[C_N]={:.0})",
            arg + 1,
            c.len(),
            c[0],
            c[c.len() - 1]
        ));
    }
    let c = stats(m.find(0.0, 0.10, false)?).mean_consumption();
    let mut lowest = f64::INFINITY;
    let mut worst_rise: f64 = 0.0;
    for &x in &c {
        worst_rise = worst_rise.max(x / lowest - 1.0);
        lowest = lowest.min(x);
    }
    ok &= worst_rise <= NOISE_BAND;
    parts.push(format!(
        "beta=0: worst rise above earlier minimum {:.3}%",
        100.0 * worst_rise
    ));
    Ok((ok, parts.join("; ")))
}

fn sensitivity(m: &Matrix) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for rho in [0.0, 0.10] {
        let s = consumption_sensitivity(stats(m.find(0.0, rho, false)?), stats(m.find(1.0, rho, false)?))?;
        ok &= s.fraction_b_below >= SENSITIVITY_SHARE;
        let mid = mid_horizon(s.series_a.len());
        parts.push(format!(
            "rho={rho}: beta=1 below beta=0 on {:.1}% of steps {}..={}",
            100.0 * s.fraction_b_below,
            mid.start(),
            mid.end()
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn linearity(m: &Matrix) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for rho in [0.10, 0.0] {
        let fit_of = |beta| -> Result<_> {
            let curve = wealth_parametrize(stats(m.find(beta, rho, false)?));
            let x: Vec<f64> = curve.points.iter().map(|p| p.e_w).collect();
            let y: Vec<f64> = curve.points.iter().map(|p| p.e_c).collect();
            let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - y.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok((linear_fit(&x, &y), range))
        };
        let (merton, range) = fit_of(0.0)?;
        let (habit, _) = fit_of(1.0)?;
        let r2_ok = merton.r_squared > LINEAR_R2;
        let intercept_ok = merton.intercept.abs() < INTERCEPT_SHARE * range;
        let convex_ok = habit.rms_residual > CONVEXITY_RATIO * merton.rms_residual;
        ok &= r2_ok && intercept_ok && convex_ok;
        parts.push(format!(
            "rho={rho}: beta=0 R2={:.5}{}, |intercept|={:.0} vs {:.0}{}, residual beta=1/beta=0 = {:.1}{}",
            merton.r_squared,
            mark(r2_ok),
            merton.intercept.abs(),
            INTERCEPT_SHARE * range,
            mark(intercept_ok),
            habit.rms_residual / merton.rms_residual,
            mark(convex_ok)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn mark(ok: bool) -> &'static str {
    if ok {
        ""
    } else {
        " (miss)"
    }
}

fn calibration_hard(m: &Matrix) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in m.runs.iter().filter(|r| r.cell.bequest == BequestMode::Calibrated) {
        let cal = r
            .calibration
            .as_ref()
            .ok_or_else(|| Error::Mismatch(format!("{} was not calibrated", r.cell.name)))?;
        let miss = (cal.expected_terminal_wealth - cal.target).abs() / cal.target;
        ok &= miss <= CALIBRATION_TOL;
        parts.push(format!(
            "{}: b={:.4}, E[W_T]/W0-1={:+.3}% ({} trials)",
            r.cell.name,
            cal.b,
            100.0 * (cal.expected_terminal_wealth / cal.target - 1.0),
            cal.trials.len()
        ));
    }
    Ok((ok, parts.join("; ")))
}

/// Reference weights at β = 1; checked under the configured bequest reading
/// and, on a miss, under the other one.
fn calibration_soft(s: &mut Suite<'_>, m: &Matrix) -> Result<(bool, String)> {
    let reference = [(0.0, 0.39), (0.10, 0.62)];
    let configured = m.calibration_cfg.prefs.bequest_habit_scaled;
    let reading = |scaled: bool| if scaled { "habit-scaled" } else { "plain" };
    let mut found = Vec::new();
    for &(rho, _) in &reference {
        found.push(m.find(1.0, rho, true)?.bequest_b);
    }
    let hits = |bs: &[f64]| {
        reference
            .iter()
            .zip(bs)
            .all(|(&(_, p), &b)| (b - p).abs() <= SOFT_B_TOL)
    };
    let fmt = |bs: &[f64]| {
        reference
            .iter()
            .zip(bs)
            .map(|(&(rho, p), b)| format!("rho={rho}: b={b:.3} vs {p}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let first = format!("{} bequest: {}", reading(configured), fmt(&found));
    if hits(&found) {
        return Ok((true, format!("{first}; matches under the {} reading", reading(configured))));
    }
    s.progress(format!("  miss under the {} reading, trying the other", reading(configured)));
    let mut cfg = m.calibration_cfg.clone();
    cfg.prefs.bequest_habit_scaled = !configured;
    let mut alt = Vec::new();
    for &(rho, _) in &reference {
        let cell = Cell {
            name: format!("beta1_rho{}_alt", rho * 100.0),
            beta: 1.0,
            rho,
            bequest: BequestMode::Calibrated,
        };
        let cal = calibrate_bequest(
            &cell_problem(&cfg, &cell, 0.0),
            &cfg.grid,
            &cfg.solver,
            cfg.simulation.n_paths,
            cfg.simulation.master_seed,
            cfg.calibration_target,
        )?;
        s.progress(format!("  {} rho={rho}: b={:.4}", reading(!configured), cal.b));
        alt.push(cal.b);
    }
    let second = format!("{} bequest: {}", reading(!configured), fmt(&alt));
    let verdict = if hits(&alt) {
        format!("matches under the {} reading only", reading(!configured))
    } else {
        "matches under neither reading".to_owned()
    };
    Ok((hits(&alt), format!("{first}; {second}; {verdict}")))
}

fn j1_at_w0(sol: &Solution, w0: f64) -> f64 {
    let g = sol.grid();
    let surface = Surface::new(&g.w, &g.cbar, &sol.values.slices[0]);
    interp2(&surface, w0, 0.0, &mut EscapeTally::default())
}

fn hygiene(s: &mut Suite<'_>) -> Result<(bool, String)> {
    let base = s.opts.base.clone();
    let problem = Problem::new(base.market, base.prefs);
    let w0 = base.prefs.w0;
    let solve = |spec: &GridSpec, opts: &SolverOptions| backward_solve(&problem, spec, opts);

    let j = j1_at_w0(&solve(&base.grid, &base.solver)?, w0);
    let doubled = base.grid.scaled(2.0);
    s.progress(format!(
        "  J1(W0,0)={j:.10}; solving the doubled grid ({}x{})",
        doubled.w_nodes, doubled.cbar_nodes
    ));
    let j_fine = j1_at_w0(&solve(&doubled, &base.solver)?, w0);
    let q15 = SolverOptions {
        quadrature_nodes: 15,
        ..base.solver
    };
    s.progress(format!("  doubled J1={j_fine:.10}; solving with 15 quadrature nodes"));
    let j_q = j1_at_w0(&solve(&base.grid, &q15)?, w0);
    let grid_change = (j_fine / j - 1.0).abs();
    let quad_change = (j_q / j - 1.0).abs();

    let quad_err = quadratic_reproduction(&base)?;
    let habit_err = habit_running_mean_error();
    let examples = pure_math_examples();

    let ok = grid_change < GRID_DOUBLING_TOL
        && quad_change < QUADRATURE_TOL
        && quad_err < 1e-9
        && habit_err < 1e-12
        && examples.is_ok();
    Ok((
        ok,
        format!(
            "grid doubling {:.4}%{}, quadrature 7->15 {:.5}%{}, quadratic interpolation rel err {quad_err:.1e}{}, \
             habit recurrence rel err {habit_err:.1e}{}, pure-math examples {}",
            100.0 * grid_change,
            mark(grid_change < GRID_DOUBLING_TOL),
            100.0 * quad_change,
            mark(quad_change < QUADRATURE_TOL),
            mark(quad_err < 1e-9),
            mark(habit_err < 1e-12),
            match &examples {
                Ok(n) => format!("{n}/{n} ok"),
                Err(e) => format!("failed: {e}"),
            }
        ),
    ))
}

fn quadratic_reproduction(base: &RunConfig) -> Result<f64> {
    let g = build_grids(&base.grid, &base.prefs)?;
    let f = |w: f64, c: f64| w * w + 3.0 * c + w * c;
    let values: Vec<f64> = g
        .w
        .nodes()
        .iter()
        .flat_map(|&w| g.cbar.nodes().iter().map(move |&c| f(w, c)))
        .collect();
    let surface = Surface::new(&g.w, &g.cbar, &values);
    let mut worst: f64 = 0.0;
    let mut tally = EscapeTally::default();
    let (wl, wh) = (g.w.min().ln(), g.w.max().ln());
    let (cl, ch) = (g.cbar.min(), g.cbar.max());
    for a in 0..97 {
        for b in 0..31 {
            let w = (wl + (wh - wl) * (a as f64 + 0.37) / 97.0).exp();
            let c = cl + (ch - cl) * (b as f64 + 0.61) / 31.0;
            let got = interp2(&surface, w, c, &mut tally);
            worst = worst.max((got / f(w, c) - 1.0).abs());
        }
    }
    Ok(worst)
}

fn habit_running_mean_error() -> f64 {
    let mut c_bar = 0.0;
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for i in 1..=1000usize {
        let c = 1e5 * (1.0 + 0.5 * ((i * 7919) % 101) as f64 / 101.0);
        c_bar = habit_update(c_bar, c, i);
        sum += c;
        let mean = sum / i as f64;
        worst = worst.max((c_bar / mean - 1.0).abs());
    }
    worst
}

/// Closed-form example values for the primitives; returns how many hold.
fn pure_math_examples() -> std::result::Result<usize, String> {
    let mut n = 0;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        n += 1;
        if (got - want).abs() <= tol * want.abs().max(1.0) {
            Ok(())
        } else {
            Err(format!("{name}: {got} vs {want}"))
        }
    };
    let e = |r: Result<f64>| r.unwrap_or(f64::NAN);
    let p0 = Preferences {
        beta: 0.0,
        ..Preferences::default()
    };
    let p1 = Preferences {
        beta: 1.0,
        ..Preferences::default()
    };
    let mkt = MarketParams::default();
    check("utility at c0", e(utility(p0.c0, 12345.0, &p0)), 2.0, 1e-15)?;
    check("utility at zero", e(utility(0.0, 1.0, &p0)), 0.0, 0.0)?;
    check("utility at habit level", e(utility(2e5, 1e5, &p1)), 2.0, 1e-15)?;
    check("utility ratio 4", e(utility(4.0 * (p1.c0 + 5e4), 5e4, &p1)), 4.0, 1e-15)?;
    let beq = |b: f64, rho: f64, w: f64| {
        e(bequest(
            w,
            0.0,
            &Preferences {
                bequest_b: b,
                rho,
                ..p0
            },
        ))
    };
    check("bequest b=0", beq(0.0, 0.1, 5e5), 0.0, 0.0)?;
    check("bequest unit wealth", beq(1.0, 0.0, 1.0), 2.0, 1e-15)?;
    check("bequest b=0.39", beq(0.39, 0.0, 1e6), 780.0, 1e-12)?;
    check("habit i=1", habit_update(999.0, 5.0, 1), 5.0, 0.0)?;
    check("habit i=2", habit_update(5.0, 7.0, 2), 6.0, 0.0)?;
    check("riskless step", e(wealth_step(100.0, 10.0, 0.0, 0.0, 1.0, &mkt)), 92.7, 1e-12)?;
    check("full consumption", e(wealth_step(100.0, 1000.0, 0.7, 2.0, 0.1, &mkt)), 0.0, 0.0)?;
    check(
        "risky step",
        e(wealth_step(100.0, 0.0, 1.0, 1.0, 0.1, &mkt)),
        100.0 * (1.005 + 0.25 * 0.1f64.sqrt()),
        1e-12,
    )?;
    let ms = merton_solve(&mkt, &p0);
    check("Merton weight", ms.omega_star, 0.64, 1e-12)?;
    check("Merton nu", ms.nu, 0.1636, 1e-12)?;
    check(
        "Merton weight at mu=r",
        merton_solve(&MarketParams { mu: 0.03, ..mkt }, &p0).omega_star,
        0.0,
        0.0,
    )?;
    check("Merton consumption", e(merton_consumption(0.0, 1e6, &ms, 10.0)), 203_150.0, 2.5e-4)?;
    check("Merton consumption w=0", e(merton_consumption(0.0, 0.0, &ms, 10.0)), 0.0, 0.0)?;
    let flat = crate::merton::MertonSolution {
        nu: 0.0,
        ..ms
    };
    check("Merton consumption nu=0", e(merton_consumption(0.0, 100.0, &flat, 10.0)), 10.0, 1e-15)?;
    let rule = QuadratureRule::gauss_hermite(7).map_err(|e| e.to_string())?;
    check("quadrature mass", rule.expect(|_| 1.0), 1.0, 1e-12)?;
    check("quadrature mean", rule.expect(|z| z), 0.0, 1e-12)?;
    check("quadrature variance", rule.expect(|z| z * z), 1.0, 1e-10)?;
    Ok(n)
}

fn determinism(opts: &AcceptanceOptions) -> Result<(bool, String)> {
    let mut cfg = opts.base.clone();
    cfg.grid = cfg.grid.scaled(0.25);
    let cell = Cell {
        name: "determinism".into(),
        beta: 1.0,
        rho: 0.10,
        bequest: BequestMode::Zero,
    };
    let once = |threads: usize| -> Result<Vec<Vec<u8>>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Mismatch(e.to_string()))?;
        pool.install(|| {
            let (run, sol) = run_cell(&cfg, &cell)?;
            let curve = wealth_parametrize(&run.run.stats);
            let mut files = vec![Vec::new(); 5];
            write_tables_csv(&sol, &mut files[0]).expect("in-memory write");
            write_ensemble_csv(&run.run.stats, &mut files[1]).expect("in-memory write");
            write_curve_csv(&curve, &mut files[2]).expect("in-memory write");
            write_paths_csv(&run.run.sample_paths, &mut files[3]).expect("in-memory write");
            files[4] = encode_snapshot(&sol);
            Ok(files)
        })
    };
    let reference = once(1)?;
    let mut ok = true;
    for threads in [1, 4, 4] {
        ok &= once(threads)? == reference;
    }
    let bytes: usize = reference.iter().map(Vec::len).sum();
    Ok((
        ok,
        format!("tables, ensemble, curve, paths CSVs and snapshot ({bytes} bytes) identical over runs with 1, 1, 4, 4 threads"),
    ))
}

/// Exit status for a set of verdicts: success only if every gating
/// criterion passed.
pub fn all_gating_passed(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.passed || !v.gating)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_table_holds() {
        assert_eq!(pure_math_examples(), Ok(21));
    }

    #[test]
    fn running_mean_is_exact() {
        assert!(habit_running_mean_error() < 1e-12);
    }

    #[test]
    fn quadratics_reproduced_on_default_grid() {
        assert!(quadratic_reproduction(&RunConfig::default()).unwrap() < 1e-9);
    }

    #[test]
    fn verdict_rendering() {
        let v = Verdict {
            id: "8-soft",
            title: "t",
            passed: false,
            gating: false,
            detail: "d".into(),
        };
        assert_eq!(v.to_string(), "SOFT-MISS [8-soft] t: d");
        assert!(all_gating_passed(&[v]));
    }
}
