//! Forward Monte Carlo under a solved policy.
//!
//! Randomness: each path owns a ChaCha8 stream (`rand_chacha`) seeded with
//! `SeedableRng::seed_from_u64(path_seed(master, k))`, where
//! `path_seed(master, k) = splitmix64_mix(master ^ k)`. Standard normals come
//! from the Box-Muller transform of consecutive uniform pairs
//! `u = (x + 1) / 2^53` with `x` the top 53 bits of `next_u64`, using both
//! outputs of each pair in order (cosine branch first). Exactly one normal is
//! drawn per step, whatever the policy, so runs with the same seed share
//! their market history.

use std::f64::consts::TAU;
use std::io::{self, Write};
use std::ops::RangeInclusive;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dp::{
    backward_solve, policy_lookup, EscapeTally, GridSpec, PolicyDecision, PolicyTable, Problem,
    Solution, SolverOptions,
};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::merton::{merton_consumption, MertonSolution};
use crate::model::{habit_update, wealth_step, GROWTH_FLOOR};

/// SplitMix64 finalizer.
pub fn splitmix64_mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of path `k` in an ensemble.
pub fn path_seed(master_seed: u64, k: u64) -> u64 {
    splitmix64_mix(master_seed ^ k)
}

/// Reproducible standard-normal stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = TAU * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// A rule mapping the state at a step to consumption and risky weight.
pub trait Policy: Sync {
    fn n_steps(&self) -> usize;
    fn dt(&self) -> f64;
    fn decide(&self, step: usize, w: f64, c_bar: f64) -> PolicyDecision;
}

impl Policy for PolicyTable {
    fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    fn dt(&self) -> f64 {
        self.grid.dt
    }

    fn decide(&self, step: usize, w: f64, c_bar: f64) -> PolicyDecision {
        policy_lookup(self, step, w, c_bar)
    }
}

/// The closed-form rule applied on the same time steps as the dynamic
/// program: consumption uses the time left from the start of each step, the
/// weight is the clamped Merton ratio.
#[derive(Debug, Clone, Copy)]
pub struct MertonPolicy {
    pub solution: MertonSolution,
    pub horizon: f64,
    pub n_steps: usize,
}

impl Policy for MertonPolicy {
    fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    fn decide(&self, step: usize, w: f64, _c_bar: f64) -> PolicyDecision {
        let dt = self.dt();
        let t = (step - 1) as f64 * dt;
        let c = merton_consumption(t, w.max(0.0), &self.solution, self.horizon)
            .expect("step start precedes the horizon");
        PolicyDecision {
            c: c.clamp(0.0, w.max(0.0) / dt),
            omega: self.solution.omega_star_clamped,
            escaped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimStep {
    pub step: usize,
    pub t: f64,
    pub stock: f64,
    pub w: f64,
    /// Absent on the terminal step.
    pub c: Option<f64>,
    pub c_bar: f64,
    /// Absent on the terminal step.
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPath {
    pub seed: u64,
    pub steps: Vec<SimStep>,
    /// Policy lookups that fell outside the state grid.
    pub escapes: EscapeTally,
}

fn check_policy(policy: &dyn Policy, problem: &Problem) -> Result<()> {
    let horizon = policy.dt() * policy.n_steps() as f64;
    if (horizon / problem.prefs.horizon - 1.0).abs() > 1e-12 {
        return Err(Error::Mismatch(format!(
            "policy covers {horizon} years but the problem horizon is {}",
            problem.prefs.horizon
        )));
    }
    Ok(())
}

fn step_time(i: usize, n: usize, dt: f64) -> f64 {
    if i > n {
        n as f64 * dt
    } else {
        (i as f64 - 0.5) * dt
    }
}

fn run_path(policy: &dyn Policy, problem: &Problem, seed: u64) -> SimPath {
    let mkt = &problem.market;
    let n = policy.n_steps();
    let dt = policy.dt();
    let mut rng = NormalStream::new(seed);
    let mut steps = Vec::with_capacity(n + 1);
    let mut escapes = EscapeTally::default();
    let (mut w, mut c_bar, mut stock) = (problem.prefs.w0, 0.0, 1.0);
    for i in 1..=n {
        let d = policy.decide(i, w, c_bar);
        escapes.record(d.escaped);
        steps.push(SimStep {
            step: i,
            t: step_time(i, n, dt),
            stock,
            w,
            c: Some(d.c),
            c_bar,
            omega: Some(d.omega),
        });
        let z = rng.next_normal();
        w = wealth_step(w, d.c, d.omega, z, dt, mkt).expect("policy decisions are feasible");
        c_bar = habit_update(c_bar, d.c, i);
        stock *= (1.0 + mkt.mu * dt + mkt.sigma * dt.sqrt() * z).max(GROWTH_FLOOR);
    }
    steps.push(SimStep {
        step: n + 1,
        t: step_time(n + 1, n, dt),
        stock,
        w,
        c: None,
        c_bar,
        omega: None,
    });
    SimPath {
        seed,
        steps,
        escapes,
    }
}

/// One realization starting from `(W0, c_bar = 0)`.
pub fn simulate_path(policy: &dyn Policy, problem: &Problem, seed: u64) -> Result<SimPath> {
    check_policy(policy, problem)?;
    Ok(run_path(policy, problem, seed))
}

/// Paths `0..n_paths` with seeds from [`path_seed`], in path order.
pub fn simulate_paths(
    policy: &dyn Policy,
    problem: &Problem,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<SimPath>> {
    check_policy(policy, problem)?;
    if n_paths == 0 {
        return Err(Error::invalid("simulation.n_paths", "must be >= 1"));
    }
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|k| run_path(policy, problem, path_seed(master_seed, k)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub t: f64,
    pub mean_w: f64,
    pub std_w: f64,
    pub mean_c: Option<f64>,
    pub std_c: Option<f64>,
    pub mean_omega: Option<f64>,
    pub std_omega: Option<f64>,
    pub mean_s: f64,
    pub std_s: f64,
}

/// Cross-path statistics; standard deviations use the population
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub master_seed: u64,
    pub n_paths: usize,
    pub steps: Vec<StepStats>,
    pub min_wealth: f64,
    /// Path-steps with negative wealth.
    pub negative_wealth: usize,
    pub escapes: EscapeTally,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = xs.clone().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    let mean = sum / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl EnsembleStats {
    /// Accumulates in path order. Panics on an empty or ragged ensemble.
    pub fn from_paths(paths: &[SimPath], master_seed: u64) -> Self {
        assert!(!paths.is_empty(), "empty ensemble");
        let len = paths[0].steps.len();
        assert!(paths.iter().all(|p| p.steps.len() == len), "ragged ensemble");
        let steps = (0..len)
            .map(|j| {
                let col = paths.iter().map(move |p| &p.steps[j]);
                let (mean_w, std_w) = mean_std(col.clone().map(|s| s.w));
                let (mean_s, std_s) = mean_std(col.clone().map(|s| s.stock));
                let first = &paths[0].steps[j];
                let (mean_c, std_c) = match first.c {
                    Some(_) => {
                        let (m, s) = mean_std(col.clone().map(|s| s.c.unwrap_or(f64::NAN)));
                        (Some(m), Some(s))
                    }
                    None => (None, None),
                };
                let (mean_omega, std_omega) = match first.omega {
                    Some(_) => {
                        let (m, s) = mean_std(col.clone().map(|s| s.omega.unwrap_or(f64::NAN)));
                        (Some(m), Some(s))
                    }
                    None => (None, None),
                };
                StepStats {
                    step: first.step,
                    t: first.t,
                    mean_w,
                    std_w,
                    mean_c,
                    std_c,
                    mean_omega,
                    std_omega,
                    mean_s,
                    std_s,
                }
            })
            .collect();
        let mut escapes = EscapeTally::default();
        let mut min_wealth = f64::INFINITY;
        let mut negative_wealth = 0;
        for p in paths {
            escapes.merge(p.escapes);
            for s in &p.steps {
                min_wealth = min_wealth.min(s.w);
                negative_wealth += (s.w < 0.0) as usize;
            }
        }
        Self {
            master_seed,
            n_paths: paths.len(),
            steps,
            min_wealth,
            negative_wealth,
            escapes,
        }
    }

    /// Mean wealth on the terminal step.
    pub fn terminal_mean_wealth(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.mean_w)
    }

    /// Mean consumption on the decision steps, in step order.
    pub fn mean_consumption(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.mean_c).collect()
    }

    pub fn mean_omega(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.mean_omega).collect()
    }

    pub fn mean_wealth(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mean_w).collect()
    }
}

pub fn simulate_ensemble(
    policy: &dyn Policy,
    problem: &Problem,
    n_paths: usize,
    master_seed: u64,
) -> Result<EnsembleStats> {
    let paths = simulate_paths(policy, problem, n_paths, master_seed)?;
    Ok(EnsembleStats::from_paths(&paths, master_seed))
}

/// Outcome of matching expected terminal wealth to a target.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub b: f64,
    pub expected_terminal_wealth: f64,
    pub target: f64,
    /// Every `(b, E[W_T])` evaluated, in order.
    pub trials: Vec<(f64, f64)>,
    pub solution: Solution,
    pub stats: EnsembleStats,
}

pub const BEQUEST_SEARCH_MAX: f64 = 50.0;
const CALIBRATION_REL_TOL: f64 = 0.01;
const CALIBRATION_MAX_TRIALS: usize = 60;

/// Bisection on the bequest weight over `[0, 50]` until the ensemble mean of
/// terminal wealth is within 1% of `target`. Each trial re-solves the
/// program; the ensemble seed is fixed so the objective is deterministic.
pub fn calibrate_bequest(
    problem: &Problem,
    spec: &GridSpec,
    opts: &SolverOptions,
    n_paths: usize,
    master_seed: u64,
    target: f64,
) -> Result<Calibration> {
    if !(target > 0.0) {
        return Err(Error::Precondition(format!(
            "calibration target must be > 0, got {target}"
        )));
    }
    let mut trials = Vec::new();
    let mut eval = |b: f64| -> Result<(f64, Solution, EnsembleStats)> {
        let mut p = problem.clone();
        p.prefs.bequest_b = b;
        let sol = backward_solve(&p, spec, opts)?;
        let stats = simulate_ensemble(&sol.policy, &p, n_paths, master_seed)?;
        let ew = stats.terminal_mean_wealth();
        trials.push((b, ew));
        Ok((ew, sol, stats))
    };
    let tol = CALIBRATION_REL_TOL * target;
    let done = |ew: f64| (ew - target).abs() <= tol;

    let (mut lo, mut hi) = (0.0, BEQUEST_SEARCH_MAX);
    let (ew_hi, sol_hi, stats_hi) = eval(hi)?;
    if done(ew_hi) {
        return Ok(finish(hi, ew_hi, target, trials, sol_hi, stats_hi));
    }
    if ew_hi < target {
        return Err(Error::NotBracketing {
            b_max: hi,
            achieved: ew_hi,
            target,
        });
    }
    let (ew_lo, sol_lo, stats_lo) = eval(lo)?;
    if done(ew_lo) || ew_lo > target {
        return Ok(finish(lo, ew_lo, target, trials, sol_lo, stats_lo));
    }
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..CALIBRATION_MAX_TRIALS {
        let mid = 0.5 * (lo + hi);
        let (ew, sol, stats) = eval(mid)?;
        if done(ew) {
            return Ok(finish(mid, ew, target, trials, sol, stats));
        }
        if (ew - target).abs() < best.0 {
            best = ((ew - target).abs(), mid);
        }
        if ew < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Precondition(format!(
        "bequest calibration did not reach 1% of {target} after {CALIBRATION_MAX_TRIALS} trials; \
         closest b = {} (miss {})",
        best.1, best.0
    )))
}

fn finish(
    b: f64,
    ew: f64,
    target: f64,
    trials: Vec<(f64, f64)>,
    solution: Solution,
    stats: EnsembleStats,
) -> Calibration {
    Calibration {
        b,
        expected_terminal_wealth: ew,
        target,
        trials,
        solution,
        stats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub e_w: f64,
    pub e_c: f64,
    pub e_omega: f64,
}

/// Policies against expected wealth, paired step by step in time order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthCurve {
    pub points: Vec<CurvePoint>,
    /// `E[W]` is strictly increasing or strictly decreasing over the points.
    pub monotone: bool,
}

pub fn wealth_parametrize(stats: &EnsembleStats) -> WealthCurve {
    let points: Vec<CurvePoint> = stats
        .steps
        .iter()
        .filter_map(|s| {
            Some(CurvePoint {
                t: s.t,
                e_w: s.mean_w,
                e_c: s.mean_c?,
                e_omega: s.mean_omega?,
            })
        })
        .collect();
    let inc = points.windows(2).all(|p| p[1].e_w > p[0].e_w);
    let dec = points.windows(2).all(|p| p[1].e_w < p[0].e_w);
    WealthCurve {
        monotone: inc || dec,
        points,
    }
}

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    LinearFit {
        slope,
        intercept,
        r_squared: if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 },
        rms_residual: (ss_res / n).sqrt(),
    }
}

/// Steps in the middle half of `1..=n`.
pub fn mid_horizon(n: usize) -> RangeInclusive<usize> {
    (n / 4 + 1)..=(3 * n / 4)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sensitivity {
    /// `std(C) / mean(C)` per decision step.
    pub series_a: Vec<f64>,
    pub series_b: Vec<f64>,
    /// Share of mid-horizon steps where `b` is strictly below `a`.
    pub fraction_b_below: f64,
}

fn coefficient_of_variation(stats: &EnsembleStats) -> Vec<f64> {
    stats
        .steps
        .iter()
        .filter_map(|s| {
            let (m, sd) = (s.mean_c?, s.std_c?);
            Some(if m > 0.0 { sd / m } else { 0.0 })
        })
        .collect()
}

pub fn consumption_sensitivity(a: &EnsembleStats, b: &EnsembleStats) -> Result<Sensitivity> {
    let series_a = coefficient_of_variation(a);
    let series_b = coefficient_of_variation(b);
    if series_a.len() != series_b.len() || series_a.is_empty() {
        return Err(Error::Mismatch(format!(
            "sensitivity series lengths {} and {}",
            series_a.len(),
            series_b.len()
        )));
    }
    let mid = mid_horizon(series_a.len());
    let total = mid.clone().count();
    let below = mid
        .filter(|&i| series_b[i - 1] < series_a[i - 1])
        .count();
    Ok(Sensitivity {
        fraction_b_below: if total == 0 {
            0.0
        } else {
            below as f64 / total as f64
        },
        series_a,
        series_b,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_paths_csv(paths: &[SimPath], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "path_id,step,t,stock,W,C,Cbar,omega")?;
    for (k, p) in paths.iter().enumerate() {
        for s in &p.steps {
            writeln!(
                out,
                "{k},{},{},{},{},{},{},{}",
                s.step,
                fmt_f64(s.t),
                fmt_f64(s.stock),
                fmt_f64(s.w),
                opt(s.c),
                fmt_f64(s.c_bar),
                opt(s.omega)
            )?;
        }
    }
    Ok(())
}

pub fn write_ensemble_csv(stats: &EnsembleStats, out: &mut impl Write) -> io::Result<()> {
    writeln!(
        out,
        "step,t,mean_W,std_W,mean_C,std_C,mean_omega,std_omega,mean_S"
    )?;
    for s in &stats.steps {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.step,
            fmt_f64(s.t),
            fmt_f64(s.mean_w),
            fmt_f64(s.std_w),
            opt(s.mean_c),
            opt(s.std_c),
            opt(s.mean_omega),
            opt(s.std_omega),
            fmt_f64(s.mean_s)
        )?;
    }
    Ok(())
}

pub fn write_curve_csv(curve: &WealthCurve, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "t,E_W,E_C,E_omega,monotone_flag")?;
    let flag = curve.monotone as u8;
    for p in &curve.points {
        writeln!(
            out,
            "{},{},{},{},{flag}",
            fmt_f64(p.t),
            fmt_f64(p.e_w),
            fmt_f64(p.e_c),
            fmt_f64(p.e_omega)
        )?;
    }
    Ok(())
}
