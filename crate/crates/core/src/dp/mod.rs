//! Backward stochastic dynamic programming over the (time, wealth, habit)
//! state space.
//!
//! Time is split into `N` steps of length `dt = T / N` with decision times
//! `t_i = (i - 1/2) dt`. Starting from the bequest surface at step `N + 1`,
//! each step maximizes discounted flow utility plus the quadrature expectation
//! of the next step's interpolated value over the control box
//! `[C_floor, W / dt] x [0, 1]`. Values are present values at time zero.

mod interp;
mod io;
mod optimize;
mod quadrature;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bequest_with, growth_factor, habit_update, Crra, MarketParams, Preferences, ScalarUtility,
};

pub use interp::{interp2, Axis, EscapeTally, Stencil, Surface};
pub use io::{
    decode_snapshot, encode_snapshot, read_snapshot, write_snapshot, write_tables_csv,
    SNAPSHOT_MAGIC,
};
pub use optimize::{golden_max, maximize_box, BoxOptimum, OptimizerSpec};
pub use quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WealthSpacing {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HabitSpacing {
    /// Geometric in `c_bar - cbar_min + s` with shift `s` equal to 5% of the
    /// span, so nodes cluster near the lower bound.
    LogShifted,
    Linear,
}

/// Discretization of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_steps: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub w_nodes: usize,
    pub w_spacing: WealthSpacing,
    pub cbar_min: f64,
    pub cbar_max: f64,
    pub cbar_nodes: usize,
    pub cbar_spacing: HabitSpacing,
}

impl GridSpec {
    /// Defaults scaled to the investor: wealth on `[1e-3 W0, 5 W0]` with 121
    /// log-spaced nodes, habit on `[0, 3 W0 / T]` with 61 linear nodes, and
    /// ten steps per year.
    pub fn baseline(prefs: &Preferences) -> Self {
        Self {
            n_steps: (10.0 * prefs.horizon).round().max(2.0) as usize,
            w_min: 1e-3 * prefs.w0,
            w_max: 5.0 * prefs.w0,
            w_nodes: 121,
            w_spacing: WealthSpacing::Log,
            cbar_min: 0.0,
            cbar_max: 3.0 * prefs.w0 / prefs.horizon,
            cbar_nodes: 61,
            cbar_spacing: HabitSpacing::Linear,
        }
    }

    /// Multiplies both state node counts, keeping the time steps.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |n: usize| (((n - 1) as f64 * factor).round() as usize + 1).max(5);
        Self {
            w_nodes: scale(self.w_nodes),
            cbar_nodes: scale(self.cbar_nodes),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::invalid("grid.n_steps", "must be >= 2"));
        }
        if self.w_nodes < 5 {
            return Err(Error::invalid("grid.w_nodes", "must be >= 5"));
        }
        if self.cbar_nodes < 5 {
            return Err(Error::invalid("grid.cbar_nodes", "must be >= 5"));
        }
        if !(self.w_min.is_finite() && self.w_min >= 0.0) {
            return Err(Error::invalid("grid.w_min", "must be finite and >= 0"));
        }
        if !(self.w_max.is_finite() && self.w_max > self.w_min) {
            return Err(Error::invalid("grid.w_max", "must be finite and > grid.w_min"));
        }
        if self.w_spacing == WealthSpacing::Log && self.w_min <= 0.0 {
            return Err(Error::invalid("grid.w_min", "must be > 0 for log spacing"));
        }
        if !(self.cbar_min.is_finite() && self.cbar_min >= 0.0) {
            return Err(Error::invalid("grid.cbar_min", "must be finite and >= 0"));
        }
        if !(self.cbar_max.is_finite() && self.cbar_max > self.cbar_min) {
            return Err(Error::invalid(
                "grid.cbar_max",
                "must be finite and > grid.cbar_min",
            ));
        }
        Ok(())
    }
}

/// Node coordinates built from a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub spec: GridSpec,
    pub horizon: f64,
    pub dt: f64,
    pub w: Axis,
    pub cbar: Axis,
}

impl StateGrid {
    pub fn n_steps(&self) -> usize {
        self.spec.n_steps
    }

    /// Decision time of 1-based step `i`; step `N + 1` maps to the horizon.
    pub fn time(&self, i: usize) -> f64 {
        if i > self.spec.n_steps {
            self.horizon
        } else {
            (i as f64 - 0.5) * self.dt
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.w.len() * self.cbar.len()
    }
}

fn progression(lo: f64, hi: f64, n: usize, geometric: bool) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == n - 1 {
                hi
            } else {
                let s = k as f64 / (n - 1) as f64;
                if geometric {
                    lo * ((hi / lo).ln() * s).exp()
                } else {
                    lo + (hi - lo) * s
                }
            }
        })
        .collect()
}

/// Wealth nodes. When `w0` lies strictly inside the range and no plain node
/// is within 0.5% of it, the axis is split at the nearest node position and
/// each side is spaced separately so that `w0` is itself a node.
fn wealth_nodes(spec: &GridSpec, w0: f64) -> Vec<f64> {
    let geometric = spec.w_spacing == WealthSpacing::Log;
    let n = spec.w_nodes;
    let plain = progression(spec.w_min, spec.w_max, n, geometric);
    if !(w0 > spec.w_min && w0 < spec.w_max) {
        return plain;
    }
    if plain.iter().any(|&x| (x / w0 - 1.0).abs() <= 0.005) {
        return plain;
    }
    let pos = if geometric {
        (w0 / spec.w_min).ln() / (spec.w_max / spec.w_min).ln()
    } else {
        (w0 - spec.w_min) / (spec.w_max - spec.w_min)
    };
    let k = ((pos * (n - 1) as f64).round() as usize).clamp(1, n - 2);
    let mut nodes = progression(spec.w_min, w0, k + 1, geometric);
    nodes.extend_from_slice(&progression(w0, spec.w_max, n - k, geometric)[1..]);
    nodes
}

fn habit_nodes(spec: &GridSpec) -> Vec<f64> {
    let (lo, hi, n) = (spec.cbar_min, spec.cbar_max, spec.cbar_nodes);
    let mut nodes = match spec.cbar_spacing {
        HabitSpacing::Linear => progression(lo, hi, n, false),
        HabitSpacing::LogShifted => {
            let shift = 0.05 * (hi - lo);
            progression(shift, hi - lo + shift, n, true)
                .into_iter()
                .enumerate()
                .map(|(k, x)| if k == 0 { lo } else if k == n - 1 { hi } else { x - shift + lo })
                .collect()
        }
    };
    if lo > 0.0 {
        nodes.insert(0, 0.0);
    }
    nodes
}

/// Builds the wealth and habit axes for an investor.
pub fn build_grids(spec: &GridSpec, prefs: &Preferences) -> Result<StateGrid> {
    spec.validate()?;
    prefs.validate()?;
    Ok(StateGrid {
        spec: *spec,
        horizon: prefs.horizon,
        dt: prefs.horizon / spec.n_steps as f64,
        w: Axis::new(wealth_nodes(spec, prefs.w0)),
        cbar: Axis::new(habit_nodes(spec)),
    })
}

/// Market, preferences and the felicity applied to the habit ratio.
#[derive(Debug, Clone)]
pub struct Problem {
    pub market: MarketParams,
    pub prefs: Preferences,
    pub utility: Arc<dyn ScalarUtility>,
}

impl Problem {
    /// CRRA felicity with the exponent from `prefs.gamma`.
    pub fn new(market: MarketParams, prefs: Preferences) -> Self {
        Self {
            market,
            prefs,
            utility: Arc::new(Crra { gamma: prefs.gamma }),
        }
    }

    pub fn with_utility(mut self, utility: Arc<dyn ScalarUtility>) -> Self {
        self.utility = utility;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.prefs.validate()
    }

    /// Discounted flow utility of consuming at rate `c` for one step.
    #[inline]
    pub fn flow(&self, i_time: f64, c: f64, c_bar: f64, dt: f64) -> f64 {
        (-self.prefs.rho * i_time).exp() * self.utility.value(c / self.prefs.habit_scale(c_bar)) * dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub quadrature_nodes: usize,
    pub optimizer: OptimizerSpec,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quadrature_nodes: 7,
            optimizer: OptimizerSpec::default(),
        }
    }
}

/// Value surfaces for steps `1..=N+1`, each wealth-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub grid: StateGrid,
    pub slices: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn slice(&self, i: usize) -> Surface<'_> {
        Surface::new(&self.grid.w, &self.grid.cbar, &self.slices[i - 1])
    }
}

/// Optimal controls for steps `1..=N`, each wealth-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub grid: StateGrid,
    pub consumption: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Continuation queries that left the state grid during the solve.
    pub escapes: EscapeTally,
    /// Largest number of adjacent-node pairs, over all slices and habit
    /// columns, where the value decreases in wealth.
    pub max_monotonicity_violations: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: PolicyTable,
    pub diagnostics: SolveDiagnostics,
}

impl Solution {
    pub fn grid(&self) -> &StateGrid {
        &self.values.grid
    }
}

/// Optimal controls and value at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSolution {
    pub c: f64,
    pub omega: f64,
    pub value: f64,
}

/// Everything a single backward step reads.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub problem: &'a Problem,
    pub grid: &'a StateGrid,
    pub rule: &'a QuadratureRule,
    pub optimizer: &'a OptimizerSpec,
    /// 1-based step being solved.
    pub step: usize,
    pub next: Surface<'a>,
    /// Exact value of holding zero wealth at step `step + 1`.
    pub next_zero_value: f64,
}

/// Expected next-step value after consuming down to `w_net` and investing a
/// fraction `omega` in the risky asset.
///
/// Zero post-consumption wealth is absorbing and takes `zero_value` exactly.
/// Wealth outcomes beyond either end of the grid follow a power law
/// `zero_value + a w^k` fitted to the two outermost wealth nodes on that side,
/// or are clamped to the boundary when `zero_value` is infinite. Habit
/// averages off the grid are clamped. Every off-grid outcome is tallied.
#[allow(clippy::too_many_arguments)]
pub fn expected_continuation(
    next: &Surface<'_>,
    w_net: f64,
    c_bar_next: f64,
    omega: f64,
    rule: &QuadratureRule,
    mkt: &MarketParams,
    dt: f64,
    zero_value: f64,
    tally: &mut EscapeTally,
) -> f64 {
    if w_net <= 0.0 {
        return zero_value;
    }
    let sc = next.cbar_axis.stencil(c_bar_next);
    let (w_lo, w_hi) = (next.w_axis.min(), next.w_axis.max());
    let g_mid = growth_factor(omega, 0.0, dt, mkt);
    let lowest = w_net * growth_factor(omega, rule.nodes[0], dt, mkt).min(g_mid);
    let highest = w_net * growth_factor(omega, rule.nodes[rule.len() - 1], dt, mkt).max(g_mid);
    let nw = next.w_axis.len();
    let low = if lowest < w_lo {
        WealthTail::new(next, &sc, zero_value, 0, 1)
    } else {
        None
    };
    let high = if highest > w_hi {
        WealthTail::new(next, &sc, zero_value, nw - 1, nw - 2)
    } else {
        None
    };
    let mut eval = |w: f64| -> f64 {
        let tail = if w < w_lo {
            low.as_ref()
        } else if w > w_hi {
            high.as_ref()
        } else {
            None
        };
        if let Some(tail) = tail {
            tally.record(true);
            return tail.eval(w);
        }
        let sw = next.w_axis.stencil(w);
        tally.record(sw.clamped || sc.clamped);
        next.eval_stencils(&sw, &sc)
    };
    if omega == 0.0 {
        return eval(w_net * g_mid);
    }
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&z, &p)| p * eval(w_net * growth_factor(omega, z, dt, mkt)))
        .sum()
}

/// `J(w) = zero + (J_edge - zero) (w / w_edge)^k` with the exponent matched
/// to the edge node and its neighbour and kept in `[0.01, 1]`.
struct WealthTail {
    zero: f64,
    w_edge: f64,
    rise: f64,
    exponent: f64,
}

impl WealthTail {
    fn new(next: &Surface<'_>, sc: &Stencil, zero: f64, edge: usize, inner: usize) -> Option<Self> {
        if !zero.is_finite() {
            return None;
        }
        let nodes = next.w_axis.nodes();
        let row = |iw: usize| next.eval_stencils(&Stencil::node(iw, false), sc) - zero;
        let (rise_edge, rise_inner) = (row(edge), row(inner));
        let ratio = (rise_edge / rise_inner).ln() / (nodes[edge] / nodes[inner]).ln();
        let exponent = if rise_edge > 0.0 && rise_inner > 0.0 && ratio.is_finite() {
            ratio.clamp(0.01, 1.0)
        } else {
            1.0
        };
        Some(Self {
            zero,
            w_edge: nodes[edge],
            rise: rise_edge,
            exponent,
        })
    }

    #[inline]
    fn eval(&self, w: f64) -> f64 {
        self.zero + self.rise * (w / self.w_edge).powf(self.exponent)
    }
}

/// Maximizes flow utility plus expected continuation at state `(w, c_bar)`.
/// With no room to consume above the floor the node consumes all wealth and
/// holds no stock. Off-grid continuation outcomes of the chosen controls are
/// added to `tally`.
pub fn optimize_node(
    ctx: &StepContext<'_>,
    w: f64,
    c_bar: f64,
    tally: &mut EscapeTally,
) -> NodeSolution {
    let prefs = &ctx.problem.prefs;
    let mkt = &ctx.problem.market;
    let dt = ctx.grid.dt;
    let t = ctx.grid.time(ctx.step);
    let c_floor = prefs.consumption_floor();
    let c_max = w / dt;
    let objective = |c: f64, omega: f64, tally: &mut EscapeTally| -> f64 {
        let w_net = (w - c * dt).max(0.0);
        let c_bar_next = habit_update(c_bar, c, ctx.step);
        ctx.problem.flow(t, c, c_bar, dt)
            + expected_continuation(
                &ctx.next,
                w_net,
                c_bar_next,
                omega,
                ctx.rule,
                mkt,
                dt,
                ctx.next_zero_value,
                tally,
            )
    };
    let (c, omega) = if c_max <= c_floor {
        (c_max, 0.0)
    } else {
        let mut scratch = EscapeTally::default();
        let best = maximize_box(ctx.optimizer, c_floor, c_max, |c, om| {
            objective(c, om, &mut scratch)
        });
        (best.c, best.omega)
    };
    NodeSolution {
        c,
        omega,
        value: objective(c, omega, tally),
    }
}

/// Value of holding zero wealth from each step on (index `i - 1` for step `i`),
/// consuming nothing.
fn zero_wealth_values(problem: &Problem, grid: &StateGrid) -> Vec<f64> {
    let n = grid.n_steps();
    let mut z = vec![0.0; n + 1];
    z[n] = bequest_with(problem.utility.as_ref(), 0.0, 0.0, &problem.prefs);
    for i in (1..=n).rev() {
        z[i - 1] = problem.flow(grid.time(i), 0.0, 0.0, grid.dt) + z[i];
    }
    z
}

fn count_monotonicity_violations(grid: &StateGrid, values: &[f64]) -> usize {
    let nc = grid.cbar.len();
    (0..nc)
        .map(|ic| {
            (1..grid.w.len())
                .filter(|&iw| {
                    let lo = values[(iw - 1) * nc + ic];
                    let hi = values[iw * nc + ic];
                    hi < lo - 1e-10 * lo.abs().max(hi.abs())
                })
                .count()
        })
        .max()
        .unwrap_or(0)
}

/// Solves the recursion from the bequest surface back to step 1. Node
/// problems within a step run in parallel on the current rayon pool; the
/// result does not depend on the number of threads.
pub fn backward_solve(
    problem: &Problem,
    spec: &GridSpec,
    opts: &SolverOptions,
) -> Result<Solution> {
    problem.validate()?;
    opts.optimizer.validate()?;
    let grid = build_grids(spec, &problem.prefs)?;
    if problem.prefs.gamma < 0.0 && grid.w.min() <= 0.0 {
        return Err(Error::invalid(
            "grid.w_min",
            "must be > 0 when preferences.gamma < 0",
        ));
    }
    let rule = QuadratureRule::gauss_hermite(opts.quadrature_nodes)?;
    let n = grid.n_steps();
    let nc = grid.cbar.len();
    let u = problem.utility.as_ref();

    let terminal: Vec<f64> = grid
        .w
        .nodes()
        .iter()
        .flat_map(|&w| {
            grid.cbar
                .nodes()
                .iter()
                .map(move |&cb| bequest_with(u, w, cb, &problem.prefs))
        })
        .collect();
    let zero_values = zero_wealth_values(problem, &grid);

    let mut value_slices: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut c_slices: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut om_slices: Vec<Vec<f64>> = vec![Vec::new(); n];
    value_slices[n] = terminal;
    let mut diagnostics = SolveDiagnostics {
        max_monotonicity_violations: count_monotonicity_violations(&grid, &value_slices[n]),
        ..SolveDiagnostics::default()
    };

    for i in (1..=n).rev() {
        let ctx = StepContext {
            problem,
            grid: &grid,
            rule: &rule,
            optimizer: &opts.optimizer,
            step: i,
            next: Surface::new(&grid.w, &grid.cbar, &value_slices[i]),
            next_zero_value: zero_values[i],
        };
        let nodes: Vec<(NodeSolution, EscapeTally)> = (0..grid.n_nodes())
            .into_par_iter()
            .map(|k| {
                let mut tally = EscapeTally::default();
                let w = grid.w.nodes()[k / nc];
                let cb = grid.cbar.nodes()[k % nc];
                (optimize_node(&ctx, w, cb, &mut tally), tally)
            })
            .collect();
        let mut js = Vec::with_capacity(nodes.len());
        let mut cs = Vec::with_capacity(nodes.len());
        let mut oms = Vec::with_capacity(nodes.len());
        for (node, tally) in nodes {
            js.push(node.value);
            cs.push(node.c);
            oms.push(node.omega);
            diagnostics.escapes.merge(tally);
        }
        diagnostics.max_monotonicity_violations = diagnostics
            .max_monotonicity_violations
            .max(count_monotonicity_violations(&grid, &js));
        value_slices[i - 1] = js;
        c_slices[i - 1] = cs;
        om_slices[i - 1] = oms;
    }

    Ok(Solution {
        values: ValueTable {
            grid: grid.clone(),
            slices: value_slices,
        },
        policy: PolicyTable {
            grid,
            consumption: c_slices,
            omega: om_slices,
        },
        diagnostics,
    })
}

/// Interpolated controls at an arbitrary state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision {
    pub c: f64,
    pub omega: f64,
    /// The state lay outside the grid.
    pub escaped: bool,
}

/// Evaluates the step-`i` policy at `(w, c_bar)` with the same parabolic
/// scheme as the value function, then projects onto the feasible box.
pub fn policy_lookup(policy: &PolicyTable, i: usize, w: f64, c_bar: f64) -> PolicyDecision {
    let grid = &policy.grid;
    assert!(
        (1..=grid.n_steps()).contains(&i),
        "policy step {i} outside 1..={}",
        grid.n_steps()
    );
    let sw = grid.w.stencil(w);
    let sc = grid.cbar.stencil(c_bar);
    let c = Surface::new(&grid.w, &grid.cbar, &policy.consumption[i - 1]).eval_stencils(&sw, &sc);
    let om = Surface::new(&grid.w, &grid.cbar, &policy.omega[i - 1]).eval_stencils(&sw, &sc);
    let w_pos = w.max(0.0);
    PolicyDecision {
        c: c.clamp(0.0, w_pos / grid.dt),
        omega: om.clamp(0.0, 1.0),
        escaped: sw.clamped || sc.clamped,
    }
}
