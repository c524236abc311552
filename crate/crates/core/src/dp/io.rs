//! Table serialization: plot-ready CSV and a bit-exact binary snapshot.
//!
//! Snapshot layout, every field 8 bytes little-endian:
//!
//! ```text
//! magic "HDPTBL01"
//! n_steps u64 | w_min f64 | w_max f64 | w_nodes u64 | w_spacing u64
//! cbar_min f64 | cbar_max f64 | cbar_nodes u64 | cbar_spacing u64
//! horizon f64 | dt f64
//! len u64, wealth nodes f64 * len
//! len u64, habit nodes f64 * len
//! escape queries u64 | escapes u64 | monotonicity violations u64
//! J   f64, row-major (step 1..=N+1, wealth, habit)
//! C*  f64, row-major (step 1..=N, wealth, habit)
//! w*  f64, row-major (step 1..=N, wealth, habit)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{
    Axis, EscapeTally, GridSpec, HabitSpacing, PolicyTable, Solution, SolveDiagnostics, StateGrid,
    ValueTable, WealthSpacing,
};
use crate::error::{Error, Result};
use crate::fmt_f64;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"HDPTBL01";

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self) -> Result<[u8; 8]> {
        let end = self.pos + 8;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("8-byte slice"))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Snapshot("count overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Snapshot(format!("truncated: {n} values expected")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn encode_snapshot(sol: &Solution) -> Vec<u8> {
    let grid = sol.grid();
    let spec = &grid.spec;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(SNAPSHOT_MAGIC);
    w.u64(spec.n_steps as u64);
    w.f64(spec.w_min);
    w.f64(spec.w_max);
    w.u64(spec.w_nodes as u64);
    w.u64(match spec.w_spacing {
        WealthSpacing::Log => 0,
        WealthSpacing::Linear => 1,
    });
    w.f64(spec.cbar_min);
    w.f64(spec.cbar_max);
    w.u64(spec.cbar_nodes as u64);
    w.u64(match spec.cbar_spacing {
        HabitSpacing::LogShifted => 0,
        HabitSpacing::Linear => 1,
    });
    w.f64(grid.horizon);
    w.f64(grid.dt);
    for axis in [&grid.w, &grid.cbar] {
        w.u64(axis.len() as u64);
        w.f64s(axis.nodes());
    }
    let d = &sol.diagnostics;
    w.u64(d.escapes.queries);
    w.u64(d.escapes.escapes);
    w.u64(d.max_monotonicity_violations as u64);
    for s in &sol.values.slices {
        w.f64s(s);
    }
    for s in &sol.policy.consumption {
        w.f64s(s);
    }
    for s in &sol.policy.omega {
        w.f64s(s);
    }
    w.0
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Solution> {
    if bytes.len() < 8 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("missing HDPTBL01 magic header".into()));
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let n_steps = r.usize()?;
    let w_min = r.f64()?;
    let w_max = r.f64()?;
    let w_nodes = r.usize()?;
    let w_spacing = match r.u64()? {
        0 => WealthSpacing::Log,
        1 => WealthSpacing::Linear,
        k => return Err(Error::Snapshot(format!("unknown wealth spacing code {k}"))),
    };
    let cbar_min = r.f64()?;
    let cbar_max = r.f64()?;
    let cbar_nodes = r.usize()?;
    let cbar_spacing = match r.u64()? {
        0 => HabitSpacing::LogShifted,
        1 => HabitSpacing::Linear,
        k => return Err(Error::Snapshot(format!("unknown habit spacing code {k}"))),
    };
    let spec = GridSpec {
        n_steps,
        w_min,
        w_max,
        w_nodes,
        w_spacing,
        cbar_min,
        cbar_max,
        cbar_nodes,
        cbar_spacing,
    };
    spec.validate()
        .map_err(|e| Error::Snapshot(format!("embedded grid spec: {e}")))?;
    let horizon = r.f64()?;
    let dt = r.f64()?;
    let mut axis = || -> Result<Axis> {
        let n = r.usize()?;
        let nodes = r.f64s(n)?;
        if n < 3 || nodes.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::Snapshot("axis nodes are not strictly increasing".into()));
        }
        Ok(Axis::new(nodes))
    };
    let w_axis = axis()?;
    let cbar_axis = axis()?;
    let diagnostics = SolveDiagnostics {
        escapes: EscapeTally {
            queries: r.u64()?,
            escapes: r.u64()?,
        },
        max_monotonicity_violations: r.usize()?,
    };
    let per = w_axis.len() * cbar_axis.len();
    let mut slices = |count: usize| -> Result<Vec<Vec<f64>>> {
        (0..count).map(|_| r.f64s(per)).collect()
    };
    let values = slices(n_steps + 1)?;
    let consumption = slices(n_steps)?;
    let omega = slices(n_steps)?;
    if r.pos != bytes.len() {
        return Err(Error::Snapshot(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let grid = StateGrid {
        spec,
        horizon,
        dt,
        w: w_axis,
        cbar: cbar_axis,
    };
    Ok(Solution {
        values: ValueTable {
            grid: grid.clone(),
            slices: values,
        },
        policy: PolicyTable {
            grid,
            consumption,
            omega,
        },
        diagnostics,
    })
}

pub fn write_snapshot(sol: &Solution, path: &Path) -> Result<()> {
    fs::write(path, encode_snapshot(sol)).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Solution> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

/// One row per (step, wealth node, habit node); controls are blank on the
/// terminal step.
pub fn write_tables_csv(sol: &Solution, out: &mut impl Write) -> std::io::Result<()> {
    let grid = sol.grid();
    let nc = grid.cbar.len();
    writeln!(out, "step_index,t,W,Cbar,C_opt,omega_opt,J")?;
    for i in 1..=grid.n_steps() + 1 {
        let t = fmt_f64(grid.time(i));
        for (iw, &w) in grid.w.nodes().iter().enumerate() {
            for (ic, &cb) in grid.cbar.nodes().iter().enumerate() {
                let k = iw * nc + ic;
                let (c, om) = if i <= grid.n_steps() {
                    (
                        fmt_f64(sol.policy.consumption[i - 1][k]),
                        fmt_f64(sol.policy.omega[i - 1][k]),
                    )
                } else {
                    (String::new(), String::new())
                };
                writeln!(
                    out,
                    "{i},{t},{},{},{c},{om},{}",
                    fmt_f64(w),
                    fmt_f64(cb),
                    fmt_f64(sol.values.slices[i - 1][k])
                )?;
            }
        }
    }
    Ok(())
}
