//! Box-constrained maximization of a two-control objective: a coarse grid
//! scan followed by coordinate-wise golden-section polishing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    /// Points per control in the coarse scan, endpoints included.
    pub scan_points: usize,
    /// Rounds of coordinate-wise golden-section refinement.
    pub golden_rounds: usize,
    /// Relative bracket width at which golden-section stops.
    pub tolerance: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            scan_points: 17,
            golden_rounds: 2,
            tolerance: 1e-4,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scan_points < 3 {
            return Err(Error::invalid("optimizer.scan_points", "must be >= 3"));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid("optimizer.tolerance", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Maximizes a unimodal `f` on `[lo, hi]`. Stops once the bracket is narrower
/// than `tol` times the larger of `|x|` and `abs_floor`. Returns the best
/// interior point visited.
pub fn golden_max(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
    abs_floor: f64,
) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= tol * mid.abs().max(abs_floor) {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Arg-max of `f(c, omega)` over `[c_lo, c_hi] x [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptimum {
    pub c: f64,
    pub omega: f64,
    pub value: f64,
}

/// Coarse scan then golden-section polish, one control at a time, each
/// within one scan cell of the incumbent. The result is never worse than the
/// best scanned point; scan ties go to smaller `c`, then smaller `omega`.
pub fn maximize_box(
    spec: &OptimizerSpec,
    c_lo: f64,
    c_hi: f64,
    mut f: impl FnMut(f64, f64) -> f64,
) -> BoxOptimum {
    let n = spec.scan_points;
    let c_at = |k: usize| {
        if k == n - 1 {
            c_hi
        } else {
            c_lo + (c_hi - c_lo) * k as f64 / (n - 1) as f64
        }
    };
    let om_at = |k: usize| k as f64 / (n - 1) as f64;

    let mut best = BoxOptimum {
        c: c_lo,
        omega: 0.0,
        value: f64::NEG_INFINITY,
    };
    for ic in 0..n {
        let c = c_at(ic);
        for io in 0..n {
            let om = om_at(io);
            let v = f(c, om);
            if v > best.value {
                best = BoxOptimum {
                    c,
                    omega: om,
                    value: v,
                };
            }
        }
    }
    if !best.value.is_finite() || c_hi <= c_lo {
        return best;
    }

    let c_cell = (c_hi - c_lo) / (n - 1) as f64;
    let om_cell = 1.0 / (n - 1) as f64;
    let c_floor = 1e-6 * (c_hi - c_lo);
    for _ in 0..spec.golden_rounds {
        let lo = (best.c - c_cell).max(c_lo);
        let hi = (best.c + c_cell).min(c_hi);
        let om = best.omega;
        let (c, v) = golden_max(|c| f(c, om), lo, hi, spec.tolerance, c_floor);
        if v > best.value {
            best.c = c;
            best.value = v;
        }

        let lo = (best.omega - om_cell).max(0.0);
        let hi = (best.omega + om_cell).min(1.0);
        let c = best.c;
        let (om, v) = golden_max(|om| f(c, om), lo, hi, spec.tolerance, 1e-2);
        if v > best.value {
            best.omega = om;
            best.value = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-8, 1.0);
        assert!((x - 0.3).abs() < 1e-7);
        assert!(v <= 0.0);
    }

    #[test]
    fn box_optimum_interior() {
        let spec = OptimizerSpec::default();
        let r = maximize_box(&spec, 0.0, 1e7, |c, om| {
            -((c - 2.03e5) / 1e5).powi(2) - 10.0 * (om - 0.64).powi(2)
        });
        assert!((r.c / 2.03e5 - 1.0).abs() < 1e-3, "{r:?}");
        assert!((r.omega - 0.64).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn box_optimum_at_corner_keeps_exact_endpoint() {
        let spec = OptimizerSpec::default();
        let r = maximize_box(&spec, 0.0, 50.0, |c, _| c.sqrt());
        assert_eq!(r.c, 50.0);
        assert_eq!(r.omega, 0.0);
    }

    #[test]
    fn ties_prefer_small_controls() {
        let spec = OptimizerSpec::default();
        let r = maximize_box(&spec, 1.0, 2.0, |_, _| 3.0);
        assert_eq!((r.c, r.omega, r.value), (1.0, 0.0, 3.0));
    }

    #[test]
    fn degenerate_box() {
        let spec = OptimizerSpec::default();
        let r = maximize_box(&spec, 0.0, 0.0, |c, om| -c - om);
        assert_eq!((r.c, r.omega), (0.0, 0.0));
    }
}
