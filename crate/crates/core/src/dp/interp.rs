//! Piecewise-parabolic interpolation on nonuniform axes, built from
//! three-point Lagrange stencils, and its tensor product over the
//! (wealth, habit) plane.

use serde::{Deserialize, Serialize};

/// Strictly increasing node coordinates along one state dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    nodes: Vec<f64>,
}

/// Interpolation stencil: first node index and up to four weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub start: usize,
    pub weights: [f64; 4],
    /// Number of leading weights in use.
    pub width: usize,
    /// The query fell outside the axis and was clamped to an end node.
    pub clamped: bool,
}

impl Stencil {
    /// Picks out a single node.
    pub fn node(index: usize, clamped: bool) -> Self {
        Self {
            start: index,
            weights: [1.0, 0.0, 0.0, 0.0],
            width: 1,
            clamped,
        }
    }
}

#[inline]
fn lagrange3(x: f64, x0: f64, x1: f64, x2: f64) -> [f64; 3] {
    let (d0, d1, d2) = (x - x0, x - x1, x - x2);
    [
        d1 * d2 / ((x0 - x1) * (x0 - x2)),
        d0 * d2 / ((x1 - x0) * (x1 - x2)),
        d0 * d1 / ((x2 - x0) * (x2 - x1)),
    ]
}

impl Axis {
    /// Panics unless there are at least three strictly increasing finite nodes.
    pub fn new(nodes: Vec<f64>) -> Self {
        assert!(nodes.len() >= 3, "an axis needs at least three nodes");
        assert!(
            nodes.iter().all(|x| x.is_finite()) && nodes.windows(2).all(|p| p[0] < p[1]),
            "axis nodes must be finite and strictly increasing"
        );
        Self { nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Stencil for `x`. Inside an interval the two three-point parabolas
    /// through its ends are blended linearly in `x`, so the interpolant is
    /// continuously differentiable and still exact on quadratics. The end
    /// intervals use their single parabola.
    #[inline]
    pub fn stencil(&self, x: f64) -> Stencil {
        let nodes = &self.nodes;
        let n = nodes.len();
        if !(x > nodes[0]) {
            return Stencil::node(0, x < nodes[0] || x.is_nan());
        }
        if x >= nodes[n - 1] {
            return Stencil::node(n - 1, x > nodes[n - 1]);
        }
        // nodes[i] < x <= nodes[i + 1]
        let i = nodes.partition_point(|&v| v < x) - 1;
        let has_left = i >= 1;
        let has_right = i + 2 < n;
        if has_left && has_right {
            let s = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
            let l = lagrange3(x, nodes[i - 1], nodes[i], nodes[i + 1]);
            let r = lagrange3(x, nodes[i], nodes[i + 1], nodes[i + 2]);
            let t = 1.0 - s;
            Stencil {
                start: i - 1,
                weights: [t * l[0], t * l[1] + s * r[0], t * l[2] + s * r[1], s * r[2]],
                width: 4,
                clamped: false,
            }
        } else {
            let start = if has_left { i - 1 } else { i };
            let w = lagrange3(x, nodes[start], nodes[start + 1], nodes[start + 2]);
            Stencil {
                start,
                weights: [w[0], w[1], w[2], 0.0],
                width: 3,
                clamped: false,
            }
        }
    }

    /// One-dimensional interpolation of `values` sampled on this axis.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let s = self.stencil(x);
        s.weights[..s.width]
            .iter()
            .zip(&values[s.start..s.start + s.width])
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// Count of interpolation queries and how many of them left the grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscapeTally {
    pub queries: u64,
    pub escapes: u64,
}

impl EscapeTally {
    pub fn record(&mut self, escaped: bool) {
        self.queries += 1;
        self.escapes += escaped as u64;
    }

    pub fn merge(&mut self, other: EscapeTally) {
        self.queries += other.queries;
        self.escapes += other.escapes;
    }

    pub fn fraction(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.escapes as f64 / self.queries as f64
        }
    }
}

/// Values on a (wealth x habit) grid, wealth-major: `values[iw * n_cbar + ic]`.
#[derive(Debug, Clone, Copy)]
pub struct Surface<'a> {
    pub w_axis: &'a Axis,
    pub cbar_axis: &'a Axis,
    pub values: &'a [f64],
}

impl<'a> Surface<'a> {
    pub fn new(w_axis: &'a Axis, cbar_axis: &'a Axis, values: &'a [f64]) -> Self {
        assert_eq!(values.len(), w_axis.len() * cbar_axis.len());
        Self {
            w_axis,
            cbar_axis,
            values,
        }
    }

    #[inline]
    pub fn at_node(&self, iw: usize, ic: usize) -> f64 {
        self.values[iw * self.cbar_axis.len() + ic]
    }

    /// Tensor-product evaluation with precomputed stencils.
    #[inline]
    pub fn eval_stencils(&self, sw: &Stencil, sc: &Stencil) -> f64 {
        let nc = self.cbar_axis.len();
        let mut acc = 0.0;
        let wc = &sc.weights[..sc.width];
        for (a, wa) in sw.weights[..sw.width].iter().enumerate() {
            let row = &self.values[(sw.start + a) * nc + sc.start..][..sc.width];
            acc += wa * wc.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
        }
        acc
    }
}

/// Piecewise-parabolic interpolation of a surface at `(w, c_bar)`. Queries
/// outside the grid are clamped to the boundary and recorded in `tally`.
pub fn interp2(surface: &Surface<'_>, w: f64, c_bar: f64, tally: &mut EscapeTally) -> f64 {
    let sw = surface.w_axis.stencil(w);
    let sc = surface.cbar_axis.stencil(c_bar);
    tally.record(sw.clamped || sc.clamped);
    surface.eval_stencils(&sw, &sc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geometric(lo: f64, hi: f64, n: usize) -> Axis {
        let r = (hi / lo).ln() / (n - 1) as f64;
        Axis::new((0..n).map(|i| lo * (r * i as f64).exp()).collect())
    }

    fn sample(w: &Axis, c: &Axis, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(w.len() * c.len());
        for &x in w.nodes() {
            for &y in c.nodes() {
                v.push(f(x, y));
            }
        }
        v
    }

    #[test]
    fn reproduces_nodes() {
        let w = geometric(1.0, 100.0, 9);
        let c = Axis::new((0..6).map(|i| i as f64 * 2.0).collect());
        let vals = sample(&w, &c, |x, y| x.sqrt() + (y + 1.0).ln());
        let s = Surface::new(&w, &c, &vals);
        let mut t = EscapeTally::default();
        for (iw, &x) in w.nodes().iter().enumerate() {
            for (ic, &y) in c.nodes().iter().enumerate() {
                assert_eq!(interp2(&s, x, y, &mut t), s.at_node(iw, ic));
            }
        }
        assert_eq!(t.escapes, 0);
    }

    #[test]
    fn clamps_and_counts_out_of_range() {
        let w = Axis::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let c = Axis::new(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let vals = sample(&w, &c, |x, y| x * 10.0 + y);
        let s = Surface::new(&w, &c, &vals);
        let mut t = EscapeTally::default();
        assert_eq!(interp2(&s, 0.1, 2.0, &mut t), 12.0);
        assert_eq!(interp2(&s, 9.0, 9.0, &mut t), 54.0);
        assert_eq!(interp2(&s, 5.0, 4.0, &mut t), 54.0);
        assert_eq!(t, EscapeTally { queries: 3, escapes: 2 });
    }

    #[test]
    fn cubic_error_converges_at_third_order() {
        let err = |n: usize| {
            let a = Axis::new((0..n).map(|i| 1.0 + i as f64 / (n - 1) as f64).collect());
            let v: Vec<f64> = a.nodes().iter().map(|x| x * x * x).collect();
            (0..2000)
                .map(|k| 1.05 + 0.9 * k as f64 / 1999.0)
                .map(|x| (a.interp(&v, x) - x * x * x).abs())
                .fold(0.0, f64::max)
        };
        let mut prev = err(11);
        for n in [21, 41, 81] {
            let e = err(n);
            assert!(prev / e >= 6.0, "ratio {} at n={n}", prev / e);
            prev = e;
        }
    }

    #[test]
    fn continuous_across_interval_midpoints() {
        let a = geometric(1e3, 5e6, 121);
        let v: Vec<f64> = a.nodes().iter().map(|x| x.sqrt()).collect();
        for k in 1..a.len() - 1 {
            let mid = 0.5 * (a.nodes()[k] + a.nodes()[k + 1]);
            let eps = 1e-7 * mid;
            let jump = a.interp(&v, mid + eps) - a.interp(&v, mid - eps);
            let slope = 0.5 / mid.sqrt();
            assert!((jump - 2.0 * eps * slope).abs() < 1e-9 * mid.sqrt(), "node {k}: {jump}");
        }
    }

    #[test]
    fn slope_continuous_at_nodes() {
        let a = geometric(1.0, 100.0, 41);
        let v: Vec<f64> = a.nodes().iter().map(|x| x.ln()).collect();
        for k in 2..a.len() - 2 {
            let x = a.nodes()[k];
            let h = 1e-6 * x;
            let left = (a.interp(&v, x) - a.interp(&v, x - h)) / h;
            let right = (a.interp(&v, x + h) - a.interp(&v, x)) / h;
            assert!((left - right).abs() < 1e-4 * left.abs(), "node {k}: {left} vs {right}");
        }
    }

    proptest! {
        #[test]
        fn exact_on_quadratics(
            a in -5.0f64..5.0, b in -5.0f64..5.0, cc in -5.0f64..5.0, d in -5.0f64..5.0,
            e in -5.0f64..5.0, x in 0.0f64..1.0, y in 0.0f64..1.0,
        ) {
            let w = geometric(10.0, 1e4, 31);
            let c = Axis::new((0..21).map(|i| i as f64 * 500.0).collect());
            let f = |x: f64, y: f64| a * x * x + b * y * y + cc * x * y + d * x + e * y + 7.0;
            let vals = sample(&w, &c, f);
            let s = Surface::new(&w, &c, &vals);
            let qx = w.min() + x * (w.max() - w.min());
            let qy = y * c.max();
            let mut t = EscapeTally::default();
            let got = interp2(&s, qx, qy, &mut t);
            let want = f(qx, qy);
            let scale = (a.abs() * qx * qx + b.abs() * qy * qy + cc.abs() * qx * qy).max(1.0);
            prop_assert!((got - want).abs() <= 1e-9 * scale, "{} vs {}", got, want);
        }
    }
}
