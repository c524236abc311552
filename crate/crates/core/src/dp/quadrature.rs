//! Gauss-Hermite rules rescaled to expectations over a standard normal.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Nodes `z_k` and probability weights `p_k` with `E[f(Z)] ~ sum p_k f(z_k)`,
/// `Z ~ N(0, 1)`. Nodes are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n`-point Gauss-Hermite rule under the change of variable `z = sqrt(2) x`.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 || n > 200 {
            return Err(Error::invalid("quadrature.nodes", "must be in 1..=200"));
        }
        let (x, w) = physicists_hermite(n);
        let mut pairs: Vec<(f64, f64)> = x
            .into_iter()
            .zip(w)
            .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / PI.sqrt()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, mut weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        // Renormalize so the weights sum to one exactly in floating point.
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|p| *p /= total);
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &p)| p * f(z))
            .sum()
    }
}

/// Roots and weights for `int exp(-x^2) f(x) dx` by Newton iteration on the
/// orthonormal Hermite recurrence, using the standard asymptotic initial guesses.
fn physicists_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}
