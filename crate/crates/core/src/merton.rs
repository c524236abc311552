//! Closed-form finite-horizon Merton solution (no habit, no bequest). Serves
//! as the reference the dynamic program is checked against when `beta = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MarketParams, Preferences};

/// Below this magnitude of `nu` the consumption rule switches to its
/// series expansion around `nu = 0`.
const NU_SERIES_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MertonSolution {
    /// Consumption-rate coefficient, per year.
    pub nu: f64,
    /// Unconstrained optimal risky weight.
    pub omega_star: f64,
    /// `omega_star` projected onto `[0, 1]`, the box the dynamic program uses.
    pub omega_star_clamped: f64,
}

/// Solves the classical problem; `prefs.beta` is ignored.
pub fn merton_solve(mkt: &MarketParams, prefs: &Preferences) -> MertonSolution {
    let rra = 1.0 - prefs.gamma;
    let premium = mkt.mu - mkt.r;
    let var = mkt.sigma * mkt.sigma;
    let omega_star = premium / (var * rra);
    let nu = (prefs.rho - prefs.gamma * (mkt.r + premium * premium / (2.0 * var * rra))) / rra;
    MertonSolution {
        nu,
        omega_star,
        omega_star_clamped: omega_star.clamp(0.0, 1.0),
    }
}

/// Optimal consumption rate at time `t` with wealth `w`.
pub fn merton_consumption(t: f64, w: f64, sol: &MertonSolution, horizon: f64) -> Result<f64> {
    let tau = horizon - t;
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!(
            "merton consumption requires t < T (t = {t}, T = {horizon})"
        )));
    }
    let nu = sol.nu;
    if nu.abs() < NU_SERIES_CUTOFF {
        return Ok(w / tau * (1.0 + 0.5 * nu * tau));
    }
    Ok(nu * w / -(-nu * tau).exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn baseline(rho: f64) -> (MarketParams, Preferences) {
        (
            MarketParams::default(),
            Preferences {
                rho,
                beta: 0.0,
                ..Preferences::default()
            },
        )
    }

    #[test]
    fn baseline_weight_and_rate() {
        let (m, p) = baseline(0.10);
        let s = merton_solve(&m, &p);
        assert_relative_eq!(s.omega_star, 0.64, max_relative = 1e-12);
        assert_relative_eq!(s.nu, 0.1636, max_relative = 1e-12);
        assert_eq!(s.omega_star_clamped, s.omega_star);
    }

    #[test]
    fn zero_premium_gives_zero_weight() {
        let m = MarketParams {
            mu: 0.03,
            ..MarketParams::default()
        };
        let s = merton_solve(&m, &Preferences::default());
        assert_eq!(s.omega_star, 0.0);
    }

    #[test]
    fn clamped_weight_reported_separately() {
        let m = MarketParams {
            mu: 0.15,
            ..MarketParams::default()
        };
        let s = merton_solve(&m, &Preferences::default());
        assert!(s.omega_star > 1.0);
        assert_eq!(s.omega_star_clamped, 1.0);
    }

    #[test]
    fn consumption_examples() {
        let tiny = MertonSolution {
            nu: 0.0,
            omega_star: 0.0,
            omega_star_clamped: 0.0,
        };
        assert_relative_eq!(merton_consumption(0.0, 100.0, &tiny, 10.0).unwrap(), 10.0);
        let (m, p) = baseline(0.10);
        let s = merton_solve(&m, &p);
        assert_eq!(merton_consumption(1.0, 0.0, &s, 10.0).unwrap(), 0.0);
        let c = merton_consumption(0.0, 1e6, &s, 10.0).unwrap();
        // 0.1636e6 / (1 - exp(-1.636))
        assert!((c - 203_150.0).abs() < 50.0, "{c}");
        assert!(merton_consumption(10.0, 1.0, &s, 10.0).is_err());
    }

    #[test]
    fn series_branch_is_continuous() {
        let below = MertonSolution {
            nu: 0.99e-8,
            omega_star: 0.0,
            omega_star_clamped: 0.0,
        };
        let series = merton_consumption(0.0, 1e6, &below, 10.0).unwrap();
        let nu: f64 = below.nu;
        let closed = nu * 1e6 / (1.0 - (-nu * 10.0).exp());
        assert_relative_eq!(series, closed, max_relative = 1e-7);
        let at_zero = MertonSolution { nu: 0.0, ..below };
        assert_eq!(merton_consumption(0.0, 1e6, &at_zero, 10.0).unwrap(), 1e5);
    }

    #[test]
    fn spend_everything_near_horizon() {
        let (m, p) = baseline(0.10);
        let s = merton_solve(&m, &p);
        let tau = 1e-4;
        let c = merton_consumption(10.0 - tau, 5e5, &s, 10.0).unwrap();
        assert!((c * tau / 5e5 - 1.0).abs() < 0.01);
    }

    #[test]
    fn rate_sign_follows_time_preference() {
        let (m, p0) = baseline(0.0);
        assert!(merton_solve(&m, &p0).nu < 0.0);
        let (m, p10) = baseline(0.10);
        assert!(merton_solve(&m, &p10).nu > 0.0);
        // Rising path at rho = 0 still consumes positively.
        let c = merton_consumption(0.0, 1e6, &merton_solve(&m, &p0), 10.0).unwrap();
        assert!((c - 82_901.7).abs() < 1.0, "{c}");
    }

    proptest! {
        #[test]
        fn consumption_linear_in_wealth(w in 0.0f64..1e7, k in 1u32..20, t in 0.0f64..9.9) {
            let (m, p) = baseline(0.10);
            let s = merton_solve(&m, &p);
            let lambda = k as f64;
            let a = merton_consumption(t, lambda * w, &s, 10.0).unwrap();
            let b = lambda * merton_consumption(t, w, &s, 10.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }

        #[test]
        fn weight_independent_of_rho_horizon_wealth(
            rho in -0.1f64..0.3, horizon in 0.5f64..50.0, w0 in 1.0f64..1e8,
        ) {
            let m = MarketParams::default();
            let base = merton_solve(&m, &Preferences::default()).omega_star;
            let p = Preferences { rho, horizon, w0, ..Preferences::default() };
            prop_assert_eq!(merton_solve(&m, &p).omega_star, base);
        }
    }
}
