//! Problem parameters and the pure primitives of the habit-formation model:
//! the habit-scaled CRRA utility, the bequest term, the running-average habit
//! update and the discrete budget transition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to the one-period gross return factor so that wealth
/// stays nonnegative under extreme normal draws.
pub const GROWTH_FLOOR: f64 = 1e-6;

/// Dynamics of the risky and riskless assets, all rates per year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            mu: 0.05,
            sigma: 0.25,
            r: 0.03,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::invalid("market.mu", "must be finite"));
        }
        if !self.r.is_finite() {
            return Err(Error::invalid("market.r", "must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("market.sigma", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Non-fatal observations about the parameter set.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.mu <= self.r {
            out.push(format!(
                "market.mu ({}) <= market.r ({}): the unconstrained Merton weight is not positive",
                self.mu, self.r
            ));
        }
        out
    }
}

/// Investor preferences and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    /// CRRA exponent; relative risk aversion is `1 - gamma`.
    pub gamma: f64,
    /// Rate of time preference per year.
    pub rho: f64,
    /// Habit memory weight. Zero recovers the Merton problem.
    pub beta: f64,
    /// Inherited consumption level, currency per year.
    pub c0: f64,
    pub bequest_b: f64,
    /// Scale the bequest by the habit level, `(w / (c0 + beta * c_bar))^gamma / gamma`,
    /// instead of applying the plain one-argument CRRA to terminal wealth.
    pub bequest_habit_scaled: bool,
    /// Horizon in years.
    pub horizon: f64,
    pub w0: f64,
}

impl Default for Preferences {
    fn default() -> Self {
        let w0 = 1_000_000.0;
        let horizon = 10.0;
        Self {
            gamma: 0.5,
            rho: 0.10,
            beta: 0.1,
            c0: w0 / horizon,
            bequest_b: 0.0,
            bequest_habit_scaled: false,
            horizon,
            w0,
        }
    }
}

impl Preferences {
    pub fn validate(&self) -> Result<()> {
        // c0 defaults to w0 / T, so these come first.
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("preferences.T", "must be finite and > 0"));
        }
        if !(self.w0.is_finite() && self.w0 > 0.0) {
            return Err(Error::invalid("preferences.w0", "must be finite and > 0"));
        }
        let g = self.gamma;
        if !g.is_finite() || g >= 1.0 || g == 0.0 {
            return Err(Error::invalid(
                "preferences.gamma",
                "must be finite, < 1 and nonzero",
            ));
        }
        if !self.rho.is_finite() {
            return Err(Error::invalid("preferences.rho", "must be finite"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid("preferences.beta", "must be finite and >= 0"));
        }
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(Error::invalid("preferences.c0", "must be finite and > 0"));
        }
        if !(self.bequest_b.is_finite() && self.bequest_b >= 0.0) {
            return Err(Error::invalid(
                "preferences.bequest_b",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    /// Denominator of the habit ratio.
    #[inline]
    pub fn habit_scale(&self, c_bar: f64) -> f64 {
        self.c0 + self.beta * c_bar
    }

    /// Smallest consumption the optimizer considers. Positive only when the
    /// utility is unbounded below at zero.
    pub fn consumption_floor(&self) -> f64 {
        if self.gamma < 0.0 {
            1e-9 * self.c0
        } else {
            0.0
        }
    }
}

/// Averaged past consumption together with the 1-based step it applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HabitState {
    pub c_bar: f64,
    pub step_index: usize,
}

impl HabitState {
    /// State before any consumption has taken place. The value of `c_bar`
    /// here never influences the dynamics.
    pub fn initial() -> Self {
        Self {
            c_bar: 0.0,
            step_index: 1,
        }
    }

    pub fn advance(self, consumption: f64) -> Self {
        Self {
            c_bar: habit_update(self.c_bar, consumption, self.step_index),
            step_index: self.step_index + 1,
        }
    }
}

/// One-argument felicity `u(x)` applied to the habit ratio
/// `x = c / (c0 + beta * c_bar)`. Implementations must be increasing and
/// concave on `x > 0`.
pub trait ScalarUtility: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
}

/// `u(x) = x^gamma / gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crra {
    pub gamma: f64,
}

impl ScalarUtility for Crra {
    #[inline]
    fn value(&self, x: f64) -> f64 {
        if x == 0.0 {
            return if self.gamma > 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            };
        }
        x.powf(self.gamma) / self.gamma
    }
}

/// Habit-scaled CRRA utility of consumption rate `c` given the averaged past
/// consumption `c_bar`.
pub fn utility(c: f64, c_bar: f64, prefs: &Preferences) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("consumption must be >= 0, got {c}")));
    }
    if !(c_bar >= 0.0) {
        return Err(Error::Domain(format!("c_bar must be >= 0, got {c_bar}")));
    }
    if c == 0.0 && prefs.gamma < 0.0 {
        return Err(Error::Domain(
            "utility of zero consumption is -inf for gamma < 0".into(),
        ));
    }
    Ok(Crra { gamma: prefs.gamma }.value(c / prefs.habit_scale(c_bar)))
}

/// Discounted terminal-wealth utility.
pub fn bequest(w_terminal: f64, c_bar_terminal: f64, prefs: &Preferences) -> Result<f64> {
    if !(w_terminal >= 0.0) {
        return Err(Error::Domain(format!(
            "terminal wealth must be >= 0, got {w_terminal}"
        )));
    }
    if prefs.bequest_b == 0.0 {
        return Ok(0.0);
    }
    if w_terminal == 0.0 && prefs.gamma < 0.0 {
        return Err(Error::Domain(
            "bequest of zero wealth is -inf for gamma < 0".into(),
        ));
    }
    Ok(bequest_with(
        &Crra { gamma: prefs.gamma },
        w_terminal,
        c_bar_terminal,
        prefs,
    ))
}

/// Bequest term for an arbitrary felicity. No domain checks.
pub(crate) fn bequest_with(
    u: &dyn ScalarUtility,
    w_terminal: f64,
    c_bar_terminal: f64,
    prefs: &Preferences,
) -> f64 {
    if prefs.bequest_b == 0.0 {
        return 0.0;
    }
    let x = if prefs.bequest_habit_scaled {
        w_terminal / prefs.habit_scale(c_bar_terminal)
    } else {
        w_terminal
    };
    prefs.bequest_b * (-prefs.rho * prefs.horizon).exp() * u.value(x)
}

/// Running-average update `c_bar_{i+1} = c_i / i + (i - 1) / i * c_bar_i`.
///
/// At `i = 1` the previous average carries zero weight.
#[inline]
pub fn habit_update(c_bar: f64, c: f64, step_index: usize) -> f64 {
    debug_assert!(step_index >= 1);
    let i = step_index as f64;
    c / i + (i - 1.0) / i * c_bar
}

/// Gross one-period return of the portfolio, floored at [`GROWTH_FLOOR`].
#[inline]
pub fn growth_factor(omega: f64, z: f64, dt: f64, mkt: &MarketParams) -> f64 {
    let g = 1.0 + (1.0 - omega) * mkt.r * dt + omega * (mkt.mu * dt + mkt.sigma * dt.sqrt() * z);
    g.max(GROWTH_FLOOR)
}

/// Budget transition over one step of length `dt`.
pub fn wealth_step(
    w: f64,
    c: f64,
    omega: f64,
    z: f64,
    dt: f64,
    mkt: &MarketParams,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be > 0, got {dt}")));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Precondition(format!(
            "omega must lie in [0, 1], got {omega}"
        )));
    }
    if !(c >= 0.0) || c * dt > w * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "consumption {c} outside [0, w/dt] for w = {w}, dt = {dt}"
        )));
    }
    let net = (w - c * dt).max(0.0);
    Ok(net * growth_factor(omega, z, dt, mkt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prefs(gamma: f64, beta: f64, c0: f64) -> Preferences {
        Preferences {
            gamma,
            beta,
            c0,
            ..Preferences::default()
        }
    }

    #[test]
    fn utility_examples() {
        let p = prefs(0.5, 0.0, 100_000.0);
        assert_eq!(utility(100_000.0, 12_345.0, &p).unwrap(), 2.0);
        assert_eq!(utility(0.0, 5.0, &p).unwrap(), 0.0);
        let p = prefs(0.5, 1.0, 100_000.0);
        assert_eq!(utility(200_000.0, 100_000.0, &p).unwrap(), 2.0);
        let c_bar = 30_000.0;
        let c = 4.0 * (p.c0 + p.beta * c_bar);
        assert_relative_eq!(utility(c, c_bar, &p).unwrap(), 4.0, max_relative = 1e-15);
    }

    #[test]
    fn utility_zero_consumption_negative_gamma_is_domain_error() {
        let p = prefs(-1.0, 0.5, 1.0);
        assert!(matches!(utility(0.0, 1.0, &p), Err(Error::Domain(_))));
        assert!(utility(1.0, 1.0, &p).unwrap() < 0.0);
    }

    #[test]
    fn bequest_examples() {
        let mut p = prefs(0.5, 1.0, 1.0);
        p.bequest_b = 0.0;
        assert_eq!(bequest(123.0, 4.0, &p).unwrap(), 0.0);
        p.bequest_b = 1.0;
        p.rho = 0.0;
        assert_eq!(bequest(1.0, 0.0, &p).unwrap(), 2.0);
        p.bequest_b = 0.39;
        assert_relative_eq!(bequest(1e6, 0.0, &p).unwrap(), 780.0, max_relative = 1e-12);
    }

    #[test]
    fn bequest_habit_scaled_switch() {
        let p = Preferences {
            bequest_b: 1.0,
            rho: 0.0,
            beta: 1.0,
            c0: 100.0,
            bequest_habit_scaled: true,
            ..Preferences::default()
        };
        // 400 / (100 + 300) = 1
        assert_eq!(bequest(400.0, 300.0, &p).unwrap(), 2.0);
        assert!(bequest(-1.0, 0.0, &p).is_err());
    }

    #[test]
    fn habit_update_examples() {
        assert_eq!(habit_update(999.0, 5.0, 1), 5.0);
        assert_eq!(habit_update(5.0, 7.0, 2), 6.0);
        let mut s = HabitState::initial();
        for _ in 0..50 {
            s = s.advance(3.25);
            assert_relative_eq!(s.c_bar, 3.25, max_relative = 1e-15);
        }
    }

    #[test]
    fn wealth_step_examples() {
        let m = MarketParams {
            mu: 0.05,
            sigma: 0.25,
            r: 0.03,
        };
        assert_relative_eq!(
            wealth_step(100.0, 10.0, 0.0, 0.7, 1.0, &m).unwrap(),
            92.7,
            max_relative = 1e-14
        );
        assert_eq!(wealth_step(100.0, 100.0, 0.3, -2.0, 1.0, &m).unwrap(), 0.0);
        let expected = 100.0 * (1.0 + 0.005 + 0.25 * 0.1f64.sqrt());
        let got = wealth_step(100.0, 0.0, 1.0, 1.0, 0.1, &m).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-14);
        assert!((got - 108.406).abs() < 1e-3);
    }

    #[test]
    fn wealth_step_rejects_overconsumption() {
        let m = MarketParams::default();
        assert!(matches!(
            wealth_step(100.0, 101.0, 0.5, 0.0, 1.0, &m),
            Err(Error::Precondition(_))
        ));
        assert!(wealth_step(100.0, 1.0, 1.5, 0.0, 1.0, &m).is_err());
    }

    #[test]
    fn growth_clamp_binds_only_in_extreme_tails() {
        let m = MarketParams {
            mu: 0.0,
            sigma: 1.0,
            r: 0.0,
        };
        assert_eq!(growth_factor(1.0, -10.0, 1.0, &m), GROWTH_FLOOR);
        let base = MarketParams::default();
        assert!(growth_factor(1.0, -3.75, 0.1, &base) > 0.5);
    }

    #[test]
    fn validation_names_fields() {
        let m = MarketParams {
            sigma: -1.0,
            ..MarketParams::default()
        };
        assert!(m.validate().unwrap_err().to_string().contains("market.sigma"));
        let p = Preferences {
            gamma: 0.0,
            ..Preferences::default()
        };
        assert!(p.validate().unwrap_err().to_string().contains("preferences.gamma"));
        let m = MarketParams {
            mu: 0.01,
            ..MarketParams::default()
        };
        assert!(m.validate().is_ok());
        assert_eq!(m.warnings().len(), 1);
    }

    proptest! {
        #[test]
        fn utility_increasing_in_c_decreasing_in_cbar(
            c in 1e3f64..1e6, c_bar in 1e3f64..1e6, beta in 0.05f64..2.0, gamma in -2.0f64..0.95,
        ) {
            prop_assume!(gamma.abs() > 1e-3);
            let p = prefs(gamma, beta, 1e5);
            let h = 1e-6 * c;
            let u = utility(c, c_bar, &p).unwrap();
            prop_assert!(utility(c + h, c_bar, &p).unwrap() > u);
            let hb = 1e-6 * c_bar;
            prop_assert!(utility(c, c_bar + hb, &p).unwrap() < u);
        }

        #[test]
        fn utility_concave_in_c(
            c1 in 1.0f64..1e6, c2 in 1.0f64..1e6, c_bar in 0.0f64..1e6, gamma in -2.0f64..0.95,
        ) {
            prop_assume!(gamma.abs() > 1e-3);
            let p = prefs(gamma, 0.7, 1e5);
            let u1 = utility(c1, c_bar, &p).unwrap();
            let u2 = utility(c2, c_bar, &p).unwrap();
            let um = utility(0.5 * (c1 + c2), c_bar, &p).unwrap();
            let scale = u1.abs().max(u2.abs()).max(1.0);
            prop_assert!(um >= 0.5 * (u1 + u2) - 1e-12 * scale);
        }

        #[test]
        fn beta_zero_ignores_habit(c in 0.0f64..1e6, a in 0.0f64..1e7, b in 0.0f64..1e7) {
            let p = prefs(0.5, 0.0, 1e5);
            prop_assert_eq!(utility(c, a, &p).unwrap(), utility(c, b, &p).unwrap());
        }

        #[test]
        fn habit_recurrence_is_running_mean(cs in prop::collection::vec(0.0f64..1e6, 1..200)) {
            let mut s = HabitState::initial();
            for &c in &cs {
                s = s.advance(c);
            }
            let mean = cs.iter().sum::<f64>() / cs.len() as f64;
            prop_assert!((s.c_bar - mean).abs() <= 1e-12 * mean.max(1e-300) + 1e-300);
        }

        #[test]
        fn wealth_never_negative(
            w in 0.0f64..1e7, frac in 0.0f64..=1.0, omega in 0.0f64..=1.0, z in -40.0f64..40.0,
            dt in 1e-3f64..2.0,
        ) {
            let m = MarketParams::default();
            let c = frac * w / dt;
            prop_assert!(wealth_step(w, c, omega, z, dt, &m).unwrap() >= 0.0);
        }

        #[test]
        fn utility_scale_covariant(c in 0.0f64..1e6, c_bar in 0.0f64..1e6, lambda in 1e-3f64..1e3) {
            // Exact whenever the scaling is by a power of two.
            let lambda = lambda.log2().round().exp2();
            let p = prefs(0.5, 0.8, 1e5);
            let q = prefs(0.5, 0.8, 1e5 * lambda);
            prop_assert_eq!(
                utility(lambda * c, lambda * c_bar, &q).unwrap(),
                utility(c, c_bar, &p).unwrap()
            );
        }
    }
}
