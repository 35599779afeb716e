//! Model parameters, the pseudo-exponential discount, the scarring cost and
//! the characteristic-root algebra of the arithmetic Brownian wealth process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wealth level below which the running minimum starts to depress the
/// marginal value of dividends. `Unbounded` means the cost never saturates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostThreshold {
    Finite(f64),
    Unbounded,
}

impl CostThreshold {
    pub fn finite(self) -> Option<f64> {
        match self {
            CostThreshold::Finite(v) => Some(v),
            CostThreshold::Unbounded => None,
        }
    }

    /// `min(m, m_bar)`.
    #[inline]
    pub fn clamp(self, m: f64) -> f64 {
        match self {
            CostThreshold::Finite(v) => m.min(v),
            CostThreshold::Unbounded => m,
        }
    }

    pub fn is_beyond(self, m: f64) -> bool {
        matches!(self, CostThreshold::Finite(v) if m >= v)
    }
}

impl std::fmt::Display for CostThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostThreshold::Finite(v) => write!(f, "{v}"),
            CostThreshold::Unbounded => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub q: f64,
    pub m_bar: CostThreshold,
}

impl ModelParams {
    pub fn new(
        mu: f64,
        sigma: f64,
        delta: f64,
        gamma: f64,
        rho: f64,
        q: f64,
        m_bar: CostThreshold,
    ) -> Result<Self> {
        let params = ModelParams {
            mu,
            sigma,
            delta,
            gamma,
            rho,
            q,
            m_bar,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds parameters from a root quadruple; drift and discount rates are
    /// implied by the roots and `sigma`.
    pub fn from_lambda(
        lambda: &LambdaQuad,
        sigma: f64,
        rho: f64,
        q: f64,
        m_bar: CostThreshold,
    ) -> Result<Self> {
        let (mu, delta, gamma) = model_from_lambda(lambda, sigma)?;
        ModelParams::new(mu, sigma, delta, gamma, rho, q, m_bar)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::param("mu", "must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive and finite"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param("delta", "must be positive and finite"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param("rho", "must lie in [0, 1]"));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::param("q", "must be non-negative and finite"));
        }
        if let CostThreshold::Finite(v) = self.m_bar {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param("m_bar", "must be positive (or unbounded)"));
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> LambdaQuad {
        lambda_from_model(self.mu, self.sigma, self.delta, self.gamma)
    }

    pub fn beta(&self, t: f64) -> f64 {
        beta(t, self)
    }

    pub fn cost(&self, m: f64) -> f64 {
        cost_c(m, self)
    }

    /// Mixture of the two discount rates, `rho*delta + (1-rho)*(delta+gamma)`.
    pub fn mean_rate(&self) -> f64 {
        self.rho * self.delta + (1.0 - self.rho) * (self.delta + self.gamma)
    }

    /// Upper bound on `rho` under which the coefficient `A3` stays non-positive.
    pub fn rho_bound(&self) -> f64 {
        let slow = (self.mu * self.mu + 2.0 * self.sigma * self.sigma * self.delta).sqrt();
        let fast =
            (self.mu * self.mu + 2.0 * self.sigma * self.sigma * (self.delta + self.gamma)).sqrt();
        (-self.mu + fast) / (slow + fast)
    }

    /// Default simulation horizon `40 / delta`.
    pub fn default_horizon(&self) -> f64 {
        40.0 / self.delta
    }
}

/// Pseudo-exponential discount `rho e^{-delta t} + (1-rho) e^{-(delta+gamma) t}`.
///
/// Negative `t` is clamped to zero; callers only discount forward in time.
pub fn beta(t: f64, params: &ModelParams) -> f64 {
    debug_assert!(t >= 0.0, "discount evaluated at negative time {t}");
    let t = t.max(0.0);
    params.rho * (-params.delta * t).exp()
        + (1.0 - params.rho) * (-(params.delta + params.gamma) * t).exp()
}

/// Marginal value of one unit of dividend when the running minimum is `m`.
pub fn cost_c(m: f64, params: &ModelParams) -> f64 {
    (-params.q * params.m_bar.clamp(m)).exp()
}

/// `int_0^z c(w) dw`, continued to negative `z` by the same formula.
pub fn cost_antiderivative(z: f64, params: &ModelParams) -> f64 {
    let q = params.q;
    let primitive = |z: f64| {
        if q == 0.0 {
            z
        } else {
            -(-q * z).exp_m1() / q
        }
    };
    match params.m_bar {
        CostThreshold::Finite(mb) if z > mb => primitive(mb) + (z - mb) * (-q * mb).exp(),
        _ => primitive(z),
    }
}

/// Characteristic exponents: `lambda1, lambda2` solve
/// `sigma^2/2 l^2 + mu l = delta`, `lambda3, lambda4` the same with
/// `delta + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaQuad {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl LambdaQuad {
    /// Checks the ordering `lambda3 < lambda1 < 0 < lambda2 < lambda4`.
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        let quad = LambdaQuad {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        if ![lambda1, lambda2, lambda3, lambda4].iter().all(|v| v.is_finite()) {
            return Err(Error::param("lambda", "roots must be finite"));
        }
        if !(lambda3 < lambda1 && lambda1 < 0.0 && 0.0 < lambda2 && lambda2 < lambda4) {
            return Err(Error::param(
                "lambda",
                format!(
                    "ordering lambda3 < lambda1 < 0 < lambda2 < lambda4 violated by \
                     ({lambda1}, {lambda2}, {lambda3}, {lambda4})"
                ),
            ));
        }
        Ok(quad)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }

    /// `lambda4 / (lambda4 - lambda1)`, equal to [`ModelParams::rho_bound`]
    /// whenever the roots are consistent with a model.
    pub fn rho_bound(&self) -> f64 {
        self.lambda4 / (self.lambda4 - self.lambda1)
    }

    /// Fails when the drift implied by the roots differs from `mu`.
    pub fn check_drift(&self, sigma: f64, mu: f64) -> Result<()> {
        let implied = -sigma * sigma * (self.lambda1 + self.lambda2) / 2.0;
        let scale = 1.0 + mu.abs().max(implied.abs());
        if (implied - mu).abs() > 1e-8 * scale {
            return Err(Error::InconsistentLambda {
                sum_first: self.lambda1 + self.lambda2,
                sum_second: self.lambda3 + self.lambda4,
                implied_mu: implied,
                asserted_mu: Some(mu),
            });
        }
        Ok(())
    }
}

/// Roots of `sigma^2/2 l^2 + mu l = rate`, smaller first.
fn quadratic_roots(mu: f64, sigma: f64, rate: f64) -> (f64, f64) {
    let a = 0.5 * sigma * sigma;
    let disc = (mu * mu + 4.0 * a * rate).sqrt();
    // Cancellation-free pairing: one root from the quadratic formula, the
    // other from the product of roots.
    if mu >= 0.0 {
        let neg = (-mu - disc) / (2.0 * a);
        let pos = -rate / (a * neg);
        (neg, pos)
    } else {
        let pos = (-mu + disc) / (2.0 * a);
        let neg = -rate / (a * pos);
        (neg, pos)
    }
}

pub fn lambda_from_model(mu: f64, sigma: f64, delta: f64, gamma: f64) -> LambdaQuad {
    let (lambda1, lambda2) = quadratic_roots(mu, sigma, delta);
    let (lambda3, lambda4) = quadratic_roots(mu, sigma, delta + gamma);
    LambdaQuad {
        lambda1,
        lambda2,
        lambda3,
        lambda4,
    }
}

/// Inverts the root relations: returns `(mu, delta, gamma)`.
pub fn model_from_lambda(lambda: &LambdaQuad, sigma: f64) -> Result<(f64, f64, f64)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be positive and finite"));
    }
    let LambdaQuad {
        lambda1,
        lambda2,
        lambda3,
        lambda4,
    } = *lambda;
    LambdaQuad::new(lambda1, lambda2, lambda3, lambda4)?;
    let s2 = sigma * sigma;
    let sum_first = lambda1 + lambda2;
    let sum_second = lambda3 + lambda4;
    let implied_mu = -s2 * sum_first / 2.0;
    if (sum_first - sum_second).abs() > 1e-8 {
        return Err(Error::InconsistentLambda {
            sum_first,
            sum_second,
            implied_mu,
            asserted_mu: None,
        });
    }
    let delta = -s2 * lambda1 * lambda2 / 2.0;
    let gamma = -s2 * lambda3 * lambda4 / 2.0 - delta;
    Ok((implied_mu, delta, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(rho: f64, q: f64, m_bar: CostThreshold) -> ModelParams {
        ModelParams::new(1.0, 1.0, 0.625, 0.875, rho, q, m_bar).unwrap()
    }

    #[test]
    fn beta_at_zero_is_one() {
        for rho in [0.0, 0.3, 1.0] {
            assert_eq!(beta(0.0, &params(rho, 0.0, CostThreshold::Unbounded)), 1.0);
        }
    }

    #[test]
    fn beta_pure_exponential() {
        let p = params(1.0, 0.0, CostThreshold::Unbounded);
        assert_relative_eq!(beta(1.0, &p), (-0.625f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(beta(1.0, &p), 0.535261428518990, epsilon = 1e-12);
    }

    #[test]
    fn beta_mixture() {
        let p = params(0.5, 0.0, CostThreshold::Unbounded);
        let slow = 1.0 / 0.625f64.exp();
        let fast = 1.0 / 1.5f64.exp();
        assert_relative_eq!(beta(1.0, &p), 0.5 * slow + 0.5 * fast, epsilon = 1e-15);
    }

    #[test]
    fn cost_examples() {
        let p = params(0.5, 0.0, CostThreshold::Unbounded);
        assert_eq!(cost_c(7.0, &p), 1.0);
        let p = params(0.3, 5.0, CostThreshold::Finite(0.1));
        assert_relative_eq!(cost_c(0.05, &p), (-0.25f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(cost_c(0.3, &p), (-0.5f64).exp(), epsilon = 1e-15);
        // continuous at the threshold
        assert_relative_eq!(cost_c(0.1 - 1e-12, &p), cost_c(0.1 + 1e-12, &p), epsilon = 1e-10);
    }

    #[test]
    fn cost_antiderivative_matches_quadrature() {
        let p = params(0.3, 5.0, CostThreshold::Finite(0.1));
        let exact = crate::quad::adaptive_simpson(|z| cost_c(z, &p), -0.2, 0.4, 1e-13);
        assert_relative_eq!(
            cost_antiderivative(0.4, &p) - cost_antiderivative(-0.2, &p),
            exact,
            epsilon = 1e-11
        );
        let p = params(0.3, 0.0, CostThreshold::Unbounded);
        assert_eq!(cost_antiderivative(0.7, &p), 0.7);
    }

    #[test]
    fn roots_of_figure_parameter_sets() {
        let l = lambda_from_model(1.0, 1.0, 0.625, 0.875);
        assert_relative_eq!(l.lambda1, -2.5, epsilon = 1e-14);
        assert_relative_eq!(l.lambda2, 0.5, epsilon = 1e-14);
        assert_relative_eq!(l.lambda3, -3.0, epsilon = 1e-14);
        assert_relative_eq!(l.lambda4, 1.0, epsilon = 1e-14);

        let l = lambda_from_model(0.0, 2f64.sqrt(), 1.0, 3.0);
        for (got, want) in l.as_array().iter().zip([-1.0, 1.0, -2.0, 2.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }

        let l = lambda_from_model(1.0, 1.0, 0.625, 6.875);
        for (got, want) in l.as_array().iter().zip([-2.5, 0.5, -5.0, 3.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn inverse_root_relations() {
        let l = LambdaQuad::new(-2.5, 0.5, -3.0, 1.0).unwrap();
        let (mu, delta, gamma) = model_from_lambda(&l, 1.0).unwrap();
        assert_relative_eq!(mu, 1.0, epsilon = 1e-14);
        assert_relative_eq!(delta, 0.625, epsilon = 1e-14);
        assert_relative_eq!(gamma, 0.875, epsilon = 1e-14);
        // re-solving the quadratics recovers the roots
        let back = lambda_from_model(mu, 1.0, delta, gamma);
        for (a, b) in back.as_array().iter().zip(l.as_array()) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }

        let l = LambdaQuad::new(-1.0, 1.0, -2.0, 2.0).unwrap();
        let (mu, delta, gamma) = model_from_lambda(&l, 2f64.sqrt()).unwrap();
        assert!(mu.abs() < 1e-15);
        assert_relative_eq!(delta, 1.0, epsilon = 1e-14);
        assert_relative_eq!(gamma, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn stated_drift_conflicting_with_roots_is_rejected() {
        // Both pair sums are -1, so the roots imply mu = 0.5 at sigma = 1.
        let l = LambdaQuad::new(-2.0, 1.0, -3.0, 2.0).unwrap();
        let (mu, delta, gamma) = model_from_lambda(&l, 1.0).unwrap();
        assert_relative_eq!(mu, 0.5, epsilon = 1e-15);
        assert_relative_eq!(delta, 1.0, epsilon = 1e-15);
        assert_relative_eq!(gamma, 2.0, epsilon = 1e-15);
        match l.check_drift(1.0, 1.0) {
            Err(Error::InconsistentLambda {
                implied_mu,
                asserted_mu,
                ..
            }) => {
                assert_relative_eq!(implied_mu, 0.5);
                assert_eq!(asserted_mu, Some(1.0));
            }
            other => panic!("expected InconsistentLambda, got {other:?}"),
        }
        assert!(l.check_drift(1.0, 0.5).is_ok());
    }

    #[test]
    fn unequal_pair_sums_are_rejected() {
        let l = LambdaQuad::new(-2.0, 1.0, -3.0, 1.5).unwrap();
        assert!(matches!(
            model_from_lambda(&l, 1.0),
            Err(Error::InconsistentLambda { asserted_mu: None, .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(ModelParams::new(1.0, 0.0, 1.0, 1.0, 0.5, 0.0, CostThreshold::Unbounded).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.5, 0.0, CostThreshold::Unbounded).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.5, -1.0, CostThreshold::Unbounded).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.5, 1.0, CostThreshold::Finite(0.0)).is_err());
        // the time-consistent limits are admitted
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, CostThreshold::Unbounded).is_ok());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, CostThreshold::Unbounded).is_ok());
    }

    #[test]
    fn rho_bound_agrees_with_root_form() {
        let p = params(0.5, 0.2, CostThreshold::Unbounded);
        assert_relative_eq!(p.rho_bound(), p.lambda().rho_bound(), epsilon = 1e-14);
        assert_relative_eq!(p.rho_bound(), 1.0 / 3.5, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn roots_satisfy_their_quadratics(
            mu in -3.0f64..3.0, sigma in 0.2f64..3.0, delta in 0.05f64..4.0, gamma in 0.05f64..8.0,
        ) {
            let l = lambda_from_model(mu, sigma, delta, gamma);
            prop_assert!(l.lambda3 < l.lambda1 && l.lambda1 < 0.0);
            prop_assert!(0.0 < l.lambda2 && l.lambda2 < l.lambda4);
            let s2 = 0.5 * sigma * sigma;
            for (root, rate) in [(l.lambda1, delta), (l.lambda2, delta),
                                 (l.lambda3, delta + gamma), (l.lambda4, delta + gamma)] {
                let lhs = s2 * root * root + mu * root;
                prop_assert!((lhs - rate).abs() <= 1e-10 * rate.max(1.0));
            }
            let drift = -2.0 * mu / (sigma * sigma);
            prop_assert!((l.lambda1 + l.lambda2 - drift).abs() <= 1e-10 * drift.abs().max(1.0));
            prop_assert!((l.lambda3 + l.lambda4 - drift).abs() <= 1e-10 * drift.abs().max(1.0));
        }

        #[test]
        fn root_inversion_round_trips(
            mu in -3.0f64..3.0, sigma in 0.2f64..3.0, delta in 0.05f64..4.0, gamma in 0.05f64..8.0,
        ) {
            let l = lambda_from_model(mu, sigma, delta, gamma);
            let (mu2, delta2, gamma2) = model_from_lambda(&l, sigma).unwrap();
            prop_assert!((mu2 - mu).abs() <= 1e-10 * mu.abs().max(1.0));
            prop_assert!((delta2 - delta).abs() <= 1e-10 * delta);
            prop_assert!((gamma2 - gamma).abs() <= 1e-10 * (delta + gamma));
        }

        #[test]
        fn beta_strictly_decreasing(rho in 0.0f64..=1.0, t1 in 0.0f64..50.0, gap in 1e-3f64..10.0) {
            let p = ModelParams::new(0.3, 1.0, 0.4, 0.9, rho, 0.0, CostThreshold::Unbounded).unwrap();
            prop_assert!(beta(t1, &p) > beta(t1 + gap, &p));
            prop_assert!(beta(t1, &p) > 0.0 && beta(t1, &p) <= 1.0);
        }
    }
}
