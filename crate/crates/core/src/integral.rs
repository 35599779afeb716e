//! Path-averaging integrals against a singular control and against the
//! decrements of the running minimum.
//!
//! A lump of size `dd` paid from wealth `x` with running minimum `m` is
//! valued as if paid continuously: the first `min(x - m, dd)` units are
//! valued at minimum `m`, the remainder at the moving minimum `x - u`.

use crate::error::Result;
use crate::model::{cost_antiderivative, cost_c, ModelParams};
use crate::path::{DiscretePath, Jump};
use crate::quad::adaptive_simpson;

/// Absolute tolerance for quadrature of jump terms.
pub const JUMP_QUAD_TOL: f64 = 1e-10;

/// Integrand `g(x, m, y, t)` of the control integral.
pub trait DiamondIntegrand {
    fn eval(&self, x: f64, m: f64, y: f64, t: f64) -> f64;

    /// Undiscounted value of a lump of size `size` paid at time `t` from
    /// state `(x, m, y)`.
    fn jump_value(&self, x: f64, m: f64, y: f64, t: f64, size: f64) -> f64 {
        let split = (x - m).min(size).max(0.0);
        let above_min = adaptive_simpson(|u| self.eval(x - u, m, y + u, t), 0.0, split, JUMP_QUAD_TOL);
        let through_min =
            adaptive_simpson(|u| self.eval(x - u, x - u, y + u, t), split, size, JUMP_QUAD_TOL);
        above_min + through_min
    }
}

impl<F> DiamondIntegrand for F
where
    F: Fn(f64, f64, f64, f64) -> f64,
{
    fn eval(&self, x: f64, m: f64, y: f64, t: f64) -> f64 {
        self(x, m, y, t)
    }
}

/// The dividend valuation `g(x, m, y, t) = c(m)`, with lumps integrated in
/// closed form.
#[derive(Debug, Clone, Copy)]
pub struct DividendValue<'a>(pub &'a ModelParams);

impl DiamondIntegrand for DividendValue<'_> {
    fn eval(&self, _x: f64, m: f64, _y: f64, _t: f64) -> f64 {
        cost_c(m, self.0)
    }

    fn jump_value(&self, x: f64, m: f64, _y: f64, _t: f64, size: f64) -> f64 {
        lump_value(x, m, size, self.0)
    }
}

/// Value of a lump `size` paid from `(x, m)` under `g = c(m)`.
pub fn lump_value(x: f64, m: f64, size: f64, params: &ModelParams) -> f64 {
    let split = (x - m).min(size).max(0.0);
    let mut value = split * cost_c(m, params);
    if size > split {
        value += cost_antiderivative(x - split, params) - cost_antiderivative(x - size, params);
    }
    value
}

/// `int beta(r - s) g(X_r, M_r, D_r, r) <> dD_r` along a sampled path.
///
/// Continuous control increments use left-point sums; flagged lumps use the
/// path-averaging rule.
pub fn diamond_integral<G: DiamondIntegrand + ?Sized>(
    path: &DiscretePath,
    g: &G,
    beta_shift: f64,
    params: &ModelParams,
) -> Result<f64> {
    path.validate_shape()?;
    path.check_control_monotone()?;
    let mut total = 0.0;
    let mut jumps = path.jumps.iter().peekable();
    for k in 0..path.len() {
        let mut lumped = 0.0;
        while let Some(j) = jumps.next_if(|j| j.index == k) {
            total += jump_term(j, path.t[k], g, beta_shift, params);
            lumped += j.size;
        }
        if k > 0 {
            let dd = path.d[k] - path.d[k - 1] - lumped;
            if dd > 0.0 {
                let (t, x, m, y) = (path.t[k - 1], path.x[k - 1], path.m[k - 1], path.d[k - 1]);
                total += params.beta(t - beta_shift) * g.eval(x, m, y, t) * dd;
            }
        }
    }
    Ok(total)
}

pub(crate) fn jump_term<G: DiamondIntegrand + ?Sized>(
    jump: &Jump,
    t: f64,
    g: &G,
    beta_shift: f64,
    params: &ModelParams,
) -> f64 {
    params.beta(t - beta_shift) * g.jump_value(jump.pre_x, jump.pre_m, jump.pre_y, t, jump.size)
}

/// `int beta(r - s) g(M_r, D_r, r) [] dM_r` along a sampled path.
///
/// The part of a lump that drags the minimum down enters with a minus
/// sign; the remaining decrements of `M` are summed at left points.
pub fn square_integral<G>(
    path: &DiscretePath,
    g: &G,
    beta_shift: f64,
    params: &ModelParams,
) -> Result<f64>
where
    G: Fn(f64, f64, f64) -> f64 + ?Sized,
{
    path.validate_shape()?;
    path.check_control_monotone()?;
    path.check_minimum_monotone()?;
    let mut total = 0.0;
    let mut jumps = path.jumps.iter().peekable();
    for k in 0..path.len() {
        let t = path.t[k];
        let mut jump_dm = 0.0;
        while let Some(j) = jumps.next_if(|j| j.index == k) {
            let split = (j.pre_x - j.pre_m).min(j.size).max(0.0);
            if j.size > split {
                let (x, y) = (j.pre_x, j.pre_y);
                let value =
                    adaptive_simpson(|u| g(x - u, y + u, t), split, j.size, JUMP_QUAD_TOL);
                total -= params.beta(t - beta_shift) * value;
                jump_dm -= j.size - split;
            }
        }
        if k > 0 {
            let dm = path.m[k] - path.m[k - 1] - jump_dm;
            if dm < 0.0 {
                let tl = path.t[k - 1];
                total += params.beta(tl - beta_shift) * g(path.m[k - 1], path.d[k - 1], tl) * dm;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostThreshold;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(q: f64, m_bar: CostThreshold) -> ModelParams {
        ModelParams::new(1.0, 1.0, 0.625, 0.875, 0.5, q, m_bar).unwrap()
    }

    fn single_jump(x: f64, m: f64, size: f64) -> DiscretePath {
        let post = x - size;
        DiscretePath {
            t: vec![0.0],
            x: vec![post],
            m: vec![m.min(post)],
            d: vec![size],
            d_initial: 0.0,
            jumps: vec![Jump {
                index: 0,
                size,
                pre_x: x,
                pre_m: m,
                pre_y: 0.0,
            }],
            bankrupt_at: None,
        }
    }

    #[test]
    fn constant_control_integrates_to_zero() {
        let p = params(0.5, CostThreshold::Unbounded);
        let path = DiscretePath {
            t: vec![0.0, 0.1, 0.2],
            x: vec![1.0, 0.9, 1.1],
            m: vec![0.5, 0.5, 0.5],
            d: vec![0.3; 3],
            d_initial: 0.3,
            jumps: vec![],
            bankrupt_at: None,
        };
        assert_eq!(diamond_integral(&path, &DividendValue(&p), 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn lump_above_the_minimum() {
        let p = params(0.0, CostThreshold::Unbounded);
        let path = single_jump(1.0, 0.5, 0.2);
        let v = diamond_integral(&path, &DividendValue(&p), 0.0, &p).unwrap();
        assert_relative_eq!(v, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn lump_through_the_minimum_closed_form_matches_quadrature() {
        // x - m = 0.1 < size: the second piece is valued at the moving minimum.
        for m_bar in [CostThreshold::Unbounded, CostThreshold::Finite(0.65)] {
            let p = params(1.7, m_bar);
            let path = single_jump(0.8, 0.7, 0.5);
            let closed = diamond_integral(&path, &DividendValue(&p), 0.0, &p).unwrap();
            let generic = |_x: f64, m: f64, _y: f64, _t: f64| cost_c(m, &p);
            let numeric = diamond_integral(&path, &generic, 0.0, &p).unwrap();
            assert_relative_eq!(closed, numeric, epsilon = 1e-10);
        }
        // Explicit antiderivative for m_bar = inf: 0.1 e^{-q 0.7} + (e^{-q 0.3} - e^{-q 0.7}) / q.
        let p = params(1.7, CostThreshold::Unbounded);
        let q = 1.7f64;
        let expected = 0.1 * (-q * 0.7).exp() + ((-q * 0.3).exp() - (-q * 0.7).exp()) / q;
        assert_relative_eq!(lump_value(0.8, 0.7, 0.5, &p), expected, epsilon = 1e-14);
    }

    #[test]
    fn lump_through_minimum_drags_square_integral() {
        let p = params(0.0, CostThreshold::Unbounded);
        let one = |_m: f64, _y: f64, _t: f64| 1.0;
        let path = single_jump(0.7, 0.5, 0.5);
        let v = square_integral(&path, &one, 0.0, &p).unwrap();
        assert_relative_eq!(v, -0.3, epsilon = 1e-12);

        // Same lump as 50 sub-lumps: the minimum only moves once the wealth
        // crosses it.
        let mut x = 0.7;
        let mut m = 0.5;
        let mut y = 0.0;
        let mut jumps = Vec::new();
        for _ in 0..50 {
            jumps.push(Jump { index: 0, size: 0.01, pre_x: x, pre_m: m, pre_y: y });
            x -= 0.01;
            m = m.min(x);
            y += 0.01;
        }
        let split = DiscretePath {
            t: vec![0.0],
            x: vec![x],
            m: vec![m],
            d: vec![y],
            d_initial: 0.0,
            jumps,
            bankrupt_at: None,
        };
        let v_split = square_integral(&split, &one, 0.0, &p).unwrap();
        assert_relative_eq!(v_split, -0.3, epsilon = 1e-10);
    }

    #[test]
    fn continuous_minimum_decrease_is_negative() {
        let p = params(0.0, CostThreshold::Unbounded);
        let path = DiscretePath {
            t: vec![0.0, 0.5, 1.0],
            x: vec![0.6, 0.45, 0.4],
            m: vec![0.5, 0.45, 0.4],
            d: vec![0.0; 3],
            d_initial: 0.0,
            jumps: vec![],
            bankrupt_at: None,
        };
        let v = square_integral(&path, &|_m: f64, _y: f64, _t: f64| 1.0, 0.0, &p).unwrap();
        let expected = -(0.05 * p.beta(0.0) + 0.05 * p.beta(0.5));
        assert_relative_eq!(v, expected, epsilon = 1e-15);
        assert!(v < 0.0);

        let flat = DiscretePath { m: vec![0.5; 3], x: vec![0.6, 0.7, 0.8], ..path };
        assert_eq!(square_integral(&flat, &|_m: f64, _y: f64, _t: f64| 1.0, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn decreasing_control_is_rejected() {
        let p = params(0.0, CostThreshold::Unbounded);
        let path = DiscretePath {
            t: vec![0.0, 1.0],
            x: vec![1.0, 1.0],
            m: vec![1.0, 1.0],
            d: vec![0.2, 0.1],
            d_initial: 0.0,
            jumps: vec![],
            bankrupt_at: None,
        };
        assert!(matches!(
            diamond_integral(&path, &DividendValue(&p), 0.0, &p),
            Err(crate::Error::NonMonotoneControl { index: 1 })
        ));
    }

    fn random_walk_path(steps: &[(f64, f64)], p: &ModelParams) -> DiscretePath {
        // (wealth increment, dividend) pairs; dividends are continuous.
        let mut t = vec![0.0];
        let mut x = vec![1.0];
        let mut m = vec![0.8f64];
        let mut d = vec![0.0];
        for (k, (dx, dd)) in steps.iter().enumerate() {
            let xn = x[k] + dx - dd;
            t.push((k + 1) as f64 * 0.01);
            m.push(m[k].min(xn));
            x.push(xn);
            d.push(d[k] + dd);
        }
        let _ = p;
        DiscretePath { t, x, m, d, d_initial: 0.0, jumps: vec![], bankrupt_at: None }
    }

    proptest! {
        #[test]
        fn splitting_a_lump_does_not_change_its_value(
            x in 0.05f64..2.0, gap in 0.0f64..1.0, size in 0.0f64..2.0, frac in 0.0f64..1.0,
            q in 0.0f64..5.0,
        ) {
            let p = params(q, CostThreshold::Finite(0.3));
            let m = (x - gap).max(0.0);
            let first = size * frac;
            let second = size - first;
            let whole = single_jump(x, m, size);
            let x1 = x - first;
            let m1 = m.min(x1);
            let split = DiscretePath {
                jumps: vec![
                    Jump { index: 0, size: first, pre_x: x, pre_m: m, pre_y: 0.0 },
                    Jump { index: 0, size: second, pre_x: x1, pre_m: m1, pre_y: first },
                ],
                ..whole.clone()
            };
            let g = |_x: f64, m: f64, _y: f64, _t: f64| cost_c(m, &p);
            let a = diamond_integral(&whole, &g, 0.0, &p).unwrap();
            let b = diamond_integral(&split, &g, 0.0, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            let c = diamond_integral(&split, &DividendValue(&p), 0.0, &p).unwrap();
            prop_assert!((a - c).abs() < 1e-9);
        }

        #[test]
        fn additive_over_concatenation(
            steps in proptest::collection::vec((-0.05f64..0.05, 0.0f64..0.02), 2..40),
            cut in 1usize..39,
        ) {
            let p = params(0.8, CostThreshold::Unbounded);
            let path = random_walk_path(&steps, &p);
            let cut = cut.min(path.len() - 1);
            let head = DiscretePath {
                t: path.t[..=cut].to_vec(), x: path.x[..=cut].to_vec(),
                m: path.m[..=cut].to_vec(), d: path.d[..=cut].to_vec(),
                d_initial: 0.0, jumps: vec![], bankrupt_at: None,
            };
            let tail = DiscretePath {
                t: path.t[cut..].to_vec(), x: path.x[cut..].to_vec(),
                m: path.m[cut..].to_vec(), d: path.d[cut..].to_vec(),
                d_initial: path.d[cut], jumps: vec![], bankrupt_at: None,
            };
            let g = DividendValue(&p);
            let whole = diamond_integral(&path, &g, 0.0, &p).unwrap();
            let parts = diamond_integral(&head, &g, 0.0, &p).unwrap()
                + diamond_integral(&tail, &g, 0.0, &p).unwrap();
            prop_assert!((whole - parts).abs() < 1e-13);
            prop_assert!(whole >= 0.0);
            let sq = square_integral(&path, &|_m: f64, _y: f64, _t: f64| 1.0, 0.0, &p).unwrap();
            prop_assert!(sq <= 0.0);
        }
    }
}
