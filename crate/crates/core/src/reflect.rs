//! Reflection of a wealth path at a barrier that moves with its running
//! minimum, and simulation of the equilibrium dividend process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySolution;
use crate::error::{Error, Result};
use crate::integral::lump_value;
use crate::model::ModelParams;
use crate::path::{DiscretePath, Jump};

/// A barrier `b(m, y, t)` with Lipschitz constants in `m` and `y`.
pub trait BoundaryFn {
    fn b(&self, m: f64, y: f64, t: f64) -> f64;
    fn lipschitz_m(&self) -> f64;
    fn lipschitz_y(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantBoundary(pub f64);

impl BoundaryFn for ConstantBoundary {
    fn b(&self, _m: f64, _y: f64, _t: f64) -> f64 {
        self.0
    }
    fn lipschitz_m(&self) -> f64 {
        0.0
    }
}

/// A barrier given by a closure, with caller-supplied Lipschitz constants.
pub struct FnBoundary<F> {
    pub f: F,
    pub lipschitz_m: f64,
    pub lipschitz_y: f64,
}

impl<F: Fn(f64, f64, f64) -> f64> BoundaryFn for FnBoundary<F> {
    fn b(&self, m: f64, y: f64, t: f64) -> f64 {
        (self.f)(m, y, t)
    }
    fn lipschitz_m(&self) -> f64 {
        self.lipschitz_m
    }
    fn lipschitz_y(&self) -> f64 {
        self.lipschitz_y
    }
}

impl BoundaryFn for BoundarySolution {
    fn b(&self, m: f64, _y: f64, _t: f64) -> f64 {
        self.b_at(m)
    }
    fn lipschitz_m(&self) -> f64 {
        self.b_slope.iter().fold(0.0, |acc, d| acc.max(d.abs()))
    }
}

/// Reflection below a constant barrier: `k = y0 + running max of (x - b)^+`
/// and `w = x - (k - y0)`.
pub fn skorokhod_fixed(x: &[f64], b: f64, y0: f64) -> (Vec<f64>, Vec<f64>) {
    let mut push = 0.0f64;
    let mut w = Vec::with_capacity(x.len());
    let mut k = Vec::with_capacity(x.len());
    for &xi in x {
        push = push.max(xi - b);
        w.push(xi - push);
        k.push(y0 + push);
    }
    (w, k)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Largest ratio of successive inner residuals.
    pub contraction: f64,
    pub final_residual: f64,
    /// `L_m + L_d >= 1`: convergence is not guaranteed.
    pub lipschitz_warning: bool,
}

fn running_min(w: &[f64], m0: f64) -> Vec<f64> {
    let mut m = m0;
    w.iter()
        .map(|&v| {
            m = m.min(v);
            m
        })
        .collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reflection below `b(M, y, t)` by fixed-point iteration: the inner map
/// updates the reflected path for a frozen control argument, the outer one
/// feeds the resulting control back into the barrier.
pub fn skorokhod_moving<B: BoundaryFn + ?Sized>(
    t: &[f64],
    x: &[f64],
    boundary: &B,
    m0: f64,
    y0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DiscretePath, FixedPointStats)> {
    if t.len() != x.len() || x.is_empty() {
        return Err(Error::MalformedPath("time and input lengths differ or are empty".into()));
    }
    if x[0] > boundary.b(m0, y0, t[0]) {
        return Err(Error::InvalidInitial {
            x0: x[0],
            m0,
            reason: "input starts above the barrier",
        });
    }
    let n = x.len();
    let mut stats = FixedPointStats {
        outer_iterations: 0,
        inner_iterations: 0,
        contraction: 0.0,
        final_residual: 0.0,
        lipschitz_warning: boundary.lipschitz_m() + boundary.lipschitz_y() >= 1.0,
    };
    let mut l = vec![y0; n];
    let mut w: Vec<f64> = (0..n).map(|j| x[j].min(boundary.b(m0, l[j], t[j]))).collect();
    let mut k = vec![y0; n];
    for outer in 1..=max_iter {
        stats.outer_iterations = outer;
        let mut prev_res = f64::NAN;
        let mut converged = false;
        for _ in 0..max_iter {
            stats.inner_iterations += 1;
            let m = running_min(&w, m0);
            let mut push = 0.0f64;
            let mut next = Vec::with_capacity(n);
            for j in 0..n {
                push = push.max(x[j] - boundary.b(m[j], l[j], t[j]));
                next.push(x[j] - push);
                k[j] = y0 + push;
            }
            let res = sup_diff(&next, &w);
            w = next;
            if prev_res > 0.0 && res > 0.0 {
                stats.contraction = stats.contraction.max(res / prev_res);
            }
            prev_res = res;
            stats.final_residual = res;
            if res < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: stats.inner_iterations,
                residual: stats.final_residual,
                contraction: stats.contraction,
            });
        }
        let outer_res = sup_diff(&k, &l);
        l.clone_from(&k);
        if outer_res < tol {
            let m = running_min(&w, m0);
            let path = DiscretePath {
                t: t.to_vec(),
                bankrupt_at: w.iter().position(|&v| v <= 0.0),
                x: w,
                m,
                d: k,
                d_initial: y0,
                jumps: Vec::new(),
            };
            return Ok((path, stats));
        }
        stats.final_residual = outer_res;
    }
    Err(Error::NoConvergence {
        iterations: stats.inner_iterations,
        residual: stats.final_residual,
        contraction: stats.contraction,
    })
}

/// Per-step discretisation of the reflected diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exact Gaussian increment, reflection and ruin checked on the grid.
    Euler,
    /// Exact increment plus the Brownian-bridge maximum and minimum inside
    /// each step, which drive the reflection and the ruin check.
    #[default]
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
}

impl SimSettings {
    pub fn new(dt: f64, horizon: f64) -> Self {
        SimSettings {
            dt,
            horizon,
            scheme: Scheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive and finite"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Deviation from the equilibrium law at the start of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Deviation {
    #[default]
    None,
    /// Pay this much on top of the equilibrium lump at time zero.
    ExtraLump(f64),
    /// Pay nothing before this time, then follow the equilibrium law.
    Pause(f64),
}

/// Observer of a simulated path.
pub trait PathSink {
    /// Lump paid at grid index `k`, time `t`.
    fn lump(&mut self, k: usize, t: f64, jump: &Jump);
    /// State at grid index `k` after any lump there.
    fn row(&mut self, k: usize, t: f64, x: f64, m: f64, d: f64);
    fn ruined(&mut self, _k: usize) {}
}

/// Path-averaged dividend payoff accumulated online; equal to
/// `diamond_integral` with `g = c(m)` on the recorded path.
pub struct PayoffSink<'a> {
    params: &'a ModelParams,
    pub total: f64,
    pub dividends: f64,
    prev: Option<(f64, f64, f64)>,
    lumped: f64,
}

impl<'a> PayoffSink<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        PayoffSink {
            params,
            total: 0.0,
            dividends: 0.0,
            prev: None,
            lumped: 0.0,
        }
    }
}

impl PathSink for PayoffSink<'_> {
    fn lump(&mut self, _k: usize, t: f64, jump: &Jump) {
        self.total += self.params.beta(t) * lump_value(jump.pre_x, jump.pre_m, jump.size, self.params);
        self.lumped += jump.size;
        self.dividends += jump.size;
    }

    fn row(&mut self, _k: usize, t: f64, _x: f64, m: f64, d: f64) {
        if let Some((t0, m0, d0)) = self.prev {
            let dd = d - d0 - self.lumped;
            if dd > 0.0 {
                self.total += self.params.beta(t0) * self.params.cost(m0) * dd;
                self.dividends += dd;
            }
        }
        self.lumped = 0.0;
        self.prev = Some((t, m, d));
    }
}

/// Records the full path.
#[derive(Default)]
pub struct RecordSink {
    pub path: Option<DiscretePath>,
    t: Vec<f64>,
    x: Vec<f64>,
    m: Vec<f64>,
    d: Vec<f64>,
    jumps: Vec<Jump>,
    bankrupt_at: Option<usize>,
}

impl RecordSink {
    pub fn finish(self) -> DiscretePath {
        DiscretePath {
            t: self.t,
            x: self.x,
            m: self.m,
            d: self.d,
            d_initial: 0.0,
            jumps: self.jumps,
            bankrupt_at: self.bankrupt_at,
        }
    }
}

impl PathSink for RecordSink {
    fn lump(&mut self, _k: usize, _t: f64, jump: &Jump) {
        self.jumps.push(*jump);
    }
    fn row(&mut self, _k: usize, t: f64, x: f64, m: f64, d: f64) {
        self.t.push(t);
        self.x.push(x);
        self.m.push(m);
        self.d.push(d);
    }
    fn ruined(&mut self, k: usize) {
        self.bankrupt_at = Some(k);
    }
}

impl<A: PathSink, B: PathSink> PathSink for (A, B) {
    fn lump(&mut self, k: usize, t: f64, jump: &Jump) {
        self.0.lump(k, t, jump);
        self.1.lump(k, t, jump);
    }
    fn row(&mut self, k: usize, t: f64, x: f64, m: f64, d: f64) {
        self.0.row(k, t, x, m, d);
        self.1.row(k, t, x, m, d);
    }
    fn ruined(&mut self, k: usize) {
        self.0.ruined(k);
        self.1.ruined(k);
    }
}

/// Size of the lump that takes `(x, m)` onto the barrier, where the barrier
/// is read at the minimum reached during the lump. Zero below the barrier.
pub fn lump_to_barrier<B: Fn(f64) -> f64>(x: f64, m: f64, barrier: B) -> f64 {
    let h = |size: f64| x - size - barrier(m.min(x - size));
    if h(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, x);
    if h(hi) > 0.0 {
        return x;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// RNG for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Equilibrium dividend simulation on a fixed barrier.
pub struct Simulator<'a> {
    pub boundary: &'a BoundarySolution,
    pub params: &'a ModelParams,
    pub settings: SimSettings,
}

impl<'a> Simulator<'a> {
    pub fn new(
        boundary: &'a BoundarySolution,
        params: &'a ModelParams,
        settings: SimSettings,
    ) -> Result<Self> {
        settings.validate()?;
        Ok(Simulator {
            boundary,
            params,
            settings,
        })
    }

    fn check_start(x0: f64, m0: f64) -> Result<()> {
        if !(m0 >= 0.0 && m0.is_finite()) {
            return Err(Error::InvalidInitial {
                x0,
                m0,
                reason: "minimum must be non-negative",
            });
        }
        if !(x0 >= m0 && x0.is_finite()) {
            return Err(Error::InvalidInitial {
                x0,
                m0,
                reason: "wealth below its running minimum",
            });
        }
        Ok(())
    }

    /// Runs one path from `(x0, m0)` with random stream `rng`, reporting to
    /// `sink`.
    pub fn run<S: PathSink>(
        &self,
        x0: f64,
        m0: f64,
        deviation: Deviation,
        rng: &mut ChaCha8Rng,
        sink: &mut S,
    ) -> Result<()> {
        Self::check_start(x0, m0)?;
        let p = self.params;
        let SimSettings { dt, scheme, .. } = self.settings;
        let steps = self.settings.steps();
        let (drift, vol) = (p.mu * dt, p.sigma * dt.sqrt());
        let two_var = 2.0 * p.sigma * p.sigma * dt;
        let barrier = |m: f64| self.boundary.b_at(m);
        let pause_until = match deviation {
            Deviation::Pause(h) => h,
            _ => 0.0,
        };
        let paused = |t: f64| t < pause_until - 1e-9 * dt;

        let (mut x, mut m, mut d) = (x0, m0.min(x0), 0.0);
        if x <= 0.0 {
            sink.row(0, 0.0, x, m, d);
            sink.ruined(0);
            return Ok(());
        }
        let mut b = barrier(m);
        if !paused(0.0) {
            let mut size = lump_to_barrier(x, m, barrier);
            if let Deviation::ExtraLump(extra) = deviation {
                size = (size + extra).min(x);
            }
            if size > 0.0 {
                let jump = Jump {
                    index: 0,
                    size,
                    pre_x: x,
                    pre_m: m,
                    pre_y: d,
                };
                sink.lump(0, 0.0, &jump);
                x -= size;
                d += size;
                if x < m {
                    m = x;
                    b = barrier(m);
                }
            }
        }
        sink.row(0, 0.0, x, m, d);
        if x <= 0.0 {
            sink.ruined(0);
            return Ok(());
        }

        for k in 1..=steps {
            let t_prev = (k - 1) as f64 * dt;
            let t = k as f64 * dt;
            let z: f64 = rng.sample(StandardNormal);
            let u_max = 1.0 - rng.gen::<f64>();
            let u_min = 1.0 - rng.gen::<f64>();
            let end = x + drift + vol * z;
            let (hi, lo) = match scheme {
                Scheme::Euler => (end, end),
                Scheme::Bridge => {
                    let span = end - x;
                    let hi = 0.5 * (x + end + (span * span - two_var * u_max.ln()).sqrt());
                    let lo = 0.5 * (x + end - (span * span - two_var * u_min.ln()).sqrt());
                    (hi, lo)
                }
            };
            if lo <= 0.0 {
                sink.row(k, t, 0.0, 0.0, d);
                sink.ruined(k);
                return Ok(());
            }
            if lo < m {
                m = lo;
                b = barrier(m);
            }
            let reflecting = !paused(t_prev);
            let push = if reflecting { (hi - b).max(0.0) } else { 0.0 };
            x = end - push;
            d += push;
            if x < m {
                m = x;
                b = barrier(m);
            }
            if !reflecting && !paused(t) {
                // The pause ends here: settle with a lump if above the barrier.
                let size = lump_to_barrier(x, m, barrier);
                if size > 0.0 {
                    let jump = Jump {
                        index: k,
                        size,
                        pre_x: x,
                        pre_m: m,
                        pre_y: d,
                    };
                    sink.lump(k, t, &jump);
                    x -= size;
                    d += size;
                    if x < m {
                        m = x;
                        b = barrier(m);
                    }
                }
            }
            sink.row(k, t, x, m, d);
        }
        Ok(())
    }

    /// Path-averaged payoff of one path.
    pub fn payoff(&self, x0: f64, m0: f64, deviation: Deviation, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut sink = PayoffSink::new(self.params);
        self.run(x0, m0, deviation, rng, &mut sink)?;
        Ok(sink.total)
    }
}

/// One equilibrium path from `(x0, m0)`, path index 0 of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_equilibrium(
    boundary: &BoundarySolution,
    params: &ModelParams,
    x0: f64,
    m0: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<DiscretePath> {
    simulate_path(boundary, params, x0, m0, &SimSettings::new(dt, horizon), seed, 0)
}

pub fn simulate_path(
    boundary: &BoundarySolution,
    params: &ModelParams,
    x0: f64,
    m0: f64,
    settings: &SimSettings,
    seed: u64,
    index: u64,
) -> Result<DiscretePath> {
    let sim = Simulator::new(boundary, params, *settings)?;
    let mut rng = path_rng(seed, index);
    let mut sink = RecordSink::default();
    sim.run(x0, m0, Deviation::None, &mut rng, &mut sink)?;
    Ok(sink.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::integrate_boundary;
    use crate::integral::{diamond_integral, DividendValue};
    use crate::model::{CostThreshold, LambdaQuad};
    use proptest::prelude::*;

    #[test]
    fn fixed_reflector_by_hand() {
        let (w, k) = skorokhod_fixed(&[0.0, 2.0, 1.0], 1.0, 0.0);
        assert_eq!(k, vec![0.0, 1.0, 1.0]);
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
        let (w, k) = skorokhod_fixed(&[0.1, 0.5, -0.3], 1.0, 2.0);
        assert_eq!(w, vec![0.1, 0.5, -0.3]);
        assert_eq!(k, vec![2.0; 3]);
    }

    #[test]
    fn moving_reflector_hand_case() {
        let b = FnBoundary {
            f: |m: f64, _y: f64, _t: f64| 1.2 - 0.5 * (0.5 - m).max(0.0),
            lipschitz_m: 0.5,
            lipschitz_y: 0.0,
        };
        let (path, stats) = skorokhod_moving(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.9], &b, 0.5, 0.0, 1e-14, 100).unwrap();
        let expected = [0.0, 0.95, 0.85];
        for (w, e) in path.x.iter().zip(expected) {
            assert!((w - e).abs() < 1e-14);
        }
        assert!(!stats.lipschitz_warning);
    }

    fn fig3() -> (BoundarySolution, ModelParams) {
        let l = LambdaQuad::new(-2.5, 0.5, -3.0, 1.0).unwrap();
        let p = ModelParams::from_lambda(&l, 1.0, 0.5, 0.2, CostThreshold::Unbounded).unwrap();
        (integrate_boundary(&p, &l, 1e-3).unwrap(), p)
    }

    #[test]
    fn lump_reaches_the_barrier() {
        let (sol, _) = fig3();
        let b = |m: f64| sol.b_at(m);
        let size = lump_to_barrier(1.5, 0.3, b);
        assert!((1.5 - size - sol.b_at(0.3)).abs() < 1e-11);
        // From beyond m* the lump lands on the diagonal point.
        let size = lump_to_barrier(1.0, 0.9, b);
        assert!((1.0 - size - sol.m_star).abs() < 1e-9);
        assert_eq!(lump_to_barrier(0.5, 0.3, b), 0.0);
    }

    #[test]
    fn streamed_payoff_matches_the_path_integral() {
        let (sol, p) = fig3();
        let settings = SimSettings::new(1e-3, 5.0);
        let sim = Simulator::new(&sol, &p, settings).unwrap();
        for (i, (x0, m0)) in [(0.8, 0.4), (1.4, 0.2), (0.3, 0.1)].into_iter().enumerate() {
            let mut rng = path_rng(7, i as u64);
            let mut sinks = (PayoffSink::new(&p), RecordSink::default());
            sim.run(x0, m0, Deviation::None, &mut rng, &mut sinks).unwrap();
            let (pay, rec) = sinks;
            let path = rec.finish();
            let integral = diamond_integral(&path, &DividendValue(&p), 0.0, &p).unwrap();
            assert!((pay.total - integral).abs() < 1e-12, "{} vs {}", pay.total, integral);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let (sol, p) = fig3();
        let s = SimSettings::new(1e-3, 2.0);
        let a = simulate_path(&sol, &p, 0.8, 0.4, &s, 11, 3).unwrap();
        let b = simulate_path(&sol, &p, 0.8, 0.4, &s, 11, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&sol, &p, 0.8, 0.4, &s, 11, 4).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn fixed_reflector_decomposes_the_input(
            incs in proptest::collection::vec(-0.1f64..0.1, 1..200),
            b in 0.0f64..1.0,
        ) {
            let mut x = vec![0.0];
            for d in incs {
                let last = *x.last().unwrap();
                x.push(last + d);
            }
            let (w, k) = skorokhod_fixed(&x, b, 0.0);
            for j in 0..x.len() {
                let ulp = 4.0 * f64::EPSILON * (1.0 + x[j].abs() + k[j].abs());
                prop_assert!((w[j] + k[j] - x[j]).abs() <= ulp);
                prop_assert!(w[j] <= b + ulp);
                if j > 0 && k[j] > k[j - 1] {
                    prop_assert!((w[j] - b).abs() <= ulp);
                }
            }
        }
    }
}
