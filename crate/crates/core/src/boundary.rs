//! The free boundary `b(m)` and its auxiliary curvature `F(m)`.
//!
//! `b(0)` is the root of a scalar equation; `(b, F)` then solve a 2x2
//! implicit ODE in the running minimum `m`, integrated with RK4 from `m = 0`
//! up to the cost threshold or the diagonal `b(m) = m`. The coefficients
//! `A1..A4` of the waiting-region value follow in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostThreshold, LambdaQuad, ModelParams};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DET_FLOOR: f64 = 1e-10;
pub const DIAG_TOL: f64 = 1e-6;
/// Step-doubling threshold above which a step is recomputed as two halves.
pub const LOCAL_TOL: f64 = 1e-9;

/// `(hi^2 e^{-lo b} - lo^2 e^{-hi b}) / (hi e^{-lo b} - lo e^{-hi b})` for a
/// root pair `lo < 0 < hi`, scaled so no exponential overflows.
fn pair_ratio(lo: f64, hi: f64, b: f64) -> f64 {
    if b >= 0.0 {
        let r = ((lo - hi) * b).exp();
        (hi * hi - lo * lo * r) / (hi - lo * r)
    } else {
        let s = ((hi - lo) * b).exp();
        (hi * hi * s - lo * lo) / (hi * s - lo)
    }
}

/// Root of a single pair ratio: `ln(lo^2 / hi^2) / (hi - lo)`.
pub fn pair_root(lo: f64, hi: f64) -> f64 {
    (lo * lo / (hi * hi)).ln() / (hi - lo)
}

#[allow(non_snake_case)]
pub fn G_of_b(b: f64, lambda: &LambdaQuad, rho: f64) -> f64 {
    let slow = pair_ratio(lambda.lambda1, lambda.lambda2, b);
    let fast = pair_ratio(lambda.lambda3, lambda.lambda4, b);
    rho * slow + (1.0 - rho) * fast
}

/// The interval spanned by the roots of the two pair ratios, ordered.
pub fn root_bracket(lambda: &LambdaQuad) -> (f64, f64) {
    let a = pair_root(lambda.lambda3, lambda.lambda4);
    let b = pair_root(lambda.lambda1, lambda.lambda2);
    (a.min(b), a.max(b))
}

/// `b(0)`: the root of `G` by bisection on [`root_bracket`]. `G` is
/// strictly increasing, negative at the lower end and positive at the upper.
pub fn solve_b0(lambda: &LambdaQuad, rho: f64) -> Result<f64> {
    let g = |b: f64| G_of_b(b, lambda, rho);
    let (lo0, hi0) = root_bracket(lambda);
    // At rho in {0, 1} the root sits on an endpoint, where roundoff may put
    // G a hair on the wrong side.
    let pad = 1e-9 * (1.0 + lo0.abs().max(hi0.abs()));
    let (mut lo, mut hi) = (lo0 - pad, hi0 + pad);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo <= 0.0 && g_hi >= 0.0) {
        return Err(Error::BracketFailure { lo, hi, g_lo, g_hi });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if g(lo).abs() <= g(hi).abs() { lo } else { hi })
}

/// `F(0)` from the slow pair: `rho * ratio(lambda1, lambda2, b0)`.
#[allow(non_snake_case)]
pub fn F0_from_b0(b0: f64, lambda: &LambdaQuad, rho: f64) -> f64 {
    rho * pair_ratio(lambda.lambda1, lambda.lambda2, b0)
}

/// `F(0)` from the fast pair: `-(1 - rho) * ratio(lambda3, lambda4, b0)`.
/// Equal to [`F0_from_b0`] exactly when `G(b0) = 0`.
#[allow(non_snake_case)]
pub fn F0_from_b0_fast(b0: f64, lambda: &LambdaQuad, rho: f64) -> f64 {
    -(1.0 - rho) * pair_ratio(lambda.lambda3, lambda.lambda4, b0)
}

/// The linear system `X [b'; F'] = R` at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSystem {
    pub x11: f64,
    pub x12: f64,
    pub x21: f64,
    pub x22: f64,
    pub r1: f64,
    pub r2: f64,
}

impl OdeSystem {
    pub fn assemble(m: f64, b: f64, aux: f64, lambda: &LambdaQuad, rho: f64, q: f64) -> Self {
        let [l1, l2, l3, l4] = lambda.as_array();
        let c = (-q * m).exp();
        let e1 = (l1 * (m - b)).exp();
        let e2 = (l2 * (m - b)).exp();
        let e3 = (l3 * (m - b)).exp();
        let e4 = (l4 * (m - b)).exp();
        OdeSystem {
            x11: l1 * l2 * (rho * c * (l1 * e2 - l2 * e1) + (e1 - e2) * aux),
            x12: l1 * e2 - l2 * e1,
            x21: l3 * l4 * ((1.0 - rho) * c * (l3 * e4 - l4 * e3) - (e3 - e4) * aux),
            x22: l4 * e3 - l3 * e4,
            r1: rho * q * c * (l2 * l2 * e1 - l1 * l1 * e2),
            r2: (1.0 - rho) * q * c * (l4 * l4 * e3 - l3 * l3 * e4),
        }
    }

    pub fn det(&self) -> f64 {
        self.x11 * self.x22 - self.x21 * self.x12
    }

    /// Cramer solve; `None` when `det <= det_floor`.
    pub fn solve(&self, det_floor: f64) -> Option<(f64, f64)> {
        let det = self.det();
        if !(det > det_floor) {
            return None;
        }
        let db = (self.r1 * self.x22 - self.r2 * self.x12) / det;
        let daux = (self.x11 * self.r2 - self.x21 * self.r1) / det;
        Some((db, daux))
    }
}

/// `(b'(m), F'(m))`.
#[allow(non_snake_case)]
pub fn ode_rhs(m: f64, b: f64, F: f64, lambda: &LambdaQuad, rho: f64, q: f64) -> Result<(f64, f64)> {
    ode_rhs_with_floor(m, b, F, lambda, rho, q, DET_FLOOR)
}

#[allow(non_snake_case)]
pub fn ode_rhs_with_floor(
    m: f64,
    b: f64,
    F: f64,
    lambda: &LambdaQuad,
    rho: f64,
    q: f64,
    det_floor: f64,
) -> Result<(f64, f64)> {
    let sys = OdeSystem::assemble(m, b, F, lambda, rho, q);
    sys.solve(det_floor).ok_or(Error::SingularSystem {
        m,
        det: sys.det(),
        partial: None,
    })
}

/// `A1..A4` at one state, with `c` the cost at the (clamped) minimum.
pub fn coefficients(b: f64, aux: f64, c: f64, lambda: &LambdaQuad, rho: f64) -> [f64; 4] {
    let [l1, l2, l3, l4] = lambda.as_array();
    [
        (-l1 * b).exp() * (rho * c * l2 - aux) / (l1 * (l2 - l1)),
        (-l2 * b).exp() * (rho * c * l1 - aux) / (l2 * (l1 - l2)),
        (-l3 * b).exp() * ((1.0 - rho) * c * l4 + aux) / (l3 * (l4 - l3)),
        (-l4 * b).exp() * ((1.0 - rho) * c * l3 + aux) / (l4 * (l3 - l4)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Integrated up to the cost threshold; constant beyond it.
    Threshold,
    /// The boundary met the diagonal `b(m) = m`.
    Diagonal,
    /// `det(X)` fell below the floor; the solution is partial.
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub step: f64,
    pub det_floor: f64,
    pub local_tol: f64,
    pub diag_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step: DEFAULT_STEP,
            det_floor: DET_FLOOR,
            local_tol: LOCAL_TOL,
            diag_tol: DIAG_TOL,
        }
    }
}

impl SolverOptions {
    pub fn with_step(step: f64) -> Self {
        SolverOptions {
            step,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("step", self.step),
            ("det_floor", self.det_floor),
            ("local_tol", self.local_tol),
            ("diag_tol", self.diag_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(field, "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Sampled boundary. Nodes up to `m_end` come from the ODE; nodes past the
/// cost threshold (out to `m_star`) repeat the threshold values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySolution {
    pub m_grid: Vec<f64>,
    pub b: Vec<f64>,
    /// Auxiliary curvature `F(m)`.
    pub aux: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    pub a4: Vec<f64>,
    /// `b'(m)` and `F'(m)` at the nodes (left derivatives at `m_end`).
    pub b_slope: Vec<f64>,
    pub aux_slope: Vec<f64>,
    pub b0: f64,
    pub f0: f64,
    pub m_star: f64,
    pub m_end: f64,
    pub det_min: f64,
    pub termination: Termination,
    pub step: f64,
    /// Steps recomputed as two halves by the local error control.
    pub halved_steps: usize,
    pub lambda: LambdaQuad,
    pub rho: f64,
    pub q: f64,
    pub m_bar: CostThreshold,
}

/// Boundary state at one running-minimum level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub b: f64,
    pub aux: f64,
    pub a: [f64; 4],
    /// Cost `c(min(m, m_bar))`.
    pub c: f64,
}

pub fn integrate_boundary(
    params: &ModelParams,
    lambda: &LambdaQuad,
    step: f64,
) -> Result<BoundarySolution> {
    integrate_boundary_with(params, lambda, &SolverOptions::with_step(step))
}

type State = [f64; 2];

struct Stepper<'a> {
    lambda: &'a LambdaQuad,
    rho: f64,
    q: f64,
    det_floor: f64,
}

impl Stepper<'_> {
    fn rhs(&self, m: f64, y: State) -> Result<State> {
        let (db, da) = ode_rhs_with_floor(m, y[0], y[1], self.lambda, self.rho, self.q, self.det_floor)?;
        Ok([db, da])
    }

    fn rk4(&self, m: f64, y: State, h: f64) -> Result<State> {
        let k1 = self.rhs(m, y)?;
        let k2 = self.rhs(m + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]])?;
        let k3 = self.rhs(m + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]])?;
        let k4 = self.rhs(m + h, [y[0] + h * k3[0], y[1] + h * k3[1]])?;
        Ok([
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ])
    }

    /// One step with a step-doubling check. Returns the state and whether
    /// the step was recomputed as two halves.
    fn step(&self, m: f64, y: State, h: f64, tol: f64) -> Result<(State, bool)> {
        let full = self.rk4(m, y, h)?;
        let mid = self.rk4(m, y, 0.5 * h)?;
        let halves = self.rk4(m + 0.5 * h, mid, 0.5 * h)?;
        let err = (full[0] - halves[0]).abs().max((full[1] - halves[1]).abs());
        if err > tol {
            Ok((halves, true))
        } else {
            Ok((full, false))
        }
    }
}

struct Builder {
    m: Vec<f64>,
    y: Vec<State>,
    dy: Vec<State>,
    det_min: f64,
    halved: usize,
}

impl Builder {
    fn push(&mut self, m: f64, y: State, sys: OdeSystem, det_floor: f64) -> Result<()> {
        let det = sys.det();
        let (db, da) = sys.solve(det_floor).ok_or(Error::SingularSystem {
            m,
            det,
            partial: None,
        })?;
        self.det_min = self.det_min.min(det);
        self.m.push(m);
        self.y.push(y);
        self.dy.push([db, da]);
        Ok(())
    }
}

pub fn integrate_boundary_with(
    params: &ModelParams,
    lambda: &LambdaQuad,
    opts: &SolverOptions,
) -> Result<BoundarySolution> {
    opts.validate()?;
    params.validate()?;
    let (rho, q) = (params.rho, params.q);
    let b0 = solve_b0(lambda, rho)?;
    let f0 = F0_from_b0(b0, lambda, rho);
    let stepper = Stepper {
        lambda,
        rho,
        q,
        det_floor: opts.det_floor,
    };
    let h = opts.step;
    let m_limit = params.m_bar.finite().unwrap_or(f64::INFINITY);

    let mut out = Builder {
        m: Vec::new(),
        y: Vec::new(),
        dy: Vec::new(),
        det_min: f64::INFINITY,
        halved: 0,
    };
    let assemble = |m: f64, y: State| OdeSystem::assemble(m, y[0], y[1], lambda, rho, q);

    let finish_partial = |out: Builder, m: f64, det: f64| -> Error {
        let partial = build_solution(out, params, lambda, opts, b0, f0, Termination::Singular);
        Error::SingularSystem {
            m,
            det,
            partial: Some(Box::new(partial)),
        }
    };

    let y0 = [b0, f0];
    if let Err(e) = out.push(0.0, y0, assemble(0.0, y0), opts.det_floor) {
        return Err(match e {
            Error::SingularSystem { m, det, .. } => finish_partial(out, m, det),
            e => e,
        });
    }

    let mut k: usize = 0;
    let termination = loop {
        let m = out.m[out.m.len() - 1];
        let y = out.y[out.y.len() - 1];
        let gap = y[0] - m;
        if gap <= opts.diag_tol {
            break Termination::Diagonal;
        }
        let next_nominal = (k + 1) as f64 * h;
        let to_limit = m_limit - m;
        let s = (next_nominal - m).min(to_limit);
        let m_next = if to_limit <= next_nominal - m { m_limit } else { next_nominal };
        let result = stepper.step(m, y, s, opts.local_tol).and_then(|(y1, halved)| {
            if y1[0] - m_next > opts.diag_tol {
                out.halved += halved as usize;
                Ok((m_next, y1, false))
            } else {
                // Crossed (or touched) the diagonal within this step.
                diagonal_or_limit(&stepper, m, y, s, opts)
                    .map(|(ds, y1, hit)| (if hit { m + ds } else { m_next }, y1, hit))
            }
        });
        let (m1, y1, hit) = match result {
            Ok(v) => v,
            Err(Error::SingularSystem { m, det, .. }) => return Err(finish_partial(out, m, det)),
            Err(e) => return Err(e),
        };
        if let Err(Error::SingularSystem { m, det, .. }) = out.push(m1, y1, assemble(m1, y1), opts.det_floor) {
            return Err(finish_partial(out, m, det));
        }
        k += 1;
        if hit {
            break Termination::Diagonal;
        }
        if m1 >= m_limit {
            break Termination::Threshold;
        }
    };
    Ok(build_solution(out, params, lambda, opts, b0, f0, termination))
}

/// Steps from `m` over at most `span`, stopping at the diagonal if it is
/// met first. Returns the sub-step taken, the state and whether the
/// diagonal was hit.
fn diagonal_or_limit(
    stepper: &Stepper<'_>,
    m: f64,
    y: State,
    span: f64,
    opts: &SolverOptions,
) -> Result<(f64, State, bool)> {
    let gap_after = |s: f64| -> Result<(f64, State)> {
        let y1 = sub_step(stepper, m, y, s, opts)?;
        Ok((y1[0] - (m + s), y1))
    };
    let (g_end, y_end) = gap_after(span)?;
    if g_end > 0.0 {
        return Ok((span, y_end, false));
    }
    let (mut lo, mut hi) = (0.0, span);
    let mut y_hi = y_end;
    while hi - lo > 1e-15 * (1.0 + m) {
        let mid = 0.5 * (lo + hi);
        let (g, y_mid) = gap_after(mid)?;
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            y_hi = y_mid;
        }
    }
    Ok((hi, y_hi, true))
}

/// RK4 over `s` in pieces no longer than `opts.step`.
fn sub_step(stepper: &Stepper<'_>, m: f64, y: State, s: f64, opts: &SolverOptions) -> Result<State> {
    let pieces = (s / opts.step).ceil().max(1.0) as usize;
    let h = s / pieces as f64;
    let mut y = y;
    for i in 0..pieces {
        y = stepper.step(m + i as f64 * h, y, h, opts.local_tol)?.0;
    }
    Ok(y)
}

fn build_solution(
    out: Builder,
    params: &ModelParams,
    lambda: &LambdaQuad,
    opts: &SolverOptions,
    b0: f64,
    f0: f64,
    termination: Termination,
) -> BoundarySolution {
    let Builder {
        mut m,
        y,
        dy,
        det_min,
        halved,
    } = out;
    let mut b: Vec<f64> = y.iter().map(|s| s[0]).collect();
    let mut aux: Vec<f64> = y.iter().map(|s| s[1]).collect();
    let mut b_slope: Vec<f64> = dy.iter().map(|s| s[0]).collect();
    let mut aux_slope: Vec<f64> = dy.iter().map(|s| s[1]).collect();
    let m_end = *m.last().unwrap_or(&0.0);
    let b_end = *b.last().unwrap_or(&b0);
    let aux_end = *aux.last().unwrap_or(&f0);

    let m_star = match termination {
        Termination::Threshold => {
            // Constant extension out to where it meets the diagonal.
            let mut j = 1;
            loop {
                let mj = m_end + j as f64 * opts.step;
                if mj >= b_end - 1e-12 * opts.step {
                    break;
                }
                m.push(mj);
                b.push(b_end);
                aux.push(aux_end);
                b_slope.push(0.0);
                aux_slope.push(0.0);
                j += 1;
            }
            if b_end > m_end {
                m.push(b_end);
                b.push(b_end);
                aux.push(aux_end);
                b_slope.push(0.0);
                aux_slope.push(0.0);
            }
            b_end.max(m_end)
        }
        Termination::Diagonal => m_end,
        Termination::Singular => m_end,
    };

    let (rho, q) = (params.rho, params.q);
    let mut a = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for k in 0..m.len() {
        let c = (-q * m[k].min(m_end)).exp();
        let coef = coefficients(b[k], aux[k], c, lambda, rho);
        for i in 0..4 {
            a[i].push(coef[i]);
        }
    }
    let [a1, a2, a3, a4] = a;
    BoundarySolution {
        m_grid: m,
        b,
        aux,
        a1,
        a2,
        a3,
        a4,
        b_slope,
        aux_slope,
        b0,
        f0,
        m_star,
        m_end,
        det_min,
        termination,
        step: opts.step,
        halved_steps: halved,
        lambda: *lambda,
        rho,
        q,
        m_bar: params.m_bar,
    }
}

impl BoundarySolution {
    pub fn len(&self) -> usize {
        self.m_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_grid.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.termination == Termination::Singular
    }

    pub fn coefficients_at_node(&self, k: usize) -> [f64; 4] {
        [self.a1[k], self.a2[k], self.a3[k], self.a4[k]]
    }

    /// Cell `k` with `m_grid[k] <= m <= m_grid[k + 1]`.
    fn cell(&self, m: f64) -> usize {
        let n = self.m_grid.len();
        let guess = ((m / self.step) as usize).min(n - 2);
        if self.m_grid[guess] <= m && m <= self.m_grid[guess + 1] {
            return guess;
        }
        self.m_grid.partition_point(|&g| g <= m).clamp(1, n - 1) - 1
    }

    /// Boundary state at `m`. Past `m_end` the values are frozen at the
    /// last integrated node; below zero they are those at zero.
    ///
    /// Between nodes `b` is a monotone cubic Hermite interpolant and `F` a
    /// cubic Hermite interpolant, both on the exact ODE slopes; the
    /// coefficients follow from `(b, F)` in closed form, so the smooth-fit
    /// identities hold at every `m`, not only at nodes.
    pub fn eval(&self, m: f64) -> BoundaryPoint {
        let m_eval = m.clamp(0.0, self.m_end);
        let (b, aux) = if self.len() < 2 || m_eval >= self.m_end {
            let k = self.m_grid.partition_point(|&g| g <= self.m_end).max(1) - 1;
            (self.b[k], self.aux[k])
        } else {
            let k = self.cell(m_eval);
            let (m0, m1) = (self.m_grid[k], self.m_grid[k + 1]);
            let w = m1 - m0;
            let t = (m_eval - m0) / w;
            let (d0, d1) = monotone_slopes(self.b[k], self.b[k + 1], self.b_slope[k], self.b_slope[k + 1], w);
            let b = hermite(self.b[k], self.b[k + 1], d0, d1, w, t);
            let aux = hermite(self.aux[k], self.aux[k + 1], self.aux_slope[k], self.aux_slope[k + 1], w, t);
            (b, aux)
        };
        let c = (-self.q * m_eval).exp();
        BoundaryPoint {
            b,
            aux,
            a: coefficients(b, aux, c, &self.lambda, self.rho),
            c,
        }
    }

    pub fn b_at(&self, m: f64) -> f64 {
        self.eval(m).b
    }

    /// Largest `A3` over the grid.
    pub fn max_a3(&self) -> f64 {
        self.a3.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fritsch-Carlson limiting of exact endpoint slopes for one cell.
fn monotone_slopes(y0: f64, y1: f64, d0: f64, d1: f64, w: f64) -> (f64, f64) {
    let secant = (y1 - y0) / w;
    if secant == 0.0 {
        return (0.0, 0.0);
    }
    let mut a = d0 / secant;
    let mut b = d1 / secant;
    if a < 0.0 {
        a = 0.0;
    }
    if b < 0.0 {
        b = 0.0;
    }
    let norm = a * a + b * b;
    if norm > 9.0 {
        let s = 3.0 / norm.sqrt();
        a *= s;
        b *= s;
    }
    (a * secant, b * secant)
}

fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, w: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y0 + h10 * w * d0 + h01 * y1 + h11 * w * d1
}

/// Residuals of the coefficient conditions along a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// `max |A1' e^{l1 m} + A2' e^{l2 m}|` by central differences.
    pub slow_pair_drift: f64,
    /// `max |A3' e^{l3 m} + A4' e^{l4 m}|` by central differences.
    pub fast_pair_drift: f64,
    /// `max |sum l_i A_i e^{l_i b} - c(m)|` over the nodes.
    pub first_order_fit: f64,
    /// `max |sum l_i^2 A_i e^{l_i b}|` over the nodes.
    pub second_order_fit: f64,
    /// Same two fits at cell midpoints through the interpolant.
    pub first_order_fit_mid: f64,
    pub second_order_fit_mid: f64,
    pub slow_pair_origin: f64,
    pub fast_pair_origin: f64,
    /// `max_k (b[k+1] - b[k])`; positive means `b` increased somewhere.
    pub max_increase: f64,
    pub max_a3: f64,
    pub det_min: f64,
}

impl BoundaryReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.slow_pair_drift,
            self.fast_pair_drift,
            self.first_order_fit,
            self.second_order_fit,
            self.first_order_fit_mid,
            self.second_order_fit_mid,
            self.slow_pair_origin,
            self.fast_pair_origin,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Smooth-fit residuals `(first order, second order)` at one state.
pub fn smooth_fit_residuals(b: f64, a: &[f64; 4], c: f64, lambda: &LambdaQuad) -> (f64, f64) {
    let l = lambda.as_array();
    let mut first = -c;
    let mut second = 0.0;
    for i in 0..4 {
        let term = a[i] * (l[i] * b).exp();
        first += l[i] * term;
        second += l[i] * l[i] * term;
    }
    (first.abs(), second.abs())
}

pub fn check_boundary_conditions(sol: &BoundarySolution) -> BoundaryReport {
    let lambda = &sol.lambda;
    let l = lambda.as_array();
    let n = sol.len();
    let mut report = BoundaryReport {
        slow_pair_drift: 0.0,
        fast_pair_drift: 0.0,
        first_order_fit: 0.0,
        second_order_fit: 0.0,
        first_order_fit_mid: 0.0,
        second_order_fit_mid: 0.0,
        slow_pair_origin: (sol.a1[0] + sol.a2[0]).abs(),
        fast_pair_origin: (sol.a3[0] + sol.a4[0]).abs(),
        max_increase: sol.b.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max),
        max_a3: sol.max_a3(),
        det_min: sol.det_min,
    };
    if n < 2 {
        report.max_increase = 0.0;
    }
    let cost = |m: f64| (-sol.q * m.min(sol.m_end)).exp();
    for k in 0..n {
        let a = sol.coefficients_at_node(k);
        let (r1, r2) = smooth_fit_residuals(sol.b[k], &a, cost(sol.m_grid[k]), lambda);
        report.first_order_fit = report.first_order_fit.max(r1);
        report.second_order_fit = report.second_order_fit.max(r2);
    }
    for k in 0..n.saturating_sub(1) {
        let mid = 0.5 * (sol.m_grid[k] + sol.m_grid[k + 1]);
        let p = sol.eval(mid);
        let (r1, r2) = smooth_fit_residuals(p.b, &p.a, p.c, lambda);
        report.first_order_fit_mid = report.first_order_fit_mid.max(r1);
        report.second_order_fit_mid = report.second_order_fit_mid.max(r2);
    }
    // Central differences on the ODE range only; the constant extension
    // starts with a kink at m_end.
    let a = [&sol.a1, &sol.a2, &sol.a3, &sol.a4];
    for k in 1..n.saturating_sub(1) {
        if sol.m_grid[k + 1] > sol.m_end {
            break;
        }
        let (mp, m0, mn) = (sol.m_grid[k - 1], sol.m_grid[k], sol.m_grid[k + 1]);
        let (hl, hr) = (m0 - mp, mn - m0);
        let deriv = |v: &Vec<f64>| {
            // Three-point formula, exact for quadratics on uneven spacing.
            (v[k + 1] * hl * hl - v[k - 1] * hr * hr + v[k] * (hr * hr - hl * hl)) / (hl * hr * (hl + hr))
        };
        let d: Vec<f64> = a.iter().map(|v| deriv(v)).collect();
        let slow = d[0] * (l[0] * m0).exp() + d[1] * (l[1] * m0).exp();
        let fast = d[2] * (l[2] * m0).exp() + d[3] * (l[3] * m0).exp();
        report.slow_pair_drift = report.slow_pair_drift.max(slow.abs());
        report.fast_pair_drift = report.fast_pair_drift.max(fast.abs());
    }
    report
}
