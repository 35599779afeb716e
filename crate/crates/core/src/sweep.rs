//! Comparative statics: one boundary per parameter value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{integrate_boundary_with, BoundarySolution, SolverOptions};
use crate::config::SweepParameter;
use crate::error::Result;
use crate::model::{LambdaQuad, ModelParams};

/// Slack allowed in pointwise ordering checks.
pub const ORDER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Nondecreasing,
    Nonincreasing,
}

impl SweepParameter {
    /// How `b(m)` is expected to move as the parameter grows.
    pub fn expected_direction(self) -> Direction {
        match self {
            SweepParameter::Rho => Direction::Nondecreasing,
            SweepParameter::Q => Direction::Nonincreasing,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Rho => "rho",
            SweepParameter::Q => "q",
        }
    }

    pub fn apply(self, params: &ModelParams, value: f64) -> Result<ModelParams> {
        let mut p = *params;
        match self {
            SweepParameter::Rho => p.rho = value,
            SweepParameter::Q => p.q = value,
        }
        p.validate()?;
        Ok(p)
    }
}

pub struct SweepRun {
    pub value: f64,
    pub params: Option<ModelParams>,
    pub result: Result<BoundarySolution>,
}

/// Solves every value independently; a failure at one value leaves the
/// others untouched.
pub fn run_sweep(
    base: &ModelParams,
    lambda: &LambdaQuad,
    parameter: SweepParameter,
    values: &[f64],
    opts: &SolverOptions,
) -> Vec<SweepRun> {
    values
        .par_iter()
        .map(|&value| match parameter.apply(base, value) {
            Ok(p) => SweepRun {
                value,
                params: Some(p),
                result: integrate_boundary_with(&p, lambda, opts),
            },
            Err(e) => SweepRun {
                value,
                params: None,
                result: Err(e),
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub from: f64,
    pub to: f64,
    pub direction: Direction,
    /// Largest amount by which the expected ordering is broken (negative
    /// when it holds strictly everywhere).
    pub max_violation: f64,
    pub points: usize,
    pub passed: bool,
}

/// Pointwise comparison of `b` on the common range `[0, min m_end]`.
pub fn compare(lower: &BoundarySolution, upper: &BoundarySolution, direction: Direction, from: f64, to: f64) -> Comparison {
    let step = lower.step.max(upper.step);
    let end = lower.m_end.min(upper.m_end);
    let n = (end / step).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    if end - grid[n] > 1e-12 {
        grid.push(end);
    }
    let max_violation = grid
        .iter()
        .map(|&m| {
            let d = upper.b_at(m) - lower.b_at(m);
            match direction {
                Direction::Nondecreasing => -d,
                Direction::Nonincreasing => d,
            }
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Comparison {
        from,
        to,
        direction,
        max_violation,
        points: grid.len(),
        passed: max_violation <= ORDER_TOL,
    }
}

/// Comparisons between consecutive successful runs.
pub fn monotonicity(runs: &[SweepRun], parameter: SweepParameter) -> Vec<Comparison> {
    let ok: Vec<(f64, &BoundarySolution)> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|s| (r.value, s)))
        .collect();
    ok.windows(2)
        .map(|w| compare(w[0].1, w[1].1, parameter.expected_direction(), w[0].0, w[1].0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostThreshold;

    #[test]
    fn identical_boundaries_pass_both_directions() {
        let l = LambdaQuad::new(-2.5, 0.5, -3.0, 1.0).unwrap();
        let p = ModelParams::from_lambda(&l, 1.0, 0.5, 0.5, CostThreshold::Unbounded).unwrap();
        let runs = run_sweep(&p, &l, SweepParameter::Q, &[0.5], &SolverOptions::with_step(1e-3));
        let s = runs[0].result.as_ref().unwrap();
        for d in [Direction::Nondecreasing, Direction::Nonincreasing] {
            let c = compare(s, s, d, 0.5, 0.5);
            assert_eq!(c.max_violation, 0.0);
            assert!(c.passed);
        }
    }

    #[test]
    fn invalid_value_is_isolated() {
        let l = LambdaQuad::new(-2.5, 0.5, -3.0, 1.0).unwrap();
        let p = ModelParams::from_lambda(&l, 1.0, 0.5, 0.5, CostThreshold::Unbounded).unwrap();
        let runs = run_sweep(&p, &l, SweepParameter::Rho, &[0.3, 1.5, 0.7], &SolverOptions::with_step(1e-3));
        assert!(runs[0].result.is_ok());
        assert!(runs[1].result.is_err());
        assert!(runs[2].result.is_ok());
        let cmp = monotonicity(&runs, SweepParameter::Rho);
        assert_eq!(cmp.len(), 1);
        assert!(cmp[0].passed, "{cmp:?}");
    }
}
