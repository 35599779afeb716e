//! Monte Carlo estimates of the equilibrium payoff and of the
//! equilibrium-perturbation difference quotients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reflect::{path_rng, Deviation, PayoffSink, SimSettings, Simulator};
use crate::surface::ValueSurface;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Mean and standard error with a fixed pairwise reduction order.
fn summarize(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    let centered: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&centered) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < 2 {
        return Err(Error::param("n_paths", "at least two paths are needed for an error bar"));
    }
    Ok(())
}

fn check_dividend_bound(payoff: f64, dividends: f64, c0: f64) -> Result<()> {
    if !payoff.is_finite() || payoff > c0 * dividends * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::MalformedPath(format!(
            "path payoff {payoff} exceeds its dividend bound {}",
            c0 * dividends
        )));
    }
    Ok(())
}

/// Per-path payoffs, computed in parallel; path `i` always uses stream `i`.
pub fn payoff_samples(
    surf: &ValueSurface,
    x0: f64,
    m0: f64,
    deviation: Deviation,
    n_paths: usize,
    settings: &SimSettings,
    seed: u64,
) -> Result<Vec<f64>> {
    let sim = Simulator::new(&surf.boundary, &surf.params, *settings)?;
    let c0 = surf.params.cost(0.0);
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut sink = PayoffSink::new(&surf.params);
            sim.run(x0, m0, deviation, &mut rng, &mut sink)?;
            check_dividend_bound(sink.total, sink.dividends, c0)?;
            Ok(sink.total)
        })
        .collect()
}

pub fn estimate_payoff(
    surf: &ValueSurface,
    x0: f64,
    m0: f64,
    n_paths: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<PayoffEstimate> {
    estimate_payoff_with(surf, x0, m0, n_paths, &SimSettings::new(dt, horizon), seed, String::new())
}

pub fn estimate_payoff_with(
    surf: &ValueSurface,
    x0: f64,
    m0: f64,
    n_paths: usize,
    settings: &SimSettings,
    seed: u64,
    config_hash: String,
) -> Result<PayoffEstimate> {
    check_paths(n_paths)?;
    let samples = payoff_samples(surf, x0, m0, Deviation::None, n_paths, settings, seed)?;
    let (mean, std_err) = summarize(&samples);
    Ok(PayoffEstimate {
        mean,
        std_err,
        n_paths,
        seed,
        config_hash,
    })
}

/// `(mean - reference) / std_err`; `None` when the standard error is zero.
pub fn z_score(est: &PayoffEstimate, reference: f64) -> Option<f64> {
    if est.std_err > 0.0 {
        Some((est.mean - reference) / est.std_err)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Pay `eps * h` on top of the equilibrium lump at time zero.
    ExtraLump { eps: f64 },
    /// Pay no dividends on `[0, h)`.
    Pause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEstimate {
    pub h: f64,
    pub mode: Perturbation,
    /// Mean of `(J(perturbed) - J(equilibrium)) / h` over paths.
    pub quotient: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl PerturbationEstimate {
    /// Not significantly positive at `k` standard errors.
    pub fn not_significantly_positive(&self, k: f64) -> bool {
        self.quotient <= k * self.std_err
    }
}

/// Difference quotient of the payoff under a deviation of length `h`, with
/// both arms driven by the same random numbers.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_test(
    surf: &ValueSurface,
    x0: f64,
    m0: f64,
    h: f64,
    mode: Perturbation,
    n_paths: usize,
    settings: &SimSettings,
    seed: u64,
) -> Result<PerturbationEstimate> {
    check_paths(n_paths)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", "must be positive"));
    }
    let deviation = match mode {
        Perturbation::ExtraLump { eps } => {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::param("eps", "must be non-negative and finite"));
            }
            Deviation::ExtraLump(eps * h)
        }
        Perturbation::Pause => Deviation::Pause(h),
    };
    let sim = Simulator::new(&surf.boundary, &surf.params, *settings)?;
    let diffs: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let base = sim.payoff(x0, m0, Deviation::None, &mut path_rng(seed, i))?;
            let pert = sim.payoff(x0, m0, deviation, &mut path_rng(seed, i))?;
            Ok((pert - base) / h)
        })
        .collect::<Result<_>>()?;
    let (quotient, std_err) = summarize(&diffs);
    Ok(PerturbationEstimate {
        h,
        mode,
        quotient,
        std_err,
        n_paths,
        seed,
    })
}
