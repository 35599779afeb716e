//! Sampled trajectories of the controlled wealth process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A lump of control paid at one grid time, with the state just before it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub index: usize,
    pub size: f64,
    pub pre_x: f64,
    pub pre_m: f64,
    pub pre_y: f64,
}

/// One trajectory on a time grid: wealth `x`, running minimum `m` and
/// cumulative control `d`, all sampled after any jump at that time.
///
/// `d_initial` is the control level just before `t[0]`. Lumps are listed in
/// `jumps` (ordered by index; several lumps may share an index and are then
/// applied in order). Paths are truncated at `bankrupt_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub d: Vec<f64>,
    pub d_initial: f64,
    pub jumps: Vec<Jump>,
    pub bankrupt_at: Option<usize>,
}

impl DiscretePath {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Builds a path from raw samples, flagging as lumps those control
    /// increments that exceed `10 * (|mu| dt + sigma sqrt(dt))` for the step.
    ///
    /// The first sample is taken as the starting state, so `d[0]` is the
    /// initial control level and lumps can only be detected from the second
    /// sample on.
    pub fn from_samples(
        t: Vec<f64>,
        x: Vec<f64>,
        m: Vec<f64>,
        d: Vec<f64>,
        params: &ModelParams,
    ) -> Result<Self> {
        let mut path = DiscretePath {
            d_initial: d.first().copied().unwrap_or(0.0),
            t,
            x,
            m,
            d,
            jumps: Vec::new(),
            bankrupt_at: None,
        };
        path.validate_shape()?;
        for k in 1..path.len() {
            let dt = path.t[k] - path.t[k - 1];
            let threshold = jump_threshold(params, dt);
            let dd = path.d[k] - path.d[k - 1];
            if dd > threshold {
                path.jumps.push(Jump {
                    index: k,
                    size: dd,
                    pre_x: path.x[k] + dd,
                    pre_m: path.m[k - 1],
                    pre_y: path.d[k - 1],
                });
            }
        }
        path.bankrupt_at = path.x.iter().position(|&x| x <= 0.0);
        Ok(path)
    }

    /// Grid lengths agree, samples are finite and time strictly increases.
    pub fn validate_shape(&self) -> Result<()> {
        let n = self.t.len();
        if n == 0 {
            return Err(Error::MalformedPath("empty path".into()));
        }
        if self.x.len() != n || self.m.len() != n || self.d.len() != n {
            return Err(Error::MalformedPath(format!(
                "column lengths differ (t {}, x {}, m {}, d {})",
                n,
                self.x.len(),
                self.m.len(),
                self.d.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|s| s.is_finite());
        if !(finite(&self.t)
            && finite(&self.x)
            && finite(&self.m)
            && finite(&self.d)
            && self.d_initial.is_finite())
        {
            return Err(Error::MalformedPath("non-finite sample".into()));
        }
        if let Some(k) = self.t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::MalformedPath(format!(
                "time grid not strictly increasing at index {}",
                k + 1
            )));
        }
        if self.jumps.iter().any(|j| j.index >= n || !(j.size >= 0.0)) {
            return Err(Error::MalformedPath("jump outside the grid or negative".into()));
        }
        Ok(())
    }

    pub fn check_control_monotone(&self) -> Result<()> {
        if self.d[0] < self.d_initial {
            return Err(Error::NonMonotoneControl { index: 0 });
        }
        match self.d.windows(2).position(|w| w[1] < w[0]) {
            Some(k) => Err(Error::NonMonotoneControl { index: k + 1 }),
            None => Ok(()),
        }
    }

    pub fn check_minimum_monotone(&self) -> Result<()> {
        match self.m.windows(2).position(|w| w[1] > w[0]) {
            Some(k) => Err(Error::NonMonotoneMinimum { index: k + 1 }),
            None => Ok(()),
        }
    }

    /// Total lump size recorded at grid index `k`.
    pub fn jump_total_at(&self, k: usize) -> f64 {
        self.jumps
            .iter()
            .filter(|j| j.index == k)
            .map(|j| j.size)
            .sum()
    }

    /// Terminal sample `(x, m, d)`.
    pub fn terminal(&self) -> (f64, f64, f64) {
        let k = self.len() - 1;
        (self.x[k], self.m[k], self.d[k])
    }
}

/// Control increment above which a step of length `dt` counts as a lump.
pub fn jump_threshold(params: &ModelParams, dt: f64) -> f64 {
    10.0 * (params.mu.abs() * dt + params.sigma * dt.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostThreshold;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 1.0, 0.625, 0.875, 0.5, 0.2, CostThreshold::Unbounded).unwrap()
    }

    #[test]
    fn lump_is_detected_from_increment_size() {
        let t = vec![0.0, 1e-4, 2e-4, 3e-4];
        let x = vec![0.5, 0.5, 0.3, 0.3];
        let m = vec![0.2, 0.2, 0.2, 0.2];
        let d = vec![0.0, 1e-4, 0.2 + 1e-4, 0.2 + 1e-4];
        let path = DiscretePath::from_samples(t, x, m, d, &params()).unwrap();
        assert_eq!(path.jumps.len(), 1);
        let j = path.jumps[0];
        assert_eq!(j.index, 2);
        assert!((j.size - 0.2).abs() < 1e-15);
        assert!((j.pre_x - 0.5).abs() < 1e-15);
        assert_eq!(j.pre_m, 0.2);
        assert_eq!(path.bankrupt_at, None);
    }

    #[test]
    fn malformed_paths_are_rejected() {
        let p = params();
        assert!(DiscretePath::from_samples(vec![], vec![], vec![], vec![], &p).is_err());
        assert!(DiscretePath::from_samples(vec![0.0, 0.0], vec![1.0; 2], vec![1.0; 2], vec![0.0; 2], &p).is_err());
        assert!(DiscretePath::from_samples(vec![0.0, 1.0], vec![1.0; 3], vec![1.0; 2], vec![0.0; 2], &p).is_err());
        assert!(DiscretePath::from_samples(vec![0.0, f64::NAN], vec![1.0; 2], vec![1.0; 2], vec![0.0; 2], &p).is_err());
    }

    #[test]
    fn monotonicity_checks_name_the_index() {
        let p = params();
        let path = DiscretePath::from_samples(
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.5, 0.8],
            vec![1.0, 0.5, 0.6],
            vec![0.0, 0.1, 0.05],
            &p,
        )
        .unwrap();
        assert!(matches!(path.check_control_monotone(), Err(Error::NonMonotoneControl { index: 2 })));
        assert!(matches!(path.check_minimum_monotone(), Err(Error::NonMonotoneMinimum { index: 2 })));
    }
}
