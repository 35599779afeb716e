//! Run configuration read from TOML.
//!
//! ```toml
//! schema_version = 1
//!
//! [model]
//! lambda1 = -2.5     # or mu = 1.0, delta = 0.625, gamma = 0.875
//! lambda2 = 0.5
//! lambda3 = -3.0
//! lambda4 = 1.0
//! sigma = 1.0
//! rho = 0.5
//! q = 0.2
//! m_bar = "inf"      # or a positive number
//!
//! [solver]           # all optional
//! step = 1e-4
//!
//! [sim]              # all optional
//! dt = 1e-4
//! n_paths = 200000
//! seed = 42
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::SolverOptions;
use crate::error::{Error, Result};
use crate::model::{lambda_from_model, CostThreshold, LambdaQuad, ModelParams};
use crate::reflect::{Scheme, SimSettings};
use crate::surface::GridSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    model: RawModel,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    sim: RawSim,
    verify: Option<RawVerify>,
    sweep: Option<RawSweep>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    mu: Option<f64>,
    sigma: Option<f64>,
    delta: Option<f64>,
    gamma: Option<f64>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lambda3: Option<f64>,
    lambda4: Option<f64>,
    rho: Option<f64>,
    q: Option<f64>,
    m_bar: Option<toml::Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    step: Option<f64>,
    det_floor: Option<f64>,
    local_tol: Option<f64>,
    diag_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dt: Option<f64>,
    horizon: Option<f64>,
    n_paths: Option<i64>,
    seed: Option<i64>,
    scheme: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    n_u: Option<i64>,
    n_v: Option<i64>,
    n_interior: Option<i64>,
    kappas: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: String,
    values: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
    formats: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Rho,
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn settings(&self, params: &ModelParams) -> SimSettings {
        SimSettings {
            dt: self.dt,
            horizon: self.horizon.unwrap_or_else(|| params.default_horizon()),
            scheme: self.scheme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
}

impl OutputConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub params: ModelParams,
    pub lambda: LambdaQuad,
    /// The model block gave roots rather than rates.
    pub from_lambda: bool,
    pub solver: SolverOptions,
    pub sim: SimConfig,
    pub verify: GridSpec,
    pub sweep: Option<SweepSpec>,
    pub output: OutputConfig,
}

/// 1-based line of `key` inside `[section]` (or at top level when
/// `section` is empty).
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.split(']').next()) {
            current = name.trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some((k, _)) = trimmed.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        let field = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        Error::Config {
            line: locate(self.src, section, key).or_else(|| locate(self.src, section, "")),
            field,
            message: message.into(),
        }
    }

    fn positive(&self, section: &str, key: &str, v: Option<f64>, default: f64) -> Result<f64> {
        let v = v.unwrap_or(default);
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.err(section, key, format!("must be positive and finite, got {v}")));
        }
        Ok(v)
    }

    fn count(&self, section: &str, key: &str, v: Option<i64>, default: usize, min: usize) -> Result<usize> {
        match v {
            None => Ok(default),
            Some(n) if n >= min as i64 => Ok(n as usize),
            Some(n) => Err(self.err(section, key, format!("must be at least {min}, got {n}"))),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| {
            let line = e
                .span()
                .map(|s| src.as_bytes()[..s.start.min(src.len())].iter().filter(|&&c| c == b'\n').count() + 1);
            Error::Config {
                line,
                field: "<document>".into(),
                message: e.message().to_string(),
            }
        })?;
        let cx = Ctx { src };
        let schema_version = raw.schema_version.unwrap_or(SCHEMA_VERSION);
        if schema_version != SCHEMA_VERSION {
            return Err(cx.err("", "schema_version", format!("unsupported version {schema_version}, expected {SCHEMA_VERSION}")));
        }

        let m = &raw.model;
        let req = |key: &str, v: Option<f64>| v.ok_or_else(|| cx.err("model", key, "missing"));
        let rates = [("mu", m.mu), ("delta", m.delta), ("gamma", m.gamma)];
        let roots = [("lambda1", m.lambda1), ("lambda2", m.lambda2), ("lambda3", m.lambda3), ("lambda4", m.lambda4)];
        let any_rates = rates.iter().any(|r| r.1.is_some());
        let any_roots = roots.iter().any(|r| r.1.is_some());
        let sigma = req("sigma", m.sigma)?;
        let rho = req("rho", m.rho)?;
        let q = req("q", m.q)?;
        let m_bar = match &m.m_bar {
            None => return Err(cx.err("model", "m_bar", "missing (use a positive number or \"inf\")")),
            Some(toml::Value::Float(v)) => CostThreshold::Finite(*v),
            Some(toml::Value::Integer(v)) => CostThreshold::Finite(*v as f64),
            Some(toml::Value::String(s)) if s == "inf" => CostThreshold::Unbounded,
            Some(other) => {
                return Err(cx.err("model", "m_bar", format!("expected a positive number or \"inf\", got {other}")))
            }
        };
        let (params, lambda, from_lambda) = match (any_rates, any_roots) {
            (true, true) => {
                let key = if m.mu.is_some() { "mu" } else if m.delta.is_some() { "delta" } else { "gamma" };
                return Err(cx.err("model", key, "give either (mu, delta, gamma) or (lambda1..lambda4), not both"));
            }
            (false, false) => return Err(cx.err("model", "", "no drift/discount rates or roots given")),
            (true, false) => {
                let mu = req("mu", m.mu)?;
                let delta = req("delta", m.delta)?;
                let gamma = req("gamma", m.gamma)?;
                let params = ModelParams::new(mu, sigma, delta, gamma, rho, q, m_bar)
                    .map_err(|e| param_error(&cx, e))?;
                (params, lambda_from_model(mu, sigma, delta, gamma), false)
            }
            (false, true) => {
                let l: Vec<f64> = roots.iter().map(|(k, v)| req(k, *v)).collect::<Result<_>>()?;
                let lambda = LambdaQuad::new(l[0], l[1], l[2], l[3])
                    .map_err(|e| cx.err("model", "lambda1", e.to_string()))?;
                let params = ModelParams::from_lambda(&lambda, sigma, rho, q, m_bar).map_err(|e| match e {
                    Error::InconsistentLambda { .. } => cx.err("model", "lambda3", e.to_string()),
                    e => param_error(&cx, e),
                })?;
                (params, lambda, true)
            }
        };

        let defaults = SolverOptions::default();
        let s = &raw.solver;
        let solver = SolverOptions {
            step: cx.positive("solver", "step", s.step, defaults.step)?,
            det_floor: cx.positive("solver", "det_floor", s.det_floor, defaults.det_floor)?,
            local_tol: cx.positive("solver", "local_tol", s.local_tol, defaults.local_tol)?,
            diag_tol: cx.positive("solver", "diag_tol", s.diag_tol, defaults.diag_tol)?,
        };

        let r = &raw.sim;
        let scheme = match r.scheme.as_deref() {
            None | Some("bridge") => Scheme::Bridge,
            Some("euler") => Scheme::Euler,
            Some(other) => return Err(cx.err("sim", "scheme", format!("unknown scheme {other:?} (bridge or euler)"))),
        };
        let horizon = match r.horizon {
            None => None,
            Some(h) => Some(cx.positive("sim", "horizon", Some(h), 0.0)?),
        };
        let seed = match r.seed {
            None => 0,
            Some(s) if s >= 0 => s as u64,
            Some(s) => return Err(cx.err("sim", "seed", format!("must be non-negative, got {s}"))),
        };
        let sim = SimConfig {
            dt: cx.positive("sim", "dt", r.dt, 1e-4)?,
            horizon,
            n_paths: cx.count("sim", "n_paths", r.n_paths, 10_000, 1)?,
            seed,
            scheme,
        };

        let gd = GridSpec::default();
        let verify = match &raw.verify {
            None => gd,
            Some(v) => {
                let kappas = v.kappas.clone().unwrap_or(gd.kappas);
                if kappas.is_empty() || kappas.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
                    return Err(cx.err("verify", "kappas", "must be a non-empty list of non-negative times"));
                }
                GridSpec {
                    n_u: cx.count("verify", "n_u", v.n_u, gd.n_u, 2)?,
                    n_v: cx.count("verify", "n_v", v.n_v, gd.n_v, 2)?,
                    n_interior: cx.count("verify", "n_interior", v.n_interior, gd.n_interior, 3)?,
                    kappas,
                }
            }
        };

        let sweep = match &raw.sweep {
            None => None,
            Some(sw) => {
                let parameter = match sw.parameter.as_str() {
                    "rho" => SweepParameter::Rho,
                    "q" => SweepParameter::Q,
                    other => return Err(cx.err("sweep", "parameter", format!("cannot sweep {other:?} (rho or q)"))),
                };
                if sw.values.is_empty() || sw.values.iter().any(|v| !v.is_finite()) {
                    return Err(cx.err("sweep", "values", "must be a non-empty list of finite numbers"));
                }
                if sw.values.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(cx.err("sweep", "values", "must be strictly increasing"));
                }
                Some(SweepSpec {
                    parameter,
                    values: sw.values.clone(),
                })
            }
        };

        let formats = match &raw.output.formats {
            None => vec![OutputFormat::Csv, OutputFormat::Json],
            Some(fs) => fs
                .iter()
                .map(|f| match f.as_str() {
                    "csv" => Ok(OutputFormat::Csv),
                    "json" => Ok(OutputFormat::Json),
                    other => Err(cx.err("output", "formats", format!("unknown format {other:?} (csv or json)"))),
                })
                .collect::<Result<_>>()?,
        };

        Ok(RunConfig {
            schema_version,
            params,
            lambda,
            from_lambda,
            solver,
            sim,
            verify,
            sweep,
            output: OutputConfig {
                directory: raw.output.directory.clone(),
                formats,
            },
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src)
    }

    /// SHA-256 over everything that affects results (not the output block).
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            schema_version: u32,
            params: &'a ModelParams,
            lambda: &'a LambdaQuad,
            solver: &'a SolverOptions,
            sim: &'a SimConfig,
            verify: &'a GridSpec,
            sweep: &'a Option<SweepSpec>,
        }
        let keyed = Keyed {
            schema_version: self.schema_version,
            params: &self.params,
            lambda: &self.lambda,
            solver: &self.solver,
            sim: &self.sim,
            verify: &self.verify,
            sweep: &self.sweep,
        };
        let json = serde_json::to_string(&keyed).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn param_error(cx: &Ctx<'_>, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => cx.err("model", field, reason),
        e => e,
    }
}
