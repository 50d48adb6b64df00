//! Run configuration: a model document plus optional `solver` and `seed`
//! sections, with command-line overrides resolved into concrete grids.

use crate::error::{CliError, CliResult};
use infogame::model::{GameModel, ModelConfig};
use infogame::solver::{cfl_limit, ProductGrids, StateGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const DEFAULT_NX: usize = 81;
pub const DEFAULT_NX_2D: usize = 41;
pub const DEFAULT_SIMPLEX: usize = 8;
/// Default number of steps when the scheme imposes no CFL bound.
pub const DEFAULT_MIN_STEPS: f64 = 100.0;

/// Optional solver settings; every field may also come from a flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub nx: Option<usize>,
    pub dx: Option<f64>,
    pub np: Option<usize>,
    pub nq: Option<usize>,
    pub dt: Option<f64>,
    pub t0: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl SolverSettings {
    /// Fields set in `over` replace those in `self`.
    pub fn merged(&self, over: &SolverSettings) -> SolverSettings {
        SolverSettings {
            nx: over.nx.or(self.nx),
            dx: over.dx.or(self.dx),
            np: over.np.or(self.np),
            nq: over.nq.or(self.nq),
            dt: over.dt.or(self.dt),
            t0: over.t0.or(self.t0),
            lo: over.lo.or(self.lo),
            hi: over.hi.or(self.hi),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub solver: SolverSettings,
    pub seed: Option<u64>,
    /// SHA-256 of the raw configuration bytes.
    pub input_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> CliResult<Self> {
        let input_sha256 = sha256_hex(bytes);
        let value: Value = serde_json::from_slice(bytes)
            .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let solver = match map.remove("solver") {
            Some(v) => serde_json::from_value(v)
                .map_err(|e| CliError::Config(format!("solver section: {e}")))?,
            None => SolverSettings::default(),
        };
        let seed = match map.remove("seed") {
            Some(v) => Some(
                serde_json::from_value(v).map_err(|e| CliError::Config(format!("seed: {e}")))?,
            ),
            None => None,
        };
        let model: ModelConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(RunConfig {
            model,
            solver,
            seed,
            input_sha256,
        })
    }

    pub fn build_model(&self) -> CliResult<GameModel> {
        Ok(self.model.build()?)
    }
}

/// Concrete grid parameters of a solve, stored with its output so that the
/// stack can be reloaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub np: usize,
    pub nq: usize,
    /// Requested time step; the solver may shrink it to divide `T - t0`.
    pub dt: f64,
    pub t0: f64,
}

impl GridSpec {
    pub fn resolve(model: &GameModel, s: &SolverSettings) -> CliResult<Self> {
        let n = model.state_dim();
        let lo = s.lo.unwrap_or(-model.domain());
        let hi = s.hi.unwrap_or(model.domain());
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CliError::Config(format!("state box [{lo}, {hi}] is empty")));
        }
        let state = match (s.nx, s.dx) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either nx or dx, not both".into()))
            }
            (_, Some(dx)) => StateGrid::with_spacing(n, lo, hi, dx)?,
            (nx, None) => StateGrid::uniform(
                n,
                lo,
                hi,
                nx.unwrap_or(if n == 1 { DEFAULT_NX } else { DEFAULT_NX_2D }),
            )?,
        };
        let t0 = s.t0.unwrap_or(0.0);
        let dt = match s.dt {
            Some(dt) => dt,
            None => {
                let span = model.horizon() - t0;
                cfl_limit(model, &state).min(span / DEFAULT_MIN_STEPS)
            }
        };
        Ok(GridSpec {
            lo: state.lo().to_vec(),
            hi: state.hi().to_vec(),
            counts: state.counts().to_vec(),
            np: s.np.unwrap_or(DEFAULT_SIMPLEX),
            nq: s.nq.unwrap_or(DEFAULT_SIMPLEX),
            dt,
            t0,
        })
    }

    pub fn grids(&self, model: &GameModel) -> CliResult<ProductGrids> {
        let state = StateGrid::new(self.lo.clone(), self.hi.clone(), self.counts.clone())?;
        Ok(ProductGrids::for_model(model, state, self.np, self.nq)?)
    }
}
