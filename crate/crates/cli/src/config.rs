//! Run configuration: a flat TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use mfg_tracking::mfe::{FixedPointConfig, MfeConfig};
use mfg_tracking::params::{InitialState, RawParams};
use mfg_tracking::{McConfig, ModelParams};
use serde::Deserialize;

use crate::CliError;

/// Every key is optional in the file; missing keys take the defaults below.
/// Units: rates per year, horizon in years, wealth and index in currency.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mu: f64,
    pub sigma: f64,
    pub mu_z: f64,
    pub sigma_z: f64,
    pub lambda: f64,
    pub rho: f64,
    pub horizon: f64,

    /// Give either x0 or v0, not both.
    pub x0: Option<f64>,
    pub v0: Option<f64>,
    pub z0: f64,

    pub seed: u64,
    pub paths: usize,
    pub steps: usize,

    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    pub tol_x: f64,
    pub r_start: f64,
    pub r_cap: f64,
    pub max_probes: usize,

    pub out: PathBuf,

    pub r_list: Vec<f64>,

    /// Consistency passes when the sup residual is below
    /// max(consistency_k·se, consistency_rel·‖f*‖∞).
    pub consistency_k: f64,
    pub consistency_rel: f64,
    /// Reference drift used by `verify` is f*·perturb; 1 means no fault.
    pub perturb: f64,

    pub n_list: Vec<usize>,
    /// Replications of the whole n-agent system per n.
    pub nplayer_paths: usize,
    /// Relative spread of agent parameters; 0 means a homogeneous population.
    pub delta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ModelParams::baseline();
        let mc = McConfig::default();
        let mfe = MfeConfig::default();
        RunConfig {
            mu: p.mu(),
            sigma: p.sigma(),
            mu_z: p.mu_z(),
            sigma_z: p.sigma_z(),
            lambda: p.lambda(),
            rho: p.rho(),
            horizon: p.horizon(),
            x0: None,
            v0: None,
            z0: 20.0,
            seed: mc.seed,
            paths: mc.n_paths,
            steps: mc.n_steps,
            fixed_point_tol: mfe.fixed_point.tol,
            fixed_point_max_iter: mfe.fixed_point.max_iter,
            tol_x: mfe.tol_x,
            r_start: mfe.r_start,
            r_cap: mfe.r_cap,
            max_probes: mfe.max_probes,
            out: PathBuf::from("out"),
            r_list: vec![1e-3, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0],
            consistency_k: 3.0,
            consistency_rel: 0.02,
            perturb: 1.0,
            n_list: vec![2, 10, 50, 200],
            nplayer_paths: 2000,
            delta: 0.0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let raw = RawParams {
            mu: self.mu,
            sigma: self.sigma,
            mu_z: self.mu_z,
            sigma_z: self.sigma_z,
            lambda: self.lambda,
            rho: self.rho,
            horizon: self.horizon,
        };
        Ok(ModelParams::try_from(raw)?)
    }

    pub fn initial_state(&self, p: &ModelParams) -> Result<InitialState, CliError> {
        match (self.x0, self.v0) {
            (Some(x0), None) => Ok(InitialState::from_x0(p, x0, self.z0)?),
            (None, Some(v0)) => Ok(mfg_tracking::params::initial_auxiliary_state(p, v0, self.z0)?),
            (Some(_), Some(_)) => Err(CliError::Validation("give either x0 or v0, not both".into())),
            (None, None) => Err(CliError::Validation("one of x0 or v0 is required".into())),
        }
    }

    pub fn mc(&self) -> McConfig {
        McConfig::new(self.paths, self.steps, self.seed)
    }

    pub fn mfe(&self) -> MfeConfig {
        MfeConfig {
            mc: self.mc(),
            fixed_point: FixedPointConfig {
                tol: self.fixed_point_tol,
                max_iter: self.fixed_point_max_iter,
            },
            tol_x: self.tol_x,
            r_start: self.r_start,
            r_cap: self.r_cap,
            max_probes: self.max_probes,
        }
    }

    /// Range checks that the library does not make itself.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Validation(m.to_string()));
        self.params()?;
        self.mc().validate()?;
        if !(self.fixed_point_tol > 0.0) || self.fixed_point_max_iter == 0 {
            return bad("fixed_point_tol must be > 0 and fixed_point_max_iter >= 1");
        }
        if !(self.tol_x > 0.0) || !(self.r_start > 0.0) || !(self.r_cap >= self.r_start) || self.max_probes == 0 {
            return bad("need tol_x > 0, 0 < r_start <= r_cap and max_probes >= 1");
        }
        if self.r_list.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("r_list entries must be finite and >= 0");
        }
        if !(self.consistency_k > 0.0) || !(self.consistency_rel >= 0.0) {
            return bad("consistency_k must be > 0 and consistency_rel >= 0");
        }
        if !(self.perturb.is_finite() && self.perturb > 0.0) {
            return bad("perturb must be finite and > 0");
        }
        if self.n_list.iter().any(|&n| n == 0) {
            return bad("n_list entries must be >= 1");
        }
        if self.nplayer_paths < 2 {
            return bad("nplayer_paths must be >= 2");
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Parses "a,b,c" into a list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| format!("cannot parse list entry `{x}`")))
        .collect()
}
