//! Market and preference parameters, derived constants and the
//! deterministic threshold functions of the tracking problem.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Curve;

/// Validated model parameters. Construct with [`ModelParams::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    mu: f64,
    sigma: f64,
    mu_z: f64,
    sigma_z: f64,
    lambda: f64,
    rho: f64,
    horizon: f64,
}

/// Unvalidated parameter record as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub mu: f64,
    pub sigma: f64,
    pub mu_z: f64,
    pub sigma_z: f64,
    pub lambda: f64,
    pub rho: f64,
    pub horizon: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.mu, r.sigma, r.mu_z, r.sigma_z, r.lambda, r.rho, r.horizon)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            mu: p.mu,
            sigma: p.sigma,
            mu_z: p.mu_z,
            sigma_z: p.sigma_z,
            lambda: p.lambda,
            rho: p.rho,
            horizon: p.horizon,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

impl ModelParams {
    pub fn new(
        mu: f64,
        sigma: f64,
        mu_z: f64,
        sigma_z: f64,
        lambda: f64,
        rho: f64,
        horizon: f64,
    ) -> Result<Self> {
        positive("mu", mu)?;
        positive("sigma", sigma)?;
        positive("mu_z", mu_z)?;
        positive("sigma_z", sigma_z)?;
        positive("rho", rho)?;
        positive("horizon", horizon)?;
        if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must lie in [0, 1], got {lambda}"),
            });
        }
        // Compare μ_Z σ > μ σ_Z to avoid dividing before the check.
        if mu_z * sigma <= mu * sigma_z {
            return Err(Error::InvalidParameter {
                name: "mu_z",
                reason: format!(
                    "index Sharpe ratio {} must exceed asset Sharpe ratio {}",
                    mu_z / sigma_z,
                    mu / sigma
                ),
            });
        }
        Ok(Self {
            mu,
            sigma,
            mu_z,
            sigma_z,
            lambda,
            rho,
            horizon,
        })
    }

    /// Parameters used throughout the numerical study:
    /// (μ, σ, μ_Z, σ_Z, λ, ρ, T) = (0.1, 0.1, 0.2, 0.1, 0.2, 1, 1).
    pub fn baseline() -> Self {
        Self::new(0.1, 0.1, 0.2, 0.1, 0.2, 1.0, 1.0).expect("baseline parameters are valid")
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn mu_z(&self) -> f64 {
        self.mu_z
    }
    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Copy with a different competition weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.mu, self.sigma, self.mu_z, self.sigma_z, lambda, self.rho, self.horizon,
        )
    }

    /// Exponent weight 1 − σσ_Z/μ attached to the dual position in the index terms.
    pub fn z_weight(&self) -> f64 {
        1.0 - self.sigma * self.sigma_z / self.mu
    }

    pub fn derive_constants(&self) -> DerivedConstants {
        derive_constants(self)
    }
}

/// Scalar constants derived from [`ModelParams`]. None depend on λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub eta: f64,
    pub kappa: f64,
    pub mu_tilde: f64,
    pub sigma_tilde: f64,
    /// Drift of the reflected dual level R.
    pub r_drift: f64,
    /// Volatility of the reflected dual level R.
    pub r_vol: f64,
}

impl DerivedConstants {
    /// Drift of the dual position X = −(R driver − r), i.e. μ̃σ̃.
    pub fn x_drift(&self) -> f64 {
        self.mu_tilde * self.sigma_tilde
    }

    /// Squared volatility of the dual position, σ̃².
    pub fn x_var(&self) -> f64 {
        self.sigma_tilde * self.sigma_tilde
    }
}

pub fn derive_constants(p: &ModelParams) -> DerivedConstants {
    let (mu, sigma, mu_z, sigma_z, rho) = (p.mu, p.sigma, p.mu_z, p.sigma_z, p.rho);
    DerivedConstants {
        eta: mu_z - mu * sigma_z / sigma,
        kappa: mu_z - 0.5 * sigma_z * sigma_z - mu * sigma_z / (2.0 * sigma)
            + sigma * sigma_z * rho / mu,
        mu_tilde: mu / (2.0 * sigma) - sigma * rho / mu,
        sigma_tilde: -mu / sigma,
        r_drift: mu * mu / (2.0 * sigma * sigma) - rho,
        r_vol: mu / sigma,
    }
}

/// Initial wealth, index level and auxiliary (reflected) state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialState {
    pub v0: f64,
    pub z0: f64,
    pub x0: f64,
}

pub fn initial_auxiliary_state(p: &ModelParams, v0: f64, z0: f64) -> Result<InitialState> {
    if !(v0.is_finite() && v0 >= 0.0) || !(z0.is_finite() && z0 >= 0.0) {
        return domain(format!("v0 and z0 must be finite and >= 0, got ({v0}, {z0})"));
    }
    Ok(InitialState {
        v0,
        z0,
        x0: ((1.0 - p.lambda) * (v0 - z0)).max(0.0),
    })
}

impl InitialState {
    /// State given directly by (x0, z0). Wealth is recovered as
    /// v0 = z0 + x0/(1−λ) (or v0 = z0 when λ = 1).
    pub fn from_x0(p: &ModelParams, x0: f64, z0: f64) -> Result<Self> {
        if !(x0.is_finite() && x0 >= 0.0) || !(z0.is_finite() && z0 >= 0.0) {
            return domain(format!("x0 and z0 must be finite and >= 0, got ({x0}, {z0})"));
        }
        let v0 = if p.lambda < 1.0 {
            z0 + x0 / (1.0 - p.lambda)
        } else {
            z0
        };
        Ok(Self { v0, z0, x0 })
    }
}

/// Threshold x̂₀(z) separating the outperforming and underperforming regions at t = 0.
pub fn threshold_hat_x0(p: &ModelParams, z: f64) -> f64 {
    let c = derive_constants(p);
    let t = p.horizon;
    let e_eta = (c.eta * t).exp();
    (1.0 - p.lambda) * (p.lambda * ((p.mu_z * t).exp() - e_eta) + e_eta - 1.0) * z
}

/// Free boundary x₀(t, z) = λ∫_t^T f + (1−λ)(e^{η(T−t)} − 1)z.
pub fn boundary_x0(p: &ModelParams, f: &Curve, t: f64, z: f64) -> Result<f64> {
    let horizon = p.horizon;
    if !(0.0..=horizon).contains(&t) {
        return domain(format!("t = {t} outside [0, {horizon}]"));
    }
    let eta = derive_constants(p).eta;
    let tail = if p.lambda > 0.0 {
        f.integral(t, horizon)?
    } else {
        0.0
    };
    Ok(p.lambda * tail + (1.0 - p.lambda) * ((eta * (horizon - t)).exp() - 1.0) * z)
}

/// Parameter and initial-state record read from a flat key-value file.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct ParamsFile {
    #[serde(flatten)]
    pub params: RawParams,
    pub v0: f64,
    pub z0: f64,
}

/// Parse a config file with keys mu, sigma, mu_z, sigma_z, lambda, rho, horizon, v0, z0.
/// Unknown keys are ignored so that run options may live in the same file.
pub fn parse_params(text: &str) -> Result<(ModelParams, InitialState)> {
    let raw: ParamsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let p = ModelParams::try_from(raw.params)?;
    let s = initial_auxiliary_state(&p, raw.v0, raw.z0)?;
    Ok((p, s))
}
