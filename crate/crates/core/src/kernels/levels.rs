//! Uniform grids in the dual level r and tables of the closed-form inner
//! integrals on them. Expectations over R_t are taken by depositing the
//! simulated levels onto the grid (cloud-in-cell) and contracting with a
//! table row, which keeps a whole kernel table at one pass over the paths.

use crate::params::DerivedConstants;

use super::density::{gauss5, inner_phi_closed, stopped_exp_moment};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGrid {
    pub h: f64,
    pub n: usize,
}

impl LevelGrid {
    /// Grid wide enough for reflected paths started at `r0` over `horizon`,
    /// with spacing below a quarter of the one-step standard deviation.
    pub fn for_paths(c: &DerivedConstants, r0: f64, horizon: f64, dt: f64) -> Self {
        let vol = c.r_vol.abs();
        let h = (0.25 * vol * dt.sqrt()).min(0.01);
        let r_max = r0 + c.r_drift.max(0.0) * horizon + 8.0 * vol * horizon.sqrt() + 2.0 * h;
        Self {
            h,
            n: (r_max / h).ceil() as usize + 2,
        }
    }

    pub fn level(&self, m: usize) -> f64 {
        m as f64 * self.h
    }

    /// Cell index and fractional position, clamped to the last cell.
    #[inline]
    pub fn locate(&self, r: f64) -> (usize, f64) {
        let x = r / self.h;
        let m = (x.floor().max(0.0) as usize).min(self.n - 2);
        (m, (x - m as f64).clamp(0.0, 1.0))
    }

    #[inline]
    pub fn interp(&self, row: &[f64], r: f64) -> f64 {
        let (m, w) = self.locate(r);
        (1.0 - w) * row[m] + w * row[m + 1]
    }

    #[inline]
    pub fn deposit(&self, row: &mut [f64], r: f64, weight: f64) {
        let (m, w) = self.locate(r);
        row[m] += (1.0 - w) * weight;
        row[m + 1] += w * weight;
    }
}

/// Row-major table with one row of `levels.n` values per lag k = 0..=n_lags.
#[derive(Debug, Clone, PartialEq)]
pub struct LagTable {
    pub levels: LevelGrid,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl LagTable {
    pub fn n_lags(&self) -> usize {
        self.values.len() / self.levels.n - 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.levels.n..(k + 1) * self.levels.n]
    }

    /// Rows e^{−rate·τ_k} I(τ_k, r_m, w) with τ_k = k·dt; row 0 holds the limit 0.
    pub fn inner_integrals(
        c: &DerivedConstants,
        levels: LevelGrid,
        dt: f64,
        n_lags: usize,
        w: f64,
        rate: f64,
    ) -> Self {
        let mut values = vec![0.0; (n_lags + 1) * levels.n];
        for k in 1..=n_lags {
            let tau = k as f64 * dt;
            let disc = (-rate * tau).exp();
            let row = &mut values[k * levels.n..(k + 1) * levels.n];
            for (m, v) in row.iter_mut().enumerate() {
                *v = disc * inner_phi_closed(c, tau, levels.level(m), w);
            }
        }
        Self { levels, dt, values }
    }

    /// Running trapezoid integral over lags: row k = ∫_0^{τ_k} of `self`.
    pub fn cumulative(&self) -> Self {
        let n = self.levels.n;
        let mut values = vec![0.0; self.values.len()];
        for k in 1..=self.n_lags() {
            for m in 0..n {
                values[k * n + m] = values[(k - 1) * n + m]
                    + 0.5 * self.dt * (self.values[(k - 1) * n + m] + self.values[k * n + m]);
            }
        }
        Self {
            levels: self.levels,
            dt: self.dt,
            values,
        }
    }

    /// Rows Ψ(τ_k, r_m) = ∫_0^{τ_k} e^{(κ−ρ)u} E_w(u, r_m) du.
    pub fn survival_integrals(
        c: &DerivedConstants,
        levels: LevelGrid,
        dt: f64,
        n_lags: usize,
        rho: f64,
        w: f64,
    ) -> Self {
        let n = levels.n;
        let mut values = vec![0.0; (n_lags + 1) * n];
        for m in 1..n {
            let r = levels.level(m);
            let mut acc = 0.0;
            for k in 1..=n_lags {
                let (a, b) = ((k - 1) as f64 * dt, k as f64 * dt);
                acc += gauss5(|u| ((c.kappa - rho) * u).exp() * stopped_exp_moment(c, u, r, w), a, b);
                values[k * n + m] = acc;
            }
        }
        Self { levels, dt, values }
    }
}
