//! Path simulation for the reflected dual level R, its local time, the index
//! Z and the dual path Y = e^{−R}, all driven by one Brownian motion.
//!
//! The driver is D_t = r + a(t − t_0) + bW_t. Between grid nodes the minimum of
//! D is drawn exactly from its Brownian-bridge law, so the local time
//! L_k = max(0, −min_{s≤t_k} D_s) and R = D + L are the continuous-time
//! Skorokhod reflection sampled at the nodes.

use std::io::Write;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

pub use crate::grid::TimeGrid;
pub use crate::mc::RngStream;

use crate::error::{domain, Result};
use crate::params::{DerivedConstants, ModelParams};

/// One simulated path. `z` is empty when no index path was requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PathBundle {
    pub dw: Vec<f64>,
    /// Exp(1) variates, one per step, that fix the bridge minimum.
    pub ex: Vec<f64>,
    pub driver: Vec<f64>,
    /// Minimum of the driver over each step; `step_min[k]` covers [t_k, t_{k+1}].
    pub step_min: Vec<f64>,
    pub r: Vec<f64>,
    pub l: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    /// First node by which the driver has reached 0, if any.
    pub tau_idx: Option<usize>,
}

/// Fill `dw` with `grid.n_steps()` Brownian increments, then `ex` with as many
/// Exp(1) variates. The normals come first so that index paths built from
/// `dw` alone do not depend on the bridge draws.
pub fn draw_increments<R: Rng>(rng: &mut R, grid: &TimeGrid, dw: &mut Vec<f64>, ex: &mut Vec<f64>) {
    let sd = grid.dt().sqrt();
    dw.clear();
    dw.extend((0..grid.n_steps()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
    ex.clear();
    ex.extend((0..grid.n_steps()).map(|_| rng.sample::<f64, _>(Exp1)));
}

/// Minimum of a Brownian bridge from `a` to `b` with variance `var` over the
/// step, given an Exp(1) variate `e`.
pub fn bridge_minimum(a: f64, b: f64, var: f64, e: f64) -> f64 {
    0.5 * (a + b - ((b - a) * (b - a) + 2.0 * var * e).sqrt())
}

/// Skorokhod reflection of the driver built from `dw` and `ex`, written into `out`.
pub fn reflect_into(c: &DerivedConstants, grid: &TimeGrid, r0: f64, dw: &[f64], ex: &[f64], out: &mut PathBundle) {
    let n = grid.n_nodes();
    let dt = grid.dt();
    let var = c.r_vol * c.r_vol * dt;
    out.driver.clear();
    out.step_min.clear();
    out.r.clear();
    out.l.clear();
    out.y.clear();
    out.tau_idx = None;
    let mut w = 0.0;
    let mut l = 0.0f64;
    let mut prev = r0;
    for k in 0..n {
        if k > 0 {
            w += dw[k - 1];
        }
        let d = r0 + c.r_drift * (k as f64 * dt) + c.r_vol * w;
        let low = if k == 0 {
            d
        } else {
            let m = bridge_minimum(prev, d, var, ex[k - 1]);
            out.step_min.push(m);
            m
        };
        if low <= 0.0 && out.tau_idx.is_none() {
            out.tau_idx = Some(k);
        }
        l = l.max(-low);
        let r = d + l;
        out.driver.push(d);
        out.l.push(l);
        out.r.push(r);
        out.y.push((-r).exp());
        prev = d;
    }
}

/// Exact log-normal update of the index along `dw`.
pub fn gbm_into(p: &ModelParams, grid: &TimeGrid, z0: f64, dw: &[f64], out: &mut Vec<f64>) {
    let drift = (p.mu_z() - 0.5 * p.sigma_z() * p.sigma_z()) * grid.dt();
    out.clear();
    out.push(z0);
    let mut z = z0;
    for d in dw {
        z *= (drift + p.sigma_z() * d).exp();
        out.push(z);
    }
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        domain(format!("{name} must be finite and >= 0, got {v}"))
    }
}

/// Reflected path from level `r`; `z` is left empty.
pub fn simulate_reflected(
    c: &DerivedConstants,
    grid: &TimeGrid,
    r: f64,
    stream: &RngStream,
) -> Result<PathBundle> {
    check_level("r", r)?;
    let mut b = PathBundle::default();
    let (mut dw, mut ex) = (Vec::new(), Vec::new());
    draw_increments(&mut stream.rng(), grid, &mut dw, &mut ex);
    reflect_into(c, grid, r, &dw, &ex, &mut b);
    b.dw = dw;
    b.ex = ex;
    Ok(b)
}

/// Index path from `z`. With the same stream as [`simulate_reflected`] it
/// consumes the identical increments.
pub fn simulate_gbm(p: &ModelParams, grid: &TimeGrid, z: f64, stream: &RngStream) -> Result<Vec<f64>> {
    check_level("z", z)?;
    let (mut dw, mut ex) = (Vec::new(), Vec::new());
    draw_increments(&mut stream.rng(), grid, &mut dw, &mut ex);
    let mut out = Vec::new();
    gbm_into(p, grid, z, &dw, &mut out);
    Ok(out)
}

/// Reflected level and index path sharing one set of increments.
pub fn simulate_joint(
    p: &ModelParams,
    grid: &TimeGrid,
    r: f64,
    z: f64,
    stream: &RngStream,
) -> Result<PathBundle> {
    check_level("z", z)?;
    let mut b = simulate_reflected(&p.derive_constants(), grid, r, stream)?;
    gbm_into(p, grid, z, &b.dw, &mut b.z);
    Ok(b)
}

/// τ ∧ T rounded up to the grid: the first node by which the driver has
/// reached 0, else t_end.
pub fn hitting_time_tau(bundle: &PathBundle, grid: &TimeGrid) -> f64 {
    bundle.tau_idx.map_or(grid.t_end(), |k| grid.node(k))
}

/// Debug dump with one row per node: k, t, D, L, R, Y, Z.
pub fn write_path_csv<W: Write>(bundle: &PathBundle, grid: &TimeGrid, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "t", "D", "L", "R", "Y", "Z"])?;
    for k in 0..bundle.r.len() {
        let z = bundle.z.get(k).map_or(String::new(), |v| v.to_string());
        out.write_record([
            k.to_string(),
            grid.node(k).to_string(),
            bundle.driver[k].to_string(),
            bundle.l[k].to_string(),
            bundle.r[k].to_string(),
            bundle.y[k].to_string(),
            z,
        ])?;
    }
    out.flush()?;
    Ok(())
}
