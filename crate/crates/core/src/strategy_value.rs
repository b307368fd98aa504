//! Optimal feedback strategy θ*, equilibrium wealth simulation, the
//! consistency check μE[θ*_t] = f*(t) and the primal value function.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::grid::{Curve, TimeGrid};
use crate::kernels::{LagTable, LevelGrid};
use crate::mc::{fold_blocks, McConfig, McEstimate, MeanAccumulator, NodeAccumulator};
use crate::mfe::{dual_to_primal, solve_mfe, MfeConfig, MfeResult, Region};
use crate::params::{boundary_x0, initial_auxiliary_state, DerivedConstants, InitialState, ModelParams};
use crate::stochastic::{draw_increments, gbm_into, reflect_into, PathBundle};

/// Outperforming feedback amount (1−λ)σ_Z e^{η(T−t)} z/σ.
pub fn theta_outperforming(p: &ModelParams, t: f64, z: f64) -> f64 {
    let eta = p.derive_constants().eta;
    (1.0 - p.lambda()) * p.sigma_z() * (eta * (p.horizon() - t)).exp() * z / p.sigma()
}

/// Level-grid tables of the three r-dependent integrals in θ*, one row per
/// node of the f* grid.
#[derive(Debug, Clone)]
struct StrategyTables {
    levels: LevelGrid,
    /// ∫_t^T e^{−ρ(s−t)} I(s−t, r, 1) f*(s) ds, row-major nodes × levels.
    a1: Vec<f64>,
    /// ∫_0^τ e^{−(ρ−κ)u} I(u, r, w) du by lag.
    q2: LagTable,
    /// Ψ(τ, r) by lag.
    psi: LagTable,
}

/// Everything needed to evaluate θ* on one equilibrium.
#[derive(Debug, Clone)]
pub struct StrategyContext {
    params: ModelParams,
    consts: DerivedConstants,
    f_star: Curve,
    region: Region,
    r0: Option<f64>,
    tables: Option<StrategyTables>,
}

impl StrategyContext {
    pub fn new(p: &ModelParams, res: &MfeResult) -> Result<Self> {
        Self::from_parts(p, res.f_star.clone(), res.region, res.r_star)
    }

    /// Context for a given drift curve. Underperforming contexts need the
    /// initial dual level `r0` and build their tables here.
    pub fn from_parts(p: &ModelParams, f_star: Curve, region: Region, r0: Option<f64>) -> Result<Self> {
        let g = *f_star.grid();
        if g.t_start() != 0.0 || (g.t_end() - p.horizon()).abs() > 1e-12 {
            return Err(Error::GridMismatch("f* must live on [0, T]".into()));
        }
        let c = p.derive_constants();
        let tables = match (region, r0) {
            (Region::Outperforming, _) => None,
            (Region::Underperforming, Some(r0)) if r0 >= 0.0 => Some(build_tables(p, &c, &f_star, r0)),
            (Region::Underperforming, _) => {
                return domain("underperforming context needs an initial dual level r0 >= 0")
            }
        };
        Ok(Self {
            params: *p,
            consts: c,
            f_star,
            region,
            r0,
            tables,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn f_star(&self) -> &Curve {
        &self.f_star
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn r0(&self) -> Option<f64> {
        self.r0
    }

    pub fn grid(&self) -> &TimeGrid {
        self.f_star.grid()
    }

    /// θ* at grid node k from the dual state (R, Z).
    pub(crate) fn theta_at_node(&self, k: usize, r: f64, z: f64) -> f64 {
        let p = &self.params;
        let Some(tb) = &self.tables else {
            return theta_outperforming(p, self.grid().node(k), z);
        };
        let n = self.grid().n_steps();
        let nl = tb.levels.n;
        let lam = p.lambda();
        let (mu, s2) = (p.mu(), p.sigma() * p.sigma());
        let eta = self.consts.eta;
        let a1 = tb.levels.interp(&tb.a1[k * nl..(k + 1) * nl], r);
        let q2 = tb.levels.interp(tb.q2.row(n - k), r);
        let psi = tb.levels.interp(tb.psi.row(n - k), r);
        lam * mu / s2 * a1
            + (1.0 - lam) * eta * mu / s2 * z * q2
            + (1.0 - lam) * eta * p.sigma_z() / p.sigma() * z * psi
            + (1.0 - lam) * p.sigma_z() * z / p.sigma()
    }

    /// θ* at (t, r, z), linear in t between grid nodes. On the outperforming
    /// branch r is ignored.
    pub fn theta(&self, t: f64, r: f64, z: f64) -> Result<f64> {
        let p = &self.params;
        if !(0.0..=p.horizon()).contains(&t) {
            return domain(format!("time {t} outside [0, {}]", p.horizon()));
        }
        if !(r >= 0.0 && z >= 0.0) {
            return domain(format!("need r >= 0 and z >= 0, got r={r}, z={z}"));
        }
        let g = self.grid();
        if let Some(k) = g.node_index(t) {
            return Ok(self.theta_at_node(k, r, z));
        }
        let k = (((t - g.t_start()) / g.dt()).floor() as usize).min(g.n_steps() - 1);
        let w = (t - g.node(k)) / g.dt();
        Ok((1.0 - w) * self.theta_at_node(k, r, z) + w * self.theta_at_node(k + 1, r, z))
    }
}

fn build_tables(p: &ModelParams, c: &DerivedConstants, f: &Curve, r0: f64) -> StrategyTables {
    let g = *f.grid();
    let n = g.n_steps();
    let dt = g.dt();
    // Cover the reflected paths from r0, and at least the levels reached by
    // dual inversion of small positions.
    let levels = LevelGrid::for_paths(c, r0.max(6.0), p.horizon(), dt);
    let nl = levels.n;
    let rows = LagTable::inner_integrals(c, levels, dt, n, 1.0, p.rho());
    let fv = f.values();
    let a1: Vec<f64> = (0..=n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut row = vec![0.0; nl];
            for j in i + 1..=n {
                let wf = g.trapezoid_weight(j, i, n) * fv[j];
                for (v, l) in row.iter_mut().zip(rows.row(j - i)) {
                    *v += wf * l;
                }
            }
            row
        })
        .collect();
    let q2 = LagTable::inner_integrals(c, levels, dt, n, p.z_weight(), p.rho() - c.kappa).cumulative();
    let psi = LagTable::survival_integrals(c, levels, dt, n, p.rho(), p.z_weight());
    StrategyTables { levels, a1, q2, psi }
}

/// Underperforming θ* from the dual state; errors on an outperforming context.
pub fn theta_underperforming(ctx: &StrategyContext, t: f64, r: f64, z: f64) -> Result<f64> {
    if ctx.region != Region::Underperforming {
        return domain("context is on the outperforming branch");
    }
    ctx.theta(t, r, z)
}

/// A few simulated paths kept in full for inspection.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SamplePath {
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Local time of X: growth of the largest shortfall after t = 0.
    pub lx: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthEnsemble {
    pub grid: TimeGrid,
    pub v0: f64,
    pub n_paths: usize,
    pub mean_v: Vec<McEstimate>,
    pub mean_theta: Vec<McEstimate>,
    /// Largest shortfall A_t = sup_{s≤t} (λV̄_s + (1−λ)Z_s − V_s)⁺.
    pub shortfall: Vec<McEstimate>,
    /// E[∫_0^T e^{−ρs} dA_s], the discounted shortfall increments.
    pub discounted_shortfall: McEstimate,
    pub min_x: f64,
    pub min_theta: f64,
    /// Largest gap between X from the running-maximum formula and from
    /// the one-step reflected recursion.
    pub max_reconstruction_error: f64,
    pub lx_monotone: bool,
    /// Y = e^{−R} in (0, 1] on every node (vacuous on the outperforming branch).
    pub y_in_unit_interval: bool,
    /// Nodes where X crossed the free boundary into the other region by more
    /// than one step of slack.
    pub region_violations: usize,
    pub samples: Vec<SamplePath>,
}

struct WealthBlock {
    v: NodeAccumulator,
    theta: NodeAccumulator,
    a: NodeAccumulator,
    disc: MeanAccumulator,
    min_x: f64,
    min_theta: f64,
    recon: f64,
    lx_monotone: bool,
    y_ok: bool,
    violations: usize,
    samples: Vec<SamplePath>,
}

impl WealthBlock {
    fn new(nn: usize) -> Self {
        Self {
            v: NodeAccumulator::new(nn),
            theta: NodeAccumulator::new(nn),
            a: NodeAccumulator::new(nn),
            disc: MeanAccumulator::default(),
            min_x: f64::INFINITY,
            min_theta: f64::INFINITY,
            recon: 0.0,
            lx_monotone: true,
            y_ok: true,
            violations: 0,
            samples: Vec::new(),
        }
    }

    fn merge(&mut self, o: WealthBlock) {
        self.v.merge(&o.v);
        self.theta.merge(&o.theta);
        self.a.merge(&o.a);
        self.disc.merge(&o.disc);
        self.min_x = self.min_x.min(o.min_x);
        self.min_theta = self.min_theta.min(o.min_theta);
        self.recon = self.recon.max(o.recon);
        self.lx_monotone &= o.lx_monotone;
        self.y_ok &= o.y_ok;
        self.violations += o.violations;
        self.samples.extend(o.samples);
    }
}

/// Simulate the equilibrium wealth V* = v0 + ∫θ*(μdt + σdW) on the grid of
/// f*, with θ* fed by (R, Z) driven by the same Brownian increments. The
/// first `keep` paths are returned in full.
pub fn simulate_equilibrium_wealth(
    ctx: &StrategyContext,
    v0: f64,
    z0: f64,
    mc: &McConfig,
    keep: usize,
) -> Result<WealthEnsemble> {
    mc.validate()?;
    let p = &ctx.params;
    initial_auxiliary_state(p, v0, z0)?;
    let grid = *ctx.grid();
    let n = grid.n_steps();
    let nn = n + 1;
    let dt = grid.dt();
    let lam = p.lambda();
    let r0 = ctx.r0.unwrap_or(0.0);
    let under = ctx.region == Region::Underperforming;
    let cum_f = ctx.f_star.cumulative_integral();
    let total_f = cum_f[n];
    let eta = ctx.consts.eta;
    let boundary: Vec<(f64, f64)> = (0..nn)
        .map(|k| (lam * (total_f - cum_f[k]), (1.0 - lam) * ((eta * (p.horizon() - grid.node(k))).exp() - 1.0)))
        .collect();

    let out = fold_blocks(
        mc,
        WealthBlock::new(nn),
        |stream, count| {
            let mut rng = stream.rng();
            let mut dw = Vec::new();
            let mut ex = Vec::new();
            let mut b = PathBundle::default();
            let mut blk = WealthBlock::new(nn);
            let mut path = SamplePath::default();
            for q in 0..count {
                let keep_this = stream.stream_id == 0 && q < keep;
                draw_increments(&mut rng, &grid, &mut dw, &mut ex);
                reflect_into(&ctx.consts, &grid, r0, &dw, &ex, &mut b);
                gbm_into(p, &grid, z0, &dw, &mut b.z);
                path.v.clear();
                path.x.clear();
                path.z.clear();
                path.lx.clear();
                path.y.clear();
                path.theta.clear();
                let mut v = v0;
                let mut x_rec = 0.0;
                let mut sup_k = 0.0f64;
                let mut a0 = 0.0;
                let mut prev_k = 0.0;
                let mut prev_a = 0.0;
                let mut disc = 0.0;
                for k in 0..nn {
                    let t = grid.node(k);
                    let z = b.z[k];
                    let theta = ctx.theta_at_node(k, b.r[k], z);
                    let kk = lam * (v0 + cum_f[k]) + (1.0 - lam) * z - v;
                    sup_k = sup_k.max(kk);
                    let x = -kk + sup_k;
                    if k == 0 {
                        x_rec = (-kk).max(0.0);
                        a0 = sup_k;
                    } else {
                        x_rec = (x_rec - (kk - prev_k)).max(0.0);
                        disc += (-p.rho() * t).exp() * (sup_k - prev_a);
                    }
                    blk.recon = blk.recon.max((x - x_rec).abs());
                    blk.min_x = blk.min_x.min(x);
                    blk.min_theta = blk.min_theta.min(theta);
                    if sup_k < prev_a {
                        blk.lx_monotone = false;
                    }
                    if under && !(b.y[k] > 0.0 && b.y[k] <= 1.0) {
                        blk.y_ok = false;
                    }
                    let bx = boundary[k].0 + boundary[k].1 * z;
                    let slack = 3.0 * p.sigma() * theta.abs() * dt.sqrt() + 1e-9 * (1.0 + bx);
                    if (under && x > bx + slack) || (!under && x < bx - slack) {
                        blk.violations += 1;
                    }
                    blk.v.0[k].push(v);
                    blk.theta.0[k].push(theta);
                    blk.a.0[k].push(sup_k);
                    if keep_this {
                        path.v.push(v);
                        path.x.push(x);
                        path.z.push(z);
                        path.lx.push(sup_k - a0);
                        path.y.push(if under { b.y[k] } else { 1.0 });
                        path.theta.push(theta);
                    }
                    if k < n {
                        v += theta * (p.mu() * dt + p.sigma() * dw[k]);
                    }
                    prev_k = kk;
                    prev_a = sup_k;
                }
                blk.disc.push(disc);
                if keep_this {
                    blk.samples.push(path.clone());
                }
            }
            blk
        },
        |acc, part| acc.merge(part),
    );
    Ok(WealthEnsemble {
        grid,
        v0,
        n_paths: mc.n_paths,
        mean_v: out.v.estimates(),
        mean_theta: out.theta.estimates(),
        shortfall: out.a.estimates(),
        discounted_shortfall: out.disc.estimate(),
        min_x: out.min_x,
        min_theta: out.min_theta,
        max_reconstruction_error: out.recon,
        lx_monotone: out.lx_monotone,
        y_in_unit_interval: out.y_ok,
        region_violations: out.violations,
        samples: out.samples,
    })
}

/// Node-wise consistency residuals of one simulated equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub grid: TimeGrid,
    pub f_ref: Vec<f64>,
    pub mean_v: Vec<McEstimate>,
    pub mean_theta: Vec<McEstimate>,
    /// |μE[θ*_t] − f(t)| with standard error μ·se(θ).
    pub residual: Vec<f64>,
    pub residual_se: Vec<f64>,
    /// |E[V*_t] − v0 − ∫_0^t f| with standard error se(V).
    pub integrated: Vec<f64>,
    pub integrated_se: Vec<f64>,
}

impl ConsistencyReport {
    pub fn sup_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn f_norm(&self) -> f64 {
        self.f_ref.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Every node within max(k standard errors, rel·‖f‖∞), up to rounding.
    pub fn passes(&self, k: f64, rel: f64) -> bool {
        let floor = rel * self.f_norm();
        let round = 1e-12 * (1.0 + self.f_norm());
        self.residual
            .iter()
            .zip(&self.residual_se)
            .all(|(r, se)| *r <= (k * se).max(floor) + round)
    }

    /// Columns t, mean_V, se_V, mean_theta, se_theta, f_star, residual.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mean_V", "se_V", "mean_theta", "se_theta", "f_star", "residual"])?;
        for k in 0..self.grid.n_nodes() {
            out.write_record([
                self.grid.node(k).to_string(),
                self.mean_v[k].value.to_string(),
                self.mean_v[k].std_error.to_string(),
                self.mean_theta[k].value.to_string(),
                self.mean_theta[k].std_error.to_string(),
                self.f_ref[k].to_string(),
                self.residual[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Residuals of an ensemble against a reference drift (normally f* itself).
pub fn consistency_against(p: &ModelParams, ens: &WealthEnsemble, f_ref: &Curve) -> Result<ConsistencyReport> {
    if !f_ref.grid().same_as(&ens.grid) {
        return Err(Error::GridMismatch("reference drift and ensemble grids differ".into()));
    }
    let cum = f_ref.cumulative_integral();
    let mu = p.mu();
    let residual = ens
        .mean_theta
        .iter()
        .zip(f_ref.values())
        .map(|(th, f)| (mu * th.value - f).abs())
        .collect();
    let residual_se = ens.mean_theta.iter().map(|th| mu * th.std_error).collect();
    let integrated = ens
        .mean_v
        .iter()
        .zip(&cum)
        .map(|(v, c)| (v.value - ens.v0 - c).abs())
        .collect();
    let integrated_se = ens.mean_v.iter().map(|v| v.std_error).collect();
    Ok(ConsistencyReport {
        grid: ens.grid,
        f_ref: f_ref.values().to_vec(),
        mean_v: ens.mean_v.clone(),
        mean_theta: ens.mean_theta.clone(),
        residual,
        residual_se,
        integrated,
        integrated_se,
    })
}

/// Simulate the equilibrium of `ctx` and compare μE[θ*] with f*.
pub fn verify_consistency(ctx: &StrategyContext, v0: f64, z0: f64, mc: &McConfig) -> Result<ConsistencyReport> {
    let ens = simulate_equilibrium_wealth(ctx, v0, z0, mc, 0)?;
    consistency_against(&ctx.params, &ens, &ctx.f_star)
}

/// v(0, r, z) on a grid of dual levels, all from one path ensemble.
///
/// With D the driver started at 0 and M its running minimum flipped in
/// sign, the reflected level from r is R^r = D + max(r, M). M is
/// nondecreasing, so the nodes with M < r form a prefix and v(0, r, z) is a
/// prefix sum scaled by e^{−r} plus a suffix sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub z: f64,
    pub levels: Vec<f64>,
    pub v: Vec<McEstimate>,
    /// x₀(0, z) for the f* of the context: u vanishes at and above it.
    pub boundary: f64,
}

pub fn dual_value_table(ctx: &StrategyContext, z: f64, levels: &[f64], mc: &McConfig) -> Result<ValueTable> {
    mc.validate()?;
    if !(z >= 0.0) || levels.iter().any(|r| !(*r >= 0.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
        return domain("need z >= 0 and strictly increasing levels >= 0");
    }
    let p = &ctx.params;
    let grid = *ctx.grid();
    let n = grid.n_steps();
    let lam = p.lambda();
    let eta = ctx.consts.eta;
    let fv = ctx.f_star.values();
    let acc = fold_blocks(
        mc,
        NodeAccumulator::new(levels.len()),
        |stream, count| {
            let mut rng = stream.rng();
            let mut dw = Vec::new();
            let mut ex = Vec::new();
            let mut b = PathBundle::default();
            let mut acc = NodeAccumulator::new(levels.len());
            let mut prefix = vec![0.0; n + 2];
            let mut suffix = vec![0.0; n + 2];
            for _ in 0..count {
                draw_increments(&mut rng, &grid, &mut dw, &mut ex);
                reflect_into(&ctx.consts, &grid, 0.0, &dw, &ex, &mut b);
                gbm_into(p, &grid, z, &dw, &mut b.z);
                let g = |k: usize| {
                    grid.trapezoid_weight(k, 0, n)
                        * (-p.rho() * grid.node(k) - b.driver[k]).exp()
                        * (lam * fv[k] + (1.0 - lam) * eta * b.z[k])
                };
                for k in 0..=n {
                    prefix[k + 1] = prefix[k] + g(k);
                }
                suffix[n + 1] = 0.0;
                for k in (0..=n).rev() {
                    suffix[k] = suffix[k + 1] + g(k) * (-b.l[k]).exp();
                }
                for (j, &r) in levels.iter().enumerate() {
                    let idx = b.l.partition_point(|&m| m < r);
                    acc.0[j].push(-((-r).exp() * prefix[idx] + suffix[idx]));
                }
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    Ok(ValueTable {
        z,
        levels: levels.to_vec(),
        v: acc.estimates(),
        boundary: boundary_x0(p, &ctx.f_star, 0.0, z)?,
    })
}

impl ValueTable {
    /// u(0, x, z) = min(0, min_r {v(0, r, z) + x e^{−r}}), and 0 on the
    /// outperforming region. The standard error is that of v at the minimiser.
    pub fn u(&self, x: f64) -> McEstimate {
        let n = self.v.first().map_or(0, |e| e.n_paths);
        if x >= self.boundary {
            return McEstimate::exact(0.0, n);
        }
        let mut best = McEstimate::exact(0.0, n);
        for (r, v) in self.levels.iter().zip(&self.v) {
            let cand = v.value + x * (-r).exp();
            if cand < best.value {
                best = McEstimate {
                    value: cand,
                    std_error: v.std_error,
                    n_paths: n,
                };
            }
        }
        best
    }
}

/// Default level grid for u: 0 to 16 in steps of 0.02.
pub fn default_value_levels() -> Vec<f64> {
    (0..=800).map(|k| k as f64 * 0.02).collect()
}

/// u(0, x, z) for the equilibrium drift of `ctx`.
pub fn value_u(ctx: &StrategyContext, x: f64, z: f64, mc: &McConfig) -> Result<McEstimate> {
    if !(x >= 0.0) {
        return domain(format!("x must be >= 0, got {x}"));
    }
    Ok(dual_value_table(ctx, z, &default_value_levels(), mc)?.u(x))
}

/// Primal value w: −u(0, (1−λ)(v0−z0), z0) when v0 ≥ z0, and
/// −u(0, 0, z0) + (1−λ)(z0 − v0) otherwise.
pub fn value_w(ctx: &StrategyContext, v0: f64, z0: f64, mc: &McConfig) -> Result<McEstimate> {
    let p = &ctx.params;
    let st = initial_auxiliary_state(p, v0, z0)?;
    let u = value_u(ctx, st.x0, z0, mc)?;
    let extra = if v0 >= z0 { 0.0 } else { (1.0 - p.lambda()) * (z0 - v0) };
    Ok(McEstimate {
        value: -u.value + extra,
        ..u
    })
}

/// Dual level r with x(t, r, z) = x, or `None` when x lies on or above the
/// free boundary x₀(t, z).
pub fn invert_dual(ctx: &StrategyContext, t: f64, x: f64, z: f64) -> Result<Option<f64>> {
    let p = &ctx.params;
    let bound = boundary_x0(p, &ctx.f_star, t, z)?;
    if !(x >= 0.0) {
        return domain(format!("x must be >= 0, got {x}"));
    }
    if x >= bound {
        return Ok(None);
    }
    if x == 0.0 {
        return Ok(Some(0.0));
    }
    let x_at = |r: f64| dual_to_primal(p, t, r, z, &ctx.f_star);
    let mut hi = 1.0;
    while x_at(hi) < x {
        hi *= 2.0;
        if hi > 200.0 {
            return Ok(None);
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if x_at(mid) < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// One point of the θ*-against-x diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaPoint {
    pub x: f64,
    /// Dual level, absent on the outperforming region.
    pub r: Option<f64>,
    pub theta: f64,
}

/// θ*(t, x, z) over `xs` through the dual inversion, together with whether
/// the values are nonincreasing in x (up to `tol`).
pub fn theta_x_sweep(ctx: &StrategyContext, t: f64, z: f64, xs: &[f64], tol: f64) -> Result<(Vec<ThetaPoint>, bool)> {
    let p = &ctx.params;
    let mut pts = Vec::with_capacity(xs.len());
    for &x in xs {
        let r = invert_dual(ctx, t, x, z)?;
        let theta = match (r, &ctx.tables) {
            (Some(r), Some(_)) => ctx.theta(t, r, z)?,
            (Some(r), None) => {
                // An outperforming context has no tables; build them on the fly.
                let under = StrategyContext::from_parts(p, ctx.f_star.clone(), Region::Underperforming, Some(r))?;
                under.theta(t, r, z)?
            }
            (None, _) => theta_outperforming(p, t, z),
        };
        pts.push(ThetaPoint { x, r, theta });
    }
    let monotone = pts.windows(2).all(|w| w[1].theta <= w[0].theta + tol);
    Ok((pts, monotone))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    /// Initial wealth implied by the fixed (x0, z0) at this λ.
    pub v0: f64,
    pub region: Region,
    pub r_star: Option<f64>,
    /// θ*(t, x, z0) on the probe grid.
    pub theta: Vec<f64>,
    /// Expected discounted largest shortfall, −u(0, x0, z0).
    pub value: McEstimate,
    /// Simulated E[A_T].
    pub shortfall: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSweep {
    pub t: f64,
    pub xs: Vec<f64>,
    pub points: Vec<LambdaPoint>,
    /// θ*(t, x, z0) nonincreasing in λ at every probe x.
    pub theta_monotone: bool,
    /// −u(0, x0, z0) nonincreasing in λ within 3 combined standard errors.
    pub shortfall_monotone: bool,
}

/// Solve the equilibrium at a fixed initial state (x0, z0) for each λ, then
/// record the feedback x ↦ θ*(t, x, z0) on `xs`, the value −u(0, x0, z0)
/// and the simulated terminal largest shortfall.
pub fn lambda_sweep(
    p: &ModelParams,
    x0: f64,
    z0: f64,
    lambdas: &[f64],
    t: f64,
    xs: &[f64],
    cfg: &MfeConfig,
) -> Result<LambdaSweep> {
    let mut points = Vec::new();
    for &lam in lambdas {
        let pl = p.with_lambda(lam)?;
        let st = InitialState::from_x0(&pl, x0, z0)?;
        let res = solve_mfe(&pl, x0, z0, cfg)?;
        let ctx = StrategyContext::new(&pl, &res)?;
        let (pts, _) = theta_x_sweep(&ctx, t, z0, xs, 0.0)?;
        let ens = simulate_equilibrium_wealth(&ctx, st.v0, z0, &cfg.mc, 0)?;
        let value = match res.region {
            Region::Underperforming => {
                let u = dual_value_table(&ctx, z0, &default_value_levels(), &cfg.mc)?.u(x0);
                McEstimate { value: -u.value, ..u }
            }
            Region::Outperforming => McEstimate::exact(0.0, cfg.mc.n_paths),
        };
        points.push(LambdaPoint {
            lambda: lam,
            v0: st.v0,
            region: res.region,
            r_star: res.r_star,
            theta: pts.iter().map(|q| q.theta).collect(),
            value,
            shortfall: *ens.shortfall.last().unwrap(),
        });
    }
    let theta_monotone = points
        .windows(2)
        .all(|w| w[0].theta.iter().zip(&w[1].theta).all(|(a, b)| *b <= *a + 1e-9));
    let shortfall_monotone = points.windows(2).all(|w| {
        let se = (w[0].value.std_error.powi(2) + w[1].value.std_error.powi(2)).sqrt();
        w[1].value.value <= w[0].value.value + 3.0 * se
    });
    Ok(LambdaSweep {
        t,
        xs: xs.to_vec(),
        points,
        theta_monotone,
        shortfall_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{index_survival_integral, inner_phi_closed};
    use crate::mfe::outperforming_drift;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn outperforming_amounts() {
        let p = ModelParams::baseline();
        assert!((theta_outperforming(&p, 0.0, 20.0) - 17.6827).abs() < 1e-4);
        assert!((theta_outperforming(&p, 1.0, 20.0) - 16.0).abs() < 1e-12);
        assert_eq!(theta_outperforming(&p.with_lambda(1.0).unwrap(), 0.3, 20.0), 0.0);
    }

    #[test]
    fn tables_match_direct_terms() {
        // Oracle: each summand evaluated by its own quadrature at a node.
        let p = ModelParams::baseline();
        let c = p.derive_constants();
        let g = grid(200);
        let f = Curve::from_fn(g, |t| 2.0 + 0.3 * t);
        let ctx = StrategyContext::from_parts(&p, f.clone(), Region::Underperforming, Some(1.0)).unwrap();
        let (k, r, z) = (60usize, 0.73, 18.0);
        let t = g.node(k);
        let w = p.z_weight();
        let mut a1 = 0.0;
        let mut q2 = 0.0;
        for j in k + 1..=200 {
            let tau = g.node(j) - t;
            let wt = g.trapezoid_weight(j, k, 200);
            a1 += wt * (-p.rho() * tau).exp() * inner_phi_closed(&c, tau, r, 1.0) * f.values()[j];
            q2 += wt * (-(p.rho() - c.kappa) * tau).exp() * inner_phi_closed(&c, tau, r, w);
        }
        let psi = index_survival_integral(&c, p.rho(), w, 1.0 - t, r);
        let expect = 0.2 * 10.0 * a1 + 0.8 * 0.1 * 10.0 * z * q2 + 0.8 * 0.1 * z * psi + 0.8 * z;
        let got = ctx.theta(t, r, z).unwrap();
        assert!((got - expect).abs() < 2e-3 * expect, "{got} vs {expect}");
        // At T only the index term survives.
        assert!((ctx.theta(1.0, r, z).unwrap() - 0.8 * z).abs() < 1e-12);
        // λ = 1, z = 0: only the f-term.
        let p1 = p.with_lambda(1.0).unwrap();
        let ctx1 = StrategyContext::from_parts(&p1, f, Region::Underperforming, Some(1.0)).unwrap();
        let th = ctx1.theta(t, r, 0.0).unwrap();
        assert!((th - 10.0 * a1).abs() < 2e-3 * th);
    }

    #[test]
    fn small_level_is_continuous() {
        let p = ModelParams::baseline();
        let f = Curve::from_fn(grid(100), |_| 2.5);
        let ctx = StrategyContext::from_parts(&p, f, Region::Underperforming, Some(0.5)).unwrap();
        let a = ctx.theta(0.2, 0.0, 20.0).unwrap();
        let b = ctx.theta(0.2, 1e-3, 20.0).unwrap();
        assert!((a - b).abs() < 1e-2 * a);
        assert!(a >= 0.8 * 20.0);
    }

    #[test]
    fn outperforming_wealth_is_consistent() {
        let p = ModelParams::baseline();
        let g = grid(100);
        let f = outperforming_drift(&p, g, 20.0);
        let ctx = StrategyContext::from_parts(&p, f.clone(), Region::Outperforming, None).unwrap();
        let v0 = 20.0 + 3.0 / 0.8;
        let mc = McConfig::new(4000, 100, 3);
        let ens = simulate_equilibrium_wealth(&ctx, v0, 20.0, &mc, 2).unwrap();
        assert_eq!(ens.samples.len(), 2);
        let s = &ens.samples[0];
        for k in 0..=100 {
            assert!((s.theta[k] - theta_outperforming(&p, g.node(k), s.z[k])).abs() < 1e-12);
        }
        let rep = consistency_against(&p, &ens, &f).unwrap();
        assert!(rep.passes(3.0, 0.0), "sup residual {}", rep.sup_residual());
        assert_eq!(rep.integrated[0], 0.0);
        assert!(ens.min_x >= 0.0 && ens.lx_monotone && ens.max_reconstruction_error < 1e-9);
        assert_eq!(ens.region_violations, 0);
        let bad = consistency_against(&p, &ens, &f.scaled(1.1)).unwrap();
        assert!(!bad.passes(3.0, 0.02));
    }

    #[test]
    fn value_table_prefix_trick_matches_direct_paths() {
        use crate::kernels::value_v;
        let p = ModelParams::baseline();
        let f = Curve::from_fn(grid(50), |t| 2.0 - 0.2 * t);
        let ctx = StrategyContext::from_parts(&p, f.clone(), Region::Underperforming, Some(1.0)).unwrap();
        let mc = McConfig::new(2000, 50, 4);
        let tab = dual_value_table(&ctx, 20.0, &[0.0, 0.4, 1.3], &mc).unwrap();
        for (j, r) in [0.0, 0.4, 1.3].iter().enumerate() {
            let direct = value_v(&p, 0.0, *r, 20.0, &f, &mc).unwrap();
            assert!((tab.v[j].value - direct.value).abs() < 1e-9 * direct.value.abs(), "r={r}");
        }
    }

    #[test]
    fn u_is_nonpositive_and_one_lipschitz() {
        let p = ModelParams::baseline();
        let f = Curve::from_fn(grid(50), |t| 2.0 - 0.2 * t);
        let ctx = StrategyContext::from_parts(&p, f, Region::Underperforming, Some(1.0)).unwrap();
        let tab = dual_value_table(&ctx, 20.0, &default_value_levels(), &McConfig::new(2000, 50, 4)).unwrap();
        let xs: Vec<f64> = (0..12).map(|k| 0.2 * k as f64).collect();
        let us: Vec<f64> = xs.iter().map(|&x| tab.u(x).value).collect();
        assert!(us.iter().all(|&u| u <= 0.0));
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                assert!((us[i] - us[j]).abs() <= (xs[i] - xs[j]).abs() + 1e-12);
            }
        }
        assert_eq!(tab.u(tab.boundary).value, 0.0);
    }

    #[test]
    fn dual_inversion_round_trip() {
        let p = ModelParams::baseline();
        let f = Curve::from_fn(grid(100), |_| 2.0);
        let ctx = StrategyContext::from_parts(&p, f.clone(), Region::Underperforming, Some(1.0)).unwrap();
        let r = invert_dual(&ctx, 0.5, 0.7, 20.0).unwrap().unwrap();
        assert!((dual_to_primal(&p, 0.5, r, 20.0, &f) - 0.7).abs() < 1e-9);
        let bound = boundary_x0(&p, &f, 0.5, 20.0).unwrap();
        assert!((dual_to_primal(&p, 0.5, 40.0, 20.0, &f) - bound).abs() < 1e-6 * bound);
        assert_eq!(invert_dual(&ctx, 0.5, bound + 0.01, 20.0).unwrap(), None);
    }

    #[test]
    fn lambda_sweep_holds_x0_fixed() {
        let p = ModelParams::baseline();
        let cfg = MfeConfig {
            mc: McConfig::new(500, 50, 5),
            ..MfeConfig::default()
        };
        let xs = [10.0, 20.0];
        let s = lambda_sweep(&p, 5.0, 20.0, &[0.1, 0.3], 0.5, &xs, &cfg).unwrap();
        assert_eq!(s.points.len(), 2);
        for q in &s.points {
            assert_eq!(q.region, Region::Outperforming);
            assert!((q.v0 - (20.0 + 5.0 / (1.0 - q.lambda))).abs() < 1e-12);
            let pl = p.with_lambda(q.lambda).unwrap();
            for th in &q.theta {
                assert!((th - theta_outperforming(&pl, 0.5, 20.0)).abs() < 1e-12);
            }
        }
        assert!(s.theta_monotone && s.shortfall_monotone);
        assert!(s.points.iter().all(|q| q.value.value == 0.0));
    }
}
