//! Equilibrium drift: the fixed point f = Jf for a given dual level, the
//! dual-to-primal map r ↦ x(r), and its inversion at the initial state.

use std::io::Write;

use serde::Serialize;

pub use crate::grid::Curve;

use crate::error::{domain, Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::{build_kernel_table, gauss5, path_integrals, stopped_exp_moment, KernelTable};
use crate::mc::{fold_blocks, McConfig, McEstimate, MeanAccumulator};
use crate::params::{threshold_hat_x0, ModelParams};
use crate::stochastic::{draw_increments, gbm_into, reflect_into, PathBundle};

/// (Jf)(t_i) = Σ_j w_j G(t_i, s_j) f(s_j) + H(t_i), trapezoid weights on [t_i, T].
pub fn apply_j(f: &Curve, kt: &KernelTable) -> Result<Curve> {
    if !f.grid().same_as(&kt.grid) {
        return Err(Error::GridMismatch(format!(
            "curve has {} steps, kernel table {}",
            f.grid().n_steps(),
            kt.grid.n_steps()
        )));
    }
    let g = &kt.grid;
    let n = g.n_steps();
    let fv = f.values();
    let values = (0..=n)
        .map(|i| {
            let integral: f64 = (i + 1..=n).map(|j| g.trapezoid_weight(j, i, n) * kt.g(i, j) * fv[j]).sum();
            integral + kt.h_values[i]
        })
        .collect();
    Curve::new(*g, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointConfig {
    /// Stop once ‖Jf − f‖∞ ≤ tol·(1 + ‖f‖∞).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOutcome {
    pub curve: Curve,
    /// Final ‖Jf − f‖∞.
    pub residual: f64,
    pub iterations: usize,
    /// ‖f_{n+1} − f_n‖∞ for every global Picard step.
    pub residual_history: Vec<f64>,
    /// sup_i Σ_j w_j G_ij, the sup-norm Lipschitz constant of J.
    pub operator_norm: f64,
    pub used_fallback: bool,
    /// Node-wise standard error of the curve induced by the kernel noise,
    /// bounded by (se(H) + Σ_j w_j se(G) f_j)/(1 − M) when M < 1.
    pub std_error: Vec<f64>,
}

/// Picard iteration f_{n+1} = J f_n from `init` (H when `None`). If the global
/// iteration stalls, the grid is cut into trailing blocks on which J is a
/// contraction and the blocks are solved backward from T.
pub fn iterate_fixed_point(kt: &KernelTable, init: Option<&Curve>, cfg: &FixedPointConfig) -> Result<FixedPointOutcome> {
    let grid = kt.grid;
    let mut f = match init {
        Some(c) => c.clone(),
        None => Curve::new(grid, kt.h_values.clone())?,
    };
    let operator_norm = kt.operator_norm();
    let mut history = Vec::new();
    let mut stalled = 0;
    for it in 1..=cfg.max_iter {
        let next = apply_j(&f, kt)?;
        let step = next.sup_distance(&f);
        if let Some(&prev) = history.last() {
            if step >= prev {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        history.push(step);
        f = next;
        if step <= cfg.tol * (1.0 + f.sup_norm()) {
            let residual = apply_j(&f, kt)?.sup_distance(&f);
            return Ok(FixedPointOutcome {
                residual,
                iterations: it,
                residual_history: history,
                operator_norm,
                used_fallback: false,
                std_error: curve_std_error(&f, kt, operator_norm),
                curve: f,
            });
        }
        if stalled >= 25 || !step.is_finite() {
            break;
        }
    }
    let curve = backward_blocks(kt, cfg)?;
    let residual = apply_j(&curve, kt)?.sup_distance(&curve);
    if residual > cfg.tol * (1.0 + curve.sup_norm()) {
        return Err(Error::NonConvergence {
            what: "fixed point",
            iterations: cfg.max_iter,
            residual,
        });
    }
    Ok(FixedPointOutcome {
        std_error: curve_std_error(&curve, kt, operator_norm),
        curve,
        residual,
        iterations: history.len(),
        residual_history: history,
        operator_norm,
        used_fallback: true,
    })
}

fn curve_std_error(f: &Curve, kt: &KernelTable, m: f64) -> Vec<f64> {
    let g = &kt.grid;
    let n = g.n_steps();
    let amp = if m < 1.0 { 1.0 / (1.0 - m) } else { 1.0 };
    (0..=n)
        .map(|i| {
            let gs: f64 = (i + 1..=n).map(|j| g.trapezoid_weight(j, i, n) * kt.g_std_error(i, j) * f.values()[j].abs()).sum();
            amp * (kt.h_se[i] + gs)
        })
        .collect()
}

/// Solve on trailing node blocks [a, b], last block first, choosing each
/// block short enough that its local operator norm is at most 1/2.
fn backward_blocks(kt: &KernelTable, cfg: &FixedPointConfig) -> Result<Curve> {
    let g = kt.grid;
    let n = g.n_steps();
    let mut f = kt.h_values.clone();
    let mut b = n;
    loop {
        // Grow the block downward while the local norm stays below 1/2.
        let mut a = b;
        while a > 0 {
            let cand = a - 1;
            let norm = (cand..=b)
                .map(|i| (i..=b).map(|j| g.trapezoid_weight(j, i, n) * kt.g(i, j)).sum::<f64>())
                .fold(0.0, f64::max);
            if norm > 0.5 && a < b {
                break;
            }
            a = cand;
        }
        // Contribution from the already solved part (j > b) is fixed.
        let known: Vec<f64> = (a..=b)
            .map(|i| {
                (b + 1..=n).map(|j| g.trapezoid_weight(j, i, n) * kt.g(i, j) * f[j]).sum::<f64>() + kt.h_values[i]
            })
            .collect();
        let mut converged = false;
        for _ in 0..cfg.max_iter {
            let mut step = 0.0f64;
            let mut next = vec![0.0; b - a + 1];
            for (k, i) in (a..=b).enumerate() {
                let local: f64 = (i + 1..=b).map(|j| g.trapezoid_weight(j, i, n) * kt.g(i, j) * f[j]).sum();
                next[k] = local + known[k];
            }
            for (k, i) in (a..=b).enumerate() {
                step = step.max((next[k] - f[i]).abs());
                f[i] = next[k];
            }
            if step <= 0.1 * cfg.tol * (1.0 + f.iter().fold(0.0, |m: f64, v| m.max(v.abs()))) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "backward block fixed point",
                iterations: cfg.max_iter,
                residual: f64::NAN,
            });
        }
        if a == 0 {
            break;
        }
        b = a - 1;
    }
    Curve::new(g, f)
}

/// Kernel table at (r, z) on the uniform grid of `mc` and its fixed point.
pub fn solve_fixed_point(
    p: &ModelParams,
    r: f64,
    z: f64,
    mc: &McConfig,
    cfg: &FixedPointConfig,
) -> Result<(FixedPointOutcome, KernelTable)> {
    let grid = TimeGrid::new(0.0, p.horizon(), mc.n_steps)?;
    let kt = build_kernel_table(p, r, z, &grid, mc)?;
    let out = iterate_fixed_point(&kt, None, cfg)?;
    Ok((out, kt))
}

/// x(r) = e^r v_r(0, r, z) by Monte Carlo on the grid of `f`.
pub fn x_of_r(p: &ModelParams, r: f64, z: f64, f: &Curve, mc: &McConfig) -> Result<McEstimate> {
    if !(r >= 0.0 && z >= 0.0) {
        return domain(format!("need r >= 0 and z >= 0, got r={r}, z={z}"));
    }
    mc.validate()?;
    if r == 0.0 {
        return Ok(McEstimate::exact(0.0, mc.n_paths));
    }
    let c = p.derive_constants();
    let grid = *f.grid();
    let fv = f.values().to_vec();
    let lam = p.lambda();
    let acc = fold_blocks(
        mc,
        MeanAccumulator::default(),
        |stream, n| {
            let mut rng = stream.rng();
            let mut dw = Vec::new();
            let mut ex = Vec::new();
            let mut b = PathBundle::default();
            let mut acc = MeanAccumulator::default();
            for _ in 0..n {
                draw_increments(&mut rng, &grid, &mut dw, &mut ex);
                reflect_into(&c, &grid, r, &dw, &ex, &mut b);
                gbm_into(p, &grid, z, &dw, &mut b.z);
                let i = path_integrals(&grid, &b, &fv, p.rho(), c.r_vol, r);
                acc.push(lam * i.f_stopped + (1.0 - lam) * c.eta * i.z_stopped);
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    Ok(acc.estimate())
}

/// Deterministic x(r) for a given f from the closed-form stopped moments:
/// λ∫e^{−ρs}E_1(s, r) f(s) ds + (1−λ)ηz∫e^{(κ−ρ)s}E_w(s, r) ds.
pub fn x_of_r_quadrature(p: &ModelParams, r: f64, z: f64, f: &Curve) -> f64 {
    dual_to_primal(p, 0.0, r, z, f)
}

/// x(t, r, z) = e^r v_r(t, r, z) for a given f, by Gauss–Legendre quadrature
/// over the cells of f's grid. As r → ∞ it tends to the free boundary x₀(t, z).
pub fn dual_to_primal(p: &ModelParams, t: f64, r: f64, z: f64, f: &Curve) -> f64 {
    let c = p.derive_constants();
    let w = p.z_weight();
    let lam = p.lambda();
    let g = f.grid();
    let integrand = |s: f64| {
        let u = s - t;
        lam * (-p.rho() * u).exp() * stopped_exp_moment(&c, u, r, 1.0) * f.eval(s)
            + (1.0 - lam) * c.eta * z * ((c.kappa - p.rho()) * u).exp() * stopped_exp_moment(&c, u, r, w)
    };
    (0..g.n_steps())
        .filter(|&k| g.node(k + 1) > t)
        .map(|k| {
            let (a, b) = (g.node(k).max(t), g.node(k + 1));
            // Split each cell so the boundary layer near s = t is resolved.
            let m = 4;
            let h = (b - a) / m as f64;
            (0..m)
                .map(|q| gauss5(integrand, a + q as f64 * h, a + (q + 1) as f64 * h))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfeConfig {
    pub mc: McConfig,
    pub fixed_point: FixedPointConfig,
    /// Bisection tolerance on x, in currency.
    pub tol_x: f64,
    /// First upper bracket for r.
    pub r_start: f64,
    /// Largest r tried when expanding the bracket.
    pub r_cap: f64,
    pub max_probes: usize,
}

impl Default for MfeConfig {
    fn default() -> Self {
        Self {
            mc: McConfig::default(),
            fixed_point: FixedPointConfig::default(),
            tol_x: 1e-2,
            r_start: 1.0,
            r_cap: 64.0,
            max_probes: 60,
        }
    }
}

/// One evaluation of x(r) during the search for r*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub r: f64,
    pub x: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualMatch {
    pub r: f64,
    pub fixed_point: FixedPointOutcome,
    pub x: McEstimate,
    pub trace: Vec<Probe>,
    /// Set when a probe contradicted monotonicity of x(r) beyond noise.
    pub non_monotone: bool,
}

fn probe(p: &ModelParams, r: f64, z: f64, cfg: &MfeConfig) -> Result<(FixedPointOutcome, McEstimate)> {
    let (fp, _) = solve_fixed_point(p, r, z, &cfg.mc, &cfg.fixed_point)?;
    let x = x_of_r(p, r, z, &fp.curve, &cfg.mc)?;
    Ok((fp, x))
}

/// Find r with x(r) = x by bisection over an expanding bracket, re-solving the
/// fixed point at each probe. All probes share one seed, so x(r) is smooth in r.
pub fn find_r_for_x(p: &ModelParams, x: f64, z: f64, cfg: &MfeConfig) -> Result<DualMatch> {
    let hat = threshold_hat_x0(p, z);
    if !(x >= 0.0) || x >= hat {
        return domain(format!("x = {x} must lie in [0, x̂0(z) = {hat})"));
    }
    let mut trace = Vec::new();
    let record = |r: f64, e: &McEstimate, trace: &mut Vec<Probe>| {
        trace.push(Probe { r, x: e.value, se: e.std_error })
    };
    let accept = |e: &McEstimate| (e.value - x).abs() < cfg.tol_x + 3.0 * e.std_error;

    let (fp0, x0) = probe(p, 0.0, z, cfg)?;
    record(0.0, &x0, &mut trace);
    if accept(&x0) {
        return Ok(DualMatch { r: 0.0, fixed_point: fp0, x: x0, trace, non_monotone: false });
    }
    let mut lo = (0.0, x0);
    let mut hi_r = cfg.r_start;
    let hi = loop {
        let (fp, e) = probe(p, hi_r, z, cfg)?;
        record(hi_r, &e, &mut trace);
        if accept(&e) {
            return Ok(DualMatch { r: hi_r, fixed_point: fp, x: e, trace, non_monotone: false });
        }
        if e.value > x {
            break (hi_r, e);
        }
        lo = (hi_r, e);
        hi_r *= 2.0;
        if hi_r > cfg.r_cap {
            return Err(Error::Bracket(format!("x(r) stays below {x} up to r = {}", lo.0)));
        }
    };
    let (mut lo, mut hi) = (lo, hi);
    let mut non_monotone = false;
    let mut best: Option<(f64, FixedPointOutcome, McEstimate)> = None;
    for _ in 0..cfg.max_probes {
        let mid = 0.5 * (lo.0 + hi.0);
        let (fp, e) = probe(p, mid, z, cfg)?;
        record(mid, &e, &mut trace);
        if accept(&e) {
            return Ok(DualMatch { r: mid, fixed_point: fp, x: e, trace, non_monotone });
        }
        let noise = |a: &McEstimate| 3.0 * (a.std_error.powi(2) + e.std_error.powi(2)).sqrt();
        if e.value < lo.1.value - noise(&lo.1) || e.value > hi.1.value + noise(&hi.1) {
            non_monotone = true;
            let (a, b) = scan_for_crossing(p, x, z, lo.0, hi.0, cfg, &mut trace)?;
            lo = a;
            hi = b;
            continue;
        }
        let closer = best.as_ref().is_none_or(|(_, _, b)| (e.value - x).abs() < (b.value - x).abs());
        if e.value < x {
            lo = (mid, e);
        } else {
            hi = (mid, e);
        }
        if closer {
            best = Some((mid, fp, e));
        }
        if hi.0 - lo.0 < 1e-9 * (1.0 + hi.0) {
            break;
        }
    }
    let (r, fp, e) = best.ok_or_else(|| Error::Bracket("no interior probe".into()))?;
    Err(Error::NonConvergence {
        what: "dual level bisection",
        iterations: cfg.max_probes,
        residual: {
            let _ = (r, fp);
            (e.value - x).abs()
        },
    })
}

/// Evaluate x(r) on a uniform grid of the bracket and return the first pair
/// of neighbours that brackets x.
fn scan_for_crossing(
    p: &ModelParams,
    x: f64,
    z: f64,
    lo: f64,
    hi: f64,
    cfg: &MfeConfig,
    trace: &mut Vec<Probe>,
) -> Result<((f64, McEstimate), (f64, McEstimate))> {
    const POINTS: usize = 16;
    let mut prev: Option<(f64, McEstimate)> = None;
    for k in 0..=POINTS {
        let r = lo + (hi - lo) * k as f64 / POINTS as f64;
        let (_, e) = probe(p, r, z, cfg)?;
        trace.push(Probe { r, x: e.value, se: e.std_error });
        if let Some(pr) = prev {
            if pr.1.value <= x && e.value > x {
                return Ok((pr, (r, e)));
            }
        }
        prev = Some((r, e));
    }
    Err(Error::Bracket(format!("grid scan of [{lo}, {hi}] found no crossing of {x}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Outperforming,
    Underperforming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfeResult {
    pub f_star: Curve,
    pub region: Region,
    pub r_star: Option<f64>,
    pub x_hat0: f64,
    pub x0: f64,
    pub z0: f64,
    /// In-sample ‖Jf* − f*‖∞; 0 on the closed-form branch.
    pub residual: f64,
    /// λ = 1: f* ≡ 0 is returned and flagged rather than rejected.
    pub degenerate: bool,
    pub provenance: Provenance,
    pub fixed_point: Option<FixedPointOutcome>,
    pub x_match: Option<McEstimate>,
    pub trace: Vec<Probe>,
    pub non_monotone: bool,
}

/// Closed-form drift on the outperforming branch: (1−λ)σ_Zμ/σ·e^{η(T−t)+μ_Z t}·z.
pub fn outperforming_drift(p: &ModelParams, grid: TimeGrid, z0: f64) -> Curve {
    let eta = p.derive_constants().eta;
    let k = (1.0 - p.lambda()) * p.sigma_z() * p.mu() / p.sigma() * z0;
    Curve::from_fn(grid, |t| k * (eta * (p.horizon() - t) + p.mu_z() * t).exp())
}

pub fn solve_mfe(p: &ModelParams, x0: f64, z0: f64, cfg: &MfeConfig) -> Result<MfeResult> {
    if !(x0 >= 0.0 && z0 >= 0.0) {
        return domain(format!("need x0 >= 0 and z0 >= 0, got x0={x0}, z0={z0}"));
    }
    cfg.mc.validate()?;
    let grid = TimeGrid::new(0.0, p.horizon(), cfg.mc.n_steps)?;
    let x_hat0 = threshold_hat_x0(p, z0);
    let provenance = Provenance {
        seed: cfg.mc.seed,
        n_steps: cfg.mc.n_steps,
        n_paths: cfg.mc.n_paths,
    };
    if x0 >= x_hat0 {
        return Ok(MfeResult {
            f_star: outperforming_drift(p, grid, z0),
            region: Region::Outperforming,
            r_star: None,
            x_hat0,
            x0,
            z0,
            residual: 0.0,
            degenerate: p.lambda() == 1.0,
            provenance,
            fixed_point: None,
            x_match: None,
            trace: Vec::new(),
            non_monotone: false,
        });
    }
    let m = find_r_for_x(p, x0, z0, cfg)?;
    Ok(MfeResult {
        f_star: m.fixed_point.curve.clone(),
        region: Region::Underperforming,
        r_star: Some(m.r),
        x_hat0,
        x0,
        z0,
        residual: m.fixed_point.residual,
        degenerate: false,
        provenance,
        fixed_point: Some(m.fixed_point),
        x_match: Some(m.x),
        trace: m.trace,
        non_monotone: m.non_monotone,
    })
}

/// ‖Jf* − f*‖∞ with kernels rebuilt from an independent ensemble.
pub fn fixed_point_certificate(p: &ModelParams, res: &MfeResult, mc: &McConfig) -> Result<f64> {
    let Some(r) = res.r_star else {
        return Ok(0.0);
    };
    let kt = build_kernel_table(p, r, res.z0, res.f_star.grid(), mc)?;
    Ok(apply_j(&res.f_star, &kt)?.sup_distance(&res.f_star))
}

impl MfeResult {
    /// Node-wise standard error of f*; zero on the closed-form branch.
    pub fn f_std_error(&self) -> Vec<f64> {
        match &self.fixed_point {
            Some(fp) => fp.std_error.clone(),
            None => vec![0.0; self.f_star.values().len()],
        }
    }

    /// Rows (t, f_star).
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "f_star"])?;
        let g = self.f_star.grid();
        for (k, v) in self.f_star.values().iter().enumerate() {
            out.write_record([g.node(k).to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rows (r, x, se) of the bisection probes in evaluation order.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["r", "x", "se"])?;
        for pr in &self.trace {
            out.write_record([pr.r.to_string(), pr.x.to_string(), pr.se.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(p: &ModelParams, r: f64, n: usize, paths: usize) -> KernelTable {
        let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
        build_kernel_table(p, r, 20.0, &grid, &McConfig::new(paths, n, 1)).unwrap()
    }

    #[test]
    fn j_of_zero_is_h() {
        let p = ModelParams::baseline();
        let kt = table(&p, 1.0, 20, 500);
        let jf = apply_j(&Curve::constant(kt.grid, 0.0), &kt).unwrap();
        assert_eq!(jf.values(), kt.h_values.as_slice());
        let jf1 = apply_j(&Curve::constant(kt.grid, 3.0), &kt).unwrap();
        assert_eq!(jf1.values()[20], kt.h_values[20]);
        let other = Curve::constant(TimeGrid::new(0.0, 1.0, 10).unwrap(), 1.0);
        assert!(apply_j(&other, &kt).is_err());
    }

    #[test]
    fn picard_converges_and_is_positive() {
        let p = ModelParams::baseline();
        let kt = table(&p, 1.0, 50, 2000);
        let out = iterate_fixed_point(&kt, None, &FixedPointConfig::default()).unwrap();
        assert!(!out.used_fallback);
        assert!(out.residual <= 1e-10 * (1.0 + out.curve.sup_norm()));
        assert!(out.curve.values().iter().all(|&v| v > 0.0));
        assert!((out.curve.values()[50] - 1.95424).abs() < 1e-4);
        let twice = Curve::new(kt.grid, kt.h_values.iter().map(|h| 2.0 * h).collect()).unwrap();
        let other = iterate_fixed_point(&kt, Some(&twice), &FixedPointConfig::default()).unwrap();
        assert!(other.curve.sup_distance(&out.curve) < 1e-8);
        // Geometric decay no slower than the operator norm.
        let m = out.operator_norm;
        if m < 1.0 {
            for w in out.residual_history.windows(2) {
                if w[0] > 1e-12 {
                    assert!(w[1] <= (m + 1e-9) * w[0]);
                }
            }
        }
    }

    #[test]
    fn backward_blocks_match_picard() {
        let p = ModelParams::baseline();
        let mut kt = table(&p, 1.0, 40, 1000);
        // Inflate G so that the global map is far from a contraction.
        for g in kt.g_values.iter_mut() {
            *g *= 40.0;
        }
        assert!(kt.operator_norm() > 1.0);
        let cfg = FixedPointConfig { tol: 1e-10, max_iter: 5000 };
        let blocks = backward_blocks(&kt, &cfg).unwrap();
        assert!(apply_j(&blocks, &kt).unwrap().sup_distance(&blocks) < 1e-7 * (1.0 + blocks.sup_norm()));
    }

    #[test]
    fn monotone_in_f() {
        let p = ModelParams::baseline();
        let kt = table(&p, 0.5, 30, 500);
        let f1 = Curve::from_fn(kt.grid, |t| 1.0 + t);
        let f2 = Curve::from_fn(kt.grid, |t| 1.5 + t * t);
        let (a, b) = (apply_j(&f1, &kt).unwrap(), apply_j(&f2, &kt).unwrap());
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x <= y));
    }

    #[test]
    fn x_of_r_matches_quadrature() {
        let p = ModelParams::baseline();
        let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let f = Curve::from_fn(grid, |t| 1.8 + 0.15 * t);
        let mc = McConfig::new(20_000, 400, 8);
        for r in [0.5, 1.5] {
            let e = x_of_r(&p, r, 20.0, &f, &mc).unwrap();
            let q = x_of_r_quadrature(&p, r, 20.0, &f);
            assert!(e.within(q, 4.0, 0.0), "r={r}: {e:?} vs {q}");
        }
        assert_eq!(x_of_r(&p, 0.0, 20.0, &f, &mc).unwrap().value, 0.0);
    }

    #[test]
    fn closed_form_branch() {
        let p = ModelParams::baseline();
        let cfg = MfeConfig { mc: McConfig::new(100, 100, 1), ..MfeConfig::default() };
        let res = solve_mfe(&p, 3.0, 20.0, &cfg).unwrap();
        assert_eq!(res.region, Region::Outperforming);
        assert!((res.f_star.values()[0] - 1.76827).abs() < 1e-4);
        assert!((res.f_star.values()[100] - 0.08 * 0.2f64.exp() * 20.0).abs() < 1e-12);
        let p1 = p.with_lambda(1.0).unwrap();
        let r1 = solve_mfe(&p1, 0.0, 20.0, &cfg).unwrap();
        assert!(r1.degenerate && r1.f_star.sup_norm() == 0.0);
        let p0 = p.with_lambda(0.0).unwrap();
        let r0 = solve_mfe(&p0, 2.2, 20.0, &cfg).unwrap();
        let expect = 0.1 * 0.1f64.exp() * 20.0;
        assert!((r0.f_star.values()[0] - expect).abs() < 1e-12);
        assert!(find_r_for_x(&p, 2.1, 20.0, &cfg).is_err());
    }
}
