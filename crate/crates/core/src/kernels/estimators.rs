//! Monte-Carlo estimators of G, H, φ̄ and of the dual value v with its
//! first two level derivatives. R and Z are always simulated from one set of
//! increments.

use crate::error::{domain, Result};
use crate::grid::{Curve, TimeGrid};
use crate::mc::{fold_blocks, McConfig, McEstimate, MeanAccumulator};
use crate::params::ModelParams;
use crate::stochastic::{draw_increments, gbm_into, reflect_into, PathBundle};

use super::density::inner_phi_closed;
use super::levels::{LagTable, LevelGrid};

/// Grid on [t_start, t_end] with a step count proportional to the full-horizon count.
pub(crate) fn sub_grid(p: &ModelParams, t_start: f64, t_end: f64, mc: &McConfig) -> Result<TimeGrid> {
    let n = ((t_end - t_start) / p.horizon() * mc.n_steps as f64).round().max(1.0) as usize;
    TimeGrid::new(t_start, t_end, n)
}

fn check_time(p: &ModelParams, t: f64) -> Result<()> {
    if !(0.0..=p.horizon()).contains(&t) {
        return domain(format!("time {t} outside [0, {}]", p.horizon()));
    }
    Ok(())
}

fn check_state(r: f64, z: f64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0 && z.is_finite() && z >= 0.0) {
        return domain(format!("need r >= 0 and z >= 0, got r={r}, z={z}"));
    }
    Ok(())
}

/// Average a per-path statistic over the configured ensemble. The closure
/// receives a bundle holding R (and Z when `with_index`) on `grid`.
fn path_mean<F>(
    p: &ModelParams,
    grid: &TimeGrid,
    r: f64,
    z: f64,
    with_index: bool,
    mc: &McConfig,
    stat: F,
) -> Result<McEstimate>
where
    F: Fn(&PathBundle) -> f64 + Sync,
{
    mc.validate()?;
    let c = p.derive_constants();
    let acc = fold_blocks(
        mc,
        MeanAccumulator::default(),
        |stream, n| {
            let mut rng = stream.rng();
            let mut b = PathBundle::default();
            let mut dw = Vec::new();
            let mut ex = Vec::new();
            let mut acc = MeanAccumulator::default();
            for _ in 0..n {
                draw_increments(&mut rng, grid, &mut dw, &mut ex);
                reflect_into(&c, grid, r, &dw, &ex, &mut b);
                if with_index {
                    gbm_into(p, grid, z, &dw, &mut b.z);
                }
                acc.push(stat(&b));
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    Ok(acc.estimate())
}

/// Path integrals from the first node of `grid`:
/// (∫ e^{−ρs−R_s} f ds, ∫ e^{−ρs−R_s} Z_s ds), each over the whole grid and
/// stopped at the hitting time of 0. `shift` is added to −R in the exponent.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PathIntegrals {
    pub f_full: f64,
    pub z_full: f64,
    pub f_stopped: f64,
    pub z_stopped: f64,
}

/// Probability that the driver stays off 0 on [t_k, t_{k+1}] given its node
/// values: 1 − exp(−2D_kD_{k+1}/(b²dt)) from the Brownian bridge, and 0 once
/// a node is at or below 0.
pub(crate) fn bridge_survival(d: &[f64], k: usize, vol: f64, dt: f64) -> f64 {
    let (a, b) = (d[k], d[k + 1]);
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    -(-2.0 * a * b / (vol * vol * dt)).exp_m1()
}

/// Trapezoid sums along one path. Before τ the level equals the driver, so
/// the stopped integrals run over the driver's node values weighted by the
/// bridge survival probability up to each node. Conditioning on the nodes
/// only, rather than on the sampled step minima, lowers the variance.
pub(crate) fn path_integrals(
    grid: &TimeGrid,
    b: &PathBundle,
    f_nodes: &[f64],
    rho: f64,
    vol: f64,
    shift: f64,
) -> PathIntegrals {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut out = PathIntegrals::default();
    let mut surv = if b.driver[0] > 0.0 { 1.0 } else { 0.0 };
    let mut prev: Option<[f64; 4]> = None;
    for k in 0..=n {
        let disc = -rho * grid.node(k) + shift;
        let e = (disc - b.r[k]).exp();
        let es = (disc - b.driver[k]).exp();
        let zk = b.z.get(k).copied().unwrap_or(0.0);
        let cur = [e * f_nodes[k], e * zk, es * f_nodes[k], es * zk];
        if let Some(pv) = prev {
            out.f_full += 0.5 * dt * (pv[0] + cur[0]);
            out.z_full += 0.5 * dt * (pv[1] + cur[1]);
            let s_prev = surv;
            surv *= bridge_survival(&b.driver, k - 1, vol, dt);
            if s_prev > 0.0 {
                out.f_stopped += 0.5 * dt * (s_prev * pv[2] + surv * cur[2]);
                out.z_stopped += 0.5 * dt * (s_prev * pv[3] + surv * cur[3]);
            }
        }
        prev = Some(cur);
    }
    out
}

/// G(r, s, t) = (λμ²/σ²) E[e^{−ρ(s−t)} I(s−t, R_t, 1)].
pub fn kernel_g(p: &ModelParams, r: f64, s: f64, t: f64, mc: &McConfig) -> Result<McEstimate> {
    check_time(p, t)?;
    check_time(p, s)?;
    check_state(r, 0.0)?;
    if s < t {
        return domain(format!("kernel G needs t <= s, got t={t}, s={s}"));
    }
    let c = p.derive_constants();
    let pref = p.lambda() * p.mu() * p.mu() / (p.sigma() * p.sigma());
    if pref == 0.0 || s == t {
        return Ok(McEstimate::exact(0.0, mc.n_paths));
    }
    let tau = s - t;
    let disc = (-p.rho() * tau).exp();
    if t == 0.0 {
        return Ok(McEstimate::exact(pref * disc * inner_phi_closed(&c, tau, r, 1.0), mc.n_paths));
    }
    let grid = sub_grid(p, 0.0, t, mc)?;
    let e = path_mean(p, &grid, r, 0.0, false, mc, |b| {
        pref * disc * inner_phi_closed(&c, tau, *b.r.last().unwrap(), 1.0)
    })?;
    Ok(e)
}

/// Coefficients of the three summands of H.
pub(crate) struct HCoefficients {
    pub double_integral: f64,
    pub stopped: f64,
    pub index: f64,
}

impl HCoefficients {
    pub fn new(p: &ModelParams) -> Self {
        let c = p.derive_constants();
        let (mu, sigma, sz, lam) = (p.mu(), p.sigma(), p.sigma_z(), p.lambda());
        Self {
            double_integral: (1.0 - lam) * c.eta * mu * mu / (sigma * sigma),
            stopped: (1.0 - lam) * c.eta * sz * mu / sigma,
            index: (1.0 - lam) * sz * mu / sigma,
        }
    }
}

/// Backward recursion for the stopped index integrals of one path: entry i
/// is e^{ρt_i + R_i} ∫_{t_i}^{τ∧T} e^{−ρs−R_s} Z_s ds, where τ is the hitting
/// time of 0 by the driver restarted from R_i. The restarted driver coincides
/// with R until L next moves, and it hits 0 in exactly the step where that
/// happens, so a step survives iff L is unchanged across it.
pub(crate) fn stopped_index_integrals(grid: &TimeGrid, b: &PathBundle, rho: f64, out: &mut Vec<f64>) {
    let n = grid.n_steps();
    let dt = grid.dt();
    out.clear();
    out.resize(n + 1, 0.0);
    let g = |k: usize| (-rho * grid.node(k) - b.r[k]).exp() * b.z[k];
    let mut acc = 0.0;
    let mut g_next = g(n);
    for i in (0..n).rev() {
        let gi = g(i);
        acc = if b.r[i] == 0.0 {
            0.0
        } else if b.l[i + 1] > b.l[i] {
            0.5 * dt * gi
        } else {
            0.5 * dt * (gi + g_next) + acc
        };
        out[i] = (rho * grid.node(i) + b.r[i]).exp() * acc;
        g_next = gi;
    }
}

/// H(r, z, t): the double-integral, stopped-integral and index summands.
pub fn kernel_h(p: &ModelParams, r: f64, z: f64, t: f64, mc: &McConfig) -> Result<McEstimate> {
    check_time(p, t)?;
    check_state(r, z)?;
    let k = HCoefficients::new(p);
    if p.lambda() == 1.0 {
        return Ok(McEstimate::exact(0.0, mc.n_paths));
    }
    let index_term = k.index * (p.mu_z() * t).exp() * z;
    if t == p.horizon() {
        return Ok(McEstimate::exact(index_term, mc.n_paths));
    }
    let c = p.derive_constants();
    let tail = sub_grid(p, t, p.horizon(), mc)?;
    let levels = LevelGrid::for_paths(&c, r, p.horizon(), tail.dt());
    let q = LagTable::inner_integrals(&c, levels, tail.dt(), tail.n_steps(), p.z_weight(), p.rho() - c.kappa)
        .cumulative();
    let q_row = q.row(tail.n_steps());
    let head = if t > 0.0 { Some(sub_grid(p, 0.0, t, mc)?) } else { None };
    mc.validate()?;
    let acc = fold_blocks(
        mc,
        MeanAccumulator::default(),
        |stream, n| {
            let mut rng = stream.rng();
            let (mut dw_head, mut dw_tail) = (Vec::new(), Vec::new());
            let mut ex = Vec::new();
            let (mut b_head, mut b_tail) = (PathBundle::default(), PathBundle::default());
            let mut stopped = Vec::new();
            let mut acc = MeanAccumulator::default();
            for _ in 0..n {
                let (rt, zt) = match head {
                    Some(hg) => {
                        draw_increments(&mut rng, &hg, &mut dw_head, &mut ex);
                        reflect_into(&c, &hg, r, &dw_head, &ex, &mut b_head);
                        gbm_into(p, &hg, z, &dw_head, &mut b_head.z);
                        (*b_head.r.last().unwrap(), *b_head.z.last().unwrap())
                    }
                    None => (r, z),
                };
                draw_increments(&mut rng, &tail, &mut dw_tail, &mut ex);
                reflect_into(&c, &tail, rt, &dw_tail, &ex, &mut b_tail);
                gbm_into(p, &tail, zt, &dw_tail, &mut b_tail.z);
                stopped_index_integrals(&tail, &b_tail, p.rho(), &mut stopped);
                acc.push(k.double_integral * zt * levels.interp(q_row, rt) + k.stopped * stopped[0]);
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    let mut e = acc.estimate();
    e.value += index_term;
    Ok(e)
}

/// φ̄(t, r, z) = E[∫_t^{τ∧T} e^{−ρ(s−t)−R_s+r} Z_s ds].
pub fn varphi_bar(p: &ModelParams, t: f64, r: f64, z: f64, mc: &McConfig) -> Result<McEstimate> {
    check_time(p, t)?;
    check_state(r, z)?;
    if r == 0.0 || z == 0.0 || t == p.horizon() {
        return Ok(McEstimate::exact(0.0, mc.n_paths));
    }
    let grid = sub_grid(p, t, p.horizon(), mc)?;
    let zeros = vec![0.0; grid.n_nodes()];
    let vol = p.derive_constants().r_vol;
    path_mean(p, &grid, r, z, true, mc, |b| {
        path_integrals(&grid, b, &zeros, p.rho(), vol, p.rho() * t + r).z_stopped
    })
}

fn f_on(grid: &TimeGrid, f: &Curve) -> Vec<f64> {
    (0..grid.n_nodes()).map(|k| f.eval(grid.node(k))).collect()
}

/// v(t, r, z) = −λE[∫_t^T e^{−ρs−R_s} f ds] − (1−λ)ηE[∫_t^T e^{−ρs−R_s} Z_s ds].
pub fn value_v(p: &ModelParams, t: f64, r: f64, z: f64, f: &Curve, mc: &McConfig) -> Result<McEstimate> {
    check_time(p, t)?;
    check_state(r, z)?;
    if t == p.horizon() {
        return Ok(McEstimate::exact(0.0, mc.n_paths));
    }
    let c = p.derive_constants();
    let (eta, vol) = (c.eta, c.r_vol);
    let lam = p.lambda();
    let grid = sub_grid(p, t, p.horizon(), mc)?;
    let fv = f_on(&grid, f);
    path_mean(p, &grid, r, z, true, mc, |b| {
        let i = path_integrals(&grid, b, &fv, p.rho(), vol, 0.0);
        -lam * i.f_full - (1.0 - lam) * eta * i.z_full
    })
}

/// v_r(t, r, z): the two integrals of v stopped at τ_r^t ∧ T.
pub fn deriv_v_r(p: &ModelParams, t: f64, r: f64, z: f64, f: &Curve, mc: &McConfig) -> Result<McEstimate> {
    check_time(p, t)?;
    check_state(r, z)?;
    if r == 0.0 || t == p.horizon() {
        return Ok(McEstimate::exact(0.0, mc.n_paths));
    }
    let c = p.derive_constants();
    let lam = p.lambda();
    let grid = sub_grid(p, t, p.horizon(), mc)?;
    let fv = f_on(&grid, f);
    path_mean(p, &grid, r, z, true, mc, |b| {
        let i = path_integrals(&grid, b, &fv, p.rho(), c.r_vol, 0.0);
        lam * i.f_stopped + (1.0 - lam) * c.eta * i.z_stopped
    })
}

/// v_rr + v_r: the two φ-weighted double integrals, by the trapezoid rule in
/// s on the sub-grid with the s = t endpoint set to its limit 0.
pub fn dual_curvature(p: &ModelParams, t: f64, r: f64, z: f64, f: &Curve, mc: &McConfig) -> Result<f64> {
    check_time(p, t)?;
    check_state(r, z)?;
    if t == p.horizon() {
        return Ok(0.0);
    }
    let c = p.derive_constants();
    let lam = p.lambda();
    let w = p.z_weight();
    let grid = sub_grid(p, t, p.horizon(), mc)?;
    let n = grid.n_steps();
    let mut total = 0.0;
    for j in 1..=n {
        let s = grid.node(j);
        let tau = s - t;
        let wt = grid.trapezoid_weight(j, 0, n);
        let base = (-p.rho() * s - r).exp();
        let f_term = if lam > 0.0 { lam * inner_phi_closed(&c, tau, r, 1.0) * f.eval(s) } else { 0.0 };
        let z_term = if lam < 1.0 {
            (1.0 - lam) * c.eta * z * (c.kappa * tau).exp() * inner_phi_closed(&c, tau, r, w)
        } else {
            0.0
        };
        total += wt * base * (f_term + z_term);
    }
    Ok(total)
}

/// v_rr = (v_rr + v_r) − v_r, so the identity with [`dual_curvature`] holds by construction.
pub fn deriv_v_rr(p: &ModelParams, t: f64, r: f64, z: f64, f: &Curve, mc: &McConfig) -> Result<McEstimate> {
    let curvature = dual_curvature(p, t, r, z, f, mc)?;
    let vr = deriv_v_r(p, t, r, z, f, mc)?;
    Ok(McEstimate {
        value: curvature - vr.value,
        std_error: vr.std_error,
        n_paths: vr.n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::density::{index_survival_integral, inner_phi_integral};

    fn small_mc() -> McConfig {
        McConfig::new(4000, 200, 17)
    }

    #[test]
    fn trivial_cases_are_exact() {
        let p = ModelParams::baseline();
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let f = Curve::constant(g, 1.0);
        let mc = small_mc();
        assert_eq!(kernel_g(&p.with_lambda(0.0).unwrap(), 1.0, 0.5, 0.2, &mc).unwrap().value, 0.0);
        assert_eq!(kernel_g(&p, 1.0, 0.5, 0.5, &mc).unwrap().value, 0.0);
        assert_eq!(kernel_h(&p.with_lambda(1.0).unwrap(), 1.0, 20.0, 0.3, &mc).unwrap().value, 0.0);
        let ht = kernel_h(&p, 1.0, 20.0, 1.0, &mc).unwrap();
        assert!((ht.value - 0.08 * 0.2f64.exp() * 20.0).abs() < 1e-12);
        assert_eq!(varphi_bar(&p, 0.0, 0.0, 20.0, &mc).unwrap().value, 0.0);
        assert_eq!(varphi_bar(&p, 0.0, 2.0, 0.0, &mc).unwrap().value, 0.0);
        assert_eq!(value_v(&p, 1.0, 1.0, 20.0, &f, &mc).unwrap().value, 0.0);
        assert_eq!(deriv_v_r(&p, 0.3, 0.0, 20.0, &f, &mc).unwrap().value, 0.0);
        assert!(kernel_g(&p, 1.0, 0.2, 0.5, &mc).is_err());
    }

    #[test]
    fn g_limit_at_equal_times() {
        let p = ModelParams::baseline();
        // From t = 0 the level is r > 0 and the inner integral vanishes as s ↓ t.
        let e = kernel_g(&p, 1.0, 1e-4, 0.0, &small_mc()).unwrap();
        assert!(e.value < 1e-6);
    }

    #[test]
    fn g_at_time_zero_uses_quadrature_value() {
        let p = ModelParams::baseline();
        let c = p.derive_constants();
        let e = kernel_g(&p, 0.7, 0.4, 0.0, &small_mc()).unwrap();
        let q = inner_phi_integral(&c, 0.4, 0.7, 1.0).unwrap().value;
        assert!((e.value - 0.2 * (-0.4f64).exp() * q).abs() < 1e-10);
    }

    #[test]
    fn varphi_matches_survival_integral() {
        // The stopped integral has a closed-form survival law.
        let p = ModelParams::baseline();
        let c = p.derive_constants();
        let mc = McConfig::new(20_000, 500, 5);
        let e = varphi_bar(&p, 0.0, 2.0, 20.0, &mc).unwrap();
        let exact = 20.0 * index_survival_integral(&c, p.rho(), p.z_weight(), 1.0, 2.0);
        assert!(e.within(exact, 4.0, 0.0), "{e:?} vs {exact}");
    }

    #[test]
    fn second_derivative_identity() {
        let p = ModelParams::baseline();
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let f = Curve::from_fn(g, |t| 1.8 + 0.2 * t);
        let mc = small_mc();
        let curv = dual_curvature(&p, 0.2, 0.8, 20.0, &f, &mc).unwrap();
        let vr = deriv_v_r(&p, 0.2, 0.8, 20.0, &f, &mc).unwrap();
        let vrr = deriv_v_rr(&p, 0.2, 0.8, 20.0, &f, &mc).unwrap();
        assert!((vrr.value + vr.value - curv).abs() <= 1e-14 * curv.abs());
        assert!(curv > 0.0);
    }

    #[test]
    fn stopped_recursion_matches_forward_integral() {
        let p = ModelParams::baseline();
        let c = p.derive_constants();
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let rho = p.rho();
        for seed in 0..20 {
            let (mut dw, mut ex) = (Vec::new(), Vec::new());
            draw_increments(&mut crate::mc::RngStream::new(9, seed).rng(), &g, &mut dw, &mut ex);
            let mut b = PathBundle::default();
            reflect_into(&c, &g, 0.05, &dw, &ex, &mut b);
            gbm_into(&p, &g, 20.0, &dw, &mut b.z);
            let mut rec = Vec::new();
            stopped_index_integrals(&g, &b, rho, &mut rec);
            // Forward sum from each start node until the first step where L moves.
            let h = |k: usize| (-rho * g.node(k) - b.r[k]).exp() * b.z[k];
            for i in 0..100 {
                let mut fwd = 0.0;
                for k in i..100 {
                    if b.l[k + 1] > b.l[k] {
                        fwd += 0.5 * g.dt() * h(k);
                        break;
                    }
                    fwd += 0.5 * g.dt() * (h(k) + h(k + 1));
                }
                fwd *= (rho * g.node(i) + b.r[i]).exp();
                assert!((rec[i] - fwd).abs() < 1e-12 * (1.0 + fwd), "{} vs {fwd}", rec[i]);
            }
        }
    }

}
