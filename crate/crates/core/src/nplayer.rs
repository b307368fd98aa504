//! n-player game driven by the mean-field strategy: every agent plays its own
//! θ* computed against the limiting drift f*, and the Nash gap is estimated
//! from coupled and decoupled local times under common noise.
//!
//! Agent j's wealth is driven by its own Brownian motion W^j, so the
//! population average in agent i's benchmark carries the noise
//! (λ/n)Σ_j σ^jθ^j dW^j.

use std::io::Write;

use serde::Serialize;

use crate::error::{domain, Result};
use crate::grid::TimeGrid;
use crate::mc::{fold_blocks, McConfig, McEstimate, MeanAccumulator, NodeAccumulator};
use crate::mfe::{MfeResult, Region};
use crate::params::{boundary_x0, DerivedConstants, ModelParams};
use crate::stochastic::{draw_increments, gbm_into, reflect_into, PathBundle};
use crate::strategy_value::{invert_dual, StrategyContext};

/// One agent of the finite game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentSpec {
    pub params: ModelParams,
    /// Position in [−1, 1] of the agent in the heterogeneity schedule.
    pub u: f64,
}

impl AgentSpec {
    pub fn constants(&self) -> DerivedConstants {
        self.params.derive_constants()
    }
}

pub fn homogeneous_agents(p: &ModelParams, n: usize) -> Vec<AgentSpec> {
    vec![AgentSpec { params: *p, u: 0.0 }; n]
}

/// Fixed schedule u_i ∈ [−1, 1]: a golden-ratio sequence, so the agents
/// spread evenly for every n.
pub fn schedule_u(i: usize) -> f64 {
    const PHI: f64 = 0.618_033_988_749_894_9;
    2.0 * ((i + 1) as f64 * PHI).fract() - 1.0
}

/// params^{i,n} = limit·(1 + δu_i/√n) for μ, σ, μ_Z, σ_Z and λ (λ clamped to
/// [0, 1]); ρ and T are shared. A common factor keeps μ_Zσ > μσ_Z intact.
pub fn heterogeneous_agents(p: &ModelParams, n: usize, delta: f64) -> Result<Vec<AgentSpec>> {
    if n == 0 {
        return domain("need at least one agent");
    }
    (0..n)
        .map(|i| {
            let u = schedule_u(i);
            let s = 1.0 + delta * u / (n as f64).sqrt();
            let params = ModelParams::new(
                p.mu() * s,
                p.sigma() * s,
                p.mu_z() * s,
                p.sigma_z() * s,
                (p.lambda() * s).clamp(0.0, 1.0),
                p.rho(),
                p.horizon(),
            )?;
            Ok(AgentSpec { params, u })
        })
        .collect()
}

/// Agents with their strategy contexts and initial dual levels.
#[derive(Debug, Clone)]
pub struct Population {
    pub agents: Vec<AgentSpec>,
    pub x0: f64,
    pub z0: f64,
    grid: TimeGrid,
    f_star: Vec<f64>,
    contexts: Vec<StrategyContext>,
    /// Context index and initial dual level per agent.
    slots: Vec<(usize, f64)>,
}

impl Population {
    /// Build the agents' strategies against the equilibrium `mfe`. Agents
    /// sharing the limit parameters reuse the equilibrium dual level r*;
    /// others invert their own dual map at (x0, z0).
    pub fn new(agents: Vec<AgentSpec>, mfe: &MfeResult, limit: &ModelParams) -> Result<Self> {
        if agents.is_empty() {
            return domain("need at least one agent");
        }
        let f = &mfe.f_star;
        let (x0, z0) = (mfe.x0, mfe.z0);
        let mut contexts: Vec<StrategyContext> = Vec::new();
        let mut keys: Vec<(ModelParams, Region)> = Vec::new();
        let mut slots = Vec::with_capacity(agents.len());
        for a in &agents {
            let p = &a.params;
            let (region, r0) = if p == limit {
                (mfe.region, mfe.r_star)
            } else if x0 >= boundary_x0(p, f, 0.0, z0)? {
                (Region::Outperforming, None)
            } else {
                let probe = StrategyContext::from_parts(p, f.clone(), Region::Outperforming, None)?;
                match invert_dual(&probe, 0.0, x0, z0)? {
                    Some(r) => (Region::Underperforming, Some(r)),
                    None => (Region::Outperforming, None),
                }
            };
            let idx = match keys.iter().position(|(kp, kr)| kp == p && *kr == region) {
                Some(i) if region == Region::Outperforming || contexts[i].r0() == r0 => i,
                _ => {
                    contexts.push(StrategyContext::from_parts(p, f.clone(), region, r0)?);
                    keys.push((*p, region));
                    contexts.len() - 1
                }
            };
            slots.push((idx, r0.unwrap_or(0.0)));
        }
        Ok(Self {
            agents,
            x0,
            z0,
            grid: *f.grid(),
            f_star: f.values().to_vec(),
            contexts,
            slots,
        })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn context(&self, i: usize) -> &StrategyContext {
        &self.contexts[self.slots[i].0]
    }

    pub fn initial_level(&self, i: usize) -> f64 {
        self.slots[i].1
    }
}

/// One joint draw of all agents: own increments, index paths and θ*.
struct Replication {
    dw: Vec<Vec<f64>>,
    /// Bridge variates, scratch for the agent being drawn.
    ex: Vec<f64>,
    dz: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    /// (1/n)Σ_j (μ^jθ^j dt + σ^jθ^j dW^j) per step.
    avg_increment: Vec<f64>,
    /// (1/n)Σ_j μ^jθ^j per node.
    avg_drift: Vec<f64>,
}

impl Replication {
    fn new(n_agents: usize, grid: &TimeGrid) -> Self {
        let nn = grid.n_nodes();
        Self {
            dw: vec![Vec::new(); n_agents],
            ex: Vec::new(),
            dz: vec![vec![0.0; nn - 1]; n_agents],
            theta: vec![vec![0.0; nn]; n_agents],
            avg_increment: vec![0.0; nn - 1],
            avg_drift: vec![0.0; nn],
        }
    }

    fn draw<R: rand::Rng>(&mut self, pop: &Population, rng: &mut R, b: &mut PathBundle) {
        let g = &pop.grid;
        let n = g.n_steps();
        let dt = g.dt();
        let inv_n = 1.0 / pop.n() as f64;
        self.avg_increment.iter_mut().for_each(|v| *v = 0.0);
        self.avg_drift.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..pop.n() {
            let p = &pop.agents[j].params;
            let ctx = pop.context(j);
            draw_increments(rng, g, &mut self.dw[j], &mut self.ex);
            reflect_into(&pop.agents[j].constants(), g, pop.initial_level(j), &self.dw[j], &self.ex, b);
            gbm_into(p, g, pop.z0, &self.dw[j], &mut b.z);
            for k in 0..=n {
                let th = ctx.theta_at_node(k, b.r[k], b.z[k]);
                self.theta[j][k] = th;
                self.avg_drift[k] += inv_n * p.mu() * th;
                if k < n {
                    self.dz[j][k] = b.z[k + 1] - b.z[k];
                    self.avg_increment[k] += inv_n * th * (p.mu() * dt + p.sigma() * self.dw[j][k]);
                }
            }
        }
    }
}

/// One reflected step: returns the new state and the local-time increment.
#[inline]
fn reflect_step(x: f64, dy: f64) -> (f64, f64) {
    let y = x + dy;
    if y >= 0.0 {
        (y, 0.0)
    } else {
        (0.0, -y)
    }
}

/// Summary of the n-player system with everybody on θ*.
#[derive(Debug, Clone, PartialEq)]
pub struct NPlayerEnsemble {
    pub n: usize,
    pub grid: TimeGrid,
    /// E[(1/n)Σ_j μ^jθ^{*,j}_t] per node.
    pub avg_drift: Vec<McEstimate>,
    /// E[L^{*,i,n}_t] per agent and node.
    pub mean_local_time: Vec<Vec<McEstimate>>,
    /// X^{*,i,n} and L^{*,i,n} of every agent in the first replication.
    pub first_x: Vec<Vec<f64>>,
    pub first_l: Vec<Vec<f64>>,
    /// Every local time started at 0 and never decreased.
    pub l_monotone: bool,
}

struct EnsembleBlock {
    drift: NodeAccumulator,
    l: Vec<NodeAccumulator>,
    first: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
    monotone: bool,
}

/// Simulate all agents on θ* with the empirical-average coupling. Each
/// replication of `mc` is one joint draw of the n agents.
pub fn simulate_nplayer(pop: &Population, mc: &McConfig) -> Result<NPlayerEnsemble> {
    mc.validate()?;
    let g = pop.grid;
    let n = g.n_steps();
    let nn = n + 1;
    let na = pop.n();
    let out = fold_blocks(
        mc,
        EnsembleBlock {
            drift: NodeAccumulator::new(nn),
            l: vec![NodeAccumulator::new(nn); na],
            first: None,
            monotone: true,
        },
        |stream, count| {
            let mut rng = stream.rng();
            let mut rep = Replication::new(na, &g);
            let mut b = PathBundle::default();
            let mut blk = EnsembleBlock {
                drift: NodeAccumulator::new(nn),
                l: vec![NodeAccumulator::new(nn); na],
                first: None,
                monotone: true,
            };
            for q in 0..count {
                rep.draw(pop, &mut rng, &mut b);
                let keep = stream.stream_id == 0 && q == 0;
                let mut xs = Vec::new();
                let mut ls = Vec::new();
                for k in 0..nn {
                    blk.drift.0[k].push(rep.avg_drift[k]);
                }
                for i in 0..na {
                    let p = &pop.agents[i].params;
                    let lam = p.lambda();
                    let (mut x, mut l) = (pop.x0, 0.0);
                    let mut xp = vec![x];
                    let mut lp = vec![0.0];
                    blk.l[i].0[0].push(0.0);
                    for k in 0..n {
                        let th = rep.theta[i][k];
                        let dy = th * (p.mu() * g.dt() + p.sigma() * rep.dw[i][k])
                            - lam * rep.avg_increment[k]
                            - (1.0 - lam) * rep.dz[i][k];
                        let (nx, dl) = reflect_step(x, dy);
                        if dl < 0.0 {
                            blk.monotone = false;
                        }
                        x = nx;
                        l += dl;
                        blk.l[i].0[k + 1].push(l);
                        if keep {
                            xp.push(x);
                            lp.push(l);
                        }
                    }
                    if keep {
                        xs.push(xp);
                        ls.push(lp);
                    }
                }
                if keep {
                    blk.first = Some((xs, ls));
                }
            }
            blk
        },
        |acc, part| {
            acc.drift.merge(&part.drift);
            for (a, b) in acc.l.iter_mut().zip(&part.l) {
                a.merge(b);
            }
            if acc.first.is_none() {
                acc.first = part.first;
            }
            acc.monotone &= part.monotone;
        },
    );
    let (first_x, first_l) = out.first.unwrap_or_default();
    Ok(NPlayerEnsemble {
        n: na,
        grid: g,
        avg_drift: out.drift.estimates(),
        mean_local_time: out.l.iter().map(|a| a.estimates()).collect(),
        first_x,
        first_l,
        l_monotone: out.monotone,
    })
}

/// A unilateral deviation of the probed agent, as a multiple of its own θ*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Deviation {
    Equilibrium,
    Zero,
    Scaled(f64),
}

impl Deviation {
    pub fn factor(&self) -> f64 {
        match self {
            Deviation::Equilibrium => 1.0,
            Deviation::Zero => 0.0,
            Deviation::Scaled(c) => *c,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Deviation::Equilibrium => "theta_star".into(),
            Deviation::Zero => "zero".into(),
            Deviation::Scaled(c) => format!("scaled_{c}"),
        }
    }

    /// θ*, 0 and c·θ* for c ∈ {0.5, 1.5, 2}.
    pub fn default_set() -> Vec<Deviation> {
        vec![
            Deviation::Equilibrium,
            Deviation::Zero,
            Deviation::Scaled(0.5),
            Deviation::Scaled(1.5),
            Deviation::Scaled(2.0),
        ]
    }
}

/// J = −∫_t^T e^{−ρ(s−t)} dL along one path, by summation by parts:
/// −e^{−ρ(T−t)}L_T − Σ_k L_k ∫_{s_k}^{s_{k+1}} ρe^{−ρ(s−t)} ds, with L_t = 0.
pub fn objective_by_parts(grid: &TimeGrid, rho: f64, l: &[f64]) -> f64 {
    let t = grid.t_start();
    let disc = |k: usize| (-rho * (grid.node(k) - t)).exp();
    let n = grid.n_steps();
    let mut acc = -disc(n) * l[n];
    for k in 0..n {
        acc -= l[k] * (disc(k) - disc(k + 1));
    }
    acc
}

/// The Stieltjes sum −Σ_k e^{−ρ(s_{k+1}−t)}(L_{k+1} − L_k).
pub fn objective_stieltjes(grid: &TimeGrid, rho: f64, l: &[f64]) -> f64 {
    let t = grid.t_start();
    -(0..grid.n_steps())
        .map(|k| (-rho * (grid.node(k + 1) - t)).exp() * (l[k + 1] - l[k]))
        .sum::<f64>()
}

/// Objective estimate over an ensemble of local-time paths.
pub fn objective_value(grid: &TimeGrid, rho: f64, paths: &[Vec<f64>]) -> McEstimate {
    let mut acc = MeanAccumulator::default();
    for l in paths {
        acc.push(objective_by_parts(grid, rho, l));
    }
    acc.estimate()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub deviation: Deviation,
    pub label: String,
    /// J of the probed agent in the coupled game.
    pub objective: McEstimate,
    /// J̄ of the same strategy against the mean-field drift.
    pub decoupled_objective: McEstimate,
    /// J(deviation) − J(θ*) in the coupled game, pathwise on common noise.
    pub objective_gain: McEstimate,
    /// sup_s E|L^{coupled}_s − L^{decoupled}_s|.
    pub sup_local_time_gap: f64,
    /// (1+ρT)(this gap + the equilibrium gap).
    pub gap_bound: f64,
    /// sup_s E[θ_s²] ≤ C₀(1 + x0² + z0²).
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashGapReport {
    pub n: usize,
    pub probed_agent: usize,
    pub deviations: Vec<DeviationReport>,
    /// sup_s E|L^{*,i,n}_s − L̄^{*,i,n}_s| for θ* itself.
    pub equilibrium_gap: f64,
    /// max over probed deviations of the gap bound.
    pub gap_bound: f64,
    /// 10·sup_s E[θ*_s²]/(1 + x0² + z0²).
    pub c0: f64,
    pub avg_drift: Vec<McEstimate>,
}

impl NashGapReport {
    /// Columns n, agent_id, deviation_id, objective, se, gap_bound.
    pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>, header: bool) -> Result<()> {
        if header {
            out.write_record(["n", "agent_id", "deviation_id", "objective", "se", "gap_bound"])?;
        }
        for d in &self.deviations {
            out.write_record([
                self.n.to_string(),
                self.probed_agent.to_string(),
                d.label.clone(),
                d.objective.value.to_string(),
                d.objective.std_error.to_string(),
                d.gap_bound.to_string(),
            ])?;
        }
        Ok(())
    }
}

struct GapBlock {
    abs_dl: Vec<NodeAccumulator>,
    objective: Vec<MeanAccumulator>,
    decoupled: Vec<MeanAccumulator>,
    gain: Vec<MeanAccumulator>,
    theta_sq: NodeAccumulator,
    drift: NodeAccumulator,
}

impl GapBlock {
    fn new(nd: usize, nn: usize) -> Self {
        Self {
            abs_dl: vec![NodeAccumulator::new(nn); nd],
            objective: vec![MeanAccumulator::default(); nd],
            decoupled: vec![MeanAccumulator::default(); nd],
            gain: vec![MeanAccumulator::default(); nd],
            theta_sq: NodeAccumulator::new(nn),
            drift: NodeAccumulator::new(nn),
        }
    }

    fn merge(&mut self, o: &GapBlock) {
        for (a, b) in self.abs_dl.iter_mut().zip(&o.abs_dl) {
            a.merge(b);
        }
        for (a, b) in self.objective.iter_mut().zip(&o.objective) {
            a.merge(b);
        }
        for (a, b) in self.decoupled.iter_mut().zip(&o.decoupled) {
            a.merge(b);
        }
        for (a, b) in self.gain.iter_mut().zip(&o.gain) {
            a.merge(b);
        }
        self.theta_sq.merge(&o.theta_sq);
        self.drift.merge(&o.drift);
    }
}

/// Probe unilateral deviations of agent `probed`. For each deviation the
/// coupled game (everybody else on θ*) and the decoupled problem against f*
/// are run on the same noise.
pub fn estimate_gap(pop: &Population, probed: usize, deviations: &[Deviation], mc: &McConfig) -> Result<NashGapReport> {
    mc.validate()?;
    if probed >= pop.n() {
        return domain(format!("probed agent {probed} out of range for n = {}", pop.n()));
    }
    let dev_list: Vec<Deviation> = if deviations.contains(&Deviation::Equilibrium) {
        deviations.to_vec()
    } else {
        std::iter::once(Deviation::Equilibrium).chain(deviations.iter().copied()).collect()
    };
    let eq_idx = dev_list.iter().position(|d| *d == Deviation::Equilibrium).unwrap();
    let g = pop.grid;
    let n = g.n_steps();
    let nn = n + 1;
    let dt = g.dt();
    let nd = dev_list.len();
    let inv_n = 1.0 / pop.n() as f64;
    let p = pop.agents[probed].params;
    let lam = p.lambda();
    let rho = p.rho();

    let out = fold_blocks(
        mc,
        GapBlock::new(nd, nn),
        |stream, count| {
            let mut rng = stream.rng();
            let mut rep = Replication::new(pop.n(), &g);
            let mut b = PathBundle::default();
            let mut blk = GapBlock::new(nd, nn);
            let mut lc = vec![0.0; nn];
            let mut ld = vec![0.0; nn];
            let mut objs = vec![0.0; nd];
            for _ in 0..count {
                rep.draw(pop, &mut rng, &mut b);
                let th = &rep.theta[probed];
                let dw = &rep.dw[probed];
                let dz = &rep.dz[probed];
                for k in 0..nn {
                    blk.theta_sq.0[k].push(th[k] * th[k]);
                    blk.drift.0[k].push(rep.avg_drift[k]);
                }
                for (d, dev) in dev_list.iter().enumerate() {
                    let c = dev.factor();
                    let (mut xc, mut xd) = (pop.x0, pop.x0);
                    lc[0] = 0.0;
                    ld[0] = 0.0;
                    blk.abs_dl[d].0[0].push(0.0);
                    for k in 0..n {
                        let own = th[k] * (p.mu() * dt + p.sigma() * dw[k]);
                        let index = (1.0 - lam) * dz[k];
                        // Replace the probed agent's θ* by c·θ* inside the average.
                        let avg = rep.avg_increment[k] + inv_n * (c - 1.0) * own;
                        let (x1, dl1) = reflect_step(xc, c * own - lam * avg - index);
                        let (x2, dl2) = reflect_step(xd, c * own - lam * pop.f_star[k] * dt - index);
                        xc = x1;
                        xd = x2;
                        lc[k + 1] = lc[k] + dl1;
                        ld[k + 1] = ld[k] + dl2;
                        blk.abs_dl[d].0[k + 1].push((lc[k + 1] - ld[k + 1]).abs());
                    }
                    objs[d] = objective_by_parts(&g, rho, &lc);
                    blk.objective[d].push(objs[d]);
                    blk.decoupled[d].push(objective_by_parts(&g, rho, &ld));
                }
                for d in 0..nd {
                    blk.gain[d].push(objs[d] - objs[eq_idx]);
                }
            }
            blk
        },
        |acc, part| acc.merge(&part),
    );

    let sup_gap = |d: usize| out.abs_dl[d].0.iter().map(|a| a.mean()).fold(0.0, f64::max);
    let equilibrium_gap = sup_gap(eq_idx);
    let horizon = g.t_end() - g.t_start();
    let factor = 1.0 + rho * horizon;
    let sup_theta_sq = out.theta_sq.0.iter().map(|a| a.mean()).fold(0.0, f64::max);
    let scale = 1.0 + pop.x0 * pop.x0 + pop.z0 * pop.z0;
    let c0 = 10.0 * sup_theta_sq / scale;
    let deviations: Vec<DeviationReport> = dev_list
        .iter()
        .enumerate()
        .map(|(d, dev)| {
            let sup_local_time_gap = sup_gap(d);
            DeviationReport {
                deviation: *dev,
                label: dev.label(),
                objective: out.objective[d].estimate(),
                decoupled_objective: out.decoupled[d].estimate(),
                objective_gain: out.gain[d].estimate(),
                sup_local_time_gap,
                gap_bound: factor * (sup_local_time_gap + equilibrium_gap),
                admissible: dev.factor().powi(2) * sup_theta_sq <= c0 * scale,
            }
        })
        .collect();
    let gap_bound = deviations.iter().map(|d| d.gap_bound).fold(0.0, f64::max);
    Ok(NashGapReport {
        n: pop.n(),
        probed_agent: probed,
        deviations,
        equilibrium_gap,
        gap_bound,
        c0,
        avg_drift: out.drift.estimates(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Curve;
    use crate::mfe::{outperforming_drift, Provenance};

    fn closed_form_mfe(p: &ModelParams, n: usize) -> MfeResult {
        let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
        MfeResult {
            f_star: outperforming_drift(p, grid, 20.0),
            region: Region::Outperforming,
            r_star: None,
            x_hat0: crate::params::threshold_hat_x0(p, 20.0),
            x0: 3.0,
            z0: 20.0,
            residual: 0.0,
            degenerate: false,
            provenance: Provenance { seed: 0, n_steps: n, n_paths: 0 },
            fixed_point: None,
            x_match: None,
            trace: Vec::new(),
            non_monotone: false,
        }
    }

    fn under_mfe(p: &ModelParams, n: usize) -> MfeResult {
        let mut m = closed_form_mfe(p, n);
        m.f_star = Curve::from_fn(*m.f_star.grid(), |t| 2.8 - 0.85 * t * t);
        m.region = Region::Underperforming;
        m.r_star = Some(0.75);
        m.x0 = 1.0;
        m
    }

    #[test]
    fn objective_evaluators_agree() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let mut l = vec![0.0; 51];
        for k in 1..=50 {
            l[k] = l[k - 1] + if k % 7 == 0 { 0.13 * k as f64 / 50.0 } else { 0.0 };
        }
        let a = objective_by_parts(&g, 1.0, &l);
        let b = objective_stieltjes(&g, 1.0, &l);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        assert!(a <= 0.0);
        assert_eq!(objective_by_parts(&g, 1.0, &[0.0; 51]), 0.0);
        assert_eq!(objective_value(&g, 1.0, &[vec![0.0; 51]]).value, 0.0);
    }

    #[test]
    fn heterogeneity_schedule() {
        let p = ModelParams::baseline();
        let a = heterogeneous_agents(&p, 16, 0.1).unwrap();
        assert_eq!(a.len(), 16);
        for ag in &a {
            assert!(ag.u >= -1.0 && ag.u <= 1.0);
            let s = ag.params.mu() / p.mu();
            assert!((s - 1.0).abs() <= 0.1 / 4.0 + 1e-12);
            assert!((ag.params.sigma_z() / p.sigma_z() - s).abs() < 1e-12);
        }
        assert!(heterogeneous_agents(&p, 0, 0.1).is_err());
    }

    #[test]
    fn single_agent_without_interaction_has_no_gap() {
        let p = ModelParams::baseline().with_lambda(0.0).unwrap();
        let m = under_mfe(&p, 50);
        let pop = Population::new(homogeneous_agents(&p, 1), &m, &p).unwrap();
        let rep = estimate_gap(&pop, 0, &Deviation::default_set(), &McConfig::new(200, 50, 1)).unwrap();
        assert_eq!(rep.gap_bound, 0.0);
        for d in &rep.deviations {
            assert_eq!(d.objective, d.decoupled_objective);
        }
    }

    #[test]
    fn local_times_start_at_zero_and_grow() {
        let p = ModelParams::baseline();
        let m = under_mfe(&p, 40);
        let pop = Population::new(homogeneous_agents(&p, 5), &m, &p).unwrap();
        let ens = simulate_nplayer(&pop, &McConfig::new(64, 40, 2)).unwrap();
        assert!(ens.l_monotone);
        assert_eq!(ens.first_l.len(), 5);
        for l in &ens.first_l {
            assert_eq!(l[0], 0.0);
            assert!(l.windows(2).all(|w| w[1] >= w[0]));
        }
        assert!(ens.first_x.iter().flatten().all(|&x| x >= 0.0));
    }

    #[test]
    fn equilibrium_deviation_is_the_reference() {
        let p = ModelParams::baseline();
        let m = under_mfe(&p, 40);
        let pop = Population::new(homogeneous_agents(&p, 4), &m, &p).unwrap();
        let rep = estimate_gap(&pop, 0, &[Deviation::Zero], &McConfig::new(200, 40, 3)).unwrap();
        assert_eq!(rep.deviations[0].deviation, Deviation::Equilibrium);
        assert_eq!(rep.deviations[0].objective_gain.value, 0.0);
        assert!(rep.gap_bound >= 0.0);
        assert!(rep.deviations.iter().all(|d| d.objective.value <= 0.0));
        assert!(rep.deviations.iter().all(|d| d.admissible));
    }

    #[test]
    fn heterogeneous_population_builds_contexts() {
        let p = ModelParams::baseline();
        let m = under_mfe(&p, 30);
        let pop = Population::new(heterogeneous_agents(&p, 3, 0.1).unwrap(), &m, &p).unwrap();
        for i in 0..3 {
            assert!(pop.initial_level(i) > 0.0);
            assert_eq!(pop.context(i).params(), &pop.agents[i].params);
        }
    }
}
