//! The four subcommands. Each writes its files under the output directory and
//! returns a one-line summary for the terminal.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mfg_tracking::mfe::{self, MfeResult, Region};
use mfg_tracking::nplayer::{self, Deviation, Population};
use mfg_tracking::report::RunMetadata;
use mfg_tracking::strategy_value::{consistency_against, simulate_equilibrium_wealth, StrategyContext};
use mfg_tracking::{McConfig, ModelParams};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const BUILD: &str = env!("MFG_BUILD");

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn io(e: std::io::Error) -> CliError {
    CliError::Validation(e.to_string())
}

fn metadata(cmd: &str, cfg: &RunConfig, mc: &McConfig) -> RunMetadata {
    RunMetadata::new(cmd, mc, cfg.horizon, BUILD)
        .with("params", params_line(cfg))
        .with("z0", cfg.z0)
}

fn params_line(c: &RunConfig) -> String {
    format!(
        "mu={} sigma={} mu_z={} sigma_z={} lambda={} rho={} horizon={}",
        c.mu, c.sigma, c.mu_z, c.sigma_z, c.lambda, c.rho, c.horizon
    )
}

fn region_name(r: Region) -> &'static str {
    match r {
        Region::Outperforming => "outperforming",
        Region::Underperforming => "underperforming",
    }
}

fn solve_from(cfg: &RunConfig) -> Result<(ModelParams, f64, MfeResult), CliError> {
    let p = cfg.params()?;
    let s = cfg.initial_state(&p)?;
    let res = mfe::solve_mfe(&p, s.x0, s.z0, &cfg.mfe())?;
    Ok((p, s.v0, res))
}

#[derive(Serialize)]
struct SolveSidecar<'a> {
    build: &'a str,
    seed: u64,
    n_steps: usize,
    n_paths: usize,
    params: ModelParams,
    x0: f64,
    z0: f64,
    v0: f64,
    region: Region,
    degenerate: bool,
    r_star: Option<f64>,
    x_hat0: f64,
    x_at_r_star: Option<f64>,
    x_at_r_star_se: Option<f64>,
    residual: f64,
    out_of_sample_residual: Option<f64>,
    iterations: Option<usize>,
    operator_norm: Option<f64>,
    used_fallback: Option<bool>,
    non_monotone: bool,
    f_star_0: f64,
    f_star_t: f64,
}

pub fn solve(cfg: &RunConfig) -> Result<String, CliError> {
    let (p, v0, res) = solve_from(cfg)?;
    let mc = cfg.mc();
    let meta = metadata("solve", cfg, &mc).with("region", region_name(res.region));

    let mut w = create(&cfg.out, "f_star.csv")?;
    meta.write_header(&mut w)?;
    res.write_curve_csv(&mut w)?;
    w.flush().map_err(io)?;

    let certificate = match res.region {
        Region::Underperforming => Some(mfe::fixed_point_certificate(&p, &res, &mc.with_seed(mc.seed.wrapping_add(1)))?),
        Region::Outperforming => None,
    };
    if res.region == Region::Underperforming {
        let mut w = create(&cfg.out, "trace.csv")?;
        meta.write_header(&mut w)?;
        res.write_trace_csv(&mut w)?;
        w.flush().map_err(io)?;
    }

    let f = res.f_star.values();
    let side = SolveSidecar {
        build: BUILD,
        seed: mc.seed,
        n_steps: mc.n_steps,
        n_paths: mc.n_paths,
        params: p,
        x0: res.x0,
        z0: res.z0,
        v0,
        region: res.region,
        degenerate: res.degenerate,
        r_star: res.r_star,
        x_hat0: res.x_hat0,
        x_at_r_star: res.x_match.map(|e| e.value),
        x_at_r_star_se: res.x_match.map(|e| e.std_error),
        residual: res.residual,
        out_of_sample_residual: certificate,
        iterations: res.fixed_point.as_ref().map(|o| o.iterations),
        operator_norm: res.fixed_point.as_ref().map(|o| o.operator_norm),
        used_fallback: res.fixed_point.as_ref().map(|o| o.used_fallback),
        non_monotone: res.non_monotone,
        f_star_0: f[0],
        f_star_t: f[f.len() - 1],
    };
    let mut w = create(&cfg.out, "f_star.json")?;
    serde_json::to_writer_pretty(&mut w, &side).map_err(|e| CliError::Validation(e.to_string()))?;
    writeln!(w).map_err(io)?;
    w.flush().map_err(io)?;

    Ok(format!(
        "region={} r*={} f*(0)={:.6} f*(T)={:.6} residual={:.3e}",
        region_name(res.region),
        res.r_star.map_or("none".to_string(), |r| format!("{r:.6}")),
        f[0],
        f[f.len() - 1],
        res.residual
    ))
}

pub fn curve(cfg: &RunConfig) -> Result<String, CliError> {
    let p = cfg.params()?;
    let mc = cfg.mc();
    let mut rs = cfg.r_list.clone();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    if rs.is_empty() {
        return Err(CliError::Validation("r_list is empty".into()));
    }
    let meta = metadata("curve", cfg, &mc).with("x_hat0", mfg_tracking::params::threshold_hat_x0(&p, cfg.z0));
    let mut w = create(&cfg.out, "x_of_r.csv")?;
    meta.write_header(&mut w)?;
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["r", "x", "se"])?;
    let fp_cfg = cfg.mfe().fixed_point;
    for &r in &rs {
        let (fp, _) = mfe::solve_fixed_point(&p, r, cfg.z0, &mc, &fp_cfg)?;
        let x = mfe::x_of_r(&p, r, cfg.z0, &fp.curve, &mc)?;
        out.write_record([r.to_string(), x.value.to_string(), x.std_error.to_string()])?;
    }
    out.flush().map_err(io)?;
    drop(out);
    w.flush().map_err(io)?;
    Ok(format!("{} rows written", rs.len()))
}

pub fn verify(cfg: &RunConfig) -> Result<String, CliError> {
    let (p, v0, res) = solve_from(cfg)?;
    let ctx = StrategyContext::new(&p, &res)?;
    // fresh noise for the wealth simulation
    let mc = cfg.mc();
    let sim_mc = mc.with_seed(mc.seed.wrapping_add(2));
    let ens = simulate_equilibrium_wealth(&ctx, v0, res.z0, &sim_mc, 0)?;
    let f_ref = res.f_star.scaled(cfg.perturb);
    let rep = consistency_against(&p, &ens, &f_ref)?;
    let ok = rep.passes(cfg.consistency_k, cfg.consistency_rel);

    let meta = metadata("verify", cfg, &mc)
        .with("region", region_name(res.region))
        .with("perturb", cfg.perturb)
        .with("sup_residual", rep.sup_residual())
        .with("f_norm", rep.f_norm())
        .with("passed", ok);
    let mut w = create(&cfg.out, "consistency.csv")?;
    meta.write_header(&mut w)?;
    rep.write_csv(&mut w)?;
    w.flush().map_err(io)?;

    let line = format!(
        "region={} sup_residual={:.4e} ({:.2}% of ||f*||) passed={}",
        region_name(res.region),
        rep.sup_residual(),
        100.0 * rep.sup_residual() / rep.f_norm().max(f64::MIN_POSITIVE),
        ok
    );
    if ok {
        Ok(line)
    } else {
        Err(CliError::Verification(line))
    }
}

pub fn nplayer(cfg: &RunConfig) -> Result<String, CliError> {
    let (p, _, res) = solve_from(cfg)?;
    let mc = cfg.mc();
    let meta = metadata("nplayer", cfg, &mc)
        .with("replications", cfg.nplayer_paths)
        .with("delta", cfg.delta)
        .with("region", region_name(res.region));

    let mut gap_w = create(&cfg.out, "gap.csv")?;
    meta.write_header(&mut gap_w)?;
    let mut gap = csv::Writer::from_writer(&mut gap_w);

    let mut sum_w = create(&cfg.out, "gap_summary.csv")?;
    meta.write_header(&mut sum_w)?;
    let mut sum = csv::Writer::from_writer(&mut sum_w);
    sum.write_record(["n", "equilibrium_gap", "gap_bound", "c0", "max_drift_z"])?;

    let mut ag_w = create(&cfg.out, "agents.csv")?;
    meta.write_header(&mut ag_w)?;
    let mut ag = csv::Writer::from_writer(&mut ag_w);
    ag.write_record(["n", "agent_id", "u", "mu", "sigma", "mu_z", "sigma_z", "lambda", "rho"])?;

    let f_se = res.f_std_error();
    let mut gaps = Vec::new();
    for (idx, &n) in cfg.n_list.iter().enumerate() {
        let agents = if cfg.delta > 0.0 {
            nplayer::heterogeneous_agents(&p, n, cfg.delta)?
        } else {
            nplayer::homogeneous_agents(&p, n)
        };
        for (i, a) in agents.iter().enumerate() {
            let q = &a.params;
            ag.write_record([
                n.to_string(),
                i.to_string(),
                a.u.to_string(),
                q.mu().to_string(),
                q.sigma().to_string(),
                q.mu_z().to_string(),
                q.sigma_z().to_string(),
                q.lambda().to_string(),
                q.rho().to_string(),
            ])?;
        }
        let pop = Population::new(agents, &res, &p)?;
        let reps = McConfig {
            n_paths: cfg.nplayer_paths,
            n_steps: mc.n_steps,
            seed: mc.seed.wrapping_add(1000 + idx as u64),
            block_size: 16,
        };
        let rep = nplayer::estimate_gap(&pop, 0, &Deviation::default_set(), &reps)?;
        rep.write_csv(&mut gap, idx == 0)?;
        let max_z = rep
            .avg_drift
            .iter()
            .zip(res.f_star.values())
            .zip(&f_se)
            .map(|((d, f), s)| {
                let se = (d.std_error * d.std_error + s * s).sqrt();
                if se > 0.0 {
                    (d.value - f).abs() / se
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        sum.write_record([
            n.to_string(),
            rep.equilibrium_gap.to_string(),
            rep.gap_bound.to_string(),
            rep.c0.to_string(),
            max_z.to_string(),
        ])?;
        gaps.push(format!("n={n}: {:.4}", rep.gap_bound));
    }
    gap.flush().map_err(io)?;
    sum.flush().map_err(io)?;
    ag.flush().map_err(io)?;
    drop((gap, sum, ag));
    for w in [&mut gap_w, &mut sum_w, &mut ag_w] {
        w.flush().map_err(io)?;
    }
    Ok(format!("gap bounds {}", gaps.join(", ")))
}
