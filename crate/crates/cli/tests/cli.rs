use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfg_tracking::mfe::outperforming_drift;
use mfg_tracking::{ModelParams, TimeGrid};

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg")).args(args).output().expect("run mfg")
}

/// Data rows of a CSV with `#` metadata lines, header dropped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    lines.next().expect("header");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn meta(path: &Path, key: &str) -> String {
    let prefix = format!("# {key}: ");
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
        .unwrap_or_else(|| panic!("no `{key}` in {}", path.display()))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn solve_outperforming_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mfg(&["solve", "--x0", "3", "--z0", "20", "--paths", "1000", "--steps", "50", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let f = outperforming_drift(&ModelParams::baseline(), TimeGrid::new(0.0, 1.0, 50).unwrap(), 20.0);
    let got = rows(&dir.path().join("f_star.csv"));
    assert_eq!(got.len(), 51);
    for (k, row) in got.iter().enumerate() {
        assert_eq!(num(&row[1]), f.values()[k]);
    }
    assert!(!dir.path().join("trace.csv").exists());
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("f_star.json")).unwrap()).unwrap();
    assert_eq!(side["region"], "outperforming");
    assert!(side["r_star"].is_null());
    assert_eq!(side["seed"], 20240611);
}

#[test]
fn solve_underperforming_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mfg(&["solve", "--x0", "2.0308", "--paths", "4000", "--steps", "100", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("f_star.json")).unwrap()).unwrap();
    assert_eq!(side["region"], "underperforming");
    assert!(side["r_star"].as_f64().unwrap() > 0.0);
    assert!(side["out_of_sample_residual"].as_f64().unwrap() < 1e-3 * (1.0 + side["f_star_t"].as_f64().unwrap()) * 5.0);
    let trace = rows(&dir.path().join("trace.csv"));
    assert!(trace.len() >= 2);
    assert_eq!(meta(&dir.path().join("trace.csv"), "region"), "underperforming");
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "lambda = 1.5\nx0 = 2.0\n").unwrap();
    let o = mfg(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));

    fs::write(&cfg, "lamda = 0.5\nx0 = 2.0\n").unwrap();
    let o = mfg(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = mfg(&["solve", "--paths", "100"]);
    assert_eq!(o.status.code(), Some(1), "missing initial state");
    let o = mfg(&["curve", "--r-list", "1,oops"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_values_are_used_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "# rates per year\nmu = 0.1\nlambda = 0.2\n# currency\nx0 = 3.0\nz0 = 20.0\nseed = 99\npaths = 500\nsteps = 20\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = mfg(&["solve", "--config", cfg.to_str().unwrap(), "--steps", "40", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = out.join("f_star.csv");
    assert_eq!(meta(&f, "seed"), "99");
    assert_eq!(meta(&f, "paths"), "500");
    assert_eq!(meta(&f, "grid"), "40 steps on [0, 1]");
    assert!(meta(&f, "build").starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(rows(&f).len(), 41);
}

#[test]
fn outputs_are_byte_identical_for_the_same_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = d.path().to_str().unwrap();
        let o = mfg(&["solve", "--x0", "2.0308", "--paths", "2000", "--steps", "50", "--seed", "11", "--out", out]);
        assert!(o.status.success());
        let o = mfg(&["curve", "--r-list", "0.5,2", "--paths", "2000", "--steps", "50", "--seed", "11", "--out", out]);
        assert!(o.status.success());
    }
    for name in ["f_star.csv", "f_star.json", "trace.csv", "x_of_r.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn curve_rows_are_sorted_with_positive_se_and_right_limits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mfg(&["curve", "--r-list", "10,0.001,1,0.25", "--paths", "10000", "--steps", "100", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.path().join("x_of_r.csv");
    let r: Vec<Vec<f64>> = rows(&path).iter().map(|row| row.iter().map(|s| num(s)).collect()).collect();
    assert_eq!(r.iter().map(|row| row[0]).collect::<Vec<_>>(), vec![0.001, 0.25, 1.0, 10.0]);
    assert!(r.iter().all(|row| row[2] > 0.0));
    assert!(r[0][1] < 0.05, "x(0.001) = {}", r[0][1]);
    let hat = num(&meta(&path, "x_hat0"));
    assert!((hat - 2.0547).abs() < 1e-4);
    assert!((r[3][1] - hat).abs() < f64::max(0.05, 3.0 * r[3][2]), "x(10) = {}", r[3][1]);
}

#[test]
fn verify_passes_on_both_branches_and_catches_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let run = |x0: &str, perturb: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = mfg(&[
            "verify", "--x0", x0, "--paths", "4000", "--steps", "100", "--perturb", perturb, "--out",
            out.to_str().unwrap(),
        ]);
        (o, out.join("consistency.csv"))
    };
    let (o, _) = run("3", "1", "out");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (o, csv) = run("2.0308", "1", "under");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&csv).len(), 101);

    let (o, csv) = run("2.0308", "1.1", "fault");
    assert_eq!(o.status.code(), Some(3));
    let rel = num(&meta(&csv, "sup_residual")) / num(&meta(&csv, "f_norm"));
    // |f − 1.1f| / ‖1.1f‖ = 1/11
    assert!((rel - 0.1 / 1.1).abs() < 0.01, "relative residual {rel}");
    assert_eq!(meta(&csv, "passed"), "false");
}

#[test]
fn nplayer_gap_decreases_and_vanishes_without_interaction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hom");
    let o = mfg(&[
        "nplayer", "--x0", "2.0308", "--paths", "4000", "--steps", "50", "--n-list", "2,10,50", "--replications", "400",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = rows(&out.join("gap_summary.csv"));
    let gaps: Vec<f64> = summary.iter().map(|r| num(&r[1])).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    let gap_rows = rows(&out.join("gap.csv"));
    assert_eq!(gap_rows.len(), 3 * 5);
    assert!(gap_rows.iter().any(|r| r[2] == "theta_star"));

    let cfg = dir.path().join("lam0.toml");
    fs::write(&cfg, "lambda = 0.0\nx0 = 1.0\nz0 = 20.0\n").unwrap();
    let out = dir.path().join("lam0");
    let o = mfg(&[
        "nplayer", "--config", cfg.to_str().unwrap(), "--paths", "2000", "--steps", "50", "--n-list", "1",
        "--replications", "200", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for r in rows(&out.join("gap.csv")) {
        assert!(num(&r[5]).abs() < 1e-9, "gap bound {}", r[5]);
    }
}

#[test]
fn heterogeneous_population_reports_agent_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mfg(&[
        "nplayer", "--x0", "2.0308", "--paths", "2000", "--steps", "50", "--n-list", "2,5", "--replications", "100",
        "--delta", "0.1", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agents = rows(&dir.path().join("agents.csv"));
    assert_eq!(agents.len(), 2 + 5);
    let mus: Vec<f64> = agents.iter().filter(|r| r[0] == "5").map(|r| num(&r[3])).collect();
    assert_eq!(mus.len(), 5);
    assert!(mus.iter().any(|&m| (m - 0.1).abs() > 1e-3));
    assert!(mus.iter().all(|&m| (m - 0.1).abs() <= 0.1 * 0.1 / 5f64.sqrt() + 1e-12));
    assert_eq!(meta(&dir.path().join("agents.csv"), "delta"), "0.1");
}
