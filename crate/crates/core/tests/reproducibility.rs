use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};

use mfg_tracking::kernels::{build_kernel_table, KernelTable};
use mfg_tracking::mfe::{solve_mfe, MfeConfig};
use mfg_tracking::params::parse_params;
use mfg_tracking::{McConfig, ModelParams, TimeGrid};

fn cfg(seed: u64) -> MfeConfig {
    MfeConfig {
        mc: McConfig::new(2000, 50, seed),
        ..MfeConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_equilibrium() {
    let p = ModelParams::baseline();
    let a = solve_mfe(&p, 2.0308, 20.0, &cfg(7)).unwrap();
    let b = solve_mfe(&p, 2.0308, 20.0, &cfg(7)).unwrap();
    assert_eq!(a.r_star, b.r_star);
    assert_eq!(a.f_star.values(), b.f_star.values());

    let c = solve_mfe(&p, 2.0308, 20.0, &cfg(8)).unwrap();
    assert_ne!(a.f_star.values(), c.f_star.values());
}

#[test]
fn kernel_table_survives_a_file_round_trip() {
    let p = ModelParams::baseline();
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let tab = build_kernel_table(&p, 1.5, 20.0, &grid, &McConfig::new(1000, 20, 3)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kernels.csv");
    let mut w = BufWriter::new(File::create(&path).unwrap());
    tab.write_csv(&mut w).unwrap();
    w.flush().unwrap();
    drop(w);

    let back = KernelTable::read_csv(BufReader::new(File::open(&path).unwrap()), 1000).unwrap();
    assert_eq!(back.grid, tab.grid);
    for i in 0..=20 {
        for j in i..=20 {
            let (x, y) = (back.g(i, j), tab.g(i, j));
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0), "G({i},{j}) {x} vs {y}");
        }
    }
}

#[test]
fn params_file_with_run_options_parses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "mu = 0.1\nsigma = 0.1\nmu_z = 0.2\nsigma_z = 0.1\nlambda = 0.2\nrho = 1.0\nhorizon = 1.0\n\
         v0 = 22.5385\nz0 = 20.0\npaths = 1000\n",
    )
    .unwrap();
    let (p, s) = parse_params(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(p, ModelParams::baseline());
    assert!((s.x0 - 2.0308).abs() < 1e-12);
}
