//! G and H on a whole time grid from one path ensemble.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::mc::{fold_blocks, McConfig, NodeAccumulator};
use crate::params::ModelParams;
use crate::stochastic::{draw_increments, gbm_into, reflect_into, PathBundle};

use super::estimators::{stopped_index_integrals, HCoefficients};
use super::levels::{LagTable, LevelGrid};

/// G(r, s_j, t_i) for j ≥ i and H(r, z, t_i) on one grid, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub grid: TimeGrid,
    pub r_level: f64,
    pub z_level: f64,
    pub n_paths: usize,
    /// Row-major (n+1)×(n+1); entries with j < i are zero and unused.
    pub g_values: Vec<f64>,
    pub g_se: Vec<f64>,
    pub h_values: Vec<f64>,
    pub h_se: Vec<f64>,
}

impl KernelTable {
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.g_values[i * self.grid.n_nodes() + j]
    }

    pub fn g_std_error(&self, i: usize, j: usize) -> f64 {
        self.g_se[i * self.grid.n_nodes() + j]
    }

    /// sup_i Σ_{j ≥ i} w_j G(t_i, s_j) with trapezoid weights: the Lipschitz
    /// constant of the integral operator in the sup norm.
    pub fn operator_norm(&self) -> f64 {
        let n = self.grid.n_steps();
        (0..=n)
            .map(|i| (i..=n).map(|j| self.grid.trapezoid_weight(j, i, n) * self.g(i, j)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// CSV with columns r, z, t, s, G, G_se, H, H_se; one row per t ≤ s pair.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["r", "z", "t", "s", "G", "G_se", "H", "H_se"])?;
        let n = self.grid.n_steps();
        for i in 0..=n {
            for j in i..=n {
                out.write_record(&[
                    format!("{:e}", self.r_level),
                    format!("{:e}", self.z_level),
                    format!("{:e}", self.grid.node(i)),
                    format!("{:e}", self.grid.node(j)),
                    format!("{:e}", self.g(i, j)),
                    format!("{:e}", self.g_std_error(i, j)),
                    format!("{:e}", self.h_values[i]),
                    format!("{:e}", self.h_se[i]),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`KernelTable::write_csv`]. The grid is recovered from the t column.
    pub fn read_csv<R: Read>(r: R, n_paths: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<[f64; 8]> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = [0.0; 8];
            for (k, v) in row.iter_mut().enumerate() {
                *v = rec
                    .get(k)
                    .ok_or_else(|| Error::Config("short kernel table row".into()))?
                    .parse()
                    .map_err(|e| Error::Config(format!("bad kernel table value: {e}")))?;
            }
            rows.push(row);
        }
        // Rows per t shrink by one: (n+1)(n+2)/2 rows in total.
        let total = rows.len();
        let n = ((((8 * total + 1) as f64).sqrt() - 3.0) / 2.0).round() as usize;
        if n == 0 || (n + 1) * (n + 2) / 2 != total {
            return Err(Error::Config(format!("{total} rows do not form a triangular table")));
        }
        let grid = TimeGrid::new(rows[0][2], rows[total - 1][3], n)?;
        let nn = n + 1;
        let mut t = KernelTable {
            grid,
            r_level: rows[0][0],
            z_level: rows[0][1],
            n_paths,
            g_values: vec![0.0; nn * nn],
            g_se: vec![0.0; nn * nn],
            h_values: vec![0.0; nn],
            h_se: vec![0.0; nn],
        };
        let mut k = 0;
        for i in 0..nn {
            for j in i..nn {
                let row = &rows[k];
                t.g_values[i * nn + j] = row[4];
                t.g_se[i * nn + j] = row[5];
                t.h_values[i] = row[6];
                t.h_se[i] = row[7];
                k += 1;
            }
        }
        Ok(t)
    }
}

struct BlockSums {
    /// Level histogram per node, row-major (n+1) × levels.
    hist: Vec<f64>,
    h: NodeAccumulator,
}

/// Build G and H on `grid` (which must start at 0 and end at the horizon)
/// from one ensemble of (R, Z) paths started at (r, z).
pub fn build_kernel_table(p: &ModelParams, r: f64, z: f64, grid: &TimeGrid, mc: &McConfig) -> Result<KernelTable> {
    mc.validate()?;
    if grid.t_start() != 0.0 || (grid.t_end() - p.horizon()).abs() > 1e-12 {
        return Err(Error::GridMismatch("kernel tables live on [0, T]".into()));
    }
    if !(r >= 0.0 && z >= 0.0) {
        return Err(Error::Domain(format!("need r >= 0 and z >= 0, got r={r}, z={z}")));
    }
    let c = p.derive_constants();
    let n = grid.n_steps();
    let nn = n + 1;
    let dt = grid.dt();
    let levels = LevelGrid::for_paths(&c, r, p.horizon(), dt);
    let nl = levels.n;
    let want_g = p.lambda() > 0.0;
    let want_h = p.lambda() < 1.0;
    let hk = HCoefficients::new(p);
    let q = if want_h {
        Some(
            LagTable::inner_integrals(&c, levels, dt, n, p.z_weight(), p.rho() - c.kappa).cumulative(),
        )
    } else {
        None
    };

    let sums = fold_blocks(
        mc,
        BlockSums {
            hist: vec![0.0; if want_g { nn * nl } else { 0 }],
            h: NodeAccumulator::new(nn),
        },
        |stream, count| {
            let mut rng = stream.rng();
            let mut dw = Vec::new();
            let mut ex = Vec::new();
            let mut b = PathBundle::default();
            let mut stopped = Vec::new();
            let mut out = BlockSums {
                hist: vec![0.0; if want_g { nn * nl } else { 0 }],
                h: NodeAccumulator::new(nn),
            };
            for _ in 0..count {
                draw_increments(&mut rng, grid, &mut dw, &mut ex);
                reflect_into(&c, grid, r, &dw, &ex, &mut b);
                if want_g {
                    for i in 0..nn {
                        levels.deposit(&mut out.hist[i * nl..(i + 1) * nl], b.r[i], 1.0);
                    }
                }
                if let Some(q) = &q {
                    gbm_into(p, grid, z, &dw, &mut b.z);
                    stopped_index_integrals(grid, &b, p.rho(), &mut stopped);
                    for i in 0..nn {
                        let q_i = levels.interp(q.row(n - i), b.r[i]);
                        out.h.0[i].push(hk.double_integral * b.z[i] * q_i + hk.stopped * stopped[i]);
                    }
                }
            }
            out
        },
        |acc, part| {
            for (a, b) in acc.hist.iter_mut().zip(&part.hist) {
                *a += b;
            }
            acc.h.merge(&part.h);
        },
    );

    let mut g_values = vec![0.0; nn * nn];
    let mut g_se = vec![0.0; nn * nn];
    if want_g {
        let pref = p.lambda() * p.mu() * p.mu() / (p.sigma() * p.sigma());
        let rows = LagTable::inner_integrals(&c, levels, dt, n, 1.0, p.rho());
        let np = mc.n_paths as f64;
        for i in 0..nn {
            let hist = &sums.hist[i * nl..(i + 1) * nl];
            let lo = hist.iter().position(|&w| w > 0.0).unwrap_or(0);
            let hi = hist.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            for j in (i + 1)..nn {
                let row = rows.row(j - i);
                let (mut m1, mut m2) = (0.0, 0.0);
                for m in lo..=hi {
                    let v = row[m];
                    m1 += hist[m] * v;
                    m2 += hist[m] * v * v;
                }
                m1 /= np;
                m2 /= np;
                let var = ((m2 - m1 * m1) * np / (np - 1.0)).max(0.0);
                g_values[i * nn + j] = pref * m1;
                g_se[i * nn + j] = pref * (var / np).sqrt();
            }
        }
    }

    let mut h_values = vec![0.0; nn];
    let mut h_se = vec![0.0; nn];
    if want_h {
        for (i, e) in sums.h.estimates().into_iter().enumerate() {
            h_values[i] = e.value + hk.index * (p.mu_z() * grid.node(i)).exp() * z;
            h_se[i] = e.std_error;
        }
    }
    Ok(KernelTable {
        grid: *grid,
        r_level: r,
        z_level: z,
        n_paths: mc.n_paths,
        g_values,
        g_se,
        h_values,
        h_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::estimators::{kernel_g, kernel_h};

    #[test]
    fn table_agrees_with_pointwise_estimators() {
        let p = ModelParams::baseline();
        let mc = McConfig::new(4000, 50, 3);
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let kt = build_kernel_table(&p, 0.8, 20.0, &grid, &mc).unwrap();
        assert!((kt.h_values[50] - 0.08 * 0.2f64.exp() * 20.0).abs() < 1e-12);
        for &(i, j) in &[(10, 30), (25, 26), (0, 50), (40, 50)] {
            let direct = kernel_g(&p, 0.8, grid.node(j), grid.node(i), &mc.with_seed(99)).unwrap();
            let se = (direct.std_error.powi(2) + kt.g_std_error(i, j).powi(2)).sqrt();
            assert!((kt.g(i, j) - direct.value).abs() < 4.0 * se + 0.01 * direct.value + 1e-9,
                "G({i},{j}) {} vs {:?}", kt.g(i, j), direct);
        }
        for i in [0, 20, 45] {
            let direct = kernel_h(&p, 0.8, 20.0, grid.node(i), &mc.with_seed(99)).unwrap();
            let se = (direct.std_error.powi(2) + kt.h_se[i].powi(2)).sqrt();
            assert!((kt.h_values[i] - direct.value).abs() < 4.0 * se + 1e-3, "H({i})");
        }
        assert!(kt.g_values.iter().all(|&g| g >= 0.0));
        assert!(kt.h_values.iter().all(|&h| h >= 0.0));
        assert!((0..=50).all(|i| kt.g(i, i) == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let p = ModelParams::baseline();
        let mc = McConfig::new(200, 8, 3);
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let kt = build_kernel_table(&p, 0.5, 20.0, &grid, &mc).unwrap();
        let mut buf = Vec::new();
        kt.write_csv(&mut buf).unwrap();
        let back = KernelTable::read_csv(buf.as_slice(), 200).unwrap();
        assert_eq!(back, kt);
    }
}
