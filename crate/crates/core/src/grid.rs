//! Uniform time grids and piecewise-linear curves on them.

use serde::Serialize;

use crate::error::{domain, Error, Result};

/// Uniform grid t_k = t_start + k·dt, k = 0..=n_steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) || n_steps == 0 {
            return domain(format!(
                "invalid grid [{t_start}, {t_end}] with {n_steps} steps"
            ));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Grid on [t_start, t_end] whose step is as close as possible to `dt`.
    pub fn with_step(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        let n = ((t_end - t_start) / dt).round().max(1.0) as usize;
        Self::new(t_start, t_end, n)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node equal to `t` up to a small relative tolerance.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.dt();
        let k = x.round();
        if (x - k).abs() < 1e-9 && k >= 0.0 && k <= self.n_steps as f64 {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Trapezoid weight of node `k` on the sub-range of nodes `from..=to`.
    pub fn trapezoid_weight(&self, k: usize, from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else if k == from || k == to {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && (self.t_start - other.t_start).abs() <= 1e-12 * (1.0 + self.t_start.abs())
            && (self.t_end - other.t_end).abs() <= 1e-12 * (1.0 + self.t_end.abs())
    }
}

/// Piecewise-linear curve stored by its node values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("curve values must be finite");
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_nodes()).map(|k| f(grid.node(k))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_nodes()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear interpolation; `t` is clamped to the grid range.
    pub fn eval(&self, t: f64) -> f64 {
        let g = &self.grid;
        let x = ((t - g.t_start) / g.dt()).clamp(0.0, g.n_steps as f64);
        let k = (x.floor() as usize).min(g.n_steps - 1);
        let w = x - k as f64;
        (1.0 - w) * self.values[k] + w * self.values[k + 1]
    }

    /// Exact integral of the piecewise-linear interpolant over [a, b].
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let g = &self.grid;
        let tol = 1e-12 * (1.0 + g.t_end.abs());
        if a > b || a < g.t_start - tol || b > g.t_end + tol {
            return domain(format!(
                "integration range [{a}, {b}] outside [{}, {}]",
                g.t_start, g.t_end
            ));
        }
        let a = a.max(g.t_start);
        let b = b.min(g.t_end);
        if a == b {
            return Ok(0.0);
        }
        let dt = g.dt();
        let ka = (((a - g.t_start) / dt).floor() as usize).min(g.n_steps - 1);
        let kb = (((b - g.t_start) / dt).ceil() as usize).clamp(1, g.n_steps);
        let mut total = 0.0;
        for k in ka..kb {
            let lo = g.node(k).max(a);
            let hi = g.node(k + 1).min(b);
            if hi > lo {
                total += 0.5 * (hi - lo) * (self.eval(lo) + self.eval(hi));
            }
        }
        Ok(total)
    }

    /// Running trapezoid integral ∫_{t_0}^{t_k} on the nodes.
    pub fn cumulative_integral(&self) -> Vec<f64> {
        let dt = self.grid.dt();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &Curve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, c: f64) -> Curve {
        Curve {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Interpolate onto another grid covering the same range.
    pub fn resample(&self, grid: TimeGrid) -> Curve {
        Curve::from_fn(grid, |t| self.eval(t))
    }
}
