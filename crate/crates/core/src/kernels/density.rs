//! Joint density φ of the dual position and its running maximum, and the
//! integrals of it that enter the kernels and the strategy.
//!
//! The dual position is X_s = μ̃σ̃ s + |σ̃| B_s. Writing m = μ̃σ̃, c² = σ̃² and
//! β = w + m/c², the weighted inner integral has the closed form
//!
//! ```text
//! I(τ, r, w) = ∫_{−∞}^r e^{wx} φ(τ, x, r) dx
//!            = exp(βr − m²τ/(2c²) − r²/(2c²τ)) · [2/(c√(2πτ)) − β·erfcx(A/√2)],
//!   A = (r + βc²τ)/(c√τ),
//! ```
//!
//! and the stopped exponential moment is
//!
//! ```text
//! E_w(u, r) = E[e^{wX_u}; max_{s≤u} X_s < r]
//!           = e^{wmu + w²c²u/2} [Φ((r − βc²u)/(c√u)) − e^{2βr} Φ(−A)].
//! ```

use std::f64::consts::{PI, SQRT_2};

use crate::error::{domain, Result};
use crate::params::DerivedConstants;
use crate::quadrature::{integrate, QuadResult};
use crate::special::{erfcx, norm_cdf, norm_sf};

/// φ(s, x, y): joint density of (X_s, max_{u≤s} X_u) at (x, y).
pub fn phi_density(c: &DerivedConstants, s: f64, x: f64, y: f64) -> Result<f64> {
    if !(s > 0.0) {
        return domain(format!("phi_density needs s > 0, got {s}"));
    }
    if x > y || y < 0.0 {
        return domain(format!("phi_density needs x <= y and y >= 0, got x={x}, y={y}"));
    }
    let c2 = c.x_var();
    let (mt, st) = (c.mu_tilde, c.sigma_tilde);
    let v = 2.0 * y - x;
    Ok(2.0 * v / (c2 * (2.0 * c2 * PI * s * s * s).sqrt())
        * (mt * x / st - 0.5 * mt * mt * s - v * v / (2.0 * c2 * s)).exp())
}

/// ∫_{−∞}^r e^{wx} φ(τ, x, r) dx by adaptive quadrature on u = r − x.
pub fn inner_phi_integral(c: &DerivedConstants, tau: f64, r: f64, w: f64) -> Result<QuadResult> {
    if !(tau > 0.0) || !(r >= 0.0) {
        return domain(format!("inner_phi_integral needs tau > 0, r >= 0, got {tau}, {r}"));
    }
    let c2 = c.x_var();
    let beta = w + c.x_drift() / c2;
    // The integrand is a Gaussian in u centred near −(r + βc²τ); 8.5 standard
    // deviations past the centre leaves a tail below 1e-12 of the mass.
    let sd = (c2 * tau).sqrt();
    let u_max = (-(r + beta * c2 * tau)).max(0.0) + 8.5 * sd;
    let integrand = |u: f64| {
        let x = r - u;
        (w * x).exp() * phi_density(c, tau, x, r).unwrap_or(0.0)
    };
    let scale = inner_phi_closed(c, tau, r, w).abs();
    integrate(integrand, 0.0, u_max, 1e-14 + 1e-12 * scale, 1e-10, 400)
}

/// Closed form of [`inner_phi_integral`]; the τ → 0 limit is 0 for r > 0.
pub fn inner_phi_closed(c: &DerivedConstants, tau: f64, r: f64, w: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let c2 = c.x_var();
    let cc = c2.sqrt();
    let m = c.x_drift();
    let beta = w + m / c2;
    let st = cc * tau.sqrt();
    let a = (r + beta * c2 * tau) / st;
    if a >= 0.0 {
        let lead = beta * r - m * m * tau / (2.0 * c2) - r * r / (2.0 * c2 * tau);
        lead.exp() * (2.0 / (st * (2.0 * PI).sqrt()) - beta * erfcx(a / SQRT_2))
    } else {
        let e = 2.0 * beta * r - m * m * tau / (2.0 * c2) + 0.5 * beta * beta * c2 * tau;
        2.0 * e.exp() * ((-0.5 * a * a).exp() / ((2.0 * PI).sqrt() * st) - beta * norm_sf(a))
    }
}

/// E[e^{wX_u}; max_{s≤u} X_s < r], with value 1{r > 0} at u = 0.
pub fn stopped_exp_moment(c: &DerivedConstants, u: f64, r: f64, w: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if u <= 0.0 {
        return 1.0;
    }
    let c2 = c.x_var();
    let m = c.x_drift();
    let beta = w + m / c2;
    let st = (c2 * u).sqrt();
    let a = (r + beta * c2 * u) / st;
    let b = (r - beta * c2 * u) / st;
    let reflected = if a >= 0.0 {
        0.5 * erfcx(a / SQRT_2) * (-0.5 * b * b).exp()
    } else {
        (2.0 * beta * r).exp() * norm_sf(a)
    };
    (w * m * u + 0.5 * w * w * c2 * u).exp() * (norm_cdf(b) - reflected).max(0.0)
}

/// Ψ(h, r) = ∫_0^h e^{(κ−ρ)u} E_w(u, r) du with w = 1 − σσ_Z/μ, so that the
/// stopped index integral is φ̄(t, r, z) = z·Ψ(T − t, r).
pub fn index_survival_integral(c: &DerivedConstants, rho: f64, w: f64, h: f64, r: f64) -> f64 {
    if h <= 0.0 || r <= 0.0 {
        return 0.0;
    }
    let n = (h / 0.002).ceil().max(1.0) as usize;
    let dt = h / n as f64;
    (0..n)
        .map(|k| gauss5(|u| ((c.kappa - rho) * u).exp() * stopped_exp_moment(c, u, r, w), k as f64 * dt, (k + 1) as f64 * dt))
        .sum()
}

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Five-point Gauss–Legendre rule on [a, b].
pub(crate) fn gauss5(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    h * GL5_X.iter().zip(GL5_W).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;

    fn consts() -> DerivedConstants {
        ModelParams::baseline().derive_constants()
    }

    #[test]
    fn density_reference_value() {
        let c = consts();
        assert!((phi_density(&c, 1.0, 0.0, 1.0).unwrap() - 0.19059).abs() < 1e-5);
        assert_eq!(phi_density(&c, 1.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(phi_density(&c, 0.0, 0.0, 1.0).is_err());
        assert!(phi_density(&c, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let c = consts();
        for &(tau, r, w) in &[
            (0.5, 1.0, 1.0),
            (1.0, 1.0, 0.0),
            (0.01, 0.05, 1.0),
            (0.9, 3.0, 0.9),
            (0.002, 0.0, 1.0),
            (1.0, 0.0, 0.9),
            (0.3, 6.0, 1.0),
        ] {
            let q = inner_phi_integral(&c, tau, r, w).unwrap();
            let cf = inner_phi_closed(&c, tau, r, w);
            assert!(
                (q.value - cf).abs() <= 1e-9 * (1.0 + cf.abs()),
                "tau={tau} r={r} w={w}: {} vs {cf}",
                q.value
            );
        }
        // Density of the running maximum at level 1 after unit time.
        assert!((inner_phi_closed(&c, 1.0, 1.0, 0.0) - 0.52253).abs() < 1e-5);
    }

    #[test]
    fn small_tau_limit() {
        let c = consts();
        assert!(inner_phi_integral(&c, 1e-4, 1.0, 1.0).unwrap().value < 1e-6);
        assert!(inner_phi_closed(&c, 1e-4, 1.0, 1.0) < 1e-6);
    }

    #[test]
    fn stopped_moment_is_derivative_integral() {
        // ∂_r E_w(u, r) = I(u, r, w).
        let c = consts();
        for &(u, r, w) in &[(0.5, 1.0, 1.0), (1.0, 0.3, 0.9), (0.2, 2.0, 0.0)] {
            let h = 1e-5;
            let fd = (stopped_exp_moment(&c, u, r + h, w) - stopped_exp_moment(&c, u, r - h, w)) / (2.0 * h);
            let i = inner_phi_closed(&c, u, r, w);
            assert!((fd - i).abs() < 1e-6 * (1.0 + i), "{fd} vs {i}");
        }
        // Unconstrained limit: E[e^{wX_u}] as r → ∞.
        let (u, w) = (0.7, 0.9);
        let free = (w * c.x_drift() * u + 0.5 * w * w * c.x_var() * u).exp();
        assert!((stopped_exp_moment(&c, u, 40.0, w) - free).abs() < 1e-12);
    }

    #[test]
    fn survival_integral_far_from_boundary() {
        // With r → ∞, Ψ(h) = ∫ e^{(κ−ρ+wm+w²c²/2)u} du and the exponent equals η.
        let p = ModelParams::baseline();
        let c = consts();
        let psi = index_survival_integral(&c, p.rho(), p.z_weight(), 1.0, 50.0);
        let rate = c.eta;
        assert!((psi - (rate.exp() - 1.0) / rate).abs() < 1e-10);
        assert_eq!(index_survival_integral(&c, p.rho(), p.z_weight(), 1.0, 0.0), 0.0);
    }
}
