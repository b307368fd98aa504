//! Normal distribution helpers and the scaled complementary error function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x).
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// erfcx(x) = e^{x²} erfc(x), accurate for large positive x.
pub fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        if x < -26.0 {
            return f64::INFINITY;
        }
        (x * x).exp() * libm::erfc(x)
    } else {
        let z2 = 1.0 / (x * x);
        (1.0 - 0.5 * z2 + 0.75 * z2 * z2 - 1.875 * z2 * z2 * z2) / (x * PI.sqrt())
    }
}
