//! Scalar math routed through `libm` so the crate stays `no_std`.

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn tan(x: f64) -> f64 {
    libm::tan(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, f64::from(n))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `-[y log σ(z) + (1-y) log(1-σ(z))]` without forming σ(z).
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    let relu = if z > 0.0 { z } else { 0.0 };
    relu - z * y + libm::log1p(exp(-z.abs()))
}
