//! Scalar helpers shared by the samplers and learners.
//!
//! Everything goes through `libm` so results are identical with or without
//! `std` and across platforms.

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Binary cross-entropy of a logit against a 0/1 target.
pub fn logit_loss(logit: f64, positive: bool) -> f64 {
    let y = if positive { 1.0 } else { 0.0 };
    softplus(logit) - y * logit
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
