//! Scalar math routed through libm so the crate stays no_std.

use crate::tensor::Real;

#[cfg(not(feature = "f32"))]
mod imp {
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn powf(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
}

#[cfg(feature = "f32")]
mod imp {
    pub fn exp(x: f32) -> f32 {
        libm::expf(x)
    }
    pub fn ln(x: f32) -> f32 {
        libm::logf(x)
    }
    pub fn sqrt(x: f32) -> f32 {
        libm::sqrtf(x)
    }
    pub fn powf(x: f32, y: f32) -> f32 {
        libm::powf(x, y)
    }
}

pub(crate) fn exp(x: Real) -> Real {
    imp::exp(x)
}

pub(crate) fn ln(x: Real) -> Real {
    imp::ln(x)
}

pub(crate) fn sqrt(x: Real) -> Real {
    imp::sqrt(x)
}

pub(crate) fn powf(x: Real, y: Real) -> Real {
    imp::powf(x, y)
}

/// f64 variants for policy/geometry code that stays double precision
/// regardless of the tensor scalar type.
pub(crate) fn exp64(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn powf64(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub(crate) fn sqrt64(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn ln64(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn cos64(x: f64) -> f64 {
    libm::cos(x)
}
