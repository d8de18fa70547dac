//! Scalar math routed through `libm` so the crate stays `no_std` and the
//! numbers are identical on every target.

#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline(always)]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline(always)]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline(always)]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline(always)]
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline(always)]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline(always)]
pub(crate) fn hypot2(a: f64, b: f64) -> f64 {
    a * a + b * b
}
