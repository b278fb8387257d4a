//! Float helpers; `core` has no transcendental functions.

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// `x * ln(x / y)` with `0 * ln(0 / y) = 0` and `x > 0, y = 0` giving `+inf`.
#[inline]
pub(crate) fn xlogxy(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::INFINITY
    } else {
        x * ln(x / y)
    }
}
