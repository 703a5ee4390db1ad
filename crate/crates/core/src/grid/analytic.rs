/// Position `x` of the double-integrator switching curve at velocity `y`.
pub fn double_integrator_switching_curve(y: f64) -> f64 {
    -0.5 * y * y.abs()
}

/// Minimum time to bring the double integrator with `|u| <= 1` from `(x, y)`
/// to rest at the origin.
pub fn double_integrator_min_time(x: f64, y: f64) -> f64 {
    let s = x - double_integrator_switching_curve(y);
    if s > 0.0 {
        y + 2.0 * (0.5 * y * y + x).sqrt()
    } else if s < 0.0 {
        -y + 2.0 * (0.5 * y * y - x).sqrt()
    } else {
        y.abs()
    }
}
