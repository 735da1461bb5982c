//! Helpers for angle-valued observation coordinates.

use std::f64::consts::PI;

/// Wraps `x` into `(-period/2, period/2]`.
pub fn wrap_period(x: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    let mut y = (x + half).rem_euclid(period) - half;
    if y <= -half {
        y += period;
    }
    y
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    wrap_period(x, 2.0 * PI)
}

/// Circular mean of values living on a circle of circumference `period`,
/// reported in `(-period/2, period/2]`.
pub fn circular_mean<I: IntoIterator<Item = f64>>(values: I, period: f64) -> f64 {
    let scale = 2.0 * PI / period;
    let (s, c) = values
        .into_iter()
        .fold((0.0, 0.0), |(s, c), v| (s + (v * scale).sin(), c + (v * scale).cos()));
    wrap_period(s.atan2(c) / scale, period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn mean_across_branch_cut() {
        let m = circular_mean([PI - 0.1, -PI + 0.1], 2.0 * PI);
        assert_relative_eq!(m.abs(), PI, epsilon = 1e-12);
    }
}
