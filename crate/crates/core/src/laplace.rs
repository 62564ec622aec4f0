//! Closed-form Laplace transform of g and Gaver-Stehfest real-axis
//! inversion, the MC-free route to the density of g.

/// Cameron-Martin closed form E[exp(-lambda g)] = cosh(sqrt(lambda))^(-n/2).
pub fn laplace_oracle(lambda: f64, dim: usize) -> f64 {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    lambda.sqrt().cosh().powf(-(dim as f64) / 2.0)
}

/// Stehfest coefficients V_1..V_order for an even order.
pub fn stehfest_coefficients(order: usize) -> Vec<f64> {
    assert!(order >= 2 && order % 2 == 0, "Stehfest order must be even");
    let half = order / 2;
    let fact = |m: usize| -> f64 { (1..=m).map(|v| v as f64).product::<f64>().max(1.0) };
    let mut coeffs = Vec::with_capacity(order);
    for k in 1..=order {
        let mut sum = 0.0;
        let lo = k.div_ceil(2);
        let hi = k.min(half);
        for j in lo..=hi {
            sum += (j as f64).powi(half as i32) * fact(2 * j)
                / (fact(half - j) * fact(j) * fact(j - 1) * fact(k - j) * fact(2 * j - k));
        }
        let sign = if (k + half) % 2 == 0 { 1.0 } else { -1.0 };
        coeffs.push(sign * sum);
    }
    coeffs
}

/// Gaver-Stehfest inversion of F at abscissa t > 0.
pub fn stehfest_invert(transform: impl Fn(f64) -> f64, t: f64, order: usize) -> f64 {
    assert!(t > 0.0);
    let coeffs = stehfest_coefficients(order);
    let ln2_t = std::f64::consts::LN_2 / t;
    let mut acc = 0.0;
    for (k, v) in coeffs.iter().enumerate() {
        acc += v * transform((k as f64 + 1.0) * ln2_t);
    }
    acc * ln2_t
}

/// Density of g at r by inverting the closed-form transform. Returns the
/// value together with an ill-conditioning flag: orders `order - 2` and
/// `order + 2` must agree within 1% relative, otherwise the point is
/// flagged.
pub fn invert_density_at(r: f64, dim: usize, order: usize) -> (f64, bool) {
    let f = |lambda: f64| laplace_oracle(lambda, dim);
    let value = stehfest_invert(f, r, order);
    let lo = stehfest_invert(f, r, order - 2);
    let hi = stehfest_invert(f, r, order + 2);
    let scale = value.abs().max(1e-300);
    let flagged = ((lo - value).abs() / scale > 0.01) || ((hi - value).abs() / scale > 0.01);
    (value, flagged)
}

pub const DEFAULT_STEHFEST_ORDER: usize = 12;
