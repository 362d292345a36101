//! Polygamma functions of order 0, 1 and 2 for positive real arguments.
//!
//! All three shift the argument upward with the recurrence
//! ψ⁽ⁿ⁾(x) = ψ⁽ⁿ⁾(x+1) − (−1)ⁿ n!/xⁿ⁺¹ until x ≥ 10 and then sum the
//! Bernoulli asymptotic series, which at that point is accurate to well
//! below 1e−14 relative.

/// Bernoulli numbers B₂, B₄, …, B₁₆.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

const SHIFT_THRESHOLD: f64 = 10.0;

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0. Returns NaN otherwise.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc -= 1.0 / z;
        z += 1.0;
    }
    // ψ(z) ~ ln z − 1/(2z) − Σ B₂ₖ / (2k z²ᵏ)
    let inv2 = 1.0 / (z * z);
    let mut pow = inv2;
    let mut series = 0.0;
    for (k, b) in BERNOULLI.iter().enumerate() {
        series += b / (2.0 * (k + 1) as f64) * pow;
        pow *= inv2;
    }
    acc + z.ln() - 0.5 / z - series
}

/// Trigamma ψ′(x) for x > 0. Strictly decreasing from +∞ to 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    // ψ′(z) ~ 1/z + 1/(2z²) + Σ B₂ₖ / z²ᵏ⁺¹
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut pow = inv2 * inv;
    let mut series = 0.0;
    for b in BERNOULLI {
        series += b * pow;
        pow *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}

/// Tetragamma ψ″(x) for x > 0. Negative everywhere.
pub fn tetragamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc -= 2.0 / (z * z * z);
        z += 1.0;
    }
    // ψ″(z) ~ −1/z² − 1/z³ − Σ (2k+1) B₂ₖ / z²ᵏ⁺²
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut pow = inv2 * inv2;
    let mut series = 0.0;
    for (k, b) in BERNOULLI.iter().enumerate() {
        series += (2 * k + 3) as f64 * b * pow;
        pow *= inv2;
    }
    acc - inv2 - inv2 * inv - series
}
