//! Gamma-family special functions and cancellation-free kernels.
//!
//! Digamma and its first two derivatives use upward recurrence to move the
//! argument past [`SHIFT`] followed by the Bernoulli asymptotic series. The
//! same scheme is used for complex arguments with positive real part, which
//! is what the characteristic exponent of beta-type measures needs.

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

const SHIFT: f64 = 15.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ(y + a) − ln Γ(y)` without cancellation for large `y`.
pub fn ln_gamma_ratio(y: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if y < 30.0 || y + a < 30.0 {
        return ln_gamma(y + a) - ln_gamma(y);
    }
    let z = y + a;
    (y - 0.5) * (a / y).ln_1p() + a * z.ln() - a + stirling_tail(z) - stirling_tail(y)
}

fn stirling_tail(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0))))
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    if a > b {
        return ln_beta(b, a);
    }
    // a <= b: large b goes through the ratio to avoid cancelling ~b ln b terms.
    ln_gamma(a) - ln_gamma_ratio(b, a)
}

/// `ln binom(n, k)` for real `n >= k >= 0`.
pub fn ln_binom(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Digamma `Ψ(x)` for `x > 0`.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < SHIFT {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0 - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0 - r2 / 12.0))))));
    acc + x.ln() - 0.5 * r - series
}

/// `Ψ(y + a) − Ψ(y)` without cancellation for large `y`.
pub fn digamma_diff(y: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if y < 30.0 || y + a < 30.0 {
        return digamma(y + a) - digamma(y);
    }
    let z = y + a;
    let tail = |w: f64| {
        let r2 = 1.0 / (w * w);
        r2 * (1.0 / 12.0 - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 - r2 / 240.0)))
    };
    (a / y).ln_1p() + 0.5 * a / (y * z) - (tail(z) - tail(y))
}

/// Trigamma `Ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < SHIFT {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = 1.0 / 6.0
        - r2 * (1.0 / 30.0
            - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0 - r2 * (691.0 / 2730.0 - r2 * 7.0 / 6.0)))));
    acc + r + 0.5 * r2 + r2 * r * series
}

/// Tetragamma `Ψ''(x)` for `x > 0`.
pub fn tetragamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < SHIFT {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = 0.5
        - r2 * (1.0 / 6.0
            - r2 * (1.0 / 6.0 - r2 * (3.0 / 10.0 - r2 * (5.0 / 6.0 - r2 * (691.0 / 210.0)))));
    acc - (r2 + r2 * r + r2 * r2 * series)
}

/// Digamma for complex `z` with `Re z > 0`.
pub fn digamma_c(z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut z = z;
    while z.re < SHIFT || z.norm() < SHIFT {
        acc -= z.inv();
        z += 1.0;
    }
    let r = z.inv();
    let r2 = r * r;
    let series = r2
        * (Complex64::from(1.0 / 12.0)
            - r2 * (Complex64::from(1.0 / 120.0)
                - r2 * (Complex64::from(1.0 / 252.0)
                    - r2 * (Complex64::from(1.0 / 240.0) - r2 * (1.0 / 132.0)))));
    acc + z.ln() - r * 0.5 - series
}

/// Principal-branch `ln Γ(z)` for complex `z` with `Re z > 0`.
pub fn ln_gamma_c(z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut z = z;
    while z.re < SHIFT || z.norm() < SHIFT {
        acc -= z.ln();
        z += 1.0;
    }
    let r = z.inv();
    let r2 = r * r;
    let tail = r
        * (Complex64::from(1.0 / 12.0)
            - r2 * (Complex64::from(1.0 / 360.0)
                - r2 * (Complex64::from(1.0 / 1260.0) - r2 * (1.0 / 1680.0))));
    acc + (z - 0.5) * z.ln() - z + HALF_LN_2PI + tail
}

/// `e^y − 1 − y`, accurate for small `|y|`.
pub fn expm1_minus_id(y: f64) -> f64 {
    if y.abs() < 0.5 {
        // Horner on y^2/2 (1 + y/3 (1 + y/4 (...)))
        let mut s = 1.0;
        for k in (3..=22).rev() {
            s = 1.0 + s * y / k as f64;
        }
        0.5 * y * y * s
    } else {
        y.exp_m1() - y
    }
}

/// `ln(1 − u) + u`, accurate for small `u`.
pub fn ln1m_plus_id(u: f64) -> f64 {
    if u.abs() < 0.25 {
        // −Σ_{k≥2} u^k / k
        let mut term = u * u;
        let mut s = 0.0;
        let mut k = 2.0;
        while term.abs() > 1e-18 * s.abs().max(f64::MIN_POSITIVE) && k < 80.0 {
            s += term / k;
            term *= u;
            k += 1.0;
        }
        -s
    } else {
        (-u).ln_1p() + u
    }
}

/// `(1 − u)^x − 1 + x u`, the per-coordinate integrand of the rate function.
pub fn rate_kernel(u: f64, x: f64) -> f64 {
    if u <= 0.0 || x == 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return x - 1.0;
    }
    let l = (-u).ln_1p();
    let y = x * l;
    if y.abs() < 0.5 {
        expm1_minus_id(y) + x * ln1m_plus_id(u)
    } else {
        y.exp_m1() + x * u
    }
}

/// `(1 − u)^x ln(1 − u) + u`, the integrand of the first derivative.
pub fn rate_kernel_d1(u: f64, x: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let l = (-u).ln_1p();
    (x * l).exp_m1() * l + ln1m_plus_id(u)
}

/// `(1 − u)^x (ln(1 − u))^k`, the integrand of derivatives of order `k >= 2`.
pub fn rate_kernel_dk(u: f64, x: f64, k: i32) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let l = (-u).ln_1p();
    (x * l).exp() * l.powi(k)
}

/// `P(Bin(n, p) = k)` evaluated in log space.
pub fn binom_pmf(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (n, kf) = (n as f64, k as f64);
    (ln_binom(n, kf) + kf * p.ln() + (n - kf) * (-p).ln_1p()).exp()
}

/// `P(Bin(n, p) >= k)` without `1 − CDF` cancellation in the far tail.
pub fn binom_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    let mean = n as f64 * p;
    if (k as f64) <= mean {
        let lower: f64 = (0..k).map(|j| binom_pmf(n, p, j)).sum();
        return (1.0 - lower).max(0.0);
    }
    // Terms decrease geometrically past the mean.
    let mut term = binom_pmf(n, p, k);
    let mut sum = term;
    let ratio = p / (1.0 - p);
    let mut j = k;
    while j < n && term > 1e-18 * sum {
        term *= (n - j) as f64 / (j + 1) as f64 * ratio;
        sum += term;
        j += 1;
    }
    sum.min(1.0)
}
