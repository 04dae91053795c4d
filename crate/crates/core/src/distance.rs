//! Distances between an empirical sample and a reference law.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{domain, Result};

/// `sup_x |F_n(x) − F(x)|` over the sample points, using right limits and
/// left limits `F(x−)` approximated just below each point. Samples may be
/// `+∞` (mass escaping the reference law).
pub fn ks_distance(samples: &[f64], cdf: &dyn Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(domain("KS distance needs at least one sample"));
    }
    if samples.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY) {
        return Err(domain("samples must be real or +∞"));
    }
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = j as f64 / n;
        let (f, f_left) = if x.is_infinite() {
            (1.0, 1.0)
        } else {
            (cdf(x), cdf(x - 1e-12 * x.abs().max(1.0)))
        };
        d = d.max((upto - f).abs()).max((below - f_left).abs());
        i = j;
    }
    Ok(d)
}

/// `max_x |n^{-1} Σ e^{ix s_k} − φ(x)|` over the grid. Infinite samples
/// enter with their worst case `1/n` each, so the result bounds the
/// distance for any finite values they might stand for.
pub fn ecf_distance(samples: &[f64], phi: &dyn Fn(f64) -> Complex64, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(domain("ECF distance needs a nonempty grid"));
    }
    if samples.is_empty() {
        return Err(domain("ECF distance needs at least one sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(domain("ECF distance needs real samples"));
    }
    let n = samples.len() as f64;
    let lost = samples.iter().filter(|x| x.is_infinite()).count() as f64;
    let mut d: f64 = 0.0;
    for &x in grid {
        let ecf: Complex64 =
            samples.iter().filter(|s| s.is_finite()).map(|&s| Complex64::from_polar(1.0, x * s)).sum::<Complex64>() / n;
        d = d.max((ecf - phi(x)).norm() + lost / n);
    }
    Ok(d)
}

/// Dvoretzky–Kiefer–Wolfowitz radius: `P(KS > r) <= alpha` for `n` samples.
pub fn dkw_radius(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}
