//! Points of the ordered simplex with finitely many positive coordinates.

use alloc::vec::Vec;

use crate::error::{domain, Result};

/// A point `u = (u_1 ≥ u_2 ≥ … > 0)` of the simplex. The origin is the
/// empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
    sum_abs: f64,
    sum_sq: f64,
}

impl SimplexPoint {
    /// Builds a point from arbitrary-order positive coordinates.
    pub fn new(mut coords: Vec<f64>) -> Result<Self> {
        for &c in &coords {
            if !(c > 0.0 && c <= 1.0) {
                return Err(domain(alloc::format!("simplex coordinate {c} not in (0, 1]")));
            }
        }
        coords.sort_by(|a, b| b.total_cmp(a));
        let (sum_abs, sum_sq) = sums(&coords);
        if sum_abs > 1.0 + 1e-12 {
            return Err(domain(alloc::format!("coordinates sum to {sum_abs} > 1")));
        }
        Ok(Self { coords, sum_abs, sum_sq })
    }

    pub fn origin() -> Self {
        Self { coords: Vec::new(), sum_abs: 0.0, sum_sq: 0.0 }
    }

    /// `k` equal coordinates of size `p`.
    pub fn uniform(p: f64, k: usize) -> Result<Self> {
        Self::new(alloc::vec![p; k])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `|u| = Σ u_i`.
    pub fn sum_abs(&self) -> f64 {
        self.sum_abs
    }

    /// `(u, u) = Σ u_i²`.
    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn is_origin(&self) -> bool {
        self.coords.is_empty()
    }

    /// Whether the point lies in `Δ* = {|u| = 1}`.
    pub fn is_star(&self) -> bool {
        self.sum_abs >= 1.0
    }

    /// `1 − |u|`, the probability of the dust urn.
    pub fn rest(&self) -> f64 {
        (1.0 - self.sum_abs).max(0.0)
    }

    /// Distinct coordinate values with multiplicities, in decreasing order.
    pub fn grouped(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &c in &self.coords {
            match out.last_mut() {
                Some((v, n)) if *v == c => *n += 1,
                _ => out.push((c, 1)),
            }
        }
        out
    }

    /// Recompute the cached sums and compare.
    pub fn cache_consistent(&self) -> bool {
        let (a, s) = sums(&self.coords);
        (a - self.sum_abs).abs() <= 1e-15 && (s - self.sum_sq).abs() <= 1e-15
    }
}

fn sums(coords: &[f64]) -> (f64, f64) {
    coords.iter().fold((0.0, 0.0), |(a, s), &c| (a + c, s + c * c))
}
