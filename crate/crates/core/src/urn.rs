//! Exact law of the urn variable `Y(k, u)`: `k` balls thrown into the dust
//! urn (probability `1 − |u|`) and urns of probabilities `u_1, u_2, …`;
//! `Y` counts balls in the dust urn plus occupied non-dust urns.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::simplex::SimplexPoint;
use crate::special::binom_pmf;

/// Size limits of the exact dynamic program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UrnCaps {
    pub k_cap: usize,
    pub d_cap: usize,
}

impl Default for UrnCaps {
    fn default() -> Self {
        Self { k_cap: 25, d_cap: 12 }
    }
}

impl UrnCaps {
    fn check(&self, k: usize, d: usize) -> Result<()> {
        if k > self.k_cap || d > self.d_cap {
            Err(Error::CapsExceeded { k, d, k_cap: self.k_cap, d_cap: self.d_cap })
        } else {
            Ok(())
        }
    }
}

/// Law of `Y(k, u)` on `{1, …, k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnLaw {
    pub point: SimplexPoint,
    pub k: usize,
    /// `pmf[y − 1] = P(Y = y)`.
    pub pmf: Vec<f64>,
}

impl UrnLaw {
    pub fn prob(&self, y: usize) -> f64 {
        if y == 0 || y > self.k {
            0.0
        } else {
            self.pmf[y - 1]
        }
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }

    /// `E[g(Y)]`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.pmf.iter().enumerate().map(|(i, p)| g((i + 1) as f64) * p).sum()
    }
}

pub fn urn_pmf(u: &SimplexPoint, k: usize) -> Result<UrnLaw> {
    urn_pmf_with(u, k, UrnCaps::default())
}

pub fn urn_pmf_with(u: &SimplexPoint, k: usize, caps: UrnCaps) -> Result<UrnLaw> {
    if k == 0 {
        return Err(crate::error::domain("urn needs at least one ball"));
    }
    caps.check(k, u.len())?;
    let law = y_law(u.rest(), &u.grouped(), k);
    Ok(UrnLaw { point: u.clone(), k, pmf: law[1..].to_vec() })
}

/// `P(Y(j, u) = i, Y(j + 1, u) = i + 1)`.
pub fn joint_urn_prob(u: &SimplexPoint, j: usize, i: usize) -> Result<f64> {
    joint_urn_prob_with(u, j, i, UrnCaps::default())
}

pub fn joint_urn_prob_with(u: &SimplexPoint, j: usize, i: usize, caps: UrnCaps) -> Result<f64> {
    caps.check(j + 1, u.len())?;
    if i == 0 || i > j {
        return Ok(0.0);
    }
    Ok(joint_row(u, j)[i])
}

/// `r[i] = P(Y(j) = i, Y(j + 1) = i + 1)` for `i = 0..=j`.
///
/// Ball `j + 1` opens a new class if it lands in the dust urn, or in a
/// non-dust urn `l` missed by the first `j` balls; on that event the first
/// `j` balls are thrown into the remaining urns renormalised by `1 − u_l`.
pub(crate) fn joint_row(u: &SimplexPoint, j: usize) -> Vec<f64> {
    let rest = u.rest();
    let groups = u.grouped();
    let base = y_law(rest, &groups, j);
    let mut out: Vec<f64> = base.iter().map(|p| rest * p).collect();
    for (gi, &(v, mult)) in groups.iter().enumerate() {
        let scale = 1.0 / (1.0 - v);
        let mut reduced: Vec<(f64, usize)> = Vec::with_capacity(groups.len());
        for (gj, &(w, m)) in groups.iter().enumerate() {
            let m = if gi == gj { m - 1 } else { m };
            if m > 0 {
                reduced.push((w * scale, m));
            }
        }
        let reduced_rest = rest * scale;
        let law = y_law(reduced_rest, &reduced, j);
        let weight = mult as f64 * v * (1.0 - v).powi(j as i32);
        for (o, p) in out.iter_mut().zip(law.iter()) {
            *o += weight * p;
        }
    }
    out
}

/// Law of `Y` for `k` balls as a vector indexed by `y = 0..=k`.
pub(crate) fn y_law(rest: f64, groups: &[(f64, usize)], k: usize) -> Vec<f64> {
    // state[r * (k + 1) + c]: r balls still to place, Y = c so far
    let w = k + 1;
    let mut state = vec![0.0; w * w];
    let total_u: f64 = groups.iter().map(|&(v, m)| v * m as f64).sum();
    if groups.is_empty() {
        let mut out = vec![0.0; w];
        out[k] = 1.0;
        return out;
    }
    let p_nonzero = (total_u / (total_u + rest)).min(1.0);
    for x0 in 0..=k {
        state[(k - x0) * w + x0] = binom_pmf(k as u64, 1.0 - p_nonzero, x0 as u64);
    }
    // suffix sums of group probabilities
    let mut suffix = vec![0.0; groups.len() + 1];
    for g in (0..groups.len()).rev() {
        suffix[g] = suffix[g + 1] + groups[g].0 * groups[g].1 as f64;
    }
    for (g, &(v, mult)) in groups.iter().enumerate() {
        let share = if g + 1 == groups.len() { 1.0 } else { v * mult as f64 / suffix[g] };
        let occ = occupancy_table(mult, k);
        let mut next = vec![0.0; w * w];
        for r in 0..=k {
            for c in 0..=k {
                let p = state[r * w + c];
                if p == 0.0 {
                    continue;
                }
                for b in 0..=r {
                    let pb = binom_pmf(r as u64, share, b as u64);
                    if pb == 0.0 {
                        continue;
                    }
                    for (o, po) in occ[b].iter().enumerate() {
                        if *po > 0.0 && c + o <= k {
                            next[(r - b) * w + c + o] += p * pb * po;
                        }
                    }
                }
            }
        }
        state = next;
    }
    state[..w].to_vec()
}

/// `occ[b][o]`: probability that `b` balls in `g` equal urns occupy `o`.
fn occupancy_table(g: usize, k: usize) -> Vec<Vec<f64>> {
    let mut table = Vec::with_capacity(k + 1);
    let mut row = vec![1.0];
    table.push(row.clone());
    let gf = g as f64;
    for _ in 0..k {
        let mut next = vec![0.0; (row.len() + 1).min(g + 1)];
        for (o, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            next[o] += p * o as f64 / gf;
            if o < g {
                next[o + 1] += p * (g - o) as f64 / gf;
            }
        }
        row = next;
        table.push(row.clone());
    }
    table
}

/// `P(Y(k, u) < k)`: some two balls share a non-dust urn. Computed as
/// `Σ_b P(B = b) c_b` with `B ~ Bin(k, |u|)` balls in non-dust urns and
/// `c_b` the birthday collision probability, so it never cancels against 1.
pub fn collision_prob(u: &SimplexPoint, k: usize) -> f64 {
    let s = u.sum_abs();
    if k < 2 || s == 0.0 {
        return 0.0;
    }
    let q: Vec<f64> = u.coords().iter().map(|c| c / s).collect();
    let coll = birthday_collisions(&q, k);
    let mut acc = 0.0;
    for b in 2..=k {
        let pb = binom_pmf(k as u64, s, b as u64);
        acc += pb * coll[b];
        if b as f64 > k as f64 * s && pb < 1e-18 * acc {
            break;
        }
    }
    acc
}

/// `c_b` for `b = 0..=k` given normalised urn probabilities `q`.
pub(crate) fn birthday_collisions(q: &[f64], k: usize) -> Vec<f64> {
    let d = q.len();
    let mut c = vec![1.0; k + 1];
    c[0] = 0.0;
    if k >= 1 {
        c[1] = 0.0;
    }
    let all_equal = q.iter().all(|&x| x == q[0]);
    if all_equal {
        // 1 − Π_{i<b} (1 − i/d), accumulated as Σ of first-collision probabilities
        let mut distinct = 1.0;
        let mut coll = 0.0;
        for b in 2..=k {
            let i = (b - 1) as f64;
            let hit = distinct * (i / d as f64).min(1.0);
            coll += hit;
            distinct -= hit;
            c[b] = coll.min(1.0);
        }
        return c;
    }
    // P(no collision among b) = b! e_b(q)
    let mut e = vec![0.0; d.min(k) + 1];
    e[0] = 1.0;
    for &x in q {
        for j in (1..e.len()).rev() {
            e[j] += e[j - 1] * x;
        }
    }
    let mut fact = 1.0;
    for b in 2..=k {
        fact *= b as f64;
        let distinct = if b < e.len() { fact * e[b] } else { 0.0 };
        c[b] = (1.0 - distinct).clamp(0.0, 1.0);
    }
    c
}
