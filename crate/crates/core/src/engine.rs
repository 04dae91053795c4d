//! Exact jump rates of the block counting process and the fixation line,
//! their generators on `{1, …, n}`, transient laws by uniformization and
//! the Siegmund duality check.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{domain, Error, Result};
use crate::measure::{CoalescentMeasure, Family};
use crate::quad::QuadOptions;
use crate::special::{ln_beta, ln_binom, ln_gamma};
use crate::urn::{joint_row, y_law, UrnCaps};

/// Largest state space accepted by [`generator_matrix`].
pub const MAX_STATES: usize = 2000;

/// `∫ u^p (1 − u)^q Λ(du)` for a Λ-type measure (Kingman atom excluded).
pub fn lambda_moment(m: &CoalescentMeasure, p: f64, q: f64) -> Result<f64> {
    match m.family() {
        Family::Empty => Ok(0.0),
        Family::LambdaBeta { a, b } => Ok((ln_beta(a + p, b + q) - ln_beta(*a, *b)).exp()),
        Family::LambdaDensity(d) if d.moment.is_some() => Ok((d.moment.as_ref().unwrap())(p, q)),
        Family::LambdaAtoms(atoms) => {
            Ok(atoms.iter().map(|&(u, w)| w * u.powf(p) * (1.0 - u).powf(q)).sum())
        }
        Family::XiAtoms(x) if m.is_lambda() => Ok(x
            .atoms
            .iter()
            .map(|at| at.mass * at.point.coords()[0].powf(p) * at.point.rest().powf(q))
            .sum()),
        Family::Mixture(parts) => {
            let mut acc = 0.0;
            for (w, part) in parts {
                acc += w * lambda_moment(part, p, q)?;
            }
            Ok(acc)
        }
        Family::XiAtoms(_) => Err(Error::MethodMismatch("Λ-moment of a Ξ-measure".into())),
        _ => {
            let g = |u: f64, v: f64| {
                let lu = if u < 0.5 { u.ln() } else { (-v).ln_1p() };
                let lv = if u < 0.5 { (-u).ln_1p() } else { v.ln() };
                let e = if p == 0.0 { 0.0 } else { p * lu } + if q == 0.0 { 0.0 } else { q * lv };
                e.exp()
            };
            m.lambda_integral(&g, 1.0, QuadOptions::with_tol(1e-300, 1e-13))
        }
    }
}

/// Adds `weight · q_{k, ·}` of the `Ξ_0`-part of `m` to `out[j − 1]`.
fn add_block_rates(m: &CoalescentMeasure, k: usize, weight: f64, out: &mut [f64], caps: UrnCaps) -> Result<()> {
    let kf = k as f64;
    match m.family() {
        Family::Empty => {}
        Family::Mixture(parts) => {
            for (w, part) in parts {
                add_block_rates(part, k, weight * w, out, caps)?;
            }
        }
        Family::XiAtoms(x) => {
            for at in &x.atoms {
                if at.point.len() == 1 {
                    let u = at.point.coords()[0];
                    let v = at.point.rest();
                    for mm in 2..=k {
                        let lr = ln_binom(kf, mm as f64) + (mm as f64 - 2.0) * u.ln() + (kf - mm as f64) * v.ln();
                        out[k - mm] += weight * at.mass * lr.exp();
                    }
                } else {
                    if k > caps.k_cap || at.point.len() > caps.d_cap {
                        return Err(Error::CapsExceeded { k, d: at.point.len(), k_cap: caps.k_cap, d_cap: caps.d_cap });
                    }
                    let law = y_law(at.point.rest(), &at.point.grouped(), k);
                    for j in 1..k {
                        out[j - 1] += weight * at.nu_mass * law[j];
                    }
                }
            }
        }
        Family::LambdaBeta { a, b } => {
            // C(k, m) B(a + m − 2, b + k − m) / B(a, b)
            let lb = ln_beta(*a, *b);
            for mm in 2..=k {
                let mf = mm as f64;
                let lr = ln_binom(kf, mf) + ln_beta(a + mf - 2.0, b + kf - mf) - lb;
                out[k - mm] += weight * lr.exp();
            }
        }
        _ => {
            for mm in 2..=k {
                let mf = mm as f64;
                let mom = lambda_moment(m, mf - 2.0, kf - mf)?;
                out[k - mm] += weight * ln_binom(kf, mf).exp() * mom;
            }
        }
    }
    Ok(())
}

/// `q_{k, j}` for `j = 1..k−1`, returned as `rates[j − 1]`.
pub fn block_rates(m: &CoalescentMeasure, k: usize) -> Result<Vec<f64>> {
    block_rates_with(m, k, UrnCaps::default())
}

pub fn block_rates_with(m: &CoalescentMeasure, k: usize, caps: UrnCaps) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(domain(format!("block rates need k >= 2, got {k}")));
    }
    let mut out = vec![0.0; k - 1];
    add_block_rates(m, k, 1.0, &mut out, caps)?;
    out[k - 2] += m.kingman_mass() * 0.5 * (k * (k - 1)) as f64;
    Ok(out)
}

/// `λ_k = Σ_j q_{k, j}`, zero for `k <= 1`.
pub fn block_total_rate(m: &CoalescentMeasure, k: usize, caps: UrnCaps) -> Result<f64> {
    if k < 2 {
        return Ok(0.0);
    }
    Ok(block_rates_with(m, k, caps)?.iter().sum())
}

/// Fixation-line rates out of state `i` up to `j_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationRates {
    pub i: usize,
    /// `rates[j − i − 1] = γ_{i, j}` for `j = i+1..=j_max`.
    pub rates: Vec<f64>,
    /// Total jump rate out of `i`; equals `λ_{i+1}` of the block process.
    pub total: f64,
    /// `Σ_{j > j_max} γ_{i, j} = total − Σ rates`.
    pub tail_bound: f64,
}

fn add_fixation_rates(
    m: &CoalescentMeasure,
    i: usize,
    j_max: usize,
    weight: f64,
    out: &mut [f64],
    caps: UrnCaps,
) -> Result<()> {
    let fi = i as f64;
    match m.family() {
        Family::Empty => {}
        Family::Mixture(parts) => {
            for (w, part) in parts {
                add_fixation_rates(part, i, j_max, weight * w, out, caps)?;
            }
        }
        Family::XiAtoms(x) => {
            for at in &x.atoms {
                if at.point.len() == 1 {
                    let u = at.point.coords()[0];
                    let v = at.point.rest();
                    for j in (i + 1)..=j_max {
                        let mf = (j - i + 1) as f64;
                        let lr = ln_binom(j as f64, mf) + (mf - 2.0) * u.ln() + fi * v.ln();
                        out[j - i - 1] += weight * at.mass * lr.exp();
                    }
                } else {
                    if j_max + 1 > caps.k_cap || at.point.len() > caps.d_cap {
                        return Err(Error::CapsExceeded {
                            k: j_max + 1,
                            d: at.point.len(),
                            k_cap: caps.k_cap,
                            d_cap: caps.d_cap,
                        });
                    }
                    for j in (i + 1)..=j_max {
                        out[j - i - 1] += weight * at.nu_mass * joint_row(&at.point, j)[i];
                    }
                }
            }
        }
        Family::LambdaBeta { a, b } => {
            let lb = ln_beta(*a, *b);
            for j in (i + 1)..=j_max {
                let mf = (j - i + 1) as f64;
                let lr = ln_binom(j as f64, mf) + ln_beta(a + mf - 2.0, b + fi) - lb;
                out[j - i - 1] += weight * lr.exp();
            }
        }
        _ => {
            for j in (i + 1)..=j_max {
                let mf = (j - i + 1) as f64;
                out[j - i - 1] += weight * ln_binom(j as f64, mf).exp() * lambda_moment(m, mf - 2.0, fi)?;
            }
        }
    }
    Ok(())
}

/// `γ_{i, j}` for `j = i+1..=j_max` with the certified tail.
pub fn fixation_rates(m: &CoalescentMeasure, i: usize, j_max: usize) -> Result<FixationRates> {
    fixation_rates_with(m, i, j_max, UrnCaps::default())
}

pub fn fixation_rates_with(m: &CoalescentMeasure, i: usize, j_max: usize, caps: UrnCaps) -> Result<FixationRates> {
    if i == 0 {
        return Err(domain("fixation line states start at 1"));
    }
    let j_max = j_max.max(i);
    let mut rates = vec![0.0; j_max - i];
    if j_max > i {
        add_fixation_rates(m, i, j_max, 1.0, &mut rates, caps)?;
        rates[0] += m.kingman_mass() * 0.5 * (i * (i + 1)) as f64;
    }
    let total = block_total_rate(m, i + 1, caps)?;
    let listed: f64 = rates.iter().sum();
    let tail_bound = (total - listed).max(0.0);
    Ok(FixationRates { i, rates, total, tail_bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Process {
    Block,
    Fixation,
}

/// Generator restricted to states `1..=n`. Block rows are exact; fixation
/// rows keep the exact total rate on the diagonal and record the part that
/// leaves `{1..n}` in `leak`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub process: Process,
    pub n: usize,
    /// `off[s − 1][·]`: block `q_{s, 1..s−1}`; fixation `γ_{s, s+1..=n}`.
    off: Vec<Vec<f64>>,
    /// Total jump rate out of each state.
    total: Vec<f64>,
    /// Fixation only: rate of jumping beyond `n`.
    leak: Vec<f64>,
}

impl GeneratorMatrix {
    /// Rate from `from` to `to` (`from != to`), or the diagonal entry.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return -self.total[from - 1];
        }
        let row = &self.off[from - 1];
        match self.process {
            Process::Block if to < from => row[to - 1],
            Process::Fixation if to > from && to <= self.n => row[to - from - 1],
            _ => 0.0,
        }
    }

    pub fn total_rate(&self, s: usize) -> f64 {
        self.total[s - 1]
    }

    pub fn leak_rate(&self, s: usize) -> f64 {
        self.leak.get(s - 1).copied().unwrap_or(0.0)
    }

    /// Nonzero entries `(row, col, rate)` including the diagonal.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for s in 1..=self.n {
            let targets: Vec<usize> = match self.process {
                Process::Block => (1..s).collect(),
                Process::Fixation => ((s + 1)..=self.n).collect(),
            };
            for t in targets {
                let r = self.rate(s, t);
                if r != 0.0 {
                    out.push((s, t, r));
                }
            }
            out.push((s, s, -self.total[s - 1]));
        }
        out
    }

    /// Row sum including the diagonal and leaked rate.
    pub fn row_sum(&self, s: usize) -> f64 {
        let off: f64 = self.off[s - 1].iter().sum();
        off + self.leak_rate(s) - self.total[s - 1]
    }

    /// `p ↦ p Q` with mass jumping beyond `n` dropped.
    fn apply_left(&self, p: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            *o = -p[s] * self.total[s];
        }
        for s in 1..=self.n {
            let ps = p[s - 1];
            if ps == 0.0 {
                continue;
            }
            let row = &self.off[s - 1];
            match self.process {
                Process::Block => {
                    for (t, r) in row.iter().enumerate() {
                        out[t] += ps * r;
                    }
                }
                Process::Fixation => {
                    for (d, r) in row.iter().enumerate() {
                        out[s + d] += ps * r;
                    }
                }
            }
        }
    }
}

pub fn generator_matrix(m: &CoalescentMeasure, n: usize, process: Process) -> Result<GeneratorMatrix> {
    generator_matrix_with(m, n, process, UrnCaps::default())
}

pub fn generator_matrix_with(
    m: &CoalescentMeasure,
    n: usize,
    process: Process,
    caps: UrnCaps,
) -> Result<GeneratorMatrix> {
    if n == 0 {
        return Err(domain("generator needs n >= 1"));
    }
    if n > MAX_STATES {
        return Err(Error::Budget(format!("{n} states exceed the limit of {MAX_STATES}")));
    }
    let mut off = Vec::with_capacity(n);
    let mut total = Vec::with_capacity(n);
    let mut leak = Vec::new();
    match process {
        Process::Block => {
            off.push(Vec::new());
            total.push(0.0);
            for k in 2..=n {
                let row = block_rates_with(m, k, caps)?;
                total.push(row.iter().sum());
                off.push(row);
            }
        }
        Process::Fixation => {
            for i in 1..=n {
                let fr = fixation_rates_with(m, i, n, caps)?;
                total.push(fr.total);
                leak.push(fr.tail_bound);
                off.push(fr.rates);
            }
        }
    }
    Ok(GeneratorMatrix { process, n, off, total, leak })
}

/// Poisson tail mass left out by uniformization.
pub const POISSON_TAIL: f64 = 1e-12;

/// Law at time `t` of the chain started in `init`, as `p[s − 1]`. For the
/// fixation line the vector sums to `1 − defect`, the defect being the mass
/// that has left `{1..n}`.
pub fn transient_distribution(q: &GeneratorMatrix, init: usize, t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("time {t} must be finite and nonnegative")));
    }
    if init == 0 || init > q.n {
        return Err(domain(format!("initial state {init} outside 1..={}", q.n)));
    }
    let mut v = vec![0.0; q.n];
    v[init - 1] = 1.0;
    let rate = q.total.iter().cloned().fold(0.0, f64::max);
    if t == 0.0 || rate == 0.0 {
        return Ok(v);
    }
    let lt = rate * t;
    let ln_lt = lt.ln();
    let mut out = vec![0.0; q.n];
    let mut tmp = vec![0.0; q.n];
    let mut cum = 0.0;
    let mut k = 0usize;
    loop {
        let w = (-lt + k as f64 * ln_lt - ln_gamma(k as f64 + 1.0)).exp();
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
        cum += w;
        if (k as f64 > lt && 1.0 - cum < POISSON_TAIL) || k > 10_000_000 {
            break;
        }
        // v ← v (I + Q / rate)
        q.apply_left(&v, &mut tmp);
        for (x, d) in v.iter_mut().zip(tmp.iter()) {
            *x += d / rate;
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        k += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub max_discrepancy: f64,
    /// Largest fixation-line mass beyond `n_max` at time `t`.
    pub max_defect: f64,
}

/// `max_{n, m <= n_max} |P(L_t^{(m)} >= n) − P(N_t^{(n)} <= m)|`.
///
/// The fixation line is monotone, so the mass that leaves `{1..n_max}`
/// sits above every `n <= n_max`; `P(L_t >= n) = 1 − Σ_{j<n} P(L_t = j)`
/// is then exact and the defect only reports how much mass left.
pub fn check_siegmund_duality(m: &CoalescentMeasure, n_max: usize, t: f64) -> Result<DualityReport> {
    let block = generator_matrix(m, n_max, Process::Block)?;
    let fix = generator_matrix(m, n_max, Process::Fixation)?;
    let mut lower = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let p = transient_distribution(&block, n, t)?;
        let mut cdf = Vec::with_capacity(n_max);
        let mut acc = 0.0;
        for x in &p {
            acc += x;
            cdf.push(acc);
        }
        lower.push(cdf);
    }
    let mut worst: f64 = 0.0;
    let mut defect: f64 = 0.0;
    for mm in 1..=n_max {
        let p = transient_distribution(&fix, mm, t)?;
        defect = defect.max(1.0 - p.iter().sum::<f64>());
        let mut below = 0.0;
        for n in 1..=n_max {
            let fix_side = 1.0 - below;
            let block_side = lower[n - 1][mm - 1];
            worst = worst.max((fix_side - block_side).abs());
            below += p[n - 1];
        }
    }
    Ok(DualityReport { max_discrepancy: worst, max_defect: defect.max(0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Multiplicity;
    use crate::rate::gamma;
    use crate::simplex::SimplexPoint;
    use crate::urn::urn_pmf;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn bolthausen_sznitman_rates() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        assert!(close(block_rates(&m, 2).unwrap()[0], 1.0, 1e-14));
        let q3 = block_rates(&m, 3).unwrap();
        assert!(close(q3[1], 1.5, 1e-14) && close(q3[0], 0.5, 1e-14));
        // λ_k = k − 1
        let total: f64 = block_rates(&m, 40).unwrap().iter().sum();
        assert!(close(total, 39.0, 1e-12));
        // γ_{i, i+m−1} = i / (m (m − 1))
        let fr = fixation_rates(&m, 5, 9).unwrap();
        for (d, r) in fr.rates.iter().enumerate() {
            let mm = (d + 2) as f64;
            assert!(close(*r, 5.0 / (mm * (mm - 1.0)), 1e-13));
        }
        assert!(close(fr.total, 5.0, 1e-12));
    }

    #[test]
    fn kingman_rates() {
        let m = CoalescentMeasure::kingman(1.0).unwrap();
        assert_eq!(block_rates(&m, 3).unwrap(), vec![0.0, 3.0]);
        let g = generator_matrix(&m, 4, Process::Fixation).unwrap();
        for i in 1..4 {
            assert_eq!(g.rate(i, i + 1), (i * (i + 1) / 2) as f64);
            for j in (i + 2)..=4 {
                assert_eq!(g.rate(i, j), 0.0);
            }
        }
    }

    #[test]
    fn rate_identity_registry() {
        let ms = [
            CoalescentMeasure::beta(1.0, 1.0).unwrap(),
            CoalescentMeasure::beta(3.0, 2.0).unwrap(),
            CoalescentMeasure::nlg(1.0, 0.5).unwrap(),
            CoalescentMeasure::log_damped_uniform(),
            CoalescentMeasure::geometric(0.5, Multiplicity::Const(1), None).unwrap(),
            CoalescentMeasure::geometric(0.5, Multiplicity::Prefix(vec![1, 2]), None).unwrap(),
            CoalescentMeasure::beta(1.0, 2.0).unwrap().with_kingman(0.7).unwrap(),
        ];
        for m in &ms {
            for k in 2..=15 {
                let q = block_rates(m, k).unwrap();
                let lhs: f64 = q.iter().enumerate().map(|(j, r)| (k - j - 1) as f64 * r).sum();
                let g = gamma(m, k as f64).unwrap();
                assert!(close(lhs, g, 1e-9), "{m:?} k={k}: {lhs} vs {g}");
            }
        }
    }

    #[test]
    fn single_urn_reduction_matches_dp() {
        let la = CoalescentMeasure::lambda_atoms(vec![(0.3, 0.5), (0.8, 0.25)]).unwrap();
        for k in 2..=10 {
            let q = block_rates(&la, k).unwrap();
            let mut dp = vec![0.0; k - 1];
            for &(u, w) in &[(0.3, 0.5), (0.8, 0.25)] {
                let law = urn_pmf(&SimplexPoint::new(vec![u]).unwrap(), k).unwrap();
                for j in 1..k {
                    dp[j - 1] += w / (u * u) * law.prob(j);
                }
            }
            for (a, b) in q.iter().zip(dp.iter()) {
                assert!((a - b).abs() < 1e-10, "k={k}");
            }
        }
    }

    #[test]
    fn xi_fixation_spot_value() {
        let p = SimplexPoint::new(vec![0.25, 0.25]).unwrap();
        let m = CoalescentMeasure::xi_atoms(vec![(p.clone(), 0.25)]).unwrap();
        let fr = fixation_rates(&m, 1, 3).unwrap();
        let joint = crate::urn::joint_urn_prob(&p, 2, 1).unwrap();
        assert!(close(fr.rates[0], 2.0 * joint, 1e-15));
    }

    #[test]
    fn generator_level_duality() {
        let ms = [
            CoalescentMeasure::bolthausen_sznitman(),
            CoalescentMeasure::beta(2.0, 1.0).unwrap().with_kingman(0.5).unwrap(),
            CoalescentMeasure::geometric(0.5, Multiplicity::Prefix(vec![1, 2]), None).unwrap(),
        ];
        for m in &ms {
            for n in 1..=10usize {
                for mm in 1..n {
                    let lhs: f64 = if n >= 2 { block_rates(m, n).unwrap()[..mm].iter().sum() } else { 0.0 };
                    let fr = fixation_rates(m, mm, n - 1).unwrap();
                    let rhs = fr.total - fr.rates.iter().sum::<f64>();
                    assert!((lhs - rhs).abs() < 1e-9, "{m:?} n={n} m={mm}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn transient_kingman_two_lines() {
        let m = CoalescentMeasure::kingman(1.0).unwrap();
        let g = generator_matrix(&m, 2, Process::Block).unwrap();
        for t in [0.0, 0.3, 2.0] {
            let p = transient_distribution(&g, 2, t).unwrap();
            assert!((p[0] - (1.0 - (-t).exp())).abs() < 1e-12);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn duality_small_cases() {
        let bs = CoalescentMeasure::bolthausen_sznitman();
        assert_eq!(check_siegmund_duality(&bs, 6, 0.0).unwrap().max_discrepancy, 0.0);
        assert!(check_siegmund_duality(&bs, 10, 0.5).unwrap().max_discrepancy <= 1e-8);
        let k = CoalescentMeasure::kingman(1.0).unwrap();
        assert!(check_siegmund_duality(&k, 10, 1.0).unwrap().max_discrepancy <= 1e-8);
    }

    #[test]
    fn block_rows_sum_to_zero() {
        let m = CoalescentMeasure::nlg(1.0, 0.5).unwrap();
        let g = generator_matrix(&m, 12, Process::Block).unwrap();
        for s in 1..=12 {
            assert!(g.row_sum(s).abs() < 1e-12 * g.total_rate(s).max(1.0));
        }
        let f = generator_matrix(&m, 12, Process::Fixation).unwrap();
        for s in 1..=12 {
            assert!(f.row_sum(s).abs() < 1e-12 * f.total_rate(s).max(1.0));
        }
    }

    #[test]
    fn budget_guard() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        assert!(matches!(generator_matrix(&m, MAX_STATES + 1, Process::Block), Err(Error::Budget(_))));
    }
}
