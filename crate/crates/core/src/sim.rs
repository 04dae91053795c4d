//! Monte Carlo paths of the block counting process `N^{(n)}` and the
//! fixation line `L^{(n)}`, and draws of the urn variable `Y(n, u)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma};

use crate::engine::{block_rates_with, fixation_rates_with, Process};
use crate::error::{domain, Error, Result};
use crate::measure::{CoalescentMeasure, Family};
use crate::scaling::{RateFunction, ScalingSolver};
use crate::simplex::SimplexPoint;
use crate::special::{binom_pmf, binom_upper_tail};
use crate::urn::UrnCaps;

/// Master seed; replicate `r` uses ChaCha8 stream `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPolicy {
    pub seed: u64,
}

impl RngPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub process: Process,
    pub n: usize,
    /// Jump times, strictly increasing.
    pub times: Vec<f64>,
    /// State after each jump.
    pub states: Vec<usize>,
    pub stream: u64,
    /// Fixation line only: the path tried to jump beyond the state cap and
    /// was stopped there.
    pub truncated: bool,
}

impl PathSample {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            self.n
        } else {
            self.states[i - 1]
        }
    }

    pub fn final_state(&self) -> usize {
        self.states.last().copied().unwrap_or(self.n)
    }
}

/// `X ~ Bin(k, s)` conditioned on `X >= 2`.
fn binomial_at_least_two<R: Rng + ?Sized>(k: usize, s: f64, rng: &mut R) -> usize {
    let mean = k as f64 * s;
    if mean > 2.0 {
        let bin = Binomial::new(k as u64, s).unwrap();
        loop {
            let x = bin.sample(rng) as usize;
            if x >= 2 {
                return x;
            }
        }
    }
    let tail = binom_upper_tail(k as u64, s, 2);
    let target = rng.random::<f64>() * tail;
    let mut acc = 0.0;
    let mut x = 2;
    while x < k {
        acc += binom_pmf(k as u64, s, x as u64);
        if acc >= target {
            return x;
        }
        x += 1;
    }
    k
}

/// Non-dust urns of a Ξ-atom with the no-collision weights `b! e_b(q)`.
#[derive(Debug, Clone)]
struct Urns {
    coords: Vec<f64>,
    s: f64,
    /// `no_coll[b]` for `b = 0..=d`.
    no_coll: Vec<f64>,
}

impl Urns {
    fn new(coords: &[f64]) -> Self {
        let s: f64 = coords.iter().sum();
        let d = coords.len();
        let mut e = vec![0.0; d + 1];
        e[0] = 1.0;
        for &c in coords {
            let q = c / s;
            for j in (1..=d).rev() {
                e[j] += e[j - 1] * q;
            }
        }
        let mut fact = 1.0;
        let mut no_coll = Vec::with_capacity(d + 1);
        for (b, eb) in e.iter().enumerate() {
            if b > 0 {
                fact *= b as f64;
            }
            no_coll.push((fact * eb).min(1.0));
        }
        Self { coords: coords.to_vec(), s, no_coll }
    }

    /// `P(Y(k, u) < k)`.
    fn collision(&self, k: usize) -> f64 {
        if k < 2 {
            return 0.0;
        }
        let d = self.coords.len();
        let kk = k as u64;
        let mut none = 0.0;
        for b in 0..=d.min(k) {
            none += binom_pmf(kk, self.s, b as u64) * self.no_coll[b];
        }
        if none < 0.5 {
            return 1.0 - none;
        }
        let mut acc = 0.0;
        for b in 2..=k {
            let pb = binom_pmf(kk, self.s, b as u64);
            let c = if b <= d { 1.0 - self.no_coll[b] } else { 1.0 };
            acc += pb * c;
            if b as f64 > k as f64 * self.s && pb < 1e-18 * acc {
                break;
            }
        }
        acc
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let v = rng.random::<f64>() * self.s;
        let mut acc = 0.0;
        for (i, &c) in self.coords.iter().enumerate() {
            acc += c;
            if v < acc {
                return i;
            }
        }
        self.coords.len() - 1
    }

    /// Throws `b` balls into `occupied`; returns the number of occupied urns,
    /// or `None` without a collision.
    fn throw<R: Rng + ?Sized>(&self, b: usize, occupied: &mut [bool], rng: &mut R) -> Option<usize> {
        occupied.iter_mut().for_each(|o| *o = false);
        let d = self.coords.len();
        if b > d {
            for _ in 0..b {
                occupied[self.pick(rng)] = true;
            }
            return Some(occupied.iter().filter(|&&o| o).count());
        }
        let mut hit = false;
        for _ in 0..b {
            let i = self.pick(rng);
            hit |= occupied[i];
            occupied[i] = true;
        }
        hit.then(|| occupied.iter().filter(|&&o| o).count())
    }
}

#[derive(Debug, Clone)]
enum Source {
    Kingman(f64),
    /// `g[k] = B(a, b + k − 1) / B(a, b)` and `λ_k` for `k <= k_max`.
    Beta { weight: f64, a: f64, b: f64, g: Vec<f64>, lambda: Vec<f64> },
    /// One Ξ- or Λ-atom with `rate[k] = ν-mass · P(Y(k, u) < k)`.
    Atom { urns: Urns, rate: Vec<f64> },
    /// NLG by thinning `C(k, 2) Λ(du)` with `u = e^{−y}`, `y ~ Gamma(ρ, α)`.
    Nlg { weight: f64, alpha: f64, rho: f64 },
    /// Exact rates recomputed at every visit.
    Generic { weight: f64, measure: CoalescentMeasure },
}

fn collect(m: &CoalescentMeasure, weight: f64, k_max: usize, out: &mut Vec<Source>) -> Result<()> {
    let a = m.own_kingman() * weight;
    if a > 0.0 {
        out.push(Source::Kingman(a));
    }
    match m.family() {
        Family::Empty => {}
        Family::Mixture(parts) => {
            for (w, part) in parts {
                collect(part, weight * w, k_max, out)?;
            }
        }
        Family::LambdaBeta { a, b } => {
            let mut g = vec![0.0; k_max + 1];
            let mut lambda = vec![0.0; k_max + 1];
            if k_max >= 1 {
                g[1] = 1.0;
            }
            for k in 1..k_max {
                g[k + 1] = g[k] * (b + k as f64 - 1.0) / (a + b + k as f64 - 1.0);
                lambda[k + 1] = lambda[k] + k as f64 * g[k];
            }
            out.push(Source::Beta { weight, a: *a, b: *b, g, lambda });
        }
        Family::LambdaAtoms(atoms) => {
            for &(u, w) in atoms {
                if u >= 1.0 {
                    return Err(Error::UnsupportedMeasure("Λ-atom at u = 1".into()));
                }
                push_atom(&[u], weight * w / (u * u), k_max, out);
            }
        }
        Family::XiAtoms(x) => {
            for at in &x.atoms {
                push_atom(at.point.coords(), weight * at.nu_mass, k_max, out);
            }
        }
        Family::LambdaNlg { alpha, rho } => out.push(Source::Nlg { weight, alpha: *alpha, rho: *rho }),
        Family::LambdaDensity(_) => {
            out.push(Source::Generic { weight, measure: CoalescentMeasure::new(0.0, m.family().clone())? })
        }
    }
    Ok(())
}

fn push_atom(coords: &[f64], nu_mass: f64, k_max: usize, out: &mut Vec<Source>) {
    let urns = Urns::new(coords);
    let rate = (0..=k_max).map(|k| nu_mass * urns.collision(k)).collect();
    out.push(Source::Atom { urns, rate });
}

fn half_k2(k: usize) -> f64 {
    0.5 * (k * k.saturating_sub(1)) as f64
}

/// `P(Bin(k, u) >= 2) / (C(k, 2) u²)`.
fn lambda_acceptance(k: usize, u: f64) -> f64 {
    (binom_upper_tail(k as u64, u, 2) / (half_k2(k) * u * u)).min(1.0)
}

/// Event sampler for both processes of a fixed measure.
#[derive(Debug, Clone)]
pub struct PathSampler {
    sources: Vec<Source>,
    k_max: usize,
    caps: UrnCaps,
}

impl PathSampler {
    /// Tabulates rates for states up to `k_max`.
    pub fn new(m: &CoalescentMeasure, k_max: usize) -> Result<Self> {
        if m.has_star_mass() {
            return Err(Error::UnsupportedMeasure("Ξ charges the star-shaped part".into()));
        }
        let k_max = k_max.max(2);
        let mut sources = Vec::new();
        collect(m, 1.0, k_max + 1, &mut sources)?;
        Ok(Self { sources, k_max: k_max + 1, caps: UrnCaps::default() })
    }

    fn source_rate(&self, src: &Source, k: usize) -> Result<f64> {
        Ok(match src {
            Source::Kingman(a) => a * half_k2(k),
            Source::Beta { weight, lambda, .. } => weight * lambda[k],
            Source::Atom { rate, .. } => rate[k],
            Source::Nlg { weight, .. } => weight * half_k2(k),
            Source::Generic { weight, measure } => {
                if k < 2 {
                    0.0
                } else {
                    weight * block_rates_with(measure, k, self.caps)?.iter().sum::<f64>()
                }
            }
        })
    }

    fn check_state(&self, k: usize) -> Result<()> {
        if k > self.k_max {
            Err(domain(format!("state {k} beyond the tabulated range {}", self.k_max)))
        } else {
            Ok(())
        }
    }

    /// Proposal rate of the block process at `k`; exact except for NLG
    /// parts, which are thinned.
    pub fn block_rate(&self, k: usize) -> Result<f64> {
        self.check_state(k)?;
        let mut r = 0.0;
        for s in &self.sources {
            r += self.source_rate(s, k)?;
        }
        Ok(r)
    }

    /// Block state after a proposal from `src`, or `None` if rejected.
    fn block_jump<R: Rng + ?Sized>(&self, src: &Source, k: usize, rng: &mut R) -> Result<Option<usize>> {
        Ok(match src {
            Source::Kingman(_) => Some(k - 1),
            Source::Beta { a, b, g, lambda, .. } => {
                let target = rng.random::<f64>() * lambda[k];
                let kf = k as f64;
                let mut term = half_k2(k) * g[k - 1];
                let mut acc = 0.0;
                let mut last = 2;
                for m in 2..=k {
                    if term > 0.0 {
                        last = m;
                    }
                    acc += term;
                    if acc >= target {
                        return Ok(Some(k - m + 1));
                    }
                    let mf = m as f64;
                    term *= (kf - mf) / (mf + 1.0) * (a + mf - 2.0) / (b + kf - mf - 1.0);
                }
                Some(k - last + 1)
            }
            Source::Atom { urns, .. } => {
                let mut occ = vec![false; urns.coords.len()];
                loop {
                    let x = binomial_at_least_two(k, urns.s, rng);
                    if let Some(o) = urns.throw(x, &mut occ, rng) {
                        break Some(k - x + o);
                    }
                }
            }
            Source::Nlg { alpha, rho, .. } => {
                let y = Gamma::new(*rho, 1.0 / alpha).unwrap().sample(rng);
                let u = (-y).exp();
                if u <= 0.0 || rng.random::<f64>() >= lambda_acceptance(k, u) {
                    None
                } else {
                    Some(k - binomial_at_least_two(k, u, rng) + 1)
                }
            }
            Source::Generic { measure, .. } => {
                let rates = block_rates_with(measure, k, self.caps)?;
                Some(pick_index(&rates, rng) + 1)
            }
        })
    }

    /// Waiting time and new state of the next block-process jump from `k`,
    /// or `None` if `k` is absorbing.
    pub fn next_block_event<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Option<(f64, usize)>> {
        if k < 2 {
            return Ok(None);
        }
        self.check_state(k)?;
        let rates: Vec<f64> = self.sources.iter().map(|s| self.source_rate(s, k)).collect::<Result<_>>()?;
        let total: f64 = rates.iter().sum();
        if !(total > 0.0) {
            return Ok(None);
        }
        let mut t = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / total;
            let src = &self.sources[pick_index(&rates, rng)];
            if let Some(j) = self.block_jump(src, k, rng)? {
                return Ok(Some((t, j)));
            }
        }
    }

    /// Total fixation-line rate out of `i` (proposal rate for NLG parts).
    pub fn fixation_rate(&self, i: usize) -> Result<f64> {
        self.block_rate(i + 1)
    }

    /// Waiting time and target of the next fixation-line jump from `i`;
    /// the target is `None` when the jump lands beyond `cap`.
    pub fn next_fixation_event<R: Rng + ?Sized>(
        &self,
        i: usize,
        cap: usize,
        rng: &mut R,
    ) -> Result<Option<(f64, Option<usize>)>> {
        self.check_fixation_state(i)?;
        let rates: Vec<f64> = self.sources.iter().map(|s| self.source_rate(s, i + 1)).collect::<Result<_>>()?;
        let total: f64 = rates.iter().sum();
        if !(total > 0.0) {
            return Ok(None);
        }
        let mut t = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / total;
            let src = &self.sources[pick_index(&rates, rng)];
            match self.fixation_jump(src, i, cap, rng)? {
                Ok(Some(j)) => return Ok(Some((t, Some(j)))),
                Ok(None) => {}
                Err(()) => return Ok(Some((t, None))),
            }
        }
    }

    /// Fixation state after an event from `src`; `Err(())` when it lands
    /// beyond `cap`, `Ok(None)` when a thinning proposal is rejected.
    fn fixation_jump<R: Rng + ?Sized>(
        &self,
        src: &Source,
        i: usize,
        cap: usize,
        rng: &mut R,
    ) -> Result<core::result::Result<Option<usize>, ()>> {
        Ok(match src {
            Source::Kingman(_) => {
                if i + 1 > cap {
                    Err(())
                } else {
                    Ok(Some(i + 1))
                }
            }
            Source::Beta { a, b, g, lambda, .. } => {
                let target = rng.random::<f64>() * lambda[i + 1];
                let fi = i as f64;
                let mut term = half_k2(i + 1) * g[i + 1];
                let mut acc = 0.0;
                let mut m = 2;
                loop {
                    let j = i + m - 1;
                    if j > cap {
                        break Err(());
                    }
                    acc += term;
                    if acc >= target {
                        break Ok(Some(j));
                    }
                    let mf = m as f64;
                    term *= (fi + mf) / (mf + 1.0) * (a + mf - 2.0) / (a + b + fi + mf - 2.0);
                    m += 1;
                }
            }
            Source::Atom { urns, .. } => {
                let mut occ = vec![false; urns.coords.len()];
                let first = i + 1;
                let (x, occupied) = loop {
                    let x = binomial_at_least_two(first, urns.s, rng);
                    if let Some(o) = urns.throw(x, &mut occ, rng) {
                        break (x, o);
                    }
                };
                let mut y = first - x + occupied;
                let mut balls = first;
                // throw until Y reaches i + 1; the last ball is not counted
                while y < first {
                    if balls > cap {
                        return Ok(Err(()));
                    }
                    balls += 1;
                    if rng.random::<f64>() >= urns.s {
                        y += 1;
                    } else {
                        let c = urns.pick(rng);
                        if !occ[c] {
                            occ[c] = true;
                            y += 1;
                        }
                    }
                }
                Ok(Some(balls - 1))
            }
            Source::Nlg { alpha, rho, .. } => {
                let y = Gamma::new(*rho, 1.0 / alpha).unwrap().sample(rng);
                let u = (-y).exp();
                if u <= 0.0 || rng.random::<f64>() >= lambda_acceptance(i + 1, u) {
                    Ok(None)
                } else {
                    // m − 2 further marked balls before the i-th unmarked one
                    let mut marked = binomial_at_least_two(i + 1, u, rng);
                    let mut unmarked = i + 1 - marked;
                    while unmarked < i {
                        if i + marked > cap + 1 {
                            return Ok(Err(()));
                        }
                        if rng.random::<f64>() < u {
                            marked += 1;
                        } else {
                            unmarked += 1;
                        }
                    }
                    let j = i + marked - 1;
                    if j > cap {
                        Err(())
                    } else {
                        Ok(Some(j))
                    }
                }
            }
            Source::Generic { measure, .. } => {
                let fr = fixation_rates_with(measure, i, cap, self.caps)?;
                let v = rng.random::<f64>() * fr.total;
                let mut acc = 0.0;
                let mut out = Err(());
                for (idx, r) in fr.rates.iter().enumerate() {
                    acc += r;
                    if v < acc {
                        out = Ok(Some(i + 1 + idx));
                        break;
                    }
                }
                out
            }
        })
    }

    fn check_fixation_state(&self, i: usize) -> Result<()> {
        if i + 1 > self.k_max {
            Err(domain(format!("state {i} beyond the tabulated range {}", self.k_max - 1)))
        } else {
            Ok(())
        }
    }
}

fn pick_index<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    let v = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in w.iter().enumerate() {
        if x > 0.0 {
            last = i;
        }
        acc += x;
        if v < acc {
            return i;
        }
    }
    last
}

/// Block counting path from `n` on `[0, t_end]`.
pub fn sample_block_path<R: Rng + ?Sized>(
    sampler: &PathSampler,
    n: usize,
    t_end: f64,
    rng: &mut R,
    stream: u64,
) -> Result<PathSample> {
    if n < 1 {
        return Err(domain("block counting process needs n >= 1"));
    }
    if !(t_end >= 0.0) {
        return Err(domain(format!("end time {t_end} must be nonnegative")));
    }
    let mut path = PathSample { process: Process::Block, n, times: Vec::new(), states: Vec::new(), stream, truncated: false };
    let (mut t, mut k) = (0.0, n);
    while let Some((dt, j)) = sampler.next_block_event(k, rng)? {
        t += dt;
        if t > t_end {
            break;
        }
        k = j;
        path.times.push(t);
        path.states.push(k);
    }
    Ok(path)
}

/// Fixation line from `n` on `[0, t_end]`, stopped and flagged if it would
/// jump beyond `state_cap`.
pub fn sample_fixation_path<R: Rng + ?Sized>(
    sampler: &PathSampler,
    n: usize,
    t_end: f64,
    rng: &mut R,
    state_cap: usize,
    stream: u64,
) -> Result<PathSample> {
    if n < 1 {
        return Err(domain("fixation line needs n >= 1"));
    }
    if state_cap < n {
        return Err(domain(format!("state cap {state_cap} below the initial state {n}")));
    }
    if !(t_end >= 0.0) {
        return Err(domain(format!("end time {t_end} must be nonnegative")));
    }
    let mut path = PathSample { process: Process::Fixation, n, times: Vec::new(), states: Vec::new(), stream, truncated: false };
    let (mut t, mut i) = (0.0, n);
    while let Some((dt, j)) = sampler.next_fixation_event(i, state_cap, rng)? {
        t += dt;
        if t > t_end {
            break;
        }
        match j {
            Some(j) => {
                i = j;
                path.times.push(t);
                path.states.push(i);
            }
            None => {
                path.truncated = true;
                break;
            }
        }
    }
    Ok(path)
}

/// Moments of `Y(n, u) / n` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UrnMoments {
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    /// `E[(Y/n − (1 − |u|))²]` and its standard error.
    pub dev_rest: f64,
    pub dev_rest_se: f64,
    /// `E[(Y/n − 1)²]` and its standard error.
    pub dev_one: f64,
    pub dev_one_se: f64,
}

/// One draw of `Y(n, u)`.
pub fn draw_urn_y<R: Rng + ?Sized>(u: &SimplexPoint, n: usize, rng: &mut R) -> usize {
    if u.is_origin() || n == 0 {
        return n;
    }
    let x0 = Binomial::new(n as u64, u.rest().clamp(0.0, 1.0)).unwrap().sample(rng) as usize;
    let mut left = n - x0;
    let mut mass = u.sum_abs();
    let mut occupied = 0;
    for &c in u.coords() {
        if left == 0 {
            break;
        }
        let p = (c / mass).clamp(0.0, 1.0);
        let b = Binomial::new(left as u64, p).unwrap().sample(rng) as usize;
        if b > 0 {
            occupied += 1;
        }
        left -= b;
        mass -= c;
    }
    x0 + occupied
}

pub fn sample_urn_y<R: Rng + ?Sized>(u: &SimplexPoint, n: usize, rng: &mut R, reps: usize) -> Result<UrnMoments> {
    if n == 0 || reps < 2 {
        return Err(domain("urn sampling needs n >= 1 and reps >= 2"));
    }
    let nf = n as f64;
    let rest = u.rest();
    let (mut s1, mut s2) = (0.0, 0.0);
    let (mut a1, mut a2, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..reps {
        let y = draw_urn_y(u, n, rng) as f64 / nf;
        s1 += y;
        s2 += y * y;
        let da = (y - rest).powi(2);
        let db = (y - 1.0).powi(2);
        a1 += da;
        a2 += da * da;
        b1 += db;
        b2 += db * db;
    }
    let r = reps as f64;
    let se = |m1: f64, m2: f64| ((m2 / r - (m1 / r).powi(2)).max(0.0) / (r - 1.0)).sqrt();
    let mean = s1 / r;
    Ok(UrnMoments {
        mean,
        mean_se: se(s1, s2),
        var: (s2 / r - mean * mean).max(0.0) * r / (r - 1.0),
        dev_rest: a1 / r,
        dev_rest_se: se(a1, a2),
        dev_one: b1 / r,
        dev_one_se: se(b1, b2),
    })
}

/// `log N_t^{(n)} − log v(n, t)` for replicates `first..first + reps`.
pub fn empirical_scaled_law<M: RateFunction + ?Sized>(
    sampler: &PathSampler,
    n: usize,
    t: f64,
    reps: core::ops::Range<u64>,
    policy: &RngPolicy,
    scaler: &ScalingSolver<'_, M>,
) -> Result<Vec<(f64, usize)>> {
    let v = scaler.v_scale(n as f64, t)?;
    let lv = v.ln();
    reps.map(|r| {
        let mut rng = policy.stream(r);
        let p = sample_block_path(sampler, n, t, &mut rng, r)?;
        let k = p.state_at(t);
        Ok(((k as f64).ln() - lv, k))
    })
    .collect()
}

/// `log L_t^{(n)} − log w(n, t)`, `+∞` for paths stopped at the cap.
pub fn empirical_scaled_fixation<M: RateFunction + ?Sized>(
    sampler: &PathSampler,
    n: usize,
    t: f64,
    state_cap: usize,
    reps: core::ops::Range<u64>,
    policy: &RngPolicy,
    scaler: &ScalingSolver<'_, M>,
) -> Result<Vec<(f64, usize)>> {
    let w = scaler.w_scale(n as f64, t)?;
    let lw = w.ln();
    reps.map(|r| {
        let mut rng = policy.stream(r);
        let p = sample_fixation_path(sampler, n, t, &mut rng, state_cap, r)?;
        let l = p.state_at(t);
        Ok((if p.truncated { f64::INFINITY } else { (l as f64).ln() - lw }, l))
    })
    .collect()
}
