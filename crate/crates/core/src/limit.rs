//! The Ornstein–Uhlenbeck type limit `dX = −κX dt + dZ`, where `Z` is the
//! Lévy process with exponent
//! `ψ(x) = ∫ ((1 − |u|)^{ix} − 1 + ix|u|) ν(du)`, and its law at time `t`.

use alloc::format;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{domain, Error, Result};
use crate::measure::{CoalescentMeasure, Family, NuPoint};
use crate::quad::{integrate, kronrod21_nodes, QuadOptions};
use crate::special::{digamma_c, ln1m_plus_id, ln_beta, ln_gamma_c};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `(e^{iy} − 1 − iy)` without cancellation for small `y`.
fn cexpm1_minus_i(y: f64) -> Complex64 {
    if y.abs() < 0.5 {
        let y2 = y * y;
        // cos y − 1 and sin y − y by their Taylor series
        let mut re = 0.0;
        let mut im = 0.0;
        let mut term_re = -0.5 * y2;
        let mut term_im = -y * y2 / 6.0;
        for k in 1..12 {
            re += term_re;
            im += term_im;
            let k2 = (2 * k) as f64;
            term_re *= -y2 / ((k2 + 1.0) * (k2 + 2.0));
            term_im *= -y2 / ((k2 + 2.0) * (k2 + 3.0));
        }
        Complex64::new(re, im)
    } else {
        Complex64::new(y.cos() - 1.0, y.sin() - y)
    }
}

/// `log(1 − |u|) + |u|`.
fn log1m_plus(p: &NuPoint) -> f64 {
    let s = p.sum_abs();
    if s < 0.25 {
        ln1m_plus_id(s)
    } else {
        p.ln_rest() + s
    }
}

fn check_no_kingman(m: &CoalescentMeasure) -> Result<()> {
    if m.kingman_mass() > 0.0 {
        return Err(domain("the limit process needs a = 0"));
    }
    if m.has_star_mass() {
        return Err(Error::UnsupportedMeasure("Ξ charges |u| = 1".into()));
    }
    Ok(())
}

fn psi_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_intervals: 4000 }
}

/// `ψ(x)` by ν-quadrature, never using closed forms.
pub fn psi_quadrature(m: &CoalescentMeasure, x: f64) -> Result<Complex64> {
    check_no_kingman(m)?;
    let f = |p: &NuPoint| -> Complex64 {
        let l = p.ln_rest();
        // e^{ixl} − 1 + ix|u| = (e^{ixl} − 1 − ixl) + ix(l + |u|)
        cexpm1_minus_i(x * l) + I * (x * log1m_plus(p))
    };
    m.nu_integral(&f, psi_opts())
}

/// `ψ(x)`; beta measures use `ψ(x) = γ(ix)` in closed form.
pub fn psi(m: &CoalescentMeasure, x: f64) -> Result<Complex64> {
    check_no_kingman(m)?;
    if x == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    match m.family() {
        Family::LambdaBeta { a, b } => match beta_psi(*a, *b, x) {
            Some(v) => Ok(v),
            None => psi_quadrature(m, x),
        },
        Family::Mixture(parts) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, part) in parts {
                acc += psi(part, x)? * *w;
            }
            Ok(acc)
        }
        _ => psi_quadrature(m, x),
    }
}

fn beta_psi(a: f64, b: f64, x: f64) -> Option<Complex64> {
    let z = Complex64::new(0.0, x);
    let dig_b = digamma_c(Complex64::new(b, 0.0));
    if a == 1.0 {
        if x.abs() < 1e-3 {
            return None;
        }
        Some(b * (z + (b - 1.0)) * (digamma_c(z + b) - dig_b) - b * z)
    } else if a == 2.0 {
        if x.abs() < 1e-3 {
            return None;
        }
        Some((b + 1.0) * z - b * (b + 1.0) * (digamma_c(z + b) - dig_b))
    } else if (a - 1.0).abs() > 1e-6 && (a - 2.0).abs() > 1e-6 && x.abs() >= 0.1 {
        let k = 1.0 / ((a - 1.0) * (a - 2.0));
        let s = a + b;
        let p = (z + (s - 1.0)) * (z + (s - 2.0));
        let ln_b_z = ln_gamma_c(Complex64::new(a, 0.0)) + ln_gamma_c(z + b) - ln_gamma_c(z + s);
        let r = (ln_b_z - ln_beta(a, b)).exp();
        let c1 = (s - 1.0) / (a - 1.0);
        let c0 = (s - 1.0) * (s - 2.0) * k;
        Some(k * p * r + c1 * z - c0)
    } else {
        None
    }
}

/// `∫_0^t ψ(e^{−κs} x) ds`.
pub fn phi_exponent(m: &CoalescentMeasure, kappa: f64, x: f64, t: f64, tol: f64) -> Result<Complex64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("time {t} must be finite and nonnegative")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(domain(format!("κ = {kappa} must be finite and nonnegative")));
    }
    if t == 0.0 || x == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if kappa == 0.0 {
        return Ok(psi(m, x)? * t);
    }
    let err = RefCell::new(None);
    let f = |s: f64| match psi(m, (-kappa * s).exp() * x) {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            Complex64::new(0.0, 0.0)
        }
    };
    let v = integrate(f, 0.0, t, QuadOptions { abs_tol: tol, rel_tol: 1e-13, max_intervals: 2000 })?.value;
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// `φ_t(x) = E e^{ix S_t}`.
pub fn phi_t(m: &CoalescentMeasure, kappa: f64, x: f64, t: f64, tol: f64) -> Result<Complex64> {
    Ok(phi_exponent(m, kappa, x, t, tol)?.exp())
}

/// Largest node of the inversion integral.
pub const INVERSION_X_CAP: f64 = 4096.0;
/// Target for `|φ_t(X)| / X` at the truncation point.
pub const INVERSION_TAIL: f64 = 1e-8;

/// `φ_t` tabulated on Kronrod nodes over `[0, X]` for Gil–Pelaez inversion.
#[derive(Debug, Clone)]
pub struct LimitLaw {
    pub kappa: f64,
    pub t: f64,
    /// `(ξ, w_kronrod, w_gauss, φ_t(ξ))`.
    nodes: Vec<(f64, f64, f64, Complex64)>,
    pub x_max: f64,
    /// `|φ_t(x_max)| / x_max`.
    pub truncation: f64,
    /// Whether `φ_t` failed to decay by [`INVERSION_X_CAP`]; the inversion
    /// is then Fejér-tapered and smooths atoms over a width `~ 1/x_max`.
    pub tapered: bool,
}

/// CDF values with error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCdf {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest Gauss/Kronrod disagreement over the grid.
    pub discretization: f64,
    pub truncation: f64,
    pub tapered: bool,
}

impl LimitLaw {
    pub fn new(m: &CoalescentMeasure, kappa: f64, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(domain("the limit law is degenerate at t = 0"));
        }
        if m.is_pure_kingman() {
            return Err(domain("the limit law is degenerate without Ξ_0"));
        }
        let tol = 1e-12;
        let phi = |x: f64| phi_t(m, kappa, x, t, tol);
        let mut x_max = 1.0;
        let mut tail = phi(x_max)?.norm() / x_max;
        while tail >= INVERSION_TAIL && x_max < INVERSION_X_CAP {
            x_max *= 2.0;
            tail = phi(x_max)?.norm() / x_max;
        }
        let tapered = tail >= INVERSION_TAIL;
        let h = (x_max / 16.0).min(0.25);
        let panels = (x_max / h).round() as usize;
        let mut nodes = Vec::with_capacity(21 * panels);
        for p in 0..panels {
            let a = p as f64 * h;
            for (x, wk, wg) in kronrod21_nodes(a, a + h) {
                nodes.push((x, wk, wg, phi(x)?));
            }
        }
        Ok(Self { kappa, t, nodes, x_max, truncation: tail, tapered })
    }

    pub fn phi(&self, m: &CoalescentMeasure, x: f64) -> Result<Complex64> {
        phi_t(m, self.kappa, x, self.t, 1e-12)
    }

    /// Gil–Pelaez sums with Kronrod and Gauss weights.
    fn sums(&self, q: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut g = 0.0;
        for &(x, wk, wg, phi) in &self.nodes {
            let taper = if self.tapered { 1.0 - x / self.x_max } else { 1.0 };
            let v = (Complex64::from_polar(1.0, -x * q) * phi).im / x * taper;
            k += wk * v;
            g += wg * v;
        }
        (0.5 - k / PI, 0.5 - g / PI)
    }

    /// `P(S_t ≤ q)` (at atoms, the midpoint of the jump).
    pub fn cdf(&self, q: f64) -> f64 {
        self.sums(q).0.clamp(0.0, 1.0)
    }

    /// CDF on a grid, made nondecreasing.
    pub fn cdf_grid(&self, grid: &[f64]) -> Result<LimitCdf> {
        if grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(domain("CDF grid must be sorted"));
        }
        let mut values = Vec::with_capacity(grid.len());
        let mut disc: f64 = 0.0;
        let mut run: f64 = 0.0;
        for &q in grid {
            let (k, g) = self.sums(q);
            if !k.is_finite() {
                return Err(Error::Inversion { at: q, reason: format!("non-finite value {k}") });
            }
            disc = disc.max((k - g).abs());
            run = run.max(k.clamp(0.0, 1.0));
            values.push(run);
        }
        Ok(LimitCdf { grid: grid.to_vec(), values, discretization: disc, truncation: self.truncation, tapered: self.tapered })
    }

    /// CDF of `−e^{κt} S_t`, the fixation-line limit started at 0.
    pub fn cdf_fixation(&self, y: f64) -> f64 {
        1.0 - self.cdf(-y * (-self.kappa * self.t).exp())
    }
}

/// `P(S_t ≤ q)` on a grid.
pub fn limit_cdf(m: &CoalescentMeasure, kappa: f64, t: f64, grid: &[f64]) -> Result<LimitCdf> {
    LimitLaw::new(m, kappa, t)?.cdf_grid(grid)
}

/// Draws `u` with `|u| > ε` from `ν` and returns `log(1 − |u|)`.
#[derive(Debug, Clone)]
enum Source {
    /// Cumulative ν-masses and jump sizes.
    Atoms { cum: Vec<f64>, jumps: Vec<f64> },
    /// `u^{a−3}(1−u)^{b−1}` on `(ε, 1)`, split at one half.
    Beta { a: f64, b: f64, eps: f64, left: f64, right: f64 },
    /// `e^{−(α−1)y} y^{ρ−1}` in `y = −log u` on `(0, −log ε)`.
    Nlg { alpha: f64, rho: f64, y_max: f64 },
}

fn power_law<R: Rng + ?Sized>(rng: &mut R, c: f64, lo: f64, hi: f64) -> f64 {
    let v: f64 = rng.random();
    if (c + 1.0).abs() < 1e-12 {
        lo * (hi / lo).powf(v)
    } else {
        let e = c + 1.0;
        let (a, b) = (lo.powf(e), hi.powf(e));
        (a + v * (b - a)).powf(1.0 / e)
    }
}

impl Source {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Source::Atoms { cum, jumps } => {
                let total = *cum.last().unwrap();
                let v: f64 = rng.random::<f64>() * total;
                let i = cum.partition_point(|&c| c <= v).min(jumps.len() - 1);
                jumps[i]
            }
            Source::Beta { a, b, eps, left, right } => {
                let pick: f64 = rng.random::<f64>() * (left + right);
                if pick < *left {
                    let bound = if *b >= 1.0 { 1.0 } else { 2f64.powf(1.0 - b) };
                    loop {
                        let u = power_law(rng, a - 3.0, *eps, 0.5);
                        if rng.random::<f64>() * bound <= (1.0 - u).powf(b - 1.0) {
                            return (-u).ln_1p();
                        }
                    }
                } else {
                    let bound = if *a <= 3.0 { 2f64.powf(3.0 - a) } else { 1.0 };
                    loop {
                        let v = power_law(rng, b - 1.0, 0.0, 0.5).max(f64::MIN_POSITIVE);
                        if rng.random::<f64>() * bound <= (1.0 - v).powf(a - 3.0) {
                            return v.ln();
                        }
                    }
                }
            }
            Source::Nlg { alpha, rho, y_max } => {
                let bound = if *alpha >= 1.0 { 1.0 } else { ((1.0 - alpha) * y_max).exp() };
                loop {
                    let y = power_law(rng, rho - 1.0, 0.0, *y_max);
                    if rng.random::<f64>() * bound <= (-(alpha - 1.0) * y).exp() {
                        // log(1 − e^{−y})
                        return (-(-y).exp_m1()).ln();
                    }
                }
            }
        }
    }
}

/// Exact sampler of `S_t` up to dropping jumps with `|u| ≤ ε`, whose mean
/// is kept as drift.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    pub kappa: f64,
    pub eps: f64,
    /// `(ν-mass, source)` of the jumps with `|u| > ε`.
    sources: Vec<(f64, Source)>,
    pub big_mass: f64,
    /// `∫_{|u|>ε} |u| ν + ∫_{|u|≤ε} (log(1−|u|) + |u|) ν`.
    pub drift: f64,
    /// `∫_{|u|≤ε} log(1−|u|)² ν`.
    pub small_second_moment: f64,
}

pub const DEFAULT_EPS: f64 = 1e-4;

impl LimitSampler {
    pub fn new(m: &CoalescentMeasure, kappa: f64, eps: f64) -> Result<Self> {
        check_no_kingman(m)?;
        if !(eps > 0.0 && eps < 0.5) {
            return Err(domain(format!("jump threshold ε = {eps} not in (0, 1/2)")));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(domain(format!("κ = {kappa} must be finite and nonnegative")));
        }
        let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-11, max_intervals: 4000 };
        let big = |f: &dyn Fn(&NuPoint) -> f64| m.nu_integral_between(f, eps, 1.0, opts);
        let small = |f: &dyn Fn(&NuPoint) -> f64| m.nu_integral_between(f, 0.0, eps, opts);
        let big_mass = big(&|_p| 1.0)?;
        let drift = big(&|p| p.sum_abs())? + small(&|p| log1m_plus(p))?;
        let small_second_moment = small(&|p| p.ln_rest().powi(2))?;
        let mut sources = Vec::new();
        collect_sources(m, 1.0, eps, opts, &mut sources)?;
        Ok(Self { kappa, eps, sources, big_mass, drift, small_second_moment })
    }

    /// One draw of `S_t`.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = self.kappa;
        let decay = |s: f64| if k == 0.0 { 1.0 } else { (-k * s).exp() };
        let mut x = if k == 0.0 { self.drift * t } else { self.drift * -(-k * t).exp_m1() / k };
        let lam = self.big_mass * t;
        if lam > 0.0 {
            let n = Poisson::new(lam).map(|p| p.sample(rng)).unwrap_or(0.0) as u64;
            let total: f64 = self.sources.iter().map(|s| s.0).sum();
            for _ in 0..n {
                let pick: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut src = &self.sources[self.sources.len() - 1].1;
                for (w, s) in &self.sources {
                    acc += w;
                    if pick < acc {
                        src = s;
                        break;
                    }
                }
                // a jump at a uniform time τ decays by e^{−κ(t − τ)}
                let age = rng.random::<f64>() * t;
                x += decay(age) * src.sample(rng);
            }
        }
        x
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, t: f64, reps: usize, rng: &mut R) -> Vec<f64> {
        (0..reps).map(|_| self.sample(t, rng)).collect()
    }

    /// Bound on `|E e^{ixS} − φ_t(x)|` from the dropped small jumps.
    pub fn bias_bound(&self, x: f64, t: f64) -> f64 {
        0.5 * x * x * t * self.small_second_moment
    }
}

fn collect_sources(
    m: &CoalescentMeasure,
    weight: f64,
    eps: f64,
    opts: QuadOptions,
    out: &mut Vec<(f64, Source)>,
) -> Result<()> {
    match m.family() {
        Family::Empty => {}
        Family::Mixture(parts) => {
            for (w, part) in parts {
                collect_sources(part, weight * w, eps, opts, out)?;
            }
        }
        Family::LambdaAtoms(atoms) => {
            let mut cum = Vec::new();
            let mut jumps = Vec::new();
            let mut acc = 0.0;
            for &(u, w) in atoms {
                if u > eps {
                    acc += weight * w / (u * u);
                    cum.push(acc);
                    jumps.push((-u).ln_1p());
                }
            }
            if acc > 0.0 {
                out.push((acc, Source::Atoms { cum, jumps }));
            }
        }
        Family::XiAtoms(x) => {
            let mut cum = Vec::new();
            let mut jumps = Vec::new();
            let mut acc = 0.0;
            for at in &x.atoms {
                if at.point.sum_abs() > eps {
                    acc += weight * at.nu_mass;
                    cum.push(acc);
                    let s = at.point.sum_abs();
                    jumps.push(if s < 0.5 { (-s).ln_1p() } else { at.point.rest().ln() });
                }
            }
            if acc > 0.0 {
                out.push((acc, Source::Atoms { cum, jumps }));
            }
        }
        Family::LambdaBeta { a, b } => {
            let nu = |lo: f64, hi: f64| m.nu_integral_between(&|_p: &NuPoint| 1.0, lo, hi, opts);
            let (left, right) = (nu(eps, 0.5)?, nu(0.5, 1.0)?);
            let mass = weight * (left + right);
            out.push((mass, Source::Beta { a: *a, b: *b, eps, left, right }));
        }
        Family::LambdaNlg { alpha, rho } => {
            let mass = weight * m.nu_integral_between(&|_p: &NuPoint| 1.0, eps, 1.0, opts)?;
            out.push((mass, Source::Nlg { alpha: *alpha, rho: *rho, y_max: -eps.ln() }));
        }
        Family::LambdaDensity(d) => {
            return Err(Error::UnsupportedMeasure(format!("no jump sampler for density '{}'", d.name)));
        }
    }
    Ok(())
}

/// `reps` draws of `S_t` with the default small-jump threshold.
pub fn sample_s<R: Rng + ?Sized>(
    m: &CoalescentMeasure,
    kappa: f64,
    t: f64,
    reps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(LimitSampler::new(m, kappa, DEFAULT_EPS)?.sample_many(t, reps, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// `X` on the real line.
    X,
    /// The dual `Y` on the real line.
    Y,
    /// `X̃ = e^X` on `(0, ∞)`.
    XTilde,
    /// `Ỹ = e^Y` on `(0, ∞)`.
    YTilde,
}

/// Jumps below this size enter the generator through a second-order expansion.
const GENERATOR_SPLIT: f64 = 1e-5;

/// Generator of the chosen process applied to `f` (with derivative `df`)
/// at `point`.
pub fn generator_apply(
    m: &CoalescentMeasure,
    kappa: f64,
    which: Generator,
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    point: f64,
) -> Result<f64> {
    check_no_kingman(m)?;
    let x = point;
    if matches!(which, Generator::XTilde | Generator::YTilde) && !(x > 0.0) {
        return Err(domain("X̃ and Ỹ live on (0, ∞)"));
    }
    let fx = f(x);
    let dfx = df(x);
    let h = 1e-4 * x.abs().max(1.0);
    let d2fx = (df(x + h) - df(x - h)) / (2.0 * h);
    let opts = QuadOptions { abs_tol: 1e-11, rel_tol: 1e-10, max_intervals: 4000 };
    let inner = |g: &dyn Fn(&NuPoint) -> f64| m.nu_integral_between(g, 0.0, GENERATOR_SPLIT, opts);
    let outer = |g: &dyn Fn(&NuPoint) -> f64| m.nu_integral_between(g, GENERATOR_SPLIT, 1.0, opts);
    let l2 = |p: &NuPoint| p.ln_rest().powi(2);
    let v = match which {
        Generator::X => {
            -kappa * x * dfx
                + outer(&|p| f(x + p.ln_rest()) - fx + p.sum_abs() * dfx)?
                + dfx * inner(&log1m_plus)?
                + 0.5 * d2fx * inner(&l2)?
        }
        Generator::Y => {
            kappa * x * dfx
                + outer(&|p| f(x - p.ln_rest()) - fx - p.sum_abs() * dfx)?
                - dfx * inner(&log1m_plus)?
                + 0.5 * d2fx * inner(&l2)?
        }
        Generator::XTilde => {
            -kappa * x * x.ln() * dfx
                + outer(&|p| f(x * p.ln_rest().exp()) - fx + p.sum_abs() * x * dfx)?
                + 0.5 * d2fx * x * x * inner(&|p| p.sum_abs().powi(2))?
        }
        Generator::YTilde => {
            // x/(1 − s) − x = xs/(1 − s)
            kappa * x * x.ln() * dfx
                + outer(&|p| f(x * (-p.ln_rest()).exp()) - fx - p.sum_abs() * x * dfx)?
                + dfx * x * inner(&|p| p.sum_abs().powi(2) / p.rest)?
                + 0.5 * d2fx * x * x * inner(&|p| (p.sum_abs() / p.rest).powi(2))?
        }
    };
    Ok(v)
}

/// Number of samples violating
/// `1{x^α e^S ≤ y} = 1{x ≤ y^{1/α} e^{−S/α}}` with `α = e^{−κt}`.
///
/// Both sides are compared in log scale; differences within a few ulps of
/// the boundary count as equality, so exact ties give 1 on both sides.
pub fn exp_duality_check(kappa: f64, t: f64, samples: &[f64], x: f64, y: f64) -> Result<usize> {
    if !(x > 0.0 && y > 0.0) {
        return Err(domain("exponential duality needs x, y > 0"));
    }
    let alpha = (-kappa * t).exp();
    let (lx, ly) = (x.ln(), y.ln());
    let mut bad = 0;
    for &s in samples {
        let scale = (alpha * lx).abs() + s.abs() + ly.abs();
        let slack = 8.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        let left = alpha * lx + s - ly <= slack;
        let right = lx - (ly - s) / alpha <= slack / alpha;
        if left != right {
            bad += 1;
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Multiplicity;
    use crate::simplex::SimplexPoint;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_atom() -> CoalescentMeasure {
        let p = SimplexPoint::new(vec![0.25, 0.25]).unwrap();
        CoalescentMeasure::xi_atoms(vec![(p, 0.25)]).unwrap()
    }

    #[test]
    fn psi_single_atom_closed_form() {
        let m = single_atom();
        for x in [0.3, 1.0, 4.0, -2.0] {
            let want = 2.0 * (Complex64::from_polar(1.0, x * 0.5f64.ln()) - 1.0 + I * (0.5 * x));
            assert!((psi(&m, x).unwrap() - want).norm() < 1e-14);
        }
        assert_eq!(psi(&m, 0.0).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn beta_psi_closed_forms_match_quadrature() {
        for (a, b) in [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (1.5, 0.7), (3.0, 2.0)] {
            let m = CoalescentMeasure::beta(a, b).unwrap();
            for x in [0.2, 1.0, 7.0, -3.0] {
                let c = psi(&m, x).unwrap();
                let q = psi_quadrature(&m, x).unwrap();
                assert!((c - q).norm() < 1e-9 * c.norm().max(1.0), "a={a} b={b} x={x}: {c} vs {q}");
            }
        }
    }

    #[test]
    fn psi_conjugate_symmetry() {
        let m = CoalescentMeasure::geometric(0.5, Multiplicity::Const(1), None).unwrap();
        for x in [0.5, 2.0, 9.0] {
            assert!((psi(&m, -x).unwrap() - psi(&m, x).unwrap().conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn mehler_factorisation() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let k = 1.0;
        for (s, t, x) in [(0.3, 0.5, 1.5), (1.0, 0.2, -4.0), (0.7, 1.3, 10.0)] {
            let lhs = phi_t(&m, k, x, t + s, 1e-12).unwrap();
            let rhs = phi_t(&m, k, (-k * s).exp() * x, t, 1e-12).unwrap() * phi_t(&m, k, x, s, 1e-12).unwrap();
            assert!((lhs - rhs).norm() < 1e-9);
        }
        assert_eq!(phi_t(&m, k, 3.0, 0.0, 1e-12).unwrap(), Complex64::new(1.0, 0.0));
    }

    /// `S_t = t − N log 2`, `N ~ Poisson(2t)`.
    fn lattice_cdf(t: f64, q: f64) -> f64 {
        let lam = 2.0 * t;
        let mut acc = 0.0;
        let mut pk = (-lam).exp();
        for n in 0..200 {
            if t - n as f64 * core::f64::consts::LN_2 <= q {
                acc += pk;
            }
            pk *= lam / (n + 1) as f64;
        }
        acc
    }

    #[test]
    fn compound_poisson_inversion() {
        let m = single_atom();
        let t = 1.0;
        let law = LimitLaw::new(&m, 0.0, t).unwrap();
        assert!(law.tapered);
        // away from the atoms t − n log 2
        for q in [-3.0, -1.5, -0.7, 0.0, 0.65] {
            let got = law.cdf(q);
            let want = lattice_cdf(t, q);
            assert!((got - want).abs() < 1e-2, "q={q}: {got} vs {want}");
        }
    }

    #[test]
    fn cdf_limits_and_monotone() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let law = LimitLaw::new(&m, 1.0, 0.5).unwrap();
        assert!(!law.tapered);
        let grid: Vec<f64> = (0..81).map(|i| -20.0 + 0.5 * i as f64).collect();
        let cdf = law.cdf_grid(&grid).unwrap();
        assert!(cdf.values[0] < 1e-3 && cdf.values[80] > 1.0 - 1e-3);
        assert!(cdf.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(cdf.discretization < 1e-6);
    }

    #[test]
    fn sampler_matches_compound_poisson() {
        let m = single_atom();
        let s = LimitSampler::new(&m, 0.0, DEFAULT_EPS).unwrap();
        assert_eq!(s.small_second_moment, 0.0);
        assert!((s.big_mass - 2.0).abs() < 1e-15 && (s.drift - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = s.sample_many(1.0, 20000, &mut rng);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        // E S = t − 2t log 2
        assert!((mean - (1.0 - 2.0 * core::f64::consts::LN_2)).abs() < 0.03);
        assert!(s.sample(0.0, &mut rng) == 0.0);
    }

    #[test]
    fn sampler_ecf_matches_phi_for_beta() {
        for (a, b) in [(1.0, 1.0), (1.5, 0.7), (3.0, 2.0)] {
            let m = CoalescentMeasure::beta(a, b).unwrap();
            let kappa = if a == 1.0 { b } else { 0.0 };
            let s = LimitSampler::new(&m, kappa, 1e-3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let reps = 20000;
            let xs = s.sample_many(0.5, reps, &mut rng);
            for x in [0.5, 1.0] {
                let ecf: Complex64 = xs.iter().map(|&v| Complex64::from_polar(1.0, x * v)).sum::<Complex64>() / reps as f64;
                let phi = phi_t(&m, kappa, x, 0.5, 1e-12).unwrap();
                let bound = 4.0 / (reps as f64).sqrt() + s.bias_bound(x, 0.5);
                assert!((ecf - phi).norm() < bound, "a={a} b={b} x={x}: {ecf} vs {phi}");
            }
        }
    }

    #[test]
    fn generators_vanish_on_constants_and_agree() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let one = |_x: f64| 1.0;
        let zero = |_x: f64| 0.0;
        for g in [Generator::X, Generator::Y, Generator::XTilde, Generator::YTilde] {
            assert_eq!(generator_apply(&m, 1.0, g, &one, &zero, 0.7).unwrap(), 0.0);
        }
        let f = |x: f64| (-x * x).exp();
        let df = |x: f64| -2.0 * x * (-x * x).exp();
        let fe = |z: f64| f(z.exp());
        let dfe = |z: f64| z.exp() * df(z.exp());
        for x in [0.3, 1.0, 2.5] {
            let a = generator_apply(&m, 1.0, Generator::XTilde, &f, &df, x).unwrap();
            let b = generator_apply(&m, 1.0, Generator::X, &fe, &dfe, x.ln()).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn exponential_duality_ties() {
        let (k, t) = (1.0, 0.5);
        let alpha: f64 = (-k * t).exp();
        let s = [0.3, -1.2, 0.0];
        let x: f64 = 2.0;
        for &si in &s {
            let y = x.powf(alpha) * si.exp();
            assert_eq!(exp_duality_check(k, t, &[si], x, y).unwrap(), 0);
        }
    }

    #[test]
    fn phi_is_positive_definite() {
        let m = CoalescentMeasure::beta(1.5, 1.0).unwrap();
        let xs = [-3.0, -1.1, 0.0, 0.4, 2.0, 5.5];
        let phi = |x: f64| phi_t(&m, 0.5, x, 1.0, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let z: Vec<Complex64> = xs.iter().map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let mut q = Complex64::new(0.0, 0.0);
            for (i, &xi) in xs.iter().enumerate() {
                for (j, &xj) in xs.iter().enumerate() {
                    q += z[i].conj() * phi(xi - xj) * z[j];
                }
            }
            assert!(q.re > -1e-10 && q.im.abs() < 1e-10);
        }
    }

    #[test]
    fn exponential_duality_on_samples() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = sample_s(&m, 1.0, 0.8, 2000, &mut rng).unwrap();
        for (x, y) in [(0.5, 2.0), (3.0, 0.1), (1.0, 1.0)] {
            assert_eq!(exp_duality_check(1.0, 0.8, &xs, x, y).unwrap(), 0);
        }
    }
}
