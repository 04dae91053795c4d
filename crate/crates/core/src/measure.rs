//! Driving measures `Ξ = a·δ_0 + Ξ_0` and integration against
//! `ν(du) = Ξ_0(du) / (u, u)`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{domain, Error, Result};
use crate::quad::{integrate, integrate_to_inf, QuadOptions, QuadValue};
use crate::rate::{gamma, gamma_deriv, KappaMethod, RateProfile};
use crate::simplex::SimplexPoint;
use crate::special::{ln_beta, ln_gamma};

/// Tail mass below which geometric atom sequences are truncated.
pub const GEOMETRIC_TAIL: f64 = 1e-12;

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MomentFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A Λ-measure on `(0, 1)` given by a Lebesgue density.
#[derive(Clone)]
pub struct LambdaDensity {
    pub name: String,
    density: DensityFn,
    /// `(p, q) ↦ ∫ u^p (1 − u)^q Λ(du)` when available in closed form.
    pub moment: Option<MomentFn>,
    /// `∫ u^{-1} Λ(du)`, possibly `+∞`, when known.
    pub dust_mass: Option<f64>,
    /// `lim Λ([0, t]) / t`, possibly `+∞`, when known.
    pub kappa: Option<f64>,
    /// Whether `∫^∞ du / γ(u) < ∞`, when known.
    pub comes_down: Option<bool>,
}

impl LambdaDensity {
    pub fn new(name: impl Into<String>, density: DensityFn) -> Self {
        Self { name: name.into(), density, moment: None, dust_mass: None, kappa: None, comes_down: None }
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.density)(u)
    }
}

impl fmt::Debug for LambdaDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LambdaDensity")
            .field("name", &self.name)
            .field("dust_mass", &self.dust_mass)
            .field("kappa", &self.kappa)
            .finish_non_exhaustive()
    }
}

/// Number of equal coordinates `k_m` of the `m`-th geometric atom.
#[derive(Debug, Clone, PartialEq)]
pub enum Multiplicity {
    Const(u32),
    /// Explicit `k_1, …, k_r`; the last entry repeats for `m > r`.
    Prefix(Vec<u32>),
}

impl Multiplicity {
    /// `k_m` for `m >= 1`.
    pub fn at(&self, m: usize) -> u32 {
        match self {
            Multiplicity::Const(k) => *k,
            Multiplicity::Prefix(ks) => ks[(m - 1).min(ks.len() - 1)],
        }
    }

    fn tail_after(&self, p: f64, m_max: usize) -> f64 {
        let (explicit, last) = match self {
            Multiplicity::Const(k) => (0, *k),
            Multiplicity::Prefix(ks) => (ks.len(), *ks.last().unwrap()),
        };
        let mut tail = 0.0;
        for m in (m_max + 1)..=explicit {
            tail += self.at(m) as f64 * p.powi(m as i32);
        }
        let start = m_max.max(explicit) + 1;
        tail + last as f64 * p.powi(start as i32) / (1.0 - p)
    }
}

#[derive(Debug, Clone)]
pub struct XiAtom {
    pub point: SimplexPoint,
    pub mass: f64,
    /// `mass / (u, u)`.
    pub nu_mass: f64,
}

/// Finitely many Ξ-atoms, possibly the truncation of an infinite sequence.
#[derive(Debug, Clone)]
pub struct XiAtoms {
    pub atoms: Vec<XiAtom>,
    /// Bound on `Σ k_m p_m` over dropped atoms.
    pub tail_bound: f64,
    /// `(p, k)` when built from the geometric family `p_m = p^m`.
    pub geometric: Option<(f64, Multiplicity)>,
}

impl XiAtoms {
    pub fn new(atoms: Vec<(SimplexPoint, f64)>) -> Result<Self> {
        let mut out = Vec::with_capacity(atoms.len());
        for (point, mass) in atoms {
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(domain(format!("atom mass {mass} must be positive")));
            }
            if point.is_origin() {
                return Err(domain("Ξ-atom at the origin; use kingman_mass"));
            }
            if point.sum_abs() >= 1.0 - 1e-15 {
                return Err(Error::UnsupportedMeasure(format!(
                    "atom with |u| = {} lies in the star-shaped part",
                    point.sum_abs()
                )));
            }
            let nu_mass = mass / point.sum_sq();
            out.push(XiAtom { point, mass, nu_mass });
        }
        Ok(Self { atoms: out, tail_bound: 0.0, geometric: None })
    }

    /// Atom `m` carries mass `p^m` at the point with `k_m` coordinates `p^m`.
    pub fn geometric(p: f64, k: Multiplicity, m_max: Option<usize>) -> Result<Self> {
        if !(p > 0.0 && p <= 0.5) {
            return Err(domain(format!("geometric p = {p} not in (0, 1/2]")));
        }
        if let Multiplicity::Prefix(ks) = &k {
            if ks.is_empty() {
                return Err(domain("empty multiplicity prefix"));
            }
        }
        let m_max = match m_max {
            Some(m) if m >= 1 => m,
            Some(_) => return Err(domain("m_max must be at least 1")),
            None => {
                let mut m = 1;
                while k.tail_after(p, m) >= GEOMETRIC_TAIL {
                    m += 1;
                }
                m
            }
        };
        let last = match &k {
            Multiplicity::Const(_) => 1,
            Multiplicity::Prefix(ks) => ks.len(),
        };
        let mut atoms = Vec::with_capacity(m_max);
        for m in 1..=m_max.max(last) {
            let pm = p.powi(m as i32);
            let km = k.at(m);
            if km == 0 || km as f64 * pm >= 1.0 {
                return Err(domain(format!("k_{m} p_{m} = {} must lie in (0, 1)", km as f64 * pm)));
            }
            if m <= m_max {
                atoms.push((SimplexPoint::uniform(pm, km as usize)?, pm));
            }
        }
        let mut out = Self::new(atoms)?;
        out.tail_bound = k.tail_after(p, m_max);
        out.geometric = Some((p, k));
        Ok(out)
    }

    /// Whether the atoms truncate an infinite sequence.
    pub fn is_truncated(&self) -> bool {
        self.geometric.is_some()
    }
}

/// The non-Kingman part of the measure.
#[derive(Debug, Clone)]
pub enum Family {
    /// `Ξ_0 = 0`.
    Empty,
    LambdaDensity(LambdaDensity),
    LambdaBeta { a: f64, b: f64 },
    /// Density `α^ρ u^{α−1} (−log u)^{ρ−1} / Γ(ρ)`.
    LambdaNlg { alpha: f64, rho: f64 },
    /// `(point, mass)` pairs on `(0, 1]`.
    LambdaAtoms(Vec<(f64, f64)>),
    XiAtoms(XiAtoms),
    Mixture(Vec<(f64, CoalescentMeasure)>),
}

/// A finite measure `Ξ = a·δ_0 + Ξ_0` on the simplex.
#[derive(Debug, Clone)]
pub struct CoalescentMeasure {
    kingman: f64,
    family: Family,
}

/// A point seen by a `ν`-integrand: its coordinates and `1 − |u|`, the
/// latter supplied accurately even when `|u|` rounds to 1.
#[derive(Debug, Clone, Copy)]
pub struct NuPoint<'a> {
    pub coords: &'a [f64],
    pub rest: f64,
}

impl NuPoint<'_> {
    pub fn sum_abs(&self) -> f64 {
        self.coords.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum()
    }

    /// `log(1 − |u|)`.
    pub fn ln_rest(&self) -> f64 {
        let s = self.sum_abs();
        if s < 0.5 {
            (-s).ln_1p()
        } else {
            self.rest.ln()
        }
    }

    /// `log(1 − u_i)`.
    pub fn ln1m(&self, i: usize) -> f64 {
        if self.coords.len() == 1 {
            self.ln_rest()
        } else {
            (-self.coords[i]).ln_1p()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularity {
    pub regular: bool,
    /// `∫ |u|² ν(du)`, `+∞` when divergent.
    pub value: f64,
}

fn ln_pair(u: f64, v: f64) -> (f64, f64) {
    if u <= v {
        (u.ln(), (-u).ln_1p())
    } else {
        ((-v).ln_1p(), v.ln())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{name} = {v} must be positive and finite")))
    }
}

impl CoalescentMeasure {
    pub fn new(kingman: f64, family: Family) -> Result<Self> {
        if !(kingman >= 0.0 && kingman.is_finite()) {
            return Err(domain(format!("kingman mass {kingman} must be nonnegative")));
        }
        match &family {
            Family::LambdaBeta { a, b } => {
                check_positive("a", *a)?;
                check_positive("b", *b)?;
            }
            Family::LambdaNlg { alpha, rho } => {
                check_positive("alpha", *alpha)?;
                check_positive("rho", *rho)?;
            }
            Family::LambdaAtoms(atoms) => {
                for &(u, m) in atoms {
                    if !(u > 0.0 && u <= 1.0) {
                        return Err(domain(format!("Λ-atom location {u} not in (0, 1]")));
                    }
                    check_positive("atom mass", m)?;
                }
            }
            Family::Mixture(parts) => {
                for (w, _) in parts {
                    check_positive("mixture weight", *w)?;
                }
            }
            Family::Empty | Family::LambdaDensity(_) | Family::XiAtoms(_) => {}
        }
        Ok(Self { kingman, family })
    }

    pub fn kingman(a: f64) -> Result<Self> {
        Self::new(a, Family::Empty)
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self::new(0.0, Family::LambdaBeta { a, b })
    }

    /// `beta(1, 1)`.
    pub fn bolthausen_sznitman() -> Self {
        Self { kingman: 0.0, family: Family::LambdaBeta { a: 1.0, b: 1.0 } }
    }

    pub fn nlg(alpha: f64, rho: f64) -> Result<Self> {
        Self::new(0.0, Family::LambdaNlg { alpha, rho })
    }

    pub fn lambda_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(0.0, Family::LambdaAtoms(atoms))
    }

    pub fn xi_atoms(atoms: Vec<(SimplexPoint, f64)>) -> Result<Self> {
        Self::new(0.0, Family::XiAtoms(XiAtoms::new(atoms)?))
    }

    pub fn geometric(p: f64, k: Multiplicity, m_max: Option<usize>) -> Result<Self> {
        Self::new(0.0, Family::XiAtoms(XiAtoms::geometric(p, k, m_max)?))
    }

    pub fn density(d: LambdaDensity) -> Self {
        Self { kingman: 0.0, family: Family::LambdaDensity(d) }
    }

    /// `Λ(du) = du / (1 − log u)`: dust-free with `κ = 0`.
    pub fn log_damped_uniform() -> Self {
        let mut d = LambdaDensity::new("log_damped_uniform", Arc::new(|u: f64| 1.0 / (1.0 - u.ln())));
        d.dust_mass = Some(f64::INFINITY);
        d.kappa = Some(0.0);
        d.comes_down = Some(false);
        Self::density(d)
    }

    pub fn mixture(parts: Vec<(f64, CoalescentMeasure)>) -> Result<Self> {
        Self::new(0.0, Family::Mixture(parts))
    }

    pub fn with_kingman(mut self, a: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(domain(format!("kingman mass {a} must be nonnegative")));
        }
        self.kingman = a;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Own `Ξ({0})`, excluding mixture components.
    pub fn own_kingman(&self) -> f64 {
        self.kingman
    }

    /// Total `Ξ({0})` including mixture components.
    pub fn kingman_mass(&self) -> f64 {
        let inner = match &self.family {
            Family::Mixture(parts) => parts.iter().map(|(w, m)| w * m.kingman_mass()).sum(),
            _ => 0.0,
        };
        self.kingman + inner
    }

    /// Whether `Ξ_0` is concentrated on the first coordinate.
    pub fn is_lambda(&self) -> bool {
        match &self.family {
            Family::Empty
            | Family::LambdaDensity(_)
            | Family::LambdaBeta { .. }
            | Family::LambdaNlg { .. }
            | Family::LambdaAtoms(_) => true,
            Family::XiAtoms(x) => x.atoms.iter().all(|a| a.point.len() == 1),
            Family::Mixture(parts) => parts.iter().all(|(_, m)| m.is_lambda()),
        }
    }

    /// Whether `Ξ_0 = 0` (including all mixture components).
    pub fn is_pure_kingman(&self) -> bool {
        match &self.family {
            Family::Empty => true,
            Family::Mixture(parts) => parts.iter().all(|(_, m)| m.is_pure_kingman()),
            Family::XiAtoms(x) => x.atoms.is_empty(),
            Family::LambdaAtoms(a) => a.is_empty(),
            _ => false,
        }
    }

    /// Whether `Ξ_0` charges the star-shaped part `|u| = 1`.
    pub fn has_star_mass(&self) -> bool {
        match &self.family {
            Family::LambdaAtoms(atoms) => atoms.iter().any(|&(u, _)| u >= 1.0),
            Family::Mixture(parts) => parts.iter().any(|(_, m)| m.has_star_mass()),
            _ => false,
        }
    }

    /// Tail bound carried by truncated atom sequences.
    pub fn truncation_bound(&self) -> f64 {
        match &self.family {
            Family::XiAtoms(x) => x.tail_bound,
            Family::Mixture(parts) => parts.iter().map(|(w, m)| w * m.truncation_bound()).sum(),
            _ => 0.0,
        }
    }

    /// `∫_{(0, upper]} g(u, 1 − u) Λ_0(du)` for Λ-type families.
    pub fn lambda_integral<T: QuadValue>(
        &self,
        g: &dyn Fn(f64, f64) -> T,
        upper: f64,
        opts: QuadOptions,
    ) -> Result<T> {
        self.lambda_integral_between(g, 0.0, upper, opts)
    }

    /// `∫_{(lower, upper]} g(u, 1 − u) Λ_0(du)` for Λ-type families.
    pub fn lambda_integral_between<T: QuadValue>(
        &self,
        g: &dyn Fn(f64, f64) -> T,
        lower: f64,
        upper: f64,
        opts: QuadOptions,
    ) -> Result<T> {
        if upper <= lower {
            return Ok(T::default());
        }
        match &self.family {
            Family::Empty => Ok(T::default()),
            Family::LambdaBeta { a, b } => {
                let (a, b) = (*a, *b);
                let lb = ln_beta(a, b);
                let rho = move |u: f64, v: f64| {
                    let (lu, lv) = ln_pair(u, v);
                    ((a - 1.0) * lu + (b - 1.0) * lv - lb).exp()
                };
                density_integral(&rho, g, lower, upper, opts)
            }
            Family::LambdaNlg { alpha, rho } => {
                let (alpha, r) = (*alpha, *rho);
                let c = r * alpha.ln() - ln_gamma(r);
                let dens = move |u: f64, v: f64| {
                    let (lu, _) = ln_pair(u, v);
                    let mlu = if u > 0.5 { -(-v).ln_1p() } else { -lu };
                    (c + (alpha - 1.0) * lu + (r - 1.0) * mlu.ln()).exp()
                };
                density_integral(&dens, g, lower, upper, opts)
            }
            Family::LambdaDensity(d) => {
                let dens = |u: f64, _v: f64| d.eval(u);
                density_integral(&dens, g, lower, upper, opts)
            }
            Family::LambdaAtoms(atoms) => {
                let mut acc = T::default();
                for &(u, m) in atoms {
                    if u > lower && u <= upper {
                        acc += g(u, 1.0 - u) * m;
                    }
                }
                Ok(acc)
            }
            Family::XiAtoms(x) if self.is_lambda() => {
                let mut acc = T::default();
                for a in &x.atoms {
                    let u = a.point.coords()[0];
                    if u > lower && u <= upper {
                        acc += g(u, a.point.rest()) * a.mass;
                    }
                }
                Ok(acc)
            }
            Family::Mixture(parts) => {
                let mut acc = T::default();
                for (w, m) in parts {
                    acc += m.lambda_integral_between(g, lower, upper, opts)? * *w;
                }
                Ok(acc)
            }
            Family::XiAtoms(_) => Err(Error::MethodMismatch("Λ-integral of a Ξ-measure".into())),
        }
    }

    /// `∫ f(u) ν(du)` over the simplex.
    pub fn nu_integral<T: QuadValue>(&self, f: &dyn Fn(&NuPoint) -> T, opts: QuadOptions) -> Result<T> {
        match &self.family {
            Family::XiAtoms(x) => {
                let mut acc = T::default();
                for a in &x.atoms {
                    let p = NuPoint { coords: a.point.coords(), rest: a.point.rest() };
                    acc += f(&p) * a.nu_mass;
                }
                Ok(acc)
            }
            Family::Mixture(parts) => {
                let mut acc = T::default();
                for (w, m) in parts {
                    acc += m.nu_integral(f, opts)? * *w;
                }
                Ok(acc)
            }
            _ => {
                let g = |u: f64, v: f64| {
                    let w = 1.0 / (u * u);
                    if !w.is_finite() {
                        return T::default();
                    }
                    let c = [u];
                    f(&NuPoint { coords: &c, rest: v }) * w
                };
                self.lambda_integral(&g, 1.0, opts)
            }
        }
    }

    /// `∫ f(u) ν(du)` restricted to `lower < |u| ≤ upper`.
    pub fn nu_integral_between<T: QuadValue>(
        &self,
        f: &dyn Fn(&NuPoint) -> T,
        lower: f64,
        upper: f64,
        opts: QuadOptions,
    ) -> Result<T> {
        match &self.family {
            Family::XiAtoms(x) => {
                let mut acc = T::default();
                for a in &x.atoms {
                    let s = a.point.sum_abs();
                    if s > lower && s <= upper {
                        let p = NuPoint { coords: a.point.coords(), rest: a.point.rest() };
                        acc += f(&p) * a.nu_mass;
                    }
                }
                Ok(acc)
            }
            Family::Mixture(parts) => {
                let mut acc = T::default();
                for (w, m) in parts {
                    acc += m.nu_integral_between(f, lower, upper, opts)? * *w;
                }
                Ok(acc)
            }
            _ => {
                let g = |u: f64, v: f64| {
                    let w = 1.0 / (u * u);
                    if !w.is_finite() {
                        return T::default();
                    }
                    let c = [u];
                    f(&NuPoint { coords: &c, rest: v }) * w
                };
                self.lambda_integral_between(&g, lower, upper, opts)
            }
        }
    }

    /// `∫ f(u) ν(du)` for a functional of simplex points, with absolute
    /// tolerance `tol`.
    pub fn integrate_nu(&self, f: &dyn Fn(&SimplexPoint) -> f64, tol: f64) -> Result<f64> {
        let g = |p: &NuPoint| match SimplexPoint::new(p.coords.to_vec()) {
            Ok(sp) => f(&sp),
            Err(_) => 0.0,
        };
        self.nu_integral(&g, QuadOptions::with_tol(tol, 1e-12))
    }

    /// `Ξ_0(Δ) = ∫ (u, u) ν(du)`.
    pub fn xi0_mass(&self) -> Result<f64> {
        match &self.family {
            Family::LambdaBeta { .. } | Family::LambdaNlg { .. } => Ok(1.0),
            _ => self.nu_integral(&|p: &NuPoint| p.sum_sq(), QuadOptions::default()),
        }
    }

    /// `Ξ(Δ) = a + Ξ_0(Δ)`.
    pub fn total_mass(&self) -> Result<f64> {
        Ok(self.kingman_mass() + self.xi0_mass()?)
    }

    pub fn check_regularity(&self) -> Regularity {
        let value = match &self.family {
            Family::LambdaBeta { .. } | Family::LambdaNlg { .. } => Ok(1.0),
            _ => self.nu_integral(&|p: &NuPoint| p.sum_abs().powi(2), QuadOptions::default()),
        };
        match value {
            Ok(v) if v.is_finite() => Regularity { regular: true, value: v },
            _ => Regularity { regular: false, value: f64::INFINITY },
        }
    }

    /// `μ = ∫ |u| ν(du)`, `+∞` without dust. The Kingman part is ignored.
    pub fn dust_mass(&self) -> Result<f64> {
        match &self.family {
            Family::Empty => Ok(0.0),
            Family::LambdaBeta { a, b } => {
                Ok(if *a > 1.0 { (a + b - 1.0) / (a - 1.0) } else { f64::INFINITY })
            }
            Family::LambdaNlg { alpha, rho } => {
                Ok(if *alpha > 1.0 { (alpha / (alpha - 1.0)).powf(*rho) } else { f64::INFINITY })
            }
            Family::LambdaAtoms(atoms) => Ok(atoms.iter().map(|&(u, m)| m / u).sum()),
            Family::XiAtoms(x) => {
                if x.is_truncated() {
                    // every geometric atom contributes exactly 1
                    Ok(f64::INFINITY)
                } else {
                    Ok(x.atoms.iter().map(|a| a.nu_mass * a.point.sum_abs()).sum())
                }
            }
            Family::LambdaDensity(d) => match d.dust_mass {
                Some(v) => Ok(v),
                None => numeric_dust_mass(self),
            },
            Family::Mixture(parts) => {
                let mut acc = 0.0;
                for (w, m) in parts {
                    acc += w * m.dust_mass()?;
                }
                Ok(acc)
            }
        }
    }
}

/// Dust and coming-down behaviour of a measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub has_dust: bool,
    pub comes_down: bool,
    pub stays_infinite: bool,
}

/// Family-level answer to Grey's condition, when one is known.
pub(crate) fn comes_down_known(m: &CoalescentMeasure) -> Option<bool> {
    if m.kingman_mass() > 0.0 {
        return Some(true);
    }
    match &m.family {
        Family::Empty => Some(false),
        Family::LambdaBeta { a, .. } => Some(*a < 1.0),
        Family::LambdaNlg { alpha, rho } => Some(*alpha < 1.0 || (*alpha == 1.0 && *rho > 1.0)),
        Family::LambdaAtoms(_) | Family::XiAtoms(_) => Some(false),
        Family::LambdaDensity(d) => d.comes_down,
        Family::Mixture(parts) => {
            let mut all = Some(false);
            for (_, part) in parts {
                match comes_down_known(part) {
                    Some(true) => return Some(true),
                    Some(false) => {}
                    None => all = None,
                }
            }
            all
        }
    }
}

/// Classifies `m` using its rate profile.
///
/// Grey's condition is read off the family when possible. Otherwise a
/// finite curvature estimate means `γ(x) = O(x log x)` and the sum of
/// `1/γ(n)` diverges; a local exponent `x γ'(x) / γ(x)` clearly above one
/// means it converges. Anything in between is reported as uncertain with
/// the partial sum and the power-law tail estimate.
pub fn classify(m: &CoalescentMeasure, profile: &RateProfile) -> Result<Classification> {
    let has_dust = profile.has_dust();
    let comes_down = match comes_down_known(m) {
        Some(c) => c,
        None => numeric_comes_down(m, profile)?,
    };
    Ok(Classification { has_dust, comes_down, stays_infinite: !comes_down })
}

fn numeric_comes_down(m: &CoalescentMeasure, profile: &RateProfile) -> Result<bool> {
    if let (Some(&(k, _)), Some(&spread)) = (
        profile.kappa_estimates.get(&KappaMethod::SecondDeriv),
        profile.kappa_spread.get(&KappaMethod::SecondDeriv),
    ) {
        if k.is_finite() && spread <= 0.1 * k.max(1.0) {
            return Ok(false);
        }
    }
    let x = 1e6;
    let g = gamma(m, x)?;
    let beta = x * gamma_deriv(m, x, 1)? / g;
    if beta >= 1.1 {
        return Ok(true);
    }
    let mut partial = 0.0;
    for n in 2..=1000u32 {
        partial += 1.0 / gamma(m, n as f64)?;
    }
    let upper = if beta > 1.0 { partial + x / ((beta - 1.0) * g) } else { f64::INFINITY };
    Err(Error::ClassificationUncertain { lower: partial, upper })
}

/// Decides finiteness of `∫ u^{-1} Λ(du)` from the mass it puts below `e^{-40}`.
fn numeric_dust_mass(m: &CoalescentMeasure) -> Result<f64> {
    let opts = QuadOptions::with_tol(1e-12, 1e-10);
    let inv = |u: f64, _v: f64| 1.0 / u;
    let total = match m.lambda_integral(&inv, 1.0, opts) {
        Ok(v) => v,
        Err(_) => return Ok(f64::INFINITY),
    };
    match m.lambda_integral(&inv, (-40.0f64).exp(), opts) {
        Ok(tail) if tail <= 1e-6 * total.abs().max(1.0) => Ok(total),
        _ => Ok(f64::INFINITY),
    }
}

/// `∫_lower^upper g(u, 1 − u) ρ(u, 1 − u) du` split at `1/2`, with `u = c e^{−s}`
/// on the left and `1 − u = e^{−r}` on the right.
fn density_integral<T: QuadValue>(
    rho: &dyn Fn(f64, f64) -> f64,
    g: &dyn Fn(f64, f64) -> T,
    lower: f64,
    upper: f64,
    opts: QuadOptions,
) -> Result<T> {
    let lower = lower.max(0.0);
    if upper <= lower {
        return Ok(T::default());
    }
    let upper = upper.min(1.0);
    let c = upper.min(0.5);
    let half = QuadOptions { abs_tol: 0.5 * opts.abs_tol, ..opts };
    let left = |s: f64| {
        let u = c * (-s).exp();
        if u <= 0.0 {
            return T::default();
        }
        let w = rho(u, 1.0 - u) * u;
        if !w.is_finite() || w == 0.0 {
            return T::default();
        }
        g(u, 1.0 - u) * w
    };
    let mut total = if lower == 0.0 {
        integrate_to_inf(left, 0.0, half)?.value
    } else if lower < c {
        integrate(left, 0.0, (c / lower).ln(), half)?.value
    } else {
        T::default()
    };
    if upper > 0.5 {
        let r_lo = if lower > 0.5 { -(-lower).ln_1p() } else { core::f64::consts::LN_2 };
        let right = |r: f64| {
            let v = (-r).exp();
            let u = 1.0 - v;
            let w = rho(u, v) * v;
            if !w.is_finite() || w == 0.0 {
                return T::default();
            }
            g(u, v) * w
        };
        let part = if upper >= 1.0 {
            integrate_to_inf(right, r_lo, half)?
        } else {
            integrate(right, r_lo, -(-upper).ln_1p(), half)?
        };
        total += part.value;
    }
    Ok(total)
}
