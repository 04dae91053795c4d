//! The rate function `γ`, its derivatives, the curvature `κ` and the slowly
//! varying factor `L`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{domain, Error, Result};
use crate::measure::{CoalescentMeasure, Family, NuPoint};
use crate::quad::QuadOptions;
use crate::special::{digamma_diff, expm1_minus_id, ln1m_plus_id, ln_beta, tetragamma, trigamma};

/// Beta-family closed forms used for `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClosedForm {
    BetaGeneral,
    BetaA1,
    BetaA2,
    BolthausenSznitman,
}

impl ClosedForm {
    pub fn name(self) -> &'static str {
        match self {
            ClosedForm::BetaGeneral => "beta_general",
            ClosedForm::BetaA1 => "beta_a1",
            ClosedForm::BetaA2 => "beta_a2",
            ClosedForm::BolthausenSznitman => "bolthausen_sznitman",
        }
    }
}

/// Parameters too close to the removable singularities of the general
/// formula are integrated numerically instead.
const BETA_SINGULAR_GAP: f64 = 1e-6;

pub fn closed_form(m: &CoalescentMeasure) -> Option<ClosedForm> {
    match m.family() {
        Family::LambdaBeta { a, b } => beta_form(*a, *b),
        _ => None,
    }
}

fn beta_form(a: f64, b: f64) -> Option<ClosedForm> {
    if a == 1.0 && b == 1.0 {
        Some(ClosedForm::BolthausenSznitman)
    } else if a == 1.0 {
        Some(ClosedForm::BetaA1)
    } else if a == 2.0 {
        Some(ClosedForm::BetaA2)
    } else if (a - 1.0).abs() > BETA_SINGULAR_GAP && (a - 2.0).abs() > BETA_SINGULAR_GAP {
        Some(ClosedForm::BetaGeneral)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    pub quad: QuadOptions,
    /// Skip beta closed forms and integrate numerically.
    pub force_quadrature: bool,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { quad: QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_intervals: 4000 }, force_quadrature: false }
    }
}

/// `γ(x)` for `x >= 0`.
pub fn gamma(m: &CoalescentMeasure, x: f64) -> Result<f64> {
    gamma_with(m, x, 0, RateOptions::default())
}

/// `γ'(x)` or `γ''(x)` for `x > 0`.
pub fn gamma_deriv(m: &CoalescentMeasure, x: f64, order: u8) -> Result<f64> {
    if !(order == 1 || order == 2) {
        return Err(domain(format!("derivative order {order} not in {{1, 2}}")));
    }
    gamma_with(m, x, order, RateOptions::default())
}

/// `γ^{(order)}(x)` for `order ∈ {0, 1, 2}`.
pub fn gamma_with(m: &CoalescentMeasure, x: f64, order: u8, opts: RateOptions) -> Result<f64> {
    if !(x >= 0.0) || (order > 0 && x <= 0.0) || !x.is_finite() {
        return Err(domain(format!("rate function argument {x} out of range")));
    }
    if order == 0 && (x == 0.0 || x == 1.0) {
        return Ok(0.0);
    }
    let a = m.kingman_mass();
    let king = match order {
        0 => 0.5 * a * x * (x - 1.0),
        1 => a * (x - 0.5),
        _ => a,
    };
    Ok(king + xi0_part(m, x, order, opts)?)
}

fn xi0_part(m: &CoalescentMeasure, x: f64, order: u8, opts: RateOptions) -> Result<f64> {
    match m.family() {
        Family::Empty => Ok(0.0),
        Family::LambdaBeta { a, b } if !opts.force_quadrature => match beta_form(*a, *b) {
            Some(form) => Ok(beta_closed(form, *a, *b, x, order)),
            None => generic(m, x, order, opts),
        },
        Family::XiAtoms(atoms) => {
            let mut acc = 0.0;
            for at in &atoms.atoms {
                let s: f64 =
                    at.point.coords().iter().map(|&u| kernel(u, (-u).ln_1p(), x, order)).sum();
                acc += at.nu_mass * s;
            }
            Ok(acc)
        }
        Family::Mixture(parts) => {
            let mut acc = 0.0;
            for (w, part) in parts {
                acc += w * xi0_part(part, x, order, opts)?;
            }
            Ok(acc)
        }
        _ => generic(m, x, order, opts),
    }
}

fn generic(m: &CoalescentMeasure, x: f64, order: u8, opts: RateOptions) -> Result<f64> {
    let f = |p: &NuPoint| -> f64 {
        (0..p.coords.len()).map(|i| kernel(p.coords[i], p.ln1m(i), x, order)).sum()
    };
    m.nu_integral(&f, opts.quad)
}

/// Per-coordinate integrand of `γ^{(order)}` given `u` and `l = log(1 − u)`.
fn kernel(u: f64, l: f64, x: f64, order: u8) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let lpu = if u < 0.25 { ln1m_plus_id(u) } else { l + u };
    let y = x * l;
    match order {
        0 => {
            if y.abs() < 0.5 {
                expm1_minus_id(y) + x * lpu
            } else {
                y.exp_m1() + x * u
            }
        }
        1 => y.exp_m1() * l + lpu,
        _ => y.exp() * l * l,
    }
}

/// Closed forms for `Λ = beta(a, b)`.
fn beta_closed(form: ClosedForm, a: f64, b: f64, x: f64, order: u8) -> f64 {
    match form {
        ClosedForm::BolthausenSznitman | ClosedForm::BetaA1 => {
            // γ = b(x+b−1)(Ψ(x+b)−Ψ(b)) − bx
            let d = digamma_diff(b, x);
            match order {
                0 => b * (x + b - 1.0) * d - b * x,
                1 => b * d + b * (x + b - 1.0) * trigamma(x + b) - b,
                _ => 2.0 * b * trigamma(x + b) + b * (x + b - 1.0) * tetragamma(x + b),
            }
        }
        ClosedForm::BetaA2 => {
            // γ = (b+1)x − b(b+1)(Ψ(x+b)−Ψ(b))
            let c = b * (b + 1.0);
            match order {
                0 => (b + 1.0) * x - c * digamma_diff(b, x),
                1 => (b + 1.0) - c * trigamma(x + b),
                _ => -c * tetragamma(x + b),
            }
        }
        ClosedForm::BetaGeneral => {
            let k = 1.0 / ((a - 1.0) * (a - 2.0));
            let s = a + b;
            let p = (x + s - 1.0) * (x + s - 2.0);
            let r = (ln_beta(a, x + b) - ln_beta(a, b)).exp();
            match order {
                0 => {
                    let c1 = (s - 1.0) / (a - 1.0);
                    let c0 = (s - 1.0) * (s - 2.0) * k;
                    k * p * r + c1 * x - c0
                }
                _ => {
                    let dp = 2.0 * x + 2.0 * s - 3.0;
                    // Ψ(x+b) − Ψ(x+a+b)
                    let e = -digamma_diff(x + b, a);
                    let r1 = r * e;
                    if order == 1 {
                        k * (dp * r + p * r1) + (s - 1.0) / (a - 1.0)
                    } else {
                        let r2 = r * (e * e + trigamma(x + b) - trigamma(x + s));
                        k * (2.0 * r + 2.0 * dp * r1 + p * r2)
                    }
                }
            }
        }
    }
}

/// `F(t) = ∫ Σ 1{u_i ≤ t} log²(1 − u_i) ν(du)` for `t ∈ [0, 1)`.
pub fn f_func(m: &CoalescentMeasure, t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(domain(format!("F needs t in [0, 1), got {t}")));
    }
    truncated_moment(m, t, &|u, l| (l / u).powi(2), &|u| {
        let l = (-u).ln_1p();
        l * l
    })
}

/// `G(t) = ∫ Σ 1{u_i ≤ t} u_i² ν(du)` for `t ∈ [0, 1]`.
pub fn g_func(m: &CoalescentMeasure, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(domain(format!("G needs t in [0, 1], got {t}")));
    }
    truncated_moment(m, t, &|_u, _l| 1.0, &|u| u * u)
}

/// `lam(u, log(1−u))` integrates against `Λ` on `(0, t]`; `coord(u_i)`
/// is summed over Ξ-atom coordinates `u_i ≤ t`, weighted by `ν`.
fn truncated_moment(
    m: &CoalescentMeasure,
    t: f64,
    lam: &dyn Fn(f64, f64) -> f64,
    coord: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    match m.family() {
        Family::XiAtoms(atoms) => Ok(atoms
            .atoms
            .iter()
            .map(|at| {
                at.nu_mass * at.point.coords().iter().filter(|&&u| u <= t).map(|&u| coord(u)).sum::<f64>()
            })
            .sum()),
        Family::Mixture(parts) => {
            let mut acc = 0.0;
            for (w, part) in parts {
                acc += w * truncated_moment(part, t, lam, coord)?;
            }
            Ok(acc)
        }
        _ => {
            let g = |u: f64, v: f64| {
                let l = if u < 0.5 { (-u).ln_1p() } else { v.ln() };
                lam(u, l)
            };
            m.lambda_integral(&g, t, QuadOptions::with_tol(1e-300, 1e-12))
        }
    }
}

/// `Λ([0, t])` including the Kingman atom at 0.
pub fn lambda_cdf(m: &CoalescentMeasure, t: f64) -> Result<f64> {
    if !m.is_lambda() {
        return Err(Error::MethodMismatch("Λ([0, t]) needs a Λ-measure".into()));
    }
    Ok(m.kingman_mass() + g_func(m, t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KappaMethod {
    SecondDeriv,
    Gap,
    FRatio,
    GRatio,
    LambdaRatio,
}

impl KappaMethod {
    pub const ALL: [KappaMethod; 5] =
        [KappaMethod::SecondDeriv, KappaMethod::Gap, KappaMethod::FRatio, KappaMethod::GRatio, KappaMethod::LambdaRatio];

    pub fn name(self) -> &'static str {
        match self {
            KappaMethod::SecondDeriv => "second_deriv",
            KappaMethod::Gap => "gap",
            KappaMethod::FRatio => "F_ratio",
            KappaMethod::GRatio => "G_ratio",
            KappaMethod::LambdaRatio => "lambda_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the probe is a large `x` (true) or a small `t` (false).
    pub fn probes_x(self) -> bool {
        matches!(self, KappaMethod::SecondDeriv | KappaMethod::Gap)
    }

    pub fn applies_to(self, m: &CoalescentMeasure) -> bool {
        self != KappaMethod::LambdaRatio || m.is_lambda()
    }

    /// Default probe ladder, last entry closest to the limit.
    pub fn ladder(self) -> &'static [f64] {
        if self.probes_x() {
            &[1e2, 1e3, 1e4, 1e5, 1e6]
        } else {
            &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
        }
    }
}

/// Finite-probe estimate of `κ` by the chosen route.
pub fn curvature_kappa(m: &CoalescentMeasure, method: KappaMethod, probe: f64) -> Result<f64> {
    if method.probes_x() {
        if !(probe > 1.0) {
            return Err(domain(format!("{} needs probe > 1", method.name())));
        }
    } else if !(probe > 0.0 && probe < 1.0) {
        return Err(domain(format!("{} needs probe in (0, 1)", method.name())));
    }
    let v = match method {
        KappaMethod::SecondDeriv => probe * gamma_deriv(m, probe, 2)?,
        KappaMethod::Gap => gamma_deriv(m, probe, 1)? - gamma(m, probe)? / probe,
        KappaMethod::FRatio => f_func(m, probe)? / probe,
        KappaMethod::GRatio => g_func(m, probe)? / probe,
        KappaMethod::LambdaRatio => lambda_cdf(m, probe)? / probe,
    };
    Ok(v.max(0.0))
}

/// Estimates along a probe ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaLadder {
    pub method: KappaMethod,
    pub points: Vec<(f64, f64)>,
}

impl KappaLadder {
    pub fn last(&self) -> (f64, f64) {
        *self.points.last().unwrap()
    }

    /// Difference between the last two estimates.
    pub fn spread(&self) -> f64 {
        match self.points.len() {
            0 | 1 => 0.0,
            n => (self.points[n - 1].1 - self.points[n - 2].1).abs(),
        }
    }
}

pub fn kappa_ladder(m: &CoalescentMeasure, method: KappaMethod, probes: &[f64]) -> Result<KappaLadder> {
    if !method.applies_to(m) {
        return Err(Error::MethodMismatch(format!("{} needs a Λ-measure", method.name())));
    }
    let mut points = Vec::with_capacity(probes.len());
    for &p in probes {
        points.push((p, curvature_kappa(m, method, p)?));
    }
    Ok(KappaLadder { method, points })
}

/// `κ` where the family determines it analytically.
pub fn kappa_exact(m: &CoalescentMeasure) -> Option<f64> {
    if m.own_kingman() > 0.0 {
        return Some(f64::INFINITY);
    }
    match m.family() {
        Family::Empty => Some(0.0),
        Family::LambdaBeta { a, b } => Some(if *a < 1.0 {
            f64::INFINITY
        } else if *a == 1.0 {
            *b
        } else {
            0.0
        }),
        Family::LambdaNlg { alpha, rho } => Some(if *alpha < 1.0 || (*alpha == 1.0 && *rho > 1.0) {
            f64::INFINITY
        } else if *alpha == 1.0 && *rho == 1.0 {
            1.0
        } else {
            0.0
        }),
        Family::LambdaAtoms(_) => Some(0.0),
        Family::XiAtoms(x) => match &x.geometric {
            Some((p, _)) => Some(-1.0 / p.ln()),
            None => Some(0.0),
        },
        Family::LambdaDensity(d) => d.kappa,
        Family::Mixture(parts) => {
            let mut acc = 0.0;
            for (w, part) in parts {
                acc += w * kappa_exact(part)?;
            }
            Some(acc)
        }
    }
}

/// `L(x) = exp(γ(x)/x − κ log x)`.
pub fn slowly_varying_l(m: &CoalescentMeasure, kappa: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain("L needs x > 0"));
    }
    Ok((gamma(m, x)? / x - kappa * x.ln()).exp())
}

/// Rate-function summary of one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    /// Last-probe estimate `(value, probe)` per applicable method.
    pub kappa_estimates: BTreeMap<KappaMethod, (f64, f64)>,
    /// Difference between the last two ladder values per method.
    pub kappa_spread: BTreeMap<KappaMethod, f64>,
    /// `κ` from the family when known.
    pub kappa_exact: Option<f64>,
    /// `μ = ∫ |u| ν(du)`, `+∞` without dust.
    pub mu: f64,
    pub kingman_mass: f64,
    pub closed_form: Option<ClosedForm>,
}

impl RateProfile {
    pub fn compute(m: &CoalescentMeasure) -> Result<Self> {
        let mut kappa_estimates = BTreeMap::new();
        let mut kappa_spread = BTreeMap::new();
        for method in KappaMethod::ALL {
            if !method.applies_to(m) {
                continue;
            }
            let ladder = kappa_ladder(m, method, method.ladder())?;
            kappa_estimates.insert(method, (ladder.last().1, ladder.last().0));
            kappa_spread.insert(method, ladder.spread());
        }
        Ok(Self {
            kappa_estimates,
            kappa_spread,
            kappa_exact: kappa_exact(m),
            mu: m.dust_mass()?,
            kingman_mass: m.kingman_mass(),
            closed_form: closed_form(m),
        })
    }

    /// Best available `κ`: the analytic value, else the second-derivative
    /// estimate at the largest probe.
    pub fn kappa(&self) -> f64 {
        self.kappa_exact
            .or_else(|| self.kappa_estimates.get(&KappaMethod::SecondDeriv).map(|e| e.0))
            .unwrap_or(f64::NAN)
    }

    pub fn has_dust(&self) -> bool {
        self.kingman_mass == 0.0 && self.mu.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Multiplicity;
    use crate::simplex::SimplexPoint;
    use alloc::vec;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn beta(a: f64, b: f64) -> CoalescentMeasure {
        CoalescentMeasure::beta(a, b).unwrap()
    }

    fn quad_opts() -> RateOptions {
        RateOptions { force_quadrature: true, ..RateOptions::default() }
    }

    #[test]
    fn vanishes_at_zero_and_one() {
        for m in [beta(1.0, 1.0), beta(3.0, 2.0), CoalescentMeasure::nlg(1.0, 0.5).unwrap()] {
            assert_eq!(gamma(&m, 0.0).unwrap(), 0.0);
            assert_eq!(gamma(&m, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn bolthausen_sznitman_small_values() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        assert!(rel(gamma(&m, 2.0).unwrap(), 1.0) < 1e-14);
        assert!(rel(gamma(&m, 3.0).unwrap(), 2.5) < 1e-14);
        assert!(rel(gamma(&beta(2.0, 1.0), 2.0).unwrap(), 1.0) < 1e-14);
    }

    #[test]
    fn kingman_second_derivative_is_mass() {
        let m = CoalescentMeasure::kingman(1.0).unwrap();
        for x in [0.5, 3.0, 1e5] {
            assert_eq!(gamma_deriv(&m, x, 2).unwrap(), 1.0);
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for (a, b) in [(1.0, 1.0), (1.0, 0.5), (1.0, 2.0), (2.0, 1.0), (2.0, 3.0), (3.0, 2.0), (1.5, 0.7), (0.5, 1.0)] {
            let m = beta(a, b);
            for x in [1.5, 2.0, 7.3, 40.0, 1e3] {
                for order in 0..=2u8 {
                    let c = gamma_with(&m, x, order, RateOptions::default()).unwrap();
                    let q = gamma_with(&m, x, order, quad_opts()).unwrap();
                    assert!(rel(c, q) < 1e-9, "beta({a},{b}) x={x} order {order}: {c} vs {q}");
                }
            }
        }
    }

    #[test]
    fn near_singular_beta_parameters_fall_back_to_quadrature() {
        let m = beta(1.0 + 1e-9, 1.0);
        assert_eq!(closed_form(&m), None);
        let bs = gamma(&CoalescentMeasure::bolthausen_sznitman(), 50.0).unwrap();
        assert!(rel(gamma(&m, 50.0).unwrap(), bs) < 1e-7);
    }

    #[test]
    fn bs_curvature_at_large_x() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let k = curvature_kappa(&m, KappaMethod::SecondDeriv, 1e6).unwrap();
        assert!((k - 1.0).abs() < 0.01, "{k}");
    }

    #[test]
    fn first_derivative_matches_finite_difference() {
        let ms = [
            beta(1.0, 1.0),
            beta(3.0, 2.0),
            CoalescentMeasure::nlg(1.0, 0.5).unwrap(),
            CoalescentMeasure::geometric(0.5, Multiplicity::Const(1), None).unwrap(),
        ];
        for m in &ms {
            for x in [2.0, 17.0, 300.0] {
                let h = 1e-4 * x;
                let fd = (gamma(m, x + h).unwrap() - gamma(m, x - h).unwrap()) / (2.0 * h);
                let d = gamma_deriv(m, x, 1).unwrap();
                assert!(rel(d, fd) < 1e-6, "{m:?} x={x}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn geometric_curvature_oscillates_around_kappa_p() {
        let m = CoalescentMeasure::geometric(0.5, Multiplicity::Const(1), None).unwrap();
        let kp = 1.0 / core::f64::consts::LN_2;
        // G(t)/t is 2 p^{m0}/t with p^{m0} the largest atom at most t
        let g = curvature_kappa(&m, KappaMethod::GRatio, 1e-5).unwrap();
        assert!(rel(g, 2.0 * 2f64.powi(-17) / 1e-5) < 1e-6, "{g}");
        assert!(rel(g, kp) > 0.02);
        assert_eq!(kappa_exact(&m), Some(kp));
    }

    #[test]
    fn f_and_g_for_single_atom() {
        let p = SimplexPoint::new(vec![0.25, 0.25]).unwrap();
        let m = CoalescentMeasure::xi_atoms(vec![(p, 0.25)]).unwrap();
        assert!(rel(g_func(&m, 0.75).unwrap(), 0.25) < 1e-15);
        assert_eq!(g_func(&m, 0.125).unwrap(), 0.0);
        assert_eq!(f_func(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn lambda_cdf_is_g_for_lambda_measures() {
        let m = beta(1.0, 2.0);
        // Λ([0, t]) = 1 − (1 − t)^2
        let t = 0.3;
        assert!(rel(lambda_cdf(&m, t).unwrap(), 1.0 - 0.49) < 1e-12);
        let x = CoalescentMeasure::geometric(0.5, Multiplicity::Const(1), None).unwrap();
        assert!(x.is_lambda());
        let xi = CoalescentMeasure::geometric(0.25, Multiplicity::Const(2), None).unwrap();
        assert!(matches!(lambda_cdf(&xi, 0.1), Err(Error::MethodMismatch(_))));
    }

    #[test]
    fn dust_profile_and_l_limit() {
        let m = beta(2.0, 1.0);
        let p = RateProfile::compute(&m).unwrap();
        assert!(p.has_dust());
        assert_eq!(p.mu, 2.0);
        let l = slowly_varying_l(&m, 0.0, 1e8).unwrap();
        assert!(rel(l, 2f64.exp()) < 1e-5, "{l}");
    }

    #[test]
    fn bs_l_limit() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let target = (-(1.0 + crate::special::digamma(1.0))).exp();
        let l = slowly_varying_l(&m, 1.0, 1e8).unwrap();
        assert!(rel(l, target) < 1e-6, "{l} vs {target}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bounded_positive_and_convex(a in 0.3f64..4.0, b in 0.2f64..4.0, x in 1.05f64..1e4) {
            let m = beta(a, b);
            let g = gamma(&m, x).unwrap();
            prop_assert!(g > 0.0);
            if x >= 2.0 {
                prop_assert!(g <= x * (x - 1.0) * 0.5 * (1.0 + 1e-12));
            }
            prop_assert!(gamma_deriv(&m, x, 2).unwrap() >= 0.0);
        }

        #[test]
        fn gamma_over_x_increases(a in 0.3f64..4.0, b in 0.2f64..4.0, x in 1.0f64..1e5) {
            let m = beta(a, b);
            let y = x * 1.3;
            prop_assert!(gamma(&m, y).unwrap() / y > gamma(&m, x).unwrap() / x);
        }

        #[test]
        fn f_dominates_g(t in 0.0f64..0.999, s in 0.0f64..1.0) {
            let m = CoalescentMeasure::nlg(1.0, 0.7).unwrap();
            let (f, g) = (f_func(&m, t).unwrap(), g_func(&m, t).unwrap());
            prop_assert!(g <= f * (1.0 + 1e-12));
            let t2 = t * s;
            prop_assert!(g_func(&m, t2).unwrap() <= g * (1.0 + 1e-12));
        }
    }
}
