//! Scaling functions `v(x, t)` and `w(x, t)` defined by
//! `∫_{v}^{x} du/γ(u) = t` and `∫_{x}^{w} du/γ(u) = t`, and the speed of
//! coming down from infinity.
//!
//! All integrals are taken in `r = log(u − 1)`, where `du/γ(u)` becomes
//! `e^r / γ(1 + e^r) dr`. This stays bounded as `u → 1` and moves the root
//! finding to a scale where `v → 1` is just `r → −∞`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::cell::RefCell;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{domain, Error, Result};
use crate::measure::{comes_down_known, CoalescentMeasure};
use crate::quad::{integrate, integrate_to_inf, QuadOptions};
use crate::rate::{gamma, gamma_deriv};
use crate::special::{digamma, ln_gamma};

/// Something with a rate function `γ` on `(1, ∞)`.
pub trait RateFunction: Sync {
    fn rate(&self, x: f64) -> Result<f64>;

    /// `γ(1 + d)`, for implementations that resolve `d` below the spacing
    /// of doubles near 1.
    fn rate_above_one(&self, d: f64) -> Result<f64> {
        self.rate(1.0 + d)
    }

    /// Grey's condition (`∫^∞ du/γ(u) < ∞`) when known.
    fn grey(&self) -> Option<bool> {
        None
    }
}

/// Below this `u − 1` the rate is taken from its second-order expansion
/// at 1, which is more accurate than the closed forms there.
const NEAR_ONE: f64 = 1e-5;

impl RateFunction for CoalescentMeasure {
    fn rate(&self, x: f64) -> Result<f64> {
        gamma(self, x)
    }

    fn rate_above_one(&self, d: f64) -> Result<f64> {
        if d >= NEAR_ONE {
            return gamma(self, 1.0 + d);
        }
        Ok(d * gamma_deriv(self, 1.0, 1)? + 0.5 * d * d * gamma_deriv(self, 1.0, 2)?)
    }

    fn grey(&self) -> Option<bool> {
        comes_down_known(self)
    }
}

/// A rate function given by a closure, for oracles.
pub struct SyntheticRate {
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    grey: Option<bool>,
}

impl SyntheticRate {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, grey: Option<bool>) -> Self {
        Self { f: Box::new(f), grey }
    }

    /// `γ(x) = κ x log x + x log C`, the constant-`L` rate.
    pub fn constant_l(kappa: f64, c: f64) -> Self {
        let lc = c.ln();
        Self::new(move |x| x * (kappa * x.ln() + lc), Some(false))
    }
}

impl RateFunction for SyntheticRate {
    fn rate(&self, x: f64) -> Result<f64> {
        Ok((self.f)(x))
    }

    fn grey(&self) -> Option<bool> {
        self.grey
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingOptions {
    /// Absolute tolerance on the `t`-residual.
    pub t_tol: f64,
    /// Bisection stops at this width in `log(u − 1)`.
    pub bisect_width: f64,
    /// Panels are tabulated for `u ∈ [1 + e^{r_min}, x_max]`.
    pub r_min: f64,
    pub x_max: f64,
    pub panel: f64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self { t_tol: 1e-12, bisect_width: 1e-3, r_min: -14.0, x_max: 1e8, panel: 0.5 }
    }
}

/// `log(u − 1)` beyond which `u` is treated as overflow.
const R_OVERFLOW: f64 = 700.0;
/// `log(u − 1)` below which `u` rounds to 1.
const R_UNDERFLOW: f64 = -740.0;

/// Solver for `v`, `w` and the cdi speed with a tabulated primitive of
/// `du/γ(u)`. The table is filled at construction and never changes, so a
/// solver can be shared freely between threads.
pub struct ScalingSolver<'a, R: RateFunction + ?Sized> {
    rate: &'a R,
    opts: ScalingOptions,
    r0: f64,
    /// `cum[i] = ∫_{r0}^{r0 + i h} e^r/γ(1 + e^r) dr`.
    cum: Vec<f64>,
}

fn quad_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_intervals: 400 }
}

impl<'a, R: RateFunction + ?Sized> ScalingSolver<'a, R> {
    pub fn new(rate: &'a R) -> Result<Self> {
        Self::with_options(rate, ScalingOptions::default())
    }

    pub fn with_options(rate: &'a R, opts: ScalingOptions) -> Result<Self> {
        if !(opts.panel > 0.0) || !(opts.x_max > 2.0) {
            return Err(domain("scaling panels need positive width and x_max > 2"));
        }
        // align the grid so that u = 2 (r = 0) is a panel boundary
        let r0 = (opts.r_min / opts.panel).floor() * opts.panel;
        let n = ((opts.x_max - 1.0).ln() - r0) / opts.panel;
        let n = n.ceil() as usize;
        let mut s = Self { rate, opts, r0, cum: Vec::with_capacity(n + 1) };
        let mut acc = 0.0;
        s.cum.push(0.0);
        for i in 0..n {
            let a = r0 + i as f64 * opts.panel;
            acc += s.integral(a, a + opts.panel)?;
            s.cum.push(acc);
        }
        Ok(s)
    }

    fn r_max(&self) -> f64 {
        self.r0 + (self.cum.len() - 1) as f64 * self.opts.panel
    }

    /// `e^r / γ(1 + e^r)`.
    fn integrand(&self, r: f64) -> Result<f64> {
        if r > R_OVERFLOW {
            return Ok(0.0);
        }
        let d = r.exp();
        let g = self.rate.rate_above_one(d)?;
        if !(g > 0.0) {
            return Err(Error::Solver(format!("rate function is not positive at u = {}", 1.0 + d)));
        }
        Ok(d / g)
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let err = RefCell::new(None);
        let f = |r: f64| match self.integrand(r) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        // close to u = 1 the rate itself is only accurate to about
        // 1e-16 / (u − 1), so noise-limited panels are accepted
        let v = match integrate(f, a, b, quad_opts()) {
            Ok(r) => r.value,
            Err(Error::Quadrature { estimate, error }) if error <= 1e-8 * estimate.abs() + 1e-12 => estimate,
            Err(e) => return Err(e),
        };
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// `H(r) = ∫_{r0}^{r} e^s/γ(1 + e^s) ds`.
    fn primitive(&self, r: f64) -> Result<f64> {
        if r <= self.r0 {
            return Ok(-self.integral(r, self.r0)?);
        }
        let h = self.opts.panel;
        let i = ((r - self.r0) / h).floor() as usize;
        if i + 1 >= self.cum.len() {
            let last = self.cum.len() - 1;
            return Ok(self.cum[last] + self.integral(self.r_max(), r)?);
        }
        let a = self.r0 + i as f64 * h;
        Ok(self.cum[i] + self.integral(a, r)?)
    }

    /// `∫_a^b du/γ(u)` for `1 < a ≤ b`.
    pub fn time_between(&self, a: f64, b: f64) -> Result<f64> {
        if !(a > 1.0 && b >= a) {
            return Err(domain(format!("time_between needs 1 < a <= b, got [{a}, {b}]")));
        }
        Ok(self.primitive((b - 1.0).ln())? - self.primitive((a - 1.0).ln())?)
    }

    /// Root of `H(r) = target` with `lo < r < hi` and `H(lo) < target < H(hi)`.
    fn solve(&self, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        while hi - lo > self.opts.bisect_width {
            let mid = 0.5 * (lo + hi);
            if self.primitive(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..60 {
            let res = self.primitive(r)? - target;
            if res.abs() <= self.opts.t_tol {
                return Ok(r);
            }
            if res < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let step = res / self.integrand(r)?;
            let next = r - step;
            r = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * r.abs().max(1.0) {
                return Ok(r);
            }
        }
        Err(Error::Solver(format!("Newton iteration did not reach residual {:e}", self.opts.t_tol)))
    }

    /// Panel index bracketing `target`, searching the table first.
    fn table_bracket(&self, target: f64) -> Option<(f64, f64)> {
        let i = self.cum.partition_point(|&c| c < target);
        if i == 0 || i >= self.cum.len() {
            return None;
        }
        let h = self.opts.panel;
        Some((self.r0 + (i - 1) as f64 * h, self.r0 + i as f64 * h))
    }

    /// `v(x, t)` with `∫_{v}^{x} du/γ(u) = t`.
    pub fn v_scale(&self, x: f64, t: f64) -> Result<f64> {
        check_args(x, t)?;
        if t == 0.0 {
            return Ok(x);
        }
        let rx = (x - 1.0).ln();
        let target = self.primitive(rx)? - t;
        let (lo, hi) = match self.table_bracket(target) {
            Some((lo, hi)) if hi <= rx => (lo, hi),
            _ => {
                let mut hi = rx;
                let mut step = self.opts.panel;
                let mut lo = rx - step;
                while self.primitive(lo)? >= target {
                    hi = lo;
                    step *= 2.0;
                    lo = (lo - step).max(R_UNDERFLOW);
                    if lo <= R_UNDERFLOW {
                        if self.primitive(lo)? >= target {
                            return Err(Error::Solver(format!("v({x}, {t}) collapses to 1")));
                        }
                        break;
                    }
                }
                (lo, hi)
            }
        };
        let r = self.solve(target, lo, hi)?;
        let v = 1.0 + r.exp();
        if v <= 1.0 {
            return Err(Error::Solver(format!("v({x}, {t}) collapses to 1")));
        }
        Ok(v.min(x))
    }

    /// `w(x, t)` with `∫_{x}^{w} du/γ(u) = t`.
    pub fn w_scale(&self, x: f64, t: f64) -> Result<f64> {
        check_args(x, t)?;
        if t == 0.0 {
            return Ok(x);
        }
        if self.rate.grey() == Some(true) {
            return Err(grey_error(x, t));
        }
        let rx = (x - 1.0).ln();
        let target = self.primitive(rx)? + t;
        let (lo, hi) = match self.table_bracket(target) {
            Some((lo, hi)) if lo >= rx => (lo, hi),
            _ => {
                let mut lo = rx;
                let mut step = self.opts.panel;
                let mut hi = rx + step;
                while self.primitive(hi)? <= target {
                    lo = hi;
                    step *= 2.0;
                    hi += step;
                    if hi > R_OVERFLOW {
                        return Err(grey_error(x, t));
                    }
                }
                (lo, hi)
            }
        };
        let r = self.solve(target, lo, hi)?;
        Ok((1.0 + r.exp()).max(x))
    }

    /// Speed of coming down from infinity: `∫_{v(t)}^{∞} du/γ(u) = t`.
    pub fn cdi_speed(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(domain(format!("cdi speed needs t > 0, got {t}")));
        }
        if self.rate.grey() == Some(false) {
            return Err(Error::UnsupportedMeasure("Grey's condition fails: the coalescent stays infinite".into()));
        }
        let err = RefCell::new(None);
        let f = |r: f64| match self.integrand(r) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        let tail = integrate_to_inf(f, self.r_max(), QuadOptions::with_tol(1e-15, 1e-12))
            .map_err(|_| Error::UnsupportedMeasure("Grey's condition fails: tail of 1/γ diverges".into()))?
            .value;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let total = self.cum[self.cum.len() - 1] + tail;
        // H(r) = total − t
        let target = total - t;
        let (lo, hi) = match self.table_bracket(target) {
            Some(b) => b,
            None if target >= self.cum[self.cum.len() - 1] => {
                let mut lo = self.r_max();
                let mut hi = lo + 1.0;
                while self.primitive(hi)? <= target {
                    lo = hi;
                    hi += 2.0 * (hi - self.r_max());
                    if hi > R_OVERFLOW {
                        return Err(Error::Solver(format!("cdi speed at t = {t} overflows")));
                    }
                }
                (lo, hi)
            }
            None => {
                let mut hi = self.r0;
                let mut lo = hi - 1.0;
                while self.primitive(lo)? >= target {
                    hi = lo;
                    lo -= 2.0 * (self.r0 - lo);
                    if lo < R_UNDERFLOW {
                        return Err(Error::Solver(format!("cdi speed at t = {t} collapses to 1")));
                    }
                }
                (lo, hi)
            }
        };
        Ok(1.0 + self.solve(target, lo, hi)?.exp())
    }
}

fn check_args(x: f64, t: f64) -> Result<()> {
    if !(x > 1.0) || !x.is_finite() {
        return Err(domain(format!("scaling needs x > 1, got {x}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("scaling needs t >= 0, got {t}")));
    }
    Ok(())
}

fn grey_error(x: f64, t: f64) -> Error {
    Error::Solver(format!(
        "w({x}, {t}) diverges: the measure satisfies Grey's condition and comes down from infinity"
    ))
}

/// Closed-form scaling regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Asymptotic {
    /// Dust with mass `μ`: `v ∼ x e^{−μt}`.
    Dust { mu: f64 },
    /// `beta(1, b)`: `v ∼ x^{e^{−bt}} e^{(Ψ(b)+1)(1−e^{−bt})}`.
    Beta1b { b: f64 },
    /// NLG with `α = 1`, `ρ < 1`.
    Nlg { rho: f64 },
    /// `γ(x) = κ x log x + x log C`, exact.
    ConstantL { kappa: f64, c: f64 },
}

impl Asymptotic {
    /// `(κ, log C)` of the equivalent constant-`L` rate.
    fn constant_l(self) -> Option<(f64, f64)> {
        match self {
            Asymptotic::Dust { mu } => Some((0.0, mu)),
            Asymptotic::Beta1b { b } => Some((b, -b * (digamma(b) + 1.0))),
            Asymptotic::ConstantL { kappa, c } => Some((kappa, c.ln())),
            Asymptotic::Nlg { .. } => None,
        }
    }
}

/// `log x` evolved along `z' = ∓(κ z + log C)`.
fn flow_log(kappa: f64, lc: f64, lx: f64, t: f64) -> f64 {
    if kappa == 0.0 {
        lx + lc * t
    } else {
        let e = (kappa * t).exp();
        e * lx + lc * (e - 1.0) / kappa
    }
}

fn nlg_c(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(domain(format!("NLG asymptotics need 0 < rho < 1, got {rho}")));
    }
    Ok((1.0 - rho) / ln_gamma(1.0 + rho).exp())
}

/// Closed-form `v(x, t)` of the given regime.
pub fn v_asymptotic(tag: Asymptotic, x: f64, t: f64) -> Result<f64> {
    check_args(x, t)?;
    if t == 0.0 {
        return Ok(x);
    }
    match tag.constant_l() {
        Some((kappa, lc)) => Ok(flow_log(-kappa, -lc, x.ln(), t).exp()),
        None => {
            let Asymptotic::Nlg { rho } = tag else { unreachable!() };
            let base = x.ln().powf(1.0 - rho) - nlg_c(rho)? * t;
            if !(base > 0.0) {
                return Err(domain(format!("x = {x} below the existence threshold at t = {t}")));
            }
            Ok(base.powf(1.0 / (1.0 - rho)).exp())
        }
    }
}

/// Closed-form `w(x, t)` of the given regime.
pub fn w_asymptotic(tag: Asymptotic, x: f64, t: f64) -> Result<f64> {
    check_args(x, t)?;
    if t == 0.0 {
        return Ok(x);
    }
    match tag.constant_l() {
        Some((kappa, lc)) => Ok(flow_log(kappa, lc, x.ln(), t).exp()),
        None => {
            let Asymptotic::Nlg { rho } = tag else { unreachable!() };
            let base = x.ln().powf(1.0 - rho) + nlg_c(rho)? * t;
            Ok(base.powf(1.0 / (1.0 - rho)).exp())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_time_is_identity() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let s = ScalingSolver::new(&m).unwrap();
        assert_eq!(s.v_scale(17.5, 0.0).unwrap(), 17.5);
        assert_eq!(s.w_scale(17.5, 0.0).unwrap(), 17.5);
    }

    #[test]
    fn constant_l_is_exact() {
        for (kappa, c) in [(1.0, 1.0), (0.5, 2.0), (2.0, 1.3)] {
            let g = SyntheticRate::constant_l(kappa, c);
            let s = ScalingSolver::new(&g).unwrap();
            for (x, t) in [(1e6, 0.5), (1e3, 1.0), (50.0, 0.2)] {
                let want = v_asymptotic(Asymptotic::ConstantL { kappa, c }, x, t).unwrap();
                if want <= 1.5 {
                    continue;
                }
                let got = s.v_scale(x, t).unwrap();
                assert!(rel(got, want) < 1e-10, "κ={kappa} C={c} x={x} t={t}: {got} vs {want}");
                let w = s.w_scale(x, t).unwrap();
                let ww = w_asymptotic(Asymptotic::ConstantL { kappa, c }, x, t).unwrap();
                assert!(rel(w, ww) < 1e-10);
            }
        }
    }

    #[test]
    fn beta_one_b_regular_variation() {
        for b in [0.5, 1.0, 2.0] {
            let m = CoalescentMeasure::beta(1.0, b).unwrap();
            let s = ScalingSolver::new(&m).unwrap();
            for t in [0.5, 1.0] {
                let x = 1e6;
                let r = s.v_scale(x, t).unwrap() / v_asymptotic(Asymptotic::Beta1b { b }, x, t).unwrap();
                if b <= 1.0 {
                    assert!((r - 1.0).abs() < 0.02, "b={b} t={t}: {r}");
                }
                if b * t > 1.5 {
                    // v(10⁶, t) ≈ 6 here, far from the asymptotic regime
                    continue;
                }
                let d = (s.v_scale(2.0 * x, t).unwrap() / s.v_scale(x, t).unwrap()).ln();
                let want = (-b * t).exp() * core::f64::consts::LN_2;
                assert!(rel(d, want) < 0.01, "b={b} t={t}: {d} vs {want}");
            }
        }
    }

    #[test]
    fn dust_w_grows_like_exp_mu_t() {
        let m = CoalescentMeasure::beta(2.0, 1.0).unwrap();
        let s = ScalingSolver::new(&m).unwrap();
        let r = s.w_scale(1e6, 1.0).unwrap() / (1e6 * 2f64.exp());
        assert!((r - 1.0).abs() < 0.02, "{r}");
    }

    #[test]
    fn inverse_and_flow() {
        let m = CoalescentMeasure::beta(1.0, 2.0).unwrap();
        let s = ScalingSolver::new(&m).unwrap();
        for x in [5.0, 1e3, 1e6] {
            for t in [0.1, 0.5, 1.0] {
                let v = s.v_scale(x, t).unwrap();
                assert!(rel(s.w_scale(v, t).unwrap(), x) < 1e-8);
                let w = s.w_scale(x, t).unwrap();
                assert!(rel(s.v_scale(w, t).unwrap(), x) < 1e-8);
                let two = s.v_scale(s.v_scale(x, 0.5 * t).unwrap(), 0.5 * t).unwrap();
                assert!(rel(two, v) < 1e-9);
            }
        }
    }

    #[test]
    fn derivative_matches_rate() {
        let m = CoalescentMeasure::bolthausen_sznitman();
        let s = ScalingSolver::new(&m).unwrap();
        let (x, t, h) = (1e4, 0.7, 1e-4);
        let fd = (s.v_scale(x, t + h).unwrap() - s.v_scale(x, t - h).unwrap()) / (2.0 * h);
        let g = gamma(&m, s.v_scale(x, t).unwrap()).unwrap();
        assert!(rel(-fd, g) < 1e-4);
    }

    #[test]
    fn cdi_speed_kingman_oracle() {
        let g = SyntheticRate::new(|u| u * (u - 1.0), Some(true));
        let s = ScalingSolver::new(&g).unwrap();
        for t in [0.01, 0.1, 1.0, 3.0] {
            let want = 1.0 / (1.0 - (-t).exp());
            assert!(rel(s.cdi_speed(t).unwrap(), want) < 1e-9, "t={t}");
        }
    }

    #[test]
    fn cdi_speed_beta_half_decreasing() {
        let m = CoalescentMeasure::beta(0.5, 1.0).unwrap();
        let s = ScalingSolver::new(&m).unwrap();
        let v: Vec<f64> = [0.01, 0.1, 1.0].iter().map(|&t| s.cdi_speed(t).unwrap()).collect();
        assert!(v[0] > v[1] && v[1] > v[2] && v[2] > 1.0);
        assert!(matches!(s.w_scale(10.0, 1.0), Err(Error::Solver(_))));
        let bs = CoalescentMeasure::bolthausen_sznitman();
        assert!(matches!(ScalingSolver::new(&bs).unwrap().cdi_speed(1.0), Err(Error::UnsupportedMeasure(_))));
    }

    #[test]
    fn asymptotic_plug_ins() {
        let e = core::f64::consts::E;
        assert!(rel(v_asymptotic(Asymptotic::Dust { mu: 2.0 }, e, 1.0).unwrap(), 1.0 / e) < 1e-15);
        assert_eq!(v_asymptotic(Asymptotic::Nlg { rho: 0.5 }, 30.0, 0.0).unwrap(), 30.0);
        let x: f64 = 1e4;
        let v = v_asymptotic(Asymptotic::ConstantL { kappa: 1.0, c: 1.0 }, x, 0.3).unwrap();
        assert!(rel(v, x.powf((-0.3f64).exp())) < 1e-14);
        assert!(v_asymptotic(Asymptotic::Nlg { rho: 0.5 }, 1.5, 10.0).is_err());
    }
}
