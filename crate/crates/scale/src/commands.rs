//! Table-producing subcommands.

use anyhow::bail;
use coalesce_core::engine::{check_siegmund_duality, generator_matrix, Process};
use coalesce_core::limit::LimitLaw;
use coalesce_core::measure::CoalescentMeasure;
use coalesce_core::rate::{gamma, gamma_deriv, kappa_exact, RateProfile};
use coalesce_core::scaling::{v_asymptotic, ScalingSolver};
use coalesce_core::sim::{PathSampler, RngPolicy};

use crate::experiment::{asymptotic_regime, draw_scaled, limit_kappa, require_stays_infinite};
use crate::config::Params;
use crate::output::{num, Table};

/// `points` log-spaced values on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> anyhow::Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || points == 0 {
        bail!("log grid needs 0 < lo <= hi and at least one point");
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect())
}

/// `x, γ, γ′, γ″, xγ″, L` over the grid.
pub fn rates(m: &CoalescentMeasure, xs: &[f64]) -> anyhow::Result<Table> {
    let kappa = match kappa_exact(m) {
        Some(k) => k,
        None => RateProfile::compute(m)?.kappa(),
    };
    let mut t = Table::new(&["x", "gamma", "gamma1", "gamma2", "x_gamma2", "L"]);
    for &x in xs {
        let g = gamma(m, x)?;
        let g1 = gamma_deriv(m, x, 1)?;
        let g2 = gamma_deriv(m, x, 2)?;
        let l = if kappa.is_finite() && x > 0.0 { (g / x - kappa * x.ln()).exp() } else { f64::NAN };
        t.push(vec![num(x), num(g), num(g1), num(g2), num(x * g2), num(l)]);
    }
    Ok(t)
}

/// `x, t, v, w, closed_form, ratio`; the closed-form columns are empty
/// without a known regime.
pub fn scaling(m: &CoalescentMeasure, xs: &[f64], ts: &[f64]) -> anyhow::Result<Table> {
    let solver = ScalingSolver::new(m)?;
    let tag = asymptotic_regime(m);
    let mut table = Table::new(&["x", "t", "v", "w", "closed_form", "ratio"]);
    for &x in xs {
        for &t in ts {
            let v = solver.v_scale(x, t)?;
            let w = solver.w_scale(x, t)?;
            let (cf, ratio) = match tag.map(|tag| v_asymptotic(tag, x, t)) {
                Some(Ok(c)) => (num(c), num(v / c)),
                _ => (String::new(), String::new()),
            };
            table.push(vec![num(x), num(t), num(v), num(w), cf, ratio]);
        }
    }
    Ok(table)
}

/// Generator entries `(row, col, rate)` on states `1..=n`.
pub fn rates_table(m: &CoalescentMeasure, n: usize, process: Process) -> anyhow::Result<Table> {
    let q = generator_matrix(m, n, process)?;
    let mut t = Table::new(&["row", "col", "rate"]);
    for (r, c, v) in q.entries() {
        t.push(vec![r.to_string(), c.to_string(), num(v)]);
    }
    Ok(t)
}

pub fn duality_check(m: &CoalescentMeasure, n_max: usize, ts: &[f64], tol: f64) -> anyhow::Result<(Table, bool)> {
    let mut t = Table::new(&["t", "n_max", "max_discrepancy", "max_defect", "pass"]);
    let mut all = true;
    for &time in ts {
        let r = check_siegmund_duality(m, n_max, time)?;
        let pass = r.max_discrepancy <= tol;
        all &= pass;
        t.push(vec![num(time), n_max.to_string(), num(r.max_discrepancy), num(r.max_defect), pass.to_string()]);
    }
    Ok((t, all))
}

/// `rep, value, raw`: scaled log block count and `N_t^{(n)}`.
pub fn simulate(m: &CoalescentMeasure, n: usize, t: f64, reps: usize, seed: u64) -> anyhow::Result<Table> {
    if n < 1 || reps == 0 {
        bail!("simulate needs n >= 1 and reps >= 1");
    }
    require_stays_infinite(m)?;
    let solver = ScalingSolver::new(m)?;
    let sampler = PathSampler::new(m, n)?;
    let samples = draw_scaled(&sampler, n, t, reps, 0, &RngPolicy::new(seed), &solver, None)?;
    let mut table = Table::new(&["rep", "value", "raw"]);
    for (i, (value, raw)) in samples.into_iter().enumerate() {
        table.push(vec![i.to_string(), num(value), raw.to_string()]);
    }
    Ok(table)
}

/// `(x, Re φ_t, Im φ_t)` and `(q, CDF(q))`.
pub fn limit_cf(
    m: &CoalescentMeasure,
    kappa: Option<f64>,
    t: f64,
    xs: &[f64],
    qs: &[f64],
) -> anyhow::Result<(Table, Table)> {
    let params = Params { kappa, ..Params::default() };
    let kappa = limit_kappa(m, &params)?;
    let law = LimitLaw::new(m, kappa, t)?;
    let mut cf = Table::new(&["x", "re", "im"]);
    for &x in xs {
        let z = law.phi(m, x)?;
        cf.push(vec![num(x), num(z.re), num(z.im)]);
    }
    let grid = law.cdf_grid(qs)?;
    let mut cdf = Table::new(&["q", "cdf"]);
    for (q, v) in grid.grid.iter().zip(&grid.values) {
        cdf.push(vec![num(*q), num(*v)]);
    }
    Ok((cf, cdf))
}
