//! Experiment matrices: one cell per parameter combination, each with its
//! own metrics, checks evaluated over the matrix.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Context};
use coalesce_core::distance::{ecf_distance, ks_distance};
use coalesce_core::engine::check_siegmund_duality;
use coalesce_core::limit::LimitLaw;
use coalesce_core::measure::{classify, CoalescentMeasure, Family};
use coalesce_core::rate::{kappa_exact, kappa_ladder, KappaMethod, RateProfile};
use coalesce_core::scaling::{v_asymptotic, w_asymptotic, Asymptotic, ScalingSolver};
use coalesce_core::sim::{empirical_scaled_fixation, empirical_scaled_law, sample_urn_y, PathSampler, RngPolicy};
use coalesce_core::simplex::SimplexPoint;
use coalesce_core::urn::urn_pmf;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DistanceKind, ExperimentConfig, ExperimentKind, Params};
use crate::output::{num, sha256_hex, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub label: String,
    pub metrics: BTreeMap<String, f64>,
    /// `None` for cells that only feed matrix-level checks.
    pub pass: Option<bool>,
    pub error: Option<String>,
}

impl Cell {
    fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), metrics: BTreeMap::new(), pass: None, error: None }
    }

    fn set(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    fn failed(label: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self { error: Some(err.to_string()), pass: Some(false), ..Self::new(label) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub kind: String,
    pub cells: Vec<Cell>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub wall_clock_s: f64,
    pub library_version: String,
    pub config_hash: String,
}

impl ExperimentReport {
    /// One row per cell; metric columns are the union over cells.
    pub fn table(&self) -> Table {
        let mut keys: Vec<&String> = self.cells.iter().flat_map(|c| c.metrics.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut header = vec!["cell"];
        header.extend(keys.iter().map(|k| k.as_str()));
        header.extend(["pass", "error"]);
        let mut t = Table::new(&header);
        for c in &self.cells {
            let mut row = vec![c.label.clone()];
            row.extend(keys.iter().map(|k| c.metrics.get(*k).map(|v| num(*v)).unwrap_or_default()));
            row.push(c.pass.map(|p| p.to_string()).unwrap_or_default());
            row.push(c.error.clone().unwrap_or_default());
            t.push(row);
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the configured experiment. Configuration and classification
/// problems are errors; failures inside cells are recorded in the report.
pub fn run(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let m = config.measure.build()?;
    let p = &config.params;
    let (cells, checks) = match config.kind {
        ExperimentKind::ConvergenceBlock => convergence(config, &m, false)?,
        ExperimentKind::ConvergenceFixation => convergence(config, &m, true)?,
        ExperimentKind::Duality => duality(&m, p),
        ExperimentKind::KappaTable => kappa_table(&m, p),
        ExperimentKind::ScalingTable => scaling_table(&m, p)?,
        ExperimentKind::UrnBounds => urn_bounds(&m, p),
    };
    let pass = cells.iter().all(|c| c.pass != Some(false) && c.error.is_none()) && checks.iter().all(|c| c.pass);
    Ok(ExperimentReport {
        config: config.clone(),
        kind: config.kind.name().to_string(),
        cells,
        checks,
        pass,
        wall_clock_s: start.elapsed().as_secs_f64(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sha256_hex(config.canonical_json().as_bytes()),
    })
}

/// `κ` for the limit law: configured, analytic, or estimated.
pub fn limit_kappa(m: &CoalescentMeasure, p: &Params) -> anyhow::Result<f64> {
    if let Some(k) = p.kappa {
        return Ok(k);
    }
    if let Some(k) = kappa_exact(m) {
        if !k.is_finite() {
            bail!("κ = ∞ for this measure; the scaling limits need finite κ");
        }
        return Ok(k);
    }
    let k = RateProfile::compute(m)?.kappa();
    if !k.is_finite() {
        bail!("no finite κ estimate for this measure");
    }
    Ok(k)
}

/// Rejects measures whose block counting process comes down from infinity.
pub fn require_stays_infinite(m: &CoalescentMeasure) -> anyhow::Result<()> {
    let profile = RateProfile::compute(m)?;
    let c = classify(m, &profile).context("classifying the measure")?;
    if c.comes_down {
        bail!(
            "the measure satisfies Grey's condition (the coalescent comes down from infinity); \
             the scaling limits need a coalescent that stays infinite"
        );
    }
    Ok(())
}

const CHUNK: u64 = 64;

fn stream_base(cell: usize) -> u64 {
    (cell as u64) << 32
}

type Cells = (Vec<Cell>, Vec<Check>);

/// Scaled samples for replicates `base..base + reps`, in parallel chunks.
/// With `state_cap` the fixation line is drawn, else the block process.
#[allow(clippy::too_many_arguments)]
pub fn draw_scaled(
    sampler: &PathSampler,
    n: usize,
    t: f64,
    reps: usize,
    base: u64,
    policy: &RngPolicy,
    solver: &ScalingSolver<'_, CoalescentMeasure>,
    state_cap: Option<usize>,
) -> coalesce_core::Result<Vec<(f64, usize)>> {
    let reps = reps as u64;
    let chunks: Vec<u64> = (0..reps.div_ceil(CHUNK)).collect();
    let drawn: coalesce_core::Result<Vec<Vec<(f64, usize)>>> = chunks
        .par_iter()
        .map(|&c| {
            let r = base + c * CHUNK..base + ((c + 1) * CHUNK).min(reps);
            match state_cap {
                Some(cap) => empirical_scaled_fixation(sampler, n, t, cap, r, policy, solver),
                None => empirical_scaled_law(sampler, n, t, r, policy, solver),
            }
        })
        .collect();
    Ok(drawn?.into_iter().flatten().collect())
}

fn convergence(config: &ExperimentConfig, m: &CoalescentMeasure, fixation: bool) -> anyhow::Result<Cells> {
    let p = &config.params;
    if p.t_grid.iter().any(|&t| t <= 0.0) {
        bail!("convergence experiments need t > 0");
    }
    require_stays_infinite(m)?;
    let kappa = limit_kappa(m, p)?;
    let primary = p.distance.unwrap_or(if config.measure.is_atomic() { DistanceKind::Ecf } else { DistanceKind::Ks });
    let solver = ScalingSolver::new(m)?;
    let policy = RngPolicy::new(p.seed);
    let k_max = if fixation { p.state_cap } else { *p.n_ladder.last().unwrap() };
    let sampler = PathSampler::new(m, k_max)?;
    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for (ti, &t) in p.t_grid.iter().enumerate() {
        let law = match LimitLaw::new(m, kappa, t) {
            Ok(l) => l,
            Err(e) => {
                cells.push(Cell::failed(format!("t={t}"), e));
                continue;
            }
        };
        let phi = |x: f64| -> Complex64 {
            if fixation {
                // Y = −e^{κt} S_t
                law.phi(m, -(kappa * t).exp() * x).unwrap_or(Complex64::new(f64::NAN, f64::NAN))
            } else {
                law.phi(m, x).unwrap_or(Complex64::new(f64::NAN, f64::NAN))
            }
        };
        let cdf = |q: f64| if fixation { law.cdf_fixation(q) } else { law.cdf(q) };
        let mut row = Vec::new();
        for (ni, &n) in p.n_ladder.iter().enumerate() {
            let label = format!("t={t} n={n}");
            let base = stream_base(ti * p.n_ladder.len() + ni);
            let drawn = if fixation {
                draw_scaled(&sampler, n, t, p.reps, base, &policy, &solver, Some(p.state_cap))
            } else {
                draw_scaled(&sampler, n, t, p.reps, base, &policy, &solver, None)
            };
            let samples: Vec<f64> = match drawn {
                Ok(v) => v.into_iter().map(|s| s.0).collect(),
                Err(e) => {
                    cells.push(Cell::failed(label, e));
                    row.push(f64::NAN);
                    continue;
                }
            };
            let mut cell = Cell::new(label);
            cell.set("t", t);
            cell.set("n", n as f64);
            cell.set("kappa", kappa);
            let ks = ks_distance(&samples, &cdf);
            let ecf = ecf_distance(&samples, &phi, &p.ecf_grid);
            match (ks, ecf) {
                (Ok(ks), Ok(ecf)) => {
                    cell.set("ks", ks);
                    cell.set("ecf", ecf);
                    row.push(if primary == DistanceKind::Ks { ks } else { ecf });
                }
                (Err(e), _) | (_, Err(e)) => {
                    cell.error = Some(e.to_string());
                    row.push(f64::NAN);
                }
            }
            let capped = samples.iter().filter(|x| x.is_infinite()).count();
            cell.set("capped_fraction", capped as f64 / samples.len() as f64);
            cell.set("inversion_truncation", law.truncation);
            cell.set("inversion_tapered", if law.tapered { 1.0 } else { 0.0 });
            cells.push(cell);
        }
        let name = match primary {
            DistanceKind::Ks => "ks",
            DistanceKind::Ecf => "ecf",
        };
        let th = &p.thresholds;
        let monotone = row.windows(2).all(|w| w[1] < w[0]);
        let last = *row.last().unwrap();
        let ok = (!th.monotone || monotone) && last <= th.final_distance;
        let listed: Vec<String> = row.iter().map(|d| format!("{d:.4}")).collect();
        checks.push(Check {
            name: format!("t={t} {name} ladder"),
            pass: ok,
            detail: format!(
                "{name} = [{}] along n = {:?}; monotone {monotone}, final {last:.4} (limit {})",
                listed.join(", "),
                p.n_ladder,
                th.final_distance
            ),
        });
    }
    Ok((cells, checks))
}

fn duality(m: &CoalescentMeasure, p: &Params) -> Cells {
    let mut cells = Vec::new();
    for &t in &p.t_grid {
        let label = format!("t={t} n_max={}", p.n_max);
        match check_siegmund_duality(m, p.n_max, t) {
            Ok(r) => {
                let mut c = Cell::new(label);
                c.set("t", t);
                c.set("max_discrepancy", r.max_discrepancy);
                c.set("max_defect", r.max_defect);
                c.pass = Some(r.max_discrepancy <= p.thresholds.duality);
                cells.push(c);
            }
            Err(e) => cells.push(Cell::failed(label, e)),
        }
    }
    (cells, Vec::new())
}

fn kappa_table(m: &CoalescentMeasure, p: &Params) -> Cells {
    let target = p.kappa_target.or_else(|| kappa_exact(m));
    let th = &p.thresholds;
    let mut cells = Vec::new();
    let mut lasts = Vec::new();
    for method in KappaMethod::ALL {
        if !method.applies_to(m) {
            continue;
        }
        let probes: Vec<f64> = match &p.probes {
            Some(ps) if method.probes_x() => ps.clone(),
            _ => method.ladder().to_vec(),
        };
        match kappa_ladder(m, method, &probes) {
            Ok(l) => {
                for (i, &(probe, v)) in l.points.iter().enumerate() {
                    let mut c = Cell::new(format!("{} probe={probe}", method.name()));
                    c.set("probe", probe);
                    c.set("kappa", v);
                    if i + 1 == l.points.len() {
                        c.set("spread", l.spread());
                        if let Some(k) = target {
                            c.set("target", k);
                            let tol = if k == 0.0 { th.kappa_abs } else { th.kappa_rel * k.abs() };
                            c.pass = Some((v - k).abs() <= tol);
                        }
                        lasts.push((method, v));
                    }
                    cells.push(c);
                }
            }
            Err(e) => cells.push(Cell::failed(method.name(), e)),
        }
    }
    let mut checks = Vec::new();
    if lasts.len() > 1 {
        let lo = lasts.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
        let hi = lasts.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let scale = target.unwrap_or(hi).abs();
        let spread = hi - lo;
        let ok = if scale > 0.0 { spread <= th.kappa_agreement * scale } else { spread <= th.kappa_abs };
        checks.push(Check {
            name: "method agreement".into(),
            pass: ok,
            detail: format!("last-probe estimates span [{lo:.6}, {hi:.6}] over {} methods", lasts.len()),
        });
    }
    (cells, checks)
}

/// The closed-form scaling regime of `m`, if it has one.
pub fn asymptotic_regime(m: &CoalescentMeasure) -> Option<Asymptotic> {
    if m.kingman_mass() > 0.0 {
        return None;
    }
    match m.family() {
        Family::LambdaBeta { a, b } if *a == 1.0 => Some(Asymptotic::Beta1b { b: *b }),
        Family::LambdaNlg { alpha, rho } if *alpha == 1.0 && *rho < 1.0 => Some(Asymptotic::Nlg { rho: *rho }),
        _ => match m.dust_mass() {
            Ok(mu) if mu.is_finite() => Some(Asymptotic::Dust { mu }),
            _ => None,
        },
    }
}

fn scaling_table(m: &CoalescentMeasure, p: &Params) -> anyhow::Result<Cells> {
    let solver = ScalingSolver::new(m)?;
    let tag = asymptotic_regime(m);
    let th = &p.thresholds;
    let (lo, hi) = th.ratio_band;
    let mut cells = Vec::new();
    for &x in &p.x_grid {
        for &t in &p.t_grid {
            let mut c = Cell::new(format!("x={x} t={t}"));
            c.set("x", x);
            c.set("t", t);
            let res = (|| -> anyhow::Result<bool> {
                let v = solver.v_scale(x, t)?;
                c.set("v", v);
                let back = solver.w_scale(v, t)?;
                let inv = (back / x - 1.0).abs();
                c.set("inverse_residual", inv);
                let mut ok = inv <= th.inverse;
                let w = solver.w_scale(x, t)?;
                c.set("w", w);
                if let Some(tag) = tag {
                    let rv = v / v_asymptotic(tag, x, t)?;
                    let rw = w / w_asymptotic(tag, x, t)?;
                    c.set("ratio_v", rv);
                    c.set("ratio_w", rw);
                    ok &= (lo..=hi).contains(&rv) && (lo..=hi).contains(&rw);
                }
                Ok(ok)
            })();
            match res {
                Ok(ok) => c.pass = Some(ok),
                Err(e) => {
                    c.pass = Some(false);
                    c.error = Some(e.to_string());
                }
            }
            cells.push(c);
        }
    }
    Ok((cells, Vec::new()))
}

/// Points `u` of the urn sweep: one and two equal coordinates along
/// `|u| ∈ (0, 0.98]`, plus the atoms of the measure.
fn urn_points(m: &CoalescentMeasure, count: usize) -> Vec<(String, SimplexPoint)> {
    let mut out = Vec::new();
    for i in 1..=count {
        let s = 0.98 * i as f64 / count as f64;
        out.push((format!("single s={s:.4}"), SimplexPoint::new(vec![s]).unwrap()));
        out.push((format!("pair s={s:.4}"), SimplexPoint::new(vec![s / 2.0, s / 2.0]).unwrap()));
    }
    if let Family::XiAtoms(x) = m.family() {
        for (i, a) in x.atoms.iter().enumerate().take(8) {
            out.push((format!("atom {i}"), a.point.clone()));
        }
    }
    out
}

fn urn_bounds(m: &CoalescentMeasure, p: &Params) -> Cells {
    let sig = p.thresholds.sigmas;
    let policy = RngPolicy::new(p.seed);
    let points = urn_points(m, p.urn_points);
    let cells = points
        .par_iter()
        .enumerate()
        .map(|(i, (label, u))| {
            let s2 = u.sum_abs().powi(2);
            let rest = u.rest();
            let mut c = Cell::new(label.clone());
            c.set("abs_u", u.sum_abs());
            let mut worst_rest: f64 = 0.0;
            let mut worst_one: f64 = 0.0;
            for n in 1..=p.urn_n_exact {
                match urn_pmf(u, n) {
                    Ok(law) => {
                        let nf = n as f64;
                        worst_rest = worst_rest.max(law.expect(|y| (y / nf - rest).powi(2)) / s2);
                        worst_one = worst_one.max(law.expect(|y| (y / nf - 1.0).powi(2)) / s2);
                    }
                    Err(e) => return Cell::failed(label.clone(), e),
                }
            }
            c.set("exact_ratio_rest", worst_rest);
            c.set("exact_ratio_one", worst_one);
            let mut ok = worst_rest <= 4.0 && worst_one <= 5.0;
            if p.urn_n_mc > 0 {
                let mut rng = policy.stream(stream_base(i));
                match sample_urn_y(u, p.urn_n_mc, &mut rng, p.reps.max(2)) {
                    Ok(mc) => {
                        c.set("mc_dev_rest", mc.dev_rest);
                        c.set("mc_dev_one", mc.dev_one);
                        c.set("mc_mean", mc.mean);
                        ok &= mc.dev_rest <= 4.0 * s2 + sig * mc.dev_rest_se;
                        ok &= mc.dev_one <= 5.0 * s2 + sig * mc.dev_one_se;
                        // occupied non-dust urns add at most len(u)/n to the mean
                        ok &= (mc.mean - rest).abs() <= sig * mc.mean_se + u.len() as f64 / p.urn_n_mc as f64;
                    }
                    Err(e) => return Cell::failed(label.clone(), e),
                }
            }
            c.pass = Some(ok);
            c
        })
        .collect();
    (cells, Vec::new())
}
