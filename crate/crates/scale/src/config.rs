use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::measure_spec::MeasureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ConvergenceBlock,
    ConvergenceFixation,
    Duality,
    KappaTable,
    ScalingTable,
    UrnBounds,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ConvergenceBlock => "convergence_block",
            ExperimentKind::ConvergenceFixation => "convergence_fixation",
            ExperimentKind::Duality => "duality",
            ExperimentKind::KappaTable => "kappa_table",
            ExperimentKind::ScalingTable => "scaling_table",
            ExperimentKind::UrnBounds => "urn_bounds",
        }
    }

    fn uses_distances(self) -> bool {
        matches!(self, ExperimentKind::ConvergenceBlock | ExperimentKind::ConvergenceFixation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Ks,
    Ecf,
}

/// Pass thresholds. The distance limits are engineering choices: no
/// convergence rate is known for the scaling limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest primary distance allowed at the last ladder point.
    pub final_distance: f64,
    /// Require the primary distance to decrease strictly along the ladder.
    pub monotone: bool,
    pub duality: f64,
    /// Relative tolerance of the last κ estimate against the target.
    pub kappa_rel: f64,
    /// Absolute tolerance used when the κ target is zero.
    pub kappa_abs: f64,
    /// Largest relative spread between κ methods.
    pub kappa_agreement: f64,
    /// Allowed band for `v / v_asymptotic` and `w / w_asymptotic`.
    pub ratio_band: (f64, f64),
    /// Tolerance of `w(v(x, t), t) = x`, relative.
    pub inverse: f64,
    /// Monte Carlo checks pass within this many standard errors.
    pub sigmas: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            final_distance: 0.05,
            monotone: true,
            duality: 1e-8,
            kappa_rel: 0.01,
            kappa_abs: 0.01,
            kappa_agreement: 0.02,
            ratio_band: (0.98, 1.02),
            inverse: 1e-8,
            sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub n_ladder: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Fixation-line state cap.
    pub state_cap: usize,
    /// Largest state in duality checks.
    pub n_max: usize,
    /// Primary distance; defaults to ECF for atomic measures, KS otherwise.
    pub distance: Option<DistanceKind>,
    pub ecf_grid: Vec<f64>,
    /// κ used for the limit law; defaults to the analytic value, else the
    /// second-derivative estimate.
    pub kappa: Option<f64>,
    /// Target for κ estimates in `kappa_table`.
    pub kappa_target: Option<f64>,
    /// Probe points for `kappa_table`; defaults to each method's ladder.
    pub probes: Option<Vec<f64>>,
    /// `x` values for `scaling_table`.
    pub x_grid: Vec<f64>,
    /// Exact-DP sizes for `urn_bounds`.
    pub urn_n_exact: usize,
    /// Monte Carlo size for `urn_bounds` (0 skips it).
    pub urn_n_mc: usize,
    /// Number of `|u|` values in the `urn_bounds` sweep.
    pub urn_points: usize,
    pub thresholds: Thresholds,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            n_ladder: vec![100, 1000, 10000],
            t_grid: vec![0.25, 0.5, 1.0],
            reps: 10_000,
            seed: 1,
            state_cap: 10_000,
            n_max: 12,
            distance: None,
            ecf_grid: vec![0.5, 1.0, 2.0],
            kappa: None,
            kappa_target: None,
            probes: None,
            x_grid: vec![1e6],
            urn_n_exact: 20,
            urn_n_mc: 10_000,
            urn_points: 50,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: MeasureSpec,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub params: Params,
    /// Output directory for the CSV matrix and JSON report.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let c: Self = serde_json::from_str(text).context("invalid experiment configuration")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let p = &self.params;
        if p.n_ladder.is_empty() || p.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
            bail!("n_ladder must be nonempty and strictly increasing");
        }
        if p.n_ladder[0] < 2 {
            bail!("n_ladder entries must be at least 2");
        }
        if p.t_grid.is_empty() || p.t_grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            bail!("t_grid must hold finite nonnegative times");
        }
        if self.kind.uses_distances() && p.reps < 100 {
            bail!("distance-based experiments need reps >= 100, got {}", p.reps);
        }
        if self.kind == ExperimentKind::ConvergenceFixation && p.state_cap < *p.n_ladder.last().unwrap() {
            bail!("state_cap {} below the largest initial state", p.state_cap);
        }
        if p.ecf_grid.is_empty() {
            bail!("ecf_grid must be nonempty");
        }
        let (lo, hi) = p.thresholds.ratio_band;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            bail!("ratio_band must be ordered");
        }
        Ok(())
    }

    /// Canonical JSON used for hashing and report echoes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"measure":{"family":{"type":"bolthausen_sznitman"}},"kind":"duality"}"#;

    #[test]
    fn defaults_apply() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.params.n_ladder, vec![100, 1000, 10000]);
        assert_eq!(c.params.t_grid, vec![0.25, 0.5, 1.0]);
        assert_eq!(c.kind.name(), "duality");
    }

    #[test]
    fn invariants_enforced() {
        let bad = r#"{"measure":{"family":{"type":"bolthausen_sznitman"}},"kind":"convergence_block",
            "params":{"n_ladder":[100,100]}}"#;
        assert!(ExperimentConfig::parse(bad).is_err());
        let few = r#"{"measure":{"family":{"type":"bolthausen_sznitman"}},"kind":"convergence_block",
            "params":{"reps":50}}"#;
        assert!(ExperimentConfig::parse(few).is_err());
        let typo = r#"{"measure":{"family":{"type":"bolthausen_sznitman"}},"kind":"duality","params":{"rep":5}}"#;
        assert!(ExperimentConfig::parse(typo).is_err());
    }
}
