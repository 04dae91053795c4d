//! JSON measure specifications.
//!
//! ```json
//! {"kingman_mass": 0.0, "family": {"type": "beta", "a": 1.0, "b": 2.0}}
//! {"family": {"type": "xi_atoms", "atoms": [{"coords": [0.25, 0.25], "mass": 0.25}]}}
//! {"family": {"type": "xi_geometric", "p": 0.5, "k": "const:1", "m_max": null}}
//! ```

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use coalesce_core::measure::{CoalescentMeasure, Family, Multiplicity};
use coalesce_core::simplex::SimplexPoint;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub kingman_mass: f64,
    #[serde(default)]
    pub family: Option<FamilySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Beta { a: f64, b: f64 },
    BolthausenSznitman,
    Nlg { alpha: f64, rho: f64 },
    /// `Λ(du) = du / (1 − log u)`.
    LogDampedUniform,
    LambdaAtoms { atoms: Vec<LambdaAtomSpec> },
    XiAtoms { atoms: Vec<XiAtomSpec> },
    XiGeometric {
        p: f64,
        k: KSpec,
        #[serde(default)]
        m_max: Option<usize>,
    },
    Mixture { parts: Vec<MixturePart> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaAtomSpec {
    pub u: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiAtomSpec {
    pub coords: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePart {
    pub weight: f64,
    pub measure: MeasureSpec,
}

/// `k_m` as `"const:K"`, `"prefix:K1,K2,…"` or a JSON array of the prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpec(pub Multiplicity);

impl fmt::Display for KSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Multiplicity::Const(k) => write!(f, "const:{k}"),
            Multiplicity::Prefix(ks) => {
                let parts: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
                write!(f, "prefix:{}", parts.join(","))
            }
        }
    }
}

impl std::str::FromStr for KSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("const:") {
            return Ok(KSpec(Multiplicity::Const(k.trim().parse().with_context(|| format!("bad k_m constant '{k}'"))?)));
        }
        if let Some(list) = s.strip_prefix("prefix:") {
            let ks = list
                .split(',')
                .map(|k| k.trim().parse::<u32>().with_context(|| format!("bad k_m entry '{k}'")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            if ks.is_empty() {
                bail!("empty k_m prefix");
            }
            return Ok(KSpec(Multiplicity::Prefix(ks)));
        }
        bail!("k_m must be 'const:K' or 'prefix:K1,K2,...', got '{s}'")
    }
}

impl Serialize for KSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for KSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(Vec<u32>),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(|e: anyhow::Error| de::Error::custom(e.to_string())),
            Raw::List(ks) if !ks.is_empty() => Ok(KSpec(Multiplicity::Prefix(ks))),
            Raw::List(_) => Err(de::Error::custom("empty k_m prefix")),
        }
    }
}

impl MeasureSpec {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).context("invalid measure specification")
    }

    /// Inline JSON, or the path of a JSON file.
    pub fn from_arg(arg: &str) -> anyhow::Result<Self> {
        let t = arg.trim_start();
        if t.starts_with('{') {
            return Self::parse(t);
        }
        let text = std::fs::read_to_string(Path::new(arg)).with_context(|| format!("reading measure file {arg}"))?;
        Self::parse(&text)
    }

    pub fn build(&self) -> anyhow::Result<CoalescentMeasure> {
        let m = match &self.family {
            None => CoalescentMeasure::new(self.kingman_mass, Family::Empty)?,
            Some(f) => f.build()?.with_kingman(self.kingman_mass)?,
        };
        Ok(m)
    }

    /// Whether the limit law is lattice-like (finitely many atoms), so
    /// characteristic-function distances are the primary metric.
    pub fn is_atomic(&self) -> bool {
        match &self.family {
            Some(FamilySpec::XiAtoms { .. } | FamilySpec::XiGeometric { .. } | FamilySpec::LambdaAtoms { .. }) => true,
            Some(FamilySpec::Mixture { parts }) => parts.iter().all(|p| p.measure.is_atomic()),
            _ => false,
        }
    }
}

impl FamilySpec {
    fn build(&self) -> anyhow::Result<CoalescentMeasure> {
        Ok(match self {
            FamilySpec::Beta { a, b } => CoalescentMeasure::beta(*a, *b)?,
            FamilySpec::BolthausenSznitman => CoalescentMeasure::bolthausen_sznitman(),
            FamilySpec::Nlg { alpha, rho } => CoalescentMeasure::nlg(*alpha, *rho)?,
            FamilySpec::LogDampedUniform => CoalescentMeasure::log_damped_uniform(),
            FamilySpec::LambdaAtoms { atoms } => {
                CoalescentMeasure::lambda_atoms(atoms.iter().map(|a| (a.u, a.mass)).collect())?
            }
            FamilySpec::XiAtoms { atoms } => {
                let pts = atoms
                    .iter()
                    .map(|a| Ok((SimplexPoint::new(a.coords.clone())?, a.mass)))
                    .collect::<coalesce_core::Result<Vec<_>>>()?;
                CoalescentMeasure::xi_atoms(pts)?
            }
            FamilySpec::XiGeometric { p, k, m_max } => CoalescentMeasure::geometric(*p, k.0.clone(), *m_max)?,
            FamilySpec::Mixture { parts } => {
                let built = parts
                    .iter()
                    .map(|p| Ok((p.weight, p.measure.build()?)))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                CoalescentMeasure::mixture(built)?
            }
        })
    }
}
