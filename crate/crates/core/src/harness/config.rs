//! Experiment configuration: one JSON file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::field::BoundaryFunction;
use crate::geometry::{Domain, Point};
use crate::model::Model;

/// Every acceptance threshold in one place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Monte Carlo agreement in standard errors.
    pub se_multiplier: f64,
    pub poisson_kernel: f64,
    pub green_kernel: f64,
    pub log_laplace_residual: f64,
    pub blowup_profile: (f64, f64),
    pub moment_floor: f64,
    /// Allowed multiple of the Richardson error estimate.
    pub moment_richardson: f64,
    pub algebra: f64,
    pub kernel_l1: f64,
    pub potential_l1: f64,
    pub min_ess: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            se_multiplier: 3.0,
            poisson_kernel: 1e-6,
            green_kernel: 1e-8,
            log_laplace_residual: 1e-8,
            blowup_profile: (1.425, 1.575),
            moment_floor: 1e-6,
            moment_richardson: 3.0,
            algebra: 1e-12,
            kernel_l1: 0.10,
            potential_l1: 0.15,
            min_ess: 1e3,
        }
    }
}

/// An atom of an initial measure; `y` defaults to 0 on an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    pub mass: f64,
}

impl Atom {
    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

pub fn measure(atoms: &[Atom]) -> Vec<(Point, f64)> {
    atoms.iter().map(|a| (a.point(), a.mass)).collect()
}

/// Boundary data: a constant, or endpoint values on an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Boundary {
    Constant(f64),
    Endpoints([f64; 2]),
}

impl Boundary {
    pub fn on(&self, domain: &Domain) -> Result<BoundaryFunction> {
        match *self {
            Boundary::Constant(c) => Ok(BoundaryFunction::constant(domain, c)),
            Boundary::Endpoints([a, b]) => BoundaryFunction::endpoints(domain, a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Beta0 { beta: f64 },
    BetaK { beta: f64, z: Vec<f64> },
    Point { z: f64 },
    Mass { v: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// ℕ_y conditioned on total exit mass in the bin of v.
    Mass { y: f64, v: f64 },
    /// P_μ conditioned on total exit mass in the bin of v.
    Forest { mu: Vec<Atom>, v: f64 },
    /// P_μ conditioned by H^{β,k,z} with base point x.
    Point { mu: Vec<Atom>, z: Vec<f64>, beta: f64, x: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Kernels,
    LogLaplace,
    Moments,
    Poisson,
    Harmonicity,
    Density,
    Fragmentation,
    Potential,
    Backbone,
    Determinism,
    All,
}

impl Suite {
    /// Acceptance criteria covered by the suite.
    pub fn criteria(&self) -> Vec<u8> {
        match self {
            Suite::Kernels => vec![1],
            Suite::LogLaplace => vec![2],
            Suite::Moments => vec![3],
            Suite::Poisson => vec![4],
            Suite::Harmonicity => vec![5],
            Suite::Density => vec![6],
            Suite::Fragmentation => vec![7],
            Suite::Potential => vec![8],
            Suite::Backbone => vec![9],
            Suite::Determinism => vec![10],
            Suite::All => (1..=10).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Sample sizes of the acceptance criteria.
    #[default]
    Full,
    /// About a tenth of the samples, for smoke runs.
    Quick,
}

fn parse_name<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| Error::Schema(e.to_string()))
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_name(s)
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_name(s)
    }
}

fn default_n() -> u32 {
    100
}

fn default_bins() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Exit measures of the particle system.
    Simulate {
        mu: Vec<Atom>,
        /// Nested domains, innermost first; empty means the configured domain.
        #[serde(default)]
        chain: Vec<Domain>,
        #[serde(default = "default_n")]
        n: u32,
    },
    /// p_C(μ) by recursion, checked against the Laplace-derivative oracle.
    Moments {
        phi: Boundary,
        f: Vec<Boundary>,
        c: Vec<usize>,
        mu: Vec<Atom>,
        #[serde(default)]
        model: Model,
    },
    /// Monte Carlo check that H(X_{D'}) averages to H(μ).
    Condition {
        family: Family,
        x: f64,
        mu: Vec<Atom>,
        inner: Domain,
        #[serde(default = "default_n")]
        n: u32,
    },
    Backbone {
        target: Target,
        chain: Vec<Domain>,
        #[serde(default = "default_n")]
        n: u32,
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default)]
        walk: BackboneConfig,
        /// Write the first realization's tree as JSON.
        #[serde(default)]
        tree_dump: bool,
        /// Brute-force runs for a KS comparison on the innermost domain.
        #[serde(default)]
        brute_force: Option<usize>,
    },
    Verify {
        suite: Suite,
        #[serde(default)]
        scale: Scale,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate { .. } => "simulate",
            Experiment::Moments { .. } => "moments",
            Experiment::Condition { .. } => "condition",
            Experiment::Backbone { .. } => "backbone",
            Experiment::Verify { .. } => "verify",
        }
    }

    fn needs_replicas(&self) -> bool {
        matches!(self, Experiment::Simulate { .. } | Experiment::Condition { .. } | Experiment::Backbone { .. })
    }
}

fn unit_interval() -> Domain {
    Domain::unit_interval()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "unit_interval")]
    pub domain: Domain,
    pub seed: u64,
    #[serde(default)]
    pub replicas: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate().map_err(|e| Error::Schema(e.to_string()))?;
        match self.replicas {
            Some(0) => return Err(Error::Schema("replicas must be positive".into())),
            None if self.experiment.needs_replicas() => {
                return Err(Error::Schema(format!("{} needs a replica count", self.experiment.name())));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn replicas(&self) -> usize {
        self.replicas.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let ok = r#"{"experiment": {"kind": "simulate", "mu": [{"x": 0.5, "mass": 1.0}]}, "seed": 3, "replicas": 10}"#;
        let cfg = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(cfg.domain, Domain::unit_interval());
        let zero = ok.replace("\"replicas\": 10", "\"replicas\": 0");
        assert!(matches!(ExperimentConfig::from_json(&zero), Err(Error::Schema(_))));
        let unknown = ok.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Schema(_))));
        let seedless = ok.replace("\"seed\": 3, ", "");
        assert!(matches!(ExperimentConfig::from_json(&seedless), Err(Error::Schema(_))));
        assert_eq!("log-laplace".parse::<Suite>().unwrap(), Suite::LogLaplace);
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn backbone_config_parses() {
        let text = r#"{"experiment": {"kind": "backbone", "target": {"kind": "mass", "y": 0.5, "v": 0.3},
            "chain": [{"kind": "interval", "a": 0.2, "b": 0.8}]}, "seed": 1, "replicas": 2}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(matches!(cfg.experiment, Experiment::Backbone { target: Target::Mass { .. }, .. }));
    }
}
