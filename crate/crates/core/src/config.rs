//! Experiment configuration files.
//!
//! ```toml
//! schema = 1
//! command = "solve-semilinear"
//! problem = "QUADRATIC"
//! seed = 7
//!
//! [numerics]
//! dt = 0.01
//! n = 20000
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measures::Refinement;

/// Schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub command: Option<String>,
    pub problem: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub numerics: Numerics,
}

/// Numerical parameters; every field is optional and overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: Option<f64>,
    pub n: Option<usize>,
    pub steps: Option<usize>,
    pub depth: Option<usize>,
    pub horizon: Option<f64>,
    pub l: Option<f64>,
    pub eps: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub dates: Option<usize>,
    pub exact: Option<bool>,
    pub noise: Option<String>,
    pub sigmas: Option<Vec<f64>>,
    pub drift: Option<f64>,
    pub diffusion: Option<f64>,
    pub points: Option<usize>,
    pub tolerance: Option<f64>,
    pub refinement: Option<Refinement>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema)));
        }
        let n = &self.numerics;
        let positive = [("dt", n.dt), ("horizon", n.horizon), ("l", n.l), ("tolerance", n.tolerance)];
        for (key, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("numerics.{key} must be positive, got {v}")));
                }
            }
        }
        let counts = [("n", n.n), ("steps", n.steps), ("depth", n.depth), ("dates", n.dates), ("points", n.points)];
        for (key, v) in counts {
            if v == Some(0) {
                return Err(Error::Config(format!("numerics.{key} must be positive")));
            }
        }
        if let Some(eps) = &n.eps {
            if eps.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config("numerics.eps entries must be positive".into()));
            }
        }
        if let Some(s) = &n.sigmas {
            if s.is_empty() || s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("numerics.sigmas must be a non-empty list of positive values".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let c = ExperimentConfig::parse("schema = 1\nseed = 3\n[numerics]\ndt = 0.1\nrefinement = { drift_points = 3, diffusion_points = 2 }\n").unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.numerics.refinement, Some(Refinement::MINIMAL));
        assert!(ExperimentConfig::parse("schema = 1\nbogus = 2\n").is_err());
        assert!(ExperimentConfig::parse("schema = 1\n[numerics]\ndtt = 0.1\n").is_err());
        assert!(ExperimentConfig::parse("schema = 2\n").is_err());
        assert!(ExperimentConfig::parse("schema = 1\n[numerics]\ndt = -1.0\n").is_err());
    }
}
