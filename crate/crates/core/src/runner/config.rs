//! Experiment configuration: a versioned TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::verify::{VerifySizes, CHECK_IDS};
use crate::env::{EnvSpec, InitMode};
use crate::error::{Error, Result};
use crate::kernel::CurrentOptions;
use crate::limit::Point;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 20_261_016;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "EnvSpec::reference")]
    pub env: EnvSpec,
    #[serde(default = "default_init")]
    pub init: InitMode,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub options: CurrentOptions,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_init() -> InitMode {
    InitMode::QuenchedPoisson { mu: 1.0 }
}

/// Sizes of `theory`, `env` and `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub sizes: Vec<u64>,
    /// `(t, r)` points.
    pub grid: Vec<Point>,
    pub environments: usize,
    pub replicas: usize,
    /// Sites averaged over for the sigma1^2 and mean-density estimates.
    pub theory_sites: usize,
    /// `alpha^2` values and `x` range of the exported Psi table.
    pub psi_alphas: Vec<f64>,
    pub psi_range: (f64, f64, usize),
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            sizes: vec![400, 1600],
            grid: vec![(0.5, 0.0), (1.0, 0.0), (1.0, 1.0)],
            environments: 2,
            replicas: 200,
            theory_sites: 200_000,
            psi_alphas: vec![0.25, 0.5, 1.0, 2.0],
            psi_range: (-3.0, 3.0, 61),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Full,
    Smoke,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub preset: Preset,
    /// Subset of checks to run; all when absent.
    #[serde(default)]
    pub checks: Option<Vec<String>>,
    /// Per-size overrides on top of the preset.
    #[serde(default)]
    pub sizes: toml::Table,
}

impl VerifySection {
    pub fn resolved_sizes(&self) -> Result<VerifySizes> {
        let base = match self.preset {
            Preset::Full => VerifySizes::default(),
            Preset::Smoke => VerifySizes::smoke(),
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in &self.sizes {
            if !table.contains_key(k) {
                return Err(Error::Config(format!("unknown verify size `{k}`")));
            }
            table.insert(k.clone(), v.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn resolved_checks(&self) -> Vec<String> {
        match &self.checks {
            Some(c) => c.clone(),
            None => CHECK_IDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: DEFAULT_SEED,
            out_dir: None,
            env: EnvSpec::reference(),
            init: default_init(),
            run: RunSection::default(),
            options: CurrentOptions::default(),
            verify: VerifySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.init.validate()?;
        let r = &self.run;
        if r.sizes.is_empty() || r.sizes.contains(&0) {
            return bad("run.sizes must be nonempty and positive".into());
        }
        if r.grid.is_empty() || r.grid.iter().any(|(t, r)| !(t.is_finite() && r.is_finite() && *t >= 0.0)) {
            return bad("run.grid needs finite points with t >= 0".into());
        }
        if r.environments == 0 {
            return bad("run.environments must be positive".into());
        }
        if r.psi_range.2 < 2 || !(r.psi_range.0 < r.psi_range.1) {
            return bad("run.psi_range must be (lo, hi, count >= 2) with lo < hi".into());
        }
        let o = &self.options;
        if !(o.spread > 0.0 && o.threshold > 0.0) {
            return bad("options.spread and options.threshold must be positive".into());
        }
        for id in self.verify.resolved_checks() {
            if !CHECK_IDS.contains(&id.as_str()) {
                return bad(format!("verify.checks names unknown check `{id}`"));
            }
        }
        self.verify.resolved_sizes()?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let c = ExperimentConfig::from_toml("schema_version = 1").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn full_document_roundtrip() {
        let text = r#"
schema_version = 1
seed = 5
out_dir = "results"

[env]
kind = "two-point"
atoms = [0.9, 0.6]
weights = [0.5, 0.5]

[init]
mode = "deterministic"
k = 2

[run]
sizes = [100]
grid = [[1.0, 0.5]]
environments = 3

[options]
spread = 7.0

[verify]
preset = "smoke"
checks = ["AC-1", "AC-14"]
sizes = { walk_n = 50 }
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.init, InitMode::Deterministic { k: 2 });
        assert_eq!(c.run.grid, vec![(1.0, 0.5)]);
        assert_eq!(c.options.spread, 7.0);
        assert_eq!(c.options.threshold, CurrentOptions::default().threshold);
        let s = c.verify.resolved_sizes().unwrap();
        assert_eq!(s.walk_n, 50);
        assert_eq!(s.kumar_n, VerifySizes::smoke().kumar_n);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn schema_violations() {
        for text in [
            "schema_version = 2",
            "schema_version = 1\nbogus = 1",
            "schema_version = 1\n[run]\nsizes = []",
            "schema_version = 1\n[run]\nenvironments = 0",
            "schema_version = 1\n[verify]\nchecks = [\"AC-15\"]",
            "schema_version = 1\n[verify]\nsizes = { nope = 1 }",
            "schema_version = 1\n[verify]\nsizes = { walk_n = \"big\" }",
            "schema_version = 1\n[init]\nmode = \"annealed-poisson\"\nmu = -1.0",
            "schema_version = 1\n[env]\nkind = \"two-point\"\natoms = [0.2, 0.3]\nweights = [0.5, 0.5]",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
