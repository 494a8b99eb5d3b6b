//! Replayable on-disk form of an environment: a raw little-endian `f64` array
//! and a JSON sidecar describing it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::environment::{Environment, Window};
use super::law::EnvSpec;
use crate::error::{Error, Result};

pub const ENV_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSidecar {
    pub format_version: u32,
    pub spec: EnvSpec,
    pub window: Window,
    pub seed: u64,
    pub sha256: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save(env: &Environment, stem: &Path) -> Result<()> {
    let (bin, json) = paths(stem);
    let bytes: Vec<u8> = env
        .omega_slice()
        .iter()
        .flat_map(|w| w.to_le_bytes())
        .collect();
    let sidecar = EnvSidecar {
        format_version: ENV_FORMAT_VERSION,
        spec: env.spec().clone(),
        window: env.window(),
        seed: env.seed(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    fs::write(bin, &bytes)?;
    fs::write(json, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load(stem: &Path) -> Result<Environment> {
    let (bin, json) = paths(stem);
    let sidecar: EnvSidecar = serde_json::from_str(&fs::read_to_string(json)?)?;
    if sidecar.format_version != ENV_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported environment format version {}",
            sidecar.format_version
        )));
    }
    let bytes = fs::read(bin)?;
    if hex::encode(Sha256::digest(&bytes)) != sidecar.sha256 {
        return Err(Error::Config("environment array checksum mismatch".into()));
    }
    if bytes.len() != 8 * sidecar.window.len() {
        return Err(Error::Config("environment array length does not match window".into()));
    }
    let omega = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Environment::from_values(&sidecar.spec, sidecar.window.lo, omega, sidecar.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("env");
        let spec = EnvSpec::uniform(0.6, 0.9).unwrap();
        let env = Environment::sample(&spec, Window::new(-300, 200).unwrap(), 77);
        save(&env, &stem).unwrap();
        let back = load(&stem).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("env");
        let env = Environment::sample(&EnvSpec::reference(), Window::new(0, 10).unwrap(), 1);
        save(&env, &stem).unwrap();
        let mut bytes = fs::read(stem.with_extension("bin")).unwrap();
        bytes[3] ^= 1;
        fs::write(stem.with_extension("bin"), bytes).unwrap();
        assert!(load(&stem).is_err());
    }
}
