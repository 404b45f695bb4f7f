use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crossphase::{bundled, Feeder, PvSpec, TimeSeriesProfile};

use crate::CliError;

/// Where an input came from and a digest of its bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
    /// Resolved from the copies built into the binary.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bundled: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads `path`, falling back to a bundled asset of the same file name.
pub fn read_input(path: &Path) -> Result<(String, InputRef), CliError> {
    let shown = path.display().to_string();
    match std::fs::read_to_string(path) {
        Ok(text) => {
            let sha256 = sha256_hex(text.as_bytes());
            Ok((text, InputRef { path: shown, sha256, bundled: false }))
        }
        Err(e) => {
            let name = path.file_name().and_then(|n| n.to_str());
            match name.and_then(bundled::asset) {
                Some(text) if e.kind() == std::io::ErrorKind::NotFound => Ok((
                    text.to_string(),
                    InputRef {
                        path: shown,
                        sha256: sha256_hex(text.as_bytes()),
                        bundled: true,
                    },
                )),
                _ => Err(CliError::new("io", format!("{shown}: {e}"))),
            }
        }
    }
}

pub fn feeder(path: &Path) -> Result<(Feeder, InputRef), CliError> {
    let (text, r) = read_input(path)?;
    let f = Feeder::from_json_str(&text).map_err(|e| CliError::from(crossphase::Error::from(e)).context(&r.path))?;
    Ok((f, r))
}

pub fn profile(path: &Path) -> Result<(TimeSeriesProfile, InputRef), CliError> {
    let (text, r) = read_input(path)?;
    let p = TimeSeriesProfile::from_csv_reader(text.as_bytes())
        .map_err(|e| CliError::from(crossphase::Error::from(e)).context(&r.path))?;
    Ok((p, r))
}

pub fn pool(path: &Path) -> Result<(Vec<PvSpec>, InputRef), CliError> {
    let (text, r) = read_input(path)?;
    let pool = serde_json::from_str(&text).map_err(|e| CliError::new("parse", format!("{}: {e}", r.path)))?;
    Ok((pool, r))
}
