use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::inputs::{sha256_hex, InputRef};
use crate::CliError;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub inputs: Vec<InputRef>,
    pub instances: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    pub parameters: Value,
    /// Digest over the input digests, instances, strategy and parameters.
    pub inputs_sha256: String,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        inputs: Vec<InputRef>,
        instances: Vec<String>,
        strategy: Option<String>,
        parameters: Value,
    ) -> Self {
        let mut m = RunManifest {
            schema_version: MANIFEST_SCHEMA,
            tool: "crossphase".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            inputs,
            instances,
            strategy,
            parameters,
            inputs_sha256: String::new(),
        };
        m.inputs_sha256 = m.compute_hash();
        m
    }

    pub fn compute_hash(&self) -> String {
        let mut text = String::new();
        text.push_str(&self.subcommand);
        for i in &self.inputs {
            text.push('\n');
            text.push_str(&i.sha256);
        }
        text.push_str("\ninstances:");
        text.push_str(&self.instances.join("\u{1f}"));
        text.push_str("\nstrategy:");
        text.push_str(self.strategy.as_deref().unwrap_or(""));
        text.push_str("\nparameters:");
        text.push_str(&self.parameters.to_string());
        sha256_hex(text.as_bytes())
    }
}

/// One output file, named relative to the output directory.
pub struct OutFile {
    pub name: String,
    pub contents: String,
}

impl OutFile {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

/// File-name-safe form of an instance label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `files` plus the manifest into `out_dir`, returning the paths written.
pub fn emit_reports(out_dir: &Path, manifest: &RunManifest, files: &[OutFile]) -> Result<Vec<PathBuf>, CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::new("io", format!("{}: {e}", p.display()));
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut written = vec![];
    let manifest_text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    for f in files.iter().chain(std::iter::once(&OutFile::new(MANIFEST_FILE, manifest_text))) {
        let p = out_dir.join(&f.name);
        std::fs::write(&p, &f.contents).map_err(|e| io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// `{"manifest": …, "result": …}` as pretty JSON.
pub fn bundle_json(manifest: &RunManifest, result: &Value) -> String {
    let v = serde_json::json!({ "manifest": manifest, "result": result });
    serde_json::to_string_pretty(&v).expect("json serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_parameters() {
        let a = RunManifest::new("powerflow", vec![], vec![], None, serde_json::json!({"tolerance": 1e-9}));
        let b = RunManifest::new("powerflow", vec![], vec![], None, serde_json::json!({"tolerance": 1e-8}));
        assert_eq!(a.inputs_sha256, a.compute_hash());
        assert_ne!(a.inputs_sha256, b.inputs_sha256);
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("2024-06-01 12:00"), "2024-06-01_12_00");
    }
}
