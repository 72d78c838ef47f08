//! Every run writes `manifest.toml` into its output directory: the fully
//! resolved config (flags already folded in) plus a `[run]` table with
//! the command name, input checksums, and format versions. Because the
//! config sits at the manifest's top level, feeding the manifest back via
//! `--config` reproduces the run; the extra `[run]` table is ignored on
//! parse.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use esteer_core::checksum_hex;

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub esteer_cli: String,
    pub esteer_core: String,
    pub checkpoint_format: u32,
    pub feature_set_format: u32,
    pub trace_schema: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            esteer_cli: env!("CARGO_PKG_VERSION").to_string(),
            esteer_core: esteer_core::VERSION.to_string(),
            checkpoint_format: esteer_core::container::FORMAT_VERSION,
            feature_set_format: esteer_core::features::FEATURE_SET_VERSION,
            trace_schema: esteer_core::agent::TRACE_SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub versions: Versions,
    /// Input path → SHA-256 of its bytes, for every file the run read.
    pub inputs: BTreeMap<String, String>,
}

/// SHA-256 of a file's contents.
pub fn file_checksum(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::runtime(format!("checksum {}: {e}", path.display())))?;
    Ok(checksum_hex(&bytes))
}

/// Accumulates the inputs a command touches, for the manifest.
#[derive(Debug, Default)]
pub struct InputLog {
    inputs: BTreeMap<String, String>,
}

impl InputLog {
    /// Record one input file; returns its checksum for reuse as a cache
    /// fingerprint.
    pub fn record(&mut self, path: &Path) -> Result<String, CliError> {
        let checksum = file_checksum(path)?;
        self.inputs
            .insert(path.display().to_string(), checksum.clone());
        Ok(checksum)
    }

    /// Note a bundled (compile-time) input under a pseudo-path.
    pub fn record_builtin(&mut self, name: &str, bytes: &[u8]) {
        self.inputs
            .insert(format!("builtin:{name}"), checksum_hex(bytes));
    }
}

/// Write `manifest.toml`; returns its path.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &RunConfig,
    inputs: InputLog,
) -> Result<PathBuf, CliError> {
    let meta = RunMeta {
        command: command.to_string(),
        versions: Versions::current(),
        inputs: inputs.inputs,
    };
    let mut table = toml::Table::try_from(config)
        .map_err(|e| CliError::runtime(format!("manifest encode: {e}")))?;
    table.insert(
        "run".into(),
        toml::Value::try_from(&meta)
            .map_err(|e| CliError::runtime(format!("manifest encode: {e}")))?,
    );
    let text = toml::to_string_pretty(&table)
        .map_err(|e| CliError::runtime(format!("manifest encode: {e}")))?;
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, text)
        .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_reparses_as_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.sweep.axis = "arousal".into();
        cfg.paths.sae = Some(PathBuf::from("x/sae.estr"));
        let mut log = InputLog::default();
        log.record_builtin("lexicon", b"demo");
        let path = write_manifest(dir.path(), "sweep", &cfg, log).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("[run]"));
        assert!(text.contains("command = \"sweep\""));
        let back = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(
            toml::to_string_pretty(&back).unwrap(),
            toml::to_string_pretty(&cfg).unwrap()
        );
    }

    #[test]
    fn manifests_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let a = write_manifest(dir.path(), "sweep", &cfg, InputLog::default()).unwrap();
        let first = std::fs::read(&a).unwrap();
        let b = write_manifest(dir.path(), "sweep", &cfg, InputLog::default()).unwrap();
        assert_eq!(first, std::fs::read(&b).unwrap());
    }
}
