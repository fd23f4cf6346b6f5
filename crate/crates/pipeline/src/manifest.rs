use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{hash_file, write_atomic};
use crate::error::Result;

/// Record of one command run, written next to its outputs as
/// `<command>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub resolved_config: serde_json::Value,
    /// Path to sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_s: f64,
    /// Command-specific results such as the final training loss.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    /// Hashes every output path, then writes the manifest into `out_dir`.
    pub fn write(
        &mut self,
        out_dir: &Path,
        outputs: &[impl AsRef<Path>],
    ) -> Result<std::path::PathBuf> {
        for p in outputs {
            let p = p.as_ref();
            self.outputs.insert(p.display().to_string(), hash_file(p)?);
        }
        let path = out_dir.join(Self::file_name(&self.command));
        let mut text = serde_json::to_string_pretty(self).map_err(imupose_core::Error::from)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
