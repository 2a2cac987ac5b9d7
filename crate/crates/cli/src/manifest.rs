//! Run manifests (`key=value` text).

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn render(&self) -> String {
        format!(
            "tool=caliblab\nversion={}\ncommand={}\nconfig_digest=sha256:{}\nseed={}\nstarted_unix_ms={}\nfinished_unix_ms={}\noutputs={}\n",
            self.version,
            self.command,
            self.config_digest,
            self.seed,
            self.started_unix_ms,
            self.finished_unix_ms,
            self.outputs.join(",")
        )
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join(MANIFEST_FILE), self.render())?;
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
