use std::fs;
use std::path::{Path, PathBuf};

use datc::engine::GibbsConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::input(path.display(), e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        })
    }
}

/// Everything needed to repeat a run: the argument vector, the working
/// directory it was resolved against, the resolved sampler settings and
/// digests of every file read and written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub config: Option<GibbsConfig>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seconds: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(path.display(), e))
    }

    /// Fails with an input error if any recorded input changed since the run.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for input in &self.inputs {
            let path = self.cwd.join(&input.path);
            let now = FileDigest::of(&path)?;
            if now.sha256 != input.sha256 {
                return Err(CliError::Input(format!(
                    "{} changed since the recorded run",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
