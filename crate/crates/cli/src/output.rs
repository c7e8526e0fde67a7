use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub config: ExperimentConfig,
    pub files: BTreeMap<String, FileEntry>,
}

/// `manifest.json` in the output directory: per subcommand, the full config
/// it ran with and a checksum for every file it wrote.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub steps: BTreeMap<String, StepEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files one subcommand writes.
pub struct Outputs<'a> {
    root: &'a Path,
    files: BTreeMap<String, FileEntry>,
}

impl<'a> Outputs<'a> {
    pub fn new(root: &'a Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Outputs { root, files: BTreeMap::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8], records: Option<usize>) -> Result<(), CliError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.record(rel, bytes, records);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(v).expect("plain data");
        text.push('\n');
        self.write(rel, text.as_bytes(), None)
    }

    /// Registers a file some library call already wrote.
    pub fn adopt(&mut self, rel: &str) -> Result<(), CliError> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
        self.record(rel, &bytes, None);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8], records: Option<usize>) {
        self.files.insert(rel.to_owned(), FileEntry { bytes: bytes.len() as u64, sha256: sha256_hex(bytes), records });
    }

    /// Merges this step into the manifest.
    pub fn finish(self, step: &str, cfg: &ExperimentConfig) -> Result<BTreeMap<String, FileEntry>, CliError> {
        let path = self.root.join("manifest.json");
        let mut m = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str(&text).unwrap_or_default()
        } else {
            Manifest::default()
        };
        m.format = "sidestream-manifest/1".into();
        m.steps.insert(step.to_owned(), StepEntry { config: cfg.clone(), files: self.files.clone() });
        let mut text = serde_json::to_string_pretty(&m).expect("plain data");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.files)
    }
}

pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}
