use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written once per run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    /// sha256 over the effective config and every input file.
    pub input_hash: String,
    pub output_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Content hash in the style of a git tree: each entry contributes its
/// name, length and bytes.
#[derive(Default)]
pub struct InputHasher {
    inner: Sha256,
}

impl InputHasher {
    pub fn bytes(&mut self, name: &str, data: &[u8]) {
        self.inner.update(format!("{name} {}\0", data.len()).as_bytes());
        self.inner.update(data);
    }

    /// A file, or every regular file directly inside a directory (sorted).
    pub fn path(&mut self, path: &Path) -> std::io::Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            for p in entries.into_iter().filter(|p| p.is_file()) {
                self.bytes(&p.file_name().unwrap_or_default().to_string_lossy(), &fs::read(&p)?);
            }
        } else {
            self.bytes(&path.file_name().unwrap_or_default().to_string_lossy(), &fs::read(path)?);
        }
        Ok(())
    }

    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}

impl RunManifest {
    pub fn write(&self) -> std::io::Result<()> {
        fs::create_dir_all(&self.output_dir)?;
        fs::write(self.output_dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)
    }
}
