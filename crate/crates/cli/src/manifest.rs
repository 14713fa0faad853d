use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use eglass_core::bench::{ExperimentConfig, Seeds};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one command run: enough to repeat it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the compact JSON serialization of `config`.
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub threads: Option<usize>,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn hash_matches(&self) -> bool {
        config_hash(&self.config) == self.config_hash
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::other(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// An output directory that remembers what was written into it.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.root.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes the manifest last, listing every file written before it.
    pub fn finish(self, mut manifest: RunManifest) -> std::io::Result<RunManifest> {
        manifest.files = self.files;
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        write_atomic(&self.root.join(MANIFEST_NAME), &bytes)?;
        Ok(manifest)
    }
}
