use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use splatlab::io::sha256_hex;

/// Output directory that remembers every file written through it.
pub struct OutDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_png(&mut self, rel: &str, rgb: &[f64], width: usize, height: usize) -> Result<()> {
        let bytes = splatlab::io::encode_png(rgb, width, height)?;
        self.write(rel, &bytes)
    }

    /// Write `manifest.json` listing every other output.
    pub fn finish(mut self, manifest: Manifest) -> Result<()> {
        let manifest = Manifest {
            outputs: self.files.iter().cloned().collect(),
            ..manifest
        };
        self.write_json("manifest.json", &manifest)
    }
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        }
    }
}

/// Everything needed to rerun a command. Contains no timestamps or timings.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub deterministic: bool,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, deterministic: bool, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            deterministic,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// Read an input image, reporting unreadable or undecodable files as usage errors.
pub fn read_image(path: &Path) -> Result<(splatlab::TargetImage, InputDigest)> {
    let bytes = fs::read(path)
        .map_err(|e| super::CliError::Usage(format!("cannot read image `{}`: {e}", path.display())))?;
    let img = splatlab::io::decode_png(&bytes)
        .map_err(|e| super::CliError::Usage(format!("cannot decode `{}`: {e}", path.display())))?;
    Ok((img, InputDigest::of(path, &bytes)))
}
