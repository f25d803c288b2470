//! Run directories, report files and the reproducibility manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: std::collections::BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    /// Report files written in this run, relative to the run directory.
    pub outputs: Vec<String>,
}

/// A fresh numbered directory under an output root. Files are created with
/// `create_new`, so nothing already on disk is ever overwritten.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    /// Creates `<root>/run-NNNN` with the next unused number.
    pub fn create(root: impl AsRef<Path>, command: &str, config: serde_json::Value) -> Result<Self> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut n = 1usize;
        let path = loop {
            let candidate = root.join(format!("run-{n:04}"));
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(Error::io(&candidate, e)),
            }
        };
        Ok(RunDir {
            path,
            manifest: Manifest {
                tool: "discourse".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                config,
                seeds: Default::default(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record_seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.into(), seed);
    }

    pub fn record_input(&mut self, role: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.manifest.inputs.push(InputDigest {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Opens a new report file; `name` must not exist yet.
    pub fn create_file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path.join(name);
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.push(name.into());
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(self.path.join(name), e))?;
        w.flush().map_err(|e| Error::io(self.path.join(name), e))?;
        Ok(self.path.join(name))
    }

    /// Writes a report through `f`, which receives the open file.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = self.create_file(name)?;
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(self.path.join(name), e))?;
        Ok(self.path.join(name))
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Writes the manifest and returns the run directory path.
    pub fn finish(mut self) -> Result<PathBuf> {
        let manifest = self.manifest.clone();
        self.write_json(MANIFEST_FILE, &manifest)?;
        Ok(self.path)
    }
}
