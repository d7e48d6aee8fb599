//! Run manifest: command, effective settings, seed, SHA-256 of every input
//! and output, tool version and wall-clock timestamps.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "canopy-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    settings: &'a serde_json::Value,
    config_file: Option<FileDigest>,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    started_unix: f64,
    finished_unix: f64,
    status: &'static str,
    error: Option<String>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = std::fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects what a command reads and writes.
pub struct Run {
    explicit_path: Option<PathBuf>,
    config_file: Option<PathBuf>,
    command: &'static str,
    settings: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: f64,
}

impl Run {
    pub fn new(explicit_path: Option<PathBuf>, config_file: Option<PathBuf>) -> Self {
        Run {
            explicit_path,
            config_file,
            command: "",
            settings: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
        }
    }

    pub fn begin<T: Serialize>(&mut self, command: &'static str, args: &T, seed: &anyhow::Result<u64>) {
        self.command = command;
        self.settings = serde_json::to_value(args).unwrap_or(serde_json::Value::Null);
        self.seed = seed.as_ref().ok().copied();
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn path(&self) -> PathBuf {
        if let Some(p) = &self.explicit_path {
            return p.clone();
        }
        match self.outputs.first() {
            Some(out) => {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                out.with_file_name(name)
            }
            None => PathBuf::from(format!("canopy-{}.manifest.json", self.command)),
        }
    }

    /// Writes the manifest for a finished command, successful or not.
    pub fn finish(&mut self, result: &anyhow::Result<()>) -> anyhow::Result<()> {
        let digest = |p: &PathBuf| -> anyhow::Result<Option<FileDigest>> {
            if p.is_file() {
                Ok(Some(FileDigest { path: p.clone(), sha256: sha256_file(p)? }))
            } else {
                Ok(None)
            }
        };
        let collect = |paths: &[PathBuf]| -> anyhow::Result<Vec<FileDigest>> {
            Ok(paths.iter().map(digest).collect::<anyhow::Result<Vec<_>>>()?.into_iter().flatten().collect())
        };
        let config_file = match &self.config_file {
            Some(p) => digest(p)?,
            None => None,
        };
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            settings: &self.settings,
            config_file,
            seed: self.seed,
            inputs: collect(&self.inputs)?,
            outputs: collect(&self.outputs)?,
            started_unix: self.started,
            finished_unix: now(),
            status: if result.is_ok() { "ok" } else { "error" },
            error: result.as_ref().err().map(|e| format!("{e:#}")),
        };
        let path = self.path();
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }
}
