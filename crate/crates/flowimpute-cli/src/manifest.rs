//! Run manifests: a plain-text record of every run's resolved
//! configuration, input digests, output paths and final status.
//!
//! The manifest is written before any long computation starts and
//! rewritten when the run ends, so a failed run always leaves a manifest
//! naming what went wrong. It carries timestamps and is therefore
//! metadata: the determinism guarantee covers the data outputs, which
//! never embed time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct RunManifest {
    path: PathBuf,
    command: String,
    config: Vec<(String, String)>,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
    started_unix: u64,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    Ok(out)
}

impl RunManifest {
    pub fn new(path: PathBuf, command: &str) -> RunManifest {
        RunManifest {
            path,
            command: command.to_string(),
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now_unix(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let digest = file_digest(path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("cannot read `{}`: {e}", path.display()))
        })?;
        self.inputs.push((path.display().to_string(), digest));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn render(&self, status: &str, error: Option<&str>) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: &str| {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        };
        push("artifact_version", ARTIFACT_VERSION);
        push("command", &self.command);
        push("status", status);
        push("started_unix", &self.started_unix.to_string());
        push("updated_unix", &now_unix().to_string());
        if let Some(e) = error {
            push("error", &e.replace('\n', " "));
        }
        for (k, v) in &self.config {
            push(&format!("config.{k}"), v);
        }
        for (path, digest) in &self.inputs {
            push(&format!("input.{path}"), digest);
        }
        for path in &self.outputs {
            push("output", path);
        }
        out
    }

    fn write(&self, status: &str, error: Option<&str>) -> std::io::Result<()> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(&self.path, self.render(status, error))
    }

    /// Record the run as started. Call before any long computation.
    pub fn begin(&self) -> std::io::Result<()> {
        self.write("started", None)
    }

    pub fn finish_ok(&self) -> std::io::Result<()> {
        self.write("ok", None)
    }

    pub fn finish_failed(&self, error: &str) {
        // Best effort: the original error matters more than this write.
        let _ = self.write("failed", Some(error));
    }
}
