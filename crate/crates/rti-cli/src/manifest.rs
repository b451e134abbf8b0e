//! Run directories and manifests.
//!
//! A command accumulates its inputs and outputs in memory and commits them
//! in one step on success: `runs/<stamp>-<command>/` gets `manifest.json`,
//! copies of the input files under `inputs/`, and the artifacts under
//! `outputs/`. Nothing is written on failure. The manifest carries no wall
//! time, so reruns of the same command on the same inputs produce identical
//! manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Everything needed to reproduce a run: the command line, the fully
/// resolved configuration, and content digests of all files touched.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// Resolved configuration, `null` for commands that take none.
    pub config: Value,
    /// Input path -> SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory -> SHA-256 of its content.
    pub outputs: BTreeMap<String, String>,
}

/// In-memory staging area for one command invocation.
pub struct RunContext {
    command: String,
    argv: Vec<String>,
    pub seed: u64,
    runs_root: PathBuf,
    config: Value,
    inputs: Vec<(PathBuf, Vec<u8>)>,
    outputs: Vec<(String, String)>,
}

impl RunContext {
    pub fn new(runs_root: &Path, command: &str, argv: Vec<String>, seed: u64) -> RunContext {
        RunContext {
            command: command.to_string(),
            argv,
            seed,
            runs_root: runs_root.to_path_buf(),
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Read a UTF-8 input file, recording it for the manifest and for the
    /// `inputs/` copy.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| {
            CliError::Validation(format!("{} is not valid UTF-8", path.display()))
        })?;
        if !self.inputs.iter().any(|(p, _)| p == path) {
            self.inputs.push((path.to_path_buf(), bytes));
        }
        Ok(text)
    }

    pub fn set_config(&mut self, resolved: Value) {
        self.config = resolved;
    }

    /// Stage an output file (written under `outputs/` on commit).
    pub fn add_output(&mut self, name: &str, content: String) {
        self.outputs.push((name.to_string(), content));
    }

    /// Commit the run directory and return its path.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let root = create_run_dir(&self.runs_root, &self.command)?;
        let inputs_dir = root.join("inputs");
        let outputs_dir = root.join("outputs");
        fs::create_dir(&inputs_dir).map_err(io_err(&inputs_dir))?;
        fs::create_dir(&outputs_dir).map_err(io_err(&outputs_dir))?;

        let mut manifest = RunManifest {
            tool: "rti".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            argv: self.argv,
            seed: self.seed,
            config: self.config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };

        for (i, (path, bytes)) in self.inputs.iter().enumerate() {
            let base = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "input".into());
            let copy = inputs_dir.join(format!("{i}-{base}"));
            fs::write(&copy, bytes).map_err(io_err(&copy))?;
            manifest
                .inputs
                .insert(path.display().to_string(), sha256_hex(bytes));
        }
        for (name, content) in &self.outputs {
            let path = outputs_dir.join(name);
            fs::write(&path, content.as_bytes()).map_err(io_err(&path))?;
            manifest
                .outputs
                .insert(format!("outputs/{name}"), sha256_hex(content.as_bytes()));
        }

        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let manifest_path = root.join("manifest.json");
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        Ok(root)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError {
    let path = path.to_path_buf();
    move |e| CliError::Validation(format!("cannot write {}: {e}", path.display()))
}

/// `<runs_root>/<unix seconds>.<nanos>-<command>`, suffixed on collision.
fn create_run_dir(runs_root: &Path, command: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(runs_root).map_err(io_err(runs_root))?;
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    let stamp = format!("{}.{:09}-{command}", now.as_secs(), now.subsec_nanos());
    for attempt in 0..100u32 {
        let name = if attempt == 0 {
            stamp.clone()
        } else {
            format!("{stamp}-{attempt}")
        };
        let dir = runs_root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    Err(CliError::Validation(format!(
        "cannot allocate a run directory under {}",
        runs_root.display()
    )))
}
