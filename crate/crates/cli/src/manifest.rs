//! Run directories: outputs are written to a staging directory, hashed, listed
//! in `manifest.json` and moved into place in one rename.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::RunError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// relative to the run directory
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(run_dir.join(MANIFEST_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every listed output exists and matches its digest.
    pub fn verify(&self, run_dir: &Path) -> Result<(), RunError> {
        for entry in &self.outputs {
            let path = run_dir.join(&entry.path);
            let digest = sha256_file(&path)
                .map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))?;
            if digest != entry.sha256 {
                return Err(RunError::Runtime(format!("{} does not match its digest", entry.path)));
            }
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> Option<&OutputEntry> {
        self.outputs.iter().find(|o| o.path == name)
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the outputs of one run.
pub struct RunSink {
    final_dir: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    kind: String,
    config: serde_json::Value,
    started: String,
}

impl RunSink {
    /// `final_dir` must not exist yet, or be empty.
    pub fn create(final_dir: &Path, kind: &str, config: serde_json::Value) -> Result<Self, RunError> {
        if final_dir.exists() && fs::read_dir(final_dir)?.next().is_some() {
            return Err(RunError::Validation(vec![format!(
                "output directory {} already exists and is not empty",
                final_dir.display()
            )]));
        }
        let name = final_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let parent = final_dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            final_dir: final_dir.to_path_buf(),
            staging,
            files: Vec::new(),
            kind: kind.to_string(),
            config,
            started: chrono::Utc::now().to_rfc3339(),
        })
    }

    /// Writes one output file through `write`.
    pub fn write<F>(&mut self, name: &str, write: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), RunError>,
    {
        let path = self.staging.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        write(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Hashes the outputs, writes the manifest and moves the run into place.
    pub fn finish(self) -> Result<RunManifest, RunError> {
        let result = self.seal();
        if result.is_err() {
            let _ = fs::remove_dir_all(&self.staging);
        }
        result
    }

    fn seal(&self) -> Result<RunManifest, RunError> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let path = self.staging.join(name);
            outputs.push(OutputEntry {
                path: name.clone(),
                sha256: sha256_file(&path)?,
                bytes: fs::metadata(&path)?.len(),
            });
        }
        let manifest = RunManifest {
            kind: self.kind.clone(),
            config: self.config.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.clone(),
            finished: chrono::Utc::now().to_rfc3339(),
            outputs,
        };
        fs::write(
            self.staging.join(MANIFEST_NAME),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        if self.final_dir.exists() {
            fs::remove_dir(&self.final_dir)?;
        }
        fs::rename(&self.staging, &self.final_dir)?;
        Ok(manifest)
    }

    /// Removes everything written so far.
    pub fn abort(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

/// Runs `body` against a fresh sink and commits it, or removes partial
/// outputs if `body` fails.
pub fn with_sink<F>(final_dir: &Path, kind: &str, config: serde_json::Value, body: F) -> Result<RunManifest, RunError>
where
    F: FnOnce(&mut RunSink) -> Result<(), RunError>,
{
    let mut sink = RunSink::create(final_dir, kind, config)?;
    match body(&mut sink) {
        Ok(()) => sink.finish(),
        Err(e) => {
            sink.abort();
            Err(e)
        }
    }
}
