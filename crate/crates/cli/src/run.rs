//! Run-scoped output directories and their manifests.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use ranklab::training::sha256_hex;
use ranklab::{Error, Result};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<InputFile>,
    /// File names relative to the run directory.
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
}

pub struct RunDir {
    path: PathBuf,
    manifest: RunManifest,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunDir {
    /// Creates `<out>/<hash12>-<n>` for the first unused `n ≥ 1`.
    pub fn create(out: &Path, command: &str, config_hash: &str, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let prefix = &config_hash[..12.min(config_hash.len())];
        for n in 1u64.. {
            let run_id = format!("{prefix}-{n}");
            let path = out.join(&run_id);
            match fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(RunDir {
                        path,
                        manifest: RunManifest {
                            run_id,
                            command: command.into(),
                            config_hash: config_hash.into(),
                            inputs: Vec::new(),
                            outputs: Vec::new(),
                            tool_version: env!("CARGO_PKG_VERSION").into(),
                            seed,
                        },
                    })
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&path, e)),
            }
        }
        unreachable!("run sequence exhausted")
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        self.manifest.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Path for an output file that the caller writes itself.
    pub fn output_path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.into());
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.output_path(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.path.join("manifest.json");
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| io_err(&path, e))?;
        eprintln!("run {} -> {}", self.manifest.run_id, self.path.display());
        Ok(self.path)
    }
}

/// Hash of a command's effective arguments.
pub fn args_hash(command: &str, args: &impl Serialize) -> Result<String> {
    let json = serde_json::to_string(&(command, args))?;
    Ok(sha256_hex(json.as_bytes()))
}
