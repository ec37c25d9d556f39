//! Atomic artifact writes with all-or-nothing cleanup per run.
//!
//! Every file lands by writing `<name>.tmp` and renaming it into place,
//! so no reader ever sees a half-written artifact. If a command fails
//! partway, the files this run already placed are removed again. The run
//! manifest is written last, so its presence marks a complete run. No
//! timestamps anywhere: identical config and seed must reproduce
//! byte-identical output trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("vecprobe".to_string(), vecprobe::VERSION.to_string());
        versions.insert(
            "vecprobe-cli".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        Self {
            command: command.to_string(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            versions,
        }
    }
}

pub struct ArtifactSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
    staged: Vec<PathBuf>,
}

impl ArtifactSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("creating {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            staged: Vec::new(),
        })
    }

    /// Staging path for library writers that take a filename; follow with
    /// [`ArtifactSet::commit`].
    pub fn stage(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(format!("{name}.tmp"));
        self.staged.push(path.clone());
        path
    }

    pub fn commit(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let from = self.dir.join(format!("{name}.tmp"));
        let to = self.dir.join(name);
        fs::rename(&from, &to)
            .map_err(|e| CliError::Data(format!("finalizing {}: {e}", to.display())))?;
        self.staged.retain(|p| p != &from);
        self.written.push(to.clone());
        Ok(to)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let tmp = self.stage(name);
        fs::write(&tmp, bytes)
            .map_err(|e| CliError::Data(format!("writing {}: {e}", tmp.display())))?;
        self.commit(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Data(format!("serializing {name}: {e}")))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Removes everything this run wrote or staged.
    fn discard(&mut self) {
        for path in self.written.drain(..).chain(self.staged.drain(..)) {
            let _ = fs::remove_file(path);
        }
    }
}

/// Runs `body` against a fresh artifact set, appends the run manifest on
/// success, and removes this run's partial outputs on failure.
pub fn run_command<F>(command: &str, cfg: &RunConfig, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut ArtifactSet) -> Result<(), CliError>,
{
    let mut set = ArtifactSet::create(&cfg.out)?;
    let result = body(&mut set).and_then(|()| {
        set.write_json("manifest.json", &RunManifest::new(command, cfg))
            .map(|_| ())
    });
    match result {
        Ok(()) => {
            log::info!("{command}: artifacts in {}", cfg.out.display());
            Ok(())
        }
        Err(e) => {
            set.discard();
            Err(e)
        }
    }
}
