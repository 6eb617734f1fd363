//! Output directories, atomic writes, digests and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = concat!("hvts ", env!("CARGO_PKG_VERSION"));

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Refuses to write over an input, or over an existing output without
/// `force`.
pub fn prepare_file(out: &Path, inputs: &[&Path], force: bool) -> CliResult<()> {
    if inputs.iter().any(|i| same_file(i, out)) {
        return Err(CliError::Invalid(format!("output {} is also an input", out.display())));
    }
    if out.exists() && !force {
        return Err(CliError::OutputExists { path: out.to_path_buf() });
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

/// A run directory with `checkpoints/`, `metrics/` and `plots/`, and a record
/// of every file written into it.
pub struct RunDir {
    pub root: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    /// Creates the directory. An existing nonempty directory is replaced only
    /// with `force`; a directory containing an input is never replaced.
    pub fn create(root: &Path, inputs: &[&Path], force: bool) -> CliResult<Self> {
        if root.exists() {
            let nonempty = fs::read_dir(root).map_err(|e| CliError::io(root, e))?.next().is_some();
            if nonempty {
                if !force {
                    return Err(CliError::OutputExists { path: root.to_path_buf() });
                }
                if let Ok(r) = root.canonicalize() {
                    if inputs.iter().any(|i| i.canonicalize().is_ok_and(|i| i.starts_with(&r))) {
                        return Err(CliError::Invalid(format!(
                            "output directory {} contains an input",
                            root.display()
                        )));
                    }
                }
                fs::remove_dir_all(root).map_err(|e| CliError::io(root, e))?;
            }
        }
        for sub in ["checkpoints", "metrics", "plots"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        }
        Ok(Self { root: root.to_path_buf(), outputs: BTreeMap::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_bytes(bytes));
        Ok(())
    }

    pub fn write_str(&mut self, rel: &str, s: &str) -> CliResult<()> {
        self.write(rel, s.as_bytes())
    }

    /// Records a file written by someone else (e.g. a checkpoint saved
    /// during training).
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let digest = sha256_file(&self.path(rel))?;
        self.outputs.insert(rel.to_string(), digest);
        Ok(())
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }

    /// Writes `manifest.json` (deterministic) and `timings.json` (wall clock,
    /// kept apart so manifests of identical runs are byte-identical).
    pub fn finish(self, mut manifest: RunManifest, timings: &serde_json::Value) -> CliResult<PathBuf> {
        // Not digested: its content changes from run to run by nature.
        let t = hvts::canonical_json(timings)?;
        write_atomic(&self.path("timings.json"), t.as_bytes())?;
        manifest.outputs = self.outputs.clone();
        let m = manifest.to_json()?;
        let path = self.path("manifest.json");
        write_atomic(&path, m.as_bytes())?;
        Ok(path)
    }
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input role -> path as given and sha256.
    pub inputs: BTreeMap<String, InputRecord>,
    /// Output path (relative to the run directory) -> sha256.
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    /// Name of the file holding wall-clock timings.
    pub timings: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    /// `config` should not contain output paths, so that identical runs into
    /// different directories have identical manifests.
    pub fn new(command: &str, config: &impl Serialize, inputs: &[(String, &Path)]) -> CliResult<Self> {
        let mut digests = BTreeMap::new();
        for (role, p) in inputs {
            let rec = InputRecord { path: p.display().to_string(), sha256: sha256_file(p)? };
            digests.insert(role.clone(), rec);
        }
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config).map_err(hvts::Error::from)?,
            seeds: BTreeMap::new(),
            inputs: digests,
            outputs: BTreeMap::new(),
            tool_version: TOOL_VERSION.to_string(),
            timings: "timings.json".into(),
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(hvts::canonical_json(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_bytes(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn run_dir_requires_force() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let mut d = RunDir::create(&root, &[], false).unwrap();
        d.write_str("metrics/a.txt", "x").unwrap();
        assert!(matches!(RunDir::create(&root, &[], false), Err(CliError::OutputExists { .. })));
        let d = RunDir::create(&root, &[], true).unwrap();
        assert!(d.outputs().is_empty());
        assert!(!root.join("metrics/a.txt").exists());
    }

    #[test]
    fn refuses_to_overwrite_input() {
        let tmp = tempfile::tempdir().unwrap();
        let f = tmp.path().join("x.bin");
        fs::write(&f, b"1").unwrap();
        assert!(matches!(prepare_file(&f, &[&f], true), Err(CliError::Invalid(_))));
        assert!(matches!(prepare_file(&f, &[], false), Err(CliError::OutputExists { .. })));
        prepare_file(&f, &[], true).unwrap();
    }
}
