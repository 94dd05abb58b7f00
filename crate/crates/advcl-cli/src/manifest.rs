//! Run manifests and the run registry.
//!
//! Every pipeline run writes its artifacts into one directory, then a
//! `manifest.json` naming each of them with its content hash. A manifest
//! plus the files it references is the complete record of a run; loading an
//! artifact re-checks its hash against the manifest sitting next to it, and
//! a finished run refuses to leave unlisted files behind.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "advcl-run-manifest";
const MANIFEST_VERSION: u32 = 1;

/// One file a run read or wrote, with its content hash at that moment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    /// Directory-relative name for outputs; as-given path for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    /// `git describe` of the code that produced the run.
    pub git_describe: String,
    /// The full resolved configuration the run executed.
    pub config: crate::config::ConfigFile,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub duration_ms: u64,
}

pub fn git_describe() -> &'static str {
    env!("ADVCL_GIT_DESCRIBE")
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot hash artifact {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic run identity: command, seed, and the exact configuration.
pub fn run_id(command: &str, seed: u64, config: &crate::config::ConfigFile) -> String {
    let snapshot = serde_json::to_string(config).expect("config serializes");
    let digest = sha256_bytes(format!("{command}\n{seed}\n{snapshot}").as_bytes());
    format!("{command}-s{seed}-{}", &digest[..8])
}

/// Tracks one run directory while a command fills it, then seals it with a
/// manifest.
pub struct RunRecorder {
    pub dir: PathBuf,
    run_id: String,
    command: String,
    seed: u64,
    config: crate::config::ConfigFile,
    inputs: Vec<Artifact>,
    outputs: Vec<String>,
    started_ms: u64,
}

impl RunRecorder {
    /// Claim `dir` for this run. The directory must be new or empty: runs
    /// never share directories, and never overwrite older runs.
    pub fn begin(
        dir: &Path,
        command: &str,
        seed: u64,
        config: &crate::config::ConfigFile,
    ) -> Result<RunRecorder> {
        if dir.exists() {
            let mut entries = fs::read_dir(dir)
                .with_context(|| format!("cannot inspect output directory {}", dir.display()))?;
            if entries.next().is_some() {
                bail!(
                    "output directory {} is not empty; each run needs its own \
                     fresh directory",
                    dir.display()
                );
            }
        } else {
            fs::create_dir_all(dir)
                .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        }
        Ok(RunRecorder {
            dir: dir.to_path_buf(),
            run_id: run_id(command, seed, config),
            command: command.to_string(),
            seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_ms: now_ms(),
        })
    }

    /// Record a file the run read, hashing it now.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Artifact {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Write an output file into the run directory and register it.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .with_context(|| format!("cannot write artifact {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    /// Register a file some library call already wrote into the directory.
    pub fn adopt_output(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        if !path.is_file() {
            bail!("expected artifact {} was never written", path.display());
        }
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Hash all outputs, write the manifest, verify the directory holds
    /// exactly the declared files, and register the run.
    pub fn finish(self) -> Result<PathBuf> {
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                Ok(Artifact {
                    path: name.clone(),
                    sha256: sha256_file(&self.dir.join(name))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let finished = now_ms();
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            run_id: self.run_id.clone(),
            command: self.command.clone(),
            seed: self.seed,
            git_describe: git_describe().to_string(),
            config: self.config,
            inputs: self.inputs,
            outputs,
            started_unix_ms: self.started_ms,
            finished_unix_ms: finished,
            duration_ms: finished.saturating_sub(self.started_ms),
        };
        let path = self.dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&manifest).context("manifest serialization")?;
        fs::write(&path, json)
            .with_context(|| format!("cannot write manifest {}", path.display()))?;
        check_no_orphans(&self.dir, &manifest)?;
        register_run(&manifest, &self.dir)?;
        Ok(path)
    }
}

/// Every file under `dir` must be the manifest itself or one of its
/// declared outputs — reachable from exactly this one manifest.
pub fn check_no_orphans(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut orphans = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("cannot list {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .expect("walk stays under dir")
                .to_string_lossy()
                .to_string();
            if rel != MANIFEST_NAME && !manifest.outputs.iter().any(|a| a.path == rel) {
                orphans.push(rel);
            }
        }
    }
    for out in &manifest.outputs {
        if !dir.join(&out.path).is_file() {
            bail!(
                "manifest {} lists output {} which does not exist",
                dir.join(MANIFEST_NAME).display(),
                out.path
            );
        }
    }
    if !orphans.is_empty() {
        orphans.sort();
        bail!(
            "orphan artifacts in {}: {} — every file must be reachable from \
             the run's manifest",
            dir.display(),
            orphans.join(", ")
        );
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_slice(&bytes)
        .with_context(|| format!("malformed manifest {}", path.display()))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        bail!(
            "manifest {} has format {}/{}, expected {MANIFEST_FORMAT}/{MANIFEST_VERSION}",
            path.display(),
            manifest.format,
            manifest.version
        );
    }
    Ok(manifest)
}

/// Read an artifact for use as an input. If a run manifest sits in the same
/// directory and lists the file, the stored hash must match the bytes on
/// disk; silent corruption or editing fails loudly with both hashes.
pub fn read_verified(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        let mut msg = format!("missing artifact {}", path.display());
        if let Some(expected) = manifest_entry_for(path)? {
            msg.push_str(&format!(
                "; the run manifest next to it expects sha256 {expected}"
            ));
        }
        bail!("{msg}");
    }
    let bytes =
        fs::read(path).with_context(|| format!("cannot read artifact {}", path.display()))?;
    if let Some(expected) = manifest_entry_for(path)? {
        let actual = sha256_bytes(&bytes);
        if actual != expected {
            bail!(
                "artifact hash mismatch for {}:\n  manifest: {expected}\n  on disk:  {actual}\n\
                 the file changed since its run finished",
                path.display()
            );
        }
    }
    Ok(bytes)
}

fn manifest_entry_for(path: &Path) -> Result<Option<String>> {
    let Some(dir) = path.parent() else {
        return Ok(None);
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.is_file() || path.file_name().is_none() {
        return Ok(None);
    }
    let manifest = load_manifest(&manifest_path)?;
    let name = path.file_name().unwrap().to_string_lossy().to_string();
    Ok(manifest
        .outputs
        .iter()
        .find(|a| a.path == name)
        .map(|a| a.sha256.clone()))
}

/// One line per finished run, appended under an advisory file lock so
/// concurrent runs in different directories never interleave writes.
#[derive(Debug, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub run_id: String,
    pub command: String,
    pub out_dir: String,
    pub manifest: String,
    pub finished_unix_ms: u64,
}

fn register_run(manifest: &RunManifest, dir: &Path) -> Result<()> {
    let root = crate::config::data_dir();
    fs::create_dir_all(&root)
        .with_context(|| format!("cannot create data directory {}", root.display()))?;
    let lock_path = root.join("registry.lock");
    let lock = File::create(&lock_path)
        .with_context(|| format!("cannot open registry lock {}", lock_path.display()))?;
    lock.lock()
        .with_context(|| format!("cannot lock registry {}", lock_path.display()))?;

    let entry = RegistryEntry {
        run_id: manifest.run_id.clone(),
        command: manifest.command.clone(),
        out_dir: dir.display().to_string(),
        manifest: dir.join(MANIFEST_NAME).display().to_string(),
        finished_unix_ms: manifest.finished_unix_ms,
    };
    let line = serde_json::to_string(&entry).context("registry entry serialization")?;
    let registry = root.join("registry.jsonl");
    use std::io::Write;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&registry)
        .with_context(|| format!("cannot open registry {}", registry.display()))?;
    writeln!(file, "{line}")
        .with_context(|| format!("cannot update registry {}", registry.display()))?;
    // Lock releases when `lock` drops; unlocking explicitly keeps the
    // intent visible.
    lock.unlock().ok();
    Ok(())
}
