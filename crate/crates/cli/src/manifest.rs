use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub secs: f64,
}

/// Everything needed to rerun a subcommand and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<PhaseTiming>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects inputs, outputs and phase timings of one run.
pub struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(subcommand: &str, out_dir: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Run {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                threads,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: Vec::new(),
            },
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| {
            anyhow::Error::new(markov_progression::Error::Io(e)).context(format!("reading {}", path.display()))
        })?;
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn read_input_string(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read_input(path)?;
        String::from_utf8(bytes).map_err(|_| {
            anyhow::Error::new(markov_progression::Error::Parse {
                line: 0,
                message: format!("{} is not valid UTF-8", path.display()),
            })
        })
    }

    /// Writes `bytes` to `name` under the output directory.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> markov_progression::Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_output(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_output(name, text.as_bytes())
    }

    pub fn record_timing(&mut self, phase: &str, secs: f64) {
        self.manifest.timings.push(PhaseTiming {
            phase: phase.to_string(),
            secs,
        });
    }

    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record_timing(name, start.elapsed().as_secs_f64());
        out
    }

    /// Writes `<subcommand>.manifest.json` next to the outputs.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("{}.manifest.json", self.manifest.subcommand));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
