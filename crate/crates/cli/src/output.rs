//! Output directory handling: lock file, atomic writes and the run manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};

use poolsim::config::SimConfig;

use crate::{exit, Classify, Failure};

const LOCK: &str = ".lock";

/// An output directory held exclusively for the lifetime of the value.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn lock(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root)
            .with_context(|| root.display().to_string())
            .code(exit::IO)?;
        match OpenOptions::new().write(true).create_new(true).open(root.join(LOCK)) {
            Ok(_) => Ok(OutputDir { root: root.to_path_buf() }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(anyhow!(
                "{} is in use by another run (remove {LOCK} if that run died)",
                root.display()
            ))
            .code(exit::LOCKED),
            Err(e) => Err(e).with_context(|| root.display().to_string()).code(exit::IO),
        }
    }

    /// Writes `name` atomically and records it in the manifest.
    pub fn write(&self, manifest: &mut Manifest, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        self.write_untracked(name, bytes)?;
        manifest.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_untracked(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        let res = File::create(&tmp)
            .and_then(|mut f| {
                f.write_all(bytes)?;
                f.sync_all()
            })
            .and_then(|()| fs::rename(&tmp, &path));
        if res.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        res.with_context(|| path.display().to_string()).code(exit::IO)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    /// Digests every input file the config names.
    pub fn start(cfg: &SimConfig) -> io::Result<Self> {
        let named = [
            &cfg.network.nodes,
            &cfg.network.edges,
            &cfg.demand.file,
            &cfg.pricing.grid_file,
        ];
        let mut inputs = Vec::new();
        for p in named.into_iter().flatten() {
            let bytes = fs::read(p).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", p.display())))?;
            inputs.push(FileDigest {
                path: p.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        Ok(Manifest {
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config: cfg.to_text(),
            inputs,
            started_unix_s: unix_now(),
            finished_unix_s: None,
            outputs: Vec::new(),
        })
    }

    pub fn finish(&mut self) {
        self.finished_unix_s = Some(unix_now());
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
