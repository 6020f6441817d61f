use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Writes `name` under `dir` through a temp file and a rename, so readers
/// never observe a half-written file.
pub fn write_atomic<F>(dir: &Path, name: &str, fill: F) -> Result<PathBuf>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    let target = dir.join(name);
    tmp.persist(&target)
        .with_context(|| format!("cannot write {}", target.display()))?;
    Ok(target)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

#[derive(Debug, Serialize)]
pub struct DatasetFingerprint {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn fingerprint(path: &Path) -> io::Result<DatasetFingerprint> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(DatasetFingerprint {
        path: path.to_path_buf(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub dataset: DatasetFingerprint,
    pub argv: Vec<String>,
}

pub fn write_manifest(run: &RunConfig) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: run,
        dataset: fingerprint(&run.data).with_context(|| format!("cannot read {}", run.data.display()))?,
        argv: std::env::args().collect(),
    };
    write_json(&run.out, "manifest.json", &manifest)
}
