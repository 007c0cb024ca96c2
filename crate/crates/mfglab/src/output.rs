//! CSV tables, JSON artifacts and run manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Float with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// In-memory CSV table with string cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<I: IntoIterator<Item = T>, T: Into<String>>(header: I) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// UTF-8 CSV with a header row and `\n` terminators.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))
    }
}

/// Output directory that records the hash of every artifact it writes.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    file: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    seed: u64,
    threads: Option<usize>,
    package: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    config: &'a C,
    outputs: Vec<ManifestFile<'a>>,
    unix_time: u64,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.path(name), bytes)?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write_bytes(name, &table.to_bytes()?)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Hashes a file written by another routine and records it.
    pub fn register(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(name))?;
        self.files.push((name.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes `manifest.json` listing every recorded artifact.
    pub fn write_manifest<C: Serialize>(
        &self,
        command: &str,
        seed: u64,
        threads: Option<usize>,
        config_bytes: &[u8],
        config: &C,
    ) -> Result<()> {
        let unix_time = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let config_sha256 = sha256_hex(config_bytes);
        let m = Manifest {
            command,
            seed,
            threads,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: &config_sha256,
            config,
            outputs: self.files.iter().map(|(f, h)| ManifestFile { file: f, sha256: h }).collect(),
            unix_time,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        std::fs::write(self.path("manifest.json"), bytes)?;
        Ok(())
    }
}
