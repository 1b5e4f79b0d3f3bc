use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Pretty JSON with a trailing newline. Field order is fixed by the types
/// and floats round-trip exactly, so equal values give equal bytes.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("model types serialize");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Collects output files and their hashes for the run manifest.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::write(&path, e))?;
        self.written.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn finish(mut self, manifest_name: &str, mut manifest: RunManifest) -> CliResult<()> {
        manifest.outputs = std::mem::take(&mut self.written);
        self.write(manifest_name, to_json(&manifest).as_bytes())?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a run: the command, tool version, every
/// option, and the exact input files by hash. No timestamps, so reruns
/// produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub settings: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new<S: Serialize>(command: &str, settings: &S) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: serde_json::to_value(settings).expect("settings serialize"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }
}

fn csv_bytes(rows: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        rows(&mut w).expect("writing csv to memory");
        w.flush().expect("writing csv to memory");
    }
    buf
}

/// `region_id,mean,variance`, or `region_id,mean` for methods without a
/// predictive variance.
pub fn prediction_csv(ids: &[&str], mean: &[f64], variance: Option<&[f64]>) -> Vec<u8> {
    csv_bytes(|w| {
        match variance {
            Some(var) => {
                w.write_record(["region_id", "mean", "variance"])?;
                for ((id, m), v) in ids.iter().zip(mean).zip(var) {
                    w.write_record([*id, &m.to_string(), &v.to_string()])?;
                }
            }
            None => {
                w.write_record(["region_id", "mean"])?;
                for (id, m) in ids.iter().zip(mean) {
                    w.write_record([*id, &m.to_string()])?;
                }
            }
        }
        Ok(())
    })
}

/// Square matrix with region ids as the header row and first column.
pub fn covariance_csv(ids: &[&str], cov: &nalgebra::DMatrix<f64>) -> Vec<u8> {
    csv_bytes(|w| {
        let mut header = vec!["region_id"];
        header.extend_from_slice(ids);
        w.write_record(&header)?;
        for (i, id) in ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(cov.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}
