//! Run artifacts: versioned CSV tables, JSON documents and the manifest
//! that lists every emitted file with its SHA-256.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::model::ScenarioModel;
use crate::value::{Cut, CutPool};

pub const SCHEMA: u32 = 1;

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Components joined with `;`, for vector-valued cells.
pub fn vec_cell(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

/// CSV bytes: a `# schema=1` line, the header, then the rows.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut buf = format!("# schema={SCHEMA}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            if r.len() != header.len() {
                return invalid(format!("row has {} fields, header has {}", r.len(), header.len()));
            }
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// Reads a CSV written by [`csv_bytes`] back into header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub wall_clock_seconds: f64,
}

/// Collects the files of one run under an output directory.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    started: Instant,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn outputs(&self) -> &[FileEntry] {
        &self.outputs
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.outputs.retain(|f| f.path != name);
        self.outputs.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let bytes = csv_bytes(header, rows)?;
        self.write_bytes(name, &bytes)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Writes manifest.json; it lists every file written so far.
    pub fn finish(self, command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Result<Manifest> {
        let manifest = Manifest {
            schema: SCHEMA,
            command: command.to_string(),
            seed,
            threads,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(manifest)
    }
}

/// Loads a pool written as pool.json and checks it against the model.
/// The floor is reset to the model's own.
pub fn load_pool(path: &Path, model: &ScenarioModel) -> Result<CutPool> {
    let raw: CutPool = serde_json::from_slice(&fs::read(path)?)?;
    let mut pool = CutPool::floor_only(model);
    for (i, c) in raw.cuts.into_iter().enumerate() {
        if c.anchor.len() != model.state_dim() {
            return invalid(format!("cut {i} in {} has the wrong dimension", path.display()));
        }
        pool.push(Cut::new(c.anchor, c.intercept, c.slope)?);
    }
    Ok(pool)
}

/// Bin indices, one per line; blank lines and `#` comments are skipped.
pub fn read_observations(path: &Path, bins: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<usize>() {
            Ok(j) if j < bins => out.push(j),
            _ => {
                return Err(crate::Error::Config {
                    line: i + 1,
                    message: format!("{}: expected a bin index below {bins}, got {line:?}", path.display()),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_schema_line() {
        let b = csv_bytes(&["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        let s = String::from_utf8(b).unwrap();
        assert_eq!(s, "# schema=1\na,b\n1,\"x,y\"\n");
        assert!(csv_bytes(&["a"], &[vec![]]).is_err());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
