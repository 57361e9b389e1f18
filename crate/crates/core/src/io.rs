//! Line-delimited record files with a schema header, and run manifests.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "infogain/manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const TASKS_SCHEMA: &str = "infogain/tasks";
pub const TRAJECTORIES_SCHEMA: &str = "infogain/trajectories";
pub const REWARDS_SCHEMA: &str = "infogain/rewards";
pub const SFT_SCHEMA: &str = "infogain/summary-sft";
pub const SUMMARY_CACHE_SCHEMA: &str = "infogain/summary-cache";
pub const PREDICTIONS_SCHEMA: &str = "infogain/predictions";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
}

pub fn header_line(schema: &str, version: u32) -> String {
    serde_json::to_string(&Header { schema: schema.into(), version }).expect("header serializes")
}

/// Writes a header line followed by one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, schema: &str, version: u32, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header_line(schema, version))?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record file. A leading header must name `schema` and a version
/// no newer than `max_version`; files without a header are read as-is.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str, max_version: u32) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        if i == 0 && v.get("schema").is_some() {
            let h: Header =
                serde_json::from_value(v).map_err(|e| Error::schema(format!("{}:1", path.display()), e.to_string()))?;
            if h.schema != schema || h.version > max_version {
                return Err(Error::schema(
                    format!("{}:1", path.display()),
                    format!("expected {schema} v<={max_version}, found {} v{}", h.schema, h.version),
                ));
            }
            continue;
        }
        out.push(
            serde_json::from_value(v)
                .map_err(|e| Error::schema(format!("{}:{}", path.display(), i + 1), e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Everything needed to regenerate a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub command: String,
    /// Fully resolved configuration of the run.
    pub config: Value,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    /// Timings and other non-reproducible facts; not part of any output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<Value>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, config: Value) -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            config,
            outputs: BTreeMap::new(),
            runtime: None,
        }
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let name = path.to_string_lossy().into_owned();
        self.outputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn path_for(primary: &Path) -> PathBuf {
        let mut s = primary.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let path = Self::path_for(primary);
        write_text(&path, &(serde_json::to_string_pretty(self)? + "\n"))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::schema("schema", "not a manifest"));
        }
        Ok(m)
    }

    /// Output files whose current bytes differ from the recorded hashes.
    pub fn mismatches(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (name, hash) in &self.outputs {
            if sha256_file(Path::new(name))? != *hash {
                bad.push(name.clone());
            }
        }
        Ok(bad)
    }
}
