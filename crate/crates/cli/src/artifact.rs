//! Versioned stage artifacts in the run directory.
//!
//! JSON artifacts are wrapped in an [`Envelope`]. JSONL artifacts start with
//! a header line holding the same fields minus `data`, followed by one record
//! per line.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub stage: String,
    pub stage_version: u32,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    #[serde(flatten)]
    pub header: Header,
    pub data: T,
}

/// Stage name and version stamped on what it writes.
#[derive(Debug, Clone, Copy)]
pub struct Stage {
    pub name: &'static str,
    pub version: u32,
}

impl Stage {
    pub fn header(&self, config_hash: &str) -> Header {
        Header {
            schema_version: SCHEMA_VERSION,
            stage: self.name.into(),
            stage_version: self.version,
            config_hash: config_hash.into(),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, header: Header, data: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(&Envelope { header, data })
        .map_err(|e| CliError::Validation(format!("serialize {}: {e}", path.display())))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn line<T: Serialize>(path: &Path, v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string(v).map_err(|e| CliError::Validation(format!("serialize {}: {e}", path.display())))?;
    s.push('\n');
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: Header, records: &[T]) -> Result<(), CliError> {
    let mut out = line(path, &header)?;
    for r in records {
        out.push_str(&line(path, r)?);
    }
    write_atomic(path, out.as_bytes())
}

fn check(path: &Path, h: &Header, stage: Stage) -> Result<(), CliError> {
    if h.schema_version != SCHEMA_VERSION || h.stage != stage.name || h.stage_version != stage.version {
        return Err(CliError::Validation(format!(
            "{}: written by {} v{} (schema {}), expected {} v{} (schema {SCHEMA_VERSION}); rerun with --force",
            path.display(),
            h.stage,
            h.stage_version,
            h.schema_version,
            stage.name,
            stage.version
        )));
    }
    Ok(())
}

fn open(path: &Path, command: &'static str) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Upstream { artifact: path.display().to_string(), command },
        _ => CliError::io(path, e),
    })
}

/// Read a JSON artifact. A missing file is an upstream error naming `command`.
pub fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage, command: &'static str) -> Result<(Header, T), CliError> {
    let f = open(path, command)?;
    let env: Envelope<T> = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    check(path, &env.header, stage)?;
    Ok((env.header, env.data))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: Stage, command: &'static str) -> Result<(Header, Vec<T>), CliError> {
    let f = open(path, command)?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let bad = |i: usize, e: &dyn std::fmt::Display| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1));
    let header: Header = match lines.next() {
        Some((i, l)) => serde_json::from_str(&l.map_err(|e| CliError::io(path, e))?).map_err(|e| bad(i, &e))?,
        None => return Err(CliError::Validation(format!("{}: empty artifact", path.display()))),
    };
    check(path, &header, stage)?;
    let mut out = Vec::new();
    for (i, l) in lines {
        let l = l.map_err(|e| CliError::io(path, e))?;
        if !l.trim().is_empty() {
            out.push(serde_json::from_str(&l).map_err(|e| bad(i, &e))?);
        }
    }
    Ok((header, out))
}

/// Header of an existing artifact, if it can be read at all.
pub fn peek_header(path: &Path) -> Option<Header> {
    let f = fs::File::open(path).ok()?;
    let mut first = String::new();
    BufReader::new(f).read_line(&mut first).ok()?;
    if let Ok(h) = serde_json::from_str::<Header>(&first) {
        return Some(h);
    }
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str::<Envelope<serde_json::Value>>(&text).ok().map(|e| e.header)
}

/// True when `path` exists and was produced by this stage under this config.
pub fn is_fresh(path: &Path, stage: Stage, config_hash: &str) -> bool {
    peek_header(path).is_some_and(|h| h == stage.header(config_hash))
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn corpus(&self) -> PathBuf {
        self.0.join("corpus.jsonl")
    }
    pub fn coded(&self) -> PathBuf {
        self.0.join("coded.jsonl")
    }
    pub fn sweep(&self) -> PathBuf {
        self.0.join("sweep.json")
    }
    pub fn systems(&self) -> PathBuf {
        self.0.join("systems")
    }
    pub fn levels(&self) -> PathBuf {
        self.0.join("levels")
    }
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.json")
    }
    pub fn graph(&self) -> PathBuf {
        self.0.join("graph")
    }
    pub fn report(&self) -> PathBuf {
        self.0.join("report")
    }

    /// Category-system artifacts, sorted by file name.
    pub fn system_files(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = fs::read_dir(self.systems())
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    }
}

/// File-name-safe form of a system or backend name.
pub fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' }).collect()
}
