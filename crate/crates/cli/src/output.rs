//! Run artifacts: tables, the output directory and the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => format!("{x:?}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            // non-finite numbers have no JSON form
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Self {
            headers: headers.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.headers)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::text))?;
                }
                Ok(w.into_inner().map_err(|e| e.into_error())?)
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> = self
                            .headers
                            .iter()
                            .zip(row)
                            .map(|(h, c)| (h.to_string(), c.json()))
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                json_bytes(&rows)
            }
        }
    }
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files produced by a subcommand, held in memory until the run succeeds.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Adds `stem.csv` or `stem.json` depending on the format.
    pub fn table(&mut self, stem: &str, table: &Table, format: Format) -> Result<()> {
        let ext = match format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        self.add(format!("{stem}.{ext}"), table.render(format)?);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, json_bytes(value)?);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct IterationStats {
    pub solves: usize,
    pub total: usize,
    pub max: usize,
}

impl IterationStats {
    pub fn record(&mut self, iterations: usize) {
        self.solves += 1;
        self.total += iterations;
        self.max = self.max.max(iterations);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub version: &'static str,
    pub config: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub duration_seconds: f64,
    pub iterations: IterationStats,
    pub parameters: Value,
    pub outputs: Vec<OutputFile>,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let target = dir.join(name);
    let file_name = target.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = target.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, target)
}

pub const MANIFEST: &str = "manifest.json";

/// Writes every artifact, then the manifest. If any data file fails, the
/// ones already written are removed and the error is returned.
pub fn commit(dir: &Path, artifacts: &Artifacts, manifest: &mut RunManifest) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in &artifacts.files {
        if let Some(parent) = Path::new(name).parent() {
            fs::create_dir_all(dir.join(parent))?;
        }
        if let Err(e) = write_atomic(dir, name, bytes) {
            for w in &written {
                let _ = fs::remove_file(dir.join(w));
            }
            return Err(e);
        }
        written.push(name.clone());
        manifest.outputs.push(OutputFile {
            name: name.clone(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }
    let bytes = serde_json::to_vec_pretty(manifest).map_err(std::io::Error::other)?;
    write_atomic(dir, MANIFEST, &bytes)
}

/// Failed run: clears data files a previous manifest in `dir` listed, then
/// records the failure.
pub fn commit_failure(dir: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    if let Ok(text) = fs::read(dir.join(MANIFEST)) {
        if let Ok(old) = serde_json::from_slice::<Value>(&text) {
            for out in old["outputs"].as_array().into_iter().flatten() {
                if let Some(name) = out["name"].as_str() {
                    let _ = fs::remove_file(dir.join(name));
                }
            }
        }
    }
    let bytes = serde_json::to_vec_pretty(manifest).map_err(std::io::Error::other)?;
    write_atomic(dir, MANIFEST, &bytes)
}
