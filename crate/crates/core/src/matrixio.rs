//! Gradient-feature matrices on disk.
//!
//! The binary layout is fixed and little-endian:
//!
//! ```text
//! offset 0   b"SEEDMAT1"
//! offset 8   rows  (u32 LE)
//! offset 12  cols  (u32 LE)
//! offset 16  rows * cols f32 LE, row-major, no padding
//! ```
//!
//! A header-less CSV of comma-separated floats is accepted as a fallback.
//! Checkpoint bundles are described by a JSON manifest whose relative paths
//! resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedError};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SEEDMAT1";
pub const HEADER_LEN: usize = 16;

/// Row-major matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(SeedError::shape(
                "matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(SeedError::shape(
                    "matrix rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact(0) panics, zero-width matrices yield empty rows
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Element-wise conversion through `f64`.
    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::narrow(v.widen())).collect(),
        }
    }

    /// First non-finite entry, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(p) => Err(SeedError::NonFinite {
                row: p / self.cols.max(1),
                col: p % self.cols.max(1),
            }),
        }
    }
}

/// Serialize `m` as `SEEDMAT1`. Values are stored as `f32`.
pub fn write_matrix<T: Scalar, W: Write>(m: &DenseMatrix<T>, sink: W) -> Result<()> {
    let rows = u32::try_from(m.rows).map_err(|_| SeedError::validation("too many rows"))?;
    let cols = u32::try_from(m.cols).map_err(|_| SeedError::validation("too many columns"))?;
    let mut out = OffsetWriter {
        inner: sink,
        offset: 0,
    };
    out.put(MAGIC)?;
    out.put(&rows.to_le_bytes())?;
    out.put(&cols.to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in m.data.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&(v.widen() as f32).to_le_bytes());
        }
        out.put(&buf)?;
    }
    out.inner
        .flush()
        .map_err(|e| SeedError::io(format!("flush at byte offset {}", out.offset), e))
}

struct OffsetWriter<W> {
    inner: W,
    offset: u64,
}

impl<W: Write> OffsetWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| SeedError::io(format!("write at byte offset {}", self.offset), e))?;
        self.offset += bytes.len() as u64;
        Ok(())
    }
}

/// Parse a `SEEDMAT1` stream. Rejects trailing or missing payload bytes.
pub fn read_matrix<T: Scalar, R: Read>(mut source: R) -> Result<DenseMatrix<T>> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| SeedError::io("read matrix stream", e))?;
    parse_binary(&bytes)
}

fn parse_binary<T: Scalar>(bytes: &[u8]) -> Result<DenseMatrix<T>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let seen = &bytes[..bytes.len().min(MAGIC.len())];
        return Err(SeedError::Format(format!(
            "bad magic {:?}, expected \"SEEDMAT1\"",
            String::from_utf8_lossy(seen)
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(SeedError::Format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows as u64 * cols as u64 * 4;
    if payload.len() as u64 != expected {
        return Err(SeedError::Length {
            expected,
            found: payload.len() as u64,
        });
    }
    let data: Vec<T> = payload
        .chunks_exact(4)
        .map(|b| T::narrow(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    let m = DenseMatrix { rows, cols, data };
    m.check_finite()?;
    Ok(m)
}

/// Header-less CSV, one row per record.
pub fn read_csv_matrix<T: Scalar, R: Read>(source: R) -> Result<DenseMatrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = 0usize;
    let mut cols = None;
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SeedError::Format(format!("csv record {i}: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(SeedError::shape(
                    "csv matrix",
                    format!("row {i} has {} fields, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| {
                SeedError::Format(format!("csv row {i}, col {j}: cannot parse {field:?}"))
            })?;
            data.push(T::narrow(v as f64));
        }
        rows += 1;
    }
    let m = DenseMatrix {
        rows,
        cols: cols.unwrap_or(0),
        data,
    };
    m.check_finite()?;
    Ok(m)
}

/// Load a matrix file, choosing the parser from its leading bytes.
pub fn load_matrix<T: Scalar>(path: &Path) -> Result<DenseMatrix<T>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SeedError::io(format!("read {}", path.display()), e))?;
    let parsed = if bytes.starts_with(b"SEEDMAT") {
        parse_binary(&bytes)
    } else {
        read_csv_matrix(bytes.as_slice())
    };
    parsed.map_err(|e| match e {
        SeedError::Io { .. } => e,
        other => SeedError::Format(format!("{}: {other}", path.display())),
    })
}

pub fn save_matrix<T: Scalar>(path: &Path, m: &DenseMatrix<T>) -> Result<()> {
    let f = File::create(path).map_err(|e| SeedError::io(format!("create {}", path.display()), e))?;
    write_matrix(m, BufWriter::new(f)).map_err(|e| match e {
        SeedError::Io { context, source } => SeedError::Io {
            context: format!("{}: {context}", path.display()),
            source,
        },
        other => other,
    })
}

/// Gradient features captured at one training checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointGradients<T> {
    pub step_id: i64,
    pub learning_rate: f64,
    pub train: DenseMatrix<T>,
    /// Target sets in name order.
    pub targets: Vec<(String, DenseMatrix<T>)>,
}

impl<T: Scalar> CheckpointGradients<T> {
    pub fn target(&self, name: &str) -> Option<&DenseMatrix<T>> {
        self.targets.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

/// Checkpoints that agree on train count, channel count and target shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle<T> {
    checkpoints: Vec<CheckpointGradients<T>>,
    train_count: usize,
    channel_count: usize,
    target_names: Vec<String>,
}

impl<T: Scalar> CheckpointBundle<T> {
    pub fn new(mut checkpoints: Vec<CheckpointGradients<T>>) -> Result<Self> {
        let first = checkpoints
            .first()
            .ok_or_else(|| SeedError::validation("bundle needs at least one checkpoint"))?;
        let n = first.train.rows();
        let c = first.train.cols();
        for ck in &mut checkpoints {
            ck.targets.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let names: Vec<String> = checkpoints[0].targets.iter().map(|(n, _)| n.clone()).collect();
        let target_rows: Vec<usize> = checkpoints[0].targets.iter().map(|(_, m)| m.rows()).collect();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(SeedError::validation(format!("duplicate target name `{}`", w[0])));
            }
        }

        for (idx, ck) in checkpoints.iter().enumerate() {
            let ctx = || format!("checkpoint {idx} (step {})", ck.step_id);
            if !(ck.learning_rate > 0.0 && ck.learning_rate.is_finite()) {
                return Err(SeedError::validation(format!(
                    "{}: learning_rate must be positive, got {}",
                    ctx(),
                    ck.learning_rate
                )));
            }
            if ck.train.rows() != n {
                return Err(SeedError::shape(
                    ctx(),
                    format!("train rows {} != {n}", ck.train.rows()),
                ));
            }
            if ck.train.cols() != c {
                return Err(SeedError::shape(
                    ctx(),
                    format!("train channel count {} != {c}", ck.train.cols()),
                ));
            }
            let these: Vec<&str> = ck.targets.iter().map(|(n, _)| n.as_str()).collect();
            if these != names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(SeedError::shape(
                    ctx(),
                    format!("target names {these:?} != {names:?}"),
                ));
            }
            for ((name, m), &rows) in ck.targets.iter().zip(&target_rows) {
                if m.cols() != c {
                    return Err(SeedError::shape(
                        ctx(),
                        format!("target `{name}` channel count {} != {c}", m.cols()),
                    ));
                }
                if m.rows() != rows {
                    return Err(SeedError::shape(
                        ctx(),
                        format!("target `{name}` rows {} != {rows}", m.rows()),
                    ));
                }
            }
        }

        Ok(Self {
            checkpoints,
            train_count: n,
            channel_count: c,
            target_names: names,
        })
    }

    pub fn checkpoints(&self) -> &[CheckpointGradients<T>] {
        &self.checkpoints
    }

    pub fn train_count(&self) -> usize {
        self.train_count
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn has_target(&self, name: &str) -> bool {
        self.target_names.iter().any(|n| n == name)
    }

    /// Row count of a target set.
    pub fn target_count(&self, name: &str) -> Option<usize> {
        self.checkpoints[0].target(name).map(|m| m.rows())
    }
}

/// JSON manifest describing a bundle on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub checkpoints: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub step_id: i64,
    pub learning_rate: f64,
    pub train: String,
    pub targets: BTreeMap<String, String>,
}

/// Parse a manifest and load every matrix it lists.
///
/// Relative paths resolve against `base_dir`. Files are parsed in parallel.
pub fn read_bundle<T: Scalar, R: Read>(manifest: R, base_dir: &Path) -> Result<CheckpointBundle<T>> {
    let manifest: Manifest = serde_json::from_reader(manifest)
        .map_err(|e| SeedError::Format(format!("manifest: {e}")))?;
    if manifest.checkpoints.is_empty() {
        return Err(SeedError::validation("manifest lists no checkpoints"));
    }
    for (idx, entry) in manifest.checkpoints.iter().enumerate() {
        if !(entry.learning_rate > 0.0 && entry.learning_rate.is_finite()) {
            return Err(SeedError::validation(format!(
                "checkpoint {idx} (step {}): learning_rate must be positive, got {}",
                entry.step_id, entry.learning_rate
            )));
        }
    }

    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let mut jobs: Vec<PathBuf> = Vec::new();
    for entry in &manifest.checkpoints {
        jobs.push(resolve(&entry.train));
        jobs.extend(entry.targets.values().map(|p| resolve(p)));
    }
    let loaded: Vec<Result<DenseMatrix<T>>> = jobs.par_iter().map(|p| load_matrix(p)).collect();
    let mut loaded = loaded.into_iter();

    let mut checkpoints = Vec::with_capacity(manifest.checkpoints.len());
    for entry in manifest.checkpoints {
        let train = loaded.next().unwrap()?;
        let mut targets = Vec::with_capacity(entry.targets.len());
        for name in entry.targets.into_keys() {
            targets.push((name, loaded.next().unwrap()?));
        }
        checkpoints.push(CheckpointGradients {
            step_id: entry.step_id,
            learning_rate: entry.learning_rate,
            train,
            targets,
        });
    }
    CheckpointBundle::new(checkpoints)
}

/// Open a manifest file and load its bundle.
pub fn load_bundle<T: Scalar>(manifest_path: &Path) -> Result<CheckpointBundle<T>> {
    let f = File::open(manifest_path)
        .map_err(|e| SeedError::io(format!("open {}", manifest_path.display()), e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    read_bundle(BufReader::new(f), base)
}

/// Write every matrix of `bundle` into `dir` plus a `manifest.json` that
/// refers to them by relative path. Returns the manifest path.
pub fn write_bundle<T: Scalar>(bundle: &CheckpointBundle<T>, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| SeedError::io(format!("create {}", dir.display()), e))?;
    let mut entries = Vec::new();
    for (t, ck) in bundle.checkpoints().iter().enumerate() {
        let train_name = format!("train_{t}.bin");
        save_matrix(&dir.join(&train_name), &ck.train)?;
        let mut targets = BTreeMap::new();
        for (name, m) in &ck.targets {
            let file = format!("target_{name}_{t}.bin");
            save_matrix(&dir.join(&file), m)?;
            targets.insert(name.clone(), file);
        }
        entries.push(ManifestEntry {
            step_id: ck.step_id,
            learning_rate: ck.learning_rate,
            train: train_name,
            targets,
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&Manifest { checkpoints: entries })
        .map_err(|e| SeedError::Invariant(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;
    Ok(path)
}
