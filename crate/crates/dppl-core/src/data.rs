//! Embedding and label I/O, per-class partitioning, and exponential
//! long-tail imbalance construction.
//!
//! On-disk formats:
//! * Embeddings, binary: magic `DPPLEMB1`, little-endian u32 `n`, u32 `d`,
//!   then `n * d` little-endian 32-bit IEEE-754 floats, row-major.
//! * Embeddings, CSV: no header, one row per sample, decimal floats.
//! * Labels, binary: magic `DPPLLBL1`, u32 `n`, u32 `C`, then `n`
//!   little-endian u32 labels.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{DeterministicRng, RngState, STREAM_IMBALANCE_BASE};

const EMB_MAGIC: &[u8; 8] = b"DPPLEMB1";
const LBL_MAGIC: &[u8; 8] = b"DPPLLBL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

/// n x d matrix of finite feature values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "dimensionality must be at least 1"));
        }
        if values.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} x {d} = {} values, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / d });
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f32>], d: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d)
    }
}

/// Embeddings plus a class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<u32>,
    pub num_classes: u32,
}

impl LabeledDataset {
    pub fn new(embeddings: EmbeddingMatrix, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes", "must be at least 1"));
        }
        if labels.len() != embeddings.n() {
            return Err(Error::LabelMismatch {
                labels: labels.len(),
                rows: embeddings.n(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Self {
            embeddings,
            labels,
            num_classes,
        })
    }

    /// Rows per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Partitions a dataset into per-class matrices, one entry per class id;
/// row order within a class preserves input order. Empty classes yield
/// 0-row matrices.
pub fn split_by_class(ds: &LabeledDataset) -> Vec<(u32, EmbeddingMatrix)> {
    let d = ds.embeddings.d();
    let mut buckets: Vec<Vec<f32>> = vec![Vec::new(); ds.num_classes as usize];
    for (i, &label) in ds.labels.iter().enumerate() {
        buckets[label as usize].extend_from_slice(ds.embeddings.row(i));
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(c, values)| {
            let n = values.len() / d;
            (
                c as u32,
                EmbeddingMatrix {
                    n,
                    d,
                    values,
                },
            )
        })
        .collect()
}

/// Parameters of the exponential long-tail construction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImbalanceSpec {
    /// Largest-class size divided by smallest-class size, at least 1.
    pub ir: f64,
    pub classes: u32,
    /// Samples in the largest class (class 0).
    pub n_max: u64,
    /// Seed for within-class subsampling.
    pub seed: u64,
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.ir.is_finite() || self.ir < 1.0 {
            return Err(Error::invalid(
                "ir",
                format!("imbalance ratio must be at least 1, got {}", self.ir),
            ));
        }
        if self.classes == 0 {
            return Err(Error::invalid("classes", "class count must be at least 1"));
        }
        if self.n_max == 0 {
            return Err(Error::invalid("n_max", "largest class must be nonempty"));
        }
        Ok(())
    }
}

/// Per-class target counts count(c) = round(N_max * exp(-lambda c)) with
/// lambda = ln(IR) / (C - 1) for C > 1 and lambda = 0 for C = 1. Rounding is
/// half-away-from-zero. Class 0 is the largest.
pub fn imbalance_class_sizes(spec: &ImbalanceSpec) -> Result<Vec<u64>> {
    spec.validate()?;
    let lambda = if spec.classes == 1 {
        0.0
    } else {
        spec.ir.ln() / (spec.classes - 1) as f64
    };
    Ok((0..spec.classes)
        .map(|c| {
            let target = spec.n_max as f64 * (-lambda * c as f64).exp();
            target.round() as u64
        })
        .collect())
}

/// Median of a count list: the middle value, or the arithmetic mean of the
/// two middle values for even lengths.
pub fn median_of_counts(counts: &[u64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::invalid("counts", "median of an empty list"));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] as f64 + sorted[mid] as f64) / 2.0
    })
}

/// Subsamples each class down to its target count, uniformly without
/// replacement, deterministically in `spec.seed`. Class ids map to target
/// positions identically (class c receives the c-th count); surviving rows
/// keep their input order.
pub fn apply_imbalance(ds: &LabeledDataset, spec: &ImbalanceSpec) -> Result<LabeledDataset> {
    if spec.classes != ds.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "imbalance spec has {} classes, dataset has {}",
            spec.classes, ds.num_classes
        )));
    }
    let targets = imbalance_class_sizes(spec)?;
    let mut per_class_rows: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes as usize];
    for (i, &label) in ds.labels.iter().enumerate() {
        per_class_rows[label as usize].push(i);
    }

    let mut keep = vec![false; ds.embeddings.n()];
    for (c, rows) in per_class_rows.iter().enumerate() {
        let target = targets[c] as usize;
        if rows.len() < target {
            return Err(Error::ClassTooSmall {
                class: c as u32,
                available: rows.len(),
                required: target,
            });
        }
        let mut pool = rows.clone();
        let mut rng = DeterministicRng::from_state(RngState::new(
            spec.seed,
            STREAM_IMBALANCE_BASE + c as u64,
        ));
        // Partial Fisher-Yates: the first `target` slots end up a uniform
        // draw without replacement.
        for i in 0..target {
            let j = i + rng.uniform_index(pool.len() - i);
            pool.swap(i, j);
        }
        for &row in &pool[..target] {
            keep[row] = true;
        }
    }

    let d = ds.embeddings.d();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..ds.embeddings.n() {
        if keep[i] {
            values.extend_from_slice(ds.embeddings.row(i));
            labels.push(ds.labels[i]);
        }
    }
    let n = labels.len();
    LabeledDataset::new(EmbeddingMatrix { n, d, values }, labels, ds.num_classes)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::FileFormat {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingMatrix> {
    match format {
        EmbeddingFormat::Binary => load_embeddings_binary(path),
        EmbeddingFormat::Csv => load_embeddings_csv(path),
    }
}

fn load_embeddings_binary(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 {
        return Err(format_err(path, "file too short for header"));
    }
    if &bytes[0..8] != EMB_MAGIC {
        return Err(format_err(path, "bad magic, expected DPPLEMB1"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if d == 0 {
        return Err(format_err(path, "header declares d = 0"));
    }
    let payload = &bytes[16..];
    if payload.len() != n * d * 4 {
        return Err(format_err(
            path,
            format!(
                "payload size mismatch: header declares {n} x {d} rows ({} bytes), found {}",
                n * d * 4,
                payload.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(n * d);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(
                path,
                format!("non-finite value at row {}", i / d),
            ));
        }
        values.push(v);
    }
    Ok(EmbeddingMatrix { n, d, values })
}

fn load_embeddings_csv(path: &Path) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut values = Vec::new();
    let mut d = None;
    let mut n = 0usize;
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match d {
            None => d = Some(fields.len()),
            Some(expect) if fields.len() != expect => {
                return Err(format_err(
                    path,
                    format!("row {row} has {} fields, expected {expect}", fields.len()),
                ));
            }
            _ => {}
        }
        for field in fields {
            let v: f32 = field
                .parse()
                .map_err(|_| format_err(path, format!("row {row}: unparseable value {field:?}")))?;
            if !v.is_finite() {
                return Err(format_err(
                    path,
                    format!("non-finite value at row {row}"),
                ));
            }
            values.push(v);
        }
        n += 1;
    }
    let d = d.ok_or_else(|| format_err(path, "empty file, cannot infer dimensionality"))?;
    Ok(EmbeddingMatrix { n, d, values })
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix, format: EmbeddingFormat) -> Result<()> {
    match format {
        EmbeddingFormat::Binary => {
            let mut bytes = Vec::with_capacity(16 + m.values.len() * 4);
            bytes.extend_from_slice(EMB_MAGIC);
            bytes.extend_from_slice(&(m.n as u32).to_le_bytes());
            bytes.extend_from_slice(&(m.d as u32).to_le_bytes());
            for v in &m.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(path, bytes).map_err(|e| io_err(path, e))
        }
        EmbeddingFormat::Csv => {
            let mut text = String::new();
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                text.push_str(&line.join(","));
                text.push('\n');
            }
            fs::write(path, text).map_err(|e| io_err(path, e))
        }
    }
}

pub fn load_labels(path: &Path) -> Result<(Vec<u32>, u32)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 {
        return Err(format_err(path, "file too short for header"));
    }
    if &bytes[0..8] != LBL_MAGIC {
        return Err(format_err(path, "bad magic, expected DPPLLBL1"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let classes = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let payload = &bytes[16..];
    if payload.len() != n * 4 {
        return Err(format_err(
            path,
            format!(
                "payload size mismatch: header declares {n} labels ({} bytes), found {}",
                n * 4,
                payload.len()
            ),
        ));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let label = u32::from_le_bytes(chunk.try_into().unwrap());
        if label >= classes {
            return Err(format_err(
                path,
                format!("row {i}: label {label} out of range for {classes} classes"),
            ));
        }
        labels.push(label);
    }
    Ok((labels, classes))
}

pub fn write_labels(path: &Path, labels: &[u32], classes: u32) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + labels.len() * 4);
    bytes.extend_from_slice(LBL_MAGIC);
    bytes.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&classes.to_le_bytes());
    for label in labels {
        bytes.extend_from_slice(&label.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Loads a labeled dataset from an embedding file and a label file.
pub fn load_dataset(
    emb_path: &Path,
    label_path: &Path,
    format: EmbeddingFormat,
) -> Result<LabeledDataset> {
    let embeddings = load_embeddings(emb_path, format)?;
    let (labels, classes) = load_labels(label_path)?;
    LabeledDataset::new(embeddings, labels, classes)
}

#[allow(dead_code)]
fn assert_no_duplicates(rows: &[usize]) -> bool {
    let mut seen = HashSet::new();
    rows.iter().all(|r| seen.insert(*r))
}
