//! Prototype sets: per-class representative vectors with their privacy
//! ledger and mechanism audit trail, plus on-disk persistence.
//!
//! A prototype file is an embedding matrix in the binary format (C*K rows,
//! class-major) together with a JSON sidecar at `<path>.json` carrying the
//! metadata. The sidecar holds no filesystem paths, so files written from
//! different directories are byte-for-byte comparable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_embeddings, write_embeddings, EmbeddingFormat, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::mechanisms::MechanismReport;
use crate::privacy::AccountingLedger;

pub const SIDECAR_VERSION: &str = "dppl-protos/1";

/// How a prototype set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    DpMean,
    DpPublic,
    #[serde(rename = "coinpress")]
    CoinPress,
    NonPrivate,
}

/// C classes, K prototypes each, dimension d. Vectors are stored flat in
/// class-major order: prototype (c, k) occupies the slice starting at
/// (c*K + k)*d.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    num_classes: u32,
    k: usize,
    d: usize,
    vectors: Vec<f64>,
    pub provenance: Provenance,
    pub ledger: AccountingLedger,
    /// For public selection: per class, the chosen public candidate row ids.
    pub candidate_ids: Option<Vec<Vec<usize>>>,
    pub reports: Vec<MechanismReport>,
    /// Pooling kernel the prototypes were built under; queries must be
    /// pooled with the same kernel before prediction. 1 means no pooling.
    pub pool: usize,
}

impl PrototypeSet {
    pub fn new(
        num_classes: u32,
        k: usize,
        d: usize,
        vectors: Vec<f64>,
        provenance: Provenance,
        ledger: AccountingLedger,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes", "must be at least 1"));
        }
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        let expected = num_classes as usize * k * d;
        if vectors.len() != expected {
            return Err(Error::invalid(
                "vectors",
                format!("expected {expected} values, got {}", vectors.len()),
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vectors", "all entries must be finite"));
        }
        Ok(Self {
            num_classes,
            k,
            d,
            vectors,
            provenance,
            ledger,
            candidate_ids: None,
            reports: Vec::new(),
            pool: 1,
        })
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Prototype k of class c.
    pub fn prototype(&self, class: u32, k: usize) -> &[f64] {
        assert!(class < self.num_classes, "class {class} out of range");
        assert!(k < self.k, "prototype index {k} out of range");
        let start = (class as usize * self.k + k) * self.d;
        &self.vectors[start..start + self.d]
    }

    /// All K prototypes of class c as one contiguous slice.
    pub fn class_block(&self, class: u32) -> &[f64] {
        assert!(class < self.num_classes, "class {class} out of range");
        let start = class as usize * self.k * self.d;
        &self.vectors[start..start + self.k * self.d]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f32>> = (0..self.num_classes as usize * self.k)
            .map(|r| {
                self.vectors[r * self.d..(r + 1) * self.d]
                    .iter()
                    .map(|&v| v as f32)
                    .collect()
            })
            .collect();
        let matrix = EmbeddingMatrix::from_rows(&rows, self.d)?;
        write_embeddings(path, &matrix, EmbeddingFormat::Binary)?;

        let sidecar = Sidecar {
            format: SIDECAR_VERSION.to_string(),
            classes: self.num_classes,
            k: self.k,
            dim: self.d,
            pool: self.pool,
            provenance: self.provenance,
            ledger: self.ledger.clone(),
            candidate_ids: self.candidate_ids.clone(),
            reports: self.reports.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Ledger(format!("sidecar serialization failed: {e}")))?;
        let sidecar_path = sidecar_path(path);
        std::fs::write(&sidecar_path, json + "\n").map_err(|e| Error::Io {
            path: sidecar_path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let matrix = load_embeddings(path, EmbeddingFormat::Binary)?;
        let sidecar_path = sidecar_path(path);
        let raw = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::Io {
            path: sidecar_path.display().to_string(),
            source: e,
        })?;
        let sidecar: Sidecar = serde_json::from_str(&raw).map_err(|e| Error::FileFormat {
            path: sidecar_path.display().to_string(),
            detail: format!("invalid sidecar JSON: {e}"),
        })?;
        if sidecar.format != SIDECAR_VERSION {
            return Err(Error::FileFormat {
                path: sidecar_path.display().to_string(),
                detail: format!(
                    "unsupported sidecar version {:?}, expected {SIDECAR_VERSION:?}",
                    sidecar.format
                ),
            });
        }
        let expected_rows = sidecar.classes as usize * sidecar.k;
        if matrix.n() != expected_rows || matrix.d() != sidecar.dim {
            return Err(Error::FileFormat {
                path: path.display().to_string(),
                detail: format!(
                    "matrix is {}x{} but sidecar declares {}x{} prototypes of dim {}",
                    matrix.n(),
                    matrix.d(),
                    sidecar.classes,
                    sidecar.k,
                    sidecar.dim
                ),
            });
        }
        let vectors: Vec<f64> = matrix.values().iter().map(|&v| v as f64).collect();
        let mut set = Self::new(
            sidecar.classes,
            sidecar.k,
            sidecar.dim,
            vectors,
            sidecar.provenance,
            sidecar.ledger,
        )?;
        set.candidate_ids = sidecar.candidate_ids;
        set.reports = sidecar.reports;
        set.pool = sidecar.pool;
        Ok(set)
    }
}

/// Sidecar file for prototype path `p` is `p` with ".json" appended.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

fn default_pool() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    classes: u32,
    k: usize,
    dim: usize,
    #[serde(default = "default_pool")]
    pool: usize,
    provenance: Provenance,
    ledger: AccountingLedger,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidate_ids: Option<Vec<Vec<usize>>>,
    reports: Vec<MechanismReport>,
}
