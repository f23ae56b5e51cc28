//! Python bindings for the prototype-learning core: datasets, private
//! prototype construction, selection, classification, and budget
//! conversions. Rows cross the boundary as plain lists of floats.

use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dppl_core::data::{
    load_dataset, write_embeddings, write_labels, EmbeddingFormat, EmbeddingMatrix,
    ImbalanceSpec, LabeledDataset,
};
use dppl_core::eval::SyntheticMixtureSpec;
use dppl_core::mean::{CoinPressConfig, MeanConfig, MeanDiagnostics};
use dppl_core::mechanisms::{exp_mech_sample, UtilityVector};
use dppl_core::prototype::{Provenance, PrototypeSet};
use dppl_core::rng::RngState;
use dppl_core::select::SelectConfig;

pyo3::create_exception!(dppl_py, DpplError, PyException, "Library error.");

fn err(e: dppl_core::Error) -> PyErr {
    DpplError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f32>>) -> PyResult<EmbeddingMatrix> {
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    EmbeddingMatrix::from_rows(&rows, d).map_err(err)
}

/// Binary embedding files start with their magic; anything else is CSV.
fn detect_format(path: &str) -> EmbeddingFormat {
    match std::fs::read(path) {
        Ok(bytes) if bytes.starts_with(b"DPPLEMB1") => EmbeddingFormat::Binary,
        _ => EmbeddingFormat::Csv,
    }
}

/// A labeled embedding dataset held in memory.
#[pyclass]
struct Dataset {
    inner: LabeledDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(rows: Vec<Vec<f32>>, labels: Vec<u32>, num_classes: u32) -> PyResult<Self> {
        let embeddings = matrix_from_rows(rows)?;
        let inner = LabeledDataset::new(embeddings, labels, num_classes).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads embeddings (binary or CSV, detected) plus a binary label file.
    #[staticmethod]
    fn load(embeddings: &str, labels: &str) -> PyResult<Self> {
        let format = detect_format(embeddings);
        let inner =
            load_dataset(embeddings.as_ref(), labels.as_ref(), format).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, embeddings: &str, labels: &str) -> PyResult<()> {
        write_embeddings(
            embeddings.as_ref(),
            &self.inner.embeddings,
            EmbeddingFormat::Binary,
        )
        .map_err(err)?;
        write_labels(labels.as_ref(), &self.inner.labels, self.inner.num_classes).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.embeddings.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.embeddings.d()
    }

    #[getter]
    fn num_classes(&self) -> u32 {
        self.inner.num_classes
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels.clone()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.embeddings.n())
            .map(|i| self.inner.embeddings.row_f64(i))
            .collect()
    }

    fn class_counts(&self) -> Vec<u64> {
        self.inner.class_counts()
    }

    /// Subsamples onto the exponential long-tail profile.
    fn apply_imbalance(&self, ir: f64, n_max: u64, seed: u64) -> PyResult<Dataset> {
        let spec = ImbalanceSpec {
            ir,
            classes: self.inner.num_classes,
            n_max,
            seed,
        };
        let inner = dppl_core::data::apply_imbalance(&self.inner, &spec).map_err(err)?;
        Ok(Dataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.embeddings.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, d={}, num_classes={})",
            self.inner.embeddings.n(),
            self.inner.embeddings.d(),
            self.inner.num_classes
        )
    }
}

/// A per-class prototype set with its privacy ledger.
#[pyclass]
struct Prototypes {
    inner: PrototypeSet,
}

#[pymethods]
impl Prototypes {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PrototypeSet::load(path.as_ref()).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write(path.as_ref()).map_err(err)
    }

    #[getter]
    fn num_classes(&self) -> u32 {
        self.inner.num_classes()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn pool(&self) -> usize {
        self.inner.pool
    }

    /// How the prototypes were built: dp-mean, dp-public, coinpress, or
    /// non-private.
    #[getter]
    fn method(&self) -> &'static str {
        match self.inner.provenance {
            Provenance::DpMean => "dp-mean",
            Provenance::DpPublic => "dp-public",
            Provenance::CoinPress => "coinpress",
            Provenance::NonPrivate => "non-private",
        }
    }

    /// Composed privacy budget as (kind, value), or None for non-private
    /// prototypes.
    #[getter]
    fn budget(&self) -> PyResult<Option<(&'static str, f64)>> {
        if self.inner.ledger.entries.is_empty() {
            return Ok(None);
        }
        let total = self.inner.ledger.compose_parallel().map_err(err)?.total;
        Ok(Some((total.kind(), total.value())))
    }

    /// Selected public candidate ids per class, for selection prototypes.
    #[getter]
    fn candidate_ids(&self) -> Option<Vec<Vec<usize>>> {
        self.inner.candidate_ids.clone()
    }

    fn prototype(&self, class: u32, k: usize) -> PyResult<Vec<f64>> {
        if class >= self.inner.num_classes() || k >= self.inner.k() {
            return Err(DpplError::new_err(format!(
                "prototype ({class}, {k}) out of range for {} classes, k {}",
                self.inner.num_classes(),
                self.inner.k()
            )));
        }
        Ok(self.inner.prototype(class, k).to_vec())
    }

    /// Nearest-prototype labels for query rows; rows are pooled to the
    /// prototype space first.
    fn predict(&self, rows: Vec<Vec<f32>>) -> PyResult<Vec<u32>> {
        let matrix = matrix_from_rows(rows)?;
        let queries =
            dppl_core::mean::pool_matrix(&matrix, self.inner.pool).map_err(err)?;
        dppl_core::classify::predict_batch(&queries, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Prototypes(method={:?}, num_classes={}, k={}, d={})",
            self.method(),
            self.inner.num_classes(),
            self.inner.k(),
            self.inner.d()
        )
    }
}

#[pyfunction]
fn pure_dp_to_zcdp(epsilon: f64) -> PyResult<f64> {
    dppl_core::privacy::pure_dp_to_zcdp(epsilon).map_err(err)
}

#[pyfunction]
fn zcdp_to_pure_dp(rho: f64) -> PyResult<f64> {
    dppl_core::privacy::zcdp_to_pure_dp_equivalent(rho).map_err(err)
}

#[pyfunction]
fn exp_mech_zcdp(epsilon: f64) -> PyResult<f64> {
    dppl_core::privacy::exp_mech_zcdp(epsilon).map_err(err)
}

/// Per-class sizes of the exponential long-tail profile.
#[pyfunction]
fn imbalance_class_sizes(ir: f64, classes: u32, n_max: u64) -> PyResult<Vec<u64>> {
    let spec = ImbalanceSpec {
        ir,
        classes,
        n_max,
        seed: 0,
    };
    dppl_core::data::imbalance_class_sizes(&spec).map_err(err)
}

/// Deterministic Gaussian-mixture train and test splits.
#[pyfunction]
fn make_mixture(
    classes: u32,
    dim: usize,
    center_norm: f64,
    sigma: f64,
    per_class: usize,
    seed: u64,
) -> PyResult<(Dataset, Dataset)> {
    let spec = SyntheticMixtureSpec {
        classes,
        dim,
        center_norm,
        sigma,
        per_class,
        seed,
    };
    let (train, test) = dppl_core::eval::make_mixture_split(&spec).map_err(err)?;
    Ok((Dataset { inner: train }, Dataset { inner: test }))
}

/// Noisy clipped-mean prototypes at rho zCDP per class.
#[pyfunction]
#[pyo3(signature = (dataset, rho, clip, seed, pool = 1))]
fn mean_prototypes(
    dataset: &Dataset,
    rho: f64,
    clip: f64,
    seed: u64,
    pool: usize,
) -> PyResult<Prototypes> {
    let cfg = MeanConfig {
        rho,
        clip_radius: clip,
        k_pool: pool,
    };
    let inner = dppl_core::mean::dppl_mean_all(&dataset.inner, &cfg, seed).map_err(err)?;
    Ok(Prototypes { inner })
}

fn diagnostics_dict<'py>(
    py: Python<'py>,
    class: u32,
    diag: &MeanDiagnostics,
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("class", class)?;
    dict.set_item("radii", diag.radii.clone())?;
    dict.set_item("clipped_fractions", diag.clipped_fractions.clone())?;
    dict.set_item("diverged", diag.diverged)?;
    Ok(dict)
}

/// Iterative private mean prototypes; returns (prototypes, diagnostics),
/// where diagnostics is one dict per class with the radius sequence and
/// divergence flag.
#[pyfunction]
#[pyo3(signature = (dataset, rho, seed, steps = 10, r0 = None))]
fn coinpress_prototypes<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    rho: f64,
    seed: u64,
    steps: usize,
    r0: Option<f64>,
) -> PyResult<(Prototypes, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = CoinPressConfig::new(rho);
    cfg.steps = steps;
    cfg.r0 = r0;
    let (inner, diags) = dppl_core::mean::coinpress_all(&dataset.inner, &cfg, seed).map_err(err)?;
    let dicts = diags
        .iter()
        .enumerate()
        .map(|(c, d)| diagnostics_dict(py, c as u32, d))
        .collect::<PyResult<Vec<_>>>()?;
    Ok((Prototypes { inner }, dicts))
}

/// Selects public candidates as prototypes at epsilon pure DP per class.
#[pyfunction]
#[pyo3(signature = (dataset, public_rows, epsilon, seed, d_min = 0.0, d_max = 2.0, k = 1))]
fn select_public(
    dataset: &Dataset,
    public_rows: Vec<Vec<f32>>,
    epsilon: f64,
    seed: u64,
    d_min: f64,
    d_max: f64,
    k: usize,
) -> PyResult<Prototypes> {
    let public = matrix_from_rows(public_rows)?;
    let cfg = SelectConfig {
        epsilon,
        d_min,
        d_max,
        k,
    };
    let inner =
        dppl_core::select::select_all_classes(&dataset.inner, &public, &cfg, seed).map_err(err)?;
    Ok(Prototypes { inner })
}

/// Plain per-class means, no privacy.
#[pyfunction]
#[pyo3(signature = (dataset, pool = 1))]
fn non_private_prototypes(dataset: &Dataset, pool: usize) -> PyResult<Prototypes> {
    let inner = dppl_core::mean::non_private_prototypes(&dataset.inner, pool).map_err(err)?;
    Ok(Prototypes { inner })
}

/// Mean of per-class accuracies over classes present in the test set.
#[pyfunction]
fn balanced_accuracy(pred: Vec<u32>, truth: Vec<u32>, num_classes: u32) -> PyResult<f64> {
    dppl_core::eval::balanced_accuracy(&pred, &truth, num_classes).map_err(err)
}

/// Balanced accuracy over the smallest quarter of training classes.
#[pyfunction]
fn minority_accuracy(pred: Vec<u32>, truth: Vec<u32>, train_sizes: Vec<u64>) -> PyResult<f64> {
    dppl_core::eval::minority_accuracy(&pred, &truth, &train_sizes).map_err(err)
}

/// One exponential-mechanism draw over a utility vector.
#[pyfunction]
#[pyo3(signature = (utilities, epsilon, delta_u, seed, monotonic = true, stream = 0))]
fn exp_mech_draw(
    utilities: Vec<f64>,
    epsilon: f64,
    delta_u: f64,
    seed: u64,
    monotonic: bool,
    stream: u64,
) -> PyResult<usize> {
    let u = UtilityVector::new(
        utilities,
        dppl_core::privacy::Sensitivity::range(delta_u),
        monotonic,
    )
    .map_err(err)?;
    exp_mech_sample(&u, epsilon, RngState::new(seed, stream)).map_err(err)
}

#[pymodule]
fn dppl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DpplError", m.py().get_type::<DpplError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Prototypes>()?;
    m.add_function(wrap_pyfunction!(pure_dp_to_zcdp, m)?)?;
    m.add_function(wrap_pyfunction!(zcdp_to_pure_dp, m)?)?;
    m.add_function(wrap_pyfunction!(exp_mech_zcdp, m)?)?;
    m.add_function(wrap_pyfunction!(imbalance_class_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(make_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(mean_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(coinpress_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(select_public, m)?)?;
    m.add_function(wrap_pyfunction!(non_private_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(minority_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(exp_mech_draw, m)?)?;
    Ok(())
}
