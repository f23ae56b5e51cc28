//! Metrics, synthetic data, and the experiment harness: balanced and
//! minority-class accuracy, Gaussian-mixture generation for desk-scale
//! runs, single-experiment reports, and seeded budget sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::predict_batch;
use crate::data::{
    apply_imbalance, load_dataset, load_embeddings, EmbeddingFormat, EmbeddingMatrix,
    ImbalanceSpec, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::mean::{
    coinpress_all, dppl_mean_all, non_private_prototypes, pool_matrix, CoinPressConfig,
    MeanConfig,
};
use crate::privacy::PrivacyBudget;
use crate::prototype::PrototypeSet;
use crate::rng::{
    DeterministicRng, RngState, STREAM_DISTRACTORS, STREAM_CENTERS, STREAM_TEST_BASE,
    STREAM_TRAIN_BASE,
};
use crate::select::{select_all_classes, SelectConfig};

pub const REPORT_VERSION: &str = "dppl-report/1";

/// Per-class view of a prediction run. `per_class` holds one accuracy per
/// class id, None for classes with no test samples; those ids are repeated
/// in `absent_classes` for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBreakdown {
    pub balanced: f64,
    pub per_class: Vec<Option<f64>>,
    pub absent_classes: Vec<u32>,
}

pub fn accuracy_breakdown(
    pred: &[u32],
    truth: &[u32],
    num_classes: u32,
) -> Result<AccuracyBreakdown> {
    if pred.len() != truth.len() {
        return Err(Error::LabelMismatch {
            labels: pred.len(),
            rows: truth.len(),
        });
    }
    for &l in pred.iter().chain(truth) {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
    }
    let mut total = vec![0u64; num_classes as usize];
    let mut correct = vec![0u64; num_classes as usize];
    for (&p, &t) in pred.iter().zip(truth) {
        total[t as usize] += 1;
        if p == t {
            correct[t as usize] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(num_classes as usize);
    let mut absent = Vec::new();
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..num_classes as usize {
        if total[c] == 0 {
            per_class.push(None);
            absent.push(c as u32);
        } else {
            let acc = correct[c] as f64 / total[c] as f64;
            per_class.push(Some(acc));
            sum += acc;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::invalid("truth", "no test samples in any class"));
    }
    Ok(AccuracyBreakdown {
        balanced: sum / present as f64,
        per_class,
        absent_classes: absent,
    })
}

/// Mean of per-class accuracies; classes absent from the test set are
/// excluded from the mean.
pub fn balanced_accuracy(pred: &[u32], truth: &[u32], num_classes: u32) -> Result<f64> {
    Ok(accuracy_breakdown(pred, truth, num_classes)?.balanced)
}

/// The floor(C/4) classes with the smallest training sizes, ties broken by
/// class id. Errors when the quartile would be empty (fewer than 4 classes).
pub fn minority_classes(train_sizes: &[u64]) -> Result<Vec<u32>> {
    let num_classes = train_sizes.len() as u32;
    let quartile = train_sizes.len() / 4;
    if quartile == 0 {
        return Err(Error::MinorityQuartileEmpty {
            classes: num_classes,
        });
    }
    let mut order: Vec<u32> = (0..num_classes).collect();
    order.sort_by_key(|&c| (train_sizes[c as usize], c));
    order.truncate(quartile);
    order.sort_unstable();
    Ok(order)
}

/// Balanced accuracy restricted to the minority classes, the smallest
/// quarter of TRAINING class sizes. Test samples of other classes are
/// ignored; predictions landing outside the minority set still count as
/// errors.
pub fn minority_accuracy(pred: &[u32], truth: &[u32], train_sizes: &[u64]) -> Result<f64> {
    let minority = minority_classes(train_sizes)?;
    let breakdown = accuracy_breakdown(pred, truth, train_sizes.len() as u32)?;
    let mut sum = 0.0;
    let mut present = 0usize;
    for &c in &minority {
        if let Some(acc) = breakdown.per_class[c as usize] {
            sum += acc;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::invalid(
            "truth",
            "no test samples in any minority class",
        ));
    }
    Ok(sum / present as f64)
}

/// A Gaussian mixture in embedding space: C centers of a common norm with
/// isotropic within-class noise. The desk-scale stand-in for encoder
/// embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMixtureSpec {
    pub classes: u32,
    pub dim: usize,
    pub center_norm: f64,
    pub sigma: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl SyntheticMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::invalid("classes", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if !self.center_norm.is_finite() || self.center_norm <= 0.0 {
            return Err(Error::invalid("center_norm", "must be positive and finite"));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::invalid("sigma", "must be non-negative and finite"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per_class", "must be at least 1"));
        }
        Ok(())
    }
}

/// Deterministic class centers: seeded Gaussian directions, orthogonalized
/// against each other while the dimension allows, scaled to the configured
/// norm. With C <= d the centers are exactly pairwise orthogonal.
pub fn mixture_centers(spec: &SyntheticMixtureSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = DeterministicRng::from_state(RngState::new(spec.seed, STREAM_CENTERS));
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.classes as usize);
    for _ in 0..spec.classes {
        loop {
            let mut v: Vec<f64> = (0..spec.dim).map(|_| rng.standard_normal()).collect();
            for prev in &centers {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                // prev already has norm center_norm.
                let coeff = dot / (spec.center_norm * spec.center_norm);
                if centers.len() < spec.dim {
                    for (x, p) in v.iter_mut().zip(prev) {
                        *x -= coeff * p;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                let scale = spec.center_norm / norm;
                centers.push(v.into_iter().map(|x| x * scale).collect());
                break;
            }
        }
    }
    Ok(centers)
}

fn sample_class(
    center: &[f64],
    sigma: f64,
    count: usize,
    state: RngState,
) -> Vec<Vec<f32>> {
    let mut rng = DeterministicRng::from_state(state);
    (0..count)
        .map(|_| {
            center
                .iter()
                .map(|&mu| (mu + sigma * rng.standard_normal()) as f32)
                .collect()
        })
        .collect()
}

/// Draws the training split of the mixture: `per_class` samples around each
/// center, one RNG stream per class. Deterministic per spec.
pub fn make_mixture(spec: &SyntheticMixtureSpec) -> Result<LabeledDataset> {
    Ok(make_mixture_split(spec)?.0)
}

/// Train and test splits drawn from the same centers on disjoint RNG
/// streams; both have `per_class` samples per class.
pub fn make_mixture_split(spec: &SyntheticMixtureSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let centers = mixture_centers(spec)?;
    let mut train_rows = Vec::with_capacity(spec.classes as usize * spec.per_class);
    let mut test_rows = Vec::with_capacity(spec.classes as usize * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes as usize * spec.per_class);
    for (c, center) in centers.iter().enumerate() {
        let train_state = RngState::new(spec.seed, STREAM_TRAIN_BASE + c as u64);
        let test_state = RngState::new(spec.seed, STREAM_TEST_BASE + c as u64);
        train_rows.extend(sample_class(center, spec.sigma, spec.per_class, train_state));
        test_rows.extend(sample_class(center, spec.sigma, spec.per_class, test_state));
        labels.extend(std::iter::repeat(c as u32).take(spec.per_class));
    }
    let train = LabeledDataset::new(
        EmbeddingMatrix::from_rows(&train_rows, spec.dim)?,
        labels.clone(),
        spec.classes,
    )?;
    let test = LabeledDataset::new(
        EmbeddingMatrix::from_rows(&test_rows, spec.dim)?,
        labels,
        spec.classes,
    )?;
    Ok((train, test))
}

/// A public candidate set for selection experiments: optionally the true
/// mixture centers (candidate ids 0..C-1), followed by `distractors` random
/// directions at the same norm, drawn on a stream disjoint from all data
/// and mechanism streams.
pub fn make_public_set(
    spec: &SyntheticMixtureSpec,
    distractors: usize,
    include_centers: bool,
) -> Result<EmbeddingMatrix> {
    let centers = mixture_centers(spec)?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    if include_centers {
        for center in &centers {
            rows.push(center.iter().map(|&v| v as f32).collect());
        }
    }
    let mut rng = DeterministicRng::from_state(RngState::new(spec.seed, STREAM_DISTRACTORS));
    for _ in 0..distractors {
        let v: Vec<f64> = (0..spec.dim).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        let scale = spec.center_norm / norm;
        rows.push(v.into_iter().map(|x| (x * scale) as f32).collect());
    }
    if rows.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    EmbeddingMatrix::from_rows(&rows, spec.dim)
}

/// Where an experiment's train and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Mixture {
        #[serde(flatten)]
        spec: SyntheticMixtureSpec,
    },
    Files {
        train_embeddings: String,
        train_labels: String,
        test_embeddings: String,
        test_labels: String,
    },
}

/// Public candidates for selection methods: a file of embeddings, or a
/// synthetic set derived from the mixture (centers plus distractors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PublicSource {
    File { path: String },
    Synthetic { distractors: usize, include_centers: bool },
}

/// Which prototype method an experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodSpec {
    Mean {
        #[serde(flatten)]
        cfg: MeanConfig,
    },
    Coinpress {
        #[serde(flatten)]
        cfg: CoinPressConfig,
    },
    Public {
        #[serde(flatten)]
        cfg: SelectConfig,
        public: PublicSource,
    },
    NonPrivate {
        k_pool: usize,
    },
}

impl MethodSpec {
    fn name(&self) -> &'static str {
        match self {
            MethodSpec::Mean { .. } => "dp-mean",
            MethodSpec::Coinpress { .. } => "coinpress",
            MethodSpec::Public { .. } => "dp-public",
            MethodSpec::NonPrivate { .. } => "non-private",
        }
    }
}

/// One full pipeline run: data, optional long-tail construction on the
/// training split, a prototype method, and the mechanism seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<ImbalanceSpec>,
    pub method: MethodSpec,
    pub seed: u64,
}

/// The JSON result of one experiment. Budget fields are echoed from the
/// prototype ledger; None for the non-private baseline. `minority_accuracy`
/// is None when the class count cannot fill a quartile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub method: String,
    pub balanced_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub absent_classes: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minority_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<PrivacyBudget>,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Ledger(format!("report serialization failed: {e}")))
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(raw).map_err(|e| Error::FileFormat {
            path: "<report>".into(),
            detail: format!("invalid report JSON: {e}"),
        })?;
        if report.format != REPORT_VERSION {
            return Err(Error::FileFormat {
                path: "<report>".into(),
                detail: format!(
                    "unsupported report version {:?}, expected {REPORT_VERSION:?}",
                    report.format
                ),
            });
        }
        Ok(report)
    }
}

fn load_data(source: &DataSource) -> Result<(LabeledDataset, LabeledDataset)> {
    match source {
        DataSource::Mixture { spec } => make_mixture_split(spec),
        DataSource::Files {
            train_embeddings,
            train_labels,
            test_embeddings,
            test_labels,
        } => {
            let train = load_dataset(
                Path::new(train_embeddings),
                Path::new(train_labels),
                EmbeddingFormat::Binary,
            )?;
            let test = load_dataset(
                Path::new(test_embeddings),
                Path::new(test_labels),
                EmbeddingFormat::Binary,
            )?;
            if train.num_classes != test.num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "train has {} classes, test has {}",
                    train.num_classes, test.num_classes
                )));
            }
            Ok((train, test))
        }
    }
}

fn load_public(source: &PublicSource, data: &DataSource) -> Result<EmbeddingMatrix> {
    match source {
        PublicSource::File { path } => load_embeddings(Path::new(path), EmbeddingFormat::Binary),
        PublicSource::Synthetic {
            distractors,
            include_centers,
        } => match data {
            DataSource::Mixture { spec } => make_public_set(spec, *distractors, *include_centers),
            DataSource::Files { .. } => Err(Error::invalid(
                "public",
                "synthetic public sets require mixture data",
            )),
        },
    }
}

/// Builds prototypes for the configured method. Returns the set and the
/// composed budget (None for the non-private baseline).
pub fn build_prototypes(
    train: &LabeledDataset,
    method: &MethodSpec,
    data: &DataSource,
    seed: u64,
) -> Result<(PrototypeSet, Option<PrivacyBudget>)> {
    match method {
        MethodSpec::Mean { cfg } => {
            let set = dppl_mean_all(train, cfg, seed)?;
            let budget = set.ledger.compose_parallel()?.total;
            Ok((set, Some(budget)))
        }
        MethodSpec::Coinpress { cfg } => {
            let (set, _) = coinpress_all(train, cfg, seed)?;
            let budget = set.ledger.compose_parallel()?.total;
            Ok((set, Some(budget)))
        }
        MethodSpec::Public { cfg, public } => {
            let candidates = load_public(public, data)?;
            let set = select_all_classes(train, &candidates, cfg, seed)?;
            let budget = set.ledger.compose_parallel()?.total;
            Ok((set, Some(budget)))
        }
        MethodSpec::NonPrivate { k_pool } => {
            Ok((non_private_prototypes(train, *k_pool)?, None))
        }
    }
}

/// Runs one experiment end to end: load data, optionally impose the
/// long-tail profile on the training split, build prototypes, classify the
/// test split, and report metrics. Reproducible from (config, seed); errors
/// carry the failing stage.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    let (train, test) = load_data(&config.data).map_err(|e| e.at_stage("load-data"))?;
    let train = match &config.imbalance {
        Some(spec) => apply_imbalance(&train, spec).map_err(|e| e.at_stage("imbalance"))?,
        None => train,
    };
    let train_sizes = train.class_counts();

    let (protos, budget) = build_prototypes(&train, &config.method, &config.data, config.seed)
        .map_err(|e| e.at_stage("prototype"))?;

    let queries = pool_matrix(&test.embeddings, protos.pool)
        .map_err(|e| e.at_stage("predict"))?;
    let pred = predict_batch(&queries, &protos).map_err(|e| e.at_stage("predict"))?;

    let breakdown = accuracy_breakdown(&pred, &test.labels, train.num_classes)
        .map_err(|e| e.at_stage("metrics"))?;
    let minority = if train_sizes.len() >= 4 {
        Some(
            minority_accuracy(&pred, &test.labels, &train_sizes)
                .map_err(|e| e.at_stage("metrics"))?,
        )
    } else {
        None
    };

    Ok(EvalReport {
        format: REPORT_VERSION.to_string(),
        method: config.method.name().to_string(),
        balanced_accuracy: breakdown.balanced,
        per_class_accuracy: breakdown.per_class,
        absent_classes: breakdown.absent_classes,
        minority_accuracy: minority,
        budget,
        seeds: vec![config.seed],
        config: serde_json::to_value(config)
            .map_err(|e| Error::Ledger(format!("config snapshot failed: {e}")))?,
    })
}

/// A budget grid for one method; each listed budget runs once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum SweepMethod {
    Mean {
        rhos: Vec<f64>,
        clip_radius: f64,
        k_pool: usize,
    },
    Coinpress {
        rhos: Vec<f64>,
        steps: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        r0: Option<f64>,
    },
    Public {
        epsilons: Vec<f64>,
        d_min: f64,
        d_max: f64,
        k: usize,
        public: PublicSource,
    },
    NonPrivate {
        k_pool: usize,
    },
}

/// A full sweep: shared data and optional imbalance, a list of method
/// grids, and the seeds each grid point runs under (0..10 when omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub data: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<ImbalanceSpec>,
    pub methods: Vec<SweepMethod>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: Vec<u64>,
}

fn default_sweep_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// One sweep grid point's summary. `eps_or_rho` is infinite for the
/// non-private baseline; `minority_accuracy` is None below 4 classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub eps_or_rho: f64,
    pub seed: u64,
    pub balanced_acc: f64,
    pub minority_acc: Option<f64>,
}

fn expand_methods(grid: &SweepGrid) -> Vec<(MethodSpec, f64)> {
    let mut out = Vec::new();
    for m in &grid.methods {
        match m {
            SweepMethod::Mean {
                rhos,
                clip_radius,
                k_pool,
            } => {
                for &rho in rhos {
                    out.push((
                        MethodSpec::Mean {
                            cfg: MeanConfig {
                                rho,
                                clip_radius: *clip_radius,
                                k_pool: *k_pool,
                            },
                        },
                        rho,
                    ));
                }
            }
            SweepMethod::Coinpress { rhos, steps, r0 } => {
                for &rho in rhos {
                    let mut cfg = CoinPressConfig::new(rho);
                    cfg.steps = *steps;
                    cfg.r0 = *r0;
                    out.push((MethodSpec::Coinpress { cfg }, rho));
                }
            }
            SweepMethod::Public {
                epsilons,
                d_min,
                d_max,
                k,
                public,
            } => {
                for &epsilon in epsilons {
                    out.push((
                        MethodSpec::Public {
                            cfg: SelectConfig {
                                epsilon,
                                d_min: *d_min,
                                d_max: *d_max,
                                k: *k,
                            },
                            public: public.clone(),
                        },
                        epsilon,
                    ));
                }
            }
            SweepMethod::NonPrivate { k_pool } => {
                out.push((MethodSpec::NonPrivate { k_pool: *k_pool }, f64::INFINITY));
            }
        }
    }
    out
}

/// Runs every (method, budget, seed) grid point in a fixed order. Each
/// point is an independent `run_experiment`.
pub fn run_sweep(grid: &SweepGrid) -> Result<Vec<(SweepRow, EvalReport)>> {
    if grid.seeds.is_empty() {
        return Err(Error::invalid("seeds", "sweep needs at least one seed"));
    }
    let points = expand_methods(grid);
    if points.is_empty() {
        return Err(Error::invalid("methods", "sweep needs at least one method"));
    }
    let mut out = Vec::with_capacity(points.len() * grid.seeds.len());
    for (method, budget_value) in &points {
        for &seed in &grid.seeds {
            let config = ExperimentConfig {
                data: grid.data.clone(),
                imbalance: grid.imbalance,
                method: method.clone(),
                seed,
            };
            let report = run_experiment(&config)?;
            out.push((
                SweepRow {
                    method: method.name().to_string(),
                    eps_or_rho: *budget_value,
                    seed,
                    balanced_acc: report.balanced_accuracy,
                    minority_acc: report.minority_accuracy,
                },
                report,
            ));
        }
    }
    Ok(out)
}

/// CSV summary of sweep rows, one line per grid point.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("method,eps_or_rho,seed,balanced_acc,minority_acc\n");
    for row in rows {
        let minority = row
            .minority_acc
            .map(|m| m.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.method, row.eps_or_rho, row.seed, row.balanced_acc, minority
        ));
    }
    out
}
