//! Public-prototype selection: per-class utilities over a public candidate
//! set from clipped shifted-cosine similarity, sampled privately with the
//! exponential mechanism (single winner or a joint top-K set).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_by_class, EmbeddingMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::mechanisms::{
    exp_mech_sample, topk_joint_sample, MechanismReport, TopKUtility, UtilityVector,
};
use crate::privacy::{AccountingLedger, PrivacyBudget, Scope, Sensitivity};
use crate::prototype::{PrototypeSet, Provenance};
use crate::rng::RngState;

/// Candidates are scored in blocks of this many rows; the block size has no
/// effect on results, only on peak memory per worker.
const DEFAULT_BLOCK: usize = 256;

/// Settings for public-prototype selection. `epsilon` is the pure-DP budget
/// per class. `d_min`/`d_max` clip each private row's shifted-cosine
/// contribution, so the per-row sensitivity is `d_max - d_min`; the defaults
/// (0, 2) leave the metric unclipped. `k` is the number of prototypes
/// selected per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub epsilon: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub k: usize,
}

impl SelectConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            d_min: 0.0,
            d_max: 2.0,
            k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", "must be positive and finite"));
        }
        if !self.d_min.is_finite() || !self.d_max.is_finite() {
            return Err(Error::invalid("d_min/d_max", "must be finite"));
        }
        if !(0.0 <= self.d_min && self.d_min < self.d_max && self.d_max <= 2.0) {
            return Err(Error::invalid(
                "d_min/d_max",
                format!(
                    "need 0 <= d_min < d_max <= 2, got d_min={}, d_max={}",
                    self.d_min, self.d_max
                ),
            ));
        }
        if self.k < 1 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        Ok(())
    }

    pub fn delta_u(&self) -> f64 {
        self.d_max - self.d_min
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity shifted into [0, 2]: 1 + a.b/(|a||b|), clamped against
/// rounding. Identical vectors score 2, orthogonal 1, opposite 0.
pub fn shifted_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    if na == 0.0 {
        return Err(Error::ZeroNorm("first argument".into()));
    }
    let nb = norm(b);
    if nb == 0.0 {
        return Err(Error::ZeroNorm("second argument".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 + dot / (na * nb)).clamp(0.0, 2.0))
}

/// Per-candidate utility for one class:
/// u(candidate) = sum over private rows of
/// (clip(shifted_cosine(row, candidate), d_min, d_max) - d_min).
/// Every summand lies in [0, d_max - d_min], so adding a private row never
/// decreases any utility and raises each by at most d_max - d_min: the
/// utility is positively monotonic with range sensitivity d_max - d_min.
pub fn class_utilities(
    ec: &EmbeddingMatrix,
    public: &EmbeddingMatrix,
    cfg: &SelectConfig,
) -> Result<Vec<f64>> {
    class_utilities_blocked(ec, public, cfg, DEFAULT_BLOCK)
}

/// As `class_utilities`, with an explicit candidate block size. Results are
/// bitwise identical for every block size: each candidate's sum runs over
/// private rows in index order, in f64, independent of blocking.
pub fn class_utilities_blocked(
    ec: &EmbeddingMatrix,
    public: &EmbeddingMatrix,
    cfg: &SelectConfig,
    block: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if block == 0 {
        return Err(Error::invalid("block", "must be at least 1"));
    }
    if ec.n() == 0 {
        return Err(Error::EmptyClass { class: None });
    }
    if public.n() == 0 {
        return Err(Error::EmptyCandidates);
    }
    if ec.d() != public.d() {
        return Err(Error::DimensionMismatch(format!(
            "private dim {} vs public dim {}",
            ec.d(),
            public.d()
        )));
    }

    let private_rows: Vec<Vec<f64>> = (0..ec.n()).map(|i| ec.row_f64(i)).collect();
    let mut private_norms = Vec::with_capacity(private_rows.len());
    for (i, row) in private_rows.iter().enumerate() {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("private row {i}")));
        }
        private_norms.push(n);
    }

    let block_starts: Vec<usize> = (0..public.n()).step_by(block).collect();
    let blocks: Vec<Result<Vec<f64>>> = block_starts
        .par_iter()
        .map(|&start| {
            let end = (start + block).min(public.n());
            let mut out = Vec::with_capacity(end - start);
            for j in start..end {
                let candidate = public.row_f64(j);
                let nc = norm(&candidate);
                if nc == 0.0 {
                    return Err(Error::ZeroNorm(format!("public row {j}")));
                }
                let mut u = 0.0f64;
                for (row, &nr) in private_rows.iter().zip(&private_norms) {
                    let dot: f64 = row.iter().zip(&candidate).map(|(x, y)| x * y).sum();
                    let shifted = (1.0 + dot / (nr * nc)).clamp(0.0, 2.0);
                    u += shifted.clamp(cfg.d_min, cfg.d_max) - cfg.d_min;
                }
                out.push(u);
            }
            Ok(out)
        })
        .collect();

    let mut utilities = Vec::with_capacity(public.n());
    for b in blocks {
        utilities.extend(b?);
    }
    Ok(utilities)
}

fn utility_vector(
    ec: &EmbeddingMatrix,
    public: &EmbeddingMatrix,
    cfg: &SelectConfig,
) -> Result<UtilityVector> {
    let u = class_utilities(ec, public, cfg)?;
    UtilityVector::new(u, Sensitivity::range(cfg.delta_u()), true)
}

/// Selects one public candidate for one class: the exponential mechanism at
/// exponent epsilon * u / (d_max - d_min), the monotonic rate.
pub fn select_public_prototype(
    ec: &EmbeddingMatrix,
    public: &EmbeddingMatrix,
    cfg: &SelectConfig,
    state: RngState,
) -> Result<(usize, MechanismReport)> {
    cfg.validate()?;
    if cfg.k != 1 {
        return Err(Error::invalid(
            "k",
            "single selection requires k = 1; use the top-K variant",
        ));
    }
    let u = utility_vector(ec, public, cfg)?;
    let winner = exp_mech_sample(&u, cfg.epsilon, state)?;
    let report = MechanismReport {
        mechanism: "exp-mech-select".to_string(),
        epsilon: Some(cfg.epsilon),
        sensitivity: cfg.delta_u(),
        seed: state.seed,
        stream: state.stream,
        candidates: Some(public.n()),
        ..Default::default()
    };
    Ok((winner, report))
}

/// Selects K public candidates jointly for one class. The set utility is not
/// monotonic, so the exponent runs at epsilon / (2 (d_max - d_min)): the
/// quoted epsilon buys half the selection pressure of the single-winner
/// mechanism, which the report flags as a doubled cost.
pub fn select_public_topk(
    ec: &EmbeddingMatrix,
    public: &EmbeddingMatrix,
    cfg: &SelectConfig,
    state: RngState,
) -> Result<(Vec<usize>, MechanismReport)> {
    cfg.validate()?;
    if cfg.k > public.n() {
        return Err(Error::invalid(
            "k",
            format!("{} prototypes requested from {} candidates", cfg.k, public.n()),
        ));
    }
    let u = class_utilities(ec, public, cfg)?;
    let t = TopKUtility::from_utilities(&u, cfg.k)?;
    let ids = topk_joint_sample(&t, cfg.epsilon, &Sensitivity::range(cfg.delta_u()), state)?;
    let report = MechanismReport {
        mechanism: "exp-mech-topk".to_string(),
        epsilon: Some(cfg.epsilon),
        sensitivity: cfg.delta_u(),
        seed: state.seed,
        stream: state.stream,
        candidates: Some(public.n()),
        doubled_cost: Some(true),
        ..Default::default()
    };
    Ok((ids, report))
}

/// Per-class selection over the whole dataset, one RNG stream per class id.
/// Prototype vectors are the selected public embeddings; the sidecar keeps
/// their candidate ids. Classes are disjoint, so the ledger composes to the
/// per-class epsilon.
pub fn select_all_classes(
    ds: &LabeledDataset,
    public: &EmbeddingMatrix,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<PrototypeSet> {
    cfg.validate()?;
    let split = split_by_class(ds);
    for (c, ec) in &split {
        if ec.n() == 0 {
            return Err(Error::EmptyClass { class: Some(*c) });
        }
    }
    let per_class: Vec<(Vec<usize>, MechanismReport)> = split
        .par_iter()
        .map(|(c, ec)| {
            let state = RngState::for_class(seed, *c);
            if cfg.k == 1 {
                let (id, report) = select_public_prototype(ec, public, cfg, state)?;
                Ok((vec![id], report))
            } else {
                select_public_topk(ec, public, cfg, state)
            }
        })
        .collect::<Result<_>>()?;

    let d = public.d();
    let mut vectors = Vec::with_capacity(per_class.len() * cfg.k * d);
    let mut candidate_ids = Vec::with_capacity(per_class.len());
    let mut reports = Vec::with_capacity(per_class.len());
    let mut ledger = AccountingLedger::new();
    for (c, (ids, report)) in per_class.into_iter().enumerate() {
        for &id in &ids {
            vectors.extend(public.row_f64(id));
        }
        candidate_ids.push(ids);
        reports.push(report);
        ledger.record(
            "dp-public",
            Scope::Class(c as u32),
            PrivacyBudget::PureDp(cfg.epsilon),
        );
    }
    let mut set = PrototypeSet::new(
        ds.num_classes,
        cfg.k,
        d,
        vectors,
        Provenance::DpPublic,
        ledger,
    )?;
    set.candidate_ids = Some(candidate_ids);
    set.reports = reports;
    Ok(set)
}
