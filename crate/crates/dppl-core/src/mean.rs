//! Private per-class mean prototypes.
//!
//! The direct estimator pools, clips, averages, and adds Gaussian noise
//! calibrated to the clipped mean's sensitivity. The iterative estimator
//! recenters and shrinks a confidence ball over several noisy rounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{split_by_class, EmbeddingMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::mechanisms::{gaussian_noise, MechanismReport};
use crate::privacy::{AccountingLedger, PrivacyBudget, Scope};
use crate::prototype::{PrototypeSet, Provenance};
use crate::rng::{DeterministicRng, RngState};

/// Settings for the direct clipped-Gaussian estimator. `rho` is the zCDP
/// budget spent per class, `clip_radius` the ℓ2 clip norm in the pooled
/// space, `k_pool` the average-pooling kernel width (1 = no pooling).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanConfig {
    pub rho: f64,
    pub clip_radius: f64,
    pub k_pool: usize,
}

impl MeanConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho <= 0.0 {
            return Err(Error::invalid("rho", "must be positive and finite"));
        }
        if !self.clip_radius.is_finite() || self.clip_radius <= 0.0 {
            return Err(Error::invalid("clip_radius", "must be positive and finite"));
        }
        if self.k_pool < 1 {
            return Err(Error::invalid("k_pool", "must be at least 1"));
        }
        Ok(())
    }
}

/// Scales `x` onto the ball of radius `r` if it lies outside; vectors inside
/// pass through unchanged.
pub fn clip_l2(x: &[f64], r: f64) -> Vec<f64> {
    assert!(r > 0.0, "clip radius must be positive");
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= r {
        x.to_vec()
    } else {
        let scale = r / norm;
        x.iter().map(|v| v * scale).collect()
    }
}

/// Average pooling with kernel `k_pool`: output j is the mean of input
/// coordinates [j*k_pool, (j+1)*k_pool), the final group averaging over
/// however many coordinates remain. Output dimension is ceil(d / k_pool);
/// `k_pool` = 1 is the identity.
pub fn avg_pool(x: &[f64], k_pool: usize) -> Vec<f64> {
    assert!(k_pool >= 1, "pooling kernel must be at least 1");
    if k_pool == 1 {
        return x.to_vec();
    }
    x.chunks(k_pool)
        .map(|chunk| chunk.iter().sum::<f64>() / chunk.len() as f64)
        .collect()
}

/// Pooled output dimension for input dimension `d`.
pub fn pooled_dim(d: usize, k_pool: usize) -> usize {
    d.div_ceil(k_pool)
}

/// Pools every row of a matrix, for bringing queries into the space that
/// pooled prototypes live in. `k_pool` = 1 returns a copy.
pub fn pool_matrix(m: &EmbeddingMatrix, k_pool: usize) -> Result<EmbeddingMatrix> {
    if k_pool < 1 {
        return Err(Error::invalid("k_pool", "must be at least 1"));
    }
    if k_pool == 1 {
        return Ok(m.clone());
    }
    let rows: Vec<Vec<f32>> = (0..m.n())
        .map(|i| {
            avg_pool(&m.row_f64(i), k_pool)
                .into_iter()
                .map(|v| v as f32)
                .collect()
        })
        .collect();
    EmbeddingMatrix::from_rows(&rows, pooled_dim(m.d(), k_pool))
}

/// The noiseless core of the direct estimator: pool each row, clip to the
/// configured radius, and average. `dppl_mean_prototype` is exactly this
/// plus calibrated Gaussian noise, so noiseless behavior is testable here.
pub fn pooled_clipped_mean(xc: &EmbeddingMatrix, cfg: &MeanConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if xc.n() == 0 {
        return Err(Error::EmptyClass { class: None });
    }
    let d_out = pooled_dim(xc.d(), cfg.k_pool);
    let mut acc = vec![0.0f64; d_out];
    for i in 0..xc.n() {
        let pooled = avg_pool(&xc.row_f64(i), cfg.k_pool);
        let clipped = clip_l2(&pooled, cfg.clip_radius);
        for (a, v) in acc.iter_mut().zip(&clipped) {
            *a += v;
        }
    }
    let n = xc.n() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(acc)
}

/// Direct private prototype for one class: pooled clipped mean plus
/// per-coordinate N(0, sigma^2) with sigma^2 = 2 r^2 / (n^2 rho), i.e. the
/// Gaussian mechanism at sensitivity 2r/n.
pub fn dppl_mean_prototype(
    xc: &EmbeddingMatrix,
    cfg: &MeanConfig,
    state: RngState,
) -> Result<(Vec<f64>, MechanismReport)> {
    let mean = pooled_clipped_mean(xc, cfg)?;
    let n = xc.n() as f64;
    let delta = 2.0 * cfg.clip_radius / n;
    let sigma = delta / (2.0 * cfg.rho).sqrt();
    let noise = gaussian_noise(mean.len(), sigma, state)?;
    let proto: Vec<f64> = mean.iter().zip(&noise).map(|(m, z)| m + z).collect();
    let report = MechanismReport {
        mechanism: "gaussian-mean".to_string(),
        rho: Some(cfg.rho),
        sensitivity: delta,
        sigma: Some(sigma),
        seed: state.seed,
        stream: state.stream,
        dimension: Some(mean.len()),
        ..Default::default()
    };
    Ok((proto, report))
}

/// One private prototype per class, each on its own RNG stream keyed by
/// class id, so results are identical whether classes run serially or in
/// parallel. The ledger carries one per-class entry; parallel composition
/// makes the total cost `cfg.rho`.
pub fn dppl_mean_all(ds: &LabeledDataset, cfg: &MeanConfig, seed: u64) -> Result<PrototypeSet> {
    cfg.validate()?;
    let split = split_by_class(ds);
    for (c, xc) in &split {
        if xc.n() == 0 {
            return Err(Error::EmptyClass { class: Some(*c) });
        }
    }
    let per_class: Vec<(Vec<f64>, MechanismReport)> = split
        .par_iter()
        .map(|(c, xc)| dppl_mean_prototype(xc, cfg, RngState::for_class(seed, *c)))
        .collect::<Result<_>>()?;

    let d_out = pooled_dim(ds.embeddings.d(), cfg.k_pool);
    let mut vectors = Vec::with_capacity(per_class.len() * d_out);
    let mut reports = Vec::with_capacity(per_class.len());
    let mut ledger = AccountingLedger::new();
    for (c, (proto, report)) in per_class.into_iter().enumerate() {
        vectors.extend(proto);
        reports.push(report);
        ledger.record("dp-mean", Scope::Class(c as u32), PrivacyBudget::Zcdp(cfg.rho));
    }
    let mut set = PrototypeSet::new(
        ds.num_classes,
        1,
        d_out,
        vectors,
        Provenance::DpMean,
        ledger,
    )?;
    set.reports = reports;
    set.pool = cfg.k_pool;
    Ok(set)
}

/// Plain per-class means in the pooled space, no clipping, no noise. The
/// non-private baseline the private estimators are compared against.
pub fn non_private_prototypes(ds: &LabeledDataset, k_pool: usize) -> Result<PrototypeSet> {
    if k_pool < 1 {
        return Err(Error::invalid("k_pool", "must be at least 1"));
    }
    let split = split_by_class(ds);
    let d_out = pooled_dim(ds.embeddings.d(), k_pool);
    let mut vectors = Vec::with_capacity(split.len() * d_out);
    for (c, xc) in &split {
        if xc.n() == 0 {
            return Err(Error::EmptyClass { class: Some(*c) });
        }
        let mut acc = vec![0.0f64; d_out];
        for i in 0..xc.n() {
            for (a, v) in acc.iter_mut().zip(avg_pool(&xc.row_f64(i), k_pool)) {
                *a += v;
            }
        }
        let n = xc.n() as f64;
        vectors.extend(acc.into_iter().map(|a| a / n));
    }
    let mut set = PrototypeSet::new(
        ds.num_classes,
        1,
        d_out,
        vectors,
        Provenance::NonPrivate,
        AccountingLedger::new(),
    )?;
    set.pool = k_pool;
    Ok(set)
}

/// Settings for the iterative estimator. Defaults follow the original
/// algorithm: 10 steps with an equal budget split, initial ball of radius
/// sqrt(d) at the origin, and a 0.99 tail quantile for the noise bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoinPressConfig {
    pub rho: f64,
    pub steps: usize,
    /// Per-step budget fractions; None means an equal split.
    pub budget_fractions: Option<Vec<f64>>,
    /// Initial ball radius; None means sqrt(d).
    pub r0: Option<f64>,
    /// Initial center; None means the origin.
    pub c0: Option<Vec<f64>>,
    pub tail_quantile: f64,
}

impl CoinPressConfig {
    pub fn new(rho: f64) -> Self {
        Self {
            rho,
            steps: 10,
            budget_fractions: None,
            r0: None,
            c0: None,
            tail_quantile: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho <= 0.0 {
            return Err(Error::invalid("rho", "must be positive and finite"));
        }
        if self.steps < 1 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if let Some(fracs) = &self.budget_fractions {
            if fracs.len() != self.steps {
                return Err(Error::invalid(
                    "budget_fractions",
                    format!("expected {} fractions, got {}", self.steps, fracs.len()),
                ));
            }
            if fracs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
                return Err(Error::invalid("budget_fractions", "must all be positive"));
            }
            let sum: f64 = fracs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "budget_fractions",
                    format!("must sum to 1, got {sum}"),
                ));
            }
        }
        if let Some(r0) = self.r0 {
            if !r0.is_finite() || r0 <= 0.0 {
                return Err(Error::invalid("r0", "must be positive and finite"));
            }
        }
        if !(self.tail_quantile > 0.0 && self.tail_quantile < 1.0) {
            return Err(Error::invalid("tail_quantile", "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn fractions(&self) -> Vec<f64> {
        match &self.budget_fractions {
            Some(f) => f.clone(),
            None => vec![1.0 / self.steps as f64; self.steps],
        }
    }
}

/// Per-run diagnostics of the iterative estimator: the radius sequence
/// r_0..r_t, the fraction of samples clipped at each step, and whether the
/// radius ever grew (the estimator's divergence signature at too-small
/// budgets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDiagnostics {
    pub radii: Vec<f64>,
    pub clipped_fractions: Vec<f64>,
    pub diverged: bool,
}

/// Radius gamma with P[ ||N(0, I_d)|| < gamma ] = q: the square root of the
/// chi-squared quantile at q with d degrees of freedom.
pub fn gaussian_norm_quantile(d: usize, q: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", "must lie in (0, 1)"));
    }
    let chi2 = ChiSquared::new(d as f64)
        .map_err(|e| Error::invalid("d", format!("chi-squared setup failed: {e}")))?;
    Ok(chi2.inverse_cdf(q).sqrt())
}

/// Iterative private mean estimation. Each step clips the points to a ball
/// of radius r_i + gamma around the running center, averages, adds Gaussian
/// noise at per-step sensitivity 2(r_i + gamma)/n under that step's budget
/// fraction, and shrinks the radius to gamma * sqrt(1/n + sigma_i^2).
/// Clipping is cumulative across steps, as in the original algorithm.
///
/// A growing radius flags divergence; a non-finite radius or center stops
/// the iteration early and returns the last finite center instead of
/// failing.
pub fn coinpress_mean(
    xc: &EmbeddingMatrix,
    cfg: &CoinPressConfig,
    state: RngState,
) -> Result<(Vec<f64>, MeanDiagnostics, MechanismReport)> {
    cfg.validate()?;
    if xc.n() == 0 {
        return Err(Error::EmptyClass { class: None });
    }
    let n = xc.n() as f64;
    let d = xc.d();
    if let Some(c0) = &cfg.c0 {
        if c0.len() != d {
            return Err(Error::invalid(
                "c0",
                format!("expected dimension {d}, got {}", c0.len()),
            ));
        }
        if c0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("c0", "must be finite"));
        }
    }
    let gamma = gaussian_norm_quantile(d, cfg.tail_quantile)?;
    let mut center: Vec<f64> = cfg.c0.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut radius = cfg.r0.unwrap_or_else(|| (d as f64).sqrt());
    let mut rows: Vec<Vec<f64>> = (0..xc.n()).map(|i| xc.row_f64(i)).collect();
    let mut rng = DeterministicRng::from_state(state);

    let mut radii = vec![radius];
    let mut clipped_fractions = Vec::with_capacity(cfg.steps);
    let mut diverged = false;
    let mut last_delta = 0.0;
    let mut last_sigma = 0.0;

    for frac in cfg.fractions() {
        let rho_i = cfg.rho * frac;
        let clip_thresh = radius + gamma;
        let mut clipped_count = 0usize;
        for row in rows.iter_mut() {
            let dist = row
                .iter()
                .zip(&center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt();
            if dist > clip_thresh {
                clipped_count += 1;
                let scale = clip_thresh / dist;
                for (x, c) in row.iter_mut().zip(&center) {
                    *x = c + (*x - c) * scale;
                }
            }
        }
        clipped_fractions.push(clipped_count as f64 / n);

        let delta = 2.0 * clip_thresh / n;
        let sigma = delta / (2.0 * rho_i).sqrt();
        last_delta = delta;
        last_sigma = sigma;
        let mut next_center = vec![0.0f64; d];
        for row in &rows {
            for (a, x) in next_center.iter_mut().zip(row) {
                *a += x;
            }
        }
        for a in next_center.iter_mut() {
            *a = *a / n + sigma * rng.standard_normal();
        }
        let next_radius = gamma * (1.0 / n + sigma * sigma).sqrt();

        if !next_radius.is_finite() || next_center.iter().any(|v| !v.is_finite()) {
            diverged = true;
            radii.push(next_radius);
            break;
        }
        if next_radius > radius {
            diverged = true;
        }
        center = next_center;
        radius = next_radius;
        radii.push(radius);
    }

    let diagnostics = MeanDiagnostics {
        radii,
        clipped_fractions,
        diverged,
    };
    let report = MechanismReport {
        mechanism: "coinpress".to_string(),
        rho: Some(cfg.rho),
        sensitivity: last_delta,
        sigma: Some(last_sigma),
        seed: state.seed,
        stream: state.stream,
        dimension: Some(d),
        neighborhood: Some("substitute".to_string()),
        ..Default::default()
    };
    Ok((center, diagnostics, report))
}

/// Per-class iterative estimation with the same stream scheme and ledger
/// shape as `dppl_mean_all`.
pub fn coinpress_all(
    ds: &LabeledDataset,
    cfg: &CoinPressConfig,
    seed: u64,
) -> Result<(PrototypeSet, Vec<MeanDiagnostics>)> {
    cfg.validate()?;
    let split = split_by_class(ds);
    for (c, xc) in &split {
        if xc.n() == 0 {
            return Err(Error::EmptyClass { class: Some(*c) });
        }
    }
    let per_class: Vec<(Vec<f64>, MeanDiagnostics, MechanismReport)> = split
        .par_iter()
        .map(|(c, xc)| coinpress_mean(xc, cfg, RngState::for_class(seed, *c)))
        .collect::<Result<_>>()?;

    let d = ds.embeddings.d();
    let mut vectors = Vec::with_capacity(per_class.len() * d);
    let mut reports = Vec::with_capacity(per_class.len());
    let mut diagnostics = Vec::with_capacity(per_class.len());
    let mut ledger = AccountingLedger::new();
    for (c, (proto, diag, report)) in per_class.into_iter().enumerate() {
        vectors.extend(proto);
        diagnostics.push(diag);
        reports.push(report);
        ledger.record(
            "coinpress",
            Scope::Class(c as u32),
            PrivacyBudget::Zcdp(cfg.rho),
        );
    }
    let mut set = PrototypeSet::new(
        ds.num_classes,
        1,
        d,
        vectors,
        Provenance::CoinPress,
        ledger,
    )?;
    set.reports = reports;
    Ok((set, diagnostics))
}
