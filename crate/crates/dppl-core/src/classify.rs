//! Prototype classification: assign a query the class whose prototypes sit
//! closest in shifted-cosine distance. Pure post-processing, so predictions
//! never touch the privacy ledger.

use rayon::prelude::*;

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::prototype::PrototypeSet;

/// Noisy prototypes can land arbitrarily close to the origin; their norm is
/// floored here so the distance stays defined.
const PROTO_NORM_FLOOR: f64 = 1e-12;

/// Distance 2 - shifted_cosine in [0, 2]: 0 for aligned vectors, 2 for
/// opposite ones. The query must have positive norm; the prototype norm is
/// floored at 1e-12 so heavily noised prototypes remain usable.
fn prototype_distance(x: &[f64], x_norm: f64, proto: &[f64]) -> f64 {
    let proto_norm = proto
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(PROTO_NORM_FLOOR);
    let dot: f64 = x.iter().zip(proto).map(|(a, b)| a * b).sum();
    let shifted = (1.0 + dot / (x_norm * proto_norm)).clamp(0.0, 2.0);
    2.0 - shifted
}

/// Predicts the class whose prototypes have the smallest mean distance to
/// `x`; ties resolve to the lowest class id.
pub fn predict(x: &[f64], protos: &PrototypeSet) -> Result<u32> {
    if x.len() != protos.d() {
        return Err(Error::DimensionMismatch(format!(
            "query dim {} vs prototype dim {}",
            x.len(),
            protos.d()
        )));
    }
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x_norm == 0.0 {
        return Err(Error::ZeroNorm("query".into()));
    }
    let k = protos.k();
    let mut best_class = 0u32;
    let mut best_score = f64::INFINITY;
    for c in 0..protos.num_classes() {
        let mut score = 0.0;
        for i in 0..k {
            score += prototype_distance(x, x_norm, protos.prototype(c, i));
        }
        score /= k as f64;
        if score < best_score {
            best_score = score;
            best_class = c;
        }
    }
    Ok(best_class)
}

/// `predict` over every row, in parallel; elementwise identical to mapping
/// `predict`. Zero-norm rows are reported with their index.
pub fn predict_batch(x: &EmbeddingMatrix, protos: &PrototypeSet) -> Result<Vec<u32>> {
    (0..x.n())
        .into_par_iter()
        .map(|i| {
            predict(&x.row_f64(i), protos).map_err(|e| match e {
                Error::ZeroNorm(_) => Error::ZeroNorm(format!("row {i}")),
                other => other,
            })
        })
        .collect()
}
