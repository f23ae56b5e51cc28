//! Privacy budgets, conversions between pure DP and zCDP, sensitivity
//! bookkeeping, and parallel-composition accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A privacy guarantee, either pure-DP epsilon or zCDP rho.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum PrivacyBudget {
    PureDp(f64),
    Zcdp(f64),
}

impl PrivacyBudget {
    pub fn value(&self) -> f64 {
        match *self {
            PrivacyBudget::PureDp(v) | PrivacyBudget::Zcdp(v) => v,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PrivacyBudget::PureDp(_) => "pure-dp",
            PrivacyBudget::Zcdp(_) => "zcdp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.value();
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::invalid(
                "budget",
                format!("{} value must be positive and finite, got {v}", self.kind()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityNorm {
    /// l2 sensitivity of a vector-valued query, for the Gaussian mechanism.
    L2,
    /// Range sensitivity of a utility function, for the exponential mechanism.
    Range,
}

/// Worst-case change of a query under one record added or removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub value: f64,
    pub norm: SensitivityNorm,
}

impl Sensitivity {
    pub fn l2(value: f64) -> Self {
        Self {
            value,
            norm: SensitivityNorm::L2,
        }
    }

    pub fn range(value: f64) -> Self {
        Self {
            value,
            norm: SensitivityNorm::Range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() || self.value < 0.0 {
            return Err(Error::invalid(
                "sensitivity",
                format!("must be nonnegative and finite, got {}", self.value),
            ));
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::invalid(
            name,
            format!("must be positive and finite, got {v}"),
        ));
    }
    Ok(())
}

/// rho = epsilon^2 / 2.
pub fn pure_dp_to_zcdp(epsilon: f64) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    Ok(epsilon * epsilon / 2.0)
}

/// epsilon = sqrt(2 rho). This inverts `pure_dp_to_zcdp` and is a comparison
/// axis only: a rho-zCDP mechanism does not actually satisfy pure DP at this
/// epsilon.
pub fn zcdp_to_pure_dp_equivalent(rho: f64) -> Result<f64> {
    check_positive("rho", rho)?;
    Ok((2.0 * rho).sqrt())
}

/// zCDP cost of the epsilon-DP exponential mechanism: rho = epsilon^2 / 8.
pub fn exp_mech_zcdp(epsilon: f64) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    Ok(epsilon * epsilon / 8.0)
}

/// zCDP cost of the Gaussian mechanism: rho = delta^2 / (2 sigma^2).
pub fn gaussian_mech_zcdp(delta: &Sensitivity, sigma: f64) -> Result<f64> {
    delta.validate()?;
    if delta.norm != SensitivityNorm::L2 {
        return Err(Error::invalid(
            "sensitivity",
            "gaussian mechanism requires an l2 sensitivity",
        ));
    }
    check_positive("sensitivity", delta.value)?;
    check_positive("sigma", sigma)?;
    Ok(delta.value * delta.value / (2.0 * sigma * sigma))
}

/// What part of the private data one ledger entry touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Global,
    Class(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: String,
    pub scope: Scope,
    pub budget: PrivacyBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    Parallel,
}

/// Append-only record of mechanism invocations over disjoint data scopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingLedger {
    pub entries: Vec<LedgerEntry>,
    pub composition: Composition,
}

impl Default for AccountingLedger {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of composing a ledger: the total budget, and whether every entry
/// carried the same value (a well-formed DPPL run is uniform).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelComposition {
    pub total: PrivacyBudget,
    pub uniform: bool,
}

impl AccountingLedger {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            composition: Composition::Parallel,
        }
    }

    pub fn record(&mut self, mechanism: &str, scope: Scope, budget: PrivacyBudget) {
        self.entries.push(LedgerEntry {
            mechanism: mechanism.to_string(),
            scope,
            budget,
        });
    }

    /// Parallel composition over disjoint scopes: the total is the maximum
    /// entry. Entries must share one budget kind and may not repeat a scope;
    /// a global entry may not coexist with per-class entries.
    pub fn compose_parallel(&self) -> Result<ParallelComposition> {
        let first = self
            .entries
            .first()
            .ok_or_else(|| Error::Ledger("empty ledger".into()))?;
        let mut seen = std::collections::HashSet::new();
        let mut has_global = false;
        let mut has_class = false;
        for entry in &self.entries {
            entry.budget.validate()?;
            if std::mem::discriminant(&entry.budget) != std::mem::discriminant(&first.budget) {
                return Err(Error::Ledger(format!(
                    "mixed budget kinds: {} and {}",
                    first.budget.kind(),
                    entry.budget.kind()
                )));
            }
            if !seen.insert(entry.scope) {
                return Err(Error::Ledger(match entry.scope {
                    Scope::Class(c) => format!("duplicate class id {c}"),
                    Scope::Global => "duplicate global scope".into(),
                }));
            }
            match entry.scope {
                Scope::Global => has_global = true,
                Scope::Class(_) => has_class = true,
            }
        }
        if has_global && has_class {
            return Err(Error::Ledger(
                "global scope overlaps per-class scopes".into(),
            ));
        }
        let max = self
            .entries
            .iter()
            .map(|e| e.budget.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let uniform = self.entries.iter().all(|e| e.budget.value() == max);
        let total = match first.budget {
            PrivacyBudget::PureDp(_) => PrivacyBudget::PureDp(max),
            PrivacyBudget::Zcdp(_) => PrivacyBudget::Zcdp(max),
        };
        Ok(ParallelComposition { total, uniform })
    }
}
