//! Privacy accounting for Gaussian noisy-max voting.
//!
//! Each vote released with noise `σ` is `(γ, γ/σ²)`-RDP for every order
//! `γ > 1`. Costs compose additively, so a ledger only needs the total
//! coefficient `Σ 1/σ_q²`; conversion to `(ε, δ)` minimizes
//! `coeff·γ + log(1/δ)/(γ − 1)` over `γ`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise scale, failure probability and number of answered queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub sigma: f64,
    pub delta: f64,
    pub num_queries: u64,
}

impl PrivacyParams {
    pub fn new(sigma: f64, delta: f64, num_queries: u64) -> Result<Self> {
        check_sigma(sigma)?;
        check_delta(delta)?;
        Ok(PrivacyParams {
            sigma,
            delta,
            num_queries,
        })
    }

    pub fn guarantee(&self) -> Result<DpGuarantee> {
        let mut ledger = RdpLedger::new();
        ledger.record(self.num_queries, self.sigma)?;
        rdp_to_dp(&ledger, self.delta)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be > 0 for privacy accounting, got {sigma}"
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Smallest `δ` the Gaussian mechanism with noise `σ` (unit sensitivity)
/// admits at `ε < 1`: `(4/5)·exp(−(σε)²/2)`.
pub fn gaussian_mechanism_delta(sigma: f64, epsilon: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    if epsilon >= 1.0 {
        return Err(Error::OutOfDomain(format!(
            "the Gaussian mechanism bound holds only for epsilon < 1, got {epsilon}"
        )));
    }
    Ok(0.8 * (-(sigma * epsilon).powi(2) / 2.0).exp())
}

/// Accumulated RDP cost, kept as query counts per noise scale so that the
/// coefficient does not depend on recording order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RdpLedger {
    batches: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub sigma: f64,
    pub count: u64,
}

impl RdpLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` queries answered with noise `σ`.
    pub fn record(&mut self, count: u64, sigma: f64) -> Result<&mut Self> {
        check_sigma(sigma)?;
        if count > 0 {
            *self.batches.entry(sigma.to_bits()).or_insert(0) += count;
        }
        Ok(self)
    }

    /// Combines two ledgers; associative and commutative.
    pub fn merge(mut self, other: &RdpLedger) -> Self {
        for (&bits, &count) in &other.batches {
            *self.batches.entry(bits).or_insert(0) += count;
        }
        self
    }

    /// `Σ_q 1/σ_q²`, so that the composed cost is `coeff·γ`.
    pub fn coeff(&self) -> f64 {
        self.batches
            .iter()
            .map(|(&bits, &count)| count as f64 / f64::from_bits(bits).powi(2))
            .sum()
    }

    pub fn num_queries(&self) -> u64 {
        self.batches.values().sum()
    }

    /// Batches in increasing order of `σ`.
    pub fn batches(&self) -> Vec<QueryBatch> {
        self.batches
            .iter()
            .map(|(&bits, &count)| QueryBatch {
                sigma: f64::from_bits(bits),
                count,
            })
            .collect()
    }
}

impl Serialize for RdpLedger {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.batches().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RdpLedger {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let batches = Vec::<QueryBatch>::deserialize(d)?;
        let mut ledger = RdpLedger::new();
        for b in batches {
            ledger
                .record(b.count, b.sigma)
                .map_err(|e| serde::de::Error::custom(e.to_string()))?;
        }
        Ok(ledger)
    }
}

/// An `(ε, δ)` guarantee and the Rényi order that achieves it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    /// `None` when no query has been recorded.
    pub gamma_star: Option<f64>,
    pub coeff: f64,
}

/// `ε(γ) = coeff·γ + log(1/δ)/(γ − 1)`.
pub fn rdp_epsilon_at(coeff: f64, delta: f64, gamma: f64) -> f64 {
    coeff * gamma + (1.0 / delta).ln() / (gamma - 1.0)
}

/// Converts the ledger to `(ε, δ)`-DP at the minimizing order
/// `γ* = 1 + sqrt(log(1/δ)/coeff)`.
pub fn rdp_to_dp(ledger: &RdpLedger, delta: f64) -> Result<DpGuarantee> {
    check_delta(delta)?;
    let coeff = ledger.coeff();
    if coeff == 0.0 {
        return Ok(DpGuarantee {
            epsilon: 0.0,
            delta,
            gamma_star: None,
            coeff,
        });
    }
    let gamma = 1.0 + ((1.0 / delta).ln() / coeff).sqrt();
    Ok(DpGuarantee {
        epsilon: rdp_epsilon_at(coeff, delta, gamma),
        delta,
        gamma_star: Some(gamma),
        coeff,
    })
}

/// `ε` after `m` queries at noise `σ`.
pub fn epsilon_for(m: u64, sigma: f64, delta: f64) -> Result<f64> {
    Ok(PrivacyParams::new(sigma, delta, m)?.guarantee()?.epsilon)
}

const SIGMA_RANGE: (f64, f64) = (1e-3, 1e6);

/// Smallest `σ` in `[1e-3, 1e6]` whose `ε` after `m` queries is at most
/// `target`, found by bisection in log space.
pub fn budget_for_target(m: u64, delta: f64, target: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target epsilon must be > 0, got {target}"
        )));
    }
    let (mut lo, mut hi) = SIGMA_RANGE;
    if epsilon_for(m, hi, delta)? > target {
        return Err(Error::Range(format!(
            "epsilon {target} is unreachable for m = {m} with sigma <= {hi:e}"
        )));
    }
    if epsilon_for(m, lo, delta)? <= target {
        return Ok(lo);
    }
    while hi / lo > 1.0 + 1e-9 {
        let mid = (lo * hi).sqrt();
        if epsilon_for(m, mid, delta)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
