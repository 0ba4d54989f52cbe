//! Beta-Bernoulli rating posteriors.
//!
//! Every trust quantity in the system is a pair of nonnegative pseudo-counts
//! `(x, y)` encoding a Beta posterior over a misbehavior Bernoulli parameter:
//! `x` accumulates bad-behavior evidence, `y` accumulates good-behavior
//! evidence. A mean near 1 therefore means "this peer misbehaves".
//!
//! All operations here are pure value-to-value functions; the protocol layer
//! owns every state transition.

use serde::{Deserialize, Serialize};

use crate::error::{FabricError, Result};

/// Binary behavioral evidence fed into a rating update.
///
/// `Misbehaved` carries evidence value 1 (bad), `Behaved` carries 0 (good),
/// matching the misbehavior-probability orientation of [`BetaRating`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    Behaved,
    Misbehaved,
}

impl Evidence {
    pub fn value(self) -> f64 {
        match self {
            Evidence::Behaved => 0.0,
            Evidence::Misbehaved => 1.0,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Evidence::Behaved
        } else {
            Evidence::Misbehaved
        }
    }
}

/// A Beta posterior over a misbehavior Bernoulli parameter, stored as the
/// pseudo-count pair `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRating {
    x: f64,
    y: f64,
}

impl Default for BetaRating {
    fn default() -> Self {
        Self::new()
    }
}

impl BetaRating {
    /// The non-informative prior `(1, 1)`.
    pub fn new() -> Self {
        BetaRating { x: 1.0, y: 1.0 }
    }

    /// Builds a rating from explicit pseudo-counts. Rejects negative counts
    /// and the empty posterior `x + y = 0`.
    pub fn from_counts(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
            return Err(FabricError::InvalidRating(format!(
                "pseudo-counts must be finite and nonnegative, got ({x}, {y})"
            )));
        }
        if x + y == 0.0 {
            return Err(FabricError::InvalidRating(
                "pseudo-counts must not both be zero".into(),
            ));
        }
        Ok(BetaRating { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// Total concentration `x + y`; larger values mean lower epistemic
    /// uncertainty.
    pub fn concentration(&self) -> f64 {
        self.x + self.y
    }

    /// True while the rating still equals the prior `(1, 1)`, i.e. no
    /// evidence has ever been folded in.
    pub fn is_prior(&self) -> bool {
        self.x == 1.0 && self.y == 1.0
    }

    /// Recency-weighted update: `(λ·x + s, λ·y + (1 − s))`.
    ///
    /// `lambda = 1` reduces to plain Bayesian counting; smaller values decay
    /// old evidence geometrically so the posterior tracks drifting behavior.
    pub fn discounted_update(&self, evidence: Evidence, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(FabricError::InvalidConfig(format!(
                "decay factor must lie in (0, 1], got {lambda}"
            )));
        }
        let s = evidence.value();
        Ok(BetaRating {
            x: lambda * self.x + s,
            y: lambda * self.y + (1.0 - s),
        })
    }

    /// Posterior mean `x / (x + y)`.
    pub fn mean(&self) -> f64 {
        self.x / (self.x + self.y)
    }

    /// Posterior variance `xy / ((x + y)² (x + y + 1))`.
    pub fn variance(&self) -> f64 {
        let n = self.x + self.y;
        (self.x * self.y) / (n * n * (n + 1.0))
    }

    /// Folds a reported rating in as weak pseudo-counts:
    /// `(x + ω·x_rep, y + ω·y_rep)` with `ω ∈ (0, 1)`.
    pub fn merge_testimony(&self, reported: &BetaRating, omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < 1.0) {
            return Err(FabricError::InvalidConfig(format!(
                "testimony discount must lie in (0, 1), got {omega}"
            )));
        }
        Ok(BetaRating {
            x: self.x + omega * reported.x,
            y: self.y + omega * reported.y,
        })
    }
}

/// Mean difference normalized by the combined standard deviation:
/// `|E[a] − E[b]| / sqrt(Var(a) + Var(b))`.
///
/// Errors with [`FabricError::DegenerateDeviation`] when both ratings are
/// point masses; callers treat that as "incompatible".
pub fn deviation_statistic(witness: &BetaRating, local: &BetaRating) -> Result<f64> {
    let var_sum = witness.variance() + local.variance();
    if var_sum == 0.0 {
        return Err(FabricError::DegenerateDeviation);
    }
    Ok((witness.mean() - local.mean()).abs() / var_sum.sqrt())
}

/// Thresholds and weights governing the reputation overlay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReputationConfig {
    /// Decay factor λ for discounted updates, in (0, 1].
    pub lambda: f64,
    /// Deviation tolerance δ for the testimony compatibility test.
    pub delta: f64,
    /// Testimony discount ω in (0, 1).
    pub omega: f64,
    /// Witness admissibility threshold τ on the distrust mean, in [0, 1].
    pub tau_trust: f64,
    /// Routing reputation threshold: peers with E[P] at or above this are
    /// dropped from recipient sets.
    pub tau_rep: f64,
    /// Maximum witnesses solicited per evaluation.
    pub w_max: usize,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        ReputationConfig {
            lambda: 0.9,
            delta: 1.0,
            omega: 0.1,
            tau_trust: 0.5,
            tau_rep: 0.7,
            w_max: 3,
        }
    }
}

impl ReputationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(FabricError::InvalidConfig(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(FabricError::InvalidConfig(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(FabricError::InvalidConfig(format!(
                "omega must lie in (0, 1), got {}",
                self.omega
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_trust) {
            return Err(FabricError::InvalidConfig(format!(
                "tau_trust must lie in [0, 1], got {}",
                self.tau_trust
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_rep) {
            return Err(FabricError::InvalidConfig(format!(
                "tau_rep must lie in [0, 1], got {}",
                self.tau_rep
            )));
        }
        Ok(())
    }
}
