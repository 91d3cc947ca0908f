//! Token-level language uncertainty baselines and sequence aggregation.
//!
//! All logarithms are natural; probabilities are floored at [`PROB_FLOOR`]
//! before taking logs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{NliLabel, SampleTrace, TokenDistribution, TokenTrace};

pub const PROB_FLOOR: f64 = 1e-12;

/// Which per-token quantity a [`ScoreVector`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Nll,
    Entropy,
    MaxProb,
    Ccp,
    TokenSar,
    SJsd,
    SAttn,
    VigTuq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub sample_id: String,
    pub values: Vec<f64>,
    pub method: ScoreMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
    Sum,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Sum => "sum",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "sum" => Ok(Aggregation::Sum),
            other => Err(Error::Usage(format!("unknown aggregation `{other}`"))),
        }
    }
}

fn neg_log(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Negative log-likelihood of the generated token.
pub fn nll(t: &TokenTrace) -> f64 {
    neg_log(t.chosen_probability)
}

/// Shannon entropy of a next-token distribution. A non-zero tail mass counts
/// as one extra outcome.
pub fn token_entropy(d: &TokenDistribution) -> f64 {
    let term = |p: f64| if p <= PROB_FLOOR { 0.0 } else { -p * p.ln() };
    let h: f64 = d.entries.iter().map(|&(_, p)| term(p)).sum::<f64>() + term(d.tail_mass);
    h.max(0.0)
}

pub fn max_prob(t: &TokenTrace) -> f64 {
    (1.0 - t.chosen_probability).clamp(0.0, 1.0)
}

/// Claim-conditioned probability: `-ln(entail mass / (entail + contradict mass))`
/// over the token's NLI-labeled alternatives. Neutral alternatives are ignored.
pub fn ccp(t: &TokenTrace) -> Result<f64> {
    let alts = t
        .alternatives
        .as_ref()
        .ok_or_else(|| Error::MissingChannel("alts".into()))?;
    let (mut entail, mut contradict) = (0.0, 0.0);
    for a in &alts.alternatives {
        match a.label {
            NliLabel::Entail => entail += a.probability,
            NliLabel::Contradict => contradict += a.probability,
            NliLabel::Neutral => {}
        }
    }
    if contradict <= PROB_FLOOR {
        return Ok(0.0);
    }
    let ratio = entail.max(PROB_FLOOR) / (entail + contradict);
    Ok(neg_log(ratio).max(0.0))
}

/// Normalizes non-negative raw weights to sum to one, falling back to uniform
/// weights when the total is below [`PROB_FLOOR`].
pub fn normalize_weights(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let total: f64 = raw.iter().sum();
    if total < PROB_FLOOR {
        return vec![1.0 / n as f64; n];
    }
    raw.iter().map(|r| r / total).collect()
}

/// Relevance weights `1 - |g_t|`, normalized over the sample.
pub fn sar_relevance(s: &SampleTrace) -> Result<Vec<f64>> {
    let raw = s
        .tokens
        .iter()
        .map(|t| {
            t.sar_similarity
                .map(|g| 1.0 - g.abs())
                .ok_or_else(|| Error::MissingChannel("sar_g".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(normalize_weights(&raw))
}

/// Token-SAR: NLL reweighted by normalized semantic relevance.
pub fn token_sar(s: &SampleTrace) -> Result<ScoreVector> {
    let relevance = sar_relevance(s)?;
    Ok(ScoreVector {
        sample_id: s.sample_id.clone(),
        values: s
            .tokens
            .iter()
            .zip(&relevance)
            .map(|(t, r)| nll(t) * r)
            .collect(),
        method: ScoreMethod::TokenSar,
    })
}

fn per_token(s: &SampleTrace, method: ScoreMethod, f: impl Fn(&TokenTrace) -> f64) -> ScoreVector {
    ScoreVector {
        sample_id: s.sample_id.clone(),
        values: s.tokens.iter().map(f).collect(),
        method,
    }
}

pub fn nll_vector(s: &SampleTrace) -> ScoreVector {
    per_token(s, ScoreMethod::Nll, nll)
}

pub fn entropy_vector(s: &SampleTrace) -> ScoreVector {
    per_token(s, ScoreMethod::Entropy, |t| {
        token_entropy(&t.dist_with_image)
    })
}

pub fn max_prob_vector(s: &SampleTrace) -> ScoreVector {
    per_token(s, ScoreMethod::MaxProb, max_prob)
}

pub fn ccp_vector(s: &SampleTrace) -> Result<ScoreVector> {
    Ok(ScoreVector {
        sample_id: s.sample_id.clone(),
        values: s.tokens.iter().map(ccp).collect::<Result<_>>()?,
        method: ScoreMethod::Ccp,
    })
}

/// Incremental mean; exact for constant inputs.
pub(crate) fn running_mean(values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .fold(0.0, |m, (i, &x)| m + (x - m) / (i + 1) as f64)
}

pub fn aggregate_values(values: &[f64], mode: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(match mode {
        Aggregation::Sum => values.iter().sum(),
        Aggregation::Mean => running_mean(values),
        Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn aggregate(v: &ScoreVector, mode: Aggregation) -> Result<f64> {
    aggregate_values(&v.values, mode)
}
