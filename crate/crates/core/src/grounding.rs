//! Per-token visual grounding weights: the distribution shift caused by
//! removing the image (Jensen-Shannon divergence) and the attention mass the
//! decoder places on visual positions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scores::normalize_weights;
use crate::trace::{AttentionLayer, SampleTrace, TokenDistribution, TokenTrace};

/// Per-outcome JSD contribution `½[p ln(2p/(p+q)) + q ln(2q/(p+q))]`.
/// Symmetric in its arguments bit-for-bit.
fn jsd_term(p: f64, q: f64) -> f64 {
    let m = 0.5 * (p + q);
    let part = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
    0.5 * (part(p) + part(q))
}

/// Jensen-Shannon divergence in nats over the union of both supports.
///
/// A token listed in only one distribution has probability zero in the other;
/// the two tail masses are treated as a single shared residual outcome.
pub fn jsd(p: &TokenDistribution, q: &TokenDistribution) -> f64 {
    let mut joint: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for &(id, pr) in &p.entries {
        joint.entry(id).or_default().0 += pr;
    }
    for &(id, pr) in &q.entries {
        joint.entry(id).or_default().1 += pr;
    }
    let body: f64 = joint.values().map(|&(a, b)| jsd_term(a, b)).sum();
    (body + jsd_term(p.tail_mass, q.tail_mass)).clamp(0.0, std::f64::consts::LN_2)
}

/// Raw divergence `d_t` per token and its normalization over the sample.
pub fn jsd_weights(s: &SampleTrace) -> Result<(Vec<f64>, Vec<f64>)> {
    let raw = s
        .tokens
        .iter()
        .map(|t| {
            t.dist_without_image
                .as_ref()
                .map(|q| jsd(&t.dist_with_image, q))
                .ok_or_else(|| Error::MissingChannel("dist_noimg".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = normalize_weights(&raw);
    Ok((raw, norm))
}

/// Head-averaged attention mass on visual positions at one layer.
pub fn visual_attention_mass(t: &TokenTrace, layer: usize) -> Result<f64> {
    let record = t
        .attention
        .as_ref()
        .and_then(|a| a.layer(layer))
        .ok_or_else(|| Error::MissingChannel(format!("attn[{layer}]")))?;
    let heads = record.head_count();
    if heads == 0 {
        return Err(Error::MissingChannel(format!("attn[{layer}]")));
    }
    let total: f64 = match record {
        AttentionLayer::HeadMasses(m) => m.iter().sum(),
        AttentionLayer::HeadRows(rows) => rows.iter().map(|r| r.iter().sum::<f64>()).sum(),
    };
    Ok(total / heads as f64)
}

/// Raw attention mass `a_t` per token at `layer` and its normalization.
pub fn attention_weights(s: &SampleTrace, layer: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let raw = s
        .tokens
        .iter()
        .map(|t| visual_attention_mass(t, layer))
        .collect::<Result<Vec<_>>>()?;
    let norm = normalize_weights(&raw);
    Ok((raw, norm))
}

/// Both grounding signals for one sample, computed for whichever channels
/// were requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundingWeights {
    pub sample_id: String,
    pub jsd_raw: Option<Vec<f64>>,
    pub jsd_norm: Option<Vec<f64>>,
    pub attn_raw: Option<BTreeMap<usize, Vec<f64>>>,
    pub attn_norm: Option<BTreeMap<usize, Vec<f64>>>,
}

impl GroundingWeights {
    pub fn compute(s: &SampleTrace, with_jsd: bool, layers: &[usize]) -> Result<Self> {
        let mut w = GroundingWeights {
            sample_id: s.sample_id.clone(),
            ..Default::default()
        };
        if with_jsd {
            let (raw, norm) = jsd_weights(s)?;
            w.jsd_raw = Some(raw);
            w.jsd_norm = Some(norm);
        }
        if !layers.is_empty() {
            let mut raw_map = BTreeMap::new();
            let mut norm_map = BTreeMap::new();
            for &l in layers {
                let (raw, norm) = attention_weights(s, l)?;
                raw_map.insert(l, raw);
                norm_map.insert(l, norm);
            }
            w.attn_raw = Some(raw_map);
            w.attn_norm = Some(norm_map);
        }
        Ok(w)
    }
}
