//! Deterministic synthetic traces with planted relationships between visual
//! grounding, token entropy, correctness and hidden-state geometry.
//!
//! Each token is either a *key* token (carries the answer) or filler. Key-token
//! entropy depends on the label: low for correct samples, high for incorrect
//! ones. Filler entropy is label independent, which dilutes the signal seen by
//! plain entropy averaging. With strength `rho`, key tokens receive elevated
//! divergence `d_t` and attention mass at the planted layer while filler
//! tokens receive depressed values, so grounding-weighted entropy recovers the
//! key-token signal. At `rho = 0` grounding is a small label-independent
//! jitter around a constant. Attention at every other layer is heavy
//! label-independent noise.
//!
//! Hidden states are correlated with the reference features up to the planted
//! layer and fade linearly to pure noise at the last layer; the with/without
//! image cosine distance at the planted layer is larger for correct samples.

use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::jsd;
use crate::rng::keyed_rng;
use crate::trace::{
    self, Alternative, AlternativeSet, AttentionLayer, AttentionRecord, HiddenLayer, HiddenProfile,
    LabelSet, NliLabel, NoImageMode, ReferenceFeatures, SampleTrace, TokenDistribution, TokenTrace,
    SCHEMA_VERSION,
};

const CH_SAMPLE: u64 = 1;
const CH_TOKEN: u64 = 2;
const CH_HIDDEN: u64 = 3;

/// Baseline grounding levels before jitter and planted modulation.
const BASE_JSD: f64 = 0.15;
const BASE_ATTN: f64 = 0.25;
/// Jitter present at every rho, in log space.
const BASE_JITTER: f64 = 0.05;
/// Planted key-vs-filler shift in log space, scaled by rho.
const PLANTED_SHIFT: f64 = 0.9;
/// Channel-specific noise on the planted signal, scaled by rho.
const PLANTED_NOISE: f64 = 0.7;
/// Log-space spread of attention at non-planted layers.
const OFF_LAYER_NOISE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub vocab_size: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub p_correct: f64,
    pub rho: f64,
    pub entropy_lo: f64,
    pub entropy_hi: f64,
    pub seed: u64,
    /// Probability that a token is answer-bearing.
    pub key_fraction: f64,
    /// Fraction of samples whose answer does not depend on the image at all.
    pub p_image_invariant: f64,
    pub dataset_id: String,
    pub model_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 1000,
            vocab_size: 16,
            t_min: 3,
            t_max: 12,
            n_layers: 8,
            n_heads: 4,
            hidden_dim: 16,
            p_correct: 0.6,
            rho: 0.9,
            entropy_lo: 0.1,
            entropy_hi: 2.2,
            seed: 0,
            key_fraction: 0.3,
            p_image_invariant: 0.02,
            dataset_id: "synth".into(),
            model_id: "synth-lvlm".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_samples < 1 {
            return fail("n_samples must be >= 1".into());
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be >= 2".into());
        }
        if self.t_min < 1 || self.t_min > self.t_max {
            return fail(format!(
                "need 1 <= t_min <= t_max (got {}..{})",
                self.t_min, self.t_max
            ));
        }
        if self.n_layers < 1 || self.n_heads < 1 || self.hidden_dim < 1 {
            return fail("n_layers, n_heads and hidden_dim must be >= 1".into());
        }
        if !(self.p_correct > 0.0 && self.p_correct < 1.0) {
            return fail(format!("p_correct {} outside (0, 1)", self.p_correct));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho {} outside [0, 1]", self.rho));
        }
        if !(0.0 <= self.entropy_lo && self.entropy_lo < self.entropy_hi) {
            return fail("need 0 <= entropy_lo < entropy_hi".into());
        }
        if self.entropy_hi >= (self.vocab_size as f64).ln() {
            return fail(format!(
                "entropy_hi {} not below ln(vocab_size) = {}",
                self.entropy_hi,
                (self.vocab_size as f64).ln()
            ));
        }
        if !(0.0..=1.0).contains(&self.key_fraction)
            || !(0.0..=1.0).contains(&self.p_image_invariant)
        {
            return fail("key_fraction and p_image_invariant must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// The layer carrying the attention and hidden-state signal.
    pub fn planted_layer(&self) -> usize {
        self.n_layers / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub planted_layer: usize,
    pub engine_version: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub traces: Vec<SampleTrace>,
    pub labels: LabelSet,
    pub references: ReferenceFeatures,
    pub meta: SynthMeta,
}

impl SyntheticCorpus {
    pub fn labeled(&self) -> Vec<trace::LabeledSample> {
        trace::join_labels(self.traces.clone(), &self.labels)
            .expect("generator labels every sample")
            .samples
    }

    /// Writes `traces.jsonl`, `labels.jsonl`, `refs.jsonl` and `synth_meta.json`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        trace::write_corpus(dir.join("traces.jsonl"), &self.traces)?;
        trace::write_labels(dir.join("labels.jsonl"), &self.traces, &self.labels)?;
        trace::write_reference_features(dir.join("refs.jsonl"), &self.traces, &self.references)?;
        let meta_path = dir.join("synth_meta.json");
        let mut meta =
            serde_json::to_string_pretty(&self.meta).expect("meta serialization is infallible");
        meta.push('\n');
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }
}

pub fn sample_id(index: usize) -> String {
    format!("synth-{index:06}")
}

pub fn generate_corpus(c: &SynthConfig) -> Result<SyntheticCorpus> {
    c.validate()?;
    let generated: Vec<(SampleTrace, bool, Vec<f64>)> = (0..c.n_samples)
        .into_par_iter()
        .map(|i| generate_sample(c, i))
        .collect();

    let mut traces = Vec::with_capacity(generated.len());
    let mut labels = LabelSet::default();
    let mut references = ReferenceFeatures::default();
    for (t, correct, r) in generated {
        labels.labels.insert(t.sample_id.clone(), correct);
        references.features.insert(t.sample_id.clone(), r);
        traces.push(t);
    }
    Ok(SyntheticCorpus {
        traces,
        labels,
        references,
        meta: SynthMeta {
            config: c.clone(),
            planted_layer: c.planted_layer(),
            engine_version: crate::VERSION.to_string(),
        },
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Probabilities `∝ exp(-beta · rank)` over `n` ranks.
fn rank_softmax(n: usize, beta: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|r| (-beta * r as f64).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn dense_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Rank-softmax distribution whose entropy matches `target` (bisection on beta).
fn distribution_with_entropy(n: usize, target: f64) -> Vec<f64> {
    let (mut lo, mut hi) = (0.0f64, 60.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if dense_entropy(&rank_softmax(n, mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    rank_softmax(n, 0.5 * (lo + hi))
}

fn mix(p: &[f64], target_id: usize, lambda: f64) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(j, &x)| (1.0 - lambda) * x + if j == target_id { lambda } else { 0.0 })
        .collect()
}

/// No-image distribution: `p` shifted toward a one-hot on `target_id` until the
/// divergence from `p` reaches `target_jsd` (or the shift saturates).
fn shifted_distribution(p: &[f64], target_id: usize, target_jsd: f64) -> Vec<f64> {
    let base = TokenDistribution::dense(p);
    let div = |lambda: f64| jsd(&base, &TokenDistribution::dense(&mix(p, target_id, lambda)));
    if div(1.0) <= target_jsd {
        return mix(p, target_id, 1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if div(mid) < target_jsd {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mix(p, target_id, 0.5 * (lo + hi))
}

/// Rounds probabilities to a fixed grid and renormalizes so stored traces
/// are compact; the sum stays within float error of 1.
fn quantize(p: &[f64]) -> Vec<f64> {
    let q: Vec<f64> = p.iter().map(|x| (x * 1e9).round() / 1e9).collect();
    let s: f64 = q.iter().sum();
    q.into_iter().map(|x| x / s).collect()
}

fn permuted(p: &[f64], perm: &[u32]) -> TokenDistribution {
    TokenDistribution {
        entries: perm.iter().zip(p).map(|(&id, &pr)| (id, pr)).collect(),
        tail_mass: 0.0,
        is_full: true,
    }
}

fn planted_level(base: f64, rng: &mut ChaCha8Rng, rho: f64, is_key: bool) -> f64 {
    let direction = if is_key { 1.0 } else { -1.0 };
    let log =
        BASE_JITTER * normal(rng) + rho * (PLANTED_SHIFT * direction + PLANTED_NOISE * normal(rng));
    base * log.exp()
}

fn head_masses(rng: &mut ChaCha8Rng, mean: f64, heads: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..heads).map(|_| rng.gen_range(0.8..1.2)).collect();
    let s: f64 = raw.iter().sum::<f64>() / heads as f64;
    raw.into_iter()
        .map(|r| (mean * r / s).clamp(0.0, 1.0))
        .collect()
}

fn generate_sample(c: &SynthConfig, index: usize) -> (SampleTrace, bool, Vec<f64>) {
    let mut rng = keyed_rng(c.seed, index as u64, 0, CH_SAMPLE);
    let correct = rng.gen_bool(c.p_correct);
    let t_len = rng.gen_range(c.t_min..=c.t_max);
    let invariant = rng.gen_bool(c.p_image_invariant);
    let forced_key = rng.gen_range(0..t_len);
    let planted = c.planted_layer();
    let v = c.vocab_size;

    let tokens = (0..t_len)
        .map(|t| {
            let mut rng = keyed_rng(c.seed, index as u64, t as u64 + 1, CH_TOKEN);
            let is_key = t == forced_key || rng.gen_bool(c.key_fraction);
            let u: f64 = rng.gen();
            let q = match (is_key, correct) {
                (true, true) => 0.75 * u,
                (true, false) => 0.25 + 0.75 * u,
                (false, _) => u,
            };
            let target_h = c.entropy_lo + (c.entropy_hi - c.entropy_lo) * q;
            let probs = distribution_with_entropy(v, target_h);

            let mut perm: Vec<u32> = (0..v as u32).collect();
            for i in (1..v).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let dist_img = permuted(&quantize(&probs), &perm);
            let token_id = perm[0];

            let d_target = planted_level(BASE_JSD, &mut rng, c.rho, is_key).min(0.95 * LN_2);
            let dist_noimg = if invariant {
                dist_img.clone()
            } else {
                permuted(
                    &quantize(&shifted_distribution(&probs, v - 1, d_target)),
                    &perm,
                )
            };

            let mut attn = AttentionRecord::default();
            for layer in 0..c.n_layers {
                let mass = if layer == planted {
                    if invariant {
                        0.0
                    } else {
                        planted_level(BASE_ATTN, &mut rng, c.rho, is_key).min(1.0)
                    }
                } else {
                    (BASE_ATTN * (OFF_LAYER_NOISE * normal(&mut rng)).exp()).min(1.0)
                };
                attn.layers.insert(
                    layer,
                    AttentionLayer::HeadMasses(head_masses(&mut rng, mass, c.n_heads)),
                );
            }

            let mut alternatives = vec![Alternative {
                token_id,
                probability: dist_img.entries[0].1,
                label: NliLabel::Entail,
            }];
            for &(id, p) in dist_img.entries.iter().skip(1).take(3) {
                let label = match rng.gen_range(0..10) {
                    0..=3 => NliLabel::Entail,
                    4..=6 => NliLabel::Contradict,
                    _ => NliLabel::Neutral,
                };
                alternatives.push(Alternative {
                    token_id: id,
                    probability: p,
                    label,
                });
            }

            TokenTrace {
                token_id,
                token_text: format!("tok{token_id}"),
                chosen_probability: dist_img.entries[0].1,
                dist_with_image: dist_img,
                dist_without_image: Some(dist_noimg),
                attention: Some(attn),
                alternatives: Some(AlternativeSet { alternatives }),
                sar_similarity: Some((rng.gen_range(-1.0..=1.0f64) * 1e6).round() / 1e6),
            }
        })
        .collect();

    let (hidden, reference) = generate_hidden(c, index, correct);
    let trace = SampleTrace {
        schema_version: SCHEMA_VERSION,
        sample_id: sample_id(index),
        dataset_id: c.dataset_id.clone(),
        model_id: c.model_id.clone(),
        question: None,
        noimg_mode: Some(NoImageMode::Drop),
        layer_count: c.n_layers,
        tokens,
        hidden: Some(hidden),
    };
    (trace, correct, reference)
}

fn generate_hidden(c: &SynthConfig, index: usize, correct: bool) -> (HiddenProfile, Vec<f64>) {
    let mut rng = keyed_rng(c.seed, index as u64, 0, CH_HIDDEN);
    let d = c.hidden_dim;
    let planted = c.planted_layer();
    let last = c.n_layers;
    let round = |x: f64| (x * 1e6).round() / 1e6;
    let reference: Vec<f64> = (0..d).map(|_| round(normal(&mut rng))).collect();

    let mut profile = HiddenProfile::default();
    for layer in 0..=last {
        let weight = if layer <= planted {
            0.9
        } else {
            0.9 * (last - layer) as f64 / (last - planted) as f64
        };
        let img: Vec<f64> = reference
            .iter()
            .map(|&r| round(weight.sqrt() * r + (1.0 - weight).sqrt() * normal(&mut rng)))
            .collect();
        let spread = if layer == planted && correct {
            1.0
        } else {
            0.5
        };
        let scale = spread * (0.2 * normal(&mut rng)).exp();
        let noimg = img
            .iter()
            .map(|&x| round(x + scale * normal(&mut rng)))
            .collect();
        profile.layers.insert(
            layer,
            HiddenLayer {
                with_image: img,
                without_image: noimg,
            },
        );
    }
    (profile, reference)
}
