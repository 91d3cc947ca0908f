//! The visually grounded token uncertainty score and its hyperparameter search.
//!
//! For a sample with token entropies `H_t`, normalized divergence weights
//! `S_jsd_t` and normalized attention weights `S_attn_t` at a chosen layer,
//!
//! ```text
//! score = Σ_t (α_jsd · S_jsd_t + α_attn · S_attn_t) · H_t
//! ```
//!
//! The coefficients are small non-negative integers tuned jointly with the
//! attention layer by exhaustive AUROC search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::auroc;
use crate::grounding::{attention_weights, jsd_weights};
use crate::scores::{running_mean, token_entropy};
use crate::trace::{LabeledSample, SampleTrace};

pub const DEFAULT_ALPHA_MAX: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VigTuqConfig {
    pub alpha_jsd: u32,
    pub alpha_attn: u32,
    pub layer: usize,
}

impl VigTuqConfig {
    pub fn new(alpha_jsd: u32, alpha_attn: u32, layer: usize) -> Result<Self> {
        if alpha_jsd == 0 && alpha_attn == 0 {
            return Err(Error::InvalidConfig(
                "alpha_jsd and alpha_attn cannot both be zero".into(),
            ));
        }
        Ok(VigTuqConfig {
            alpha_jsd,
            alpha_attn,
            layer,
        })
    }

    /// Same layer, attention weighting only.
    pub fn attention_only(self) -> Self {
        VigTuqConfig {
            alpha_jsd: 0,
            alpha_attn: 1,
            layer: self.layer,
        }
    }

    /// Same layer, divergence weighting only.
    pub fn jsd_only(self) -> Self {
        VigTuqConfig {
            alpha_jsd: 1,
            alpha_attn: 0,
            layer: self.layer,
        }
    }

    fn tie_key(&self) -> (u32, u32, usize) {
        (self.alpha_jsd + self.alpha_attn, self.alpha_jsd, self.layer)
    }
}

/// Token entropies and normalized grounding weights for one sample, computed
/// once and reused across configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleParts {
    pub entropies: Vec<f64>,
    pub s_jsd: Option<Vec<f64>>,
    pub s_attn: BTreeMap<usize, Vec<f64>>,
}

impl SampleParts {
    /// Computes the requested channels, failing on any that is missing.
    pub fn compute(s: &SampleTrace, with_jsd: bool, layers: &[usize]) -> Result<Self> {
        let s_jsd = if with_jsd {
            Some(jsd_weights(s)?.1)
        } else {
            None
        };
        let s_attn = layers
            .iter()
            .map(|&l| attention_weights(s, l).map(|(_, norm)| (l, norm)))
            .collect::<Result<_>>()?;
        Ok(SampleParts {
            entropies: entropies(s),
            s_jsd,
            s_attn,
        })
    }

    /// Computes every channel that is present on all tokens, skipping the rest.
    pub fn compute_available(s: &SampleTrace, layers: &[usize]) -> Self {
        SampleParts {
            entropies: entropies(s),
            s_jsd: jsd_weights(s).ok().map(|(_, n)| n),
            s_attn: layers
                .iter()
                .filter_map(|&l| attention_weights(s, l).ok().map(|(_, n)| (l, n)))
                .collect(),
        }
    }

    /// Score under `c`, or `None` when a channel with a non-zero coefficient
    /// is absent.
    ///
    /// The common factor of the two coefficients is applied last, so integer
    /// multiples of a coefficient pair rank samples identically.
    pub fn score(&self, c: &VigTuqConfig) -> Option<f64> {
        let g = gcd(c.alpha_jsd, c.alpha_attn).max(1);
        let (a_jsd, a_attn) = (c.alpha_jsd / g, c.alpha_attn / g);
        let mut total = 0.0;
        if a_jsd > 0 {
            total += f64::from(a_jsd) * grounded_entropy(self.s_jsd.as_ref()?, &self.entropies);
        }
        if a_attn > 0 {
            total +=
                f64::from(a_attn) * grounded_entropy(self.s_attn.get(&c.layer)?, &self.entropies);
        }
        Some(f64::from(g) * total.max(0.0))
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn entropies(s: &SampleTrace) -> Vec<f64> {
    s.tokens
        .iter()
        .map(|t| token_entropy(&t.dist_with_image))
        .collect()
}

/// `Σ w_t H_t` for normalized weights. Equal weights are exactly `1/T`, in
/// which case the sum is the mean entropy.
fn grounded_entropy(weights: &[f64], entropies: &[f64]) -> f64 {
    if weights.windows(2).all(|w| w[0] == w[1]) {
        return running_mean(entropies);
    }
    weights.iter().zip(entropies).map(|(w, h)| w * h).sum()
}

/// Per-token contributions `(α_jsd·S_jsd_t + α_attn·S_attn_t)·H_t`.
pub fn vigtuq_token_values(s: &SampleTrace, c: &VigTuqConfig) -> Result<Vec<f64>> {
    let parts = required_parts(s, c)?;
    let t = parts.entropies.len();
    let jsd = parts.s_jsd.clone().unwrap_or_else(|| vec![0.0; t]);
    let attn = parts
        .s_attn
        .get(&c.layer)
        .cloned()
        .unwrap_or_else(|| vec![0.0; t]);
    Ok((0..t)
        .map(|i| {
            (f64::from(c.alpha_jsd) * jsd[i] + f64::from(c.alpha_attn) * attn[i])
                * parts.entropies[i]
        })
        .collect())
}

fn required_parts(s: &SampleTrace, c: &VigTuqConfig) -> Result<SampleParts> {
    let layers: &[usize] = if c.alpha_attn > 0 {
        std::slice::from_ref(&c.layer)
    } else {
        &[]
    };
    SampleParts::compute(s, c.alpha_jsd > 0, layers)
}

pub fn vigtuq_score(s: &SampleTrace, c: &VigTuqConfig) -> Result<f64> {
    let parts = required_parts(s, c)?;
    Ok(parts
        .score(c)
        .expect("required channels were computed above"))
}

/// The configurations a grid search visits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub alphas: Vec<(u32, u32)>,
    pub layers: Vec<usize>,
}

impl Grid {
    /// All `(α_jsd, α_attn) ∈ {0..alpha_max}²` except `(0, 0)`.
    pub fn alpha_pairs(alpha_max: u32) -> Vec<(u32, u32)> {
        (0..=alpha_max)
            .flat_map(|a| (0..=alpha_max).map(move |b| (a, b)))
            .filter(|&p| p != (0, 0))
            .collect()
    }

    /// Default grid: `{0..alpha_max}²` without `(0, 0)`, over every attention
    /// layer recorded in the corpus.
    pub fn for_corpus(corpus: &[LabeledSample], alpha_max: u32) -> Self {
        let mut layers: Vec<usize> = corpus
            .iter()
            .flat_map(|s| s.trace.attention_layers())
            .collect();
        layers.sort_unstable();
        layers.dedup();
        Grid {
            alphas: Self::alpha_pairs(alpha_max),
            layers,
        }
    }

    pub fn configs(&self) -> Vec<VigTuqConfig> {
        let layers: &[usize] = if self.layers.is_empty() {
            &[0]
        } else {
            &self.layers
        };
        self.alphas
            .iter()
            .flat_map(|&(a, b)| {
                layers.iter().map(move |&l| VigTuqConfig {
                    alpha_jsd: a,
                    alpha_attn: b,
                    layer: l,
                })
            })
            .filter(|c| c.alpha_jsd + c.alpha_attn > 0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneResult {
    pub config: VigTuqConfig,
    pub train_auroc: f64,
    pub train_size: usize,
}

/// Orders candidates best first: higher AUROC, then smaller α sum, smaller
/// α_jsd, smaller layer.
pub fn candidate_order(a: &(VigTuqConfig, f64), b: &(VigTuqConfig, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.tie_key().cmp(&b.0.tie_key()))
}

/// Exhaustive AUROC maximization over `grid` (positives are incorrect answers).
pub fn grid_search(train: &[LabeledSample], grid: &Grid) -> Result<TuneResult> {
    if train.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    let incorrect: Vec<bool> = train.iter().map(|s| !s.correct).collect();
    if incorrect.iter().all(|&x| x) || incorrect.iter().all(|&x| !x) {
        return Err(Error::DegenerateLabels);
    }

    let parts: Vec<SampleParts> = train
        .par_iter()
        .map(|s| SampleParts::compute_available(&s.trace, &grid.layers))
        .collect();

    let evaluated: Vec<(VigTuqConfig, f64)> = grid
        .configs()
        .into_par_iter()
        .filter_map(|c| {
            let scores: Option<Vec<f64>> = parts.iter().map(|p| p.score(&c)).collect();
            let auc = auroc(&scores?, &incorrect).ok()?;
            Some((c, auc))
        })
        .collect();

    let best = evaluated
        .into_iter()
        .min_by(candidate_order)
        .ok_or_else(|| {
            Error::NoEvaluableConfig("required channels are missing for every grid point".into())
        })?;
    Ok(TuneResult {
        config: best.0,
        train_auroc: best.1,
        train_size: train.len(),
    })
}

/// Serialized tuning outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedConfigRecord {
    pub model_id: String,
    pub dataset_id: String,
    pub alpha_jsd: u32,
    pub alpha_attn: u32,
    pub layer: usize,
    pub train_auroc: f64,
    pub train_size: usize,
}

impl TunedConfigRecord {
    pub fn new(model_id: &str, dataset_id: &str, result: &TuneResult) -> Self {
        TunedConfigRecord {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            alpha_jsd: result.config.alpha_jsd,
            alpha_attn: result.config.alpha_attn,
            layer: result.config.layer,
            train_auroc: result.train_auroc,
            train_size: result.train_size,
        }
    }

    pub fn config(&self) -> Result<VigTuqConfig> {
        VigTuqConfig::new(self.alpha_jsd, self.alpha_attn, self.layer)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text.trim()).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{AttentionLayer, AttentionRecord, TokenDistribution, TokenTrace};

    fn token(probs: &[f64], noimg: Option<&[f64]>, attn: Option<(usize, f64)>) -> TokenTrace {
        let mut t = TokenTrace::new(0, TokenDistribution::dense(probs));
        t.dist_without_image = noimg.map(TokenDistribution::dense);
        t.attention = attn.map(|(l, m)| {
            let mut r = AttentionRecord::default();
            r.layers.insert(l, AttentionLayer::HeadMasses(vec![m, m]));
            r
        });
        t
    }

    fn parts(jsd: &[f64], attn: &[f64], h: &[f64]) -> SampleParts {
        SampleParts {
            entropies: h.to_vec(),
            s_jsd: Some(jsd.to_vec()),
            s_attn: [(0, attn.to_vec())].into_iter().collect(),
        }
    }

    #[test]
    fn zero_alphas_rejected() {
        assert!(VigTuqConfig::new(0, 0, 0).is_err());
    }

    #[test]
    fn hand_expanded_two_token_case() {
        let p = parts(&[0.25, 0.75], &[0.5, 0.5], &[1.0, 2.0]);
        let c = VigTuqConfig::new(1, 2, 0).unwrap();
        assert!((p.score(&c).unwrap() - 4.75).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_reduces_to_mean_entropy() {
        let probs = [[0.7, 0.2, 0.1], [0.4, 0.4, 0.2], [0.1, 0.1, 0.8]];
        let tokens = probs
            .iter()
            .map(|p| token(p, None, Some((1, 0.3))))
            .collect();
        let s = SampleTrace::new("s", 2, tokens);
        let c = VigTuqConfig::new(0, 1, 1).unwrap();
        let h: Vec<f64> = s
            .tokens
            .iter()
            .map(|t| token_entropy(&t.dist_with_image))
            .collect();
        assert_eq!(vigtuq_score(&s, &c).unwrap(), running_mean(&h));
    }

    #[test]
    fn single_token_jsd_only_is_token_entropy() {
        let s = SampleTrace::new("s", 1, vec![token(&[0.6, 0.4], Some(&[0.2, 0.8]), None)]);
        let c = VigTuqConfig::new(1, 0, 0).unwrap();
        assert_eq!(
            vigtuq_score(&s, &c).unwrap(),
            token_entropy(&s.tokens[0].dist_with_image)
        );
    }

    #[test]
    fn missing_channels_fail_only_when_weighted() {
        let s = SampleTrace::new("s", 1, vec![token(&[0.6, 0.4], None, Some((0, 0.2)))]);
        assert!(matches!(
            vigtuq_score(&s, &VigTuqConfig::new(1, 1, 0).unwrap()),
            Err(Error::MissingChannel(c)) if c == "dist_noimg"
        ));
        assert!(vigtuq_score(&s, &VigTuqConfig::new(0, 3, 0).unwrap()).is_ok());
        assert!(matches!(
            vigtuq_score(&s, &VigTuqConfig::new(0, 1, 2).unwrap()),
            Err(Error::MissingChannel(c)) if c == "attn[2]"
        ));
    }

    #[test]
    fn token_values_sum_to_score() {
        let tokens = vec![
            token(&[0.6, 0.4], Some(&[0.2, 0.8]), Some((0, 0.1))),
            token(&[0.9, 0.1], Some(&[0.85, 0.15]), Some((0, 0.4))),
        ];
        let s = SampleTrace::new("s", 1, tokens);
        let c = VigTuqConfig::new(2, 3, 0).unwrap();
        let sum: f64 = vigtuq_token_values(&s, &c).unwrap().iter().sum();
        assert!((sum - vigtuq_score(&s, &c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn default_grid_has_35_alpha_pairs() {
        let pairs = Grid::alpha_pairs(DEFAULT_ALPHA_MAX);
        assert_eq!(pairs.len(), 35);
        assert!(!pairs.contains(&(0, 0)));
    }

    #[test]
    fn tie_break_prefers_simpler_configs() {
        let mk = |a, b, l| {
            (
                VigTuqConfig {
                    alpha_jsd: a,
                    alpha_attn: b,
                    layer: l,
                },
                0.7,
            )
        };
        let mut v = [
            mk(2, 2, 0),
            mk(1, 3, 0),
            mk(0, 4, 5),
            mk(1, 1, 3),
            mk(1, 1, 2),
            mk(0, 2, 9),
        ];
        v.sort_by(candidate_order);
        let order: Vec<_> = v
            .iter()
            .map(|(c, _)| (c.alpha_jsd, c.alpha_attn, c.layer))
            .collect();
        assert_eq!(
            order,
            vec![
                (0, 2, 9),
                (1, 1, 2),
                (1, 1, 3),
                (0, 4, 5),
                (1, 3, 0),
                (2, 2, 0)
            ]
        );
    }

    #[test]
    fn tuned_record_round_trips_reported_row() {
        let rec = TunedConfigRecord {
            model_id: "Qwen2.5-VL-3B".into(),
            dataset_id: "OKVQA".into(),
            alpha_jsd: 1,
            alpha_attn: 4,
            layer: 7,
            train_auroc: 0.664,
            train_size: 1000,
        };
        let back = TunedConfigRecord::from_json(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.config().unwrap(), VigTuqConfig::new(1, 4, 7).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn linear_in_alphas(
            a in 0u32..6, b in 0u32..6, c in 0u32..6, d in 0u32..6,
            w in proptest::collection::vec(0.01f64..1.0, 2..12)
        ) {
            proptest::prop_assume!(a + b > 0 && c + d > 0);
            let n = w.len();
            let total: f64 = w.iter().sum();
            let jsd: Vec<f64> = w.iter().map(|x| x / total).collect();
            let attn: Vec<f64> = w.iter().rev().map(|x| x / total).collect();
            let h: Vec<f64> = (0..n).map(|i| 0.1 + i as f64 * 0.3).collect();
            let p = parts(&jsd, &attn, &h);
            let cfg = |x, y| VigTuqConfig { alpha_jsd: x, alpha_attn: y, layer: 0 };
            let lhs = p.score(&cfg(a + c, b + d)).unwrap();
            let rhs = p.score(&cfg(a, b)).unwrap() + p.score(&cfg(c, d)).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
