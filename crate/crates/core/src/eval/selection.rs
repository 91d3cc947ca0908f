//! Token-selection study: keep only the top-k% tokens of each answer under a
//! ranking criterion, sum their entropies, and measure AUROC.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::metrics::auroc;
use crate::grounding::{jsd_weights, visual_attention_mass};
use crate::rng::keyed_rng;
use crate::scores::token_entropy;
use crate::trace::{LabeledSample, SampleTrace};

pub const RANDOM_RUNS: u64 = 10;
const CHANNEL_SELECT: u64 = 0x5e1ec7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionCriterion {
    Jsd,
    Attention(usize),
    Random(u64),
}

impl fmt::Display for SelectionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionCriterion::Jsd => f.write_str("jsd"),
            SelectionCriterion::Attention(l) => write!(f, "attention:{l}"),
            SelectionCriterion::Random(_) => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionPoint {
    pub k: f64,
    pub auroc: f64,
    pub runs: u64,
}

/// Number of tokens kept out of `t` at `k` percent: `⌈k·t/100⌉`, at least 1.
pub fn selection_size(k: f64, t: usize) -> usize {
    let raw = k * t as f64 / 100.0;
    // guard against 0.30000000000000004-style overshoot before ceil
    let m = (raw - 1e-9).ceil().max(1.0) as usize;
    m.min(t)
}

/// Indices of the `m` highest-ranked tokens, ties broken by lower index.
pub fn top_indices(ranking: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ranking.len()).collect();
    idx.sort_by(|&a, &b| ranking[b].total_cmp(&ranking[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

fn ranking_scores(
    s: &SampleTrace,
    sample_index: usize,
    criterion: SelectionCriterion,
) -> Result<Vec<f64>> {
    match criterion {
        SelectionCriterion::Jsd => jsd_weights(s).map(|(raw, _)| raw),
        SelectionCriterion::Attention(layer) => s
            .tokens
            .iter()
            .map(|t| visual_attention_mass(t, layer))
            .collect(),
        SelectionCriterion::Random(seed) => {
            let mut rng = keyed_rng(seed, sample_index as u64, 0, CHANNEL_SELECT);
            Ok(s.tokens.iter().map(|_| rng.gen::<f64>()).collect())
        }
    }
}

struct Prepared {
    entropies: Vec<f64>,
    ranking: Vec<f64>,
}

impl Prepared {
    /// Sum of the selected entropies, taken in token order.
    fn score(&self, k: f64) -> f64 {
        let m = selection_size(k, self.entropies.len());
        top_indices(&self.ranking, m)
            .into_iter()
            .map(|i| self.entropies[i])
            .sum()
    }
}

fn single_run(
    corpus: &[LabeledSample],
    criterion: SelectionCriterion,
    k_grid: &[f64],
) -> Result<Vec<f64>> {
    let prepared = corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Prepared {
                entropies: s
                    .trace
                    .tokens
                    .iter()
                    .map(|t| token_entropy(&t.dist_with_image))
                    .collect(),
                ranking: ranking_scores(&s.trace, i, criterion)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let incorrect: Vec<bool> = corpus.iter().map(|s| !s.correct).collect();
    k_grid
        .iter()
        .map(|&k| {
            let scores: Vec<f64> = prepared.iter().map(|p| p.score(k)).collect();
            auroc(&scores, &incorrect)
        })
        .collect()
}

/// AUROC of top-k% selected entropy sums for each `k` in `k_grid`. The random
/// criterion averages [`RANDOM_RUNS`] runs with seeds `seed..seed+10`.
pub fn token_selection_curve(
    corpus: &[LabeledSample],
    criterion: SelectionCriterion,
    k_grid: &[f64],
) -> Result<Vec<SelectionPoint>> {
    if let Some(bad) = k_grid.iter().find(|&&k| !(k > 0.0 && k <= 100.0)) {
        return Err(Error::InvalidConfig(format!("k = {bad} outside (0, 100]")));
    }
    if corpus.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    let (aurocs, runs) = match criterion {
        SelectionCriterion::Random(seed) => {
            let per_run = (0..RANDOM_RUNS)
                .map(|r| single_run(corpus, SelectionCriterion::Random(seed + r), k_grid))
                .collect::<Result<Vec<_>>>()?;
            let mean = (0..k_grid.len())
                .map(|j| per_run.iter().map(|run| run[j]).sum::<f64>() / RANDOM_RUNS as f64)
                .collect();
            (mean, RANDOM_RUNS)
        }
        _ => (single_run(corpus, criterion, k_grid)?, 1),
    };
    Ok(k_grid
        .iter()
        .zip(aurocs)
        .map(|(&k, auroc)| SelectionPoint { k, auroc, runs })
        .collect())
}

pub const SELECTION_CSV_HEADER: &str = "criterion,k,auroc,runs";

pub fn curve_to_csv(rows: &[(SelectionCriterion, Vec<SelectionPoint>)]) -> String {
    let mut out = String::from(SELECTION_CSV_HEADER);
    out.push('\n');
    for (criterion, points) in rows {
        for p in points {
            out.push_str(&format!("{criterion},{},{},{}\n", p.k, p.auroc, p.runs));
        }
    }
    out
}
