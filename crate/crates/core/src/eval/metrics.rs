//! AUROC and expected calibration error.

use crate::error::{Error, Result};

/// Area under the ROC curve where `positive[i]` marks an incorrect answer and
/// higher scores should rank positives first. Ties count one half.
///
/// Computed from mid-ranks, which gives the same value as counting concordant
/// pairs directly.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch(scores.len(), positive.len()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count();
        pos_rank_sum += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Maps uncertainty scores onto confidences in [0, 1] by inverted min-max
/// normalization. A constant score vector maps to confidence 1 everywhere.
pub fn scores_to_confidence(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![1.0; scores.len()];
    }
    scores
        .iter()
        .map(|s| (1.0 - (s - lo) / span).clamp(0.0, 1.0))
        .collect()
}

/// ECE over equal-width confidence bins; the last bin is right-closed.
pub fn ece_from_confidence(confidence: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidence.len() != correct.len() {
        return Err(Error::LengthMismatch(confidence.len(), correct.len()));
    }
    if confidence.is_empty() {
        return Err(Error::EmptyScores);
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        hits[b] += usize::from(ok);
        conf_sum[b] += c;
    }
    let n = confidence.len() as f64;
    let ece = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum::<f64>();
    Ok(ece.clamp(0.0, 1.0))
}

pub fn ece(scores: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    ece_from_confidence(&scores_to_confidence(scores), correct, bins)
}
