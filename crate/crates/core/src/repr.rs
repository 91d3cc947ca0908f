//! Layer-wise representation analyses: cosine distance between the last-token
//! hidden states with and without the image, group-wise gap summaries, and
//! linear CKA against reference vision-encoder features.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::benchmark::{sample_score, Method};
use crate::scores::Aggregation;
use crate::trace::{HiddenProfile, LabeledSample, ReferenceFeatures, SampleTrace};
use crate::vigtuq::VigTuqConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub sample_id: String,
    pub distances: Vec<f64>,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `1 - cos(u, v)`, or `None` if either vector has zero norm.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Option<f64> {
    let (uu, vv) = (dot(u, u), dot(v, v));
    if uu == 0.0 || vv == 0.0 {
        return None;
    }
    // sqrt of the product keeps u == v exact: sqrt(fl(d * d)) == d
    Some((1.0 - dot(u, v) / (uu * vv).sqrt()).clamp(0.0, 2.0))
}

pub fn cosine_profile(s: &SampleTrace) -> Result<LayerProfile> {
    let hidden = s
        .hidden
        .as_ref()
        .ok_or_else(|| Error::MissingChannel("hidden".into()))?;
    let distances = hidden
        .layers
        .iter()
        .map(|(&layer, h)| {
            cosine_distance(&h.with_image, &h.without_image).ok_or_else(|| {
                Error::DegenerateHidden {
                    sample_id: s.sample_id.clone(),
                    layer,
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok(LayerProfile {
        sample_id: s.sample_id.clone(),
        distances,
    })
}

pub const PROFILE_CSV_HEADER: &str = "sample_id,layer,distance";

pub fn profiles_to_csv(profiles: &[LayerProfile]) -> String {
    let mut out = format!("{PROFILE_CSV_HEADER}\n");
    for p in profiles {
        for (layer, d) in p.distances.iter().enumerate() {
            out.push_str(&format!("{},{layer},{d}\n", p.sample_id));
        }
    }
    out
}

/// How samples are split into the two compared groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grouping {
    /// Group A: correct answers; group B: incorrect.
    Correctness,
    /// Median split on an uncertainty score. Group A: the lower (certain) half.
    Certainty {
        method: Method,
        agg: Aggregation,
        config: Option<VigTuqConfig>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingKind {
    Correctness,
    Certainty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub grouping: GroupingKind,
    pub layer_star: usize,
    pub gap: f64,
    pub group_means_at_star: (f64, f64),
    pub normalized_pair: (f64, f64),
    pub group_sizes: (usize, usize),
    pub full_curves: (Vec<f64>, Vec<f64>),
}

impl GapSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("gap summary serialization is infallible")
    }
}

fn mean_curve(profiles: &[&LayerProfile]) -> Vec<f64> {
    let layers = profiles[0].distances.len();
    let n = profiles.len() as f64;
    (0..layers)
        .map(|l| profiles.iter().map(|p| p.distances[l]).sum::<f64>() / n)
        .collect()
}

/// Locates the layer where the two group-mean distance curves differ most.
pub fn gap_from_curves(
    grouping: GroupingKind,
    a: Vec<f64>,
    b: Vec<f64>,
    sizes: (usize, usize),
) -> GapSummary {
    let mut layer_star = 0;
    let mut best = f64::NEG_INFINITY;
    for (l, (x, y)) in a.iter().zip(&b).enumerate() {
        let g = (x - y).abs();
        if g > best {
            best = g;
            layer_star = l;
        }
    }
    let (x, y) = (a[layer_star], b[layer_star]);
    let top = x.max(y);
    let normalized_pair = if top > 0.0 {
        (x / top, y / top)
    } else {
        (1.0, 1.0)
    };
    GapSummary {
        grouping,
        layer_star,
        gap: best,
        group_means_at_star: (x, y),
        normalized_pair,
        group_sizes: sizes,
        full_curves: (a, b),
    }
}

pub fn group_gap(corpus: &[LabeledSample], grouping: Grouping) -> Result<GapSummary> {
    let profiles = corpus
        .iter()
        .map(|s| cosine_profile(&s.trace))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = profiles.first() {
        if let Some(bad) = profiles
            .iter()
            .find(|p| p.distances.len() != first.distances.len())
        {
            return Err(Error::InvalidConfig(format!(
                "sample `{}` has {} hidden layers, expected {}",
                bad.sample_id,
                bad.distances.len(),
                first.distances.len()
            )));
        }
    }

    let in_group_a: Vec<bool> = match grouping {
        Grouping::Correctness => corpus.iter().map(|s| s.correct).collect(),
        Grouping::Certainty {
            method,
            agg,
            config,
        } => {
            let scores = corpus
                .iter()
                .map(|s| sample_score(&s.trace, method, agg, config.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
            let mut certain = vec![false; scores.len()];
            for &i in &order[..scores.len() / 2] {
                certain[i] = true;
            }
            certain
        }
    };
    let (a, b): (Vec<_>, Vec<_>) = profiles
        .iter()
        .zip(&in_group_a)
        .partition(|(_, &in_a)| in_a);
    let a: Vec<&LayerProfile> = a.into_iter().map(|(p, _)| p).collect();
    let b: Vec<&LayerProfile> = b.into_iter().map(|(p, _)| p).collect();
    let kind = match grouping {
        Grouping::Correctness => GroupingKind::Correctness,
        Grouping::Certainty { .. } => GroupingKind::Certainty,
    };
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGroup(format!(
            "{kind:?} split yields groups of size {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sizes = (a.len(), b.len());
    Ok(gap_from_curves(kind, mean_curve(&a), mean_curve(&b), sizes))
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// Linear centered kernel alignment between two row-aligned feature matrices.
pub fn linear_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::DegenerateFeatures(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::DegenerateFeatures("need at least two rows".into()));
    }
    let (xc, yc) = (center_columns(x), center_columns(y));
    let xx = (xc.transpose() * &xc).norm();
    let yy = (yc.transpose() * &yc).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::DegenerateFeatures("zero variance input".into()));
    }
    let cross = (yc.transpose() * &xc).norm_squared();
    Ok(cross / (xx * yy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenPass {
    WithImage,
    WithoutImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPoint {
    pub depth: f64,
    pub cka: f64,
}

/// CKA between stacked per-layer hidden states and the reference features,
/// with layer `i` reported at depth `i / (layers - 1)`.
pub fn cka_depth_curve(
    corpus: &[SampleTrace],
    reference: &ReferenceFeatures,
    pass: HiddenPass,
) -> Result<Vec<DepthPoint>> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::DegenerateFeatures("empty corpus".into()))?;
    let layers = hidden_of(first)?.layers.len();
    let dim = hidden_of(first)?
        .layers
        .values()
        .next()
        .map_or(0, |h| h.with_image.len());
    let ref_dim = reference
        .dimension()
        .ok_or_else(|| Error::DegenerateFeatures("empty reference features".into()))?;

    let mut refs = Vec::with_capacity(corpus.len() * ref_dim);
    for s in corpus {
        let h = hidden_of(s)?;
        if s.layer_count != first.layer_count || h.layers.len() != layers {
            return Err(Error::InvalidConfig(format!(
                "sample `{}` does not share the corpus layer count",
                s.sample_id
            )));
        }
        if h.layers.values().any(|l| l.with_image.len() != dim) {
            return Err(Error::InvalidConfig(format!(
                "sample `{}` does not share hidden dimension {dim}",
                s.sample_id
            )));
        }
        let r = reference
            .get(&s.sample_id)
            .ok_or_else(|| Error::MissingReference(s.sample_id.clone()))?;
        refs.extend_from_slice(r);
    }
    let y = DMatrix::from_row_slice(corpus.len(), ref_dim, &refs);

    (0..layers)
        .map(|i| {
            let mut rows = Vec::with_capacity(corpus.len() * dim);
            for s in corpus {
                let h = &hidden_of(s)?.layers[&i];
                rows.extend_from_slice(match pass {
                    HiddenPass::WithImage => &h.with_image,
                    HiddenPass::WithoutImage => &h.without_image,
                });
            }
            let x = DMatrix::from_row_slice(corpus.len(), dim, &rows);
            let depth = if layers > 1 {
                i as f64 / (layers - 1) as f64
            } else {
                0.0
            };
            Ok(DepthPoint {
                depth,
                cka: linear_cka(&x, &y)?,
            })
        })
        .collect()
}

fn hidden_of(s: &SampleTrace) -> Result<&HiddenProfile> {
    s.hidden
        .as_ref()
        .ok_or_else(|| Error::MissingChannel("hidden".into()))
}

pub const CKA_CSV_HEADER: &str = "depth,cka";

pub fn depth_curve_to_csv(points: &[DepthPoint]) -> String {
    let mut out = format!("{CKA_CSV_HEADER}\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.depth, p.cka));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{HiddenLayer, TokenDistribution, TokenTrace};

    fn sample_with_hidden(id: &str, pairs: &[(Vec<f64>, Vec<f64>)]) -> SampleTrace {
        let mut s = SampleTrace::new(
            id,
            pairs.len(),
            vec![TokenTrace::new(0, TokenDistribution::one_hot(0))],
        );
        let mut h = HiddenProfile::default();
        for (l, (u, v)) in pairs.iter().enumerate() {
            h.layers.insert(
                l,
                HiddenLayer {
                    with_image: u.clone(),
                    without_image: v.clone(),
                },
            );
        }
        s.hidden = Some(h);
        s
    }

    #[test]
    fn cosine_cases() {
        let same = sample_with_hidden(
            "a",
            &[
                (vec![1.0, 2.0], vec![1.0, 2.0]),
                (vec![3.0, -1.0], vec![3.0, -1.0]),
            ],
        );
        assert!(cosine_profile(&same)
            .unwrap()
            .distances
            .iter()
            .all(|&d| d.abs() < 1e-15));
        let orth = sample_with_hidden("b", &[(vec![1.0, 0.0], vec![0.0, 1.0])]);
        assert_eq!(cosine_profile(&orth).unwrap().distances, vec![1.0]);
        let diag = sample_with_hidden("c", &[(vec![1.0, 0.0], vec![1.0, 1.0])]);
        assert!((cosine_profile(&diag).unwrap().distances[0] - 0.2928932).abs() < 1e-7);
    }

    #[test]
    fn cosine_errors() {
        let zero = sample_with_hidden("z", &[(vec![0.0, 0.0], vec![1.0, 1.0])]);
        assert!(matches!(
            cosine_profile(&zero),
            Err(Error::DegenerateHidden { layer: 0, .. })
        ));
        let mut none = zero.clone();
        none.hidden = None;
        assert!(matches!(cosine_profile(&none), Err(Error::MissingChannel(c)) if c == "hidden"));
    }

    #[test]
    fn planted_gap_layer_recovered() {
        let a = vec![0.3, 0.3, 0.3, 0.8, 0.3];
        let b = vec![0.3, 0.3, 0.3, 0.2, 0.3];
        let g = gap_from_curves(GroupingKind::Correctness, a, b, (1, 1));
        assert_eq!(g.layer_star, 3);
        assert_eq!(g.normalized_pair, (1.0, 0.25));
    }

    #[test]
    fn identical_groups_give_zero_gap() {
        let c = vec![0.4, 0.5, 0.6];
        let g = gap_from_curves(GroupingKind::Certainty, c.clone(), c, (2, 2));
        assert_eq!(
            (g.layer_star, g.gap, g.normalized_pair),
            (0, 0.0, (1.0, 1.0))
        );
    }

    #[test]
    fn cka_closed_form_square_case() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let y = x.columns(0, 1).into_owned();
        // ||Y'X||² = 4, ||X'X|| = 2√2, ||Y'Y|| = 2
        assert!((linear_cka(&x, &y).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_rejects_constant_features() {
        let x = DMatrix::from_element(5, 3, 2.0);
        let y = DMatrix::from_fn(5, 2, |i, j| (i * 3 + j) as f64);
        assert!(matches!(
            linear_cka(&x, &y),
            Err(Error::DegenerateFeatures(_))
        ));
    }

    #[test]
    fn depth_grid_and_self_reference() {
        let corpus: Vec<SampleTrace> = (0..6)
            .map(|i| {
                let pairs: Vec<_> = (0..5)
                    .map(|l| {
                        let v = vec![
                            (i * (l + 1)) as f64 % 7.0 + 0.5,
                            ((i + l) * 3 % 5) as f64 - 1.0,
                        ];
                        (v.clone(), v)
                    })
                    .collect();
                let mut s = sample_with_hidden(&format!("s{i}"), &pairs);
                s.layer_count = 4;
                s
            })
            .collect();
        let reference = ReferenceFeatures {
            features: corpus
                .iter()
                .map(|s| {
                    (
                        s.sample_id.clone(),
                        s.hidden.as_ref().unwrap().layers[&0].with_image.clone(),
                    )
                })
                .collect(),
        };
        let curve = cka_depth_curve(&corpus, &reference, HiddenPass::WithImage).unwrap();
        let depths: Vec<f64> = curve.iter().map(|p| p.depth).collect();
        assert_eq!(depths, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((curve[0].cka - 1.0).abs() < 1e-12);

        let mut partial = reference.clone();
        partial.features.remove("s3");
        assert!(matches!(
            cka_depth_curve(&corpus, &partial, HiddenPass::WithImage),
            Err(Error::MissingReference(id)) if id == "s3"
        ));
    }

    proptest::proptest! {
        #[test]
        fn cosine_scale_invariant(
            u in proptest::collection::vec(-5.0f64..5.0, 3), v in proptest::collection::vec(-5.0f64..5.0, 3),
            c in 0.01f64..100.0
        ) {
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            if let (Some(a), Some(b)) = (cosine_distance(&u, &v), cosine_distance(&scaled, &v)) {
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn gap_symmetric_under_swap(
            a in proptest::collection::vec(0.0f64..2.0, 1..10), shift in proptest::collection::vec(-0.5f64..0.5, 10)
        ) {
            let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| (x + s).clamp(0.0, 2.0)).collect();
            let ab = gap_from_curves(GroupingKind::Correctness, a.clone(), b.clone(), (1, 1));
            let ba = gap_from_curves(GroupingKind::Correctness, b, a, (1, 1));
            proptest::prop_assert_eq!(ab.layer_star, ba.layer_star);
            let ones = [ab.normalized_pair.0, ab.normalized_pair.1].iter().filter(|&&v| v == 1.0).count();
            proptest::prop_assert!(ones == 1 || (ones == 2 && ab.gap == 0.0) || ab.group_means_at_star.0 == ab.group_means_at_star.1);
        }
    }
}
