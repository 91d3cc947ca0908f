mod common;

use vigtuq::eval::auroc;
use vigtuq::trace::LabeledSample;
use vigtuq::vigtuq::{
    candidate_order, grid_search, vigtuq_score, Grid, TunedConfigRecord, VigTuqConfig,
};
use vigtuq::Error;

use common::{incorrect, synth};

/// Exhaustive search written directly from the selection rule.
fn brute_force(corpus: &[LabeledSample], grid: &Grid) -> (VigTuqConfig, f64) {
    let positive = incorrect(corpus);
    let mut best: Option<(VigTuqConfig, f64)> = None;
    for &(a, b) in &grid.alphas {
        for &l in &grid.layers {
            let c = VigTuqConfig::new(a, b, l).unwrap();
            let scores: Vec<f64> = corpus
                .iter()
                .map(|s| vigtuq_score(&s.trace, &c).unwrap())
                .collect();
            let auc = auroc(&scores, &positive).unwrap();
            let replace = match best {
                None => true,
                Some((bc, bauc)) => {
                    auc > bauc
                        || (auc == bauc
                            && (a + b, a, l)
                                < (bc.alpha_jsd + bc.alpha_attn, bc.alpha_jsd, bc.layer))
                }
            };
            if replace {
                best = Some((c, auc));
            }
        }
    }
    best.unwrap()
}

#[test]
fn small_grid_matches_brute_force() {
    let lab = synth(50, 0.9, 13).labeled();
    let grid = Grid {
        alphas: vec![(1, 0), (0, 1)],
        layers: vec![2, 4],
    };
    assert_eq!(grid.configs().len(), 4);
    let tuned = grid_search(&lab, &grid).unwrap();
    let (config, auc) = brute_force(&lab, &grid);
    assert_eq!(tuned.config, config);
    assert_eq!(tuned.train_auroc, auc);
    assert_eq!(tuned.train_size, 50);
}

#[test]
fn full_grid_matches_brute_force_across_seeds() {
    for seed in [21, 22] {
        let lab = synth(120, 0.6, seed).labeled();
        let grid = Grid::for_corpus(&lab, 5);
        assert_eq!(grid.configs().len(), 35 * 8);
        let tuned = grid_search(&lab, &grid).unwrap();
        let (config, auc) = brute_force(&lab, &grid);
        assert_eq!(
            (tuned.config, tuned.train_auroc),
            (config, auc),
            "seed {seed}"
        );
    }
}

#[test]
fn proportional_coefficients_tie_and_smaller_sum_wins() {
    let lab = synth(80, 0.9, 3).labeled();
    let grid = Grid {
        alphas: vec![(2, 2), (1, 1), (3, 3)],
        layers: vec![4],
    };
    let tuned = grid_search(&lab, &grid).unwrap();
    assert_eq!(tuned.config, VigTuqConfig::new(1, 1, 4).unwrap());
}

#[test]
fn candidate_order_prefers_auroc_then_simplicity() {
    let c = |a, b, l| VigTuqConfig::new(a, b, l).unwrap();
    let mut cands = [
        (c(2, 1, 3), 0.7),
        (c(1, 2, 3), 0.7),
        (c(1, 2, 1), 0.7),
        (c(0, 1, 5), 0.6),
        (c(5, 5, 0), 0.8),
    ];
    cands.sort_by(candidate_order);
    let order: Vec<(u32, u32, usize)> = cands
        .iter()
        .map(|(c, _)| (c.alpha_jsd, c.alpha_attn, c.layer))
        .collect();
    assert_eq!(
        order,
        [(5, 5, 0), (1, 2, 1), (1, 2, 3), (2, 1, 3), (0, 1, 5)]
    );
}

#[test]
fn missing_channels_everywhere_is_an_error() {
    let mut lab = synth(20, 0.9, 3).labeled();
    for s in &mut lab {
        for t in &mut s.trace.tokens {
            t.attention = None;
            t.dist_without_image = None;
        }
    }
    let grid = Grid {
        alphas: Grid::alpha_pairs(2),
        layers: vec![0, 1],
    };
    assert!(matches!(
        grid_search(&lab, &grid),
        Err(Error::NoEvaluableConfig(_))
    ));
}

#[test]
fn jsd_only_configs_survive_missing_attention() {
    let mut lab = synth(40, 0.9, 5).labeled();
    for s in &mut lab {
        for t in &mut s.trace.tokens {
            t.attention = None;
        }
    }
    let grid = Grid {
        alphas: Grid::alpha_pairs(3),
        layers: vec![4],
    };
    let tuned = grid_search(&lab, &grid).unwrap();
    assert_eq!(tuned.config.alpha_attn, 0);
    assert_eq!(tuned.config.alpha_jsd, 1);
}

#[test]
fn record_serializes_coefficients_and_layer() {
    let lab = synth(60, 0.9, 8).labeled();
    let tuned = grid_search(&lab, &Grid::for_corpus(&lab, 2)).unwrap();
    let record = TunedConfigRecord::new("m", "d", &tuned);
    let json: serde_json::Value = serde_json::from_str(&record.to_json()).unwrap();
    for key in [
        "alpha_jsd",
        "alpha_attn",
        "layer",
        "train_auroc",
        "model_id",
        "dataset_id",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(
        TunedConfigRecord::from_json(&record.to_json()).unwrap(),
        record
    );
    assert_eq!(record.config().unwrap(), tuned.config);
}
