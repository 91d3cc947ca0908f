//! Hidden-state analyses: with/without-image cosine distance per layer split
//! by correctness and by certainty, and CKA against reference features.

use vigtuq::eval::Method;
use vigtuq::repr::{cka_depth_curve, group_gap, Grouping, HiddenPass};
use vigtuq::scores::Aggregation;
use vigtuq::synth::{generate_corpus, SynthConfig};

fn main() -> vigtuq::Result<()> {
    let corpus = generate_corpus(&SynthConfig {
        n_samples: 1000,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let labeled = corpus.labeled();

    for grouping in [
        Grouping::Correctness,
        Grouping::Certainty {
            method: Method::Entropy,
            agg: Aggregation::Mean,
            config: None,
        },
    ] {
        let g = group_gap(&labeled, grouping)?;
        println!(
            "{:?}: layer* {} gap {:.4} normalized ({:.3}, {:.3}) sizes {:?}",
            g.grouping,
            g.layer_star,
            g.gap,
            g.normalized_pair.0,
            g.normalized_pair.1,
            g.group_sizes
        );
        let (a, b) = &g.full_curves;
        for (l, (x, y)) in a.iter().zip(b).enumerate() {
            println!("  layer {l}: {x:.4} vs {y:.4}");
        }
    }

    println!("depth,cka");
    for p in cka_depth_curve(&corpus.traces, &corpus.references, HiddenPass::WithImage)? {
        println!("{:.3},{:.4}", p.depth, p.cka);
    }
    Ok(())
}
