//! Top-k% token selection curves for the grounding criteria and random.

use vigtuq::eval::selection::curve_to_csv;
use vigtuq::eval::{token_selection_curve, SelectionCriterion};
use vigtuq::synth::{generate_corpus, SynthConfig};

fn main() -> vigtuq::Result<()> {
    let config = SynthConfig {
        n_samples: 2000,
        seed: 7,
        ..SynthConfig::default()
    };
    let labeled = generate_corpus(&config)?.labeled();
    let ks: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
    let curves = [
        SelectionCriterion::Jsd,
        SelectionCriterion::Attention(config.planted_layer()),
        SelectionCriterion::Attention(1),
        SelectionCriterion::Random(0),
    ]
    .into_iter()
    .map(|c| token_selection_curve(&labeled, c, &ks).map(|points| (c, points)))
    .collect::<vigtuq::Result<Vec<_>>>()?;
    print!("{}", curve_to_csv(&curves));
    Ok(())
}
