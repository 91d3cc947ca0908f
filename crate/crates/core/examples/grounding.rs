//! Visual grounding weights: divergence between the with- and without-image
//! distributions, and visual attention mass per layer.

use vigtuq::grounding::{attention_weights, jsd, jsd_weights};
use vigtuq::synth::{generate_corpus, SynthConfig};
use vigtuq::trace::TokenDistribution;

fn main() -> vigtuq::Result<()> {
    let p = TokenDistribution::one_hot(0);
    let q = TokenDistribution::one_hot(1);
    println!("JSD(one-hot a, one-hot b) = {:.7} (ln 2)", jsd(&p, &q));

    let config = SynthConfig {
        n_samples: 2,
        t_min: 5,
        t_max: 5,
        seed: 1,
        ..SynthConfig::default()
    };
    let planted = config.planted_layer();
    let corpus = generate_corpus(&config)?;
    for (s, correct) in corpus
        .traces
        .iter()
        .map(|s| (s, corpus.labels.get(&s.sample_id)))
    {
        let (d, s_jsd) = jsd_weights(s)?;
        let (a, s_attn) = attention_weights(s, planted)?;
        println!("{} correct={:?}", s.sample_id, correct.unwrap_or_default());
        println!("  d_t    {d:.3?}");
        println!("  S_JSD  {s_jsd:.3?}");
        println!("  a_t@{planted} {a:.3?}");
        println!("  S_A    {s_attn:.3?}");
        let off = planted + 1;
        println!("  S_A@{off} {:.3?}", attention_weights(s, off)?.1);
    }
    Ok(())
}
