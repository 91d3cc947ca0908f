//! Language-only token scores and their sequence aggregation.

use vigtuq::eval::{sample_score, Method};
use vigtuq::scores::{aggregate, entropy_vector, nll_vector, token_sar, Aggregation};
use vigtuq::synth::{generate_corpus, SynthConfig};

fn main() -> vigtuq::Result<()> {
    let corpus = generate_corpus(&SynthConfig {
        n_samples: 3,
        seed: 5,
        ..SynthConfig::default()
    })?;
    for s in &corpus.traces {
        let nll = nll_vector(s);
        let ent = entropy_vector(s);
        println!("{} ({} tokens)", s.sample_id, s.len());
        println!("  nll     {:.3?}", nll.values);
        println!("  entropy {:.3?}", ent.values);
        println!("  sar     {:.3?}", token_sar(s)?.values);
        for agg in [Aggregation::Mean, Aggregation::Max, Aggregation::Sum] {
            print!("  {agg}: entropy {:.4}", aggregate(&ent, agg)?);
            for m in [Method::Nll, Method::MaxProb, Method::Ccp, Method::TokenSar] {
                print!(", {m} {:.4}", sample_score(s, m, agg, None)?);
            }
            println!();
        }
    }
    Ok(())
}
