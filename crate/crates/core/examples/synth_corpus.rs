//! Generate a synthetic corpus and write it to a directory.
//!
//! cargo run --release --example synth_corpus -- /tmp/vigtuq-synth [rho] [seed]

use vigtuq::synth::{generate_corpus, SynthConfig};

fn main() -> vigtuq::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synth-out".into());
    let rho = args.next().map_or(0.9, |r| r.parse().expect("rho"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));

    let config = SynthConfig {
        n_samples: 500,
        rho,
        seed,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&config)?;
    corpus.write_to(&dir)?;

    let correct = corpus.labels.labels.values().filter(|&&c| c).count();
    println!(
        "{} samples ({correct} correct), {} layers, planted layer {} -> {dir}",
        corpus.traces.len(),
        config.n_layers,
        corpus.meta.planted_layer
    );
    Ok(())
}
