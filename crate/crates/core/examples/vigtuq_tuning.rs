//! Tune (alpha_jsd, alpha_attn, layer) on part of a corpus and compare the
//! tuned score with plain entropy on the rest.

use vigtuq::eval::{benchmark, BenchmarkOptions, Method};
use vigtuq::scores::Aggregation;
use vigtuq::synth::{generate_corpus, SynthConfig};
use vigtuq::vigtuq::{grid_search, Grid, TunedConfigRecord};

fn main() -> vigtuq::Result<()> {
    let rho = std::env::args()
        .nth(1)
        .map_or(0.9, |r| r.parse().expect("rho"));
    let corpus = generate_corpus(&SynthConfig {
        n_samples: 2000,
        rho,
        seed: 7,
        ..SynthConfig::default()
    })?;
    let labeled = corpus.labeled();
    let (train, test) = labeled.split_at(labeled.len() / 4);

    let grid = Grid::for_corpus(train, 5);
    println!("grid: {} configurations", grid.configs().len());
    let tuned = grid_search(train, &grid)?;
    println!(
        "{}",
        TunedConfigRecord::new("synth-lvlm", "synth", &tuned).to_json()
    );

    let report = benchmark(
        test,
        &[
            Method::Entropy,
            Method::VigTuq,
            Method::VigTuqA,
            Method::VigTuqJsd,
        ],
        &BenchmarkOptions::new(Aggregation::Mean, Some(tuned.config)),
    )?;
    for row in &report.rows {
        println!(
            "{:<11} auroc {:.4}  ece {:.4}",
            row.method, row.auroc, row.ece
        );
    }
    Ok(())
}
