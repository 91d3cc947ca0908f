//! AUROC/ECE for every method over a labeled corpus, as CSV.
//!
//! cargo run --release --example evaluation -- [traces.jsonl labels.jsonl]

use vigtuq::eval::{benchmark, BenchmarkOptions, Method};
use vigtuq::scores::Aggregation;
use vigtuq::synth::{generate_corpus, SynthConfig};
use vigtuq::trace::{join_labels, load_corpus, load_labels, LabeledSample};
use vigtuq::vigtuq::VigTuqConfig;

fn corpus() -> vigtuq::Result<Vec<LabeledSample>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [traces, labels] = args.as_slice() {
        return Ok(join_labels(load_corpus(traces)?, &load_labels(labels)?)?.samples);
    }
    Ok(generate_corpus(&SynthConfig::default())?.labeled())
}

fn main() -> vigtuq::Result<()> {
    let labeled = corpus()?;
    let config = VigTuqConfig::new(1, 1, 4)?;
    for agg in [Aggregation::Mean, Aggregation::Sum] {
        let report = benchmark(
            &labeled,
            &Method::ALL,
            &BenchmarkOptions::new(agg, Some(config)),
        )?;
        print!("{}", report.to_csv());
    }
    Ok(())
}
