#![allow(dead_code)]

use std::path::Path;

use vigtuq::synth::{generate_corpus, SynthConfig, SyntheticCorpus};
use vigtuq::trace::{
    AttentionLayer, AttentionRecord, LabeledSample, SampleTrace, TokenDistribution, TokenTrace,
};

/// Runs the CLI in-process, returning (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["vigtuq"];
    argv.extend_from_slice(args);
    let code = vigtuq::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

pub fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

pub fn synth(n: usize, rho: f64, seed: u64) -> SyntheticCorpus {
    generate_corpus(&SynthConfig {
        n_samples: n,
        rho,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn incorrect(corpus: &[LabeledSample]) -> Vec<bool> {
    corpus.iter().map(|s| !s.correct).collect()
}

/// A token with a dense with-image distribution, no-image distribution and
/// per-head attention masses at `layer`.
pub fn token(id: u32, probs: &[f64], noimg: &[f64], layer: usize, heads: &[f64]) -> TokenTrace {
    let mut t = TokenTrace::new(id, TokenDistribution::dense(probs));
    t.dist_without_image = Some(TokenDistribution::dense(noimg));
    t.attention = Some(AttentionRecord {
        layers: [(layer, AttentionLayer::HeadMasses(heads.to_vec()))].into(),
    });
    t
}

pub fn sample(id: &str, tokens: Vec<TokenTrace>) -> SampleTrace {
    let mut s = SampleTrace::new(id, 8, tokens);
    s.dataset_id = "fixture".into();
    s.model_id = "fixture-model".into();
    s
}
