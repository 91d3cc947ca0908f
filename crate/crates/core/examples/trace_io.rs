//! Build a trace by hand, validate it, and round-trip it through JSON lines.

use vigtuq::trace::{
    load_corpus, to_line, validate_sample, write_corpus, Alternative, AlternativeSet,
    AttentionLayer, AttentionRecord, NliLabel, SampleTrace, TokenDistribution, TokenTrace,
};

fn main() -> vigtuq::Result<()> {
    let mut tok = TokenTrace::new(2, TokenDistribution::dense(&[0.1, 0.2, 0.7]));
    tok.token_text = "cat".into();
    tok.dist_without_image = Some(TokenDistribution::dense(&[0.3, 0.4, 0.3]));
    tok.attention = Some(AttentionRecord {
        layers: [(0, AttentionLayer::HeadMasses(vec![0.4, 0.6]))].into(),
    });
    tok.alternatives = Some(AlternativeSet {
        alternatives: vec![
            Alternative {
                token_id: 2,
                probability: 0.7,
                label: NliLabel::Entail,
            },
            Alternative {
                token_id: 1,
                probability: 0.2,
                label: NliLabel::Contradict,
            },
        ],
    });
    tok.sar_similarity = Some(0.25);

    let mut sample = SampleTrace::new("demo-0", 2, vec![tok]);
    sample.dataset_id = "demo".into();
    sample.model_id = "toy".into();
    println!("{}", to_line(&sample));
    println!("violations: {:?}", validate_sample(&sample));

    // a broken copy: chosen probability disagrees with the distribution
    let mut broken = sample.clone();
    broken.sample_id = "demo-1".into();
    broken.tokens[0].chosen_probability = 0.5;
    for v in validate_sample(&broken) {
        println!("demo-1: {v}");
    }

    let dir = std::env::temp_dir().join("vigtuq-trace-io");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("traces.jsonl");
    write_corpus(&path, &[sample.clone()])?;
    assert_eq!(load_corpus(&path)?, vec![sample]);
    println!("round trip ok: {}", path.display());

    write_corpus(&path, &[broken])?;
    match load_corpus(&path) {
        Err(e) => println!("load rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
