//! Per-method AUROC/ECE over a labeled corpus, and the CSV report format.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::metrics::{auroc, ece};
use crate::scores::{
    aggregate, ccp_vector, entropy_vector, max_prob_vector, nll_vector, token_sar, Aggregation,
};
use crate::trace::{LabeledSample, SampleTrace};
use crate::vigtuq::{vigtuq_score, VigTuqConfig};

pub const DEFAULT_ECE_BINS: usize = 10;

/// A sequence-level uncertainty method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nll,
    Entropy,
    #[serde(rename = "maxprob")]
    MaxProb,
    Ccp,
    TokenSar,
    #[serde(rename = "vigtuq")]
    VigTuq,
    #[serde(rename = "vigtuq_a")]
    VigTuqA,
    #[serde(rename = "vigtuq_jsd")]
    VigTuqJsd,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Nll,
        Method::Entropy,
        Method::MaxProb,
        Method::Ccp,
        Method::TokenSar,
        Method::VigTuq,
        Method::VigTuqA,
        Method::VigTuqJsd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nll => "nll",
            Method::Entropy => "entropy",
            Method::MaxProb => "maxprob",
            Method::Ccp => "ccp",
            Method::TokenSar => "token_sar",
            Method::VigTuq => "vigtuq",
            Method::VigTuqA => "vigtuq_a",
            Method::VigTuqJsd => "vigtuq_jsd",
        }
    }

    pub fn needs_config(self) -> bool {
        matches!(self, Method::VigTuq | Method::VigTuqA | Method::VigTuqJsd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method `{s}`")))
    }
}

/// Sequence score of one sample. The VIG-TUQ family already sums weighted
/// token entropies, so `agg` does not apply to it; the `_a` and `_jsd`
/// variants use unit weight on a single channel at the configured layer.
pub fn sample_score(
    s: &SampleTrace,
    method: Method,
    agg: Aggregation,
    config: Option<&VigTuqConfig>,
) -> Result<f64> {
    let cfg = || {
        config
            .copied()
            .ok_or_else(|| Error::Usage(format!("method `{method}` needs a VIG-TUQ configuration")))
    };
    match method {
        Method::Nll => aggregate(&nll_vector(s), agg),
        Method::Entropy => aggregate(&entropy_vector(s), agg),
        Method::MaxProb => aggregate(&max_prob_vector(s), agg),
        Method::Ccp => aggregate(&ccp_vector(s)?, agg),
        Method::TokenSar => aggregate(&token_sar(s)?, agg),
        Method::VigTuq => vigtuq_score(s, &cfg()?),
        Method::VigTuqA => vigtuq_score(s, &cfg()?.attention_only()),
        Method::VigTuqJsd => vigtuq_score(s, &cfg()?.jsd_only()),
    }
}

pub fn score_corpus(
    corpus: &[SampleTrace],
    method: Method,
    agg: Aggregation,
    config: Option<&VigTuqConfig>,
) -> Result<Vec<f64>> {
    corpus
        .par_iter()
        .map(|s| sample_score(s, method, agg, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub agg: String,
    pub auroc: f64,
    pub ece: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportMetadata {
    pub engine_version: String,
    /// SHA-256 over the methods, aggregation, configuration and ECE bins.
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub metadata: ReportMetadata,
}

pub const METRIC_CSV_HEADER: &str = "dataset,model,method,agg,auroc,ece,n";

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }
}

pub fn read_metric_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub aggregation: Aggregation,
    pub config: Option<VigTuqConfig>,
    pub ece_bins: usize,
}

impl BenchmarkOptions {
    pub fn new(aggregation: Aggregation, config: Option<VigTuqConfig>) -> Self {
        BenchmarkOptions {
            aggregation,
            config,
            ece_bins: DEFAULT_ECE_BINS,
        }
    }

    fn digest(&self, methods: &[Method]) -> String {
        let mut h = Sha256::new();
        for m in methods {
            h.update(m.as_str());
            h.update(b",");
        }
        h.update(self.aggregation.as_str());
        if let Some(c) = &self.config {
            h.update(format!("{}/{}/{}", c.alpha_jsd, c.alpha_attn, c.layer));
        }
        h.update(self.ece_bins.to_string());
        hex::encode(h.finalize())
    }
}

/// One row per (dataset, model, method); groups follow first appearance order.
pub fn benchmark(
    corpus: &[LabeledSample],
    methods: &[Method],
    options: &BenchmarkOptions,
) -> Result<MetricReport> {
    if corpus.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    let mut groups: Vec<((String, String), Vec<&LabeledSample>)> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for s in corpus {
        let key = (s.trace.dataset_id.clone(), s.trace.model_id.clone());
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(s);
    }

    let mut rows = Vec::new();
    for ((dataset, model), members) in &groups {
        let correct: Vec<bool> = members.iter().map(|s| s.correct).collect();
        let incorrect: Vec<bool> = correct.iter().map(|c| !c).collect();
        for &method in methods {
            let scores = members
                .par_iter()
                .map(|s| {
                    sample_score(
                        &s.trace,
                        method,
                        options.aggregation,
                        options.config.as_ref(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(MetricRow {
                dataset: dataset.clone(),
                model: model.clone(),
                method: method.to_string(),
                agg: options.aggregation.to_string(),
                auroc: auroc(&scores, &incorrect)?,
                ece: ece(&scores, &correct, options.ece_bins)?,
                n: members.len(),
            });
        }
    }
    Ok(MetricReport {
        rows,
        metadata: ReportMetadata {
            engine_version: crate::VERSION.to_string(),
            config_digest: options.digest(methods),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("se".parse::<Method>().is_err());
    }

    #[test]
    fn csv_header_and_round_trip() {
        let report = MetricReport {
            rows: vec![MetricRow {
                dataset: "okvqa".into(),
                model: "m".into(),
                method: "vigtuq".into(),
                agg: "mean".into(),
                auroc: 0.655,
                ece: 0.104,
                n: 12,
            }],
            metadata: ReportMetadata {
                engine_version: "x".into(),
                config_digest: "y".into(),
            },
        };
        let text = report.to_csv();
        assert!(text.starts_with(METRIC_CSV_HEADER));
        assert_eq!(read_metric_csv(&text).unwrap(), report.rows);
    }

    #[test]
    fn vigtuq_without_config_is_usage_error() {
        let s = SampleTrace::new(
            "s",
            1,
            vec![crate::trace::TokenTrace::new(
                0,
                crate::trace::TokenDistribution::one_hot(0),
            )],
        );
        assert!(matches!(
            sample_score(&s, Method::VigTuq, Aggregation::Mean, None),
            Err(Error::Usage(_))
        ));
        assert_eq!(
            sample_score(&s, Method::Entropy, Aggregation::Mean, None).unwrap(),
            0.0
        );
    }
}
