//! Trace data model, line-delimited file formats, ingestion and validation.
//!
//! A trace file holds one JSON object per line, each describing a single
//! generated answer: the per-token next-token distributions with and without
//! the image, optional per-layer visual attention, optional last-token hidden
//! states for both passes, and the NLI/similarity side channels consumed by
//! the CCP and Token-SAR baselines.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Absolute tolerance on probability-mass sums and channel agreement checks.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// A next-token distribution, possibly truncated to its top entries with the
/// remaining probability carried explicitly in `tail_mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub entries: Vec<(u32, f64)>,
    #[serde(rename = "tail")]
    pub tail_mass: f64,
    #[serde(rename = "full")]
    pub is_full: bool,
}

impl TokenDistribution {
    /// A full distribution over token ids `0..probs.len()`.
    pub fn dense(probs: &[f64]) -> Self {
        TokenDistribution {
            entries: probs
                .iter()
                .enumerate()
                .map(|(id, &p)| (id as u32, p))
                .collect(),
            tail_mass: 0.0,
            is_full: true,
        }
    }

    pub fn one_hot(token_id: u32) -> Self {
        TokenDistribution {
            entries: vec![(token_id, 1.0)],
            tail_mass: 0.0,
            is_full: true,
        }
    }

    pub fn probability_of(&self, token_id: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|(id, _)| *id == token_id)
            .map(|&(_, p)| p)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum::<f64>() + self.tail_mass
    }

    fn check(&self, field: &str, out: &mut Vec<Violation>) {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (i, &(id, p)) in self.entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                out.push(Violation::new(
                    format!("{field}.entries[{i}]"),
                    format!("probability {p} outside [0, 1]"),
                ));
            }
            if !seen.insert(id) {
                out.push(Violation::new(
                    format!("{field}.entries[{i}]"),
                    format!("duplicate token id {id}"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.tail_mass) {
            out.push(Violation::new(
                format!("{field}.tail"),
                format!("tail mass {} outside [0, 1]", self.tail_mass),
            ));
        }
        let mass = self.total_mass();
        if !((1.0 - MASS_TOLERANCE)..=(1.0 + MASS_TOLERANCE)).contains(&mass) {
            out.push(Violation::new(
                field.to_string(),
                format!("probability mass {mass} differs from 1 by more than {MASS_TOLERANCE}"),
            ));
        }
        if self.is_full && self.tail_mass > MASS_TOLERANCE {
            out.push(Violation::new(
                format!("{field}.full"),
                format!("full distribution carries tail mass {}", self.tail_mass),
            ));
        }
    }
}

/// Per-layer visual attention for one generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionLayer {
    /// Per-head attention mass already summed over visual positions.
    HeadMasses(Vec<f64>),
    /// Per-head attention weights over each visual position.
    HeadRows(Vec<Vec<f64>>),
}

impl AttentionLayer {
    pub fn head_count(&self) -> usize {
        match self {
            AttentionLayer::HeadMasses(m) => m.len(),
            AttentionLayer::HeadRows(r) => r.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttentionRecord {
    pub layers: BTreeMap<usize, AttentionLayer>,
}

impl AttentionRecord {
    pub fn layer(&self, layer: usize) -> Option<&AttentionLayer> {
        self.layers.get(&layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entail,
    Contradict,
    Neutral,
}

/// One top-K alternative token with its NLI judgment against the generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, NliLabel)", into = "(u32, f64, NliLabel)")]
pub struct Alternative {
    pub token_id: u32,
    pub probability: f64,
    pub label: NliLabel,
}

impl From<(u32, f64, NliLabel)> for Alternative {
    fn from((token_id, probability, label): (u32, f64, NliLabel)) -> Self {
        Alternative {
            token_id,
            probability,
            label,
        }
    }
}

impl From<Alternative> for (u32, f64, NliLabel) {
    fn from(a: Alternative) -> Self {
        (a.token_id, a.probability, a.label)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlternativeSet {
    pub alternatives: Vec<Alternative>,
}

impl AlternativeSet {
    pub fn k(&self) -> usize {
        self.alternatives.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    pub token_id: u32,
    pub token_text: String,
    #[serde(rename = "p_chosen")]
    pub chosen_probability: f64,
    #[serde(rename = "dist_img")]
    pub dist_with_image: TokenDistribution,
    #[serde(
        rename = "dist_noimg",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub dist_without_image: Option<TokenDistribution>,
    #[serde(rename = "attn", default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionRecord>,
    #[serde(rename = "alts", default, skip_serializing_if = "Option::is_none")]
    pub alternatives: Option<AlternativeSet>,
    #[serde(rename = "sar_g", default, skip_serializing_if = "Option::is_none")]
    pub sar_similarity: Option<f64>,
}

impl TokenTrace {
    /// A token with only the with-image distribution; the chosen probability
    /// is read from the distribution (0 when the token is not listed).
    pub fn new(token_id: u32, dist_with_image: TokenDistribution) -> Self {
        let chosen_probability = dist_with_image.probability_of(token_id).unwrap_or(0.0);
        TokenTrace {
            token_id,
            token_text: String::new(),
            chosen_probability,
            dist_with_image,
            dist_without_image: None,
            attention: None,
            alternatives: None,
            sar_similarity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    #[serde(rename = "img")]
    pub with_image: Vec<f64>,
    #[serde(rename = "noimg")]
    pub without_image: Vec<f64>,
}

/// Last-token hidden states per layer, for the passes with and without the image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HiddenProfile {
    pub layers: BTreeMap<usize, HiddenLayer>,
}

/// How the no-image pass removed the visual input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoImageMode {
    Drop,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub schema_version: u32,
    pub sample_id: String,
    pub dataset_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noimg_mode: Option<NoImageMode>,
    pub layer_count: usize,
    pub tokens: Vec<TokenTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenProfile>,
}

impl SampleTrace {
    pub fn new(sample_id: impl Into<String>, layer_count: usize, tokens: Vec<TokenTrace>) -> Self {
        SampleTrace {
            schema_version: SCHEMA_VERSION,
            sample_id: sample_id.into(),
            dataset_id: String::new(),
            model_id: String::new(),
            question: None,
            noimg_mode: None,
            layer_count,
            tokens,
            hidden: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sorted set of attention layers recorded on any token.
    pub fn attention_layers(&self) -> Vec<usize> {
        let mut layers: Vec<usize> = self
            .tokens
            .iter()
            .filter_map(|t| t.attention.as_ref())
            .flat_map(|a| a.layers.keys().copied())
            .collect();
        layers.sort_unstable();
        layers.dedup();
        layers
    }
}

/// A single invariant violation, addressed by field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every data-model invariant of a sample. An empty list means valid.
pub fn validate_sample(s: &SampleTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.schema_version != SCHEMA_VERSION {
        out.push(Violation::new(
            "schema_version",
            format!("unsupported schema_version {}", s.schema_version),
        ));
    }
    if s.tokens.is_empty() {
        out.push(Violation::new("tokens", "empty token sequence"));
    }
    for (t, tok) in s.tokens.iter().enumerate() {
        validate_token(s, t, tok, &mut out);
    }
    if let Some(hidden) = &s.hidden {
        validate_hidden(hidden, &mut out);
    }
    out
}

fn validate_token(s: &SampleTrace, t: usize, tok: &TokenTrace, out: &mut Vec<Violation>) {
    let prefix = format!("tokens[{t}]");
    tok.dist_with_image
        .check(&format!("{prefix}.dist_img"), out);
    if let Some(d) = &tok.dist_without_image {
        d.check(&format!("{prefix}.dist_noimg"), out);
    }

    let p = tok.chosen_probability;
    if !(0.0..=1.0).contains(&p) {
        out.push(Violation::new(
            format!("{prefix}.p_chosen"),
            format!("probability {p} outside [0, 1]"),
        ));
    }
    if let Some(listed) = tok.dist_with_image.probability_of(tok.token_id) {
        if (listed - p).abs() > MASS_TOLERANCE {
            out.push(Violation::new(
                format!("{prefix}.p_chosen"),
                format!("chosen probability mismatch: p_chosen {p} vs dist_img entry {listed}"),
            ));
        }
    }

    if let Some(attn) = &tok.attention {
        for (&layer, record) in &attn.layers {
            let field = format!("{prefix}.attn[{layer}]");
            if layer >= s.layer_count {
                out.push(Violation::new(
                    &field,
                    format!("attention layer {layer} >= layer_count {}", s.layer_count),
                ));
            }
            if record.head_count() == 0 {
                out.push(Violation::new(&field, "no attention heads"));
            }
            match record {
                AttentionLayer::HeadMasses(masses) => {
                    if masses.iter().any(|m| !(0.0..=1.0).contains(m)) {
                        out.push(Violation::new(&field, "head mass outside [0, 1]"));
                    }
                }
                AttentionLayer::HeadRows(rows) => {
                    if rows.iter().flatten().any(|w| !(0.0..=1.0).contains(w)) {
                        out.push(Violation::new(&field, "attention weight outside [0, 1]"));
                    }
                    if let Some(first) = rows.first() {
                        if rows.iter().any(|r| r.len() != first.len()) {
                            out.push(Violation::new(
                                &field,
                                "head rows differ in visual-position count",
                            ));
                        }
                    }
                }
            }
        }
    }

    if let Some(alts) = &tok.alternatives {
        let field = format!("{prefix}.alts");
        if alts
            .alternatives
            .iter()
            .any(|a| !(0.0..=1.0).contains(&a.probability))
        {
            out.push(Violation::new(
                &field,
                "alternative probability outside [0, 1]",
            ));
        }
        let chosen_entails = alts
            .alternatives
            .iter()
            .any(|a| a.token_id == tok.token_id && a.label == NliLabel::Entail);
        if !chosen_entails {
            out.push(Violation::new(
                &field,
                "chosen token missing from alternatives or not labeled entail",
            ));
        }
    }

    if let Some(g) = tok.sar_similarity {
        if !(-1.0..=1.0).contains(&g) {
            out.push(Violation::new(
                format!("{prefix}.sar_g"),
                format!("similarity {g} outside [-1, 1]"),
            ));
        }
    }
}

fn validate_hidden(hidden: &HiddenProfile, out: &mut Vec<Violation>) {
    for (expected, (&layer, h)) in hidden.layers.iter().enumerate() {
        let field = format!("hidden[{layer}]");
        if layer != expected {
            out.push(Violation::new(
                &field,
                format!("layer indices not contiguous from 0 (expected {expected})"),
            ));
        }
        if h.with_image.is_empty() || h.with_image.len() != h.without_image.len() {
            out.push(Violation::new(
                &field,
                format!(
                    "hidden dimension mismatch: img {} vs noimg {}",
                    h.with_image.len(),
                    h.without_image.len()
                ),
            ));
        }
        if h.with_image
            .iter()
            .chain(&h.without_image)
            .any(|x| !x.is_finite())
        {
            out.push(Violation::new(&field, "non-finite hidden value"));
        }
    }
}

/// One line of a trace file that parsed but has not been validated.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub line: usize,
    pub sample: SampleTrace,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses one trace line, checking the schema version before decoding fields.
pub fn parse_record(line: usize, text: &str) -> Result<SampleTrace> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let version = value
        .get("schema_version")
        .ok_or_else(|| Error::Parse {
            line,
            message: "missing field `schema_version`".into(),
        })?
        .as_u64()
        .ok_or_else(|| Error::Parse {
            line,
            message: "field `schema_version` is not an integer".into(),
        })?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            line,
            found: version.min(u64::from(u32::MAX)) as u32,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

/// Reads and parses every record without validating it.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(line, l)| parse_record(line, l).map(|sample| RawRecord { line, sample }))
        .collect()
}

/// Loads a trace file, rejecting the first record that fails validation.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<SampleTrace>> {
    let records = read_records(path)?;
    let first_invalid = records
        .par_iter()
        .map(|r| (r.line, validate_sample(&r.sample)))
        .filter(|(_, v)| !v.is_empty())
        .min_by_key(|(line, _)| *line);
    if let Some((line, violations)) = first_invalid {
        let sample_id = records
            .iter()
            .find(|r| r.line == line)
            .map(|r| r.sample.sample_id.clone())
            .unwrap_or_default();
        return Err(Error::Invalid {
            line,
            sample_id,
            violations,
        });
    }
    Ok(records.into_iter().map(|r| r.sample).collect())
}

/// Canonical single-line serialization of a sample.
pub fn to_line(sample: &SampleTrace) -> String {
    serde_json::to_string(sample).expect("trace serialization is infallible")
}

fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<()> {
    let mut buf = Vec::new();
    for l in lines {
        buf.extend_from_slice(l.as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[SampleTrace]) -> Result<()> {
    write_lines(path.as_ref(), corpus.iter().map(to_line))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: BTreeMap<String, bool>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    sample_id: String,
    correct: bool,
}

impl LabelSet {
    pub fn get(&self, sample_id: &str) -> Option<bool> {
        self.labels.get(sample_id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl FromIterator<(String, bool)> for LabelSet {
    fn from_iter<I: IntoIterator<Item = (String, bool)>>(iter: I) -> Self {
        LabelSet {
            labels: iter.into_iter().collect(),
        }
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut labels = BTreeMap::new();
    for (line, l) in content_lines(&text) {
        let rec: LabelRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if labels.insert(rec.sample_id.clone(), rec.correct).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate sample_id `{}`", rec.sample_id),
            });
        }
    }
    Ok(LabelSet { labels })
}

/// Writes labels in the given sample order.
pub fn write_labels(
    path: impl AsRef<Path>,
    order: &[SampleTrace],
    labels: &LabelSet,
) -> Result<()> {
    let lines = order.iter().filter_map(|s| {
        labels.get(&s.sample_id).map(|correct| {
            serde_json::to_string(&LabelRecord {
                sample_id: s.sample_id.clone(),
                correct,
            })
            .expect("label serialization is infallible")
        })
    });
    write_lines(path.as_ref(), lines)
}

/// Reference vision-encoder features keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceFeatures {
    pub features: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ReferenceRecord {
    sample_id: String,
    vec: Vec<f64>,
}

impl ReferenceFeatures {
    pub fn get(&self, sample_id: &str) -> Option<&[f64]> {
        self.features.get(sample_id).map(Vec::as_slice)
    }

    pub fn dimension(&self) -> Option<usize> {
        self.features.values().next().map(Vec::len)
    }
}

pub fn load_reference_features(path: impl AsRef<Path>) -> Result<ReferenceFeatures> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut features = BTreeMap::new();
    let mut dim = None;
    for (line, l) in content_lines(&text) {
        let rec: ReferenceRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        match dim {
            None => dim = Some(rec.vec.len()),
            Some(d) if d != rec.vec.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("field `vec` has dimension {} (expected {d})", rec.vec.len()),
                })
            }
            _ => {}
        }
        if features.insert(rec.sample_id.clone(), rec.vec).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate sample_id `{}`", rec.sample_id),
            });
        }
    }
    Ok(ReferenceFeatures { features })
}

pub fn write_reference_features(
    path: impl AsRef<Path>,
    order: &[SampleTrace],
    refs: &ReferenceFeatures,
) -> Result<()> {
    let lines = order.iter().filter_map(|s| {
        refs.get(&s.sample_id).map(|v| {
            serde_json::to_string(&ReferenceRecord {
                sample_id: s.sample_id.clone(),
                vec: v.to_vec(),
            })
            .expect("reference serialization is infallible")
        })
    });
    write_lines(path.as_ref(), lines)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub trace: SampleTrace,
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct JoinedCorpus {
    pub samples: Vec<LabeledSample>,
    /// Samples present in the corpus but absent from the label set.
    pub dropped: usize,
}

/// Pairs each sample with its correctness label, keeping corpus order.
pub fn join_labels(corpus: Vec<SampleTrace>, labels: &LabelSet) -> Result<JoinedCorpus> {
    let total = corpus.len();
    let samples: Vec<LabeledSample> = corpus
        .into_iter()
        .filter_map(|trace| {
            labels
                .get(&trace.sample_id)
                .map(|correct| LabeledSample { trace, correct })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    Ok(JoinedCorpus {
        dropped: total - samples.len(),
        samples,
    })
}
