//! Command-line driver. Every command is deterministic for identical inputs,
//! flags and seed; commands writing to `--out` also write a run manifest next
//! to the output.
//!
//! Exit codes: 0 success, 1 domain error, 2 I/O or usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::selection::curve_to_csv;
use crate::eval::{
    benchmark, read_metric_csv, score_corpus, token_selection_curve, BenchmarkOptions, Method,
    MetricRow, SelectionCriterion, METRIC_CSV_HEADER,
};
use crate::repr::{
    cka_depth_curve, cosine_profile, depth_curve_to_csv, group_gap, profiles_to_csv, Grouping,
    HiddenPass,
};
use crate::scores::Aggregation;
use crate::synth::{generate_corpus, SynthConfig};
use crate::trace::{
    join_labels, load_corpus, load_labels, load_reference_features, parse_record, validate_sample,
    LabeledSample,
};
use crate::vigtuq::{grid_search, Grid, TunedConfigRecord, VigTuqConfig, DEFAULT_ALPHA_MAX};

mod report;

pub use report::{render_report, ReportOutput};

#[derive(Debug, Parser)]
#[command(
    name = "vigtuq",
    version,
    about = "Visually grounded token uncertainty over generation traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every record of a trace file against the data-model invariants.
    Validate(ValidateArgs),
    /// Per-sample uncertainty scores as `sample_id,method,score`.
    Score(ScoreArgs),
    /// Grid-search (alpha_jsd, alpha_attn, layer) by training AUROC.
    Tune(TuneArgs),
    /// AUROC/ECE per method.
    Eval(EvalArgs),
    /// Top-k% token-selection AUROC curves.
    Select(SelectArgs),
    /// Hidden-state analyses: group gap summaries or CKA depth curves.
    Repr(ReprArgs),
    /// Generate a synthetic corpus with planted structure.
    Synth(SynthArgs),
    /// Merge metric CSVs into a per-dataset table, optionally with SVG charts.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    pub trace: PathBuf,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ConfigArgs {
    /// Tuned configuration record written by `tune`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha_jsd: Option<u32>,
    #[arg(long)]
    pub alpha_attn: Option<u32>,
    #[arg(long)]
    pub layer: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Option<VigTuqConfig>> {
        let flags = (self.alpha_jsd, self.alpha_attn, self.layer);
        match (&self.config, flags) {
            (Some(_), (Some(_), _, _) | (_, Some(_), _) | (_, _, Some(_))) => Err(Error::Usage(
                "use either --config or --alpha-jsd/--alpha-attn/--layer, not both".into(),
            )),
            (Some(path), _) => TunedConfigRecord::load(path)?.config().map(Some),
            (None, (None, None, None)) => Ok(None),
            (None, (Some(a), Some(b), Some(l))) => VigTuqConfig::new(a, b, l).map(Some),
            (None, _) => Err(Error::Usage(
                "--alpha-jsd, --alpha-attn and --layer must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Restrict scoring to labeled samples.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub agg: String,
    #[command(flatten)]
    pub vigtuq: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA_MAX)]
    pub alpha_max: u32,
    /// Explicit `a:b` coefficient pairs, overriding --alpha-max.
    #[arg(long, value_delimiter = ',')]
    pub alpha_pairs: Vec<String>,
    /// `all` or a comma-separated list of attention layers.
    #[arg(long, default_value = "all")]
    pub layers: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated methods. Defaults to the language baselines, plus the
    /// VIG-TUQ family when a configuration is given.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub agg: String,
    #[command(flatten)]
    pub vigtuq: ConfigArgs,
    #[arg(long, default_value_t = crate::eval::benchmark::DEFAULT_ECE_BINS)]
    pub ece_bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated: `jsd`, `attention:<layer>`, `random`.
    #[arg(long, value_delimiter = ',', default_value = "jsd")]
    pub criterion: Vec<String>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "10,20,30,40,50,60,70,80,90,100"
    )]
    pub k_grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReprArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// `correctness`, `certainty` or `both`.
    #[arg(long, default_value = "both")]
    pub grouping: String,
    /// Uncertainty method for the certainty split.
    #[arg(long, default_value = "entropy")]
    pub method: String,
    #[arg(long, default_value = "mean")]
    pub agg: String,
    #[command(flatten)]
    pub vigtuq: ConfigArgs,
    /// Reference-feature file; switches to the CKA depth curve.
    #[arg(long)]
    pub cka: Option<PathBuf>,
    /// Also write per-sample cosine profiles as CSV.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// JSON synth configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub p_correct: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Metric CSVs (`dataset,model,method,agg,auroc,ece,n`) and/or selection
    /// curve CSVs (`criterion,k,auroc,runs`).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Grouped bar chart of AUROC per method and dataset.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Line chart of selection curves.
    #[arg(long)]
    pub curve_svg: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<FileDigest>,
    flags: serde_json::Value,
    engine_version: &'static str,
    seed: u64,
    outputs: Vec<FileDigest>,
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn write_manifest(
    at: &Path,
    command: &str,
    inputs: &[&Path],
    flags: &impl Serialize,
    seed: u64,
    outputs: &[&Path],
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        inputs: inputs
            .iter()
            .map(|p| digest_file(p))
            .collect::<Result<_>>()?,
        flags: serde_json::to_value(flags).expect("flags serialize"),
        engine_version: crate::VERSION,
        seed,
        outputs: outputs
            .iter()
            .map(|p| digest_file(p))
            .collect::<Result<_>>()?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    text.push('\n');
    fs::write(at, text).map_err(|e| Error::io(at, e))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Writes `text` to `out` (plus its manifest) or to stdout.
fn emit(
    stdout: &mut dyn Write,
    out: Option<&Path>,
    text: &str,
    command: &str,
    inputs: &[&Path],
    flags: &impl Serialize,
    seed: u64,
) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
            write_manifest(&manifest_path(path), command, inputs, flags, seed, &[path])
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_labeled(trace: &Path, labels: &Path, stderr: &mut dyn Write) -> Result<Vec<LabeledSample>> {
    let corpus = load_corpus(trace)?;
    let labels = load_labels(labels)?;
    let joined = join_labels(corpus, &labels)?;
    if joined.dropped > 0 {
        let _ = writeln!(stderr, "dropped {} unlabeled samples", joined.dropped);
    }
    Ok(joined.samples)
}

fn parse_criterion(s: &str, seed: u64) -> Result<SelectionCriterion> {
    match s {
        "jsd" => Ok(SelectionCriterion::Jsd),
        "random" => Ok(SelectionCriterion::Random(seed)),
        other => other
            .strip_prefix("attention:")
            .and_then(|l| l.parse().ok())
            .map(SelectionCriterion::Attention)
            .ok_or_else(|| Error::Usage(format!("unknown criterion `{other}`"))),
    }
}

fn cmd_validate(args: &ValidateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let path = &args.trace;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut failures = 0usize;
    let mut report = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        match parse_record(line_no, line) {
            Err(e) => {
                failures += 1;
                report.push_str(&format!("{e}\n"));
            }
            Ok(sample) => {
                let violations = validate_sample(&sample);
                if !violations.is_empty() {
                    failures += 1;
                }
                for v in violations {
                    report.push_str(&format!("line {line_no}: {}: {v}\n", sample.sample_id));
                }
            }
        }
    }
    stdout
        .write_all(report.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(if failures == 0 { 0 } else { 1 })
}

fn cmd_score(args: &ScoreArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let method: Method = args.method.parse()?;
    let agg: Aggregation = args.agg.parse()?;
    let config = args.vigtuq.resolve()?;
    let mut corpus = match &args.labels {
        Some(labels) => load_labeled(&args.trace, labels, stderr)?
            .into_iter()
            .map(|s| s.trace)
            .collect(),
        None => load_corpus(&args.trace)?,
    };
    corpus.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let scores = score_corpus(&corpus, method, agg, config.as_ref())?;
    let mut text = String::from("sample_id,method,score\n");
    for (s, v) in corpus.iter().zip(scores) {
        text.push_str(&format!("{},{method},{v}\n", s.sample_id));
    }
    let mut inputs = vec![args.trace.as_path()];
    inputs.extend(args.labels.as_deref());
    inputs.extend(args.vigtuq.config.as_deref());
    emit(
        stdout,
        args.out.as_deref(),
        &text,
        "score",
        &inputs,
        args,
        0,
    )
}

fn parse_layers(spec: &str) -> Result<Option<Vec<usize>>> {
    if spec == "all" {
        return Ok(None);
    }
    spec.split(',')
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad layer `{l}`")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn parse_alpha_pair(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Usage(format!("bad alpha pair `{s}` (expected a:b)"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn ids_of(corpus: &[LabeledSample], pick: impl Fn(&LabeledSample) -> &str) -> String {
    let mut ids: Vec<&str> = corpus.iter().map(pick).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.join("+")
}

fn cmd_tune(args: &TuneArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let corpus = load_labeled(&args.trace, &args.labels, stderr)?;
    let mut grid = Grid::for_corpus(&corpus, args.alpha_max);
    if let Some(layers) = parse_layers(&args.layers)? {
        grid.layers = layers;
    }
    if !args.alpha_pairs.is_empty() {
        grid.alphas = args
            .alpha_pairs
            .iter()
            .map(|p| parse_alpha_pair(p))
            .collect::<Result<_>>()?;
    }
    let result = grid_search(&corpus, &grid)?;
    let record = TunedConfigRecord::new(
        &ids_of(&corpus, |s| &s.trace.model_id),
        &ids_of(&corpus, |s| &s.trace.dataset_id),
        &result,
    );
    let text = format!("{}\n", record.to_json());
    emit(
        stdout,
        args.out.as_deref(),
        &text,
        "tune",
        &[&args.trace, &args.labels],
        args,
        0,
    )
}

fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let agg: Aggregation = args.agg.parse()?;
    let config = args.vigtuq.resolve()?;
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL
            .into_iter()
            .filter(|m| config.is_some() || !m.needs_config())
            .collect()
    } else {
        args.methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_>>()?
    };
    let corpus = load_labeled(&args.trace, &args.labels, stderr)?;
    let options = BenchmarkOptions {
        aggregation: agg,
        config,
        ece_bins: args.ece_bins,
    };
    let report = benchmark(&corpus, &methods, &options)?;
    let mut inputs = vec![args.trace.as_path(), args.labels.as_path()];
    inputs.extend(args.vigtuq.config.as_deref());
    emit(
        stdout,
        args.out.as_deref(),
        &report.to_csv(),
        "eval",
        &inputs,
        args,
        0,
    )
}

fn cmd_select(args: &SelectArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let criteria = args
        .criterion
        .iter()
        .map(|c| parse_criterion(c, args.seed))
        .collect::<Result<Vec<_>>>()?;
    let corpus = load_labeled(&args.trace, &args.labels, stderr)?;
    let curves = criteria
        .into_iter()
        .map(|c| token_selection_curve(&corpus, c, &args.k_grid).map(|pts| (c, pts)))
        .collect::<Result<Vec<_>>>()?;
    emit(
        stdout,
        args.out.as_deref(),
        &curve_to_csv(&curves),
        "select",
        &[&args.trace, &args.labels],
        args,
        args.seed,
    )
}

fn cmd_repr(args: &ReprArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let mut inputs = vec![args.trace.as_path()];
    inputs.extend(args.labels.as_deref());
    inputs.extend(args.cka.as_deref());

    if let Some(path) = &args.profiles {
        let corpus = load_corpus(&args.trace)?;
        let profiles = corpus
            .iter()
            .map(cosine_profile)
            .collect::<Result<Vec<_>>>()?;
        fs::write(path, profiles_to_csv(&profiles)).map_err(|e| Error::io(path, e))?;
    }

    let text = if let Some(refs) = &args.cka {
        let corpus = load_corpus(&args.trace)?;
        let reference = load_reference_features(refs)?;
        depth_curve_to_csv(&cka_depth_curve(
            &corpus,
            &reference,
            HiddenPass::WithImage,
        )?)
    } else {
        let labels = args
            .labels
            .as_deref()
            .ok_or_else(|| Error::Usage("group analyses need --labels".into()))?;
        let corpus = load_labeled(&args.trace, labels, stderr)?;
        let certainty = || -> Result<Grouping> {
            Ok(Grouping::Certainty {
                method: args.method.parse()?,
                agg: args.agg.parse()?,
                config: args.vigtuq.resolve()?,
            })
        };
        let groupings = match args.grouping.as_str() {
            "correctness" => vec![Grouping::Correctness],
            "certainty" => vec![certainty()?],
            "both" => vec![Grouping::Correctness, certainty()?],
            other => return Err(Error::Usage(format!("unknown grouping `{other}`"))),
        };
        let mut text = String::new();
        for g in groupings {
            text.push_str(&group_gap(&corpus, g)?.to_json());
            text.push('\n');
        }
        text
    };
    emit(stdout, args.out.as_deref(), &text, "repr", &inputs, args, 0)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => SynthConfig::default(),
    };
    config.seed = args.seed;
    if let Some(n) = args.n_samples {
        config.n_samples = n;
    }
    if let Some(r) = args.rho {
        config.rho = r;
    }
    if let Some(l) = args.n_layers {
        config.n_layers = l;
    }
    if let Some(p) = args.p_correct {
        config.p_correct = p;
    }
    let corpus = generate_corpus(&config)?;
    corpus.write_to(&args.out_dir)?;
    let outputs: Vec<PathBuf> = [
        "traces.jsonl",
        "labels.jsonl",
        "refs.jsonl",
        "synth_meta.json",
    ]
    .iter()
    .map(|f| args.out_dir.join(f))
    .collect();
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out_dir.join("manifest.json"),
        "synth",
        &inputs,
        args,
        args.seed,
        &outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
    )
}

fn cmd_report(args: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut curves = String::new();
    for path in &args.inputs {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = text.lines().next().unwrap_or_default().trim();
        if header == METRIC_CSV_HEADER {
            metrics.extend(read_metric_csv(&text)?);
        } else if header == crate::eval::selection::SELECTION_CSV_HEADER {
            let body = text.split_once('\n').map_or("", |(_, b)| b);
            if curves.is_empty() {
                curves.push_str(header);
                curves.push('\n');
            }
            curves.push_str(body);
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!("{}: unrecognized CSV header `{header}`", path.display()),
            });
        }
    }
    let rendered = render_report(&metrics, &curves)?;
    let mut outputs = Vec::new();
    if let Some(svg) = &args.svg {
        fs::write(svg, &rendered.bar_svg).map_err(|e| Error::io(svg, e))?;
        outputs.push(svg.clone());
    }
    if let Some(svg) = &args.curve_svg {
        fs::write(svg, &rendered.curve_svg).map_err(|e| Error::io(svg, e))?;
        outputs.push(svg.clone());
    }
    let inputs: Vec<&Path> = args.inputs.iter().map(PathBuf::as_path).collect();
    match &args.out {
        Some(path) => {
            fs::write(path, &rendered.table).map_err(|e| Error::io(path, e))?;
            outputs.insert(0, path.clone());
            let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
            write_manifest(&manifest_path(path), "report", &inputs, args, 0, &outs)
        }
        None => stdout
            .write_all(rendered.table.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn configure_threads() {
    let threads = std::env::var("VIGTUQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    if threads > 0 {
        // fails only if a global pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a, stdout),
        Command::Score(a) => cmd_score(a, stdout, stderr).map(|_| 0),
        Command::Tune(a) => cmd_tune(a, stdout, stderr).map(|_| 0),
        Command::Eval(a) => cmd_eval(a, stdout, stderr).map(|_| 0),
        Command::Select(a) => cmd_select(a, stdout, stderr).map(|_| 0),
        Command::Repr(a) => cmd_repr(a, stdout, stderr).map(|_| 0),
        Command::Synth(a) => cmd_synth(a).map(|_| 0),
        Command::Report(a) => cmd_report(a, stdout).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
