use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hsas_core::abstractive::{Backend, DeletionCompressor, RemoteBackend, RemoteConfig};
use hsas_core::container::{encode, ModelFile};
use hsas_core::corpus::{load_jsonl_report, split_dataset, write_jsonl, Document, SplitSpec};
use hsas_core::extractive::TfidfModel;
use hsas_core::harness::{
    bench, evaluate, fit_models, run_pipeline, summary_features, ModelSizes, Pipeline, PipelineConfig,
    PipelineVariant, Summarizer,
};
use hsas_core::lexicon::SentimentLexicon;
use hsas_core::quantize::{quantize_model_with, verify_agreement, Sample, ADAPTER_BITS, MAIN_BITS};
use hsas_core::sentiment::Scorer;
use hsas_core::synth::{SynthConfig, SynthCorpus};
use hsas_core::textproc::Stemmers;
use hsas_core::train::TrainConfig;

/// Hybrid extractive/abstractive summarization for multilingual sentiment.
#[derive(Parser, Debug)]
#[command(name = "hsas", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the training and split seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a JSONL corpus and report on it, or write a synthetic one.
    Ingest(IngestArgs),
    /// Train the sentiment model and write a model container.
    Train(TrainArgs),
    /// Summarize every document with one pipeline variant (JSONL out).
    Summarize(SummarizeArgs),
    /// Classify documents or a single text.
    Analyze(AnalyzeArgs),
    /// Compare the three pipeline variants on a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Time the pipeline and report model sizes.
    Bench(BenchArgs),
    /// Quantize the float weights of a model container.
    Quantize(QuantizeArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Fail on any unknown field as well as on malformed records.
    #[arg(long)]
    validate: bool,
    /// Generate this many synthetic documents instead of reading input.
    #[arg(long, conflicts_with = "input")]
    synthetic: Option<usize>,
    /// Write the (normalized or generated) corpus here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// With --synthetic, also write the matching lexicon TSV.
    #[arg(long, requires = "synthetic")]
    lexicon_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Score with the float weights even when quantized ones exist.
    #[arg(long)]
    float: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the training report JSON here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "hybrid")]
    variant: PipelineVariant,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    text: Option<String>,
    #[arg(long, default_value = "en")]
    lang: String,
    #[arg(long, default_value = "hybrid")]
    variant: PipelineVariant,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Evaluate on the configured test split, or on every document.
    #[arg(long, default_value = "test", value_parser = ["test", "all"])]
    split: String,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Synthetic document lengths (tokens) to time when no corpus is given.
    #[arg(long, value_delimiter = ',', default_value = "100,10000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value = "hybrid")]
    variant: PipelineVariant,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = MAIN_BITS)]
    main_bits: u8,
    #[arg(long, default_value_t = ADAPTER_BITS)]
    adapter_bits: u8,
    /// Leave the float weights out of the output container.
    #[arg(long)]
    drop_float: bool,
    /// Measure float/quantized agreement on this corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct AppConfig {
    #[serde(flatten)]
    train: TrainConfig,
    pipeline: PipelineConfig,
    split: SplitSpec,
    /// Summaries the classifier is trained on.
    train_view: Option<PipelineVariant>,
    /// Lexicon TSV (lang, stem, weight); the built-in one otherwise.
    lexicon: Option<PathBuf>,
    /// Directory of `<lang>.tsv` stemmer rule files, added to the built-in ones.
    stem_rules: Option<PathBuf>,
    /// Remote compression server; the local deletion compressor otherwise.
    remote: Option<RemoteConfig>,
}

struct Env {
    cfg: AppConfig,
    seed: Option<u64>,
    workers: usize,
    stemmers: Stemmers,
    lexicon: SentimentLexicon,
    backend: Box<dyn Backend>,
}

impl Env {
    fn new(cli: &Cli) -> Result<Env> {
        let mut cfg: AppConfig = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.train.seed = seed;
            cfg.split.seed = seed;
        }
        let workers = cli
            .workers
            .map(|w| w as usize)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let mut stemmers = Stemmers::builtin();
        if let Some(dir) = &cfg.stem_rules {
            stemmers.load_dir(dir).with_context(|| format!("loading stemmer rules from {}", dir.display()))?;
        }
        let lexicon = match &cfg.lexicon {
            Some(p) => SentimentLexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?,
            None => SentimentLexicon::builtin(&stemmers),
        };
        let backend: Box<dyn Backend> = match &cfg.remote {
            Some(r) => Box::new(RemoteBackend::new(r)),
            None => Box::new(DeletionCompressor),
        };
        Ok(Env { cfg, seed: cli.seed, workers, stemmers, lexicon, backend })
    }
}

struct Loaded {
    file: ModelFile,
    tfidf: TfidfModel,
}

impl Loaded {
    fn open(path: &Path) -> Result<Loaded> {
        let file = ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))?;
        let stats = file.tfidf.clone().context("model container has no TF-IDF section")?;
        let tfidf = TfidfModel::from_stats(stats)?;
        Ok(Loaded { file, tfidf })
    }

    fn scorer(&self, float: bool) -> Result<&(dyn Scorer + Sync)> {
        let s: Option<&(dyn Scorer + Sync)> = match (float, &self.file.float, &self.file.quantized) {
            (false, _, Some(q)) => Some(q),
            (_, Some(f), _) => Some(f),
            (true, None, _) => bail!("--float given but the container has no float weights"),
            _ => None,
        };
        s.context("model container has no weights")
    }

    fn sizes(&self) -> Result<Option<ModelSizes>> {
        let (Some(float), Some(q)) = (&self.file.float, &self.file.quantized) else { return Ok(None) };
        let mut float = float.clone();
        float.quantized = None;
        let tfidf = self.file.tfidf.clone();
        let float_bytes = encode(&ModelFile { float: Some(float), quantized: None, tfidf: tfidf.clone() })?.len();
        let quantized_bytes = encode(&ModelFile { float: None, quantized: Some(q.clone()), tfidf })?.len();
        Ok(Some(ModelSizes { float_bytes, quantized_bytes }))
    }
}

fn pipeline<'a>(env: &'a Env, loaded: &'a Loaded, float: bool) -> Result<Pipeline<'a>> {
    Ok(Pipeline {
        summarizer: Summarizer {
            stemmers: &env.stemmers,
            lexicon: &env.lexicon,
            tfidf: &loaded.tfidf,
            backend: env.backend.as_ref(),
            config: &env.cfg.pipeline,
        },
        scorer: loaded.scorer(float)?,
    })
}

fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let report = load_jsonl_report(path).with_context(|| format!("loading corpus {}", path.display()))?;
    if report.unknown_fields > 0 {
        eprintln!("warning: ignored {} unknown field(s)", report.unknown_fields);
    }
    Ok(report.documents)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct CorpusSummary {
    documents: usize,
    labeled: usize,
    with_reference: usize,
    code_switched: usize,
    unknown_fields: usize,
    languages: BTreeMap<String, usize>,
    labels: BTreeMap<String, usize>,
}

fn summarize_corpus(docs: &[Document], unknown_fields: usize) -> CorpusSummary {
    let mut languages = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for d in docs {
        *languages.entry(d.lang.clone()).or_default() += 1;
        if let Some(l) = d.label {
            *labels.entry(l.to_string()).or_default() += 1;
        }
    }
    CorpusSummary {
        documents: docs.len(),
        labeled: docs.iter().filter(|d| d.label.is_some()).count(),
        with_reference: docs.iter().filter(|d| d.reference.is_some()).count(),
        code_switched: docs.iter().filter(|d| d.token_langs.is_some()).count(),
        unknown_fields,
        languages,
        labels,
    }
}

fn ingest(env: &Env, args: &IngestArgs) -> Result<()> {
    let (docs, unknown) = match (&args.input, args.synthetic) {
        (_, Some(n)) => {
            let default = SynthConfig::default();
            let cfg = SynthConfig { n_docs: n, seed: env.seed.unwrap_or(default.seed), ..default };
            let corpus = SynthCorpus::generate(&cfg, &env.stemmers);
            if let Some(p) = &args.lexicon_out {
                fs::write(p, corpus.lexicon.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
            }
            (corpus.docs, 0)
        }
        (Some(input), None) => {
            let report = load_jsonl_report(input).with_context(|| format!("loading corpus {}", input.display()))?;
            (report.documents, report.unknown_fields)
        }
        (None, None) => unreachable!("clap requires --input or --synthetic"),
    };
    if args.validate && unknown > 0 {
        bail!("{unknown} unknown field(s) in {}", args.input.as_deref().unwrap_or(Path::new("-")).display());
    }
    if let Some(p) = &args.out {
        let mut w = output(Some(p))?;
        write_jsonl(&mut w, &docs)?;
        w.flush()?;
    }
    print_json(&summarize_corpus(&docs, unknown))
}

fn train(env: &Env, args: &TrainArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let splits = split_dataset(&docs, &env.cfg.split)?;
    let (file, report) = fit_models(
        &splits.train,
        &splits.val,
        &env.stemmers,
        &env.lexicon,
        env.backend.as_ref(),
        &env.cfg.pipeline,
        &env.cfg.train,
        env.cfg.train_view.unwrap_or(PipelineVariant::Hybrid),
        env.workers,
    )?;
    file.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    for w in &report.train.warnings {
        eprintln!("warning: {w}");
    }
    let (train, val, test) = splits.sizes();
    eprintln!("trained on {train} documents ({val} validation, {test} held out); wrote {}", args.out.display());
    let mut w = output(args.report.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn summarize(env: &Env, args: &SummarizeArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let loaded = Loaded::open(&args.model.model)?;
    let p = pipeline(env, &loaded, args.model.float)?;
    let results = run_pipeline(&p, args.variant, &docs, env.workers)?;
    let mut w = output(args.out.as_deref())?;
    for r in &results {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Analysis<'a> {
    id: &'a str,
    lang: &'a str,
    label: hsas_core::corpus::Label,
    confidence: f64,
    probs: [f64; 3],
    summary: &'a str,
}

fn analyze(env: &Env, args: &AnalyzeArgs) -> Result<()> {
    let docs = match (&args.corpus, &args.text) {
        (Some(p), _) => load_corpus(p)?,
        (None, Some(t)) => vec![Document::new("text", &args.lang, t.as_str(), None)?],
        (None, None) => unreachable!("clap requires --corpus or --text"),
    };
    let loaded = Loaded::open(&args.model.model)?;
    let p = pipeline(env, &loaded, args.model.float)?;
    let results = run_pipeline(&p, args.variant, &docs, env.workers)?;
    let mut out = io::stdout().lock();
    for r in &results {
        let a = Analysis {
            id: &r.id,
            lang: &r.lang,
            label: r.prediction.label,
            confidence: r.prediction.confidence,
            probs: r.prediction.probs,
            summary: &r.text,
        };
        serde_json::to_writer(&mut out, &a)?;
        writeln!(out)?;
    }
    Ok(())
}

fn eval(env: &Env, args: &EvaluateArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let docs = if args.split == "test" { split_dataset(&docs, &env.cfg.split)?.test } else { docs };
    if docs.is_empty() {
        bail!("no documents to evaluate (is the test split empty?)");
    }
    let loaded = Loaded::open(&args.model.model)?;
    let p = pipeline(env, &loaded, args.model.float)?;
    let mut report = evaluate(&p, &docs, env.workers)?;
    report.model_sizes = loaded.sizes()?;
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        print_json(&report)
    } else {
        print!("{}", report.render_table());
        Ok(())
    }
}

#[derive(Serialize)]
struct BenchOutput {
    runs: Vec<(String, hsas_core::harness::BenchReport)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency_ratio: Option<f64>,
}

fn run_bench(env: &Env, args: &BenchArgs) -> Result<()> {
    let loaded = Loaded::open(&args.model.model)?;
    let p = pipeline(env, &loaded, args.model.float)?;
    let sizes = loaded.sizes()?;
    let mut runs = Vec::new();
    if let Some(path) = &args.corpus {
        let docs = load_corpus(path)?;
        runs.push((path.display().to_string(), bench(&p, args.variant, &docs, args.repeats, sizes)?));
    } else {
        let synth = SynthCorpus::generate(&SynthConfig { n_docs: 0, ..Default::default() }, &env.stemmers);
        for &n in &args.sizes {
            let count = (20_000 / n.max(1)).clamp(3, 50);
            let docs: Vec<Document> =
                (0..count).map(|i| synth.sized_document(&format!("b{n}-{i}"), n, i as u64)).collect();
            runs.push((format!("{n} tokens"), bench(&p, args.variant, &docs, args.repeats, sizes)?));
        }
    }
    let latency_ratio = match (runs.first(), runs.last()) {
        (Some(a), Some(b)) if runs.len() > 1 && a.1.mean_ms > 0.0 => Some(b.1.mean_ms / a.1.mean_ms),
        _ => None,
    };
    print_json(&BenchOutput { runs, latency_ratio })
}

#[derive(Serialize)]
struct QuantizeReport {
    main_bits: u8,
    adapter_bits: u8,
    sizes: ModelSizes,
    #[serde(skip_serializing_if = "Option::is_none")]
    agreement: Option<f64>,
}

fn quantize(env: &Env, args: &QuantizeArgs) -> Result<()> {
    let loaded = Loaded::open(&args.model)?;
    let mut float = loaded.file.float.clone().context("model container has no float weights to quantize")?;
    float.quantized = None;
    let q = quantize_model_with(&float, args.main_bits, args.adapter_bits)?;

    let agreement = match &args.corpus {
        Some(path) => {
            let docs = load_corpus(path)?;
            let p = Pipeline {
                summarizer: Summarizer {
                    stemmers: &env.stemmers,
                    lexicon: &env.lexicon,
                    tfidf: &loaded.tfidf,
                    backend: env.backend.as_ref(),
                    config: &env.cfg.pipeline,
                },
                scorer: &float,
            };
            let mut samples = Vec::with_capacity(docs.len());
            for d in &docs {
                let s = p.summarizer.summarize(PipelineVariant::Hybrid, d)?;
                let (features, mix) = summary_features(&s, float.dim)?;
                samples.push(Sample { features, mix, lang: d.lang.clone() });
            }
            Some(verify_agreement(&float, &q, &samples)?)
        }
        None => None,
    };

    let tfidf = loaded.file.tfidf.clone();
    let float_bytes = encode(&ModelFile { float: Some(float.clone()), quantized: None, tfidf: tfidf.clone() })?.len();
    let out = if args.drop_float {
        ModelFile { float: None, quantized: Some(q), tfidf }
    } else {
        float.quantized = Some(q.clone());
        ModelFile { float: Some(float), quantized: Some(q), tfidf }
    };
    let quantized_bytes = encode(&ModelFile { float: None, ..out.clone() })?.len();
    out.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    print_json(&QuantizeReport {
        main_bits: args.main_bits,
        adapter_bits: args.adapter_bits,
        sizes: ModelSizes { float_bytes, quantized_bytes },
        agreement,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let env = Env::new(cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&env, a),
        Command::Train(a) => train(&env, a),
        Command::Summarize(a) => summarize(&env, a),
        Command::Analyze(a) => analyze(&env, a),
        Command::Evaluate(a) => eval(&env, a),
        Command::Bench(a) => run_bench(&env, a),
        Command::Quantize(a) => quantize(&env, a),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let kind = c
            .downcast_ref::<io::Error>()
            .map(io::Error::kind)
            .or_else(|| c.downcast_ref::<serde_json::Error>().and_then(serde_json::Error::io_error_kind));
        kind == Some(io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            // thiserror variants often repeat their source; print each message once
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
