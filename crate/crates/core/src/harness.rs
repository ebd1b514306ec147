//! End-to-end pipeline assembly, three-variant evaluation and benchmarks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstractive::{
    AbstractiveError, Backend, CompressorConfig, Gate, GateConfig, GateDecision, GateInput, Verdict,
};
use crate::container::ModelFile;
use crate::corpus::{Document, Label, SplitError, SplitSpec};
use crate::extractive::{
    extract_summary, fit_tfidf, score_sentences, ExtractiveConfig, ExtractiveError, TfidfModel,
};
use crate::lexicon::SentimentLexicon;
use crate::metrics::{bleu, rouge1, wilcoxon_signed_rank, ConfusionCounts, MetricsError, Rouge, SignificanceResult};
use crate::quantize::{quantize_model, QuantizeError};
use crate::sentiment::{
    calibrate, featurize, fnv1a64, lang_proportions, predict, CalibrationReport, LabeledFeatures, Prediction, Scorer,
    SentimentError,
};
use crate::textproc::{preprocess, token_spans, tokenize_text, Stemmers, Token};
use crate::train::{train_classifier, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Extractive(#[from] ExtractiveError),
    #[error(transparent)]
    Abstractive(#[from] AbstractiveError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("document {0} has no label")]
    Unlabeled(String),
    #[error("model container has no TF-IDF statistics")]
    NoTfidf,
    #[error("model container has no weights")]
    NoWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    ExtractiveOnly,
    AbstractiveOnly,
    Hybrid,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 3] =
        [PipelineVariant::ExtractiveOnly, PipelineVariant::AbstractiveOnly, PipelineVariant::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineVariant::ExtractiveOnly => "extractive_only",
            PipelineVariant::AbstractiveOnly => "abstractive_only",
            PipelineVariant::Hybrid => "hybrid",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PipelineVariant::ExtractiveOnly => "Extractive Only",
            PipelineVariant::AbstractiveOnly => "Abstractive Only",
            PipelineVariant::Hybrid => "Hybrid",
        }
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`; expected extractive_only, abstractive_only or hybrid"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub extractive: ExtractiveConfig,
    pub gate: GateConfig,
    pub compressor: CompressorConfig,
}

/// The summarization half of the pipeline.
pub struct Summarizer<'a> {
    pub stemmers: &'a Stemmers,
    pub lexicon: &'a SentimentLexicon,
    pub tfidf: &'a TfidfModel,
    pub backend: &'a dyn Backend,
    pub config: &'a PipelineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub text: String,
    pub extractive_text: String,
    /// Tokens of `text`, with code-switch tags where they can be recovered.
    pub tokens: Vec<Token>,
    pub verdict: Option<Verdict>,
    pub decisions: Vec<GateDecision>,
    pub backend_error: Option<String>,
}

/// Tokens of `text`, reusing `source` tokens (and their language tags) when
/// `text` is an in-order selection of them.
fn align_tokens(text: &str, source: &[Token], lang: &str, stemmers: &Stemmers) -> Vec<Token> {
    let spans = token_spans(text);
    let mut out = Vec::with_capacity(spans.len());
    let mut it = source.iter();
    for (s, e) in spans {
        match it.find(|t| t.surface == text[s..e]) {
            Some(t) => out.push(t.clone()),
            None => return tokenize_text(text, lang, stemmers),
        }
    }
    out
}

impl Summarizer<'_> {
    pub fn summarize(&self, variant: PipelineVariant, doc: &Document) -> Result<Summary, HarnessError> {
        let td = preprocess(doc, self.stemmers);
        let extractive = match variant {
            PipelineVariant::AbstractiveOnly => ExtractiveConfig { budget_ratio: 1.0, ..self.config.extractive },
            _ => self.config.extractive,
        };
        let scores = score_sentences(&td, self.tfidf, self.lexicon, &extractive)?;
        let summary = extract_summary(&td, &scores, &extractive)?;
        let input = GateInput::from_extractive(&td, &scores, &summary);
        let gate = Gate {
            backend: self.backend,
            lexicon: self.lexicon,
            stemmers: self.stemmers,
            gate: &self.config.gate,
            compressor: &self.config.compressor,
        };
        let (text, verdict, decisions, backend_error) = match variant {
            PipelineVariant::ExtractiveOnly => (summary.text.clone(), None, Vec::new(), None),
            PipelineVariant::AbstractiveOnly => {
                let (text, err) = gate.ungated(&input)?;
                (text, None, Vec::new(), err.map(|e| e.to_string()))
            }
            PipelineVariant::Hybrid => {
                let r = gate.summarize(&input)?;
                let err = r.decisions.iter().find_map(|d| d.error.clone());
                (r.text, Some(r.verdict), r.decisions, err)
            }
        };
        let tokens = if text == summary.text { input.tokens.clone() } else { align_tokens(&text, &input.tokens, &doc.lang, self.stemmers) };
        Ok(Summary { text, extractive_text: summary.text, tokens, verdict, decisions, backend_error })
    }
}

/// Features and language mix for classifying a summary.
pub fn summary_features(summary: &Summary, dim: u32) -> Result<(crate::sentiment::FeatureVector, crate::sentiment::LangMix), SentimentError> {
    Ok((featurize(&summary.tokens, dim)?, lang_proportions(&summary.tokens)))
}

/// Applies `f` to every item on `workers` threads; results keep input
/// order. One worker runs inline.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break out;
                        }
                        out.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocResult {
    pub id: String,
    pub lang: String,
    pub variant: PipelineVariant,
    pub text: String,
    pub extractive_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<GateDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_error: Option<String>,
    pub prediction: Prediction,
}

pub struct Pipeline<'a> {
    pub summarizer: Summarizer<'a>,
    pub scorer: &'a (dyn Scorer + Sync),
}

impl Pipeline<'_> {
    pub fn run_one(&self, variant: PipelineVariant, doc: &Document) -> Result<DocResult, HarnessError> {
        let s = self.summarizer.summarize(variant, doc)?;
        let (x, mix) = summary_features(&s, self.scorer.dim())?;
        let prediction = predict(self.scorer, &x, &mix, &doc.lang)?;
        Ok(DocResult {
            id: doc.id.clone(),
            lang: doc.lang.clone(),
            variant,
            text: s.text,
            extractive_text: s.extractive_text,
            verdict: s.verdict,
            decisions: s.decisions,
            backend_error: s.backend_error,
            prediction,
        })
    }
}

pub fn run_pipeline(
    pipeline: &Pipeline,
    variant: PipelineVariant,
    docs: &[Document],
    workers: usize,
) -> Result<Vec<DocResult>, HarnessError> {
    parallel_map(docs, workers, |d| pipeline.run_one(variant, d)).into_iter().collect()
}

/// Classifier training examples from the `variant` summaries of `docs`.
pub fn labeled_features(
    summarizer: &Summarizer,
    variant: PipelineVariant,
    docs: &[Document],
    dim: u32,
    workers: usize,
) -> Result<Vec<LabeledFeatures>, HarnessError> {
    parallel_map(docs, workers, |d| -> Result<LabeledFeatures, HarnessError> {
        let label = d.label.ok_or_else(|| HarnessError::Unlabeled(d.id.clone()))?;
        let s = summarizer.summarize(variant, d)?;
        let (features, mix) = summary_features(&s, dim)?;
        Ok(LabeledFeatures { features, mix, lang: d.lang.clone(), label })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tfidf_docs: usize,
    pub train: TrainReport,
    pub calibration: Option<CalibrationReport>,
    /// Every validation label is the same before and after calibration.
    pub calibration_preserved_labels: bool,
}

/// TF-IDF on `train`, the classifier on `view` summaries of `train`, then
/// temperatures on `val`. The returned container holds float and
/// quantized weights plus the TF-IDF statistics.
pub fn fit_models(
    train: &[Document],
    val: &[Document],
    stemmers: &Stemmers,
    lexicon: &SentimentLexicon,
    backend: &dyn Backend,
    config: &PipelineConfig,
    train_cfg: &TrainConfig,
    view: PipelineVariant,
    workers: usize,
) -> Result<(ModelFile, FitReport), HarnessError> {
    let tokenized: Vec<_> = parallel_map(train, workers, |d| preprocess(d, stemmers));
    let tfidf = fit_tfidf(&tokenized)?;
    let summarizer = Summarizer { stemmers, lexicon, tfidf: &tfidf, backend, config };
    let train_x = labeled_features(&summarizer, view, train, train_cfg.dim, workers)?;
    let val_x = labeled_features(&summarizer, view, val, train_cfg.dim, workers)?;
    let (mut model, train_report) = train_classifier(&train_x, &val_x, train_cfg)?;

    let (calibration, preserved) = if val_x.is_empty() {
        (None, true)
    } else {
        let labels = |m: &dyn Scorer| -> Result<Vec<Label>, SentimentError> {
            val_x.iter().map(|e| predict(m, &e.features, &e.mix, &e.lang).map(|p| p.label)).collect()
        };
        let before = labels(&model)?;
        let report = calibrate(&mut model, &val_x)?;
        let after = labels(&model)?;
        (Some(report), before == after)
    };
    let quantized = quantize_model(&model)?;
    model.quantized = Some(quantized.clone());
    let file = ModelFile { float: Some(model), quantized: Some(quantized), tfidf: Some(tfidf.stats()) };
    Ok((
        file,
        FitReport {
            tfidf_docs: tfidf.n_docs(),
            train: train_report,
            calibration,
            calibration_preserved_labels: preserved,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<Label, f64>,
}

impl MetricSet {
    fn from_pairs(preds: &[Label], golds: &[Label]) -> Result<Self, MetricsError> {
        let c = ConfusionCounts::from_pairs(preds, golds)?;
        let per = c.per_class_f1();
        Ok(MetricSet {
            n: preds.len(),
            accuracy: c.accuracy(),
            macro_f1: c.macro_f1(),
            per_class_f1: Label::ALL.into_iter().map(|l| (l, per[l.index()])).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    /// Mean per-document ROUGE-1.
    pub rouge1: Rouge,
    pub bleu: f64,
    pub n_with_reference: usize,
    /// Documents scored against their own source text for lack of a
    /// reference summary.
    pub n_self_referential: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    pub accepted: usize,
    pub retried: usize,
    pub fell_back: usize,
    pub backend_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: PipelineVariant,
    pub overall: MetricSet,
    /// One entry per corpus language.
    pub per_language: BTreeMap<String, MetricSet>,
    pub summary: SummaryMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: PipelineVariant,
    pub b: PipelineVariant,
    /// Paired over per-document correctness (1 correct, 0 wrong).
    pub test: SignificanceResult,
    pub significant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub float_bytes: usize,
    pub quantized_bytes: usize,
}

impl ModelSizes {
    pub fn ratio(&self) -> f64 {
        if self.float_bytes == 0 {
            0.0
        } else {
            self.quantized_bytes as f64 / self.float_bytes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub n_docs: usize,
    pub languages: Vec<String>,
    pub variants: Vec<VariantReport>,
    pub comparisons: Vec<Comparison>,
    /// FNV-1a of the pipeline configuration and model identity.
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_sizes: Option<ModelSizes>,
}

pub const ALPHA: f64 = 0.05;

fn summary_metrics(docs: &[Document], results: &[DocResult], stemmers: &Stemmers) -> SummaryMetrics {
    let mut r = Rouge { recall: 0.0, precision: 0.0, f: 0.0 };
    let mut b = 0.0;
    let mut with_ref = 0;
    for (d, res) in docs.iter().zip(results) {
        let reference = match &d.reference {
            Some(r) => {
                with_ref += 1;
                r.as_str()
            }
            None => d.text.as_str(),
        };
        let stems = |s: &str| tokenize_text(s, &d.lang, stemmers).into_iter().map(|t| t.stem).collect::<Vec<_>>();
        let (cand, refs) = (stems(&res.text), stems(reference));
        let one = rouge1(&cand, &refs);
        r.recall += one.recall;
        r.precision += one.precision;
        r.f += one.f;
        b += bleu(&cand, &refs, 4);
    }
    let n = docs.len().max(1) as f64;
    SummaryMetrics {
        rouge1: Rouge { recall: r.recall / n, precision: r.precision / n, f: r.f / n },
        bleu: b / n,
        n_with_reference: with_ref,
        n_self_referential: docs.len() - with_ref,
    }
}

fn gate_stats(results: &[DocResult]) -> GateStats {
    let mut g = GateStats::default();
    for r in results {
        match r.verdict {
            Some(Verdict::Accepted) => g.accepted += 1,
            Some(Verdict::FellBack) => g.fell_back += 1,
            _ => {}
        }
        g.retried += r.decisions.iter().filter(|d| d.verdict == Verdict::Retried).count();
        g.backend_errors += usize::from(r.backend_error.is_some());
    }
    g
}

pub fn fingerprint(config: &PipelineConfig, scorer: &dyn Scorer, tfidf: &TfidfModel) -> String {
    let mut bytes = serde_json::to_vec(config).expect("config serializes");
    bytes.extend_from_slice(&scorer.dim().to_le_bytes());
    bytes.extend_from_slice(&serde_json::to_vec(scorer.calibration()).expect("calibration serializes"));
    bytes.extend_from_slice(&(tfidf.n_docs() as u64).to_le_bytes());
    bytes.extend_from_slice(&(tfidf.vocab_len() as u64).to_le_bytes());
    format!("{:016x}", fnv1a64(&bytes))
}

/// Runs all three variants over labeled `docs` and compares hybrid against
/// each baseline with a Wilcoxon signed-rank test at [`ALPHA`].
pub fn evaluate(pipeline: &Pipeline, docs: &[Document], workers: usize) -> Result<EvalReport, HarnessError> {
    let golds: Vec<Label> =
        docs.iter().map(|d| d.label.ok_or_else(|| HarnessError::Unlabeled(d.id.clone()))).collect::<Result<_, _>>()?;
    let languages: Vec<String> = docs.iter().map(|d| d.lang.clone()).collect::<BTreeSet<_>>().into_iter().collect();

    let mut correctness: BTreeMap<PipelineVariant, Vec<f64>> = BTreeMap::new();
    let mut variants = Vec::new();
    for variant in PipelineVariant::ALL {
        let results = run_pipeline(pipeline, variant, docs, workers)?;
        let preds: Vec<Label> = results.iter().map(|r| r.prediction.label).collect();
        let overall = if docs.is_empty() {
            MetricSet { n: 0, accuracy: 0.0, macro_f1: 0.0, per_class_f1: BTreeMap::new() }
        } else {
            MetricSet::from_pairs(&preds, &golds)?
        };
        let mut per_language = BTreeMap::new();
        for lang in &languages {
            let (p, g): (Vec<Label>, Vec<Label>) =
                docs.iter().zip(preds.iter().zip(&golds)).filter(|(d, _)| &d.lang == lang).map(|(_, (p, g))| (*p, *g)).unzip();
            per_language.insert(lang.clone(), MetricSet::from_pairs(&p, &g)?);
        }
        correctness.insert(variant, preds.iter().zip(&golds).map(|(p, g)| f64::from(u8::from(p == g))).collect());
        variants.push(VariantReport {
            variant,
            overall,
            per_language,
            summary: summary_metrics(docs, &results, pipeline.summarizer.stemmers),
            gate: (variant == PipelineVariant::Hybrid).then(|| gate_stats(&results)),
        });
    }

    let mut comparisons = Vec::new();
    for baseline in [PipelineVariant::ExtractiveOnly, PipelineVariant::AbstractiveOnly] {
        let a = &correctness[&PipelineVariant::Hybrid];
        let b = &correctness[&baseline];
        if a.is_empty() {
            continue;
        }
        let test = wilcoxon_signed_rank(a, b)?;
        comparisons.push(Comparison { a: PipelineVariant::Hybrid, b: baseline, significant: test.p_value < ALPHA, test });
    }

    Ok(EvalReport {
        alpha: ALPHA,
        n_docs: docs.len(),
        languages,
        variants,
        comparisons,
        fingerprint: fingerprint(pipeline.summarizer.config, pipeline.scorer, pipeline.summarizer.tfidf),
        model_sizes: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub accuracy: f64,
    pub f1: f64,
    pub rouge1: f64,
    pub bleu: f64,
}

pub const TABLE_COLUMNS: [&str; 5] = ["Method", "Accuracy", "F1", "ROUGE-1", "BLEU"];

/// Aligned plain-text table: method left-aligned, numbers right-aligned to
/// two decimals, columns separated by two spaces.
pub fn render_table(rows: &[TableRow]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                format!("{:.2}", r.accuracy),
                format!("{:.2}", r.f1),
                format!("{:.2}", r.rouge1),
                format!("{:.2}", r.bleu),
            ]
        })
        .collect();
    let width = |c: usize| cells.iter().map(|r| r[c].chars().count()).chain([TABLE_COLUMNS[c].len()]).max().unwrap();
    let widths: Vec<usize> = (0..5).map(width).collect();
    let line = |row: [&str; 5]| {
        let mut s = format!("{:<w$}", row[0], w = widths[0]);
        for c in 1..5 {
            s.push_str(&format!("  {:>w$}", row[c], w = widths[c]));
        }
        s.push('\n');
        s
    };
    let mut out = line(TABLE_COLUMNS);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 8));
    out.push('\n');
    for r in &cells {
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3], &r[4]]));
    }
    out
}

impl EvalReport {
    /// One row per variant; the ROUGE-1 column is recall.
    pub fn table_rows(&self) -> Vec<TableRow> {
        self.variants
            .iter()
            .map(|v| TableRow {
                method: v.variant.display_name().to_string(),
                accuracy: v.overall.accuracy,
                f1: v.overall.macro_f1,
                rouge1: v.summary.rouge1.recall,
                bleu: v.summary.bleu,
            })
            .collect()
    }

    pub fn render_table(&self) -> String {
        let mut out = render_table(&self.table_rows());
        let self_ref = self.variants.first().map_or(0, |v| v.summary.n_self_referential);
        if self_ref > 0 {
            out.push_str(&format!(
                "note: {self_ref} of {} documents have no reference summary; their ROUGE-1/BLEU are self-referential (scored against the source)\n",
                self.n_docs
            ));
        }
        for c in &self.comparisons {
            out.push_str(&format!(
                "{} vs {}: W = {}, p = {:.4} ({}, n = {}){}\n",
                c.a,
                c.b,
                c.test.statistic,
                c.test.p_value,
                match c.test.method {
                    crate::metrics::TestMethod::Exact => "exact",
                    crate::metrics::TestMethod::NormalApproximation => "normal approx.",
                },
                c.test.n_effective,
                if c.significant { format!(", significant at alpha = {}", self.alpha) } else { String::new() }
            ));
        }
        out
    }

    pub fn variant(&self, v: PipelineVariant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub variant: PipelineVariant,
    pub docs: usize,
    pub repeats: usize,
    pub throughput_docs_per_s: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_sizes: Option<ModelSizes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_ratio: Option<f64>,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Single-threaded timing after one untimed warm-up pass.
pub fn bench(
    pipeline: &Pipeline,
    variant: PipelineVariant,
    docs: &[Document],
    repeats: usize,
    sizes: Option<ModelSizes>,
) -> Result<BenchReport, HarnessError> {
    for d in docs {
        pipeline.run_one(variant, d)?;
    }
    let mut latencies = Vec::with_capacity(docs.len() * repeats);
    let start = Instant::now();
    for _ in 0..repeats {
        for d in docs {
            let t = Instant::now();
            std::hint::black_box(pipeline.run_one(variant, d)?);
            latencies.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    let total = start.elapsed().as_secs_f64();
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len();
    Ok(BenchReport {
        variant,
        docs: docs.len(),
        repeats,
        throughput_docs_per_s: if n == 0 || total == 0.0 { 0.0 } else { n as f64 / total },
        p50_ms: percentile(&latencies, 0.5),
        p95_ms: percentile(&latencies, 0.95),
        mean_ms: if n == 0 { 0.0 } else { latencies.iter().sum::<f64>() / n as f64 },
        model_sizes: sizes,
        size_ratio: sizes.map(|s| s.ratio()),
    })
}

/// Convenience split used by the CLI and tests.
pub fn split(docs: &[Document], spec: &SplitSpec) -> Result<crate::corpus::Splits, HarnessError> {
    Ok(crate::corpus::split_dataset(docs, spec)?)
}
