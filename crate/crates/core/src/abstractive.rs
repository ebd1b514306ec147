//! Compression of the extractive summary and the ROUGE-1 acceptance gate.
//!
//! A [`Backend`] turns the extractive text into a shorter candidate. The
//! built-in [`DeletionCompressor`] drops low-salience tokens; with the
//! `remote` feature, [`RemoteBackend`] asks an HTTP model server instead.
//! [`gated_summarize`] accepts a candidate only if its ROUGE-1 recall
//! against the extractive text clears a context-dependent threshold, and
//! otherwise retries with gentler compression before falling back to the
//! extractive text verbatim.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::floor_frac;
use crate::extractive::{DocumentScores, ExtractiveSummary};
use crate::lexicon::SentimentLexicon;
use crate::metrics::rouge1;
use crate::textproc::{tokenize_text, Stemmers, Token, TokenizedDocument};

pub const DEFAULT_LOW_RESOURCE_LANGS: [&str; 4] = ["ar", "bg", "fi", "hu"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbstractiveError {
    #[error("invalid gate config: {0}")]
    Gate(String),
    #[error("invalid compressor config: {0}")]
    Compressor(String),
    #[error("{tokens} tokens but {salience} salience values")]
    Misaligned { tokens: usize, salience: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub tau: f64,
    pub margin: f64,
    pub low_resource_langs: BTreeSet<String>,
    pub short_doc_sentences: usize,
    pub max_retries: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            tau: 0.65,
            margin: 0.05,
            low_resource_langs: DEFAULT_LOW_RESOURCE_LANGS.iter().map(|s| s.to_string()).collect(),
            short_doc_sentences: 3,
            max_retries: 1,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), AbstractiveError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(AbstractiveError::Gate("tau must be in (0, 1)".into()));
        }
        if !(self.margin >= 0.0 && self.margin < self.tau) {
            return Err(AbstractiveError::Gate("margin must be in [0, tau)".into()));
        }
        Ok(())
    }
}

/// Rounds away binary noise such as `0.65 - 0.05 = 0.6000000000000001`.
fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// `tau`, lowered by `margin` for a low-resource language and again for a
/// short document, clamped to `[tau - margin, tau + margin]`.
pub fn effective_threshold(lang: &str, n_sentences: usize, cfg: &GateConfig) -> f64 {
    let mut t = cfg.tau;
    if cfg.low_resource_langs.contains(lang) {
        t -= cfg.margin;
    }
    if n_sentences < cfg.short_doc_sentences {
        t -= cfg.margin;
    }
    round12(t.clamp(cfg.tau - cfg.margin, cfg.tau + cfg.margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressorConfig {
    pub deletion_quantile: f64,
    pub relax_step: f64,
    pub min_tokens: usize,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        CompressorConfig { deletion_quantile: 0.3, relax_step: 0.1, min_tokens: 5 }
    }
}

impl CompressorConfig {
    pub fn validate(&self) -> Result<(), AbstractiveError> {
        if !(0.0..1.0).contains(&self.deletion_quantile) {
            return Err(AbstractiveError::Compressor("deletion_quantile must be in [0, 1)".into()));
        }
        if !(self.relax_step > 0.0) {
            return Err(AbstractiveError::Compressor("relax_step must be positive".into()));
        }
        Ok(())
    }
}

/// How many of `n` tokens a compression at `quantile` may delete.
pub fn deletion_budget(n: usize, quantile: f64, min_tokens: usize) -> usize {
    floor_frac(n, quantile).min(n.saturating_sub(min_tokens))
}

/// What a backend gets to work with: the extractive text and its tokens,
/// with per-token salience and protection flags.
#[derive(Debug, Clone)]
pub struct CompressionRequest<'a> {
    pub text: &'a str,
    pub lang: &'a str,
    pub tokens: &'a [Token],
    pub salience: &'a [f64],
    pub protected: &'a [bool],
    pub deletion_quantile: f64,
    pub min_tokens: usize,
}

impl CompressionRequest<'_> {
    pub fn max_tokens(&self) -> usize {
        self.tokens.len() - deletion_budget(self.tokens.len(), self.deletion_quantile, self.min_tokens)
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, req: &CompressionRequest) -> Result<String, BackendError>;
}

fn final_terminator(text: &str) -> Option<char> {
    text.trim_end().chars().last().filter(|c| matches!(c, '.' | '!' | '?' | '؟' | '。'))
}

fn compress_tokens(
    text: &str,
    tokens: &[Token],
    salience: &[f64],
    protected: &[bool],
    quantile: f64,
    min_tokens: usize,
) -> String {
    let budget = deletion_budget(tokens.len(), quantile, min_tokens);
    let mut order: Vec<usize> = (0..tokens.len()).filter(|&i| !protected[i]).collect();
    order.sort_by(|&a, &b| salience[a].total_cmp(&salience[b]).then(a.cmp(&b)));
    let mut keep = vec![true; tokens.len()];
    for &i in order.iter().take(budget) {
        keep[i] = false;
    }
    let mut out = tokens
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(t, _)| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    if let Some(c) = final_terminator(text) {
        out.push(c);
    }
    out
}

/// Deletes the lowest-salience `deletion_quantile` of the tokens (lower
/// index first among equals), never touching lexicon hits or negators, and
/// never going below `min_tokens`. Kept tokens are joined by single spaces
/// and the text's final terminator is reattached.
pub fn compress(
    text: &str,
    tokens: &[Token],
    salience: &[f64],
    lexicon: &SentimentLexicon,
    cfg: &CompressorConfig,
) -> Result<String, AbstractiveError> {
    cfg.validate()?;
    if tokens.len() != salience.len() {
        return Err(AbstractiveError::Misaligned { tokens: tokens.len(), salience: salience.len() });
    }
    let protected: Vec<bool> = tokens.iter().map(|t| lexicon.is_hit(t)).collect();
    Ok(compress_tokens(text, tokens, salience, &protected, cfg.deletion_quantile, cfg.min_tokens))
}

/// The built-in deterministic backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeletionCompressor;

impl Backend for DeletionCompressor {
    fn name(&self) -> &str {
        "deletion"
    }

    fn generate(&self, req: &CompressionRequest) -> Result<String, BackendError> {
        Ok(compress_tokens(req.text, req.tokens, req.salience, req.protected, req.deletion_quantile, req.min_tokens))
    }
}

#[cfg(feature = "remote")]
pub use remote::{RemoteBackend, RemoteConfig};

#[cfg(feature = "remote")]
mod remote {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{Backend, BackendError, CompressionRequest};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    pub struct RemoteConfig {
        /// Base URL; requests go to `<endpoint>/v1/compress`.
        pub endpoint: String,
        pub timeout_ms: u64,
    }

    impl Default for RemoteConfig {
        fn default() -> Self {
            RemoteConfig { endpoint: "http://127.0.0.1:8080".into(), timeout_ms: 10_000 }
        }
    }

    /// Client for an external compression server.
    #[derive(Debug, Clone)]
    pub struct RemoteBackend {
        url: String,
        agent: ureq::Agent,
    }

    #[derive(Serialize)]
    struct Request<'a> {
        text: &'a str,
        lang: &'a str,
        max_tokens: usize,
    }

    #[derive(Deserialize)]
    struct Response {
        summary: String,
    }

    enum Failure {
        Timeout(String),
        Other(BackendError),
    }

    impl RemoteBackend {
        pub fn new(cfg: &RemoteConfig) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
                .http_status_as_error(false)
                .build()
                .into();
            let base = cfg.endpoint.trim_end_matches('/');
            RemoteBackend { url: format!("{base}/v1/compress"), agent }
        }

        pub fn url(&self) -> &str {
            &self.url
        }

        fn attempt(&self, body: &Request) -> Result<String, Failure> {
            let classify = |e: ureq::Error| match e {
                ureq::Error::Timeout(_) => Failure::Timeout(e.to_string()),
                ureq::Error::Io(ref io)
                    if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) =>
                {
                    Failure::Timeout(e.to_string())
                }
                other => Failure::Other(BackendError::Unavailable(other.to_string())),
            };
            let mut resp = self.agent.post(&self.url).send_json(body).map_err(classify)?;
            let status = resp.status().as_u16();
            if status != 200 {
                return Err(Failure::Other(BackendError::Unavailable(format!("status {status}"))));
            }
            let text = resp.body_mut().read_to_string().map_err(classify)?;
            serde_json::from_str::<Response>(&text)
                .map(|r| r.summary)
                .map_err(|e| Failure::Other(BackendError::MalformedResponse(e.to_string())))
        }

        /// One POST per call, plus exactly one retry if the first times out.
        pub fn remote_generate(&self, text: &str, lang: &str, max_tokens: usize) -> Result<String, BackendError> {
            let body = Request { text, lang, max_tokens };
            match self.attempt(&body) {
                Ok(s) => Ok(s),
                Err(Failure::Other(e)) => Err(e),
                Err(Failure::Timeout(_)) => match self.attempt(&body) {
                    Ok(s) => Ok(s),
                    Err(Failure::Other(e)) => Err(e),
                    Err(Failure::Timeout(msg)) => Err(BackendError::Unavailable(format!("timed out twice: {msg}"))),
                },
            }
        }
    }

    impl Backend for RemoteBackend {
        fn name(&self) -> &str {
            "remote"
        }

        fn generate(&self, req: &CompressionRequest) -> Result<String, BackendError> {
            self.remote_generate(req.text, req.lang, req.max_tokens())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Retried,
    FellBack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub deletion_quantile: f64,
    pub effective_tau: f64,
    pub rouge1: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryResult {
    pub text: String,
    pub extractive_text: String,
    pub verdict: Verdict,
    pub decisions: Vec<GateDecision>,
}

/// The extractive summary of one document, ready for compression.
#[derive(Debug, Clone)]
pub struct GateInput {
    pub lang: String,
    /// Sentence count of the whole document.
    pub n_sentences: usize,
    pub extractive_text: String,
    pub tokens: Vec<Token>,
    pub salience: Vec<f64>,
}

impl GateInput {
    /// Tokens of the selected sentences with their tf·idf weights as
    /// salience.
    pub fn from_extractive(doc: &TokenizedDocument, scores: &DocumentScores, summary: &ExtractiveSummary) -> Self {
        let mut tokens = Vec::new();
        let mut salience = Vec::new();
        for i in summary.indices() {
            tokens.extend(doc.sentences[i].tokens.iter().cloned());
            salience.extend(&scores.token_weights[i]);
        }
        GateInput {
            lang: doc.lang.clone(),
            n_sentences: doc.sentences.len(),
            extractive_text: summary.text.clone(),
            tokens,
            salience,
        }
    }
}

/// ROUGE-1 recall of `candidate` against `reference`, both tokenized and
/// stemmed as `lang`.
pub fn gate_rouge(candidate: &str, reference: &str, lang: &str, stemmers: &Stemmers) -> f64 {
    let stems = |s: &str| tokenize_text(s, lang, stemmers).into_iter().map(|t| t.stem).collect::<Vec<_>>();
    rouge1(&stems(candidate), &stems(reference)).recall
}

pub struct Gate<'a> {
    pub backend: &'a dyn Backend,
    pub lexicon: &'a SentimentLexicon,
    pub stemmers: &'a Stemmers,
    pub gate: &'a GateConfig,
    pub compressor: &'a CompressorConfig,
}

impl Gate<'_> {
    fn request<'b>(&self, input: &'b GateInput, protected: &'b [bool], quantile: f64) -> CompressionRequest<'b> {
        CompressionRequest {
            text: &input.extractive_text,
            lang: &input.lang,
            tokens: &input.tokens,
            salience: &input.salience,
            protected,
            deletion_quantile: quantile,
            min_tokens: self.compressor.min_tokens,
        }
    }

    fn protected(&self, input: &GateInput) -> Vec<bool> {
        input.tokens.iter().map(|t| self.lexicon.is_hit(t)).collect()
    }

    /// Backend output without the gate; backend failure yields the
    /// extractive text.
    pub fn ungated(&self, input: &GateInput) -> Result<(String, Option<BackendError>), AbstractiveError> {
        self.compressor.validate()?;
        let protected = self.protected(input);
        match self.backend.generate(&self.request(input, &protected, self.compressor.deletion_quantile)) {
            Ok(s) => Ok((s, None)),
            Err(e) => Ok((input.extractive_text.clone(), Some(e))),
        }
    }

    /// Candidate, check, then at most `max_retries` retries with
    /// `deletion_quantile` lowered by `relax_step` each time (floor 0).
    /// Failing every attempt, or any backend error, returns the extractive
    /// text unchanged.
    pub fn summarize(&self, input: &GateInput) -> Result<SummaryResult, AbstractiveError> {
        self.gate.validate()?;
        self.compressor.validate()?;
        if input.tokens.len() != input.salience.len() {
            return Err(AbstractiveError::Misaligned { tokens: input.tokens.len(), salience: input.salience.len() });
        }
        let tau = effective_threshold(&input.lang, input.n_sentences, self.gate);
        let protected = self.protected(input);
        let mut quantile = self.compressor.deletion_quantile;
        let mut decisions = Vec::new();
        let fallback = |decisions| SummaryResult {
            text: input.extractive_text.clone(),
            extractive_text: input.extractive_text.clone(),
            verdict: Verdict::FellBack,
            decisions,
        };
        for attempt in 0..=self.gate.max_retries {
            let candidate = match self.backend.generate(&self.request(input, &protected, quantile)) {
                Ok(c) => c,
                Err(e) => {
                    decisions.push(GateDecision {
                        deletion_quantile: quantile,
                        effective_tau: tau,
                        rouge1: 0.0,
                        verdict: Verdict::FellBack,
                        error: Some(e.to_string()),
                    });
                    return Ok(fallback(decisions));
                }
            };
            let r = gate_rouge(&candidate, &input.extractive_text, &input.lang, self.stemmers);
            if r >= tau {
                decisions.push(GateDecision { deletion_quantile: quantile, effective_tau: tau, rouge1: r, verdict: Verdict::Accepted, error: None });
                return Ok(SummaryResult {
                    text: candidate,
                    extractive_text: input.extractive_text.clone(),
                    verdict: Verdict::Accepted,
                    decisions,
                });
            }
            let last = attempt == self.gate.max_retries;
            decisions.push(GateDecision {
                deletion_quantile: quantile,
                effective_tau: tau,
                rouge1: r,
                verdict: if last { Verdict::FellBack } else { Verdict::Retried },
                error: None,
            });
            quantile = round12((quantile - self.compressor.relax_step).max(0.0));
        }
        Ok(fallback(decisions))
    }
}

pub fn gated_summarize(
    input: &GateInput,
    backend: &dyn Backend,
    lexicon: &SentimentLexicon,
    stemmers: &Stemmers,
    gate: &GateConfig,
    compressor: &CompressorConfig,
) -> Result<SummaryResult, AbstractiveError> {
    Gate { backend, lexicon, stemmers, gate, compressor }.summarize(input)
}
