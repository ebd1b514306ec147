//! TF-IDF sentence scoring and redundancy-aware sentence extraction.
//!
//! Each sentence gets a mixture of three signals, all in `[0, 1]`:
//! normalized TF-IDF salience, cosine similarity to the document centroid,
//! and the density of sentiment-lexicon hits. Extraction is greedy maximal
//! marginal relevance over those scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::lexicon::SentimentLexicon;
use crate::corpus::floor_frac;
use crate::textproc::TokenizedDocument;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractiveError {
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("TF-IDF model has not been fitted")]
    Unfitted,
    #[error("document {0:?} has no sentences")]
    NoSentences(String),
    #[error("invalid extractive config: {0}")]
    Config(String),
    #[error("{scores} scores for {sentences} sentences")]
    Misaligned { scores: usize, sentences: usize },
}

/// Document frequencies and smoothed inverse document frequencies,
/// `idf = ln((1 + n_docs) / (1 + df)) + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TfidfModel {
    vocab: HashMap<String, u32>,
    stems: Vec<String>,
    df: Vec<u32>,
    idf: Vec<f64>,
    n_docs: usize,
}

/// Serializable form of a [`TfidfModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfStats {
    pub n_docs: usize,
    /// `(stem, document frequency)`, sorted by stem.
    pub terms: Vec<(String, u32)>,
}

pub fn fit_tfidf(corpus: &[TokenizedDocument]) -> Result<TfidfModel, ExtractiveError> {
    if corpus.is_empty() {
        return Err(ExtractiveError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in corpus {
        let mut seen: Vec<&str> = doc.tokens().map(|t| t.stem.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        for stem in seen {
            *df.entry(stem).or_default() += 1;
        }
    }
    let stats = TfidfStats {
        n_docs: corpus.len(),
        terms: df.into_iter().map(|(s, c)| (s.to_string(), c)).collect(),
    };
    TfidfModel::from_stats(stats)
}

fn smoothed_idf(n_docs: usize, df: u32) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl TfidfModel {
    pub fn from_stats(stats: TfidfStats) -> Result<Self, ExtractiveError> {
        if stats.n_docs == 0 {
            return Err(ExtractiveError::EmptyCorpus);
        }
        let mut model = TfidfModel { n_docs: stats.n_docs, ..Default::default() };
        for (i, (stem, df)) in stats.terms.into_iter().enumerate() {
            let df = df.clamp(1, stats.n_docs as u32);
            model.vocab.insert(stem.clone(), i as u32);
            model.stems.push(stem);
            model.df.push(df);
            model.idf.push(smoothed_idf(stats.n_docs, df));
        }
        Ok(model)
    }

    pub fn stats(&self) -> TfidfStats {
        TfidfStats {
            n_docs: self.n_docs,
            terms: self.stems.iter().cloned().zip(self.df.iter().copied()).collect(),
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab_len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_fitted(&self) -> bool {
        self.n_docs > 0
    }

    pub fn index(&self, stem: &str) -> Option<u32> {
        self.vocab.get(stem).copied()
    }

    pub fn df(&self, stem: &str) -> u32 {
        self.index(stem).map_or(0, |i| self.df[i as usize])
    }

    /// Stems never seen during fitting get the `df = 0` value.
    pub fn idf(&self, stem: &str) -> f64 {
        match self.index(stem) {
            Some(i) => self.idf[i as usize],
            None => smoothed_idf(self.n_docs, 0),
        }
    }
}

/// Sparse non-negative vector sorted by term id.
pub type SparseVec = Vec<(u32, f64)>;

fn norm(v: &SparseVec) -> f64 {
    v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
}

fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractiveConfig {
    pub w_salience: f64,
    pub w_centroid: f64,
    pub w_lexicon: f64,
    pub budget_ratio: f64,
    pub mmr_lambda: f64,
}

impl Default for ExtractiveConfig {
    fn default() -> Self {
        ExtractiveConfig { w_salience: 0.5, w_centroid: 0.3, w_lexicon: 0.2, budget_ratio: 0.3, mmr_lambda: 0.7 }
    }
}

impl ExtractiveConfig {
    pub fn validate(&self) -> Result<(), ExtractiveError> {
        let w = [self.w_salience, self.w_centroid, self.w_lexicon];
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ExtractiveError::Config("weights must be non-negative and sum to 1".into()));
        }
        if !(self.budget_ratio > 0.0 && self.budget_ratio <= 1.0) {
            return Err(ExtractiveError::Config("budget_ratio must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(ExtractiveError::Config("mmr_lambda must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn budget(&self, n_sentences: usize) -> usize {
        floor_frac(n_sentences, self.budget_ratio).max(1).min(n_sentences)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub salience: f64,
    pub centroid: f64,
    pub lexicon: f64,
    pub score: f64,
}

/// Per-sentence scores plus the tf·idf vectors they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentScores {
    pub sentences: Vec<SentenceScore>,
    pub vectors: Vec<SparseVec>,
    /// tf·idf weight of every token within its sentence, aligned with
    /// `doc.sentences[i].tokens`.
    pub token_weights: Vec<Vec<f64>>,
}

impl DocumentScores {
    pub fn scores(&self) -> Vec<f64> {
        self.sentences.iter().map(|s| s.score).collect()
    }
}

pub fn score_sentences(
    doc: &TokenizedDocument,
    model: &TfidfModel,
    lexicon: &SentimentLexicon,
    cfg: &ExtractiveConfig,
) -> Result<DocumentScores, ExtractiveError> {
    if !model.is_fitted() {
        return Err(ExtractiveError::Unfitted);
    }
    if doc.sentences.is_empty() {
        return Err(ExtractiveError::NoSentences(doc.id.clone()));
    }
    cfg.validate()?;

    // Out-of-vocabulary stems get document-local ids past the vocabulary.
    let mut oov: HashMap<&str, u32> = HashMap::new();
    let mut vectors = Vec::with_capacity(doc.sentences.len());
    let mut token_weights = Vec::with_capacity(doc.sentences.len());
    let mut mean_weight = Vec::with_capacity(doc.sentences.len());
    let mut lex_density = Vec::with_capacity(doc.sentences.len());

    for sentence in &doc.sentences {
        let mut ids = Vec::with_capacity(sentence.tokens.len());
        let mut counts: BTreeMap<u32, (u32, f64)> = BTreeMap::new();
        let mut hits = 0usize;
        for tok in &sentence.tokens {
            let id = model.index(&tok.stem).unwrap_or_else(|| {
                let next = model.vocab_len() as u32 + oov.len() as u32;
                *oov.entry(tok.stem.as_str()).or_insert(next)
            });
            ids.push(id);
            counts.entry(id).or_insert((0, model.idf(&tok.stem))).0 += 1;
            if lexicon.is_hit(tok) {
                hits += 1;
            }
        }
        let vector: SparseVec = counts.iter().map(|(&id, &(tf, idf))| (id, tf as f64 * idf)).collect();
        let weights: Vec<f64> = ids
            .iter()
            .map(|id| {
                let (tf, idf) = counts[id];
                tf as f64 * idf
            })
            .collect();
        mean_weight.push(if vector.is_empty() {
            0.0
        } else {
            vector.iter().map(|(_, w)| w).sum::<f64>() / vector.len() as f64
        });
        lex_density.push(if sentence.tokens.is_empty() { 0.0 } else { hits as f64 / sentence.tokens.len() as f64 });
        vectors.push(vector);
        token_weights.push(weights);
    }

    let centroid = centroid(&vectors);
    let max_weight = mean_weight.iter().copied().fold(0.0, f64::max);
    let sentences = vectors
        .iter()
        .zip(mean_weight.iter().zip(&lex_density))
        .map(|(v, (&mean, &lexicon))| {
            let salience = if max_weight > 0.0 { mean / max_weight } else { 0.0 };
            let centroid = cosine(v, &centroid);
            let score = cfg.w_salience * salience + cfg.w_centroid * centroid + cfg.w_lexicon * lexicon;
            SentenceScore { salience, centroid, lexicon, score }
        })
        .collect();
    Ok(DocumentScores { sentences, vectors, token_weights })
}

fn centroid(vectors: &[SparseVec]) -> SparseVec {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for v in vectors {
        for &(id, x) in v {
            *acc.entry(id).or_default() += x;
        }
    }
    let n = vectors.len().max(1) as f64;
    acc.into_iter().map(|(id, x)| (id, x / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveSummary {
    /// `(sentence index, score)` in document order.
    pub selected: Vec<(usize, f64)>,
    pub text: String,
}

impl ExtractiveSummary {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|&(i, _)| i)
    }
}

/// Greedy MMR selection: each round picks the unselected sentence
/// maximizing `λ·score − (1 − λ)·max_sim_to_selected`, lowest index on ties.
pub fn extract_summary(
    doc: &TokenizedDocument,
    scores: &DocumentScores,
    cfg: &ExtractiveConfig,
) -> Result<ExtractiveSummary, ExtractiveError> {
    let n = doc.sentences.len();
    if scores.sentences.len() != n || scores.vectors.len() != n {
        return Err(ExtractiveError::Misaligned { scores: scores.sentences.len(), sentences: n });
    }
    if n == 0 {
        return Err(ExtractiveError::NoSentences(doc.id.clone()));
    }
    let picks = mmr_select(&scores.scores(), &scores.vectors, cfg.budget(n), cfg.mmr_lambda);
    let mut selected: Vec<(usize, f64)> = picks.into_iter().map(|i| (i, scores.sentences[i].score)).collect();
    selected.sort_by_key(|&(i, _)| i);
    let text = selected.iter().map(|&(i, _)| doc.sentences[i].text.as_str()).collect::<Vec<_>>().join(" ");
    Ok(ExtractiveSummary { selected, text })
}

/// Returns sentence indices in pick order.
///
/// Similarities to the newest pick are accumulated through an inverted
/// index, so each round only touches sentences sharing a term with it.
pub fn mmr_select(scores: &[f64], vectors: &[SparseVec], k: usize, lambda: f64) -> Vec<usize> {
    let n = scores.len();
    let norms: Vec<f64> = vectors.iter().map(norm).collect();
    let mut postings: HashMap<u32, Vec<(usize, f64)>> = HashMap::new();
    for (s, v) in vectors.iter().enumerate() {
        for &(id, x) in v {
            postings.entry(id).or_default().push((s, x));
        }
    }

    let mut max_sim = vec![0.0f64; n];
    let mut taken = vec![false; n];
    let mut dots = vec![0.0f64; n];
    let mut touched = Vec::new();
    let mut order = Vec::with_capacity(k);

    for _ in 0..k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for s in 0..n {
            if taken[s] {
                continue;
            }
            let value = lambda * scores[s] - (1.0 - lambda) * max_sim[s];
            if best.is_none_or(|(_, b)| value > b) {
                best = Some((s, value));
            }
        }
        let Some((pick, _)) = best else { break };
        taken[pick] = true;
        order.push(pick);

        if norms[pick] == 0.0 {
            continue;
        }
        for &(id, x) in &vectors[pick] {
            for &(s, y) in &postings[&id] {
                if !taken[s] {
                    if dots[s] == 0.0 {
                        touched.push(s);
                    }
                    dots[s] += x * y;
                }
            }
        }
        for s in touched.drain(..) {
            let sim = (dots[s] / (norms[pick] * norms[s])).clamp(0.0, 1.0);
            max_sim[s] = max_sim[s].max(sim);
            dots[s] = 0.0;
        }
    }
    order
}
