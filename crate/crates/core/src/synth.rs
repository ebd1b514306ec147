//! Seeded synthetic corpora for tests, benchmarks and the browser demo.
//!
//! Each language gets a vocabulary of pronounceable pseudo-word stems,
//! split into filler words and three groups of polar words recorded in a
//! matching lexicon. Surface forms carry suffixes the built-in stemmer
//! strips, so stemming is exercised. A document holds a few signal
//! sentences dense in words of its class, buried among filler sentences
//! that occasionally contain one word of a different class.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Label, LangSpan};
use crate::lexicon::SentimentLexicon;
use crate::textproc::Stemmers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub langs: Vec<String>,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub signal_sentences: usize,
    pub polar_per_signal: usize,
    /// Chance that a filler sentence carries one word of another class.
    pub stray_prob: f64,
    /// Chance that one signal sentence is written in a second language.
    pub code_switch_prob: f64,
    pub polar_words_per_class: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 600,
            langs: vec!["en".into(), "es".into(), "fi".into()],
            min_sentences: 12,
            max_sentences: 20,
            signal_sentences: 2,
            polar_per_signal: 3,
            stray_prob: 0.3,
            code_switch_prob: 0.1,
            polar_words_per_class: 12,
            filler_words: 300,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
struct Vocab {
    lang: String,
    filler: Vec<String>,
    /// Indexed by `Label::index()`.
    polar: [Vec<String>; 3],
    suffixes: &'static [&'static str],
}

fn suffixes(lang: &str) -> &'static [&'static str] {
    match lang {
        "en" => &["", "s", "ed", "ing"],
        "es" => &["", "os", "as", "es"],
        "fi" => &["", "ssa", "lla", "t"],
        _ => &[""],
    }
}

const CONSONANTS: &[u8] = b"bdgklmnprstv";
const VOWELS: &[u8] = b"aeiou";
const CODAS: &[u8] = b"kmpr";

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    w.push(*CODAS.choose(rng).unwrap() as char);
    w
}

/// A stem is usable when it and all its suffixed forms stem back to it.
fn stable(stem: &str, lang: &str, stemmers: &Stemmers) -> bool {
    suffixes(lang).iter().all(|s| stemmers.stem(&format!("{stem}{s}"), lang) == stem)
}

pub const POLAR_WEIGHTS: [f64; 3] = [-0.8, 0.1, 0.8];

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    pub lexicon: SentimentLexicon,
    vocabs: Vec<Vocab>,
}

fn build_vocabs(cfg: &SynthConfig, stemmers: &Stemmers, rng: &mut ChaCha8Rng) -> Vec<Vocab> {
    let mut seen = BTreeSet::new();
    let mut fresh = |lang: &str, rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if stable(&w, lang, stemmers) && seen.insert(w.clone()) {
            return w;
        }
    };
    cfg.langs
        .iter()
        .map(|lang| {
            let polar = [0, 1, 2].map(|_| (0..cfg.polar_words_per_class).map(|_| fresh(lang, rng)).collect());
            let filler = (0..cfg.filler_words).map(|_| fresh(lang, rng)).collect();
            Vocab { lang: lang.clone(), filler, polar, suffixes: suffixes(lang) }
        })
        .collect()
}

fn lexicon_for(vocabs: &[Vocab]) -> SentimentLexicon {
    let mut lex = SentimentLexicon::new();
    for v in vocabs {
        for (c, words) in v.polar.iter().enumerate() {
            for w in words {
                lex.insert(&v.lang, w, POLAR_WEIGHTS[c]).expect("weights in range");
            }
        }
    }
    lex
}

fn surface(stem: &str, vocab: &Vocab, rng: &mut ChaCha8Rng) -> String {
    format!("{stem}{}", vocab.suffixes.choose(rng).unwrap())
}

fn capitalized(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.chars().next() {
        let upper: String = first.to_uppercase().collect();
        s.replace_range(..first.len_utf8(), &upper);
    }
    s.push('.');
    s
}

fn filler_sentence(vocab: &Vocab, len: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..len).map(|_| surface(vocab.filler.choose(rng).unwrap(), vocab, rng)).collect()
}

fn with_polar(mut words: Vec<String>, polar: &[String], count: usize, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Vec<String> {
    for _ in 0..count {
        let w = surface(polar.choose(rng).unwrap(), vocab, rng);
        let at = rng.random_range(0..=words.len());
        words.insert(at, w);
    }
    words
}

impl SynthCorpus {
    pub fn generate(cfg: &SynthConfig, stemmers: &Stemmers) -> SynthCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vocabs = build_vocabs(cfg, stemmers, &mut rng);
        let lexicon = lexicon_for(&vocabs);
        let mut corpus = SynthCorpus { docs: Vec::with_capacity(cfg.n_docs), lexicon, vocabs };
        for i in 0..cfg.n_docs {
            let label = Label::ALL[i % 3];
            let lang_ix = (i / 3) % cfg.langs.len();
            let doc = corpus.document(cfg, &format!("syn-{i:04}"), lang_ix, label, &mut rng);
            corpus.docs.push(doc);
        }
        corpus
    }

    fn document(&self, cfg: &SynthConfig, id: &str, lang_ix: usize, label: Label, rng: &mut ChaCha8Rng) -> Document {
        let vocab = &self.vocabs[lang_ix];
        let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences).max(cfg.signal_sentences);
        let mut slots: Vec<usize> = (0..n).collect();
        slots.shuffle(rng);
        let signal: BTreeSet<usize> = slots[..cfg.signal_sentences].iter().copied().collect();
        let switched = (self.vocabs.len() > 1 && rng.random_bool(cfg.code_switch_prob))
            .then(|| {
                let other = (lang_ix + rng.random_range(1..self.vocabs.len())) % self.vocabs.len();
                (*signal.iter().next().unwrap(), other)
            });

        let mut text = String::new();
        let mut spans = Vec::new();
        let mut reference = Vec::new();
        for s in 0..n {
            let len = rng.random_range(6..=10);
            let (v, words) = if signal.contains(&s) {
                let v = match switched {
                    Some((at, other)) if at == s => &self.vocabs[other],
                    _ => vocab,
                };
                let words = filler_sentence(v, len, rng);
                (v, with_polar(words, &v.polar[label.index()], cfg.polar_per_signal, v, rng))
            } else {
                let words = filler_sentence(vocab, len, rng);
                let words = if rng.random_bool(cfg.stray_prob) {
                    let other = Label::ALL.iter().filter(|&&l| l != label).collect::<Vec<_>>();
                    let stray = other.choose(rng).unwrap();
                    with_polar(words, &vocab.polar[stray.index()], 1, vocab, rng)
                } else {
                    words
                };
                (vocab, words)
            };
            let sentence = capitalized(&words);
            if !text.is_empty() {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(&sentence);
            if v.lang != vocab.lang {
                spans.push(LangSpan(start, text.len(), v.lang.clone()));
            }
            if signal.contains(&s) {
                reference.push(sentence);
            }
        }
        let mut doc = Document::new(id, &vocab.lang, text, Some(label)).expect("generated text is valid");
        if !spans.is_empty() {
            doc = doc.with_token_langs(spans).expect("spans lie on sentence boundaries");
        }
        doc.reference = Some(reference.join(" "));
        doc
    }

    /// An unlabeled filler document of about `n_tokens` tokens in the first
    /// language, with one signal sentence per 100 tokens.
    pub fn sized_document(&self, id: &str, n_tokens: usize, seed: u64) -> Document {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = &self.vocabs[0];
        let mut sentences = Vec::new();
        let mut count = 0;
        while count < n_tokens.max(1) {
            let len = rng.random_range(6..=10).min(n_tokens.max(1) - count).max(1);
            let words = if sentences.len() % 10 == 0 && len > 1 {
                let class = Label::ALL[sentences.len() / 10 % 3];
                let words = filler_sentence(vocab, len - 1, &mut rng);
                with_polar(words, &vocab.polar[class.index()], 1, vocab, &mut rng)
            } else {
                filler_sentence(vocab, len, &mut rng)
            };
            count += words.len();
            sentences.push(capitalized(&words));
        }
        Document::new(id, &vocab.lang, sentences.join(" "), None).expect("generated text is valid")
    }
}
