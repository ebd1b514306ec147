//! Per-language sentiment lexicon keyed by stem.
//!
//! File format: TSV with columns `lang`, `stem`, `weight`. A weight column
//! of `NEG` marks a negator instead of a polar entry.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{Stemmers, Token};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentLexicon {
    entries: BTreeMap<String, BTreeMap<String, f64>>,
    negators: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon line {line}: expected `lang<TAB>stem<TAB>weight`")]
    Columns { line: usize },
    #[error("lexicon line {line}: weight must be a number in [-1, 1] or NEG")]
    Weight { line: usize },
    #[error("{lang}:{stem} is a negator and also has a zero-weight entry")]
    NegatorConflict { lang: String, stem: String },
    #[error("weight {0} outside [-1, 1]")]
    OutOfBounds(f64),
}

const BUILTIN: &str = include_str!("../data/lexicon/builtin.tsv");

impl SentimentLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Small hand-written lexicon for en, es, fi, hu, bg and ar, stemmed
    /// with the supplied rules.
    pub fn builtin(stemmers: &Stemmers) -> Self {
        Self::parse(BUILTIN, |lang, word| stemmers.stem(&word.to_lowercase(), lang))
            .expect("builtin lexicon parses")
    }

    /// Parses a lexicon whose second column already holds stems.
    pub fn from_tsv(tsv: &str) -> Result<Self, LexiconError> {
        Self::parse(tsv, |_, stem| stem.to_string())
    }

    /// Parses a lexicon whose second column holds surface words; each is
    /// lowercased and stemmed with its language's rules.
    pub fn from_words_tsv(tsv: &str, stemmers: &Stemmers) -> Result<Self, LexiconError> {
        Self::parse(tsv, |lang, word| stemmers.stem(&word.to_lowercase(), lang))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    fn parse(tsv: &str, key: impl Fn(&str, &str) -> String) -> Result<Self, LexiconError> {
        let mut lex = Self::default();
        for (i, line) in tsv.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 3 || cols[0].is_empty() || cols[1].is_empty() {
                return Err(LexiconError::Columns { line: line_no });
            }
            let stem = key(cols[0], cols[1]);
            if cols[2] == "NEG" {
                lex.add_negator(cols[0], &stem)?;
            } else {
                let weight: f64 = cols[2].parse().map_err(|_| LexiconError::Weight { line: line_no })?;
                lex.insert(cols[0], &stem, weight)
                    .map_err(|e| match e {
                        LexiconError::OutOfBounds(_) => LexiconError::Weight { line: line_no },
                        other => other,
                    })?;
            }
        }
        Ok(lex)
    }

    pub fn insert(&mut self, lang: &str, stem: &str, weight: f64) -> Result<(), LexiconError> {
        if !(-1.0..=1.0).contains(&weight) {
            return Err(LexiconError::OutOfBounds(weight));
        }
        if weight == 0.0 && self.is_negator(lang, stem) {
            return Err(LexiconError::NegatorConflict { lang: lang.into(), stem: stem.into() });
        }
        self.entries.entry(lang.to_string()).or_default().insert(stem.to_string(), weight);
        Ok(())
    }

    pub fn add_negator(&mut self, lang: &str, stem: &str) -> Result<(), LexiconError> {
        if self.polarity(lang, stem) == Some(0.0) {
            return Err(LexiconError::NegatorConflict { lang: lang.into(), stem: stem.into() });
        }
        self.negators.entry(lang.to_string()).or_default().insert(stem.to_string());
        Ok(())
    }

    pub fn polarity(&self, lang: &str, stem: &str) -> Option<f64> {
        self.entries.get(lang)?.get(stem).copied()
    }

    pub fn is_negator(&self, lang: &str, stem: &str) -> bool {
        self.negators.get(lang).is_some_and(|s| s.contains(stem))
    }

    /// A token counts as a lexicon hit when it carries non-zero polarity or
    /// is a negator.
    pub fn is_hit(&self, token: &Token) -> bool {
        self.is_negator(&token.lang, &token.stem)
            || self.polarity(&token.lang, &token.stem).is_some_and(|w| w != 0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum::<usize>()
            + self.negators.values().map(BTreeSet::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (lang, stems) in &self.entries {
            for (stem, w) in stems {
                out.push_str(&format!("{lang}\t{stem}\t{w}\n"));
            }
        }
        for (lang, stems) in &self.negators {
            for stem in stems {
                out.push_str(&format!("{lang}\t{stem}\tNEG\n"));
            }
        }
        out
    }
}
