//! Document model and JSON-lines corpus ingestion.
//!
//! A corpus file holds one record per line:
//!
//! ```text
//! {"id": "a", "lang": "en", "text": "good", "label": "positive",
//!  "token_langs": [[0, 4, "es"]], "reference": "optional gold summary"}
//! ```
//!
//! Blank lines are skipped. Unknown fields are ignored and counted.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Three-way sentiment polarity. The discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Negative, Label::Neutral, Label::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Neutral => "neutral",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(Label::Negative),
            "neutral" => Ok(Label::Neutral),
            "positive" => Ok(Label::Positive),
            other => Err(other.to_string()),
        }
    }
}

/// A byte range of a document written in a language other than the
/// document's own. Serialized as `[start, end, lang]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangSpan(pub usize, pub usize, pub String);

impl LangSpan {
    pub fn start(&self) -> usize {
        self.0
    }

    pub fn end(&self) -> usize {
        self.1
    }

    pub fn lang(&self) -> &str {
        &self.2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_langs: Option<Vec<LangSpan>>,
    /// Gold summary, when the corpus provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl Document {
    /// Builds a monolingual document and checks its invariants.
    pub fn new(
        id: impl Into<String>,
        lang: impl Into<String>,
        text: impl Into<String>,
        label: Option<Label>,
    ) -> Result<Self, InvalidDocument> {
        let doc = Document {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
            label,
            token_langs: None,
            reference: None,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn with_token_langs(mut self, spans: Vec<LangSpan>) -> Result<Self, InvalidDocument> {
        self.token_langs = Some(spans);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), InvalidDocument> {
        if self.id.is_empty() {
            return Err(InvalidDocument::EmptyId);
        }
        if !is_lang_code(&self.lang) {
            return Err(InvalidDocument::BadLang(self.lang.clone()));
        }
        if self.text.trim().is_empty() {
            return Err(InvalidDocument::EmptyText);
        }
        if let Some(spans) = &self.token_langs {
            let mut prev_end = 0usize;
            for (i, span) in spans.iter().enumerate() {
                if span.start() >= span.end() || span.end() > self.text.len() {
                    return Err(InvalidDocument::SpanOutOfBounds(i));
                }
                if !self.text.is_char_boundary(span.start()) || !self.text.is_char_boundary(span.end())
                {
                    return Err(InvalidDocument::SpanNotOnCharBoundary(i));
                }
                if i > 0 && span.start() < prev_end {
                    return Err(InvalidDocument::SpanOverlap(i));
                }
                if !is_lang_code(span.lang()) {
                    return Err(InvalidDocument::BadLang(span.lang().to_string()));
                }
                prev_end = span.end();
            }
        }
        Ok(())
    }

    /// Language of the byte at `offset`: the enclosing code-switch span, or
    /// the document language.
    pub fn lang_at(&self, offset: usize) -> &str {
        match &self.token_langs {
            Some(spans) => {
                let i = spans.partition_point(|s| s.start() <= offset);
                if i > 0 && offset < spans[i - 1].end() {
                    spans[i - 1].lang()
                } else {
                    &self.lang
                }
            }
            None => &self.lang,
        }
    }
}

fn is_lang_code(code: &str) -> bool {
    (2..=8).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase() || b == b'-')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidDocument {
    #[error("empty id")]
    EmptyId,
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("language code {0:?} is not a lowercase ISO-639 code")]
    BadLang(String),
    #[error("token_langs span {0} is empty or out of bounds")]
    SpanOutOfBounds(usize),
    #[error("token_langs span {0} does not fall on a UTF-8 character boundary")]
    SpanNotOnCharBoundary(usize),
    #[error("token_langs span {0} overlaps or precedes the previous span")]
    SpanOverlap(usize),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field {field:?}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field {field:?} has the wrong type")]
    WrongType { line: usize, field: &'static str },
    #[error("line {line}: unknown label {value:?}")]
    UnknownLabel { line: usize, value: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: InvalidDocument,
    },
}

/// Result of reading a corpus, with the count of ignored unknown fields.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub documents: Vec<Document>,
    pub unknown_fields: usize,
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    Ok(load_jsonl_report(path)?.documents)
}

pub fn load_jsonl_report(path: impl AsRef<Path>) -> Result<LoadReport, CorpusError> {
    let file = fs::File::open(path)?;
    read_jsonl(BufReader::new(file))
}

pub fn read_jsonl<R: Read>(reader: BufReader<R>) -> Result<LoadReport, CorpusError> {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (doc, unknown) = parse_record(&line, line_no)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: doc.id });
        }
        report.unknown_fields += unknown;
        report.documents.push(doc);
    }
    Ok(report)
}

const KNOWN_FIELDS: [&str; 6] = ["id", "lang", "text", "label", "token_langs", "reference"];

fn parse_record(line: &str, line_no: usize) -> Result<(Document, usize), CorpusError> {
    let map: Map<String, Value> = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;

    let required = |field: &'static str| -> Result<String, CorpusError> {
        match map.get(field) {
            None | Some(Value::Null) => Err(CorpusError::MissingField { line: line_no, field }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(CorpusError::WrongType { line: line_no, field }),
        }
    };
    let id = required("id")?;
    let lang = required("lang")?;
    let text = required("text")?;

    let label = match map.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.parse::<Label>().map_err(|value| CorpusError::UnknownLabel {
            line: line_no,
            value,
        })?),
        Some(_) => return Err(CorpusError::WrongType { line: line_no, field: "label" }),
    };
    let token_langs = match map.get("token_langs") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            Vec::<LangSpan>::deserialize(v)
                .map_err(|_| CorpusError::WrongType { line: line_no, field: "token_langs" })?,
        ),
    };
    let reference = match map.get("reference") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(CorpusError::WrongType { line: line_no, field: "reference" }),
    };
    let unknown = map.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())).count();

    let doc = Document { id, lang, text, label, token_langs, reference };
    doc.validate().map_err(|source| CorpusError::Invalid { line: line_no, source })?;
    Ok((doc, unknown))
}

pub fn write_jsonl<W: Write>(mut out: W, docs: &[Document]) -> io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_ratio: 0.8, val_ratio: 0.1, test_ratio: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("cannot split an empty corpus")]
    Empty,
    #[error("split ratios must lie in [0, 1] and sum to 1, got ({0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        let ratios = [self.train_ratio, self.val_ratio, self.test_ratio];
        let in_range = ratios.iter().all(|r| (0.0..=1.0).contains(r));
        if !in_range || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SplitError::BadRatios(ratios[0], ratios[1], ratios[2]));
        }
        Ok(())
    }
}

/// `floor(n * ratio)` with a small tolerance so that products like
/// `10 * 0.1` are not rounded down to the integer below.
pub(crate) fn floor_frac(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle followed by a floor-rounded partition. Documents left
/// over by rounding go to train.
pub fn split_dataset(docs: &[Document], spec: &SplitSpec) -> Result<Splits, SplitError> {
    spec.validate()?;
    if docs.is_empty() {
        return Err(SplitError::Empty);
    }
    let n = docs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let n_val = floor_frac(n, spec.val_ratio);
    let n_test = floor_frac(n, spec.test_ratio);
    let n_train = n - n_val - n_test;

    let pick = |range: std::ops::Range<usize>| -> Vec<Document> {
        order[range].iter().map(|&i| docs[i].clone()).collect()
    };
    Ok(Splits {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
    })
}
