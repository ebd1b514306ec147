//! Sentence segmentation, tokenization, longest-match suffix stemming and
//! token-level language tagging.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub stem: String,
    pub lang: String,
    /// Byte offsets into the parent document.
    pub byte_start: usize,
    pub byte_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub byte_start: usize,
    pub byte_end: usize,
    /// Empty until the sentence has gone through [`preprocess`].
    pub tokens: Vec<Token>,
}

const TERMINATORS: [char; 5] = ['.', '!', '?', '؟', '。'];

/// Rule-based segmentation: a sentence ends at a terminator followed by
/// whitespace or end of text. A period right after a lone uppercase letter
/// (an initial, as in "A. Smith") does not end a sentence.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut prev: [Option<char>; 2] = [None, None];

    for (i, c) in text.char_indices() {
        let next = i + c.len_utf8();
        let ends = TERMINATORS.contains(&c)
            && text[next..].chars().next().is_none_or(char::is_whitespace)
            && !(c == '.' && is_initial(prev));
        if ends {
            push_trimmed(text, start, next, &mut out);
            start = next;
        }
        prev = [prev[1], Some(c)];
    }
    push_trimmed(text, start, text.len(), &mut out);
    out
}

fn is_initial(prev: [Option<char>; 2]) -> bool {
    matches!(prev[1], Some(c) if c.is_uppercase())
        && prev[0].is_none_or(|c| c.is_whitespace() || c == '.')
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<Sentence>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail >= slice.len() {
        return;
    }
    let (s, e) = (start + lead, end - trail);
    out.push(Sentence { text: text[s..e].to_string(), byte_start: s, byte_end: e, tokens: Vec::new() });
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

// Combining marks are not alphanumeric but belong inside words
// (Arabic harakat, Devanagari vowel signs, decomposed Latin accents).
fn is_combining_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x0483..=0x0489 | 0x0591..=0x05BD | 0x0610..=0x061A
        | 0x064B..=0x065F | 0x0670 | 0x06D6..=0x06DC | 0x0900..=0x0903
        | 0x093A..=0x094F | 0x200C..=0x200D | 0x3099..=0x309A | 0xFE20..=0xFE2F)
}

/// Byte ranges of the word tokens in `text`: maximal runs of alphanumeric
/// characters (and combining marks).
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (is_word_char(c), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

pub fn tokenize(sentence: &str) -> Vec<&str> {
    token_spans(sentence).into_iter().map(|(s, e)| &sentence[s..e]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemRule {
    pub suffix: String,
    pub min_stem_length: usize,
}

/// Suffix rules for one language, longest suffix first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemRuleSet {
    lang: String,
    rules: Vec<StemRule>,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("rule line {line}: expected `suffix<TAB>min_stem_length`")]
    Columns { line: usize },
    #[error("rule line {line}: min_stem_length must be an integer >= 2")]
    MinLength { line: usize },
    #[error("rule line {line}: empty suffix")]
    EmptySuffix { line: usize },
}

impl StemRuleSet {
    pub fn new(lang: impl Into<String>, mut rules: Vec<StemRule>) -> Self {
        for r in &mut rules {
            r.min_stem_length = r.min_stem_length.max(2);
        }
        // stable: equal-length suffixes keep file order
        rules.sort_by_key(|r| std::cmp::Reverse(r.suffix.chars().count()));
        StemRuleSet { lang: lang.into(), rules }
    }

    /// Parses a TSV rule file. Blank lines and `#` comments are skipped.
    pub fn from_tsv(lang: impl Into<String>, tsv: &str) -> Result<Self, RuleError> {
        let mut rules = Vec::new();
        for (i, line) in tsv.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() != 2 {
                return Err(RuleError::Columns { line: line_no });
            }
            let suffix = cols[0].trim().to_lowercase();
            if suffix.is_empty() {
                return Err(RuleError::EmptySuffix { line: line_no });
            }
            let min_stem_length = cols[1]
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&m| m >= 2)
                .ok_or(RuleError::MinLength { line: line_no })?;
            rules.push(StemRule { suffix, min_stem_length });
        }
        Ok(StemRuleSet::new(lang, rules))
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn rules(&self) -> &[StemRule] {
        &self.rules
    }

    /// The rule that would fire on `token`, if any.
    pub fn matching_rule(&self, token: &str) -> Option<&StemRule> {
        let len = token.chars().count();
        self.rules
            .iter()
            .find(|r| token.ends_with(&r.suffix) && len - r.suffix.chars().count() >= r.min_stem_length)
    }

    /// Single-pass longest-match stripping. `token` must already be lowercase.
    pub fn stem<'a>(&self, token: &'a str) -> &'a str {
        match self.matching_rule(token) {
            Some(rule) => &token[..token.len() - rule.suffix.len()],
            None => token,
        }
    }
}

pub fn stem(token: &str, rules: &StemRuleSet) -> String {
    rules.stem(token).to_string()
}

/// Rule sets by language. Languages without rules stem to the lowercased
/// surface form.
#[derive(Debug, Clone, Default)]
pub struct Stemmers {
    sets: BTreeMap<String, StemRuleSet>,
}

const BUILTIN_RULES: [(&str, &str); 6] = [
    ("ar", include_str!("../data/stem/ar.tsv")),
    ("bg", include_str!("../data/stem/bg.tsv")),
    ("en", include_str!("../data/stem/en.tsv")),
    ("es", include_str!("../data/stem/es.tsv")),
    ("fi", include_str!("../data/stem/fi.tsv")),
    ("hu", include_str!("../data/stem/hu.tsv")),
];

impl Stemmers {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The rule sets shipped with the crate: ar, bg, en, es, fi, hu.
    pub fn builtin() -> Self {
        let mut s = Self::default();
        for (lang, tsv) in BUILTIN_RULES {
            s.insert(StemRuleSet::from_tsv(lang, tsv).expect("builtin stem rules parse"));
        }
        s
    }

    pub fn insert(&mut self, rules: StemRuleSet) {
        self.sets.insert(rules.lang.clone(), rules);
    }

    /// Loads every `<lang>.tsv` in `dir`, overriding existing languages.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<(), RuleError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let tsv = fs::read_to_string(&path)?;
            self.insert(StemRuleSet::from_tsv(lang, &tsv)?);
        }
        Ok(())
    }

    pub fn get(&self, lang: &str) -> Option<&StemRuleSet> {
        self.sets.get(lang)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    pub fn stem(&self, lowercase: &str, lang: &str) -> String {
        match self.sets.get(lang) {
            Some(rules) => rules.stem(lowercase).to_string(),
            None => lowercase.to_string(),
        }
    }
}

/// Assigns each token the language of the code-switch span containing its
/// first byte, or the document language when there is none.
pub fn tag_token_languages(doc: &Document, mut tokens: Vec<Token>) -> Vec<Token> {
    for t in &mut tokens {
        t.lang = doc.lang_at(t.byte_start).to_string();
    }
    tokens
}

/// A document after segmentation, tokenization, tagging and stemming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub id: String,
    pub lang: String,
    pub sentences: Vec<Sentence>,
}

impl TokenizedDocument {
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }
}

pub fn preprocess(doc: &Document, stemmers: &Stemmers) -> TokenizedDocument {
    let mut sentences = segment_sentences(&doc.text);
    for sentence in &mut sentences {
        let base = sentence.byte_start;
        let raw = token_spans(&sentence.text)
            .into_iter()
            .map(|(s, e)| Token {
                surface: sentence.text[s..e].to_string(),
                stem: String::new(),
                lang: String::new(),
                byte_start: base + s,
                byte_end: base + e,
            })
            .collect();
        let mut tokens = tag_token_languages(doc, raw);
        for t in &mut tokens {
            t.stem = stemmers.stem(&t.surface.to_lowercase(), &t.lang);
        }
        sentence.tokens = tokens;
    }
    TokenizedDocument { id: doc.id.clone(), lang: doc.lang.clone(), sentences }
}

/// Tokenizes free text (for instance a generated summary) as a monolingual
/// sequence in `lang`.
pub fn tokenize_text(text: &str, lang: &str, stemmers: &Stemmers) -> Vec<Token> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| {
            let surface = &text[s..e];
            Token {
                surface: surface.to_string(),
                stem: stemmers.stem(&surface.to_lowercase(), lang),
                lang: lang.to_string(),
                byte_start: s,
                byte_end: e,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LangSpan;

    fn texts(s: &[Sentence]) -> Vec<&str> {
        s.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn segments_on_terminators() {
        assert_eq!(texts(&segment_sentences("Good. Bad!")), ["Good.", "Bad!"]);
        assert_eq!(texts(&segment_sentences("no terminator")), ["no terminator"]);
        assert_eq!(
            texts(&segment_sentences("A. Smith came. He left.")),
            ["A. Smith came.", "He left."]
        );
        assert_eq!(texts(&segment_sentences("Really?! Yes.")), ["Really?!", "Yes."]);
        assert_eq!(texts(&segment_sentences("v1.2 is out")), ["v1.2 is out"]);
        assert_eq!(texts(&segment_sentences("هل هذا جيد؟ نعم.")), ["هل هذا جيد؟", "نعم."]);
        assert_eq!(texts(&segment_sentences("好。 不好。")), ["好。", "不好。"]);
        assert!(segment_sentences("   ").is_empty());
    }

    #[test]
    fn sentence_offsets_are_exact() {
        let text = "  First one.   Second!\nThird ";
        let s = segment_sentences(text);
        for sent in &s {
            assert_eq!(&text[sent.byte_start..sent.byte_end], sent.text);
        }
        assert_eq!(texts(&s), ["First one.", "Second!", "Third"]);
    }

    #[test]
    fn tokenizes_on_word_boundaries() {
        assert_eq!(tokenize("Hello, world!"), ["Hello", "world"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("état-major 3x"), ["état", "major", "3x"]);
        assert!(tokenize("... !!! --").is_empty());
        assert_eq!(tokenize("don't"), ["don", "t"]);
    }

    #[test]
    fn longest_match_stemming() {
        let cats = StemRuleSet::new("en", vec![StemRule { suffix: "s".into(), min_stem_length: 3 }]);
        assert_eq!(stem("cats", &cats), "cat");
        assert_eq!(stem("as", &cats), "as");
        assert_eq!(stem("dog", &cats), "dog");

        let fi = StemRuleSet::from_tsv("fi", "a\t3\nssa\t3\nissa\t3\n").unwrap();
        assert_eq!(fi.rules()[0].suffix, "issa");
        assert_eq!(stem("taloissa", &fi), "talo");
        // single pass: "taloa" loses only the final "a"
        assert_eq!(stem("taloaa", &fi), "taloa");
    }

    #[test]
    fn longer_suffix_blocked_by_guard_falls_through() {
        let rules = StemRuleSet::from_tsv("xx", "issa\t4\na\t2\n").unwrap();
        // "kissa" minus "issa" leaves 1 char; "a" leaves "kiss"
        assert_eq!(rules.stem("kissa"), "kiss");
    }

    #[test]
    fn rule_file_errors() {
        assert!(matches!(StemRuleSet::from_tsv("x", "s"), Err(RuleError::Columns { line: 1 })));
        assert!(matches!(StemRuleSet::from_tsv("x", "# c\ns\t1"), Err(RuleError::MinLength { line: 2 })));
        assert!(matches!(StemRuleSet::from_tsv("x", "s\tx"), Err(RuleError::MinLength { line: 1 })));
        assert!(matches!(StemRuleSet::from_tsv("x", " \t3"), Err(RuleError::EmptySuffix { line: 1 })));
    }

    #[test]
    fn builtin_rule_sets_load() {
        let s = Stemmers::builtin();
        let langs: Vec<_> = s.languages().collect();
        assert_eq!(langs, ["ar", "bg", "en", "es", "fi", "hu"]);
        assert_eq!(s.stem("movies", "en"), "mov");
        assert_eq!(s.stem("talossa", "fi"), "talo");
        assert_eq!(s.stem("házban", "hu"), "ház");
        assert_eq!(s.stem("unknown", "zz"), "unknown");
    }

    #[test]
    fn load_rules_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("xx.tsv"), "oo\t2\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mut s = Stemmers::builtin();
        s.load_dir(dir.path()).unwrap();
        assert_eq!(s.stem("kazoo", "xx"), "kaz");
    }

    #[test]
    fn tags_token_languages() {
        let doc = Document::new("d", "en", "hola my friend", None).unwrap();
        let toks = preprocess(&doc, &Stemmers::empty());
        assert!(toks.tokens().all(|t| t.lang == "en"));

        let doc = doc.with_token_langs(vec![LangSpan(0, 4, "es".into())]).unwrap();
        let toks = preprocess(&doc, &Stemmers::empty());
        let langs: Vec<_> = toks.tokens().map(|t| t.lang.as_str()).collect();
        assert_eq!(langs, ["es", "en", "en"]);

        // "hola" straddles the span start and keeps the document language
        let doc = Document::new("d", "en", "hola my friend", None)
            .unwrap()
            .with_token_langs(vec![LangSpan(2, 6, "es".into())])
            .unwrap();
        let toks = preprocess(&doc, &Stemmers::empty());
        let langs: Vec<_> = toks.tokens().map(|t| t.lang.as_str()).collect();
        assert_eq!(langs, ["en", "es", "en"]);
    }

    #[test]
    fn code_switched_tokens_use_their_own_stemmer() {
        let doc = Document::new("d", "en", "the movies talossa", None)
            .unwrap()
            .with_token_langs(vec![LangSpan(11, 18, "fi".into())])
            .unwrap();
        let toks = preprocess(&doc, &Stemmers::builtin());
        let stems: Vec<_> = toks.tokens().map(|t| t.stem.as_str()).collect();
        assert_eq!(stems, ["the", "mov", "talo"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segmentation_reconstructs_text(text in "[a-zA-Z .!?\n,]{1,80}") {
                let sents = segment_sentences(&text);
                let mut rebuilt = String::new();
                let mut cursor = 0;
                for s in &sents {
                    let gap = &text[cursor..s.byte_start];
                    prop_assert!(gap.trim().is_empty());
                    rebuilt.push_str(gap);
                    rebuilt.push_str(&s.text);
                    cursor = s.byte_end;
                }
                prop_assert!(text[cursor..].trim().is_empty());
                rebuilt.push_str(&text[cursor..]);
                prop_assert_eq!(rebuilt, text);
            }

            #[test]
            fn tokens_are_never_punctuation(text in "\\PC{0,40}") {
                for t in tokenize(&text) {
                    prop_assert!(!t.is_empty());
                    prop_assert!(t.chars().any(char::is_alphanumeric) || t.chars().all(is_combining_mark));
                }
            }

            #[test]
            fn stem_is_guarded_prefix(word in "[a-zäöéáóúí]{1,14}", lang in prop::sample::select(vec!["en", "es", "fi", "hu"])) {
                let stemmers = Stemmers::builtin();
                let rules = stemmers.get(lang).unwrap();
                let stemmed = rules.stem(&word);
                prop_assert!(!stemmed.is_empty());
                prop_assert!(word.starts_with(stemmed));
                if let Some(rule) = rules.matching_rule(&word) {
                    prop_assert!(stemmed.chars().count() >= rule.min_stem_length);
                } else {
                    prop_assert_eq!(stemmed, word.as_str());
                }
            }
        }
    }
}
