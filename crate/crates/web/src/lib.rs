//! Browser bindings: extractive scoring, the ROUGE gate and weight
//! quantization, each returning JSON for the demo page.

use hsas_core::abstractive::{
    effective_threshold, CompressorConfig, DeletionCompressor, Gate, GateConfig, GateInput, Verdict,
};
use hsas_core::corpus::Document;
use hsas_core::extractive::{extract_summary, fit_tfidf, score_sentences, ExtractiveConfig, TfidfModel};
use hsas_core::lexicon::SentimentLexicon;
use hsas_core::quantize::{dequantize_f64, pack_nibbles, qmax, quantize_tensor};
use hsas_core::textproc::{preprocess, segment_sentences, Stemmers, TokenizedDocument};
use serde::Serialize;
use wasm_bindgen::prelude::*;

struct Prepared {
    stemmers: Stemmers,
    lexicon: SentimentLexicon,
    doc: TokenizedDocument,
    tfidf: TfidfModel,
}

/// With a single document there is no corpus, so each sentence stands in
/// for a document when fitting idf.
fn prepare(text: &str, lang: &str) -> Result<Prepared, String> {
    let stemmers = Stemmers::builtin();
    let lexicon = SentimentLexicon::builtin(&stemmers);
    let doc = Document::new("input", lang, text, None).map_err(|e| e.to_string())?;
    let td = preprocess(&doc, &stemmers);
    let pseudo: Vec<TokenizedDocument> = segment_sentences(text)
        .iter()
        .enumerate()
        .filter_map(|(i, s)| Document::new(format!("s{i}"), lang, s.text.as_str(), None).ok())
        .map(|d| preprocess(&d, &stemmers))
        .collect();
    let tfidf = fit_tfidf(&pseudo).map_err(|e| e.to_string())?;
    Ok(Prepared { stemmers, lexicon, doc: td, tfidf })
}

#[derive(Serialize)]
struct SentenceView {
    text: String,
    salience: f64,
    centroid: f64,
    lexicon: f64,
    score: f64,
    selected: bool,
    lexicon_hits: Vec<String>,
}

#[derive(Serialize)]
struct ExtractView {
    budget: usize,
    summary: String,
    sentences: Vec<SentenceView>,
}

pub fn extract_json(
    text: &str,
    lang: &str,
    budget_ratio: f64,
    w_salience: f64,
    w_centroid: f64,
    w_lexicon: f64,
) -> Result<String, String> {
    let p = prepare(text, lang)?;
    let total = w_salience + w_centroid + w_lexicon;
    if !(total > 0.0) {
        return Err("at least one weight must be positive".into());
    }
    let cfg = ExtractiveConfig {
        w_salience: w_salience / total,
        w_centroid: w_centroid / total,
        w_lexicon: 1.0 - w_salience / total - w_centroid / total,
        budget_ratio,
        ..Default::default()
    };
    let scores = score_sentences(&p.doc, &p.tfidf, &p.lexicon, &cfg).map_err(|e| e.to_string())?;
    let summary = extract_summary(&p.doc, &scores, &cfg).map_err(|e| e.to_string())?;
    let chosen: Vec<usize> = summary.indices().collect();
    let sentences = p
        .doc
        .sentences
        .iter()
        .zip(&scores.sentences)
        .enumerate()
        .map(|(i, (s, sc))| SentenceView {
            text: s.text.clone(),
            salience: sc.salience,
            centroid: sc.centroid,
            lexicon: sc.lexicon,
            score: sc.score,
            selected: chosen.contains(&i),
            lexicon_hits: s.tokens.iter().filter(|t| p.lexicon.is_hit(t)).map(|t| t.surface.clone()).collect(),
        })
        .collect();
    let view = ExtractView { budget: cfg.budget(p.doc.sentences.len()), summary: summary.text, sentences };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Attempt {
    deletion_quantile: f64,
    rouge1: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct GateView {
    threshold: f64,
    low_resource: bool,
    extractive: String,
    output: String,
    verdict: Verdict,
    attempts: Vec<Attempt>,
}

pub fn gate_json(text: &str, lang: &str, deletion_quantile: f64, tau: f64, margin: f64) -> Result<String, String> {
    let p = prepare(text, lang)?;
    let ecfg = ExtractiveConfig::default();
    let gate = GateConfig { tau, margin, ..Default::default() };
    let compressor = CompressorConfig { deletion_quantile, ..Default::default() };
    let scores = score_sentences(&p.doc, &p.tfidf, &p.lexicon, &ecfg).map_err(|e| e.to_string())?;
    let summary = extract_summary(&p.doc, &scores, &ecfg).map_err(|e| e.to_string())?;
    let input = GateInput::from_extractive(&p.doc, &scores, &summary);
    let g = Gate { backend: &DeletionCompressor, lexicon: &p.lexicon, stemmers: &p.stemmers, gate: &gate, compressor: &compressor };
    let r = g.summarize(&input).map_err(|e| e.to_string())?;
    let view = GateView {
        threshold: effective_threshold(lang, input.n_sentences, &gate),
        low_resource: gate.low_resource_langs.contains(lang),
        extractive: r.extractive_text,
        output: r.text,
        verdict: r.verdict,
        attempts: r
            .decisions
            .iter()
            .map(|d| Attempt { deletion_quantile: d.deletion_quantile, rouge1: d.rouge1, verdict: d.verdict })
            .collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct QuantView {
    bits: u8,
    qmax: i32,
    scale: f32,
    codes: Vec<i8>,
    restored: Vec<f64>,
    max_error: f64,
    bytes_float: usize,
    bytes_quantized: usize,
    packed_hex: String,
}

/// `values` is a comma- or space-separated list of numbers.
pub fn quantize_json(values: &str, bits: u8) -> Result<String, String> {
    let xs: Vec<f32> = values
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f32>().map_err(|_| format!("not a number: {s}")))
        .collect::<Result<_, _>>()?;
    if xs.is_empty() {
        return Err("enter at least one value".into());
    }
    let qt = quantize_tensor(&xs, 1, xs.len(), bits).map_err(|e| e.to_string())?;
    let restored = dequantize_f64(&qt);
    let max_error = xs.iter().zip(&restored).map(|(x, r)| (f64::from(*x) - r).abs()).fold(0.0, f64::max);
    let packed = if bits == 4 { pack_nibbles(&qt.values) } else { qt.values.iter().map(|&v| v as u8).collect() };
    let view = QuantView {
        bits,
        qmax: qmax(bits),
        scale: qt.scales[0],
        codes: qt.values.clone(),
        restored,
        max_error,
        bytes_float: xs.len() * 4,
        bytes_quantized: packed.len() + 4,
        packed_hex: packed.iter().map(|b| format!("{b:02x}")).collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn extract(text: &str, lang: &str, budget_ratio: f64, w_salience: f64, w_centroid: f64, w_lexicon: f64) -> Result<String, JsError> {
    extract_json(text, lang, budget_ratio, w_salience, w_centroid, w_lexicon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gate(text: &str, lang: &str, deletion_quantile: f64, tau: f64, margin: f64) -> Result<String, JsError> {
    gate_json(text, lang, deletion_quantile, tau, margin).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn quantize(values: &str, bits: u8) -> Result<String, JsError> {
    quantize_json(values, bits).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const REVIEW: &str = "The hotel was lovely and the staff were wonderful. We arrived on a Tuesday. \
        Breakfast was served at eight. The room was terrible though, dirty and loud. We left on Friday.";

    #[test]
    fn extract_selects_within_budget() {
        let v: Value = serde_json::from_str(&extract_json(REVIEW, "en", 0.4, 0.5, 0.3, 0.2).unwrap()).unwrap();
        let sentences = v["sentences"].as_array().unwrap();
        assert_eq!(sentences.len(), 5);
        let selected = sentences.iter().filter(|s| s["selected"] == true).count();
        assert_eq!(selected, v["budget"].as_u64().unwrap() as usize);
        assert_eq!(selected, 2);
        assert!(extract_json(REVIEW, "en", 0.4, 0.0, 0.0, 0.0).is_err());
        assert!(extract_json("", "en", 0.4, 0.5, 0.3, 0.2).is_err());
    }

    #[test]
    fn gate_reports_attempts() {
        let v: Value = serde_json::from_str(&gate_json(REVIEW, "en", 0.3, 0.65, 0.05).unwrap()).unwrap();
        assert_eq!(v["threshold"], 0.65);
        assert!(!v["attempts"].as_array().unwrap().is_empty());
        let strict: Value = serde_json::from_str(&gate_json(REVIEW, "fi", 0.9, 0.95, 0.01).unwrap()).unwrap();
        assert_eq!(strict["verdict"], "fell_back");
        assert_eq!(strict["output"], strict["extractive"]);
    }

    #[test]
    fn quantize_round_trips_within_half_a_step() {
        let v: Value = serde_json::from_str(&quantize_json("-1, 0.5 0.25,1", 8).unwrap()).unwrap();
        assert_eq!(v["codes"], serde_json::json!([-127, 64, 32, 127]));
        assert!(v["max_error"].as_f64().unwrap() <= v["scale"].as_f64().unwrap() / 2.0 + 1e-9);
        let four: Value = serde_json::from_str(&quantize_json("0.5 -0.5 0.1", 4).unwrap()).unwrap();
        assert_eq!(four["packed_hex"].as_str().unwrap().len(), 4);
        assert!(quantize_json("a, b", 8).is_err());
        assert!(quantize_json("1", 3).is_err());
    }
}
