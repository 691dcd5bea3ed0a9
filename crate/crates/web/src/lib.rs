//! Browser bindings for three small operations: IOB view of annotated
//! text, a CRF explorer, and strict-vs-lenient span scoring. Each binding
//! takes and returns JSON strings; failures come back as `{"error": ...}`.

use medseq::corpus::{read_standoff, spans_to_iob, tokenize, Warning};
use medseq::crf::{log_partition, nll_gradients, viterbi, CrfParams};
use medseq::evaluation::{count_document, render_report, score, token_confusion, MatchMode, Pairing};
use medseq::linalg::Matrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn warning_text(w: &Warning) -> String {
    match w {
        Warning::SurfaceMismatch {
            line,
            id,
            expected,
            found,
        } => {
            format!("line {line}: {id} text is `{found}` at its offsets, file says `{expected}`")
        }
        Warning::LabelConflict { token, kept, dropped } => {
            format!("token {token}: {kept} kept, {dropped} dropped")
        }
    }
}

#[derive(Debug, Serialize)]
struct TokenRow {
    surface: String,
    start: usize,
    end: usize,
    label: String,
}

/// Tokens of `text` with the IOB labels induced by standoff `ann`.
pub fn iob_view_value(text: &str, ann: &str) -> Result<Value, String> {
    let parsed = read_standoff("input", text, ann).map_err(|e| e.to_string())?;
    let tokens = tokenize(text);
    let enc = spans_to_iob(&tokens, &parsed.document.annotations);
    let rows: Vec<TokenRow> = tokens
        .iter()
        .zip(&enc.labels)
        .map(|(t, l)| TokenRow {
            surface: t.surface.clone(),
            start: t.start,
            end: t.end,
            label: l.to_string(),
        })
        .collect();
    let warnings: Vec<String> = parsed.warnings.iter().chain(&enc.warnings).map(warning_text).collect();
    Ok(json!({ "tokens": rows, "warnings": warnings }))
}

#[derive(Debug, Deserialize)]
pub struct CrfInput {
    /// L rows of K scores.
    pub emissions: Vec<Vec<f64>>,
    /// K rows of K scores, `[previous][next]`.
    pub transitions: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<Matrix, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{name} must be a non-empty rectangular table"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(format!("{name} must contain finite numbers"));
    }
    Ok(Matrix::from_rows(rows))
}

/// Viterbi path, per-position marginals and log Z.
pub fn crf_explore_value(input: &CrfInput) -> Result<Value, String> {
    let emissions = matrix(&input.emissions, "emissions")?;
    let k = emissions.cols();
    let mut crf = CrfParams::zeros(k);
    crf.transitions = matrix(&input.transitions, "transitions")?;
    if crf.transitions.shape() != (k, k) {
        return Err(format!("transitions must be {k}×{k}"));
    }
    if input.start.len() != k || input.end.len() != k {
        return Err(format!("start and end need {k} values"));
    }
    crf.start.clone_from(&input.start);
    crf.end.clone_from(&input.end);
    if !crf.all_finite() {
        return Err("start and end must contain finite numbers".into());
    }
    let best = viterbi(&emissions, &crf).map_err(|e| e.to_string())?;
    let log_z = log_partition(&emissions, &crf).map_err(|e| e.to_string())?;
    let g = nll_gradients(&emissions, &crf, &best.labels).map_err(|e| e.to_string())?;
    let marginals: Vec<Vec<f64>> = (0..emissions.rows()).map(|t| g.marginals.row(t).to_vec()).collect();
    Ok(json!({
        "viterbi": { "labels": best.labels, "score": best.score },
        "log_z": log_z,
        "path_probability": (best.score - log_z).exp(),
        "marginals": marginals,
    }))
}

/// Strict and lenient reports for one document.
pub fn span_eval_value(text: &str, gold_ann: &str, pred_ann: &str, bipartite: bool) -> Result<Value, String> {
    let gold = read_standoff("gold", text, gold_ann).map_err(|e| format!("gold: {e}"))?;
    let pred = read_standoff("pred", text, pred_ann).map_err(|e| format!("prediction: {e}"))?;
    let pairing = if bipartite { Pairing::Bipartite } else { Pairing::Greedy };
    let tokens = tokenize(text);
    let g = spans_to_iob(&tokens, &gold.document.annotations);
    let p = spans_to_iob(&tokens, &pred.document.annotations);
    let confusion = token_confusion(&g.labels, &p.labels).map_err(|e| e.to_string())?;
    let mut out = serde_json::Map::new();
    for (key, mode) in [("strict", MatchMode::Strict), ("lenient", MatchMode::Lenient)] {
        let counts = count_document(&gold.document.annotations, &pred.document.annotations, mode, pairing);
        let (table, record) = render_report(&score(&counts, mode), &confusion);
        let mut v = serde_json::to_value(record).map_err(|e| e.to_string())?;
        v["table"] = Value::String(table);
        out.insert(key.into(), v);
    }
    Ok(Value::Object(out))
}

#[wasm_bindgen]
pub fn iob_view(text: &str, ann: &str) -> String {
    respond(iob_view_value(text, ann))
}

/// `input` is JSON with `emissions`, `transitions`, `start` and `end`.
#[wasm_bindgen]
pub fn crf_explore(input: &str) -> String {
    respond(
        serde_json::from_str::<CrfInput>(input)
            .map_err(|e| e.to_string())
            .and_then(|i| crf_explore_value(&i)),
    )
}

#[wasm_bindgen]
pub fn span_eval(text: &str, gold_ann: &str, pred_ann: &str, bipartite: bool) -> String {
    respond(span_eval_value(text, gold_ann, pred_ann, bipartite))
}
