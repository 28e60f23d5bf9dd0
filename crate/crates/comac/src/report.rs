//! Evaluation reports and per-round grounding records.

use std::io::BufRead;

use comac_core::corpus::{DialogueRound, HISTORY_SEPARATOR};
use comac_core::grounding::{assemble_prompt, GroundingResult};
use comac_core::metrics::{rouge_l, unigram_f1, PgReport};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextReport {
    pub f1: f64,
    pub rouge_l: f64,
    pub count: usize,
}

/// `bleu` and `ppl` need a language model and are always `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rounds: usize,
    pub pg: PgReport,
    pub kg_accuracy: f64,
    pub text: Option<TextReport>,
    pub bleu: Option<f64>,
    pub ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generated_at: Option<u64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// One line of a responses file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePair {
    pub candidate: String,
    pub reference: String,
}

pub fn read_responses<R: BufRead>(reader: R) -> Result<Vec<ResponsePair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Mean unigram F1 and ROUGE-L over response pairs; `None` when empty.
pub fn text_report(pairs: &[ResponsePair]) -> Option<TextReport> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let f1 = pairs
        .iter()
        .map(|p| unigram_f1(&p.candidate, &p.reference))
        .sum::<f64>()
        / n;
    let rl = pairs.iter().map(|p| rouge_l(&p.candidate, &p.reference)).sum::<f64>() / n;
    Some(TextReport {
        f1,
        rouge_l: rl,
        count: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub dialog_id: String,
    pub round: u32,
    pub persona_probs: Vec<f64>,
    pub persona_selected: Vec<usize>,
    pub knowledge_dist: Vec<f64>,
    pub knowledge_selected: usize,
    pub prompt: String,
}

impl GroundingRecord {
    pub fn new(round: &DialogueRound, result: &GroundingResult) -> Self {
        Self {
            dialog_id: round.dialog_id.clone(),
            round: round.round,
            persona_probs: result.persona_probs.clone(),
            persona_selected: result
                .persona_mask
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| i)
                .collect(),
            knowledge_dist: result.knowledge_dist.clone(),
            knowledge_selected: result.knowledge_pick,
            prompt: assemble_prompt(round, result, HISTORY_SEPARATOR),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}
