//! Post-fusion grounding heads and grounded-prompt assembly.
//!
//! Persona grounding fuses each persona's averaged knowledge relevance with
//! its utterance relevance through a sigmoid and keeps entries scoring
//! strictly above 0.5. Knowledge grounding fuses the same two signals through
//! a softmax over candidates and keeps the single best one.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::DialogueRound;
use crate::latesim::RelevanceVector;
use crate::saliency::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Network {
    Pg,
    Kg,
}

/// `w1 · context_relevance + w2 · utterance_relevance + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub w1: f64,
    pub w2: f64,
    pub b: f64,
    pub network: Network,
}

impl FusionParams {
    pub fn zeros(network: Network) -> Self {
        Self {
            w1: 0.0,
            w2: 0.0,
            b: 0.0,
            network,
        }
    }

    #[inline]
    pub fn fuse(&self, context: f64, utterance: f64) -> f64 {
        self.w1 * context + self.w2 * utterance + self.b
    }
}

/// Persona probabilities/selection and knowledge distribution/pick for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResult {
    pub persona_probs: Vec<f64>,
    pub persona_mask: Vec<bool>,
    pub knowledge_dist: Vec<f64>,
    pub knowledge_pick: usize,
}

fn check_lengths(a: &RelevanceVector, b: &RelevanceVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            what: "relevance vectors",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Persona probabilities and the strict `> 0.5` selection.
pub fn pg_forward(
    pk_rel: &RelevanceVector,
    pu_rel: &RelevanceVector,
    params: &FusionParams,
) -> Result<(Vec<f64>, Vec<bool>)> {
    check_lengths(pk_rel, pu_rel)?;
    let probs: Vec<f64> = pk_rel
        .0
        .iter()
        .zip(&pu_rel.0)
        .map(|(&k, &u)| sigmoid(params.fuse(k, u)))
        .collect();
    let mask = probs.iter().map(|&p| p > 0.5).collect();
    Ok((probs, mask))
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Lowest index attaining the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Knowledge distribution and its lowest-index argmax.
pub fn kg_forward(
    kp_rel: &RelevanceVector,
    ku_rel: &RelevanceVector,
    params: &FusionParams,
) -> Result<(Vec<f64>, usize)> {
    check_lengths(kp_rel, ku_rel)?;
    if kp_rel.is_empty() {
        return Err(Error::EmptyEntry);
    }
    let logits: Vec<f64> = kp_rel
        .0
        .iter()
        .zip(&ku_rel.0)
        .map(|(&p, &u)| params.fuse(p, u))
        .collect();
    let dist = softmax(&logits);
    // Argmax over the logits: the distribution can round two distinct logits
    // to the same probability.
    let pick = argmax(&logits);
    Ok((dist, pick))
}

/// `[K̂; P̂; U]`: the picked knowledge, the selected personas in index order,
/// then the utterance, joined by `sep`.
pub fn assemble_prompt(round: &DialogueRound, result: &GroundingResult, sep: &str) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(2 + round.personas.len());
    if let Some(k) = round.knowledges.get(result.knowledge_pick) {
        parts.push(&k.text);
    }
    parts.extend(
        round
            .personas
            .iter()
            .zip(&result.persona_mask)
            .filter(|(_, &keep)| keep)
            .map(|(p, _)| p.text.as_str()),
    );
    parts.push(&round.utterance.text);
    parts.join(sep)
}
