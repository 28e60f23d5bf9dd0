//! Composite grounding objective and the SGD trainer.
//!
//! ```text
//! L = α · L_K + β · L*_P + γ · L_M
//! ```
//!
//! `L_K` is the cross-entropy of the knowledge distribution. `L*_P` is a
//! class-weighted binary cross-entropy over personas (positives weighted
//! `w*`, negatives `1 − w*`) that is discarded with probability `p*` when a
//! round has no relevant persona. `L_M` is supplied by an [`LmLoss`] hook and
//! is zero by default; it contributes to the reported loss only.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DialogueRound, HISTORY_SEPARATOR};
use crate::embedding::{default_reduced_dim, EmbeddingSource};
use crate::grounding::assemble_prompt;
use crate::model::{GradientSet, Mode, ModelState, RoundInputs, RoundPass, Sampler, Strategy};
use crate::saliency::{kept_count, IdfTable};
use crate::{Error, Result};

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub w_star: f64,
    pub p_star: f64,
    pub p_sr: f64,
    /// Reduced width; `None` means `d / 4`.
    pub d0: Option<usize>,
    pub strategy: Strategy,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub normalize_tokens: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 10.0,
            w_star: 0.9,
            p_star: 0.1,
            p_sr: 0.35,
            d0: None,
            strategy: Strategy::TfIdf,
            learning_rate: 1.0,
            epochs: 2,
            seed: 7,
            normalize_tokens: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.w_star > 0.0 && self.w_star < 1.0) {
            return bad(format!("w_star must lie in (0, 1), got {}", self.w_star));
        }
        if !(self.p_star >= 0.0 && self.p_star < 1.0) {
            return bad(format!("p_star must lie in [0, 1), got {}", self.p_star));
        }
        kept_count(self.p_sr, 1)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.d0 == Some(0) {
            return bad("d0 must be positive".into());
        }
        Ok(())
    }

    /// Reduced width for input width `d`.
    pub fn reduced_dim(&self, d: usize) -> Result<usize> {
        match self.d0 {
            Some(d0) => Ok(d0),
            None => default_reduced_dim(d),
        }
    }
}

/// `−ln K̃[label]`.
pub fn kg_loss(dist: &[f64], label: usize) -> Result<f64> {
    let p = *dist.get(label).ok_or(Error::Label { label, len: dist.len() })?;
    Ok(-libm::log(p))
}

/// Mean over entries of `−[w* y ln p + (1 − w*)(1 − y) ln(1 − p)]`.
pub fn weighted_bce(probs: &[f64], labels: &[bool], w_star: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape {
            what: "persona labels",
            expected: probs.len(),
            found: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyEntry);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if y {
                -w_star * libm::log(p)
            } else {
                -(1.0 - w_star) * libm::log(1.0 - p)
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// True when every label is negative and a uniform draw falls below `p_star`.
/// The generator is consumed only for all-negative rounds.
pub fn drop_persona_term<R: RngCore + ?Sized>(labels: &[bool], p_star: f64, rng: &mut R) -> bool {
    !labels.iter().any(|&y| y) && rng.random::<f64>() < p_star
}

/// Weighted persona loss, or `None` when the term is discarded.
pub fn pg_loss<R: RngCore + ?Sized>(
    probs: &[f64],
    labels: &[bool],
    w_star: f64,
    p_star: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    let loss = weighted_bce(probs, labels, w_star)?;
    if drop_persona_term(labels, p_star, rng) {
        return Ok(None);
    }
    Ok(Some(loss))
}

/// Language-modelling loss on an assembled prompt.
///
/// The engine does not fine-tune a generator, so the hook's value is added
/// to the reported loss but produces no parameter gradients.
pub trait LmLoss {
    fn loss(&self, prompt: &str, reference: Option<&str>) -> f64;
}

/// The default hook: always zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoLmLoss;

impl LmLoss for NoLmLoss {
    fn loss(&self, _prompt: &str, _reference: Option<&str>) -> f64 {
        0.0
    }
}

/// The three loss terms of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub kg: f64,
    /// `None` when discarded.
    pub pg: Option<f64>,
    pub lm: f64,
}

/// `α L_K + β L_P + γ L_M`, with a discarded `L_P` counting as zero.
pub fn total_loss(parts: &LossParts, cfg: &TrainConfig) -> f64 {
    cfg.alpha * parts.kg + cfg.beta * parts.pg.unwrap_or(0.0) + cfg.gamma * parts.lm
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|&v| libm::exp(v - m)).sum::<f64>())
}

/// One training example: a round, its embeddings and the persona-drop decision.
#[derive(Debug, Clone)]
pub struct Example<'r, 'e> {
    pub round: &'r DialogueRound,
    pub inputs: RoundInputs<'e>,
    pub drop_pg: bool,
}

impl<'r, 'e> Example<'r, 'e> {
    pub fn new<S: EmbeddingSource + ?Sized>(round: &'r DialogueRound, source: &'e S, drop_pg: bool) -> Result<Self> {
        Ok(Self {
            round,
            inputs: RoundInputs::gather(round, source)?,
            drop_pg,
        })
    }
}

/// Loss terms and logit gradients of one example, computed from logits with
/// stable log-sigmoid / log-softmax.
fn example_loss(
    pass: &RoundPass,
    ex: &Example<'_, '_>,
    cfg: &TrainConfig,
    hook: &dyn LmLoss,
) -> Result<(LossParts, Vec<f64>, Vec<f64>)> {
    let round = ex.round;
    let label = round.knowledge_label;
    let z_k = &pass.kg_logits;
    if label >= z_k.len() {
        return Err(Error::Label { label, len: z_k.len() });
    }
    if round.persona_labels.len() != pass.pg_logits.len() {
        return Err(Error::Shape {
            what: "persona labels",
            expected: pass.pg_logits.len(),
            found: round.persona_labels.len(),
        });
    }
    let lse = log_sum_exp(z_k);
    let kg = lse - z_k[label];
    let d_kg: Vec<f64> = z_k
        .iter()
        .enumerate()
        .map(|(j, &z)| cfg.alpha * (libm::exp(z - lse) - if j == label { 1.0 } else { 0.0 }))
        .collect();

    let n_p = pass.pg_logits.len() as f64;
    let w = cfg.w_star;
    let (pg, d_pg) = if ex.drop_pg {
        (None, alloc::vec![0.0; pass.pg_logits.len()])
    } else {
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(pass.pg_logits.len());
        for (&z, &y) in pass.pg_logits.iter().zip(&round.persona_labels) {
            let s = crate::saliency::sigmoid(z);
            if y {
                loss += w * softplus(-z);
                grad.push(cfg.beta * -w * (1.0 - s) / n_p);
            } else {
                loss += (1.0 - w) * softplus(z);
                grad.push(cfg.beta * (1.0 - w) * s / n_p);
            }
        }
        (Some(loss / n_p), grad)
    };

    let lm = if cfg.gamma != 0.0 {
        let prompt = assemble_prompt(round, &pass.grounding(), HISTORY_SEPARATOR);
        hook.loss(&prompt, None)
    } else {
        0.0
    };
    let parts = LossParts { kg, pg, lm };
    if !total_loss(&parts, cfg).is_finite() {
        return Err(Error::Numerics("loss"));
    }
    Ok((parts, d_pg, d_kg))
}

/// Mean total loss over `batch`, without gradients.
pub fn batch_loss(
    state: &ModelState,
    sampler: Sampler<'_>,
    batch: &[Example<'_, '_>],
    cfg: &TrainConfig,
    hook: &dyn LmLoss,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut total = 0.0;
    for ex in batch {
        let pass = RoundPass::forward(state, sampler, &ex.inputs, Mode::Train)?;
        let (parts, _, _) = example_loss(&pass, ex, cfg, hook)?;
        total += total_loss(&parts, cfg);
    }
    Ok(total / batch.len() as f64)
}

/// Mean total loss and its analytic gradient over `batch`.
pub fn gradients(
    state: &ModelState,
    sampler: Sampler<'_>,
    batch: &[Example<'_, '_>],
    cfg: &TrainConfig,
    hook: &dyn LmLoss,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut grads = GradientSet::zeros_like(state);
    let mut total = 0.0;
    for ex in batch {
        let pass = RoundPass::forward(state, sampler, &ex.inputs, Mode::Train)?;
        let (parts, d_pg, d_kg) = example_loss(&pass, ex, cfg, hook)?;
        total += total_loss(&parts, cfg);
        pass.backward(state, &ex.inputs, &d_pg, &d_kg, &mut grads)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dropped_pg: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// SGD with one round per step and a seeded shuffle per epoch.
pub fn train<S: EmbeddingSource + ?Sized>(
    corpus: &[DialogueRound],
    embeddings: &S,
    idf: Option<&IdfTable>,
    cfg: &TrainConfig,
) -> Result<ModelState> {
    train_with(corpus, embeddings, idf, cfg, &NoLmLoss, |_| {})
}

/// [`train`] with an `L_M` hook and a per-epoch callback.
pub fn train_with<S: EmbeddingSource + ?Sized>(
    corpus: &[DialogueRound],
    embeddings: &S,
    idf: Option<&IdfTable>,
    cfg: &TrainConfig,
    hook: &dyn LmLoss,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<ModelState> {
    cfg.validate()?;
    let d = embeddings.dim();
    let mut state = ModelState::init(d, cfg.reduced_dim(d)?, cfg.strategy, cfg.normalize_tokens, cfg.seed)?;
    let sampler = Sampler::new(cfg.strategy, idf, cfg.p_sr)?;
    if cfg.epochs > 0 && corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut dropped = 0;
        for &idx in &order {
            let round = &corpus[idx];
            let drop_pg = drop_persona_term(&round.persona_labels, cfg.p_star, &mut rng);
            dropped += usize::from(drop_pg);
            let ex = Example::new(round, embeddings, drop_pg)?;
            let (loss, grads) = gradients(&state, sampler, core::slice::from_ref(&ex), cfg, hook)?;
            state.apply(&grads, cfg.learning_rate);
            loss_sum += loss;
        }
        on_epoch(EpochStats {
            epoch,
            mean_loss: loss_sum / corpus.len() as f64,
            dropped_pg: dropped,
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(u64);

    impl RngCore for Fixed {
        fn next_u32(&mut self) -> u32 {
            self.0 as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    /// A generator whose first `f64` draw is `u`.
    fn draws(u: f64) -> Fixed {
        Fixed(((u * (1u64 << 53) as f64) as u64) << 11)
    }

    #[test]
    fn kg_loss_cases() {
        assert!((kg_loss(&[1.0 / 3.0, 2.0 / 3.0], 1).unwrap() - 0.4055).abs() < 1e-4);
        assert_eq!(kg_loss(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(kg_loss(&[0.2, 0.3, 0.5], 5), Err(Error::Label { label: 5, len: 3 }));
    }

    #[test]
    fn pg_loss_hand_case() {
        let l = pg_loss(&[0.9, 0.1], &[true, false], 0.9, 0.1, &mut draws(0.0))
            .unwrap()
            .unwrap();
        assert!((l - 0.05268).abs() < 1e-5);
        assert!((l - (-libm::log(0.9) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn pg_loss_drop_branch() {
        let probs = [0.3, 0.2];
        let neg = [false, false];
        assert_eq!(pg_loss(&probs, &neg, 0.9, 0.1, &mut draws(0.05)).unwrap(), None);
        assert!(pg_loss(&probs, &neg, 0.9, 0.1, &mut draws(0.5)).unwrap().is_some());
        assert!(pg_loss(&probs, &neg, 0.9, 0.0, &mut draws(0.0)).unwrap().is_some());
        assert!(pg_loss(&probs, &[true, false], 0.9, 0.99, &mut draws(0.0))
            .unwrap()
            .is_some());
    }

    #[test]
    fn pg_loss_length_mismatch() {
        let r = pg_loss(&[0.5], &[true, false], 0.9, 0.1, &mut draws(0.0));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn half_weight_is_half_plain_bce() {
        let probs = [0.2, 0.7, 0.9, 0.4];
        let labels = [true, false, true, true];
        let plain: f64 = probs
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| if y { -libm::log(p) } else { -libm::log(1.0 - p) })
            .sum::<f64>()
            / 4.0;
        let w = weighted_bce(&probs, &labels, 0.5).unwrap();
        assert!((w - 0.5 * plain).abs() < 1e-15);
    }

    #[test]
    fn total_loss_cases() {
        let cfg = TrainConfig::default();
        let parts = LossParts {
            kg: 0.4,
            pg: Some(0.05),
            lm: 0.0,
        };
        assert!((total_loss(&parts, &cfg) - 0.45).abs() < 1e-15);
        let dropped = LossParts {
            pg: None,
            lm: 0.2,
            ..parts
        };
        assert!((total_loss(&dropped, &cfg) - (0.4 + 10.0 * 0.2)).abs() < 1e-12);
        let no_lm = TrainConfig { gamma: 0.0, ..cfg };
        assert!((total_loss(&dropped, &no_lm) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                alpha: -1.0,
                ..Default::default()
            },
            TrainConfig {
                w_star: 1.0,
                ..Default::default()
            },
            TrainConfig {
                p_star: 1.0,
                ..Default::default()
            },
            TrainConfig {
                p_sr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                d0: Some(0),
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn softplus_matches_naive() {
        for z in [-30.0, -2.0, 0.0, 1.5, 30.0] {
            assert!((softplus(z) - libm::log(1.0 + libm::exp(z))).abs() < 1e-12);
        }
        assert!(softplus(800.0).is_finite());
    }
}
