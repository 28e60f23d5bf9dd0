//! Trainable state and the per-round forward/backward pass.
//!
//! One round is scored as follows:
//!
//! 1. every entry's tokens are projected through the reduction layer (and
//!    normalized), and a token subset is chosen by the sampling strategy;
//! 2. `S^PU`, `S^PK` and `S^KU` are filled with the sparse symmetric
//!    normalized similarity; `S^KP` is `S^PK` transposed;
//! 3. `S̃^PK` / `S̃^KP` average `S^PK` over knowledges / personas;
//! 4. the PG head applies a sigmoid and the KG head a softmax to the fused
//!    scores.
//!
//! [`RoundPass`] keeps the intermediates of that computation so the loss can
//! be differentiated by hand. Max reductions route gradient to the winning
//! token pair only (lowest index on ties). TF-IDF masks are constants. With the
//! feed-forward strategy, training uses a soft mask: every token row is scaled
//! by its saliency weight; inference uses the hard top-k mask instead.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::DialogueRound;
use crate::embedding::{EmbeddingSource, ReductionLayer, TokenMatrix};
use crate::grounding::{argmax, softmax, FusionParams, GroundingResult, Network};
use crate::latesim::{max_matches, MaxMatch};
use crate::matrix::{dot, Matrix};
use crate::saliency::{select_tokens, sigmoid, tfidf_weights_for, IdfTable, SaliencyScorer};
use crate::{Error, Result};

/// Token sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Strategy {
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "tfidf"))]
    TfIdf,
    #[cfg_attr(feature = "serde", serde(rename = "ff"))]
    FeedForward,
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub reduction: ReductionLayer,
    /// Present for the feed-forward strategy only.
    pub scorer: Option<SaliencyScorer>,
    pub pg: FusionParams,
    pub kg: FusionParams,
}

impl ModelState {
    /// Seeded reduction weights, small seeded scorer weights (feed-forward
    /// only) and all-zero fusion parameters.
    pub fn init(d: usize, d0: usize, strategy: Strategy, normalize: bool, seed: u64) -> Result<Self> {
        let mut reduction = ReductionLayer::random(d, d0, seed)?;
        reduction.normalize = normalize;
        let scorer = match strategy {
            Strategy::TfIdf => None,
            Strategy::FeedForward => {
                let bound = 1.0 / libm::sqrt(d0 as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a11_e9c7_0001);
                let v = (0..d0).map(|_| rng.random_range(-bound..=bound)).collect();
                Some(SaliencyScorer::new(v, 0.0))
            }
        };
        Ok(Self {
            reduction,
            scorer,
            pg: FusionParams::zeros(Network::Pg),
            kg: FusionParams::zeros(Network::Kg),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.reduction.input_dim()
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduction.output_dim()
    }

    pub fn strategy(&self) -> Strategy {
        if self.scorer.is_some() {
            Strategy::FeedForward
        } else {
            Strategy::TfIdf
        }
    }

    /// Reduction weights (row-major), scorer `v` and `c`, PG `w1 w2 b`, KG `w1 w2 b`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.reduction.weight.as_slice().to_vec();
        if let Some(s) = &self.scorer {
            out.extend_from_slice(&s.v);
            out.push(s.c);
        }
        for p in [&self.pg, &self.kg] {
            out.extend_from_slice(&[p.w1, p.w2, p.b]);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.reduction.weight.as_slice().len() + self.scorer.as_ref().map_or(0, |s| s.v.len() + 1) + 6
    }

    /// Inverse of [`ModelState::flatten`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape {
                what: "flat parameter vector",
                expected: self.n_params(),
                found: flat.len(),
            });
        }
        let w = self.reduction.weight.as_mut_slice();
        let (head, mut rest) = flat.split_at(w.len());
        w.copy_from_slice(head);
        if let Some(s) = &mut self.scorer {
            let (v, r) = rest.split_at(s.v.len());
            s.v.copy_from_slice(v);
            s.c = r[0];
            rest = &r[1..];
        }
        for (p, chunk) in [&mut self.pg, &mut self.kg].into_iter().zip(rest.chunks(3)) {
            p.w1 = chunk[0];
            p.w2 = chunk[1];
            p.b = chunk[2];
        }
        Ok(())
    }

    /// Plain gradient step `θ ← θ − lr · g`; frozen components are skipped.
    pub fn apply(&mut self, grads: &GradientSet, lr: f64) {
        if self.reduction.trainable {
            for (w, g) in self
                .reduction
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(grads.reduction.as_slice())
            {
                *w -= lr * g;
            }
        }
        if let Some(s) = &mut self.scorer {
            if s.trainable {
                for (v, g) in s.v.iter_mut().zip(&grads.scorer_v) {
                    *v -= lr * g;
                }
                s.c -= lr * grads.scorer_c;
            }
        }
        for (p, g) in [(&mut self.pg, grads.pg), (&mut self.kg, grads.kg)] {
            p.w1 -= lr * g[0];
            p.w2 -= lr * g[1];
            p.b -= lr * g[2];
        }
    }
}

/// Gradients with the shape of [`ModelState`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub reduction: Matrix<f64>,
    pub scorer_v: Vec<f64>,
    pub scorer_c: f64,
    /// `d/dw1, d/dw2, d/db`.
    pub pg: [f64; 3],
    pub kg: [f64; 3],
}

impl GradientSet {
    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            reduction: Matrix::zeros(state.input_dim(), state.reduced_dim()),
            scorer_v: vec![0.0; state.scorer.as_ref().map_or(0, |s| s.v.len())],
            scorer_c: 0.0,
            pg: [0.0; 3],
            kg: [0.0; 3],
        }
    }

    /// Same layout as [`ModelState::flatten`] for a state with the same strategy.
    pub fn flatten(&self, with_scorer: bool) -> Vec<f64> {
        let mut out = self.reduction.as_slice().to_vec();
        if with_scorer {
            out.extend_from_slice(&self.scorer_v);
            out.push(self.scorer_c);
        }
        out.extend_from_slice(&self.pg);
        out.extend_from_slice(&self.kg);
        out
    }

    pub fn scale(&mut self, k: f64) {
        self.reduction.as_mut_slice().iter_mut().for_each(|g| *g *= k);
        self.scorer_v.iter_mut().for_each(|g| *g *= k);
        self.scorer_c *= k;
        self.pg.iter_mut().for_each(|g| *g *= k);
        self.kg.iter_mut().for_each(|g| *g *= k);
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.reduction.as_mut_slice().iter_mut().zip(other.reduction.as_slice()) {
            *a += b;
        }
        for (a, b) in self.scorer_v.iter_mut().zip(&other.scorer_v) {
            *a += b;
        }
        self.scorer_c += other.scorer_c;
        for k in 0..3 {
            self.pg[k] += other.pg[k];
            self.kg[k] += other.kg[k];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.reduction.as_slice().iter().all(|g| g.is_finite())
            && self.scorer_v.iter().all(|g| g.is_finite())
            && self.scorer_c.is_finite()
            && self.pg.iter().chain(&self.kg).all(|g| g.is_finite())
    }
}

/// How token subsets are chosen.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    TfIdf { idf: &'a IdfTable, p_sr: f64 },
    FeedForward { p_sr: f64 },
}

impl<'a> Sampler<'a> {
    pub fn new(strategy: Strategy, idf: Option<&'a IdfTable>, p_sr: f64) -> Result<Self> {
        match strategy {
            Strategy::TfIdf => {
                let idf = idf.ok_or_else(|| Error::Config("TF-IDF sampling needs an IDF table".into()))?;
                Ok(Sampler::TfIdf { idf, p_sr })
            }
            Strategy::FeedForward => Ok(Sampler::FeedForward { p_sr }),
        }
    }
}

/// Whether feed-forward saliency acts as a soft weighting (training) or a
/// hard top-k mask (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Token embeddings of one round, in round order.
#[derive(Debug, Clone)]
pub struct RoundInputs<'a> {
    pub utterance: Cow<'a, TokenMatrix>,
    pub personas: Vec<Cow<'a, TokenMatrix>>,
    pub knowledges: Vec<Cow<'a, TokenMatrix>>,
}

impl<'a> RoundInputs<'a> {
    pub fn gather<S: EmbeddingSource + ?Sized>(round: &DialogueRound, source: &'a S) -> Result<Self> {
        Ok(Self {
            utterance: source.embed(&round.utterance)?,
            personas: round.personas.iter().map(|e| source.embed(e)).collect::<Result<_>>()?,
            knowledges: round
                .knowledges
                .iter()
                .map(|e| source.embed(e))
                .collect::<Result<_>>()?,
        })
    }

    fn entries(&self) -> impl Iterator<Item = &TokenMatrix> + '_ {
        core::iter::once(self.utterance.as_ref())
            .chain(self.personas.iter().map(|m| m.as_ref()))
            .chain(self.knowledges.iter().map(|m| m.as_ref()))
    }
}

/// Forward intermediates of one entry.
#[derive(Debug, Clone)]
struct EntryPass {
    /// Token positions that take part in similarity.
    used: Vec<usize>,
    /// Projection norms, one per used token.
    norms: Vec<f64>,
    /// Projected (and normalized) rows.
    rows: Matrix<f64>,
    /// Soft saliency weights; empty when rows are used as is.
    weights: Vec<f64>,
    /// Rows entering the similarity: `weights[i] * rows[i]`, or `rows`.
    eff: Matrix<f64>,
}

fn project_rows(tm: &TokenMatrix, positions: &[usize], layer: &ReductionLayer) -> Result<(Matrix<f64>, Vec<f64>)> {
    let d0 = layer.output_dim();
    let mut rows = Matrix::zeros(positions.len(), d0);
    let mut norms = Vec::with_capacity(positions.len());
    for (i, &p) in positions.iter().enumerate() {
        let z = rows.row_mut(i);
        layer.project(tm.rows().row(p), z);
        if layer.normalize {
            let n = libm::sqrt(dot(z, z));
            if !(n > 0.0) {
                return Err(Error::DegenerateRow { row: p });
            }
            z.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        } else {
            norms.push(1.0);
        }
    }
    Ok((rows, norms))
}

fn select_rows(m: &Matrix<f64>, keep: &[usize]) -> Matrix<f64> {
    let mut out = Matrix::zeros(keep.len(), m.cols());
    for (i, &k) in keep.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(k));
    }
    out
}

fn entry_forward(tm: &TokenMatrix, state: &ModelState, sampler: Sampler<'_>, mode: Mode) -> Result<EntryPass> {
    if tm.dim() != state.input_dim() {
        return Err(Error::Shape {
            what: "embedding dimension",
            expected: state.input_dim(),
            found: tm.dim(),
        });
    }
    match sampler {
        Sampler::TfIdf { idf, p_sr } => {
            let weights = tfidf_weights_for(&tm.surfaces, idf);
            let used = select_tokens(&weights, p_sr)?.kept().to_vec();
            let (rows, norms) = project_rows(tm, &used, &state.reduction)?;
            Ok(EntryPass {
                used,
                norms,
                eff: rows.clone(),
                rows,
                weights: Vec::new(),
            })
        }
        Sampler::FeedForward { p_sr } => {
            let scorer = state
                .scorer
                .as_ref()
                .ok_or_else(|| Error::Config("feed-forward sampling needs a saliency scorer".into()))?;
            if scorer.dim() != state.reduced_dim() {
                return Err(Error::Shape {
                    what: "saliency scorer",
                    expected: state.reduced_dim(),
                    found: scorer.dim(),
                });
            }
            let all: Vec<usize> = (0..tm.len()).collect();
            let (rows, norms) = project_rows(tm, &all, &state.reduction)?;
            let weights: Vec<f64> = rows.iter_rows().map(|r| scorer.score_row(r)).collect();
            match mode {
                Mode::Train => {
                    let mut eff = rows.clone();
                    for (i, &w) in weights.iter().enumerate() {
                        eff.row_mut(i).iter_mut().for_each(|v| *v *= w);
                    }
                    Ok(EntryPass {
                        used: all,
                        norms,
                        rows,
                        weights,
                        eff,
                    })
                }
                Mode::Infer => {
                    let keep = select_tokens(&weights, p_sr)?.kept().to_vec();
                    let rows = select_rows(&rows, &keep);
                    let norms = keep.iter().map(|&k| norms[k]).collect();
                    Ok(EntryPass {
                        used: keep,
                        norms,
                        eff: rows.clone(),
                        rows,
                        weights: Vec::new(),
                    })
                }
            }
        }
    }
}

/// One `S_SSN(a, b)` evaluation with its max-reduction winners.
#[derive(Debug, Clone)]
struct PairPass {
    a: usize,
    b: usize,
    ab: Vec<MaxMatch>,
    ba: Vec<MaxMatch>,
    value: f64,
}

fn pair_forward(entries: &[EntryPass], a: usize, b: usize) -> Result<PairPass> {
    let (ea, eb) = (&entries[a].eff, &entries[b].eff);
    let ab = max_matches(ea, eb)?;
    let ba = max_matches(eb, ea)?;
    let sum = |m: &[MaxMatch]| m.iter().fold(0.0, |acc, x| acc + x.score);
    let value = sum(&ab) / ab.len() as f64 + sum(&ba) / ba.len() as f64;
    Ok(PairPass { a, b, ab, ba, value })
}

/// Forward state of one round; see the module docs.
#[derive(Debug, Clone)]
pub struct RoundPass {
    n_p: usize,
    n_k: usize,
    entries: Vec<EntryPass>,
    /// `S^PU_i`.
    pu: Vec<PairPass>,
    /// `S^PK_{ij}`, row-major `n_p x n_k`.
    pk: Vec<PairPass>,
    /// `S^KU_j`.
    ku: Vec<PairPass>,
    pub pk_rel: Vec<f64>,
    pub kp_rel: Vec<f64>,
    pub pg_logits: Vec<f64>,
    pub kg_logits: Vec<f64>,
}

impl RoundPass {
    pub fn forward(state: &ModelState, sampler: Sampler<'_>, inputs: &RoundInputs<'_>, mode: Mode) -> Result<Self> {
        let n_p = inputs.personas.len();
        let n_k = inputs.knowledges.len();
        if n_p == 0 || n_k == 0 {
            return Err(Error::EmptyEntry);
        }
        let entries = inputs
            .entries()
            .map(|tm| entry_forward(tm, state, sampler, mode))
            .collect::<Result<Vec<_>>>()?;
        let p = |i: usize| 1 + i;
        let k = |j: usize| 1 + n_p + j;

        let pu = (0..n_p)
            .map(|i| pair_forward(&entries, p(i), 0))
            .collect::<Result<Vec<_>>>()?;
        let mut pk = Vec::with_capacity(n_p * n_k);
        for i in 0..n_p {
            for j in 0..n_k {
                pk.push(pair_forward(&entries, p(i), k(j))?);
            }
        }
        let ku = (0..n_k)
            .map(|j| pair_forward(&entries, k(j), 0))
            .collect::<Result<Vec<_>>>()?;

        let pk_rel: Vec<f64> = (0..n_p)
            .map(|i| pk[i * n_k..(i + 1) * n_k].iter().fold(0.0, |a, c| a + c.value) / n_k as f64)
            .collect();
        let kp_rel: Vec<f64> = (0..n_k)
            .map(|j| (0..n_p).fold(0.0, |a, i| a + pk[i * n_k + j].value) / n_p as f64)
            .collect();
        let pg_logits = (0..n_p).map(|i| state.pg.fuse(pk_rel[i], pu[i].value)).collect();
        let kg_logits = (0..n_k).map(|j| state.kg.fuse(kp_rel[j], ku[j].value)).collect();

        Ok(Self {
            n_p,
            n_k,
            entries,
            pu,
            pk,
            ku,
            pk_rel,
            kp_rel,
            pg_logits,
            kg_logits,
        })
    }

    /// `S^PU` as a vector over personas.
    pub fn pu(&self) -> Vec<f64> {
        self.pu.iter().map(|c| c.value).collect()
    }

    /// `S^KU` as a vector over knowledges.
    pub fn ku(&self) -> Vec<f64> {
        self.ku.iter().map(|c| c.value).collect()
    }

    /// `S^PK_{ij}`.
    pub fn pk(&self, i: usize, j: usize) -> f64 {
        self.pk[i * self.n_k + j].value
    }

    /// Token positions of entry `e` (0 = utterance, then personas, then
    /// knowledges) that took part in similarity.
    pub fn used_tokens(&self, e: usize) -> &[usize] {
        &self.entries[e].used
    }

    /// Smallest gap between a max-reduction winner and its runner-up.
    pub fn min_margin(&self) -> f64 {
        self.pu
            .iter()
            .chain(&self.pk)
            .chain(&self.ku)
            .flat_map(|c| c.ab.iter().chain(&c.ba))
            .fold(f64::INFINITY, |m, x| m.min(x.margin))
    }

    pub fn grounding(&self) -> GroundingResult {
        let persona_probs: Vec<f64> = self.pg_logits.iter().map(|&z| sigmoid(z)).collect();
        let persona_mask = persona_probs.iter().map(|&p| p > 0.5).collect();
        GroundingResult {
            persona_probs,
            persona_mask,
            knowledge_dist: softmax(&self.kg_logits),
            knowledge_pick: argmax(&self.kg_logits),
        }
    }

    /// Backpropagates `dL/d(pg logits)` and `dL/d(kg logits)` into `grads`.
    pub fn backward(
        &self,
        state: &ModelState,
        inputs: &RoundInputs<'_>,
        d_pg: &[f64],
        d_kg: &[f64],
        grads: &mut GradientSet,
    ) -> Result<()> {
        let (n_p, n_k) = (self.n_p, self.n_k);
        if d_pg.len() != n_p || d_kg.len() != n_k {
            return Err(Error::Shape {
                what: "logit gradients",
                expected: n_p + n_k,
                found: d_pg.len() + d_kg.len(),
            });
        }

        // Fusion parameters.
        for i in 0..n_p {
            grads.pg[0] += d_pg[i] * self.pk_rel[i];
            grads.pg[1] += d_pg[i] * self.pu[i].value;
            grads.pg[2] += d_pg[i];
        }
        for j in 0..n_k {
            grads.kg[0] += d_kg[j] * self.kp_rel[j];
            grads.kg[1] += d_kg[j] * self.ku[j].value;
            grads.kg[2] += d_kg[j];
        }

        // Upstream gradient on every similarity cell.
        let d0 = state.reduced_dim();
        let mut d_eff: Vec<Matrix<f64>> = self.entries.iter().map(|e| Matrix::zeros(e.eff.rows(), d0)).collect();
        for i in 0..n_p {
            self.pair_backward(&self.pu[i], d_pg[i] * state.pg.w2, &mut d_eff);
        }
        for j in 0..n_k {
            self.pair_backward(&self.ku[j], d_kg[j] * state.kg.w2, &mut d_eff);
        }
        for i in 0..n_p {
            for j in 0..n_k {
                let g = d_pg[i] * state.pg.w1 / n_k as f64 + d_kg[j] * state.kg.w1 / n_p as f64;
                self.pair_backward(&self.pk[i * n_k + j], g, &mut d_eff);
            }
        }

        // Through saliency weighting, normalization and projection.
        let embeddings: Vec<&TokenMatrix> = inputs.entries().collect();
        let mut d_row = vec![0.0; d0];
        let mut d_z = vec![0.0; d0];
        for ((entry, grad), tm) in self.entries.iter().zip(&d_eff).zip(embeddings) {
            for t in 0..entry.used.len() {
                let g_eff = grad.row(t);
                if g_eff.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let row = entry.rows.row(t);
                if entry.weights.is_empty() {
                    d_row.copy_from_slice(g_eff);
                } else {
                    let scorer = state.scorer.as_ref().ok_or(Error::Numerics("missing scorer"))?;
                    let s = entry.weights[t];
                    let du = dot(g_eff, row) * s * (1.0 - s);
                    for ((dr, &g), &v) in d_row.iter_mut().zip(g_eff).zip(&scorer.v) {
                        *dr = s * g + du * v;
                    }
                    for (gv, &r) in grads.scorer_v.iter_mut().zip(row) {
                        *gv += du * r;
                    }
                    grads.scorer_c += du;
                }
                if state.reduction.normalize {
                    let n = entry.norms[t];
                    let proj = dot(row, &d_row);
                    for ((dz, &dr), &r) in d_z.iter_mut().zip(&d_row).zip(row) {
                        *dz = (dr - r * proj) / n;
                    }
                } else {
                    d_z.copy_from_slice(&d_row);
                }
                let x = tm.rows().row(entry.used[t]);
                for (k, &xk) in x.iter().enumerate() {
                    let xk = f64::from(xk);
                    if xk == 0.0 {
                        continue;
                    }
                    for (gw, &dz) in grads.reduction.row_mut(k).iter_mut().zip(&d_z) {
                        *gw += xk * dz;
                    }
                }
            }
        }
        if !grads.is_finite() {
            return Err(Error::Numerics("gradients"));
        }
        Ok(())
    }

    fn pair_backward(&self, pair: &PairPass, g: f64, d_eff: &mut [Matrix<f64>]) {
        if g == 0.0 {
            return;
        }
        for (src, dst, matches) in [(pair.a, pair.b, &pair.ab), (pair.b, pair.a, &pair.ba)] {
            let scale = g / matches.len() as f64;
            for (i, m) in matches.iter().enumerate() {
                let x = self.entries[src].eff.row(i);
                let y = self.entries[dst].eff.row(m.best);
                for (d, v) in d_eff[src].row_mut(i).iter_mut().zip(y) {
                    *d += scale * v;
                }
                for (d, v) in d_eff[dst].row_mut(m.best).iter_mut().zip(x) {
                    *d += scale * v;
                }
            }
        }
    }
}

/// Grounds one round with hard masks.
pub fn infer_round(state: &ModelState, sampler: Sampler<'_>, inputs: &RoundInputs<'_>) -> Result<GroundingResult> {
    Ok(RoundPass::forward(state, sampler, inputs, Mode::Infer)?.grounding())
}

/// Fetches embeddings for `round` and grounds it.
pub fn ground_round<S: EmbeddingSource + ?Sized>(
    state: &ModelState,
    sampler: Sampler<'_>,
    round: &DialogueRound,
    source: &S,
) -> Result<GroundingResult> {
    let inputs = RoundInputs::gather(round, source)?;
    if inputs.personas.len() != round.n_personas() || inputs.knowledges.len() != round.n_knowledges() {
        return Err(Error::Schema(format!(
            "{}/{}: embedding count mismatch",
            round.dialog_id, round.round
        )));
    }
    infer_round(state, sampler, &inputs)
}
