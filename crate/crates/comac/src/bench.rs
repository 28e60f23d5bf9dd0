//! Wall-time of grounding inference with and without token sampling.

use std::time::Instant;

use comac_core::corpus::DialogueRound;
use comac_core::embedding::EmbeddingSource;
use rayon::ThreadPool;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::pipeline::ground_corpus_with;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rounds: usize,
    pub repeats: usize,
    pub p_sr: f64,
    /// Best-of-`repeats` seconds with the configured keep ratio.
    pub sparse_secs: f64,
    /// Best-of-`repeats` seconds with every token kept.
    pub dense_secs: f64,
    /// `1 - sparse / dense`.
    pub saving: f64,
}

fn best_of<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

pub fn run_bench<S: EmbeddingSource + Sync + ?Sized>(
    ck: &Checkpoint,
    corpus: &[DialogueRound],
    embeddings: &S,
    repeats: usize,
    pool: &ThreadPool,
) -> Result<BenchReport> {
    let p_sr = ck.config.p_sr;
    let sparse = best_of(repeats, || {
        ground_corpus_with(ck, p_sr, corpus, embeddings, pool).map(drop)
    })?;
    let dense = best_of(repeats, || {
        ground_corpus_with(ck, 1.0, corpus, embeddings, pool).map(drop)
    })?;
    Ok(BenchReport {
        rounds: corpus.len(),
        repeats: repeats.max(1),
        p_sr,
        sparse_secs: sparse,
        dense_secs: dense,
        saving: if dense > 0.0 { 1.0 - sparse / dense } else { 0.0 },
    })
}
