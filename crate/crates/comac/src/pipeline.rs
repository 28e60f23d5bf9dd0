//! Training, grounding and evaluation over whole corpora.

use std::borrow::Cow;
use std::env;

use comac_core::corpus::{DialogueRound, TextEntry};
use comac_core::embedding::{EmbeddingSource, EmbeddingStore, HashEmbedder, TokenMatrix};
use comac_core::grounding::GroundingResult;
use comac_core::metrics::{kg_accuracy, pg_metrics};
use comac_core::model::{ground_round, Sampler, Strategy};
use comac_core::objective::{train_with, EpochStats, NoLmLoss, TrainConfig};
use comac_core::saliency::{build_idf, IdfTable};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::report::{EvalReport, TextReport};

/// Default width of the built-in hash embedder.
pub const DEFAULT_DIM: usize = 128;

/// Environment variable that caps worker threads.
pub const THREADS_ENV: &str = "COMAC_THREADS";

/// Either the built-in embedder or an imported embedding file.
#[derive(Debug, Clone)]
pub enum Embeddings {
    Hash(HashEmbedder),
    Store(EmbeddingStore),
}

impl EmbeddingSource for Embeddings {
    fn dim(&self) -> usize {
        match self {
            Embeddings::Hash(h) => h.dim(),
            Embeddings::Store(s) => s.dim(),
        }
    }

    fn embed<'a>(&'a self, entry: &TextEntry) -> comac_core::Result<Cow<'a, TokenMatrix>> {
        match self {
            Embeddings::Hash(h) => h.embed(entry),
            Embeddings::Store(s) => s.embed(entry),
        }
    }
}

/// A pool sized by `threads`, else by `COMAC_THREADS`, else by rayon's default.
pub fn thread_pool(threads: Option<usize>) -> Result<ThreadPool> {
    let threads = match threads {
        Some(n) => Some(n),
        None => match env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

/// Trains on `corpus`. For TF-IDF sampling the IDF table is `idf` when
/// given, else built from `corpus`; it is stored in the checkpoint.
pub fn train_model<S: EmbeddingSource + ?Sized>(
    corpus: &[DialogueRound],
    embeddings: &S,
    idf: Option<IdfTable>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(EpochStats),
) -> Result<Checkpoint> {
    let idf = match cfg.strategy {
        Strategy::TfIdf => Some(match idf {
            Some(t) => t,
            None => build_idf(corpus)?,
        }),
        Strategy::FeedForward => None,
    };
    let state = train_with(corpus, embeddings, idf.as_ref(), cfg, &NoLmLoss, on_epoch)?;
    Ok(Checkpoint {
        state,
        config: cfg.clone(),
        idf,
    })
}

/// Grounds every round with the checkpoint's sampling settings, in corpus order.
pub fn ground_corpus<S: EmbeddingSource + Sync + ?Sized>(
    ck: &Checkpoint,
    corpus: &[DialogueRound],
    embeddings: &S,
    pool: &ThreadPool,
) -> Result<Vec<GroundingResult>> {
    ground_corpus_with(ck, ck.config.p_sr, corpus, embeddings, pool)
}

/// [`ground_corpus`] with an explicit keep ratio.
pub fn ground_corpus_with<S: EmbeddingSource + Sync + ?Sized>(
    ck: &Checkpoint,
    p_sr: f64,
    corpus: &[DialogueRound],
    embeddings: &S,
    pool: &ThreadPool,
) -> Result<Vec<GroundingResult>> {
    if embeddings.dim() != ck.state.input_dim() {
        return Err(Error::Config(format!(
            "embedding width {} does not match model width {}",
            embeddings.dim(),
            ck.state.input_dim()
        )));
    }
    let sampler = Sampler::new(ck.state.strategy(), ck.idf.as_ref(), p_sr)?;
    pool.install(|| {
        corpus
            .par_iter()
            .map(|round| ground_round(&ck.state, sampler, round, embeddings).map_err(Error::from))
            .collect()
    })
}

/// Grounding metrics of `results` against the corpus labels.
pub fn score(corpus: &[DialogueRound], results: &[GroundingResult], text: Option<TextReport>) -> Result<EvalReport> {
    let preds: Vec<&[bool]> = results.iter().map(|r| r.persona_mask.as_slice()).collect();
    let labels: Vec<&[bool]> = corpus.iter().map(|r| r.persona_labels.as_slice()).collect();
    let pg = pg_metrics(&preds, &labels)?;
    let picks: Vec<usize> = results.iter().map(|r| r.knowledge_pick).collect();
    let gold: Vec<usize> = corpus.iter().map(|r| r.knowledge_label).collect();
    Ok(EvalReport {
        rounds: corpus.len(),
        pg,
        kg_accuracy: kg_accuracy(&picks, &gold)?,
        text,
        bleu: None,
        ppl: None,
        generated_at: None,
    })
}

pub fn evaluate<S: EmbeddingSource + Sync + ?Sized>(
    ck: &Checkpoint,
    corpus: &[DialogueRound],
    embeddings: &S,
    pool: &ThreadPool,
) -> Result<EvalReport> {
    let results = ground_corpus(ck, corpus, embeddings, pool)?;
    score(corpus, &results, None)
}
