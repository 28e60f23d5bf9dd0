//! Per-token importance and sparse token selection.
//!
//! Two strategies weight tokens: TF-IDF against a precomputed [`IdfTable`],
//! or a learned affine + sigmoid [`SaliencyScorer`] over reduced rows. Either
//! weighting feeds [`select_tokens`], which keeps the top `P_sr` fraction of
//! positions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{DialogueRound, TextEntry};
use crate::embedding::ReducedMatrix;
use crate::matrix::dot;
use crate::{Error, Result};

/// Smoothed inverse document frequencies, `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdfTable {
    pub doc_count: usize,
    pub idf: BTreeMap<String, f64>,
}

/// `ln((1 + n) / (1 + df)) + 1`.
pub fn smoothed_idf(n: usize, df: usize) -> f64 {
    libm::log((1.0 + n as f64) / (1.0 + df as f64)) + 1.0
}

impl IdfTable {
    /// Builds the table over arbitrary documents given as token surfaces.
    pub fn from_documents<'a, D, T>(docs: D) -> Result<Self>
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        let mut n = 0usize;
        for doc in docs {
            n += 1;
            let distinct: BTreeSet<&str> = doc.into_iter().collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let idf = df
            .into_iter()
            .map(|(t, c)| (String::from(t), smoothed_idf(n, c)))
            .collect();
        Ok(Self { doc_count: n, idf })
    }

    /// IDF of `surface`; unseen tokens get the `df = 0` value.
    pub fn idf(&self, surface: &str) -> f64 {
        self.idf
            .get(surface)
            .copied()
            .unwrap_or_else(|| smoothed_idf(self.doc_count, 0))
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }
}

/// Every utterance, persona and knowledge entry of every round is one document.
pub fn build_idf(corpus: &[DialogueRound]) -> Result<IdfTable> {
    IdfTable::from_documents(corpus.iter().flat_map(|r| r.entries()).map(|e| e.surfaces()))
}

/// `count(surface_i in entry) * idf(surface_i)` for each position.
pub fn tfidf_weights(entry: &TextEntry, table: &IdfTable) -> Vec<f64> {
    let surfaces: Vec<&str> = entry.surfaces().collect();
    tfidf_weights_for(&surfaces, table)
}

/// [`tfidf_weights`] over bare surfaces (e.g. imported encoder tokens).
pub fn tfidf_weights_for<S: AsRef<str>>(surfaces: &[S], table: &IdfTable) -> Vec<f64> {
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for s in surfaces {
        *tf.entry(s.as_ref()).or_insert(0) += 1;
    }
    surfaces
        .iter()
        .map(|s| {
            let s = s.as_ref();
            tf[s] as f64 * table.idf(s)
        })
        .collect()
}

/// Single affine layer with sigmoid output over a reduced token row.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScorer {
    pub v: Vec<f64>,
    pub c: f64,
    pub trainable: bool,
}

impl SaliencyScorer {
    pub fn new(v: Vec<f64>, c: f64) -> Self {
        Self { v, c, trainable: true }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    #[inline]
    pub fn score_row(&self, row: &[f64]) -> f64 {
        sigmoid(dot(&self.v, row) + self.c)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `sigmoid(v · row_i + c)` per token.
pub fn ff_weights(m: &ReducedMatrix, scorer: &SaliencyScorer) -> Result<Vec<f64>> {
    if m.dim() != scorer.dim() {
        return Err(Error::Shape {
            what: "saliency scorer",
            expected: scorer.dim(),
            found: m.dim(),
        });
    }
    Ok(m.rows().iter_rows().map(|r| scorer.score_row(r)).collect())
}

/// Sorted token positions retained for sparse similarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    kept: Vec<usize>,
}

impl SelectionMask {
    /// Every position of an `s`-token entry.
    pub fn full(s: usize) -> Self {
        Self { kept: (0..s).collect() }
    }

    /// Sorts and deduplicates `positions`; rejects an empty set.
    pub fn from_positions(mut positions: Vec<usize>) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if positions.is_empty() {
            return Err(Error::EmptyEntry);
        }
        Ok(Self { kept: positions })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Errors if any position is `>= s`.
    pub fn check(&self, s: usize) -> Result<()> {
        if self.kept.is_empty() {
            return Err(Error::EmptyEntry);
        }
        match self.kept.last() {
            Some(&p) if p >= s => Err(Error::MaskOutOfRange { position: p, len: s }),
            _ => Ok(()),
        }
    }
}

fn check_ratio(p_sr: f64) -> Result<()> {
    if !(p_sr > 0.0 && p_sr <= 1.0) {
        return Err(Error::Config(format!("P_sr must lie in (0, 1], got {p_sr}")));
    }
    Ok(())
}

/// `max(1, round_half_up(p_sr * s))`.
///
/// Products within `1e-9` below a half are treated as halves so decimal
/// ratios such as `0.35 * 10` round the way they read.
pub fn kept_count(p_sr: f64, s: usize) -> Result<usize> {
    check_ratio(p_sr)?;
    let k = libm::floor(p_sr * s as f64 + 0.5 + 1e-9) as usize;
    Ok(k.clamp(1, s.max(1)))
}

/// Keeps the `k` highest-weight positions, ties toward the earlier position.
pub fn select_tokens(weights: &[f64], p_sr: f64) -> Result<SelectionMask> {
    if weights.is_empty() {
        return Err(Error::EmptyEntry);
    }
    let k = kept_count(p_sr, weights.len())?;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(SelectionMask { kept: order })
}
