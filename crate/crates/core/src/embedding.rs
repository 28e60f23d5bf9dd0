//! Token embedding matrices and the trainable dimension reduction.
//!
//! Token embeddings are frozen inputs. They come either from [`hash_embed`],
//! a deterministic stand-in that maps every token surface to a fixed
//! pseudo-random vector, or from an imported file of real encoder states.
//! The [`ReductionLayer`] projects `d`-dimensional rows to `d0 = d / 4`
//! dimensions and L2-normalizes them, so a dot product between two reduced
//! rows is a cosine.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TextEntry;
use crate::matrix::{dot, Matrix};
use crate::{Error, Result};

/// Token embeddings of one entry: `s` rows of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub entry_id: String,
    /// Token surfaces, one per row.
    pub surfaces: Vec<String>,
    rows: Matrix<f32>,
}

impl TokenMatrix {
    pub fn new(entry_id: impl Into<String>, surfaces: Vec<String>, rows: Matrix<f32>) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::EmptyEntry);
        }
        if surfaces.len() != rows.rows() {
            return Err(Error::Shape {
                what: "token surfaces",
                expected: rows.rows(),
                found: surfaces.len(),
            });
        }
        if rows.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("token embedding"));
        }
        Ok(Self {
            entry_id: entry_id.into(),
            surfaces,
            rows,
        })
    }

    pub fn rows(&self) -> &Matrix<f32> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }
}

const HASH_SEED: u64 = 0x636f_6d61_635f_6531;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fills `out` with the hash embedding of one token surface, values in `[-1, 1]`.
pub fn embed_token(surface: &str, out: &mut [f32]) {
    let mut state = fnv1a(surface.as_bytes()) ^ HASH_SEED;
    for v in out.iter_mut() {
        let bits = splitmix64(&mut state) >> 11;
        let unit = bits as f64 / (1u64 << 53) as f64;
        *v = (2.0 * unit - 1.0) as f32;
    }
}

/// Deterministic token embeddings: row `i` depends only on token `i`'s surface.
pub fn hash_embed(entry: &TextEntry, d: usize) -> Result<TokenMatrix> {
    if d < 4 {
        return Err(Error::Config(format!("embedding dimension {d} < 4")));
    }
    let mut rows = Matrix::<f32>::zeros(entry.len(), d);
    for (i, tok) in entry.tokens.iter().enumerate() {
        embed_token(&tok.surface, rows.row_mut(i));
    }
    TokenMatrix::new(entry.id.clone(), entry.surfaces().map(String::from).collect(), rows)
}

/// Supplies token embeddings for text entries.
pub trait EmbeddingSource {
    fn dim(&self) -> usize;
    fn embed<'a>(&'a self, entry: &TextEntry) -> Result<Cow<'a, TokenMatrix>>;
}

/// On-the-fly [`hash_embed`] source.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    d: usize,
}

impl HashEmbedder {
    pub fn new(d: usize) -> Result<Self> {
        if d < 4 {
            return Err(Error::Config(format!("embedding dimension {d} < 4")));
        }
        Ok(Self { d })
    }
}

impl EmbeddingSource for HashEmbedder {
    fn dim(&self) -> usize {
        self.d
    }

    fn embed<'a>(&'a self, entry: &TextEntry) -> Result<Cow<'a, TokenMatrix>> {
        hash_embed(entry, self.d).map(Cow::Owned)
    }
}

/// Precomputed embeddings keyed by entry id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    d: usize,
    entries: BTreeMap<String, TokenMatrix>,
}

impl EmbeddingStore {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, m: TokenMatrix) -> Result<()> {
        if m.dim() != self.d {
            return Err(Error::Shape {
                what: "embedding dimension",
                expected: self.d,
                found: m.dim(),
            });
        }
        self.entries.insert(m.entry_id.clone(), m);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&TokenMatrix> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = &TokenMatrix> + '_ {
        self.entries.values()
    }
}

impl EmbeddingSource for EmbeddingStore {
    fn dim(&self) -> usize {
        self.d
    }

    fn embed<'a>(&'a self, entry: &TextEntry) -> Result<Cow<'a, TokenMatrix>> {
        self.entries
            .get(&entry.id)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::MissingEmbedding(entry.id.clone()))
    }
}

/// Linear projection `d -> d0` followed by optional row L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionLayer {
    /// `d x d0`, row-major.
    pub weight: Matrix<f64>,
    pub trainable: bool,
    pub normalize: bool,
}

impl ReductionLayer {
    pub fn new(weight: Matrix<f64>) -> Self {
        Self {
            weight,
            trainable: true,
            normalize: true,
        }
    }

    /// Seeded uniform init in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn random(d: usize, d0: usize, seed: u64) -> Result<Self> {
        if d == 0 || d0 == 0 {
            return Err(Error::Config(format!("reduction {d} -> {d0} has a zero dimension")));
        }
        let bound = 1.0 / libm::sqrt(d as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weight = Matrix::<f64>::zeros(d, d0);
        for w in weight.as_mut_slice() {
            *w = rng.random_range(-bound..=bound);
        }
        Ok(Self::new(weight))
    }

    /// `d0 = d / 4`; `d` must be divisible by 4.
    pub fn with_default_dim(d: usize, seed: u64) -> Result<Self> {
        Self::random(d, default_reduced_dim(d)?, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `out = row · W`, accumulated in `f64` in row order.
    pub fn project(&self, row: &[f32], out: &mut [f64]) {
        debug_assert_eq!(row.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.output_dim());
        out.fill(0.0);
        for (k, &x) in row.iter().enumerate() {
            let x = f64::from(x);
            for (o, w) in out.iter_mut().zip(self.weight.row(k)) {
                *o += x * w;
            }
        }
    }
}

/// `d / 4`, the default reduced width.
pub fn default_reduced_dim(d: usize) -> Result<usize> {
    if d < 4 || !d.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "default reduction needs a dimension divisible by 4, got {d}"
        )));
    }
    Ok(d / 4)
}

/// Reduced token rows of one entry, `s x d0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub entry_id: String,
    rows: Matrix<f64>,
}

impl ReducedMatrix {
    /// Wraps precomputed rows. Rows are used as given.
    pub fn from_rows(entry_id: impl Into<String>, rows: Matrix<f64>) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::EmptyEntry);
        }
        if rows.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("reduced matrix"));
        }
        Ok(Self {
            entry_id: entry_id.into(),
            rows,
        })
    }

    pub fn rows(&self) -> &Matrix<f64> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }
}

/// Projects every row through `layer` and, when the layer normalizes,
/// scales it to unit L2 norm.
pub fn reduce(m: &TokenMatrix, layer: &ReductionLayer) -> Result<ReducedMatrix> {
    if m.dim() != layer.input_dim() {
        return Err(Error::Shape {
            what: "reduction input",
            expected: layer.input_dim(),
            found: m.dim(),
        });
    }
    let mut out = Matrix::<f64>::zeros(m.len(), layer.output_dim());
    for (i, row) in m.rows().iter_rows().enumerate() {
        let z = out.row_mut(i);
        layer.project(row, z);
        if layer.normalize {
            let n = libm::sqrt(dot(z, z));
            if !(n > 0.0) {
                return Err(Error::DegenerateRow { row: i });
            }
            z.iter_mut().for_each(|v| *v /= n);
        }
    }
    ReducedMatrix::from_rows(m.entry_id.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use crate::matrix::l2_norm;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn entry(text: &str) -> TextEntry {
        TextEntry::new("e", Role::Persona, text).unwrap()
    }

    #[test]
    fn hash_embed_is_deterministic() {
        let e = entry("i like the sea");
        assert_eq!(hash_embed(&e, 32).unwrap(), hash_embed(&e, 32).unwrap());
    }

    #[test]
    fn repeated_surfaces_share_rows() {
        let m = hash_embed(&entry("a b a"), 16).unwrap();
        assert_eq!(m.rows().rows(), 3);
        assert_eq!(m.dim(), 16);
        assert_eq!(m.rows().row(0), m.rows().row(2));
        assert_ne!(m.rows().row(0), m.rows().row(1));
        assert!(m.rows().as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn no_collisions_on_random_vocabulary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut surfaces = BTreeSet::new();
        while surfaces.len() < 10_000 {
            let len = rng.random_range(1..=10);
            let s: String = (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect();
            surfaces.insert(s);
        }
        let mut rows = BTreeSet::new();
        let mut buf = [0f32; 16];
        for s in &surfaces {
            embed_token(s, &mut buf);
            rows.insert(buf.map(f32::to_bits));
        }
        assert_eq!(rows.len(), surfaces.len());
    }

    #[test]
    fn small_dimension_rejected() {
        assert!(hash_embed(&entry("a"), 3).is_err());
    }

    fn first_columns_identity(d: usize, d0: usize) -> ReductionLayer {
        let mut w = Matrix::<f64>::zeros(d, d0);
        for k in 0..d0 {
            w.set(k, k, 1.0);
        }
        ReductionLayer::new(w)
    }

    #[test]
    fn reduce_hand_case() {
        let mut rows = Matrix::<f32>::zeros(1, 8);
        rows.set(0, 0, 2.0);
        let m = TokenMatrix::new("x", vec!["t".into()], rows).unwrap();
        let r = reduce(&m, &first_columns_identity(8, 2)).unwrap();
        assert_eq!(r.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn reduce_shape_and_unit_norm() {
        let m = hash_embed(&entry("one two three"), 8).unwrap();
        let layer = ReductionLayer::random(8, 2, 3).unwrap();
        let r = reduce(&m, &layer).unwrap();
        assert_eq!((r.len(), r.dim()), (3, 2));
        for row in r.rows().iter_rows() {
            assert!((l2_norm(row) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn reduce_dimension_mismatch() {
        let m = hash_embed(&entry("x"), 12).unwrap();
        let layer = ReductionLayer::random(8, 2, 0).unwrap();
        assert!(matches!(reduce(&m, &layer), Err(Error::Shape { .. })));
    }

    #[test]
    fn reduce_zero_row_is_degenerate() {
        let mut rows = Matrix::<f32>::zeros(2, 8);
        rows.set(0, 0, 1.0);
        rows.set(1, 5, 1.0);
        let m = TokenMatrix::new("x", vec!["a".into(), "b".into()], rows).unwrap();
        let r = reduce(&m, &first_columns_identity(8, 2));
        assert_eq!(r, Err(Error::DegenerateRow { row: 1 }));
    }

    #[test]
    fn default_dim_is_quarter() {
        let layer = ReductionLayer::with_default_dim(128, 1).unwrap();
        assert_eq!(layer.output_dim(), 32);
        assert!(ReductionLayer::with_default_dim(30, 1).is_err());
        let bound = 1.0 / libm::sqrt(128.0);
        assert!(layer.weight.as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn store_lookup_by_entry_id() {
        let e = TextEntry::new("d/0/p1", Role::Persona, "hello").unwrap();
        let mut store = EmbeddingStore::new(8);
        store.insert(hash_embed(&e, 8).unwrap()).unwrap();
        assert!(store.embed(&e).is_ok());
        let other = TextEntry::new("d/0/p2", Role::Persona, "hello").unwrap();
        assert!(matches!(store.embed(&other), Err(Error::MissingEmbedding(_))));
        assert!(store.insert(hash_embed(&e, 12).unwrap()).is_err());
    }
}
