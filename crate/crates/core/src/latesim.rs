//! Late-interaction similarity between token matrices.
//!
//! ```text
//! S_C(x, y)   = Σ_i max_j  x_i · y_j
//! S_N(x, y)   = S_C(x, y) / |x|
//! S_SN(x, y)  = S_N(x, y) + S_N(y, x)
//! S_SSN(x, y) = S_SN(x̂, ŷ)          x̂, ŷ: selected token subsets
//! ```
//!
//! All reductions run in `f64` in row order, so results do not depend on how
//! cells of a [`SimilarityMatrix`] are scheduled.

use alloc::vec::Vec;

use crate::embedding::ReducedMatrix;
use crate::matrix::{dot, Matrix};
use crate::saliency::SelectionMask;
use crate::{Error, Result};

/// Read access to a set of equal-width rows.
pub trait RowSet {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RowSet for Matrix<f64> {
    fn len(&self) -> usize {
        self.rows()
    }
    fn dim(&self) -> usize {
        self.cols()
    }
    fn row(&self, i: usize) -> &[f64] {
        Matrix::row(self, i)
    }
}

impl RowSet for ReducedMatrix {
    fn len(&self) -> usize {
        ReducedMatrix::len(self)
    }
    fn dim(&self) -> usize {
        ReducedMatrix::dim(self)
    }
    fn row(&self, i: usize) -> &[f64] {
        ReducedMatrix::row(self, i)
    }
}

/// The rows of `inner` listed in a mask, in mask order.
#[derive(Debug, Clone, Copy)]
pub struct Masked<'a, R: ?Sized> {
    inner: &'a R,
    kept: &'a [usize],
}

impl<'a, R: RowSet + ?Sized> Masked<'a, R> {
    pub fn new(inner: &'a R, mask: &'a SelectionMask) -> Result<Self> {
        mask.check(inner.len())?;
        Ok(Self {
            inner,
            kept: mask.kept(),
        })
    }

    /// Index into the underlying row set of the `i`-th kept row.
    pub fn source_index(&self, i: usize) -> usize {
        self.kept[i]
    }
}

impl<R: RowSet + ?Sized> RowSet for Masked<'_, R> {
    fn len(&self) -> usize {
        self.kept.len()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn row(&self, i: usize) -> &[f64] {
        self.inner.row(self.kept[i])
    }
}

/// Winner of one max reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMatch {
    /// Lowest `y` index attaining the maximum.
    pub best: usize,
    pub score: f64,
    /// Gap to the runner-up (infinite when `y` has one row).
    pub margin: f64,
}

fn check_pair<X: RowSet + ?Sized, Y: RowSet + ?Sized>(x: &X, y: &Y) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyEntry);
    }
    if x.dim() != y.dim() {
        return Err(Error::Shape {
            what: "token dimension",
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(())
}

/// Best `y` row for every `x` row, ties toward the lowest index.
pub fn max_matches<X: RowSet + ?Sized, Y: RowSet + ?Sized>(x: &X, y: &Y) -> Result<Vec<MaxMatch>> {
    check_pair(x, y)?;
    Ok((0..x.len())
        .map(|i| {
            let xi = x.row(i);
            let mut best = 0;
            let mut score = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for j in 0..y.len() {
                let s = dot(xi, y.row(j));
                if s > score {
                    second = score;
                    score = s;
                    best = j;
                } else if s > second {
                    second = s;
                }
            }
            MaxMatch {
                best,
                score,
                margin: score - second,
            }
        })
        .collect())
}

fn colbert_rows<X: RowSet + ?Sized, Y: RowSet + ?Sized>(x: &X, y: &Y) -> Result<f64> {
    check_pair(x, y)?;
    let mut total = 0.0;
    for i in 0..x.len() {
        let xi = x.row(i);
        let mut best = f64::NEG_INFINITY;
        for j in 0..y.len() {
            let s = dot(xi, y.row(j));
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    Ok(total)
}

fn normalized_rows<X: RowSet + ?Sized, Y: RowSet + ?Sized>(x: &X, y: &Y) -> Result<f64> {
    Ok(colbert_rows(x, y)? / x.len() as f64)
}

fn symmetric_rows<X: RowSet + ?Sized, Y: RowSet + ?Sized>(x: &X, y: &Y) -> Result<f64> {
    Ok(normalized_rows(x, y)? + normalized_rows(y, x)?)
}

/// `S_C`: sum over `x` tokens of the best dot product against `y`.
pub fn colbert(x: &ReducedMatrix, y: &ReducedMatrix) -> Result<f64> {
    colbert_rows(x, y)
}

/// `S_N`: [`colbert`] divided by the token count of `x`.
pub fn normalized(x: &ReducedMatrix, y: &ReducedMatrix) -> Result<f64> {
    normalized_rows(x, y)
}

/// `S_SN`: `S_N(x, y) + S_N(y, x)`.
pub fn symmetric(x: &ReducedMatrix, y: &ReducedMatrix) -> Result<f64> {
    symmetric_rows(x, y)
}

/// `S_SSN`: [`symmetric`] over the masked rows.
pub fn ssn(x: &ReducedMatrix, y: &ReducedMatrix, mask_x: &SelectionMask, mask_y: &SelectionMask) -> Result<f64> {
    symmetric_rows(&Masked::new(x, mask_x)?, &Masked::new(y, mask_y)?)
}

/// Scalar similarity used to fill a [`SimilarityMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Colbert,
    Normalized,
    Symmetric,
    /// Needs masks on both sides.
    SparseSymmetric,
}

/// One side of a similarity cell: a matrix and, for sparse metrics, its mask.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub matrix: &'a ReducedMatrix,
    pub mask: Option<&'a SelectionMask>,
}

impl<'a> Scored<'a> {
    pub fn dense(matrix: &'a ReducedMatrix) -> Self {
        Self { matrix, mask: None }
    }

    pub fn sparse(matrix: &'a ReducedMatrix, mask: &'a SelectionMask) -> Self {
        Self {
            matrix,
            mask: Some(mask),
        }
    }
}

/// Evaluates `metric` on one (query, document) pair.
pub fn score_pair(q: Scored<'_>, d: Scored<'_>, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Colbert => colbert(q.matrix, d.matrix),
        Metric::Normalized => normalized(q.matrix, d.matrix),
        Metric::Symmetric => symmetric(q.matrix, d.matrix),
        Metric::SparseSymmetric => match (q.mask, d.mask) {
            (Some(mq), Some(md)) => ssn(q.matrix, d.matrix, mq, md),
            _ => Err(Error::Config("sparse similarity needs a mask for every entry".into())),
        },
    }
}

/// Query-by-document similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub Matrix<f64>);

impl SimilarityMatrix {
    pub fn n_queries(&self) -> usize {
        self.0.rows()
    }

    pub fn n_docs(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.0.rows(), self.0.cols());
        let mut t = Matrix::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                t.set(j, i, self.0.get(i, j));
            }
        }
        Self(t)
    }
}

pub(crate) fn check_dims(entries: &[Scored<'_>], d0: &mut Option<usize>) -> Result<()> {
    for e in entries {
        match *d0 {
            None => *d0 = Some(e.matrix.dim()),
            Some(d) if d != e.matrix.dim() => {
                return Err(Error::Shape {
                    what: "reduced dimension",
                    expected: d,
                    found: e.matrix.dim(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Cell `(i, j)` is `metric(queries[i], docs[j])`.
pub fn sim_matrix(queries: &[Scored<'_>], docs: &[Scored<'_>], metric: Metric) -> Result<SimilarityMatrix> {
    let mut d0 = None;
    check_dims(queries, &mut d0)?;
    check_dims(docs, &mut d0)?;
    let mut out = Matrix::zeros(queries.len(), docs.len());
    for (i, q) in queries.iter().enumerate() {
        for (j, d) in docs.iter().enumerate() {
            out.set(i, j, score_pair(*q, *d, metric)?);
        }
    }
    Ok(SimilarityMatrix(out))
}

/// Per-query relevance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector(pub Vec<f64>);

impl RelevanceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Row means: each query's average similarity over all documents.
pub fn mean_over_docs(m: &SimilarityMatrix) -> RelevanceVector {
    let n = m.n_docs() as f64;
    RelevanceVector(m.0.iter_rows().map(|r| r.iter().sum::<f64>() / n).collect())
}

/// The single column of an `n x 1` matrix (e.g. `S^PU`) as a relevance vector.
pub fn column(m: &SimilarityMatrix, j: usize) -> RelevanceVector {
    RelevanceVector((0..m.n_queries()).map(|i| m.get(i, j)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rm(rows: &[&[f64]]) -> ReducedMatrix {
        let cols = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ReducedMatrix::from_rows("t", Matrix::from_vec(rows.len(), cols, data).unwrap()).unwrap()
    }

    #[test]
    fn colbert_examples() {
        assert_eq!(
            colbert(&rm(&[&[1.0, 0.0]]), &rm(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap(),
            1.0
        );
        assert_eq!(
            colbert(&rm(&[&[1.0, 0.0], &[0.0, 1.0]]), &rm(&[&[1.0, 0.0]])).unwrap(),
            1.0
        );
        assert_eq!(colbert(&rm(&[&[0.0, 1.0]]), &rm(&[&[1.0, 0.0]])).unwrap(), 0.0);
    }

    #[test]
    fn normalized_examples() {
        let two = rm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let one = rm(&[&[1.0, 0.0]]);
        assert_eq!(normalized(&two, &one).unwrap(), 0.5);
        assert_eq!(normalized(&one, &two).unwrap(), colbert(&one, &two).unwrap());
        let dup = rm(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(normalized(&dup, &one).unwrap(), 1.0);
        assert_eq!(normalized(&dup, &one).unwrap(), normalized(&one, &one).unwrap());
    }

    #[test]
    fn symmetric_examples() {
        let x = rm(&[&[1.0, 0.0]]);
        let y = rm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(symmetric(&x, &y).unwrap(), 1.5);
        assert_eq!(symmetric(&y, &x).unwrap(), 1.5);
        assert_eq!(symmetric(&x, &x).unwrap(), 2.0);
    }

    #[test]
    fn ssn_masks() {
        let x = rm(&[&[1.0, 0.0], &[0.6, 0.8]]);
        let y = rm(&[&[0.0, 1.0], &[0.8, 0.6]]);
        let full = SelectionMask::full(2);
        assert_eq!(ssn(&x, &y, &full, &full).unwrap(), symmetric(&x, &y).unwrap());

        let m0 = SelectionMask::from_positions(vec![0]).unwrap();
        let m1 = SelectionMask::from_positions(vec![1]).unwrap();
        let expected = symmetric(&rm(&[&[1.0, 0.0]]), &rm(&[&[0.8, 0.6]])).unwrap();
        assert_eq!(ssn(&x, &y, &m0, &m1).unwrap(), expected);

        let bad = SelectionMask::from_positions(vec![2]).unwrap();
        assert!(matches!(ssn(&x, &y, &bad, &m1), Err(Error::MaskOutOfRange { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let a = rm(&[&[1.0, 0.0]]);
        let b = rm(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(colbert(&a, &b), Err(Error::Shape { .. })));
        let r = sim_matrix(&[Scored::dense(&a)], &[Scored::dense(&b)], Metric::Symmetric);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn sim_matrix_cells_and_transpose() {
        let p = [rm(&[&[1.0, 0.0]]), rm(&[&[0.0, 1.0], &[0.6, 0.8]])];
        let k = [rm(&[&[1.0, 0.0]]), rm(&[&[0.8, 0.6]]), rm(&[&[0.0, 1.0], &[1.0, 0.0]])];
        let ps: Vec<_> = p.iter().map(Scored::dense).collect();
        let ks: Vec<_> = k.iter().map(Scored::dense).collect();
        let pk = sim_matrix(&ps, &ks, Metric::Symmetric).unwrap();
        assert_eq!((pk.n_queries(), pk.n_docs()), (2, 3));
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(pk.get(i, j), symmetric(&p[i], &k[j]).unwrap());
            }
        }
        let kp = sim_matrix(&ks, &ps, Metric::Symmetric).unwrap();
        assert_eq!(kp, pk.transpose());

        let one = sim_matrix(&ps[..1], &ks[..1], Metric::Normalized).unwrap();
        assert_eq!(one.get(0, 0), normalized(&p[0], &k[0]).unwrap());
    }

    #[test]
    fn sparse_metric_needs_masks() {
        let a = rm(&[&[1.0, 0.0]]);
        let r = score_pair(Scored::dense(&a), Scored::dense(&a), Metric::SparseSymmetric);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn mean_over_docs_examples() {
        let m = SimilarityMatrix(Matrix::from_vec(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap());
        assert_eq!(mean_over_docs(&m).0, vec![2.0, 3.0]);
        let col = SimilarityMatrix(Matrix::from_vec(3, 1, vec![1.0, 2.0, 5.0]).unwrap());
        assert_eq!(mean_over_docs(&col).0, vec![1.0, 2.0, 5.0]);
        let c = SimilarityMatrix(Matrix::from_vec(2, 3, vec![0.7; 6]).unwrap());
        assert!(mean_over_docs(&c).0.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn max_matches_ties_go_to_lowest_index() {
        let x = rm(&[&[1.0, 0.0]]);
        let y = rm(&[&[0.5, 0.0], &[0.5, 0.0], &[0.1, 0.0]]);
        let m = max_matches(&x, &y).unwrap();
        assert_eq!(m[0].best, 0);
        assert_eq!(m[0].margin, 0.0);
    }
}
