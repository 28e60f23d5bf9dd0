use comac_core::embedding::ReducedMatrix;
use comac_core::latesim::{colbert, mean_over_docs, normalized, sim_matrix, ssn, symmetric, Metric, Scored};
use comac_core::matrix::Matrix;
use comac_core::saliency::{select_tokens, SelectionMask};
use proptest::prelude::*;

fn unit_rows(s: usize, d0: usize) -> impl Strategy<Value = ReducedMatrix> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d0), s).prop_map(move |rows| {
        let mut data = Vec::with_capacity(s * d0);
        for mut r in rows {
            r[0] += 1e-3;
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(r.iter().map(|v| v / n));
        }
        ReducedMatrix::from_rows("x", Matrix::from_vec(s, d0, data).unwrap()).unwrap()
    })
}

fn pair() -> impl Strategy<Value = (ReducedMatrix, ReducedMatrix)> {
    (1usize..=8, 1usize..=8, 1usize..=16).prop_flat_map(|(sx, sy, d0)| (unit_rows(sx, d0), unit_rows(sy, d0)))
}

fn brute_colbert(x: &ReducedMatrix, y: &ReducedMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        let mut best = f64::NEG_INFINITY;
        for j in 0..y.len() {
            let mut s = 0.0;
            for k in 0..x.dim() {
                s += x.row(i)[k] * y.row(j)[k];
            }
            best = best.max(s);
        }
        total += best;
    }
    total
}

fn repeat_rows(x: &ReducedMatrix, times: usize) -> ReducedMatrix {
    let mut data = Vec::new();
    for i in 0..x.len() {
        for _ in 0..times {
            data.extend_from_slice(x.row(i));
        }
    }
    ReducedMatrix::from_rows("rep", Matrix::from_vec(x.len() * times, x.dim(), data).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn colbert_matches_triple_loop((x, y) in pair()) {
        prop_assert!((colbert(&x, &y).unwrap() - brute_colbert(&x, &y)).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn duplication_invariance((x, y) in pair(), times in 2usize..5) {
        let rep = repeat_rows(&x, times);
        prop_assert!((normalized(&rep, &y).unwrap() - normalized(&x, &y).unwrap()).abs() <= 1e-6);
        prop_assert!((colbert(&rep, &y).unwrap() - times as f64 * colbert(&x, &y).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn symmetric_is_symmetric((x, y) in pair()) {
        prop_assert!((symmetric(&x, &y).unwrap() - symmetric(&y, &x).unwrap()).abs() <= 1e-6);
    }

    #[test]
    fn full_masks_reduce_to_symmetric((x, y) in pair()) {
        let mx = select_tokens(&vec![1.0; x.len()], 1.0).unwrap();
        let my = select_tokens(&vec![1.0; y.len()], 1.0).unwrap();
        prop_assert_eq!(ssn(&x, &y, &mx, &my).unwrap(), symmetric(&x, &y).unwrap());
    }

    #[test]
    fn unit_rows_bound_scores((x, y) in pair()) {
        let c = colbert(&x, &y).unwrap();
        prop_assert!(c.abs() <= x.len() as f64 + 1e-9);
        prop_assert!(normalized(&x, &y).unwrap().abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn masked_equals_submatrix((x, y) in pair(), keep_x in any::<prop::sample::Index>(), keep_y in any::<prop::sample::Index>()) {
        let (ix, iy) = (keep_x.index(x.len()), keep_y.index(y.len()));
        let mx = SelectionMask::from_positions(vec![ix]).unwrap();
        let my = SelectionMask::from_positions(vec![iy]).unwrap();
        let sub = |m: &ReducedMatrix, i: usize| {
            ReducedMatrix::from_rows("s", Matrix::from_vec(1, m.dim(), m.row(i).to_vec()).unwrap()).unwrap()
        };
        let expected = symmetric(&sub(&x, ix), &sub(&y, iy)).unwrap();
        prop_assert_eq!(ssn(&x, &y, &mx, &my).unwrap(), expected);
    }
}

fn entry_set(n: usize, d0: usize) -> impl Strategy<Value = Vec<ReducedMatrix>> {
    prop::collection::vec((1usize..=6).prop_flat_map(move |s| unit_rows(s, d0)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sim_matrix_transpose(
        (ps, ks) in (1usize..=5, 1usize..=6, 1usize..=8).prop_flat_map(|(np, nk, d0)| (entry_set(np, d0), entry_set(nk, d0))),
        p_sr in 0.1f64..=1.0,
    ) {
        let mask = |m: &ReducedMatrix| {
            let w: Vec<f64> = (0..m.len()).map(|i| m.row(i)[0]).collect();
            select_tokens(&w, p_sr).unwrap()
        };
        let pm: Vec<SelectionMask> = ps.iter().map(mask).collect();
        let km: Vec<SelectionMask> = ks.iter().map(mask).collect();
        let p: Vec<Scored> = ps.iter().zip(&pm).map(|(m, k)| Scored::sparse(m, k)).collect();
        let k: Vec<Scored> = ks.iter().zip(&km).map(|(m, k)| Scored::sparse(m, k)).collect();
        let pk = sim_matrix(&p, &k, Metric::SparseSymmetric).unwrap();
        let kp = sim_matrix(&k, &p, Metric::SparseSymmetric).unwrap();
        prop_assert_eq!(pk.n_queries(), ps.len());
        prop_assert_eq!(pk.n_docs(), ks.len());
        let t = kp.transpose();
        for i in 0..ps.len() {
            for j in 0..ks.len() {
                prop_assert!((pk.get(i, j) - t.get(i, j)).abs() <= 1e-12);
                prop_assert_eq!(pk.get(i, j), ssn(&ps[i], &ks[j], &pm[i], &km[j]).unwrap());
            }
        }
        let rel = mean_over_docs(&pk);
        for i in 0..ps.len() {
            let mean = (0..ks.len()).map(|j| pk.get(i, j)).sum::<f64>() / ks.len() as f64;
            prop_assert!((rel.0[i] - mean).abs() <= 1e-12);
        }
    }
}

#[test]
fn mixed_widths_rejected() {
    let a = ReducedMatrix::from_rows("a", Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
    let b = ReducedMatrix::from_rows("b", Matrix::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
    assert!(sim_matrix(&[Scored::dense(&a)], &[Scored::dense(&b)], Metric::Symmetric).is_err());
}
