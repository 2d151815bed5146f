//! Dense column-major matrices and the Kronecker-style index plumbing used
//! by the covariance machinery.
//!
//! The conditional covariance of the truncation tail lives on vectorized
//! m x m matrices. This module provides the vectorization pair `vec`/`mat`,
//! the Kronecker product, the commutation permutation that maps vec(B) to
//! vec(B^T), and the selection/embedding maps between full m^2-vectors and
//! the M = m(m-1)/2 strictly lower triangular components that carry the
//! Levy areas. Pairs (i, j) with 1 <= i < j <= m are ordered
//! (1,2), (1,3), ..., (1,m), (2,3), ..., (m-1,m), and `pair_to_index` /
//! `index_to_pair` convert between a pair and its one-based rank r in that
//! order via r = (i-1)m + j - sum_{k<=i} k.

use crate::{Error, Result};

/// Dense matrix stored in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FlatMatrix {
    /// Creates a matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FlatMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Creates the identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut out = FlatMatrix::zeros(n, n);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    /// Wraps column-major data as a matrix.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "FlatMatrix::from_column_major data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(FlatMatrix { rows, cols, data })
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major backing slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Entry at zero-based row `i`, column `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i]
    }

    /// Sets the entry at zero-based row `i`, column `j`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i] = value;
    }

    /// Returns the transpose.
    pub fn transpose(&self) -> FlatMatrix {
        let mut out = FlatMatrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.data[i * self.cols + j] = self.data[j * self.rows + i];
            }
        }
        out
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &FlatMatrix) -> Result<FlatMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                context: "FlatMatrix::matmul inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = FlatMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other.data[j * other.rows + k];
                if b == 0.0 {
                    continue;
                }
                let col = &self.data[k * self.rows..(k + 1) * self.rows];
                let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
                for (o, &a) in dst.iter_mut().zip(col.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Stacks the columns of `b` into a vector of length rows*cols.
pub fn vec_of(b: &FlatMatrix) -> Vec<f64> {
    b.as_slice().to_vec()
}

/// Reshapes a vector into a rows x cols matrix, inverting [`vec_of`].
pub fn mat_of(v: &[f64], rows: usize, cols: usize) -> Result<FlatMatrix> {
    FlatMatrix::from_column_major(rows, cols, v.to_vec())
}

/// Kronecker product `b (x) c`.
pub fn kron(b: &FlatMatrix, c: &FlatMatrix) -> FlatMatrix {
    let (p, q) = (b.rows(), b.cols());
    let (r, s) = (c.rows(), c.cols());
    let mut out = FlatMatrix::zeros(p * r, q * s);
    for jb in 0..q {
        for ib in 0..p {
            let factor = b.get(ib, jb);
            if factor == 0.0 {
                continue;
            }
            for jc in 0..s {
                for ic in 0..r {
                    out.set(ib * r + ic, jb * s + jc, factor * c.get(ic, jc));
                }
            }
        }
    }
    out
}

/// Applies the m^2 x m^2 commutation permutation to `v`, sending vec(B) to
/// vec(B^T) without forming the permutation matrix.
pub fn apply_commutation(v: &[f64], m: usize) -> Result<Vec<f64>> {
    if v.len() != m * m {
        return Err(Error::Dimension {
            context: "apply_commutation input length",
            expected: m * m,
            got: v.len(),
        });
    }
    let mut out = vec![0.0; m * m];
    for b in 0..m {
        for a in 0..m {
            out[b * m + a] = v[a * m + b];
        }
    }
    Ok(out)
}

/// Number of strictly lower triangular pairs, M = m(m-1)/2.
pub fn pair_count(m: usize) -> usize {
    m * (m - 1) / 2
}

/// One-based rank of the pair (i, j), 1 <= i < j <= m, in canonical order.
pub fn pair_to_index(i: usize, j: usize, m: usize) -> Result<usize> {
    if i == 0 || j <= i || j > m {
        return Err(Error::Index(format!(
            "pair ({i}, {j}) is not a strictly ordered pair in 1..={m}"
        )));
    }
    Ok((i - 1) * m + j - i * (i + 1) / 2)
}

/// Pair (i, j) with one-based rank `r` in canonical order, inverting
/// [`pair_to_index`].
pub fn index_to_pair(r: usize, m: usize) -> Result<(usize, usize)> {
    let total = pair_count(m);
    if r == 0 || r > total {
        return Err(Error::Index(format!(
            "pair rank {r} is not in 1..={total} for m = {m}"
        )));
    }
    let mut offset = 0;
    for i in 1..m {
        let row_len = m - i;
        if r <= offset + row_len {
            return Ok((i, i + r - offset));
        }
        offset += row_len;
    }
    unreachable!("rank was validated against the pair count");
}

/// Zero-based pairs (i, j), i < j, listed in canonical order.
pub fn pair_order(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(pair_count(m));
    for i in 0..m {
        for j in i + 1..m {
            out.push((i, j));
        }
    }
    out
}

/// Selects the strictly lower triangular components of an m^2-vector in
/// canonical pair order: entry r corresponds to matrix position (j, i) for
/// the r-th pair (i, j).
pub fn select_lower(v: &[f64], m: usize) -> Result<Vec<f64>> {
    if v.len() != m * m {
        return Err(Error::Dimension {
            context: "select_lower input length",
            expected: m * m,
            got: v.len(),
        });
    }
    let mut out = Vec::with_capacity(pair_count(m));
    for j in 0..m {
        for i in j + 1..m {
            out.push(v[j * m + i]);
        }
    }
    Ok(out)
}

/// Embeds an M-vector as the vectorization of an antisymmetric matrix whose
/// strictly lower triangle holds the components in canonical pair order, so
/// that `select_lower(&embed_antisym(a, m)?, m)` returns `a` again.
pub fn embed_antisym(a: &[f64], m: usize) -> Result<Vec<f64>> {
    let expected = pair_count(m);
    if a.len() != expected {
        return Err(Error::Dimension {
            context: "embed_antisym input length",
            expected,
            got: a.len(),
        });
    }
    let mut out = vec![0.0; m * m];
    for (r, &(i, j)) in pair_order(m).iter().enumerate() {
        out[i * m + j] = a[r];
        out[j * m + i] = -a[r];
    }
    Ok(out)
}

/// Symmetric positive semidefinite square root.
///
/// `s` must be square and symmetric within 1e-10 relative to its largest
/// entry magnitude. Eigenvalues below `-1e-10 * ||s||_2` are rejected as
/// indefinite; negative eigenvalues inside that tolerance are clamped to
/// zero before the square root is formed.
pub fn sym_psd_sqrt(s: &FlatMatrix) -> Result<FlatMatrix> {
    let q = s.rows();
    if s.cols() != q {
        return Err(Error::Dimension {
            context: "sym_psd_sqrt column count",
            expected: q,
            got: s.cols(),
        });
    }
    let scale = s.max_abs().max(1.0);
    for j in 0..q {
        for i in 0..j {
            if (s.get(i, j) - s.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::Matrix(format!(
                    "sym_psd_sqrt requires a symmetric matrix, entries ({i}, {j}) and \
                     ({j}, {i}) differ by {:e}",
                    (s.get(i, j) - s.get(j, i)).abs()
                )));
            }
        }
    }
    let dm = nalgebra::DMatrix::from_column_slice(q, q, s.as_slice());
    let eig = dm.symmetric_eigen();
    let spectral = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = -1e-10 * spectral;
    let mut sqrt_eigs = Vec::with_capacity(q);
    for &lambda in eig.eigenvalues.iter() {
        if lambda < floor {
            return Err(Error::Matrix(format!(
                "sym_psd_sqrt requires a positive semidefinite matrix, found eigenvalue {lambda:e}"
            )));
        }
        sqrt_eigs.push(lambda.max(0.0).sqrt());
    }
    let mut out = FlatMatrix::zeros(q, q);
    for j in 0..q {
        for i in 0..=j {
            let mut acc = 0.0;
            for (k, &se) in sqrt_eigs.iter().enumerate() {
                acc += eig.eigenvectors[(i, k)] * se * eig.eigenvectors[(j, k)];
            }
            out.set(i, j, acc);
            out.set(j, i, acc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn vec_and_mat_invert_each_other() {
        let b = FlatMatrix::from_column_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = vec_of(&b);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let back = mat_of(&v, 2, 3).unwrap();
        assert_eq!(back, b);
        assert!(mat_of(&v, 3, 3).is_err());
    }

    #[test]
    fn kron_matches_entrywise_definition() {
        let b = FlatMatrix::from_column_major(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let c = FlatMatrix::from_column_major(2, 2, vec![0.0, 6.0, 5.0, 7.0]).unwrap();
        let k = kron(&b, &c);
        assert_eq!(k.rows(), 4);
        assert_eq!(k.cols(), 4);
        for ib in 0..2 {
            for jb in 0..2 {
                for ic in 0..2 {
                    for jc in 0..2 {
                        let expected = b.get(ib, jb) * c.get(ic, jc);
                        assert_eq!(k.get(ib * 2 + ic, jb * 2 + jc), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let k = kron(&FlatMatrix::identity(3), &FlatMatrix::identity(2));
        assert_eq!(k, FlatMatrix::identity(6));
    }

    #[test]
    fn commutation_matches_transpose_vectorization() {
        let b =
            FlatMatrix::from_column_major(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0])
                .unwrap();
        let permuted = apply_commutation(&vec_of(&b), 3).unwrap();
        assert_eq!(permuted, vec_of(&b.transpose()));
    }

    #[test]
    fn pair_index_known_values() {
        assert_eq!(pair_to_index(1, 2, 3).unwrap(), 1);
        assert_eq!(pair_to_index(1, 3, 3).unwrap(), 2);
        assert_eq!(pair_to_index(2, 3, 3).unwrap(), 3);
        assert_eq!(pair_to_index(2, 4, 4).unwrap(), 5);
        assert_eq!(index_to_pair(5, 4).unwrap(), (2, 4));
        assert!(pair_to_index(2, 2, 3).is_err());
        assert!(pair_to_index(3, 1, 3).is_err());
        assert!(index_to_pair(4, 3).is_err());
        assert!(index_to_pair(0, 3).is_err());
    }

    #[test]
    fn select_lower_known_values() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(select_lower(&v, 3).unwrap(), vec![2.0, 3.0, 6.0]);
    }

    #[test]
    fn embed_antisym_known_values() {
        let w = embed_antisym(&[2.5], 2).unwrap();
        assert_eq!(w, vec![0.0, 2.5, -2.5, 0.0]);
    }

    #[test]
    fn sym_psd_sqrt_on_diagonal_matrix() {
        let s = FlatMatrix::from_column_major(2, 2, vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let r = sym_psd_sqrt(&s).unwrap();
        assert!(approx_eq(r.get(0, 0), 2.0, 1e-14));
        assert!(approx_eq(r.get(1, 1), 3.0, 1e-14));
        assert!(approx_eq(r.get(0, 1), 0.0, 1e-14));
    }

    #[test]
    fn sym_psd_sqrt_rejects_asymmetric_and_indefinite() {
        let asym = FlatMatrix::from_column_major(2, 2, vec![1.0, 0.5, 0.2, 1.0]).unwrap();
        assert!(matches!(sym_psd_sqrt(&asym), Err(Error::Matrix(_))));
        let indef = FlatMatrix::from_column_major(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(sym_psd_sqrt(&indef), Err(Error::Matrix(_))));
    }

    #[test]
    fn sym_psd_sqrt_clamps_tiny_negative_eigenvalues() {
        let eps = 1e-14;
        let s = FlatMatrix::from_column_major(2, 2, vec![-eps, 0.0, 0.0, 1.0]).unwrap();
        let r = sym_psd_sqrt(&s).unwrap();
        assert_eq!(r.get(0, 0), 0.0);
        assert!(approx_eq(r.get(1, 1), 1.0, 1e-14));
    }

    proptest! {
        #[test]
        fn commutation_is_an_involution(v in proptest::collection::vec(-100.0f64..100.0, 16)) {
            let once = apply_commutation(&v, 4).unwrap();
            let twice = apply_commutation(&once, 4).unwrap();
            prop_assert_eq!(twice, v);
        }

        #[test]
        fn commutation_swaps_kronecker_factors(
            u in proptest::collection::vec(-10.0f64..10.0, 3),
            w in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let um = mat_of(&u, 3, 1).unwrap();
            let wm = mat_of(&w, 3, 1).unwrap();
            let uv = vec_of(&kron(&um, &wm));
            let vu = vec_of(&kron(&wm, &um));
            let permuted = apply_commutation(&uv, 3).unwrap();
            for (a, b) in permuted.iter().zip(vu.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn select_inverts_embed(a in proptest::collection::vec(-10.0f64..10.0, 6), ) {
            let w = embed_antisym(&a, 4).unwrap();
            let back = select_lower(&w, 4).unwrap();
            prop_assert_eq!(back, a);
        }

        #[test]
        fn embedded_vector_is_antisymmetric(a in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let w = embed_antisym(&a, 3).unwrap();
            let b = mat_of(&w, 3, 3).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(b.get(i, j), -b.get(j, i));
                }
            }
        }

        #[test]
        fn pair_index_round_trips(m in 2usize..9, r_seed in 0usize..1000) {
            let total = pair_count(m);
            let r = 1 + r_seed % total;
            let (i, j) = index_to_pair(r, m).unwrap();
            prop_assert!(1 <= i && i < j && j <= m);
            prop_assert_eq!(pair_to_index(i, j, m).unwrap(), r);
        }

        #[test]
        fn sym_psd_sqrt_squares_back(diag in proptest::collection::vec(0.0f64..10.0, 3)) {
            let mut s = FlatMatrix::zeros(3, 3);
            for (i, &d) in diag.iter().enumerate() {
                s.set(i, i, d);
            }
            let r = sym_psd_sqrt(&s).unwrap();
            let rr = r.matmul(&r).unwrap();
            let mut diff = 0.0f64;
            for i in 0..3 {
                for j in 0..3 {
                    diff = diff.max((rr.get(i, j) - s.get(i, j)).abs());
                }
            }
            prop_assert!(diff <= 1e-8 * s.frobenius_norm().max(1.0));
        }
    }
}
