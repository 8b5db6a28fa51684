//! Compressed sparse row matrices.
//!
//! Used for the normalized adjacency operator and for sparse feature
//! matrices on the left side of products against dense weights.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::num::DenseMat;

/// CSR matrix: `indptr[i]..indptr[i+1]` indexes the entries of row `i`,
/// with column indices strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMat {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Matrix with no stored entries.
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMat {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sparse identity of order `n`.
    pub fn identity(n: usize) -> Self {
        SparseMat {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed; explicit zeros are kept as stored entries.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Validation(format!(
                    "triplet ({r},{c}) outside {rows}x{cols}"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut indptr = vec![0usize; rows + 1];
        for &(r, _, _) in &merged {
            indptr[r + 1] += 1;
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let m = SparseMat {
            rows,
            cols,
            indptr,
            indices: merged.iter().map(|t| t.1).collect(),
            values: merged.iter().map(|t| t.2).collect(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Converts a dense matrix, keeping nonzero entries.
    pub fn from_dense(d: &DenseMat) -> Self {
        let mut indptr = Vec::with_capacity(d.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..d.rows() {
            for (j, &v) in d.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseMat {
            rows: d.rows(),
            cols: d.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Checks the CSR structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.indptr.len() != self.rows + 1 {
            return Err(Error::Validation(format!(
                "indptr has {} entries, expected {}",
                self.indptr.len(),
                self.rows + 1
            )));
        }
        if self.indptr[0] != 0 || *self.indptr.last().unwrap() != self.indices.len() {
            return Err(Error::Validation(
                "indptr endpoints disagree with the entry count".into(),
            ));
        }
        if self.indices.len() != self.values.len() {
            return Err(Error::Validation(
                "indices and values lengths differ".into(),
            ));
        }
        for i in 0..self.rows {
            if self.indptr[i] > self.indptr[i + 1] {
                return Err(Error::Validation(format!("indptr decreases at row {i}")));
            }
            let (cols, _) = self.row(i);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Validation(format!(
                        "row {i} columns not strictly increasing"
                    )));
                }
            }
            if let Some(&c) = cols.last() {
                if c >= self.cols {
                    return Err(Error::Validation(format!(
                        "row {i} has column {c} outside width {}",
                        self.cols
                    )));
                }
            }
        }
        Ok(())
    }

    /// `self @ dense`. Errors when `self.cols != dense.rows`.
    pub fn spmm(&self, dense: &DenseMat) -> Result<DenseMat> {
        if self.cols != dense.rows() {
            return Err(Error::shape(format!(
                "spmm {}x{} by {}x{}",
                self.rows,
                self.cols,
                dense.rows(),
                dense.cols()
            )));
        }
        let ncols = dense.cols();
        let mut out = DenseMat::zeros(self.rows, ncols);
        let body = |(i, out_row): (usize, &mut [f64])| {
            let (cols, vals) = self.row(i);
            for (&k, &v) in cols.iter().zip(vals) {
                let d_row = dense.row(k);
                for (o, &dkj) in out_row.iter_mut().zip(d_row) {
                    *o += v * dkj;
                }
            }
        };
        if self.rows * ncols >= super::PAR_THRESHOLD && ncols > 0 {
            super::ensure_thread_pool();
            out.data_mut()
                .par_chunks_mut(ncols)
                .enumerate()
                .for_each(body);
        } else if ncols > 0 {
            out.data_mut().chunks_mut(ncols).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// `transpose(self) @ dense` without materializing the transpose,
    /// via a sequential scatter over the stored entries.
    pub fn spmm_transpose(&self, dense: &DenseMat) -> Result<DenseMat> {
        if self.rows != dense.rows() {
            return Err(Error::shape(format!(
                "spmm_transpose {}x{} by {}x{}",
                self.cols,
                self.rows,
                dense.rows(),
                dense.cols()
            )));
        }
        let ncols = dense.cols();
        let mut out = DenseMat::zeros(self.cols, ncols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let d_row = dense.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let out_row = out.row_mut(j);
                for (o, &dik) in out_row.iter_mut().zip(d_row) {
                    *o += v * dik;
                }
            }
        }
        Ok(out)
    }

    /// Dense copy, mainly for oracles in tests.
    pub fn to_dense(&self) -> DenseMat {
        let mut d = DenseMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.set(i, j, v);
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DenseMat {
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        DenseMat::from_flat(rows, cols, data).unwrap()
    }

    fn random_sparse(rows: usize, cols: usize, density: f64, rng: &mut ChaCha20Rng) -> SparseMat {
        let mut triplets = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen_bool(density) {
                    triplets.push((r, c, rng.gen_range(-2.0..2.0)));
                }
            }
        }
        SparseMat::from_triplets(rows, cols, &triplets).unwrap()
    }

    #[test]
    fn empty_matrix_yields_zero_product() {
        let s = SparseMat::empty(3, 4);
        let d = DenseMat::filled(4, 2, 1.5);
        let got = s.spmm(&d).unwrap();
        assert_eq!(got, DenseMat::zeros(3, 2));
    }

    #[test]
    fn identity_product_returns_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let d = random_dense(5, 3, &mut rng);
        let got = SparseMat::identity(5).spmm(&d).unwrap();
        assert_eq!(got, d);
    }

    #[test]
    fn spmm_matches_densify_then_multiply() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10 {
            let s = random_sparse(5, 5, 0.3, &mut rng);
            let d = random_dense(5, 4, &mut rng);
            let got = s.spmm(&d).unwrap();
            let want = s.to_dense().matmul(&d).unwrap();
            assert!(got.max_abs_diff(&want) <= 1e-12);
        }
    }

    #[test]
    fn spmm_transpose_matches_dense_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..10 {
            let s = random_sparse(6, 4, 0.4, &mut rng);
            let d = random_dense(6, 3, &mut rng);
            let got = s.spmm_transpose(&d).unwrap();
            let want = s.to_dense().transpose().matmul(&d).unwrap();
            assert!(got.max_abs_diff(&want) <= 1e-12);
        }
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let s = SparseMat::from_triplets(2, 2, &[(0, 1, 2.0), (0, 1, 3.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.to_dense().get(0, 1), 5.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let s = SparseMat::identity(3);
        let d = DenseMat::zeros(4, 2);
        assert!(s.spmm(&d).is_err());
        assert!(s.spmm_transpose(&d).is_err());
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(SparseMat::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn from_dense_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut d = random_dense(4, 6, &mut rng);
        // Sprinkle in zeros so the conversion actually drops entries.
        for j in 0..6 {
            d.set(2, j, 0.0);
        }
        let s = SparseMat::from_dense(&d);
        s.validate().unwrap();
        assert_eq!(s.to_dense(), d);
    }
}
