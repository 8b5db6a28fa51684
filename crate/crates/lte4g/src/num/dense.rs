//! Row-major dense `f64` matrices.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense matrix stored row-major in a flat `Vec<f64>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDense")]
pub struct DenseMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Wire shape for deserialization; checked by [`DenseMat::from_flat`].
#[derive(Deserialize)]
struct RawDense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawDense> for DenseMat {
    type Error = Error;

    fn try_from(raw: RawDense) -> Result<Self> {
        DenseMat::from_flat(raw.rows, raw.cols, raw.data)
    }
}

impl DenseMat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix with every entry set to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = DenseMat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMat { rows: r, cols: c, data })
    }

    /// Builds from a flat row-major buffer of exactly `rows * cols` entries.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "flat buffer has {} entries, expected {rows}x{cols}={}",
                data.len(),
                rows * cols
            )));
        }
        Ok(DenseMat { rows, cols, data })
    }

    /// Glorot-uniform initialization: entries drawn from
    /// `U(-limit, limit)` with `limit = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        DenseMat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self @ other`. Errors when `self.cols != other.rows`.
    pub fn matmul(&self, other: &DenseMat) -> Result<DenseMat> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMat::zeros(self.rows, other.cols);
        let inner = self.cols;
        let ncols = other.cols;
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * inner..(i + 1) * inner];
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * ncols..(k + 1) * ncols];
                for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bkj;
                }
            }
        };
        if out.data.len() >= super::PAR_THRESHOLD && ncols > 0 {
            super::ensure_thread_pool();
            out.data
                .par_chunks_mut(ncols)
                .enumerate()
                .for_each(body);
        } else if ncols > 0 {
            out.data.chunks_mut(ncols).enumerate().for_each(body);
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self += a * x`. Errors on shape mismatch.
    pub fn axpy(&mut self, a: f64, x: &DenseMat) -> Result<()> {
        if self.shape() != x.shape() {
            return Err(Error::shape(format!(
                "axpy {}x{} += {}x{}",
                self.rows, self.cols, x.rows, x.cols
            )));
        }
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        Ok(())
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// New matrix with `f` applied to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMat {
        DenseMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row-wise softmax with max-shift stabilization.
    pub fn row_softmax(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(i);
            let mut total = 0.0;
            for (e, &v) in o.iter_mut().zip(row) {
                *e = (v - m).exp();
                total += *e;
            }
            for e in o.iter_mut() {
                *e /= total;
            }
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference; infinity on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseMat) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Independent triple-loop product used as the kernel oracle.
    fn matmul_oracle(a: &DenseMat, b: &DenseMat) -> DenseMat {
        let mut out = DenseMat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DenseMat {
        use rand::Rng;
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        DenseMat::from_flat(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_times_matrix_is_identity_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = random_mat(4, 3, &mut rng);
        let got = DenseMat::identity(4).matmul(&x).unwrap();
        assert_eq!(got, x);
    }

    #[test]
    fn row_selector_product_picks_rows() {
        let x = DenseMat::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ])
        .unwrap();
        // Selector with ones at (0,2) and (1,0) pulls rows 2 and 0.
        let sel = DenseMat::from_rows(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let got = sel.matmul(&x).unwrap();
        let want = DenseMat::from_rows(&[vec![5.0, 6.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_mat(3, 4, &mut rng);
            let b = random_mat(4, 2, &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = matmul_oracle(&a, &b);
            assert!(got.max_abs_diff(&want) <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let a = DenseMat::zeros(2, 3);
        let b = DenseMat::zeros(4, 2);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let a = random_mat(5, 3, &mut rng);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 4), a.get(4, 2));
    }

    #[test]
    fn glorot_entries_stay_inside_the_limit() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let w = DenseMat::glorot_uniform(30, 20, &mut rng);
        let limit = (6.0 / 50.0_f64).sqrt();
        assert!(w.max_abs() <= limit);
        // Same seed reproduces the same matrix bit for bit.
        let mut rng2 = ChaCha20Rng::seed_from_u64(17);
        let w2 = DenseMat::glorot_uniform(30, 20, &mut rng2);
        assert_eq!(w, w2);
    }
}
