//! Compressed sparse row storage and a small dense/sparse operator wrapper.
//!
//! Only what the operator and design builders need: assembly from
//! triplets, products with vectors and dense blocks, Gustavson SpGEMM,
//! diagonal scalings and coordinate dumps.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.data.copy_from_slice(d);
        m
    }

    /// Builds from per-row entry lists. Duplicate columns within a row are
    /// summed; explicit zeros are kept so that the sparsity pattern of a
    /// stencil survives exact cancellation.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of bounds ({ncols})");
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            rows[r].push((c, v));
        }
        Self::from_rows(ncols, rows)
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let v = m[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(m.ncols(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn density(&self) -> f64 {
        if self.nrows == 0 || self.ncols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.nrows as f64 * self.ncols as f64)
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn mul_slice(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        let body = |(i, o): (usize, &mut f64)| {
            let (cols, vals) = self.row(i);
            *o = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        };
        if self.nnz() > 200_000 {
            out.par_iter_mut().enumerate().for_each(body);
        } else {
            out.iter_mut().enumerate().for_each(body);
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        self.mul_slice(x.as_slice(), out.as_mut_slice());
        out
    }

    /// `self * b` for a dense right-hand block.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.ncols);
        let m = b.ncols();
        let bt = b.transpose();
        // Rows of the product are independent; build them as row-major
        // chunks and transpose once at the end.
        let mut out_t = DMatrix::<f64>::zeros(m, self.nrows);
        out_t
            .as_mut_slice()
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, dst)| {
                let (cols, vals) = self.row(i);
                for (&k, &v) in cols.iter().zip(vals) {
                    let src = &bt.as_slice()[k * m..(k + 1) * m];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            });
        out_t.transpose()
    }

    /// Sparse product by Gustavson's row-wise accumulation.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let rows: Vec<Vec<(usize, f64)>> = (0..self.nrows)
            .into_par_iter()
            .map_init(
                || (vec![0.0f64; n], vec![usize::MAX; n]),
                |(acc, mark), i| {
                    let mut touched = Vec::new();
                    let (cols, vals) = self.row(i);
                    for (&k, &a) in cols.iter().zip(vals) {
                        let (c2, v2) = other.row(k);
                        for (&j, &b) in c2.iter().zip(v2) {
                            if mark[j] != i {
                                mark[j] = i;
                                acc[j] = 0.0;
                                touched.push(j);
                            }
                            acc[j] += a * b;
                        }
                    }
                    touched.sort_unstable();
                    touched.into_iter().map(|j| (j, acc[j])).collect()
                },
            )
            .collect();
        CsrMatrix::from_rows(n, rows)
    }

    /// `self * diag(d)`.
    pub fn scale_columns(&self, d: &[f64]) -> CsrMatrix {
        assert_eq!(d.len(), self.ncols);
        let mut out = self.clone();
        for (v, &j) in out.data.iter_mut().zip(&self.indices) {
            *v *= d[j];
        }
        out
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> CsrMatrix {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.data[k] *= di;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `alpha * self + beta * other`.
    pub fn add(&self, other: &CsrMatrix, alpha: f64, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = (0..self.nrows)
            .map(|i| {
                let (c1, v1) = self.row(i);
                let (c2, v2) = other.row(i);
                c1.iter()
                    .zip(v1)
                    .map(|(&j, &v)| (j, alpha * v))
                    .chain(c2.iter().zip(v2).map(|(&j, &v)| (j, beta * v)))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(self.ncols, rows)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.ncols];
        for (i, j, v) in self.triplets() {
            rows[j].push((i, v));
        }
        CsrMatrix::from_rows(self.nrows, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Coordinate-format dump: one `row col value` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "% {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Storage switch used for kernel and correction matrices: dense once the
/// pattern covers a sizeable fraction of all pairs, CSR otherwise.
#[derive(Debug, Clone)]
pub enum LinOp {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

pub const DENSE_FILL_THRESHOLD: f64 = 0.25;

impl LinOp {
    pub fn auto(m: CsrMatrix) -> Self {
        if m.density() > DENSE_FILL_THRESHOLD {
            LinOp::Dense(m.to_dense())
        } else {
            LinOp::Sparse(m)
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.nrows(),
            LinOp::Sparse(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.ncols(),
            LinOp::Sparse(m) => m.ncols(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LinOp::Dense(_))
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LinOp::Dense(m) => m * x,
            LinOp::Sparse(m) => m.mul_vec(x),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            LinOp::Dense(m) => m[(i, j)],
            LinOp::Sparse(m) => m.get(i, j),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinOp::Dense(m) => m.clone(),
            LinOp::Sparse(m) => m.to_dense(),
        }
    }

    /// `dst += alpha * self`.
    pub fn add_to_dense(&self, dst: &mut DMatrix<f64>, alpha: f64) {
        match self {
            LinOp::Dense(m) => *dst += m * alpha,
            LinOp::Sparse(m) => {
                for (i, j, v) in m.triplets() {
                    dst[(i, j)] += alpha * v;
                }
            }
        }
    }

    /// `tr(b * self)`.
    pub fn trace_product(&self, b: &DMatrix<f64>) -> f64 {
        match self {
            LinOp::Dense(m) => {
                // tr(B M) = sum_ik B_ik M_ki = <B, M^T>
                let n = m.nrows();
                (0..n)
                    .into_par_iter()
                    .map(|k| (0..m.ncols()).map(|i| b[(i, k)] * m[(k, i)]).sum::<f64>())
                    .sum()
            }
            LinOp::Sparse(m) => m.triplets().map(|(k, i, v)| b[(i, k)] * v).sum(),
        }
    }

    pub fn norm_inf(&self) -> f64 {
        match self {
            LinOp::Dense(m) => m
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            LinOp::Sparse(m) => m.norm_inf(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.iter().filter(|v| **v != 0.0).count(),
            LinOp::Sparse(m) => m.nnz(),
        }
    }

    pub fn write_coo<W: Write>(&self, w: W) -> io::Result<()> {
        match self {
            LinOp::Dense(m) => CsrMatrix::from_dense(m).write_coo(w),
            LinOp::Sparse(m) => m.write_coo(w),
        }
    }
}

/// `a * b` where `a` is sparse and `b` may be either representation.
pub fn sparse_times(a: &CsrMatrix, b: &LinOp) -> LinOp {
    match b {
        LinOp::Sparse(bs) => LinOp::auto(a.matmul(bs)),
        LinOp::Dense(bd) => {
            let prod = a.mul_dense(bd);
            let nnz = prod.iter().filter(|v| **v != 0.0).count();
            if (nnz as f64) > DENSE_FILL_THRESHOLD * (prod.nrows() * prod.ncols()) as f64 {
                LinOp::Dense(prod)
            } else {
                LinOp::Sparse(CsrMatrix::from_dense(&prod))
            }
        }
    }
}

/// Sum of operators; stays sparse only when every term is sparse and the
/// result is thin enough.
pub fn linop_sum(terms: &[LinOp]) -> LinOp {
    assert!(!terms.is_empty());
    if terms.iter().all(|t| !t.is_dense()) {
        let mut acc = match &terms[0] {
            LinOp::Sparse(m) => m.clone(),
            LinOp::Dense(_) => unreachable!(),
        };
        for t in &terms[1..] {
            if let LinOp::Sparse(m) = t {
                acc = acc.add(m, 1.0, 1.0);
            }
        }
        return LinOp::auto(acc);
    }
    let mut acc = DMatrix::zeros(terms[0].nrows(), terms[0].ncols());
    for t in terms {
        t.add_to_dense(&mut acc, 1.0);
    }
    LinOp::Dense(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            4,
            &[(0, 1, 2.0), (0, 3, -1.0), (1, 0, 4.0), (2, 2, 3.0), (2, 2, 1.0)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let m = sample();
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.get(2, 2), 4.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn spgemm_matches_dense() {
        let a = sample();
        let b = CsrMatrix::from_triplets(4, 2, &[(0, 0, 1.0), (1, 1, 2.0), (3, 0, 5.0), (2, 1, -2.0)]);
        let c = a.matmul(&b).to_dense();
        let expect = a.to_dense() * b.to_dense();
        assert!((c - expect).abs().max() < 1e-14);
    }

    #[test]
    fn dense_block_product() {
        let a = sample();
        let b = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 2.5);
        let got = a.mul_dense(&b);
        assert!((got - a.to_dense() * &b).abs().max() < 1e-14);
    }

    #[test]
    fn scalings_and_transpose() {
        let a = sample();
        let d = [1.0, 2.0, 3.0, 4.0];
        let ad = a.scale_columns(&d).to_dense();
        let expect = a.to_dense() * DMatrix::from_diagonal(&DVector::from_row_slice(&d));
        assert!((ad - expect).abs().max() < 1e-14);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn trace_product_both_storages() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 1, 2.0), (1, 2, 1.0), (2, 0, -3.0), (1, 1, 0.5)]);
        let b = DMatrix::from_fn(3, 3, |i, j| 1.0 + i as f64 - 0.3 * j as f64);
        let expect = (&b * a.to_dense()).trace();
        assert!((LinOp::Sparse(a.clone()).trace_product(&b) - expect).abs() < 1e-13);
        assert!((LinOp::Dense(a.to_dense()).trace_product(&b) - expect).abs() < 1e-13);
    }

    #[test]
    fn coo_dump_roundtrip_header() {
        let mut buf = Vec::new();
        sample().write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("% 3 4 4"));
        assert_eq!(text.lines().count(), 5);
    }
}
