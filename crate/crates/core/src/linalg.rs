//! Dense and sparse complex matrix helpers shared by the builders and the
//! propagators.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64 as C64;

/// Dense square complex matrix (Hamiltonians, propagators, density matrices).
pub type ComplexMatrix = Array2<C64>;

/// Conjugate transpose.
pub fn dagger(m: &ComplexMatrix) -> ComplexMatrix {
    m.t().mapv(|z| z.conj())
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest entrywise modulus of `m - m†`.
pub fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn frobenius_norm(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute row sum, an upper bound on the spectral radius.
pub fn inf_norm(m: &ComplexMatrix) -> f64 {
    m.rows()
        .into_iter()
        .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_square(m: &ComplexMatrix) -> bool {
    m.nrows() == m.ncols()
}

pub(crate) fn to_faer(m: &ComplexMatrix) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_faer(m: faer::MatRef<'_, C64>) -> ComplexMatrix {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Compressed-row complex matrix. Lattice Hamiltonians have at most `2N + 1`
/// nonzeros per row, so time stepping through this representation is much
/// cheaper than dense products.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    /// Keeps every entry that is not exactly zero.
    pub fn from_dense(m: &ComplexMatrix) -> Self {
        assert!(is_square(m), "sparse conversion needs a square matrix");
        let dim = m.nrows();
        let mut row_start = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_start.push(0);
        for i in 0..dim {
            for j in 0..dim {
                let z = m[[i, j]];
                if z != C64::new(0.0, 0.0) {
                    cols.push(j);
                    values.push(z);
                }
            }
            row_start.push(cols.len());
        }
        Self { dim, row_start, cols, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate `(row, col, value)` over stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_start[i]..self.row_start[i + 1]).map(move |p| (i, self.cols[p], self.values[p]))
        })
    }

    /// `out = self * x`
    pub fn mul_vec_into(&self, x: ArrayView1<'_, C64>, out: &mut Array1<C64>) {
        for i in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for p in self.row_start[i]..self.row_start[i + 1] {
                acc += self.values[p] * x[self.cols[p]];
            }
            out[i] = acc;
        }
    }
}
