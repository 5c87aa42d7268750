//! Small dense linear algebra on row-major matrices and slice vectors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_sq<T: Real>(a: &[T]) -> T {
    dot(a, a)
}

pub fn norm<T: Real>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn frobenius(&self) -> T {
        norm(&self.data)
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Spectral radius of a square matrix to relative accuracy `tol`.
    ///
    /// Runs power iteration first. When the dominant eigenvalues form a
    /// complex pair or tie in modulus the power ratio never settles, and the
    /// estimate falls back to Gelfand's formula `ρ = lim ‖A^n‖^(1/n)` evaluated
    /// with `n = 2^k` by repeated normalized squaring.
    pub fn spectral_radius(&self, tol: f64) -> T {
        assert_eq!(self.rows, self.cols, "spectral radius needs a square matrix");
        let n = self.rows;
        if n == 0 {
            return T::zero();
        }
        if n == 1 {
            return self.data[0].abs();
        }
        if let Some(r) = self.power_iteration(tol, 20_000) {
            return r;
        }
        self.gelfand_radius()
    }

    fn power_iteration(&self, tol: f64, max_iters: usize) -> Option<T> {
        let n = self.rows;
        // Generic start vector with no special alignment to any eigenvector.
        let mut x: Vec<T> = (0..n).map(|i| T::lit(1.0 + 0.1 * (i as f64 + 1.0).sqrt())).collect();
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut prev = T::zero();
        let mut stable = 0;
        for _ in 0..max_iters {
            let y = self.matvec(&x).ok()?;
            let ny = norm(&y);
            if ny == T::zero() {
                // Nilpotent direction; Gelfand handles it.
                return None;
            }
            let ratio = ny;
            if (ratio - prev).abs().as_f64() <= tol * ratio.as_f64().max(1e-300) {
                stable += 1;
                if stable >= 5 {
                    return Some(ratio);
                }
            } else {
                stable = 0;
            }
            prev = ratio;
            x = y.into_iter().map(|v| v / ny).collect();
        }
        None
    }

    fn gelfand_radius(&self) -> T {
        let n0 = self.frobenius();
        if n0 == T::zero() {
            return T::zero();
        }
        // log ‖A^p‖ with p = 2^k, tracked through normalized squares.
        let mut log_norm = n0.as_f64().ln();
        let mut power = 1.0f64;
        let mut b = self.scale(T::one() / n0);
        for _ in 0..60 {
            let sq = b.matmul(&b).expect("square");
            let ns = sq.frobenius();
            if ns == T::zero() {
                return T::zero();
            }
            log_norm = 2.0 * log_norm + ns.as_f64().ln();
            power *= 2.0;
            b = sq.scale(T::one() / ns);
        }
        T::lit((log_norm / power).exp())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Affine map `z ↦ A z + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap<T> {
    pub matrix: Matrix<T>,
    pub offset: Vec<T>,
}

impl<T: Real> LinearMap<T> {
    pub fn new(matrix: Matrix<T>, offset: Vec<T>) -> Result<Self> {
        if offset.len() != matrix.rows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                got: offset.len(),
            });
        }
        Ok(Self { matrix, offset })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            matrix: Matrix::identity(d),
            offset: vec![T::zero(); d],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn apply(&self, z: &[T]) -> Result<Vec<T>> {
        let mut y = self.matrix.matvec(z)?;
        y.iter_mut().zip(&self.offset).for_each(|(v, &o)| *v += o);
        Ok(y)
    }

    /// Frobenius norm of the Jacobian, constant for an affine map.
    pub fn jacobian_frobenius(&self) -> T {
        self.matrix.frobenius()
    }
}

/// Orthonormalizes `vectors` with modified Gram-Schmidt. Rejects (near) dependent input.
pub fn gram_schmidt<T: Real>(vectors: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let p = dot(&w, b);
            w.iter_mut().zip(b).for_each(|(x, &y)| *x -= p * y);
        }
        let n = norm(&w);
        if n.as_f64() < 1e-12 {
            return Err(invalid("vectors", "linearly dependent input"));
        }
        w.iter_mut().for_each(|x| *x /= n);
        basis.push(w);
    }
    Ok(basis)
}
