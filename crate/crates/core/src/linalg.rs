//! Dense column-major matrices and the small symmetric solves used by IRLS
//! and the split search.
//!
//! Designs in this crate are tall and narrow (thousands of rows, a few dozen
//! columns), so everything is organised around column dot products.

use alloc::vec;
use alloc::vec::Vec;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// An empty matrix with `rows` rows to which columns can be pushed.
    pub fn with_rows(rows: usize) -> Self {
        Self {
            rows,
            cols: 0,
            data: Vec::new(),
        }
    }

    /// Builds a matrix from columns.
    ///
    /// # Panics
    /// If the columns do not all have length `rows`.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Self {
        let mut m = Self::with_rows(rows);
        for c in columns {
            m.push_column(c.as_ref());
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.rows..(k + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.rows..(k + 1) * self.rows]
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[k * self.rows + i]
    }

    pub fn push_column(&mut self, column: &[f64]) {
        assert_eq!(column.len(), self.rows, "column length mismatch");
        self.data.extend_from_slice(column);
        self.cols += 1;
    }

    /// Copy with rows reordered: row `i` of the result is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Matrix {
        let mut out = Matrix::with_rows(order.len());
        for k in 0..self.cols {
            let col = self.column(k);
            out.data.extend(order.iter().map(|&i| col[i]));
            out.cols += 1;
        }
        out
    }

    /// `out = X beta`
    pub fn mul_vec_into(&self, beta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(beta.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(b, self.column(k), out);
            }
        }
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(beta, &mut out);
        out
    }

    /// `out = X^T v`
    pub fn tr_mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(self.column(k), v);
        }
    }

    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_mul_vec_into(v, &mut out);
        out
    }

    /// Packed `X^T W X` (full symmetric, row-major `cols x cols`).
    pub fn weighted_gram(&self, weights: &[f64]) -> Vec<f64> {
        let q = self.cols;
        let mut gram = vec![0.0; q * q];
        let mut scratch = vec![0.0; self.rows];
        for a in 0..q {
            let xa = self.column(a);
            for ((s, &x), &w) in scratch.iter_mut().zip(xa).zip(weights) {
                *s = w * x;
            }
            for b in a..q {
                let g = dot(&scratch, self.column(b));
                gram[a * q + b] = g;
                gram[b * q + a] = g;
            }
        }
        gram
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Returned when a Gram matrix is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    /// Original index of the column that failed the pivot test.
    pub column: usize,
}

/// Pivoted Cholesky factorization of a symmetric positive semi-definite
/// matrix after equilibration to unit diagonal.
///
/// A column is declared dependent when its remaining pivot drops below
/// `rel_tol` times the largest pivot; on the equilibrated matrix that pivot is
/// `1 - R^2` of the column regressed on the columns already factored.
#[derive(Debug, Clone)]
pub struct Cholesky {
    q: usize,
    scale: Vec<f64>,
    perm: Vec<usize>,
    /// Lower triangular factor of the permuted, equilibrated matrix.
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factor `gram` (row-major `q x q`). With `ridge = Some(l)`, `l` is added
    /// to the equilibrated diagonal and the pivot test is skipped.
    pub fn factor(gram: &[f64], q: usize, rel_tol: f64, ridge: Option<f64>) -> Result<Self, Singular> {
        assert_eq!(gram.len(), q * q);
        let mut scale = vec![1.0; q];
        for k in 0..q {
            let d = gram[k * q + k];
            if d.is_finite() && d > 0.0 {
                scale[k] = 1.0 / libm::sqrt(d);
            } else if ridge.is_none() {
                return Err(Singular { column: k });
            }
        }
        let mut a = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..q {
                a[i * q + j] = gram[i * q + j] * scale[i] * scale[j];
            }
        }
        if let Some(l) = ridge {
            for k in 0..q {
                a[k * q + k] += l;
            }
        }
        let mut perm: Vec<usize> = (0..q).collect();
        let mut largest = 0.0f64;
        for k in 0..q {
            // pick the largest remaining diagonal
            let mut p = k;
            for i in k + 1..q {
                if a[i * q + i] > a[p * q + p] {
                    p = i;
                }
            }
            let pivot = a[p * q + p];
            if k == 0 {
                largest = pivot;
            }
            let dependent = !(pivot.is_finite() && pivot > 0.0) || pivot <= rel_tol * largest;
            if dependent && ridge.is_none() {
                return Err(Singular { column: perm[p] });
            }
            if p != k {
                swap_sym(&mut a, q, k, p);
                perm.swap(k, p);
            }
            let d = libm::sqrt(a[k * q + k].max(f64::MIN_POSITIVE));
            a[k * q + k] = d;
            for i in k + 1..q {
                a[i * q + k] /= d;
                a[k * q + i] = a[i * q + k];
            }
            // trailing block is kept fully symmetric so later pivoting swaps stay valid
            for j in k + 1..q {
                let ljk = a[j * q + k];
                if ljk == 0.0 {
                    continue;
                }
                for i in j..q {
                    let v = a[i * q + j] - a[i * q + k] * ljk;
                    a[i * q + j] = v;
                    a[j * q + i] = v;
                }
            }
        }
        // keep only the lower triangle
        for i in 0..q {
            for j in i + 1..q {
                a[i * q + j] = 0.0;
            }
        }
        Ok(Self {
            q,
            scale,
            perm,
            lower: a,
        })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    /// Solve `G x = b` for the original (unscaled, unpermuted) matrix.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let q = self.q;
        // A u = S b with A = S G S, x = S u; A = P L L^T P^T
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i] * self.scale[i]).collect();
        for i in 0..q {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * q + k] * y[k];
            }
            y[i] = s / self.lower[i * q + i];
        }
        for i in (0..q).rev() {
            let mut s = y[i];
            for k in i + 1..q {
                s -= self.lower[k * q + i] * y[k];
            }
            y[i] = s / self.lower[i * q + i];
        }
        let mut x = vec![0.0; q];
        for (pos, &orig) in self.perm.iter().enumerate() {
            x[orig] = y[pos] * self.scale[orig];
        }
        x
    }

    /// Explicit inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let q = self.q;
        let mut inv = vec![0.0; q * q];
        let mut e = vec![0.0; q];
        for c in 0..q {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..q {
                inv[r * q + c] = col[r];
            }
        }
        // symmetrize roundoff
        for i in 0..q {
            for j in i + 1..q {
                let m = 0.5 * (inv[i * q + j] + inv[j * q + i]);
                inv[i * q + j] = m;
                inv[j * q + i] = m;
            }
        }
        inv
    }
}

fn swap_sym(a: &mut [f64], q: usize, k: usize, p: usize) {
    for j in 0..q {
        a.swap(k * q + j, p * q + j);
    }
    for i in 0..q {
        a.swap(i * q + k, i * q + p);
    }
}

/// `M v` for a row-major square matrix.
pub fn sym_mul_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let q = v.len();
    (0..q).map(|i| dot(&m[i * q..(i + 1) * q], v)).collect()
}
