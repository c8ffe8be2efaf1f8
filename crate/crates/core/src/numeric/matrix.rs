//! Small dense row-major matrices over any [`Real`], with the handful of
//! factorisations the identification algebra needs: Householder QR, least
//! squares, and singular values by one-sided Jacobi rotations.

use std::ops::{Index, IndexMut, Mul};

use super::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Mat<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![R::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = R::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<R>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn column_vector(values: &[R]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<R> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, factor: R) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[R]) -> Vec<R> {
        assert_eq!(self.cols, v.len(), "vector length differs");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn hstack(parts: &[Self]) -> Self {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "hstack row mismatch");
            out.set_block(0, c0, p);
            c0 += p.cols;
        }
        out
    }

    pub fn vstack(parts: &[Self]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            out.set_block(r0, 0, p);
            r0 += p.rows;
        }
        out
    }

    pub fn frobenius_norm(&self) -> R {
        self.data.iter().map(|&v| v * v).sum::<R>().sqrt()
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().fold(R::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn column_norms(&self) -> Vec<R> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)] * self[(i, j)]).sum::<R>().sqrt())
            .collect()
    }

    /// Divides every non-zero column by its Euclidean norm.
    pub fn normalize_columns(&self) -> Self {
        let norms = self.column_norms();
        Self::from_fn(self.rows, self.cols, |i, j| {
            if norms[j] > R::zero() {
                self[(i, j)] / norms[j]
            } else {
                self[(i, j)]
            }
        })
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.to_f64()).collect())
            .collect()
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<R> {
        let tall = if self.rows >= self.cols {
            self.clone()
        } else {
            self.transpose()
        };
        jacobi_singular_values(&tall)
    }

    /// Householder QR of a matrix with at least as many rows as columns.
    pub fn qr(&self) -> Qr<R> {
        Qr::new(self)
    }
}

impl<R> Index<(usize, usize)> for Mat<R> {
    type Output = R;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &R {
        &self.data[i * self.cols + j]
    }
}

impl<R> IndexMut<(usize, usize)> for Mat<R> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut R {
        &mut self.data[i * self.cols + j]
    }
}

impl<R: Real> Mul for &Mat<R> {
    type Output = Mat<R>;
    fn mul(self, rhs: Self) -> Mat<R> {
        self.matmul(rhs)
    }
}

fn jacobi_singular_values<R: Real>(a: &Mat<R>) -> Vec<R> {
    let n = a.cols();
    let m = a.rows();
    let mut cols: Vec<Vec<R>> = (0..n).map(|j| a.column(j)).collect();
    let tol = R::from_f64(R::EPSILON * (m.max(1) as f64));
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = R::zero();
                    let mut beta = R::zero();
                    let mut gamma = R::zero();
                    for i in 0..m {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if alpha == R::zero() || beta == R::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (R::from_f64(2.0) * gamma);
                let t = if zeta.abs().to_f64() > 1e100 {
                    R::one() / (R::from_f64(2.0) * zeta)
                } else {
                    let sign = if zeta < R::zero() { -R::one() } else { R::one() };
                    sign / (zeta.abs() + (R::one() + zeta * zeta).sqrt())
                };
                let c = R::one() / (R::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for i in 0..m {
                    let up = cp[i];
                    let uq = cq[i];
                    cp[i] = c * up - s * uq;
                    cq[i] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<R> = cols
        .iter()
        .map(|c| c.iter().map(|&v| v * v).sum::<R>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Householder QR factorisation `A = Q R` of an `m x n` matrix, `m >= n`.
#[derive(Clone, Debug)]
pub struct Qr<R> {
    m: usize,
    n: usize,
    /// Householder vectors, each of length `m - k`.
    reflectors: Vec<Vec<R>>,
    r: Mat<R>,
}

impl<R: Real> Qr<R> {
    fn new(a: &Mat<R>) -> Self {
        let (m, n) = (a.rows(), a.cols());
        assert!(m >= n, "QR needs rows >= cols");
        let mut work = a.clone();
        let mut reflectors = Vec::with_capacity(n);
        for k in 0..n {
            let mut v: Vec<R> = (k..m).map(|i| work[(i, k)]).collect();
            let norm = v.iter().map(|&x| x * x).sum::<R>().sqrt();
            if norm == R::zero() {
                reflectors.push(vec![R::zero(); m - k]);
                continue;
            }
            let alpha = if v[0] > R::zero() { -norm } else { norm };
            v[0] -= alpha;
            let vtv = v.iter().map(|&x| x * x).sum::<R>();
            if vtv == R::zero() {
                reflectors.push(vec![R::zero(); m - k]);
                continue;
            }
            for j in k..n {
                let dot: R = (k..m).map(|i| v[i - k] * work[(i, j)]).sum();
                let f = R::from_f64(2.0) * dot / vtv;
                for i in k..m {
                    let upd = f * v[i - k];
                    work[(i, j)] -= upd;
                }
            }
            reflectors.push(v);
        }
        let r = Mat::from_fn(n, n, |i, j| if j >= i { work[(i, j)] } else { R::zero() });
        Self {
            m,
            n,
            reflectors,
            r,
        }
    }

    pub fn r(&self) -> &Mat<R> {
        &self.r
    }

    /// Applies `Q^T` to a length-`m` vector in place.
    pub fn apply_qt(&self, b: &mut [R]) {
        assert_eq!(b.len(), self.m);
        for (k, v) in self.reflectors.iter().enumerate() {
            let vtv: R = v.iter().map(|&x| x * x).sum();
            if vtv == R::zero() {
                continue;
            }
            let dot: R = v.iter().zip(&b[k..]).map(|(&a, &c)| a * c).sum();
            let f = R::from_f64(2.0) * dot / vtv;
            for (bi, &vi) in b[k..].iter_mut().zip(v) {
                *bi -= f * vi;
            }
        }
    }

    /// Applies `Q` to a length-`m` vector in place.
    pub fn apply_q(&self, b: &mut [R]) {
        assert_eq!(b.len(), self.m);
        for (k, v) in self.reflectors.iter().enumerate().rev() {
            let vtv: R = v.iter().map(|&x| x * x).sum();
            if vtv == R::zero() {
                continue;
            }
            let dot: R = v.iter().zip(&b[k..]).map(|(&a, &c)| a * c).sum();
            let f = R::from_f64(2.0) * dot / vtv;
            for (bi, &vi) in b[k..].iter_mut().zip(v) {
                *bi -= f * vi;
            }
        }
    }

    /// The thin `m x n` orthonormal factor.
    pub fn q_thin(&self) -> Mat<R> {
        let mut q = Mat::zeros(self.m, self.n);
        for j in 0..self.n {
            let mut e = vec![R::zero(); self.m];
            e[j] = R::one();
            self.apply_q(&mut e);
            for i in 0..self.m {
                q[(i, j)] = e[i];
            }
        }
        q
    }

    /// Least-squares solution of `A x = b`. `None` when `R` has a zero pivot.
    pub fn solve_least_squares(&self, b: &[R]) -> Option<Vec<R>> {
        let mut rhs = b.to_vec();
        self.apply_qt(&mut rhs);
        solve_upper(&self.r, &rhs[..self.n])
    }
}

/// Back substitution for `U x = b` with `U` upper triangular.
pub fn solve_upper<R: Real>(u: &Mat<R>, b: &[R]) -> Option<Vec<R>> {
    let n = u.rows();
    let mut x = vec![R::zero(); n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in (i + 1)..n {
            acc -= u[(i, j)] * x[j];
        }
        let pivot = u[(i, i)];
        if pivot == R::zero() || !pivot.is_finite() {
            return None;
        }
        x[i] = acc / pivot;
    }
    Some(x)
}
