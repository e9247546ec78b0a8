//! Small dense linear algebra, sized for desk-scale problems (a handful of
//! rows and columns). Row-major storage, partial-pivot LU, Householder least
//! squares. Nothing here tries to be fast on large matrices.

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat { rows: r, cols: c, data: rows.iter().flatten().copied().collect() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// A^T x without materializing the transpose.
    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o = *o + self[(i, j)] * xi;
            }
        }
        out
    }

    pub fn matmul(&self, o: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, o.rows);
        Mat::from_fn(self.rows, o.cols, |i, j| {
            let mut s = T::zero();
            for k in 0..self.cols {
                s = s + self[(i, k)] * o[(k, j)];
            }
            s
        })
    }

    pub fn scale(&self, s: T) -> Mat<T> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, o: &Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    /// Solve `self * x = b` by LU with partial pivoting. `None` when a pivot
    /// collapses to zero (singular to working precision).
    pub fn lu_solve(&self, b: &[T]) -> Option<Vec<T>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(b.len(), self.rows);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x: Vec<T> = b.to_vec();
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                x.swap(k, piv);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let m = a[i * n + k] / d;
                if m == T::zero() {
                    continue;
                }
                a[i * n + k] = T::zero();
                for j in k + 1..n {
                    a[i * n + j] = a[i * n + j] - m * a[k * n + j];
                }
                x[i] = x[i] - m * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s = s - a[k * n + j] * x[j];
            }
            x[k] = s / a[k * n + k];
        }
        if x.iter().all(|v| v.is_finite()) {
            Some(x)
        } else {
            None
        }
    }

    /// Least squares via column-pivoted Householder QR with a rank cutoff;
    /// returns the basic solution (zeros on columns dropped by the pivoting).
    /// Handles rank-deficient systems; rows may be fewer than columns.
    pub fn lstsq(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.rows);
        let (m, n) = (self.rows, self.cols);
        let mut a = self.data.clone();
        let mut y: Vec<T> = b.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let kmax = m.min(n);
        let mut col_norm2: Vec<T> = (0..n)
            .map(|j| (0..m).fold(T::zero(), |s, i| s + a[i * n + j] * a[i * n + j]))
            .collect();
        let scale0 = col_norm2.iter().fold(T::zero(), |s, &v| s.max(v));
        let tol = scale0 * T::epsilon() * T::of(64.0) * T::of((n.max(m)) as f64);
        let mut rank = 0;
        for k in 0..kmax {
            // bring the heaviest remaining column to position k
            let (jbest, &nbest) = col_norm2
                .iter()
                .enumerate()
                .skip(k)
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap();
            if nbest <= tol || nbest == T::zero() {
                break;
            }
            if jbest != k {
                for i in 0..m {
                    a.swap(i * n + k, i * n + jbest);
                }
                perm.swap(k, jbest);
                col_norm2.swap(k, jbest);
            }
            // Householder vector for column k below row k
            let mut alpha = T::zero();
            for i in k..m {
                alpha = alpha + a[i * n + k] * a[i * n + k];
            }
            let alpha = alpha.sqrt();
            if alpha == T::zero() {
                break;
            }
            let beta = if a[k * n + k] >= T::zero() { -alpha } else { alpha };
            let mut v: Vec<T> = (k..m).map(|i| a[i * n + k]).collect();
            v[0] = v[0] - beta;
            let vnorm2 = v.iter().fold(T::zero(), |s, &t| s + t * t);
            if vnorm2 > T::zero() {
                for j in k..n {
                    let mut d = T::zero();
                    for (ii, vv) in v.iter().enumerate() {
                        d = d + *vv * a[(k + ii) * n + j];
                    }
                    let f = (d + d) / vnorm2;
                    for (ii, vv) in v.iter().enumerate() {
                        a[(k + ii) * n + j] = a[(k + ii) * n + j] - f * *vv;
                    }
                }
                let mut d = T::zero();
                for (ii, vv) in v.iter().enumerate() {
                    d = d + *vv * y[k + ii];
                }
                let f = (d + d) / vnorm2;
                for (ii, vv) in v.iter().enumerate() {
                    y[k + ii] = y[k + ii] - f * *vv;
                }
            }
            a[k * n + k] = beta;
            for i in k + 1..m {
                a[i * n + k] = T::zero();
            }
            for (j, cn) in col_norm2.iter_mut().enumerate().skip(k + 1) {
                let t = a[k * n + j];
                *cn = (*cn - t * t).max(T::zero());
            }
            rank = k + 1;
        }
        // back substitution on the leading rank x rank triangle
        let mut z = vec![T::zero(); n];
        for k in (0..rank).rev() {
            let mut s = y[k];
            for j in k + 1..rank {
                s = s - a[k * n + j] * z[j];
            }
            z[k] = s / a[k * n + k];
        }
        let mut x = vec![T::zero(); n];
        for k in 0..n {
            x[perm[k]] = z[k];
        }
        x
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |s, v| s.max(v.abs()))
}

pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_a_known_system() {
        let a: Mat<f64> = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = a.lu_solve(&[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(a.lu_solve(&[1.0, 2.0]).is_none());
    }

    #[test]
    fn lstsq_overdetermined_matches_normal_equations() {
        let a: Mat<f64> = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]]);
        let x = a.lstsq(&[6.0, 0.0, 0.0]);
        // normal equations: [3 6; 6 14] x = [6, 6]
        let g = Mat::from_rows(&[vec![3.0, 6.0], vec![6.0, 14.0]]);
        let xr = g.lu_solve(&[6.0, 6.0]).unwrap();
        assert!((x[0] - xr[0]).abs() < 1e-10);
        assert!((x[1] - xr[1]).abs() < 1e-10);
    }

    #[test]
    fn lstsq_rank_deficient_returns_a_least_squares_solution() {
        // duplicated column: residual must still be minimal
        let a: Mat<f64> = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]);
        let x = a.lstsq(&[2.0, 2.0, 1.0]);
        let r0 = x[0] + x[1] - 2.0;
        assert!(r0.abs() < 1e-10);
    }

    #[test]
    fn matvec_t_matches_transpose() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let y = a.matvec_t(&[1.0, -1.0]);
        let yt = a.transpose().matvec(&[1.0, -1.0]);
        assert_eq!(y, yt);
    }
}
