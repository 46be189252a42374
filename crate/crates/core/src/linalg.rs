//! Dense row-major matrices and a one-sided Jacobi SVD.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Off-diagonal threshold: a column pair is orthogonal once
/// `|a_i·a_j| ≤ JACOBI_TOL·‖a_i‖·‖a_j‖`.
pub const JACOBI_TOL: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, k, |r, c| self[(r, c)])
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.frobenius_sq())
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        )
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Thin SVD `A = U·diag(s)·Vᵀ` with `p = min(rows, cols)` columns in `U` and
/// `V`, singular values in descending order. `U` always has orthonormal
/// columns, also for zero singular values.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// `U_r·diag(s_r)·V_rᵀ`.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        let mut us = self.u.leading_columns(rank);
        for r in 0..us.rows() {
            for c in 0..rank {
                us[(r, c)] *= self.s[c];
            }
        }
        us.matmul(&self.v.leading_columns(rank).transpose())
    }
}

/// One-sided Jacobi SVD, rotating the columns of whichever of `A` or `Aᵀ`
/// has fewer columns.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (x, y) = (&mut lo[i], &mut hi[0]);
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

fn jacobi_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = (a.rows(), a.cols());
    // Column-major working copies of A and V.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a[(r, c)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::SvdNoConvergence { sweeps });
        }
        sweeps += 1;
        converged = true;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if alpha == 0.0 || beta == 0.0 || libm::fabs(gamma) <= JACOBI_TOL * libm::sqrt(alpha * beta) {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
    }

    let norms: Vec<f64> = w.iter().map(|col| libm::sqrt(dot(col, col))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let scale = norms.iter().copied().fold(0.0, f64::max);
    let negligible = scale * f64::EPSILON * m.max(n) as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for &idx in &order {
        let sigma = norms[idx];
        v_cols.push(v[idx].clone());
        if sigma > negligible {
            u_cols.push(w[idx].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(vec![0.0; m]);
            s.push(0.0);
        }
    }
    complete_orthonormal(&mut u_cols, &s);

    for (uc, vc) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        let flip = uc.iter().find(|x| libm::fabs(**x) > 1e-12).is_some_and(|x| *x < 0.0);
        if flip {
            uc.iter_mut().for_each(|x| *x = -*x);
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(Svd {
        u: Matrix::from_fn(m, n, |r, c| u_cols[c][r]),
        s,
        v: Matrix::from_fn(n, n, |r, c| v_cols[c][r]),
    })
}

/// Replaces the columns belonging to zero singular values with unit vectors
/// orthogonal to all other columns (Gram-Schmidt over the standard basis).
fn complete_orthonormal(cols: &mut [Vec<f64>], s: &[f64]) {
    let m = cols.first().map_or(0, Vec::len);
    let mut basis = 0;
    for k in 0..cols.len() {
        if s[k] > 0.0 {
            continue;
        }
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for (j, other) in cols.iter().enumerate() {
                    if j == k || (s[j] == 0.0 && j > k) {
                        continue;
                    }
                    let p = dot(&cand, other);
                    cand.iter_mut().zip(other).for_each(|(c, o)| *c -= p * o);
                }
            }
            let norm = libm::sqrt(dot(&cand, &cand));
            if norm > 1e-8 {
                cols[k] = cand.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn gram_is_identity(q: &Matrix, tol: f64) -> bool {
        let g = q.transpose().matmul(q);
        (0..g.rows()).all(|r| (0..g.cols()).all(|c| libm::fabs(g[(r, c)] - if r == c { 1.0 } else { 0.0 }) < tol))
    }

    #[test]
    fn full_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(r, c) in &[(5, 3), (3, 5), (8, 8), (1, 4), (4, 1), (17, 9)] {
            let a = random(r, c, &mut rng);
            let d = svd(&a).unwrap();
            let p = r.min(c);
            assert_eq!(d.s.len(), p);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(a.sub(&d.reconstruct(p)).frobenius() < 1e-12 * a.frobenius().max(1.0));
            assert!(gram_is_identity(&d.u, 1e-10));
            assert!(gram_is_identity(&d.v, 1e-10));
        }
    }

    #[test]
    fn singular_values_match_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (r, c) = (rng.random_range(1..12), rng.random_range(1..12));
            let a = random(r, c, &mut rng);
            let d = svd(&a).unwrap();
            let reference = nalgebra::DMatrix::from_row_slice(r, c, a.as_slice());
            let mut sv: std::vec::Vec<f64> = reference.singular_values().iter().copied().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in d.s.iter().zip(&sv) {
                assert!(libm::fabs(x - y) < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn diagonal_truncation_error() {
        let a = Matrix::from_fn(3, 3, |r, c| if r == c { [3.0, 2.0, 1.0][r] } else { 0.0 });
        let d = svd(&a).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0, 1.0]);
        assert!(libm::fabs(a.sub(&d.reconstruct(2)).frobenius() - 1.0) < 1e-14);
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_u() {
        // Rank one, tall: two of three singular values vanish.
        let a = Matrix::from_fn(6, 3, |r, c| (r as f64 + 1.0) * (c as f64 - 1.5));
        let d = svd(&a).unwrap();
        assert!(d.s[1] == 0.0 && d.s[2] == 0.0);
        assert!(gram_is_identity(&d.u, 1e-10));
        assert!(a.sub(&d.reconstruct(1)).frobenius() < 1e-12);

        let zero = Matrix::zeros(4, 2);
        let d = svd(&zero).unwrap();
        assert_eq!(d.s, vec![0.0, 0.0]);
        assert!(gram_is_identity(&d.u, 1e-12));
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(6, 4, &mut rng);
        let d = svd(&a).unwrap();
        for c in 0..4 {
            let first = (0..6).map(|r| d.u[(r, c)]).find(|x| libm::fabs(*x) > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }
}
