//! Small dense 3×3 algebra for compliance matrices and a banded Cholesky
//! solver for the finite element systems.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3×3 real matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn diag(d: [f64; 3]) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn transpose(&self) -> Self {
        let a = &self.0;
        Mat3([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let a = &self.0;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        (*self + self.transpose()).scale(0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Upper-triangular factor `L` with positive diagonal such that `self = Lᵀ L`.
    /// Only the upper triangle of `self` is read.
    pub fn cholesky_upper(&self) -> Result<Mat3> {
        let s = &self.0;
        let fail = || Error::domain(format!("matrix is not positive definite: {:?}", s));
        let l11 = checked_sqrt(s[0][0]).ok_or_else(fail)?;
        let l12 = s[0][1] / l11;
        let l13 = s[0][2] / l11;
        let l22 = checked_sqrt(s[1][1] - l12 * l12).ok_or_else(fail)?;
        let l23 = (s[1][2] - l12 * l13) / l22;
        let l33 = checked_sqrt(s[2][2] - l13 * l13 - l23 * l23).ok_or_else(fail)?;
        Ok(Mat3([[l11, l12, l13], [0.0, l22, l23], [0.0, 0.0, l33]]))
    }

    pub fn determinant(&self) -> f64 {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    pub fn inverse(&self) -> Result<Mat3> {
        let a = &self.0;
        let det = self.determinant();
        if !det.is_finite() || det.abs() <= f64::MIN_POSITIVE * self.frobenius().powi(3).max(1.0) {
            return Err(Error::domain("singular 3x3 matrix"));
        }
        let inv = 1.0 / det;
        Ok(Mat3([
            [
                (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv,
                (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv,
                (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv,
            ],
            [
                (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv,
                (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv,
                (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv,
            ],
            [
                (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv,
                (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv,
                (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv,
            ],
        ]))
    }

    /// Eigenvalues of the symmetric part, ascending (cyclic Jacobi).
    pub fn sym_eigenvalues(&self) -> [f64; 3] {
        let mut a = self.symmetrized().0;
        for _ in 0..50 {
            let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
            let scale = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
            if off <= 1e-30 * scale || off == 0.0 {
                break;
            }
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with the rotation in the (p, q) plane.
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
        let mut ev = [a[0][0], a[1][1], a[2][2]];
        ev.sort_by(|x, y| x.total_cmp(y));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues()[0]
    }

    /// Symmetric and positive-definite (relative symmetry tolerance `1e-12`).
    pub fn is_spd(&self) -> bool {
        let asym = (*self - self.transpose()).frobenius();
        self.is_finite() && asym <= 1e-12 * self.frobenius() && self.cholesky_upper().is_ok()
    }
}

fn checked_sqrt(x: f64) -> Option<f64> {
    (x > 0.0 && x.is_finite()).then(|| x.sqrt())
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(mut self, rhs: Mat3) -> Mat3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
        self
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(mut self, rhs: Mat3) -> Mat3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let mut out = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        out
    }
}

/// `Lᵀ G L`, the congruence used to carry a normalized random matrix onto a
/// prescribed mean.
pub fn congruence(l: &Mat3, g: &Mat3) -> Mat3 {
    (l.transpose() * *g * *l).symmetrized()
}

/// Symmetric positive-definite band matrix with half-bandwidth `bw`,
/// factorized in place as `L Lᵀ`.
///
/// Row `i` stores columns `i - bw ..= i` contiguously.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
    factored: bool,
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Add `v` to entry `(i, j)`; only the lower triangle (`j <= i`) is stored,
    /// so callers pass each symmetric pair once.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    /// `y = A x` for the unfactored matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored, "mul_vec on a factored matrix");
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[self.offset(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place Cholesky factorization.
    pub fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let ri = i * w + (lo + bw - i);
                let rj = j * w + (lo + bw - j);
                let len = j - lo;
                let dot = dot(&self.data[ri..ri + len], &self.data[rj..rj + len]);
                let o = i * w + (j + bw - i);
                let s = self.data[o] - dot;
                if i == j {
                    let a_ii = self.data[o];
                    if !(s > 1e-14 * a_ii.abs()) || !s.is_finite() {
                        return Err(Error::Solver(format!(
                            "stiffness matrix not positive definite at equation {i} (pivot {s:e})"
                        )));
                    }
                    self.data[o] = s.sqrt();
                } else {
                    self.data[o] = s / self.data[j * w + bw];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve with a factored matrix.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "solve before factor");
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.data[i * w + (lo + bw - i)..i * w + bw];
            y[i] = (y[i] - dot(row, &y[lo..i])) / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.data[i * w + bw];
            let yi = y[i];
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                y[j] -= self.data[i * w + (j + bw - i)] * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spd_from(seed: [f64; 6]) -> Mat3 {
        let l = Mat3([
            [1.0 + seed[0].abs(), seed[1], seed[2]],
            [0.0, 1.0 + seed[3].abs(), seed[4]],
            [0.0, 0.0, 1.0 + seed[5].abs()],
        ]);
        l.transpose() * l
    }

    #[test]
    fn cholesky_of_diagonal() {
        let l = Mat3::diag([4.0, 9.0, 16.0]).cholesky_upper().unwrap();
        assert_eq!(l, Mat3::diag([2.0, 3.0, 4.0]));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(Mat3::diag([1.0, -1.0, 1.0]).cholesky_upper().is_err());
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let a = Mat3([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        let ev = a.sym_eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
        assert!((ev[2] - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cholesky_round_trip(seed in proptest::array::uniform6(-2.0f64..2.0)) {
            let s = spd_from(seed);
            let l = s.cholesky_upper().unwrap();
            let err = (l.transpose() * l - s).frobenius() / s.frobenius();
            prop_assert!(err < 1e-13);
        }

        #[test]
        fn inverse_is_inverse(seed in proptest::array::uniform6(-2.0f64..2.0)) {
            let s = spd_from(seed);
            let err = (s * s.inverse().unwrap() - Mat3::IDENTITY).frobenius();
            prop_assert!(err < 1e-10);
        }
    }

    #[test]
    fn banded_solve_matches_dense_tridiagonal() {
        let n = 50;
        let mut a = BandedSpd::zeros(n, 1);
        for i in 0..n {
            a.add_lower(i, i, 4.0);
            if i > 0 {
                a.add_lower(i, i - 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.mul_vec(&x_true);
        let mut f = a.clone();
        f.factor().unwrap();
        let x = f.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn banded_detects_singular() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add_lower(0, 0, 1.0);
        a.add_lower(1, 0, 1.0);
        a.add_lower(1, 1, 1.0);
        assert!(matches!(a.factor(), Err(Error::Solver(_))));
    }
}
