//! Dense symmetric positive-definite solves for the label-propagation head.

use alloc::vec::Vec;

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub(crate) fn zeros(n: usize) -> Self {
        Dense { n, data: alloc::vec![0.0; n * n] }
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// Solves `A X = B` for SPD `A` by Cholesky factorisation. `b` is row-major
/// `n x m`. Returns `None` if `A` is not numerically positive definite.
pub(crate) fn cholesky_solve(a: &Dense, b: &[f64], m: usize) -> Option<Vec<f64>> {
    let n = a.n;
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }

    let mut x = b.to_vec();
    for c in 0..m {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // A = [[4,1],[1,3]], x = [1,2] -> b = [6,7]
        let mut a = Dense::zeros(2);
        a.set(0, 0, 4.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 3.0);
        let x = cholesky_solve(&a, &[6.0, 7.0], 1).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = Dense::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 1.0);
        assert!(cholesky_solve(&a, &[1.0, 1.0], 1).is_none());
    }
}
