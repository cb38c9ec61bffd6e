//! Small dense and tridiagonal factorizations used by the samplers.

use nalgebra::{DMatrix, DVector};

/// Cholesky factor `L` of a symmetric positive-definite tridiagonal matrix,
/// stored as its diagonal and sub-diagonal.
#[derive(Debug, Clone)]
pub struct TridiagCholesky {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl TridiagCholesky {
    /// Factors the matrix with diagonal `diag` and sub-diagonal `sub`
    /// (`sub[i]` is entry `(i + 1, i)`). Returns `None` if a pivot is not
    /// strictly positive.
    pub fn factor(diag: &[f64], sub: &[f64]) -> Option<Self> {
        let n = diag.len();
        debug_assert_eq!(sub.len() + 1, n.max(1));
        let mut l_diag = vec![0.0; n];
        let mut l_sub = vec![0.0; n.saturating_sub(1)];
        let mut prev = 0.0;
        for i in 0..n {
            let mut pivot = diag[i];
            if i > 0 {
                let s = sub[i - 1] / prev;
                l_sub[i - 1] = s;
                pivot -= s * s;
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            prev = pivot.sqrt();
            l_diag[i] = prev;
        }
        Some(Self {
            diag: l_diag,
            sub: l_sub,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        let mut prev = 0.0;
        for i in 0..b.len() {
            let mut v = b[i];
            if i > 0 {
                v -= self.sub[i - 1] * prev;
            }
            prev = v / self.diag[i];
            b[i] = prev;
        }
    }

    /// Solves `L^T x = b` in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        let n = b.len();
        let mut next = 0.0;
        for i in (0..n).rev() {
            let mut v = b[i];
            if i + 1 < n {
                v -= self.sub[i] * next;
            }
            next = v / self.diag[i];
            b[i] = next;
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_lower(b);
        self.solve_upper(b);
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.diag.iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Largest absolute entry of `a - a^T`, relative to the largest absolute entry of `a`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Bandwidth of a square matrix: largest `|i - j|` with a nonzero entry.
pub fn bandwidth(a: &DMatrix<f64>) -> usize {
    let mut bw = 0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != 0.0 {
                bw = bw.max(i.abs_diff(j));
            }
        }
    }
    bw
}

/// Solves `L x = b` for lower-triangular `L` (only the lower triangle is read).
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[(i, k)] * b[k];
        }
        b[i] = v / l[(i, i)];
    }
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub fn solve_upper_transposed_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let col = l.column(i);
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= col[k] * b[k];
        }
        b[i] = v / col[i];
    }
}

/// In-place rank-one modification of a lower Cholesky factor:
/// on return `L L^T` equals the old `L L^T + sign * x x^T`.
///
/// `x` is overwritten. Returns `false` (leaving `l` partially modified) if a
/// downdate would make the matrix indefinite.
pub fn cholesky_rank_one(l: &mut DMatrix<f64>, x: &mut [f64], downdate: bool) -> bool {
    let n = x.len();
    let sign = if downdate { -1.0 } else { 1.0 };
    for k in 0..n {
        let lkk = l[(k, k)];
        let r2 = lkk * lkk + sign * x[k] * x[k];
        if !(r2 > 0.0) {
            return false;
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        let mut col = l.column_mut(k);
        for i in (k + 1)..n {
            let updated = (col[i] + sign * s * x[i]) / c;
            x[i] = c * x[i] - s * updated;
            col[i] = updated;
        }
    }
    true
}

/// `x^T y` for slices.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Dense Cholesky factor of a symmetric matrix, retrying with a growing
/// diagonal jitter when the plain factorization fails.
///
/// The first jitter is `1e-10 * trace / n`; each retry multiplies it by ten.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, retries: usize) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = a.clone().cholesky() {
        return Some(c);
    }
    let n = a.nrows().max(1) as f64;
    let mut jitter = 1e-10 * a.trace().abs() / n;
    if jitter == 0.0 {
        jitter = 1e-10;
    }
    for _ in 0..retries {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        jitter *= 10.0;
    }
    None
}

/// Unbiased sample covariance of the columns of `draws` (d x S).
pub fn sample_covariance(draws: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (d, s) = draws.shape();
    let mean = draws.column_mean();
    let mut centered = draws.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let denom = (s.max(2) - 1) as f64;
    debug_assert_eq!(mean.len(), d);
    let cov = &centered * centered.transpose() / denom;
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &m * m.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let diag = [4.0, 5.0, 3.0, 6.0];
        let sub = [-1.0, 2.0, -0.5];
        let mut dense = DMatrix::zeros(4, 4);
        for i in 0..4 {
            dense[(i, i)] = diag[i];
        }
        for i in 0..3 {
            dense[(i + 1, i)] = sub[i];
            dense[(i, i + 1)] = sub[i];
        }
        let chol = TridiagCholesky::factor(&diag, &sub).unwrap();
        let mut b = vec![1.0, -2.0, 0.5, 3.0];
        let expected = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        chol.solve(&mut b);
        for i in 0..4 {
            assert!((b[i] - expected[i]).abs() < 1e-12);
        }
        let ld = dense.cholesky().unwrap().determinant().ln();
        assert!((chol.log_det() - ld).abs() < 1e-12);
    }

    #[test]
    fn tridiagonal_rejects_indefinite() {
        assert!(TridiagCholesky::factor(&[1.0, 1.0], &[2.0]).is_none());
    }

    #[test]
    fn rank_one_update_and_downdate() {
        let a = random_spd(6, 3);
        let v: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut l = a.clone().cholesky().unwrap().unpack();
        let mut x = v.clone();
        assert!(cholesky_rank_one(&mut l, &mut x, false));
        let vv = DVector::from_vec(v.clone());
        let updated = &a + &vv * vv.transpose();
        assert!((&l * l.transpose() - &updated).amax() < 1e-12);
        let mut x = v.clone();
        assert!(cholesky_rank_one(&mut l, &mut x, true));
        assert!((&l * l.transpose() - &a).amax() < 1e-12);
    }

    #[test]
    fn triangular_solves() {
        let a = random_spd(5, 9);
        let l = a.clone().cholesky().unwrap().unpack();
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let mut x = b.clone();
        solve_lower_in_place(&l, &mut x);
        solve_upper_transposed_in_place(&l, &mut x);
        let back = &a * DVector::from_vec(x);
        for i in 0..5 {
            assert!((back[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn covariance_of_two_draws() {
        let draws = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, -2.0]);
        let (mean, cov) = sample_covariance(&draws);
        assert_eq!(mean.as_slice(), &[2.0, 0.0]);
        // (a - b)(a - b)^T / 2 with a - b = (-2, 4)
        assert!((cov[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((cov[(0, 1)] + 4.0).abs() < 1e-12);
        assert!((cov[(1, 1)] - 8.0).abs() < 1e-12);
    }
}
