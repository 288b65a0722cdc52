//! Dense row-major matrices, a one-sided Jacobi SVD and null-space extraction.

use std::fmt;

use crate::error::{dim_err, Result, TacError};

/// Norms at or below this are treated as zero by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Default relative tolerance used to decide numerical rank in [`null_space`].
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

const MAX_JACOBI_SWEEPS: usize = 80;

/// Dense real matrix stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err!("{} values cannot fill a {}x{} matrix", data.len(), rows, cols));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(TacError::NumericalFailure(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(dim_err!("row {i} has {} entries, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Unchecked constructor for values produced by arithmetic on finite inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(dim_err!(
                "cannot multiply {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let out_row = &mut out[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(self.rows, other.cols, out))
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(dim_err!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.push(dot(self.row(i), other.row(j)));
            }
        }
        Ok(Matrix::from_raw(self.rows, other.rows, out))
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(dim_err!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = vec![0.0; self.cols * other.cols];
        for k in 0..self.rows {
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(self.cols, other.cols, out))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(idx.len(), self.cols, data)
    }

    /// First `n` rows.
    pub fn top_rows(&self, n: usize) -> Matrix {
        Matrix::from_raw(n, self.cols, self.data[..n * self.cols].to_vec())
    }

    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(dim_err!("cannot stack {} columns on {} columns", other.cols, self.cols));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix::from_raw(self.rows + other.rows, cols, data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(TacError::NumericalFailure(format!("{what} contains non-finite values")))
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(TacError::NumericalFailure(format!("cannot normalize a vector of norm {n}")));
    }
    if n <= NORM_EPS {
        return Err(TacError::DegenerateVector(format!("norm {n:e} is too small to normalize")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Thin singular value decomposition `A = U · diag(s) · Vᵗ`.
///
/// For an `m×n` input with `p = min(m, n)`, `u` is `m×p`, `s` has length `p`
/// (non-increasing) and `vt` is `p×n`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (v, s) in us.row_mut(r).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors have matching shapes")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Right singular vectors follow a fixed sign convention: the first entry of
/// each row of `vt` whose magnitude exceeds 1e-12 is non-negative.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.is_empty() {
        return Err(dim_err!("svd of an empty {}x{} matrix", a.rows(), a.cols()));
    }
    a.ensure_finite("svd input")?;

    let wide = a.rows() < a.cols();
    let tall = if wide { a.transpose() } else { a.clone() };
    let (m, n) = tall.shape();

    // Column-major working copy so the rotations touch contiguous memory.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| tall.col(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, i, j, c, s);
                rotate_pair(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TacError::NumericalFailure(format!(
            "jacobi svd did not converge in {MAX_JACOBI_SWEEPS} sweeps"
        )));
    }

    let sigma: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));

    let s_max = sigma[order[0]];
    let tiny = (s_max * (m as f64) * f64::EPSILON).max(f64::MIN_POSITIVE);
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &idx) in order.iter().enumerate() {
        if sigma[idx] > tiny {
            left.push(w[idx].iter().map(|x| x / sigma[idx]).collect());
        } else {
            left.push(Vec::new());
            missing.push(k);
        }
    }
    if !missing.is_empty() {
        let present: Vec<Vec<f64>> = left.iter().filter(|c| !c.is_empty()).cloned().collect();
        let mut fill = orthonormal_complement(&present, m).into_iter();
        for k in missing {
            left[k] = fill.next().expect("complement has enough columns");
        }
    }
    let s: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();
    let right: Vec<Vec<f64>> = order.iter().map(|&i| v[i].clone()).collect();

    // Factors of the tall matrix: tall = left · diag(s) · rightᵀ.
    let (mut u_cols, mut v_cols) = if wide { (right, left) } else { (left, right) };
    for (uc, vc) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        if let Some(first) = vc.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                uc.iter_mut().for_each(|x| *x = -*x);
                vc.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }

    let p = s.len();
    let u_rows = u_cols[0].len();
    let mut u = Matrix::zeros(u_rows, p);
    for (c, col) in u_cols.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            u.set(r, c, x);
        }
    }
    let vt = Matrix::from_raw(p, v_cols[0].len(), v_cols.concat());
    Ok(SvdResult { u, s, vt })
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Orthonormal basis for the complement of the span of `basis` in `R^dim`.
///
/// `basis` must hold orthonormal vectors of length `dim`. Uses a Householder
/// QR of the stacked basis and reads off the trailing columns of `Q`.
pub(crate) fn orthonormal_complement(basis: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let r = basis.len();
    let mut b: Vec<Vec<f64>> = basis.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(r);
    for k in 0..r {
        // Householder vector acting on coordinates k.., stored at full length.
        let x_norm = norm(&b[k][k..]);
        let mut hv = vec![0.0; dim];
        if x_norm > 0.0 {
            let alpha = if b[k][k] >= 0.0 { -x_norm } else { x_norm };
            hv[k..].copy_from_slice(&b[k][k..]);
            hv[k] -= alpha;
            let hn = norm(&hv);
            if hn > 0.0 {
                hv.iter_mut().for_each(|x| *x /= hn);
            }
        }
        for col in b.iter_mut().skip(k) {
            apply_reflector(&hv, col, k);
        }
        reflectors.push(hv);
    }
    (r..dim)
        .map(|j| {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            for (k, hv) in reflectors.iter().enumerate().rev() {
                apply_reflector(hv, &mut e, k);
            }
            e
        })
        .collect()
}

#[inline]
fn apply_reflector(hv: &[f64], x: &mut [f64], from: usize) {
    let proj = 2.0 * dot(&hv[from..], &x[from..]);
    if proj != 0.0 {
        for (xi, hi) in x[from..].iter_mut().zip(&hv[from..]) {
            *xi -= proj * hi;
        }
    }
}

/// Number of singular values above `rank_tol · s_max`.
pub fn numerical_rank(s: &[f64], rank_tol: f64) -> usize {
    let s_max = s.first().copied().unwrap_or(0.0);
    if s_max <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rank_tol * s_max).count()
}

/// Orthonormal basis (as columns of a `D×m` matrix) of the null space of `e`.
///
/// `e` is `k×D` with `D > k`; `m = D − rank(e)` where the rank counts
/// singular values above `rank_tol` times the largest one.
pub fn null_space(e: &Matrix, rank_tol: f64) -> Result<Matrix> {
    let (k, d) = e.shape();
    if d <= k {
        return Err(dim_err!("null space needs more columns than rows, got {k}x{d}"));
    }
    let dec = svd(e)?;
    let r = numerical_rank(&dec.s, rank_tol);
    let row_space: Vec<Vec<f64>> = (0..r).map(|i| dec.vt.row(i).to_vec()).collect();
    let cols = orthonormal_complement(&row_space, d);
    let m = cols.len();
    let mut basis = Matrix::zeros(d, m);
    for (c, col) in cols.iter().enumerate() {
        for (rr, &x) in col.iter().enumerate() {
            basis.set(rr, c, x);
        }
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn orthonormality_defect(cols_as_matrix: &Matrix) -> f64 {
        let g = cols_as_matrix.t_matmul(cols_as_matrix).unwrap();
        let n = g.rows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 5);
        let ab = a.matmul(&b).unwrap();
        let ab2 = a.matmul_t(&b.transpose()).unwrap();
        let ab3 = a.transpose().t_matmul(&b).unwrap();
        for ((x, y), z) in ab.as_slice().iter().zip(ab2.as_slice()).zip(ab3.as_slice()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&Matrix::identity(2)).unwrap().s;
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);

        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 0.0]]).unwrap();
        let dec = svd(&d).unwrap();
        assert!((dec.s[0] - 3.0).abs() < 1e-12 && dec.s[1].abs() < 1e-12);
        assert!(orthonormality_defect(&dec.u) < 1e-12);
        assert!(orthonormality_defect(&dec.vt.transpose()) < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 7);
        let dec = svd(&a).unwrap();
        // Oracle: multiply the factors back by hand.
        let mut residual = 0.0;
        for i in 0..4 {
            for j in 0..7 {
                let mut acc = 0.0;
                for k in 0..dec.s.len() {
                    acc += dec.u.get(i, k) * dec.s[k] * dec.vt.get(k, j);
                }
                residual += (acc - a.get(i, j)).powi(2);
            }
        }
        assert!(residual.sqrt() < 1e-6 * a.frobenius_norm());
        assert!(dec.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 5, 3);
        let d1 = svd(&a).unwrap();
        let d2 = svd(&a).unwrap();
        assert_eq!(d1.vt, d2.vt);
        for r in d1.vt.row_iter() {
            let first = r.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first >= 0.0);
        }
    }

    #[test]
    fn svd_rejects_empty() {
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(TacError::InvalidDimension(_))));
    }

    #[test]
    fn null_space_axis_case() {
        let e = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let m = null_space(&e, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert!(m.row(0).iter().all(|x| x.abs() < 1e-12));
        assert!(orthonormality_defect(&m) < 1e-12);
    }

    #[test]
    fn null_space_rank_deficient_keeps_larger_space() {
        let row = [0.3, -1.0, 2.0, 0.5];
        let e = Matrix::from_rows(&[row, row]).unwrap();
        let m = null_space(&e, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(m.cols(), 3);
    }

    #[test]
    fn null_space_of_zero_matrix_is_everything() {
        let m = null_space(&Matrix::zeros(2, 5), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(m.cols(), 5);
        assert!(orthonormality_defect(&m) < 1e-12);
    }

    #[test]
    fn null_space_random_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let e = random_matrix(&mut rng, 5, 64);
        let m = null_space(&e, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(m.cols(), 59);
        // Oracle: every row of E against every column of M, one at a time.
        let mut worst = 0.0f64;
        for r in 0..5 {
            for c in 0..m.cols() {
                let mut acc = 0.0;
                for k in 0..64 {
                    acc += e.get(r, k) * m.get(k, c);
                }
                worst = worst.max(acc.abs());
            }
        }
        assert!(worst < 1e-5 * e.max_abs());
    }

    #[test]
    fn null_space_rejects_tall_input() {
        let e = Matrix::zeros(3, 3);
        assert!(matches!(null_space(&e, 1e-7), Err(TacError::InvalidDimension(_))));
    }

    #[test]
    fn null_space_dimension_matches_rank_over_many_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let d = rng.random_range(4..20);
            let k = rng.random_range(1..d);
            let rank = rng.random_range(0..=k);
            // E = A·B with A k×rank, B rank×d has rank `rank` almost surely.
            let e = if rank == 0 {
                Matrix::zeros(k, d)
            } else {
                random_matrix(&mut rng, k, rank).matmul(&random_matrix(&mut rng, rank, d)).unwrap()
            };
            let m = null_space(&e, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(m.cols(), d - rank, "k={k} d={d} rank={rank}");
            assert!(orthonormality_defect(&m) < 1e-6);
            let em = e.matmul(&m).unwrap();
            assert!(em.max_abs() <= 1e-5 * e.max_abs().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn l2_normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let u = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.0, 1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 1e-13]), Err(TacError::DegenerateVector(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
        let n = l2_normalize(&w).unwrap();
        assert!((n.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn l2_normalize_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..32)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn svd_round_trip(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, rows, cols);
            let dec = svd(&a).unwrap();
            let diff = dec.reconstruct();
            let mut res = 0.0;
            for (x, y) in diff.as_slice().iter().zip(a.as_slice()) {
                res += (x - y) * (x - y);
            }
            prop_assert!(res.sqrt() <= 1e-6 * a.frobenius_norm().max(1e-300));
            prop_assert!(dec.s.windows(2).all(|w| w[0] >= w[1]) && dec.s.iter().all(|&x| x >= 0.0));
            prop_assert!(orthonormality_defect(&dec.u) < 1e-6);
            prop_assert!(orthonormality_defect(&dec.vt.transpose()) < 1e-6);
        }
    }
}
