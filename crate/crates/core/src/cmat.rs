//! Dense complex matrices and the few factorizations the estimators need.
//!
//! Everything is row-major `Complex64`. The hot paths of the estimators are
//! `weighted_gram` (building `A diag(d) A^H`) and the multi-RHS Cholesky
//! solves, so those are written to stream over contiguous rows.

pub use num_complex::Complex64;

use crate::{Error, Result};

/// Dense complex matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match dimensions");
        Self { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn col_vec(v: &[Complex64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn check_dims(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::DimensionMismatch {
                expected: (rows, cols),
                got: (self.rows, self.cols),
            });
        }
        Ok(())
    }

    /// `self * rhs`.
    pub fn mul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        // ikj order: the inner update streams over contiguous rows.
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik == Complex64::ZERO {
                    continue;
                }
                let brow = rhs.row(k);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `self * rhs^H` without materializing the adjoint; rows of both
    /// operands are read contiguously.
    pub fn mul_conj_t(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.cols, "inner dimensions must agree");
        let mut out = CMat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..rhs.rows {
                out[(i, j)] = dot_conj_rhs(arow, rhs.row(j));
            }
        }
        out
    }

    /// Matrix-vector product `self * v`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum::<Complex64>()
            })
            .collect()
    }

    /// `self^H * v`, accumulated row by row so memory access stays contiguous.
    pub fn conj_t_mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![Complex64::ZERO; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * vi;
            }
        }
        out
    }

    pub fn conj_t(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn add(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self * diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_cols(&self, d: &[f64]) -> CMat {
        assert_eq!(self.cols, d.len());
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &s) in out.row_mut(i).iter_mut().zip(d) {
                *x *= s;
            }
        }
        out
    }

    /// Hermitian product `self * diag(d) * self^H`, with `d` real
    /// nonnegative. Only the upper triangle is computed; the lower half is
    /// mirrored.
    pub fn weighted_gram(&self, d: &[f64]) -> CMat {
        assert_eq!(self.cols, d.len());
        let m = self.rows;
        let mut out = CMat::zeros(m, m);
        for i in 0..m {
            let ri = self.row(i);
            for j in i..m {
                let rj = self.row(j);
                let mut re = 0.0;
                let mut im = 0.0;
                for ((&a, &b), &w) in ri.iter().zip(rj).zip(d) {
                    // w * a * conj(b)
                    re += w * (a.re * b.re + a.im * b.im);
                    im += w * (a.im * b.re - a.re * b.im);
                }
                out[(i, j)] = Complex64::new(re, im);
                if i != j {
                    out[(j, i)] = Complex64::new(re, -im);
                }
            }
        }
        out
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &CMat) -> CMat {
        let mut out = CMat::zeros(self.rows * rhs.rows, self.cols * rhs.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == Complex64::ZERO {
                    continue;
                }
                for p in 0..rhs.rows {
                    for q in 0..rhs.cols {
                        out[(i * rhs.rows + p, j * rhs.cols + q)] = a * rhs[(p, q)];
                    }
                }
            }
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Adds `jitter` to every diagonal entry in place.
    pub fn add_diag(&mut self, jitter: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += jitter;
        }
    }

    /// Real trace (imaginary parts of the diagonal are discarded).
    pub fn trace_re(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)].re).sum()
    }

    /// Cholesky factorization `self = L L^H` of a Hermitian positive
    /// definite matrix. Only the lower triangle of `self` is read.
    pub fn cholesky(&self) -> Result<Cholesky> {
        assert_eq!(self.rows, self.cols, "cholesky needs a square matrix");
        let n = self.rows;
        let mut l = self.clone();
        for j in 0..n {
            for k in 0..j {
                let ljk = l[(j, k)];
                if ljk == Complex64::ZERO {
                    continue;
                }
                // Column update: l[i][j] -= l[i][k] * conj(l[j][k])
                let c = ljk.conj();
                for i in j..n {
                    let v = l[(i, k)] * c;
                    l[(i, j)] -= v;
                }
            }
            let d = l[(j, j)].re;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let s = d.sqrt();
            l[(j, j)] = Complex64::new(s, 0.0);
            for i in j + 1..n {
                l[(i, j)] /= s;
            }
        }
        // Zero the upper triangle so the factor is exactly lower triangular.
        for i in 0..n {
            for j in i + 1..n {
                l[(i, j)] = Complex64::ZERO;
            }
        }
        Ok(Cholesky { l })
    }

    /// Solves `self * X = B` for general square `self` via partially pivoted
    /// LU. `B` columns are the right-hand sides.
    pub fn lu_solve(&self, b: &CMat) -> Result<CMat> {
        assert_eq!(self.rows, self.cols, "lu_solve needs a square matrix");
        assert_eq!(self.rows, b.rows, "dimension mismatch in lu_solve");
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.clone();
        for col in 0..n {
            let (pivot_row, pivot_mag) = (col..n)
                .map(|r| (r, a[(r, col)].norm_sqr()))
                .max_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            if pivot_mag == 0.0 || !pivot_mag.is_finite() {
                return Err(Error::SingularMatrix { pivot: col });
            }
            if pivot_row != col {
                for j in 0..n {
                    self_swap(&mut a, (col, j), (pivot_row, j));
                }
                for j in 0..x.cols {
                    self_swap(&mut x, (col, j), (pivot_row, j));
                }
            }
            let inv = a[(col, col)].inv();
            for r in col + 1..n {
                let factor = a[(r, col)] * inv;
                if factor == Complex64::ZERO {
                    continue;
                }
                a[(r, col)] = Complex64::ZERO;
                for j in col + 1..n {
                    let v = a[(col, j)] * factor;
                    a[(r, j)] -= v;
                }
                for j in 0..x.cols {
                    let v = x[(col, j)] * factor;
                    x[(r, j)] -= v;
                }
            }
        }
        // Back substitution.
        for col in (0..n).rev() {
            let inv = a[(col, col)].inv();
            for j in 0..x.cols {
                x[(col, j)] *= inv;
            }
            for r in 0..col {
                let factor = a[(r, col)];
                if factor == Complex64::ZERO {
                    continue;
                }
                for j in 0..x.cols {
                    let v = x[(col, j)] * factor;
                    x[(r, j)] -= v;
                }
            }
        }
        Ok(x)
    }
}

fn self_swap(m: &mut CMat, a: (usize, usize), b: (usize, usize)) {
    let t = m[a];
    m[a] = m[b];
    m[b] = t;
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a Hermitian positive definite matrix.
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    pub fn factor(&self) -> &CMat {
        &self.l
    }

    /// Solves `(L L^H) x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // Forward: L y = b
        for i in 0..n {
            let row = self.l.row(i);
            let mut acc = x[i];
            for (k, &lik) in row[..i].iter().enumerate() {
                acc -= lik * x[k];
            }
            x[i] = acc / row[i];
        }
        // Backward: L^H x = y, using L^H[i][k] = conj(L[k][i])
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc -= self.l[(k, i)].conj() * x[k];
            }
            x[i] = acc / self.l[(i, i)].conj();
        }
        x
    }

    /// Solves `(L L^H) X = B` where every column of `B` is a right-hand
    /// side. Works row-wise so each substitution step is a contiguous AXPY
    /// over a full row of RHS entries.
    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let mut x = self.forward_solve_mat(b);
        let n = self.l.rows;
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * x.cols);
            let xi = &mut head[i * b.cols..(i + 1) * b.cols];
            for k in i + 1..n {
                let lki = self.l[(k, i)].conj();
                if lki == Complex64::ZERO {
                    continue;
                }
                let xk = &tail[(k - i - 1) * b.cols..(k - i) * b.cols];
                for (o, &v) in xi.iter_mut().zip(xk) {
                    *o -= lki * v;
                }
            }
            let inv = self.l[(i, i)].conj().inv();
            for o in xi.iter_mut() {
                *o *= inv;
            }
        }
        x
    }

    /// Forward substitution only: `L Y = B`. Enough for quadratic forms,
    /// since `B^H (L L^H)^{-1} B = (L^{-1} B)^H (L^{-1} B)`.
    pub fn forward_solve_mat(&self, b: &CMat) -> CMat {
        let n = self.l.rows;
        assert_eq!(b.rows, n);
        let mut x = b.clone();
        for i in 0..n {
            let (head, tail) = x.data.split_at_mut(i * x.cols);
            let xi = &mut tail[..x.cols];
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == Complex64::ZERO {
                    continue;
                }
                let xk = &head[k * b.cols..(k + 1) * b.cols];
                for (o, &v) in xi.iter_mut().zip(xk) {
                    *o -= lik * v;
                }
            }
            let inv = self.l[(i, i)].inv();
            for o in xi.iter_mut() {
                *o *= inv;
            }
        }
        x
    }

    /// Forward substitution for a single right-hand side.
    pub fn forward_solve_vec(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let mut acc = x[i];
            for (k, &lik) in row[..i].iter().enumerate() {
                acc -= lik * x[k];
            }
            x[i] = acc / row[i];
        }
        x
    }

    /// Forward substitution over split planes: `L Y = B` with every
    /// elimination step a pair of contiguous plane AXPYs.
    pub fn forward_solve_split(&self, b: &SplitMat) -> SplitMat {
        let n = self.l.rows;
        assert_eq!(b.rows, n);
        let cols = b.cols;
        let mut x = b.clone();
        for i in 0..n {
            for k in 0..i {
                let l = self.l[(i, k)];
                if l == Complex64::ZERO {
                    continue;
                }
                let (head_re, tail_re) = x.re.split_at_mut(i * cols);
                let (head_im, tail_im) = x.im.split_at_mut(i * cols);
                let xk_re = &head_re[k * cols..(k + 1) * cols];
                let xk_im = &head_im[k * cols..(k + 1) * cols];
                let xi_re = &mut tail_re[..cols];
                let xi_im = &mut tail_im[..cols];
                // x_i -= l * x_k (complex plane AXPY)
                for (((o_r, o_i), &y_r), &y_i) in xi_re
                    .iter_mut()
                    .zip(xi_im.iter_mut())
                    .zip(xk_re)
                    .zip(xk_im)
                {
                    *o_r -= l.re * y_r - l.im * y_i;
                    *o_i -= l.re * y_i + l.im * y_r;
                }
            }
            let inv = self.l[(i, i)].inv();
            let xi_re = &mut x.re[i * cols..(i + 1) * cols];
            let xi_im = &mut x.im[i * cols..(i + 1) * cols];
            for g in 0..cols {
                let (r, im) = (xi_re[g], xi_im[g]);
                xi_re[g] = inv.re * r - inv.im * im;
                xi_im[g] = inv.re * im + inv.im * r;
            }
        }
        x
    }
}

/// Row-major complex matrix stored as separate real and imaginary planes.
/// The estimator hot loops (weighted Gram, forward substitution, column
/// norms) stream much better over split planes than over interleaved
/// `Complex64`.
#[derive(Debug, Clone)]
pub struct SplitMat {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl SplitMat {
    pub fn from_cmat(m: &CMat) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            re: m.data.iter().map(|z| z.re).collect(),
            im: m.data.iter().map(|z| z.im).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row_re(&self, i: usize) -> &[f64] {
        &self.re[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_im(&self, i: usize) -> &[f64] {
        &self.im[i * self.cols..(i + 1) * self.cols]
    }

    /// Hermitian product `self * diag(d) * self^H` (upper triangle computed,
    /// lower mirrored). Row `i` is pre-scaled by the weights once and the
    /// inner reduction runs over eight independent lanes so it vectorizes.
    pub fn weighted_gram(&self, d: &[f64]) -> CMat {
        assert_eq!(self.cols, d.len());
        let m = self.rows;
        let mut out = CMat::zeros(m, m);
        let mut wr = vec![0.0f64; self.cols];
        let mut wi = vec![0.0f64; self.cols];
        for i in 0..m {
            for ((o, &w), &a) in wr.iter_mut().zip(d).zip(self.row_re(i)) {
                *o = w * a;
            }
            for ((o, &w), &a) in wi.iter_mut().zip(d).zip(self.row_im(i)) {
                *o = w * a;
            }
            for j in i..m {
                let (re, im) = conj_dot_planes(&wr, &wi, self.row_re(j), self.row_im(j));
                out[(i, j)] = Complex64::new(re, im);
                if i != j {
                    out[(j, i)] = Complex64::new(re, -im);
                }
            }
        }
        out
    }

    /// Squared column norms.
    pub fn col_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let (r, im) = (self.row_re(i), self.row_im(i));
            for ((o, &a), &b) in out.iter_mut().zip(r).zip(im) {
                *o += a * a + b * b;
            }
        }
        out
    }

    /// `self^H * v` accumulated row by row; both planes stream contiguously.
    pub fn conj_t_mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.rows, v.len());
        let mut out_re = vec![0.0; self.cols];
        let mut out_im = vec![0.0; self.cols];
        for (i, &z) in v.iter().enumerate() {
            let (ar, ai) = (self.row_re(i), self.row_im(i));
            for (((o_r, o_i), &a_r), &a_i) in out_re
                .iter_mut()
                .zip(out_im.iter_mut())
                .zip(ar)
                .zip(ai)
            {
                // conj(a) * z
                *o_r += a_r * z.re + a_i * z.im;
                *o_i += a_r * z.im - a_i * z.re;
            }
        }
        out_re
            .into_iter()
            .zip(out_im)
            .map(|(r, i)| Complex64::new(r, i))
            .collect()
    }
}

/// Lane-parallel `Σ_g (ar + j ai)(br - j bi)` over split planes:
/// returns `(Σ ar·br + ai·bi, Σ ai·br - ar·bi)`.
#[inline]
fn conj_dot_planes(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) -> (f64, f64) {
    const L: usize = 8;
    let n = ar.len();
    let mut re_acc = [0.0f64; L];
    let mut im_acc = [0.0f64; L];
    let iter = ar
        .chunks_exact(L)
        .zip(ai.chunks_exact(L))
        .zip(br.chunks_exact(L).zip(bi.chunks_exact(L)));
    for ((car, cai), (cbr, cbi)) in iter {
        for l in 0..L {
            re_acc[l] += car[l] * cbr[l] + cai[l] * cbi[l];
            im_acc[l] += cai[l] * cbr[l] - car[l] * cbi[l];
        }
    }
    let mut re: f64 = re_acc.iter().sum();
    let mut im: f64 = im_acc.iter().sum();
    for g in n / L * L..n {
        re += ar[g] * br[g] + ai[g] * bi[g];
        im += ai[g] * br[g] - ar[g] * bi[g];
    }
    (re, im)
}

/// `Σ_g a[g] * conj(b[g])`.
#[inline]
pub fn dot_conj_rhs(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let mut re = 0.0;
    let mut im = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    Complex64::new(re, im)
}

/// Draws a standard circularly symmetric complex Gaussian, CN(0, 1).
pub fn complex_gaussian(rng: &mut impl rand::Rng) -> Complex64 {
    use rand_distr::StandardNormal;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng))
    }

    fn assert_close(a: &CMat, b: &CMat, tol: f64) {
        let diff = a.sub(b).frob_norm();
        let scale = b.frob_norm().max(1.0);
        assert!(
            diff / scale < tol,
            "matrices differ: rel err {}",
            diff / scale
        );
    }

    #[test]
    fn matmul_against_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cmat(5, 7, &mut rng);
        let b = random_cmat(7, 3, &mut rng);
        let c = a.mul(&b);
        let naive = CMat::from_fn(5, 3, |i, j| {
            (0..7).map(|k| a[(i, k)] * b[(k, j)]).sum()
        });
        assert_close(&c, &naive, 1e-14);
    }

    #[test]
    fn mul_conj_t_matches_explicit_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cmat(4, 9, &mut rng);
        let b = random_cmat(6, 9, &mut rng);
        assert_close(&a.mul_conj_t(&b), &a.mul(&b.conj_t()), 1e-13);
    }

    #[test]
    fn weighted_gram_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cmat(5, 11, &mut rng);
        let d: Vec<f64> = (0..11).map(|i| 0.1 + i as f64).collect();
        let gram = a.weighted_gram(&d);
        let explicit = a.scale_cols(&d).mul(&a.conj_t());
        assert_close(&gram, &explicit, 1e-13);
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_cmat(8, 12, &mut rng);
        let mut s = a.mul_conj_t(&a); // Hermitian PSD, full rank a.s.
        s.add_diag(0.1);
        let chol = s.cholesky().unwrap();
        let b = random_cmat(8, 5, &mut rng);
        let x = chol.solve_mat(&b);
        assert_close(&s.mul(&x), &b, 1e-11);

        let bv: Vec<Complex64> = b.column(0);
        let xv = chol.solve_vec(&bv);
        for (got, want) in xv.iter().zip(x.column(0)) {
            assert!((got - want).norm() < 1e-11);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = CMat::identity(3);
        m[(1, 1)] = Complex64::new(-2.0, 0.0);
        assert!(matches!(
            m.cholesky(),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn lu_solve_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_cmat(9, 9, &mut rng);
        let b = random_cmat(9, 4, &mut rng);
        let x = a.lu_solve(&b).unwrap();
        assert_close(&a.mul(&x), &b, 1e-11);
    }

    #[test]
    fn lu_solve_flags_singular() {
        let m = CMat::zeros(3, 3);
        assert!(matches!(
            m.lu_solve(&CMat::identity(3)),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn kron_small_case() {
        let a = CMat::from_vec(
            1,
            2,
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)],
        );
        let b = CMat::from_vec(
            2,
            1,
            vec![Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)],
        );
        let k = a.kron(&b);
        assert_eq!((k.rows(), k.cols()), (2, 2));
        assert_eq!(k[(0, 0)], Complex64::new(2.0, 0.0));
        assert_eq!(k[(1, 0)], Complex64::new(3.0, 0.0));
        assert_eq!(k[(0, 1)], Complex64::new(0.0, 2.0));
        assert_eq!(k[(1, 1)], Complex64::new(0.0, 3.0));
    }

    #[test]
    fn complex_gaussian_is_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200_000;
        let mean_sq: f64 = (0..n)
            .map(|_| complex_gaussian(&mut rng).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean_sq - 1.0).abs() < 0.02, "E|z|^2 = {mean_sq}");
    }
}
