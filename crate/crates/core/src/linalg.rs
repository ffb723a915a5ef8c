//! Dense complex matrices plus the small set of factorizations the lab needs:
//! LU solves, Hermitian eigenvalues (Jacobi on the real embedding), and a
//! shifted-QR eigensolver for general complex matrices.

use num_complex::Complex64;
use std::fmt;

pub const ZERO_TOL: f64 = 1e-14;

#[derive(Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            for j in 0..self.cols.min(8) {
                let z = self[(i, j)];
                write!(f, " {:+.3e}{:+.3e}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let conv: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Mat::from_rows(&conv)
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let n = entries.len();
        let mut m = Mat::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, z: Complex64) -> Mat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= z;
        }
        out
    }

    pub fn scale_re(&self, x: f64) -> Mat {
        self.scale(Complex64::new(x, 0.0))
    }

    pub fn neg(&self) -> Mat {
        self.scale_re(-1.0)
    }

    /// Cache-friendly ikj product.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dim mismatch in mul");
        let mut out = Mat::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Max absolute column sum: the exact operator norm l^1 -> l^1.
    pub fn one_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let s: f64 = (0..self.rows).map(|i| self[(i, j)].norm()).sum();
            best = best.max(s);
        }
        best
    }

    /// Max absolute row sum: the exact operator norm l^inf -> l^inf.
    pub fn inf_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.rows {
            let s: f64 = (0..self.cols).map(|j| self[(i, j)].norm()).sum();
            best = best.max(s);
        }
        best
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn block_diag(blocks: &[&Mat]) -> Mat {
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out[(r0 + i, c0 + j)] = b[(i, j)];
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    /// Kronecker product self (x) other.
    pub fn kron(&self, other: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a.norm() == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// LU factorization with partial pivoting; returns None if singular to
    /// working precision.
    pub fn lu(&self) -> Option<Lu> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut piv = k;
            let mut best = a[(k, k)].norm();
            for i in k + 1..n {
                let v = a[(i, k)].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best < 1e-300 {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(piv, j)];
                    a[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                a[(i, k)] = f;
                for j in k + 1..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= f * akj;
                }
            }
        }
        Some(Lu { lu: a, perm, sign })
    }

    pub fn solve(&self, rhs: &Mat) -> Option<Mat> {
        self.lu().map(|f| f.solve(rhs))
    }

    pub fn inverse(&self) -> Option<Mat> {
        self.solve(&Mat::identity(self.rows))
    }

    pub fn det(&self) -> Complex64 {
        match self.lu() {
            None => Complex64::new(0.0, 0.0),
            Some(f) => {
                let mut d = Complex64::new(f.sign, 0.0);
                for i in 0..f.lu.rows {
                    d *= f.lu[(i, i)];
                }
                d
            }
        }
    }

    /// Eigenvalues of a Hermitian matrix (ascending), via Jacobi sweeps on the
    /// real symmetric embedding [[X, -Y], [Y, X]]; each eigenvalue of the
    /// embedding appears twice.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        assert!(self.is_square());
        let n = self.rows;
        if n == 0 {
            return vec![];
        }
        let mut s = vec![vec![0.0f64; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                let z = self[(i, j)];
                s[i][j] = z.re;
                s[i + n][j + n] = z.re;
                s[i][j + n] = -z.im;
                s[i + n][j] = z.im;
            }
        }
        let mut eig = jacobi_symmetric(&mut s);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // keep every other one (doubled spectrum)
        eig.into_iter().step_by(2).collect()
    }

    /// Largest singular value, exact up to Jacobi convergence (~1e-12 rel).
    pub fn sigma_max(&self) -> f64 {
        let g = self.adjoint().mul(self);
        let eig = g.hermitian_eigenvalues();
        eig.last().copied().unwrap_or(0.0).max(0.0).sqrt()
    }

    /// All singular values, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        let g = if self.rows >= self.cols {
            self.adjoint().mul(self)
        } else {
            self.mul(&self.adjoint())
        };
        let mut sv: Vec<f64> = g
            .hermitian_eigenvalues()
            .into_iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv
    }

    /// Number of singular values above tol * sigma_max (and above an absolute
    /// floor), i.e. numerical rank.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let sv = self.singular_values();
        let top = sv.first().copied().unwrap_or(0.0);
        let cut = (tol * top).max(1e-10);
        sv.iter().filter(|&&s| s > cut).count()
    }

    /// Eigenvalues of a general complex square matrix via Hessenberg reduction
    /// and shifted QR with Givens rotations.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        assert!(self.is_square());
        let n = self.rows;
        if n == 0 {
            return vec![];
        }
        if n == 1 {
            return vec![self[(0, 0)]];
        }
        let mut h = hessenberg(self);
        let scale = h.max_abs().max(1e-300);
        let mut eigs = Vec::with_capacity(n);
        let mut hi = n; // active block is 0..hi
        let mut iter_guard = 0usize;
        let mut stagnation = 0usize; // iterations since the last deflation
        while hi > 0 {
            iter_guard += 1;
            assert!(iter_guard < 200 * n, "QR iteration failed to converge");
            // deflate; the floor at the matrix scale lets blocks of (near-)
            // zero eigenvalues converge, and long stagnation relaxes the
            // threshold (subdiagonals of clustered spectra can freeze a few
            // ulps above any fixed cutoff)
            let relax = 10f64.powi((stagnation / 40) as i32).min(1e4);
            let mut lo = hi - 1;
            while lo > 0 {
                let off = h[(lo, lo - 1)].norm();
                let d = (h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm()).max(scale);
                if off <= 1e-14 * relax * d {
                    h[(lo, lo - 1)] = Complex64::new(0.0, 0.0);
                    break;
                }
                lo -= 1;
            }
            if lo == hi - 1 {
                eigs.push(h[(hi - 1, hi - 1)]);
                hi -= 1;
                stagnation = 0;
                continue;
            }
            // Wilkinson shift from trailing 2x2 of active block
            let a = h[(hi - 2, hi - 2)];
            let b = h[(hi - 2, hi - 1)];
            let c = h[(hi - 1, hi - 2)];
            let d = h[(hi - 1, hi - 1)];
            let tr = a + d;
            let det = a * d - b * c;
            let disc = (tr * tr - det.scale(4.0)).sqrt();
            let l1 = (tr + disc).scale(0.5);
            let l2 = (tr - disc).scale(0.5);
            if lo == hi - 2 {
                // a 2x2 active block is solved exactly; iterating cannot
                // separate equal eigenvalues
                eigs.push(l1);
                eigs.push(l2);
                hi -= 2;
                stagnation = 0;
                continue;
            }
            let mut shift = if (l1 - d).norm() < (l2 - d).norm() { l1 } else { l2 };
            stagnation += 1;
            if stagnation % 12 == 0 {
                // exceptional shift breaks symmetric stalls (e.g. repeated
                // eigenvalues of projections)
                let mag = h[(hi - 1, hi - 2)].norm() + d.norm() + 1e-30;
                shift = d + Complex64::new(0.75 * mag, 0.2 * mag);
            }
            qr_step(&mut h, lo, hi, shift);
        }
        eigs
    }

    /// Eigen-decomposition for diagonalizable matrices: eigenvalues plus an
    /// eigenvector matrix V (columns), found by inverse iteration. Returns
    /// (eigenvalues, V, cond estimate of V in the 2-norm).
    pub fn eigen_decomposition(&self) -> Option<(Vec<Complex64>, Mat, f64)> {
        let n = self.rows;
        let eigs = self.eigenvalues();
        let mut v = Mat::zeros(n, n);
        for (k, &lam) in eigs.iter().enumerate() {
            let vec = inverse_iteration(self, lam)?;
            for i in 0..n {
                v[(i, k)] = vec[i];
            }
        }
        let sv = v.singular_values();
        let smin = sv.last().copied().unwrap_or(0.0);
        if smin <= 0.0 {
            return None;
        }
        let cond = sv[0] / smin;
        Some((eigs, v, cond))
    }

    /// Spectral projection onto the eigenvalues selected by `select`, computed
    /// from the eigen-decomposition. Independent oracle for contour methods.
    pub fn eigenprojection(&self, select: impl Fn(Complex64) -> bool) -> Option<Mat> {
        let (eigs, v, _cond) = self.eigen_decomposition()?;
        let vinv = v.inverse()?;
        let sel = Mat::diag(
            &eigs
                .iter()
                .map(|&l| {
                    if select(l) {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect::<Vec<_>>(),
        );
        Some(v.mul(&sel).mul(&vinv))
    }

    /// Spectral projection onto the part of the spectrum near 1, for a
    /// quasi-idempotent matrix (spectrum clustered near {0, 1}): Newton
    /// iteration p <- 3p^2 - 2p^3, quadratically convergent. Robust under
    /// repeated eigenvalues, unlike the eigen-decomposition route.
    pub fn idempotent_newton(&self) -> Option<Mat> {
        let mut p = self.clone();
        for _ in 0..60 {
            let p2 = p.mul(&p);
            let resid = p2.sub(&p).max_abs();
            if resid < 1e-14 {
                return Some(p);
            }
            // 3p^2 - 2p^3
            p = p2.scale(Complex64::new(3.0, 0.0)).sub(&p2.mul(&p).scale(Complex64::new(2.0, 0.0)));
            if !p.max_abs().is_finite() {
                return None;
            }
        }
        None
    }
}

pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn solve(&self, rhs: &Mat) -> Mat {
        let n = self.lu.rows;
        assert_eq!(rhs.rows, n);
        let m = rhs.cols;
        let mut x = Mat::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                x[(i, j)] = rhs[(self.perm[i], j)];
            }
        }
        // forward
        for i in 0..n {
            for k in 0..i {
                let f = self.lu[(i, k)];
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] -= f * v;
                }
            }
        }
        // backward
        for i in (0..n).rev() {
            for k in i + 1..n {
                let f = self.lu[(i, k)];
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] -= f * v;
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        x
    }
}

/// Cyclic Jacobi on a real symmetric matrix; returns eigenvalues.
fn jacobi_symmetric(a: &mut Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Reduce to upper Hessenberg form by complex Householder reflections.
fn hessenberg(a: &Mat) -> Mat {
    let n = a.rows;
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        // build reflector for column k below the subdiagonal
        let mut x: Vec<Complex64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let norm_x = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm_x < 1e-300 {
            continue;
        }
        let x0 = x[0];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { Complex64::new(1.0, 0.0) };
        let alpha = -phase * norm_x;
        x[0] -= alpha;
        let vnorm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm < 1e-300 {
            continue;
        }
        for z in x.iter_mut() {
            *z /= vnorm;
        }
        // H = I - 2 v v*, apply left and right on the trailing block
        let m = n - k - 1;
        // left: rows k+1..n
        for j in 0..n {
            let mut dot = Complex64::new(0.0, 0.0);
            for i in 0..m {
                dot += x[i].conj() * h[(k + 1 + i, j)];
            }
            dot *= 2.0;
            for i in 0..m {
                let xi = x[i];
                h[(k + 1 + i, j)] -= xi * dot;
            }
        }
        // right: cols k+1..n
        for i in 0..n {
            let mut dot = Complex64::new(0.0, 0.0);
            for j in 0..m {
                dot += h[(i, k + 1 + j)] * x[j];
            }
            dot *= 2.0;
            for j in 0..m {
                let xj = x[j].conj();
                h[(i, k + 1 + j)] -= dot * xj;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = Complex64::new(0.0, 0.0);
        }
    }
    h
}

/// One shifted QR step with Givens rotations on the active Hessenberg block.
fn qr_step(h: &mut Mat, lo: usize, hi: usize, shift: Complex64) {
    let n = h.rows;
    let m = hi - lo;
    if m < 2 {
        return;
    }
    let mut rot: Vec<(Complex64, Complex64)> = Vec::with_capacity(m - 1);
    for i in lo..hi {
        h[(i, i)] -= shift;
    }
    // QR by Givens on subdiagonals
    for i in lo..hi - 1 {
        let a = h[(i, i)];
        let b = h[(i + 1, i)];
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (c, s) = if r < 1e-300 {
            (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
        } else {
            (a / r, b / r)
        };
        rot.push((c, s));
        for j in i..n {
            let hij = h[(i, j)];
            let h1j = h[(i + 1, j)];
            h[(i, j)] = c.conj() * hij + s.conj() * h1j;
            h[(i + 1, j)] = -s * hij + c * h1j;
        }
    }
    // RQ: apply rotations on the right
    for (idx, &(c, s)) in rot.iter().enumerate() {
        let i = lo + idx;
        for k in 0..(i + 2).min(n) {
            let hki = h[(k, i)];
            let hk1 = h[(k, i + 1)];
            h[(k, i)] = hki * c + hk1 * s;
            h[(k, i + 1)] = -hki * s.conj() + hk1 * c.conj();
        }
    }
    for i in lo..hi {
        h[(i, i)] += shift;
    }
}

/// A few steps of inverse iteration at the given (approximate) eigenvalue.
fn inverse_iteration(a: &Mat, lam: Complex64) -> Option<Vec<Complex64>> {
    let n = a.rows;
    let scale = a.max_abs().max(1.0);
    // tiny deterministic perturbation keeps the shifted matrix invertible
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= lam + Complex64::new(1e-12 * scale, 1e-13 * scale);
    }
    let lu = match shifted.lu() {
        Some(f) => f,
        None => {
            for i in 0..n {
                shifted[(i, i)] -= Complex64::new(1e-8 * scale, 0.0);
            }
            shifted.lu()?
        }
    };
    // deterministic pseudo-random start
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| {
            let x = ((i as f64 + 1.0) * 0.754877666).fract() - 0.5;
            let y = ((i as f64 + 1.0) * 0.569840290).fract() - 0.5;
            Complex64::new(x + 0.3, y)
        })
        .collect();
    for _ in 0..4 {
        let rhs = Mat { rows: n, cols: 1, data: v.clone() };
        let sol = lu.solve(&rhs);
        let nrm = sol.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm < 1e-300 {
            return None;
        }
        v = sol.data.iter().map(|z| z / nrm).collect();
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn lu_solve_roundtrip() {
        let a = Mat::from_real_rows(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let inv = a.inverse().unwrap();
        let id = a.mul(&inv);
        assert!(id.sub(&Mat::identity(3)).max_abs() < 1e-12);
    }

    #[test]
    fn sigma_max_matches_gram_characteristic_polynomial() {
        // oracle: for [[1,2],[3,4]], Gram eigenvalues are 15 +- sqrt(221)
        let a = Mat::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let expected = ((15.0 + 221.0f64.sqrt()) as f64).sqrt();
        assert!((a.sigma_max() - expected).abs() < 1e-12);
        assert!((a.sigma_max() - 5.464985704219043).abs() < 1e-10);
    }

    #[test]
    fn hermitian_eigen_complex() {
        let a = Mat::from_rows(&[
            vec![c(2.0, 0.0), c(0.0, 1.0)],
            vec![c(0.0, -1.0), c(2.0, 0.0)],
        ]);
        let e = a.hermitian_eigenvalues();
        assert!((e[0] - 1.0).abs() < 1e-10);
        assert!((e[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // companion-style matrix with eigenvalues 1, 2, 3
        let a = Mat::from_real_rows(&[
            vec![6.0, -11.0, 6.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let mut e: Vec<f64> = a.eigenvalues().iter().map(|z| z.re).collect();
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((e[0] - 1.0).abs() < 1e-8);
        assert!((e[1] - 2.0).abs() < 1e-8);
        assert!((e[2] - 3.0).abs() < 1e-8);
        for z in a.eigenvalues() {
            assert!(z.im.abs() < 1e-8);
        }
    }

    #[test]
    fn eigenvalues_complex_rotation() {
        // [[0,-1],[1,0]] has eigenvalues +-i
        let a = Mat::from_real_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]);
        let mut e = a.eigenvalues();
        e.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());
        assert!((e[0] - c(0.0, -1.0)).norm() < 1e-10);
        assert!((e[1] - c(0.0, 1.0)).norm() < 1e-10);
    }

    #[test]
    fn eigenprojection_of_perturbed_idempotent() {
        // diag(1, 0.04): projection onto eigenvalues near 1 is diag(1, 0)
        let a = Mat::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.04]]);
        let p = a.eigenprojection(|l| (l - c(1.0, 0.0)).norm() < 0.5).unwrap();
        let expect = Mat::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(p.sub(&expect).max_abs() < 1e-9);
    }

    #[test]
    fn eigen_random_similarity() {
        // conjugate a known diagonal by a fixed invertible matrix
        let s = Mat::from_real_rows(&[
            vec![1.0, 0.3, 0.0],
            vec![0.2, 1.0, 0.4],
            vec![0.1, 0.0, 1.0],
        ]);
        let d = Mat::diag(&[c(0.5, 0.2), c(-1.0, 0.0), c(2.0, -0.3)]);
        let a = s.mul(&d).mul(&s.inverse().unwrap());
        let mut eigs = a.eigenvalues();
        eigs.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        let mut expect = vec![c(0.5, 0.2), c(-1.0, 0.0), c(2.0, -0.3)];
        expect.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        for (got, want) in eigs.iter().zip(expect.iter()) {
            assert!((got - want).norm() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn rank_of_truncated_shift() {
        // 5x5 nilpotent shift has rank 4
        let mut a = Mat::zeros(5, 5);
        for i in 0..4 {
            a[(i, i + 1)] = c(1.0, 0.0);
        }
        assert_eq!(a.numerical_rank(1e-8), 4);
    }
}
