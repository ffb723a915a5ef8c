//! Certified l^p -> l^p operator norm intervals.
//!
//! p = 1 and p = inf are exact column/row sums; p = 2 is the largest singular
//! value; for other p the interval is [best Boyd power-iteration value,
//! min(Riesz-Thorin interpolation bound, per-diagonal sup sum)].

use crate::algebra::{AlgebraInstance, AlgebraKind, ElemData, FilteredElement, PExp};
use crate::linalg::Mat;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Margin required to certify a strict inequality from interval data.
pub const STRICT_MARGIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormInterval {
    pub lower: f64,
    pub upper: f64,
}

impl NormInterval {
    pub fn exact(v: f64) -> Self {
        NormInterval { lower: v, upper: v }
    }

    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(lower <= upper + 1e-15, "inverted interval {lower} > {upper}");
        NormInterval { lower: lower.min(upper), upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Certified strict "< bound" (uses the upper end plus margin).
    pub fn certifies_lt(&self, bound: f64) -> bool {
        self.upper + STRICT_MARGIN <= bound
    }

    /// Certified "<= bound".
    pub fn certifies_le(&self, bound: f64) -> bool {
        self.upper <= bound + STRICT_MARGIN
    }

    pub fn max(&self, other: &NormInterval) -> NormInterval {
        NormInterval { lower: self.lower.max(other.lower), upper: self.upper.max(other.upper) }
    }

    pub fn add(&self, other: &NormInterval) -> NormInterval {
        NormInterval { lower: 0.0, upper: self.upper + other.upper }
    }

    pub fn widen(&self, slack: f64) -> NormInterval {
        NormInterval { lower: (self.lower - slack).max(0.0), upper: self.upper + slack }
    }
}

fn lp_norm(v: &[Complex64], p: PExp) -> f64 {
    match p {
        PExp::Inf => v.iter().map(|z| z.norm()).fold(0.0, f64::max),
        PExp::Finite(p) => v.iter().map(|z| z.norm().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}

/// Boyd power iteration lower bound for ||A||_{p->p}, one start.
fn boyd_lower(a: &Mat, p: f64, start: &[Complex64], iters: usize) -> f64 {
    let q = p / (p - 1.0);
    let at = a.adjoint();
    let mut x: Vec<Complex64> = start.to_vec();
    let nx = lp_norm(&x, PExp::Finite(p));
    if nx < 1e-300 {
        return 0.0;
    }
    for z in x.iter_mut() {
        *z /= nx;
    }
    let mut best = 0.0f64;
    let dual = |v: &[Complex64], expo: f64| -> Vec<Complex64> {
        v.iter()
            .map(|z| {
                let r = z.norm();
                if r < 1e-300 {
                    Complex64::new(0.0, 0.0)
                } else {
                    (z / r) * r.powf(expo - 1.0)
                }
            })
            .collect()
    };
    for _ in 0..iters {
        let y = a.mul(&Mat { rows: x.len(), cols: 1, data: x.clone() }).data;
        let gamma = lp_norm(&y, PExp::Finite(p));
        best = best.max(gamma);
        if gamma < 1e-300 {
            break;
        }
        // dual ascent step
        let z = dual(&y, p);
        let w = at.mul(&Mat { rows: z.len(), cols: 1, data: z }).data;
        let mut xn = dual(&w, q);
        let nn = lp_norm(&xn, PExp::Finite(p));
        if nn < 1e-300 {
            break;
        }
        for v in xn.iter_mut() {
            *v /= nn;
        }
        x = xn;
    }
    best
}

/// Sum of per-diagonal sups; a valid upper bound for every p (each shifted
/// diagonal operator has norm = its sup).
fn diag_sum_upper(a: &Mat) -> f64 {
    let n = a.rows.max(a.cols);
    let mut total = 0.0;
    for d in -(a.rows as i64 - 1)..(a.cols as i64) {
        let mut sup = 0.0f64;
        for i in 0..a.rows as i64 {
            let j = i + d;
            if j >= 0 && j < a.cols as i64 {
                sup = sup.max(a[(i as usize, j as usize)].norm());
            }
        }
        total += sup;
    }
    let _ = n;
    total
}

pub fn op_norm(m: &Mat, p: PExp) -> NormInterval {
    op_norm_seeded(m, p, 0x9e3779b97f4a7c15)
}

pub fn op_norm_seeded(m: &Mat, p: PExp, seed: u64) -> NormInterval {
    assert!(p.is_valid(), "invalid p");
    match p {
        PExp::Finite(pv) if pv == 1.0 => NormInterval::exact(m.one_norm()),
        PExp::Inf => NormInterval::exact(m.inf_norm()),
        PExp::Finite(pv) if pv == 2.0 => NormInterval::exact(m.sigma_max()),
        PExp::Finite(pv) => {
            // upper: Riesz-Thorin between 1 and inf, and banded diagonal sum
            let rt = m.one_norm().powf(1.0 / pv) * m.inf_norm().powf(1.0 - 1.0 / pv);
            let upper = rt.min(diag_sum_upper(m));
            // lower: Boyd from 8 seeded Gaussian starts + p-dual extremal of
            // the p=2 maximizer
            let n = m.cols;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lower = 0.0f64;
            for _ in 0..8 {
                let start: Vec<Complex64> = (0..n)
                    .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect();
                lower = lower.max(boyd_lower(m, pv, &start, 64));
            }
            // p=2 right singular vector via power iteration on A^H A
            let g = m.adjoint().mul(m);
            let mut v: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.19).cos()))
                .collect();
            for _ in 0..100 {
                let w = g.mul(&Mat { rows: n, cols: 1, data: v.clone() }).data;
                let nn = lp_norm(&w, PExp::TWO);
                if nn < 1e-300 {
                    break;
                }
                v = w.into_iter().map(|z| z / nn).collect();
            }
            lower = lower.max(boyd_lower(m, pv, &v, 64));
            // p-dual extremal map of the p=2 solution: |v|^{2/p} phases
            let vdual: Vec<Complex64> = v
                .iter()
                .map(|z| {
                    let r = z.norm();
                    if r < 1e-300 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        (z / r) * r.powf(2.0 / pv)
                    }
                })
                .collect();
            lower = lower.max(boyd_lower(m, pv, &vdual, 64));
            NormInterval::new(lower.min(upper), upper)
        }
    }
}

/// Best Boyd lower bound over 8 seeded Gaussian starts. Exposed so suites can
/// compare the iteration against the exact p = 2 (SVD) value.
pub fn boyd_estimate(m: &Mat, p: f64, seed: u64, iters: usize) -> f64 {
    let n = m.cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = 0.0f64;
    for _ in 0..8 {
        let start: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        lower = lower.max(boyd_lower(m, p, &start, iters));
    }
    lower
}

/// Norm interval for a filtered element, dispatched per instance kind.
pub fn op_norm_element(x: &FilteredElement) -> NormInterval {
    norm_of_data(&x.algebra, x.blocks, &x.data)
}

fn norm_of_data(alg: &AlgebraInstance, blocks: usize, data: &ElemData) -> NormInterval {
    match data {
        ElemData::Dense { mat, .. } => op_norm(mat, alg.p),
        ElemData::Band(b) => {
            // upper: sum over symbol diagonals of the coefficient-matrix norm
            // plus the correction norm (the shift is an l^p contraction)
            let mut upper = 0.0;
            for m in b.diags.values() {
                upper += op_norm(m, alg.p).upper;
            }
            if let Some((_, c)) = &b.correction {
                upper += op_norm(c, alg.p).upper;
            }
            // lower: dense truncation with margin
            let band = b.diags.keys().map(|d| d.abs()).max().unwrap_or(0) as usize;
            let window = b.correction.as_ref().map(|(w, _)| *w).unwrap_or(0);
            let m = band + window + 64;
            let el = FilteredElement {
                algebra: alg.clone(),
                blocks,
                data: ElemData::Band(b.clone()),
                propagation: 0.0,
            };
            let tr = el.band_truncation(m);
            let lower = op_norm(&tr, alg.p).lower;
            NormInterval::new(lower.min(upper), upper)
        }
        ElemData::Path { samples, lipschitz } => {
            let base = match &alg.kind {
                AlgebraKind::PathAlgebra { base, .. } => base,
                _ => unreachable!(),
            };
            let mut iv = NormInterval::exact(0.0);
            for s in samples {
                iv = iv.max(&norm_of_data(base, blocks, s));
            }
            // sup over the continuum: widen the upper end by L*delta/2
            let delta = if samples.len() > 1 { 1.0 / (samples.len() as f64 - 1.0) } else { 0.0 };
            NormInterval::new(iv.lower, iv.upper + lipschitz * delta / 2.0)
        }
    }
}

/// Norm of x - y as elements.
pub fn distance(x: &FilteredElement, y: &FilteredElement) -> NormInterval {
    op_norm_element(&x.sub(y))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AxiomReport {
    pub trials: usize,
    pub d_inf_violations: usize,
    pub m_p_violations: usize,
    pub max_d_inf_defect: f64,
    pub max_m_p_defect: f64,
}

impl AxiomReport {
    pub fn clean(&self) -> bool {
        self.d_inf_violations == 0 && self.m_p_violations == 0
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
        }
    }
    m
}

/// Randomized check of the p-operator-space axioms: block-diagonal norms are
/// maxima (D_inf) and scalar amplifications contract (M_p).
pub fn check_axioms(p: PExp, trials: usize, seed: u64, max_size: usize) -> AxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AxiomReport {
        trials,
        d_inf_violations: 0,
        m_p_violations: 0,
        max_d_inf_defect: 0.0,
        max_m_p_defect: 0.0,
    };
    let exact = matches!(p, PExp::Inf) || matches!(p, PExp::Finite(v) if v == 1.0 || v == 2.0);
    for _ in 0..trials {
        let n = rng.gen_range(1..=max_size);
        let m = rng.gen_range(1..=max_size);
        let u = random_matrix(&mut rng, n, n);
        let v = random_matrix(&mut rng, m, m);
        let d = Mat::block_diag(&[&u, &v]);
        let lhs = op_norm(&d, p);
        let rhs = op_norm(&u, p).max(&op_norm(&v, p));
        // violation = interval-certified failure in either direction
        let tol = if exact { 1e-9 } else { 0.0 };
        if lhs.lower > rhs.upper + tol || rhs.lower > lhs.upper + tol {
            report.d_inf_violations += 1;
        }
        report.max_d_inf_defect = report
            .max_d_inf_defect
            .max((lhs.lower - rhs.upper).max(rhs.lower - lhs.upper).max(0.0));

        // M_p: ||(alpha (x) I) u (beta (x) I)|| <= ||alpha||_p ||u|| ||beta||_p
        let k = rng.gen_range(1..=max_size.min(4));
        let inner = rng.gen_range(1..=max_size.min(4));
        let uu = random_matrix(&mut rng, k * inner, k * inner);
        let alpha = random_matrix(&mut rng, k, k);
        let beta = random_matrix(&mut rng, k, k);
        let eye = Mat::identity(inner);
        let big = alpha.kron(&eye).mul(&uu).mul(&beta.kron(&eye));
        let lhs2 = op_norm(&big, p);
        let rhs2 =
            op_norm(&alpha, p).upper * op_norm(&uu, p).upper * op_norm(&beta, p).upper;
        if lhs2.lower > rhs2 + 1e-9 {
            report.m_p_violations += 1;
        }
        report.max_m_p_defect = report.max_m_p_defect.max((lhs2.lower - rhs2).max(0.0));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{make_element, ElementInput};

    #[test]
    fn exact_norms_small_matrix() {
        let a = Mat::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(op_norm(&a, PExp::ONE), NormInterval::exact(6.0));
        assert_eq!(op_norm(&a, PExp::Inf), NormInterval::exact(7.0));
        let two = op_norm(&a, PExp::TWO);
        // frozen oracle value: sqrt(15 + sqrt(221))
        assert!((two.upper - 5.464985704219043).abs() < 1e-9);
        assert!(two.width() <= 1e-9 * two.upper.max(1.0));
    }

    #[test]
    fn diagonal_matrix_any_p() {
        let d = Mat::diag(&[
            Complex64::new(0.3, 0.0),
            Complex64::new(-2.0, 1.0),
            Complex64::new(0.0, 0.9),
        ]);
        let expect = (5.0f64).sqrt();
        for p in [PExp::ONE, PExp::TWO, PExp::Inf, PExp::Finite(1.7), PExp::Finite(3.0)] {
            let iv = op_norm(&d, p);
            assert!(iv.lower <= expect + 1e-9 && expect <= iv.upper + 1e-9, "{p:?} {iv:?}");
            if let PExp::Finite(pv) = p {
                if pv != 1.0 && pv != 2.0 {
                    // diag-sum upper bound is exact for diagonal operators
                    assert!((iv.upper - expect).abs() < 1e-12);
                    assert!(iv.lower > expect - 1e-6);
                }
            }
        }
    }

    #[test]
    fn general_p_interval_contains_exact_on_special_p() {
        // check interval soundness of the generic path against exact values
        let a = Mat::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        // generic path at p=2 equivalent computation: compare the Boyd lower
        let iv = {
            // force the generic branch by using p=2.0000001
            op_norm(&a, PExp::Finite(2.0000001))
        };
        let exact = a.sigma_max();
        assert!(iv.lower <= exact + 1e-4);
        assert!(iv.upper >= exact - 1e-4);
        assert!(iv.lower >= exact - 5e-3, "Boyd lower too loose: {} vs {exact}", iv.lower);
    }

    #[test]
    fn toeplitz_element_norms() {
        let alg = AlgebraInstance::toeplitz(1, 2, PExp::TWO);
        let shift = make_element(
            &alg,
            1,
            ElementInput::Band { diags: vec![(1, Mat::identity(1))], correction: None },
        )
        .unwrap();
        let iv = op_norm_element(&shift);
        assert!(iv.lower <= 1.0 + 1e-9 && 1.0 <= iv.upper + 1e-9);
        assert!(iv.width() <= 1e-9 + 1e-9);

        // z + z^{-1} at p = 2: the interval must contain 2
        let cosx2 = make_element(
            &alg,
            1,
            ElementInput::Band {
                diags: vec![(1, Mat::identity(1)), (-1, Mat::identity(1))],
                correction: None,
            },
        )
        .unwrap();
        let iv = op_norm_element(&cosx2);
        assert!(iv.lower <= 2.0 && 2.0 <= iv.upper);
        assert!(iv.upper <= 2.0 + 1e-12);
        assert!(iv.lower >= 2.0 - 1e-2);
    }

    #[test]
    fn path_element_norm_is_sample_sup() {
        let base = AlgebraInstance::interval_roe(2, PExp::Inf);
        let alg = AlgebraInstance::path(base, 5, true);
        let samples: Vec<Mat> = (0..5)
            .map(|i| Mat::diag(&[Complex64::new(i as f64 / 4.0, 0.0), Complex64::new(0.0, 0.0)]))
            .collect();
        let x = make_element(&alg, 1, ElementInput::PathSamples { samples, lipschitz: 1.0 })
            .unwrap();
        let iv = op_norm_element(&x);
        assert!(iv.lower >= 1.0 - 1e-12);
        assert!(iv.upper <= 1.0 + 1.0 * 0.25 / 2.0 + 1e-12);
    }

    #[test]
    fn axioms_hold_on_random_trials() {
        for p in [PExp::ONE, PExp::TWO, PExp::Inf] {
            let rep = check_axioms(p, 100, 7, 6);
            assert!(rep.clean(), "{p:?}: {rep:?}");
        }
    }

    #[test]
    fn submultiplicative_exact_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            for p in [PExp::ONE, PExp::TWO, PExp::Inf] {
                let ab = op_norm(&a.mul(&b), p).lower;
                let bound = op_norm(&a, p).upper * op_norm(&b, p).upper;
                assert!(ab <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn monotone_widening() {
        let a = Mat::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mut b = a.clone();
        for z in b.data.iter_mut() {
            *z += Complex64::new(0.01, 0.0);
        }
        for p in [PExp::ONE, PExp::TWO, PExp::Inf, PExp::Finite(3.0)] {
            assert!(op_norm(&b, p).upper >= op_norm(&a, p).upper - 1e-12);
        }
    }
}
