//! Hilbert-space (p = 2) bridge: converting certified idempotents into
//! self-adjoint quasi-projections and certified invertibles into
//! quasi-unitaries via certified Chebyshev functional calculus, with the
//! connecting homotopies and incurred control recorded.

use num_complex::Complex64;

use crate::algebra::{FilteredElement, PExp};
use crate::extensions::{dense_parts, ident};
use crate::funcalc::kappa0;
use crate::kclasses::{ControlPair, CtrlExpr};
use crate::pnorm::{distance, op_norm_element};
use crate::quasi::{
    certify_idempotent, measured_lipschitz, promote, sample_ts, HomotopyPath, InversePair,
    PathKind, QCertificate, QuasiError, CERT_MARGIN,
};

#[derive(Debug, thiserror::Error)]
pub enum CStarError {
    #[error("polynomial degree cap {cap} exceeded for tolerance {tol}")]
    DegreeCap { cap: usize, tol: f64 },
    #[error("operation requires a p = 2 instance")]
    NotHilbert,
    #[error("quasi-certificate failure: {0}")]
    Quasi(#[from] QuasiError),
    #[error("functional calculus failure: {0}")]
    Funcalc(#[from] crate::funcalc::FuncalcError),
}

pub type Result<T> = std::result::Result<T, CStarError>;

pub const DEGREE_CAP: usize = 1024;
const GRID: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolyTarget {
    /// (t + 1)^{1/2}
    SqrtShift,
    /// (t + 1)^{-1/2}
    InvSqrtShift,
    /// t^{-1/2}
    InvSqrt,
}

impl PolyTarget {
    fn eval(self, t: f64) -> f64 {
        match self {
            PolyTarget::SqrtShift => (t + 1.0).sqrt(),
            PolyTarget::InvSqrtShift => 1.0 / (t + 1.0).sqrt(),
            PolyTarget::InvSqrt => 1.0 / t.sqrt(),
        }
    }

    /// Upper bound for |f'| on [a, b].
    fn deriv_bound(self, a: f64, _b: f64) -> f64 {
        match self {
            PolyTarget::SqrtShift => 0.5 / (a + 1.0).sqrt(),
            PolyTarget::InvSqrtShift => 0.5 / (a + 1.0).powf(1.5),
            PolyTarget::InvSqrt => 0.5 / a.powf(1.5),
        }
    }
}

/// Chebyshev-series approximation with a certified sup error on its
/// interval: a dense-grid maximum widened by a derivative-based bound for
/// the gaps between grid points.
#[derive(Clone, Debug)]
pub struct PolyApprox {
    /// coefficients in the Chebyshev basis of the mapped interval;
    /// p(t) = c0 + sum c_j T_j(s), s the affine pullback of t to [-1, 1]
    pub coeffs: Vec<f64>,
    pub interval: (f64, f64),
    pub target: PolyTarget,
    pub sup_error: f64,
    pub degree: usize,
}

impl PolyApprox {
    fn fit(target: PolyTarget, a: f64, b: f64, degree: usize) -> PolyApprox {
        let n = degree + 1;
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let theta = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
            let s = theta.cos();
            let t = 0.5 * (b - a) * s + 0.5 * (a + b);
            vals.push(target.eval(t));
        }
        let mut coeffs = Vec::with_capacity(n);
        for j in 0..n {
            let mut c = 0.0;
            for (k, v) in vals.iter().enumerate() {
                c += v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos();
            }
            c *= 2.0 / n as f64;
            if j == 0 {
                c *= 0.5;
            }
            coeffs.push(c);
        }
        let mut out = PolyApprox {
            coeffs,
            interval: (a, b),
            target,
            sup_error: f64::INFINITY,
            degree,
        };
        out.sup_error = out.certify();
        out
    }

    /// Build the lowest doubling degree meeting tol, up to the cap.
    pub fn build(target: PolyTarget, a: f64, b: f64, tol: f64) -> Result<PolyApprox> {
        let mut degree = 8;
        loop {
            let p = PolyApprox::fit(target, a, b, degree);
            if p.sup_error < tol {
                return Ok(p);
            }
            if degree >= DEGREE_CAP {
                return Err(CStarError::DegreeCap { cap: DEGREE_CAP, tol });
            }
            degree *= 2;
        }
    }

    pub fn eval_scalar(&self, t: f64) -> f64 {
        let (a, b) = self.interval;
        let s = (2.0 * t - (a + b)) / (b - a);
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = c + 2.0 * s * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs[0] + s * b1 - b2
    }

    fn deriv_scalar(&self, t: f64) -> f64 {
        let h = (self.interval.1 - self.interval.0) / 1e7;
        (self.eval_scalar(t + h) - self.eval_scalar(t - h)) / (2.0 * h)
    }

    /// Certified sup error: dense-grid maximum plus a gap term from the
    /// grid maximum of the error function's derivative (widened) with the
    /// target's own derivative bound as a cross-check cap.
    fn certify(&self) -> f64 {
        let (a, b) = self.interval;
        let gap = (b - a) / (GRID - 1) as f64;
        let h = gap / 16.0;
        let err = |t: f64| self.target.eval(t) - self.eval_scalar(t);
        let mut max_err: f64 = 0.0;
        let mut max_err_deriv: f64 = 0.0;
        for i in 0..GRID {
            let t = (a + gap * i as f64).clamp(a + h, b - h);
            max_err = max_err.max(err(t).abs());
            max_err_deriv = max_err_deriv.max(((err(t + h) - err(t - h)) / (2.0 * h)).abs());
        }
        let deriv_cap = self.target.deriv_bound(a, b) + 1.05 * self.grid_deriv_max();
        max_err + 0.5 * gap * (1.5 * max_err_deriv).min(deriv_cap)
    }

    fn grid_deriv_max(&self) -> f64 {
        let (a, b) = self.interval;
        let gap = (b - a) / 255.0;
        let mut m: f64 = 0.0;
        for i in 0..256 {
            let t = (a + gap * i as f64).clamp(a + gap / 8.0, b - gap / 8.0);
            m = m.max(self.deriv_scalar(t).abs());
        }
        m
    }

    /// Rescale so the polynomial takes the value 1 at the given point
    /// exactly, re-certifying the sup error afterwards.
    pub fn normalize_at(&mut self, t: f64) {
        let v = self.eval_scalar(t);
        for c in &mut self.coeffs {
            *c /= v;
        }
        self.sup_error = self.certify();
    }

    /// Clenshaw evaluation on an algebra element (unitization supplies the
    /// constant term).
    pub fn eval_element(&self, x: &FilteredElement) -> FilteredElement {
        let xp = promote(x);
        let one = ident(&x.algebra, x.blocks);
        let (a, b) = self.interval;
        let s = xp
            .scale(Complex64::new(2.0 / (b - a), 0.0))
            .sub(&one.scale(Complex64::new((a + b) / (b - a), 0.0)));
        let mut b1 = one.scale(Complex64::new(0.0, 0.0));
        let mut b2 = b1.clone();
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = s
                .mul(&b1)
                .scale(Complex64::new(2.0, 0.0))
                .sub(&b2)
                .add(&one.scale(Complex64::new(c, 0.0)));
            b2 = b1;
            b1 = b0;
        }
        one.scale(Complex64::new(self.coeffs[0], 0.0))
            .add(&s.mul(&b1))
            .sub(&b2)
    }
}

fn require_hilbert(x: &FilteredElement) -> Result<()> {
    if x.algebra.p == PExp::TWO {
        Ok(())
    } else {
        Err(CStarError::NotHilbert)
    }
}

// ---------------------------------------------------------------------------
// idempotent -> quasi-projection

#[derive(Clone, Debug)]
pub struct QuasiProjection {
    pub p1: FilteredElement,
    pub p2: FilteredElement,
    pub cert: QCertificate,
    /// ||p2 - p2*||, structurally zero
    pub sa_defect: f64,
    /// two-leg homotopy from the input idempotent to p2
    pub homotopy: HomotopyPath,
    pub control: ControlPair,
    pub q_degree: usize,
    pub r_degree: usize,
}

/// Symmetrize a certified idempotent into a self-adjoint quasi-projection
/// by the square-root conjugation p1 = Q(z) e R(z), z = (2e*-1)(2e-1),
/// followed by exact averaging with the adjoint. The returned homotopy
/// interpolates the conjugation argument linearly from 1 to z, then runs
/// the segment from p1 to p2.
pub fn to_quasi_projection(
    e: &FilteredElement,
    cert: &QCertificate,
    samples: usize,
) -> Result<QuasiProjection> {
    require_hilbert(e)?;
    let nb = cert.n_bound.max(1.0);
    let tol = cert.epsilon / (6.0 * nb.powi(5));
    let hi = (2.0 * nb + 1.0).powi(2);
    let q = PolyApprox::build(PolyTarget::SqrtShift, 0.0, hi, tol)?;
    let r = PolyApprox::build(PolyTarget::InvSqrtShift, 0.0, hi, tol)?;

    let ep = promote(e);
    let one = ident(&e.algebra, e.blocks);
    let two = Complex64::new(2.0, 0.0);
    let z = ep
        .adjoint()
        .scale(two)
        .sub(&one)
        .mul(&ep.scale(two).sub(&one));

    let conj_at = |t: f64| -> FilteredElement {
        let zt = one
            .scale(Complex64::new(1.0 - t, 0.0))
            .add(&z.scale(Complex64::new(t, 0.0)));
        q.eval_element(&zt).mul(&ep).mul(&r.eval_element(&zt))
    };

    let mut path_samples: Vec<FilteredElement> =
        sample_ts(samples).into_iter().map(conj_at).collect();
    let p1 = path_samples.last().unwrap().clone();
    let p2 = p1.add(&p1.adjoint()).scale(Complex64::new(0.5, 0.0));
    // second leg: straight segment from p1 to its symmetrization
    for t in sample_ts(samples) {
        if t == 0.0 {
            continue;
        }
        path_samples.push(
            p1.scale(Complex64::new(1.0 - t, 0.0))
                .add(&p2.scale(Complex64::new(t, 0.0))),
        );
    }

    let sa_defect = distance(&p2, &p2.adjoint()).upper;
    let p2_cert = certify_idempotent(&p2, None)?;

    let mut eps_path: f64 = 0.0;
    let mut n_path: f64 = 0.0;
    let mut r_path: f64 = 0.0;
    for smp in &path_samples {
        eps_path = eps_path.max(distance(&smp.mul(smp), smp).upper);
        n_path = n_path.max(op_norm_element(smp).upper);
        r_path = r_path.max(smp.support_propagation());
    }
    let path_cert = QCertificate::new(eps_path + CERT_MARGIN, r_path.max(cert.r), n_path + eps_path);
    if !path_cert.admissible() {
        return Err(CStarError::Quasi(QuasiError::ResidualTooLarge { residual: eps_path }));
    }
    let homotopy = HomotopyPath {
        lipschitz: measured_lipschitz(&path_samples) * 1.1,
        samples: path_samples,
        inverses: None,
        cert: path_cert.clone(),
        kind: PathKind::Idempotent,
    };

    let control = ControlPair::new(
        CtrlExpr::c(path_cert.epsilon / cert.epsilon.max(1e-15)),
        CtrlExpr::c(path_cert.r / cert.r.max(1.0)),
        "idempotent symmetrization, measured composite",
    );

    Ok(QuasiProjection {
        p1,
        p2,
        cert: p2_cert,
        sa_defect,
        homotopy,
        control,
        q_degree: q.degree,
        r_degree: r.degree,
    })
}

/// An (eps, r)-projection (self-adjoint, ||p^2 - p|| < eps) certifies as an
/// (eps, r, 1+eps)-idempotent; returns the certificate after verifying the
/// self-adjointness and norm claims.
pub fn projection_to_idempotent(p: &FilteredElement, eps: f64) -> Result<QCertificate> {
    require_hilbert(p)?;
    let sa = distance(p, &p.adjoint()).upper;
    if sa > 1e-9 {
        return Err(CStarError::Quasi(QuasiError::ResidualTooLarge { residual: sa }));
    }
    let cert = certify_idempotent(p, Some(1.0 + eps))?;
    if cert.epsilon > eps + CERT_MARGIN * 2.0 {
        return Err(CStarError::Quasi(QuasiError::ResidualTooLarge { residual: cert.epsilon }));
    }
    Ok(cert)
}

/// Rank of the spectral projection produced by the contour integral of a
/// certified idempotent.
pub fn kappa0_rank(e: &FilteredElement, cert: &QCertificate) -> Result<usize> {
    let proj = kappa0(e, cert)?;
    let (mat, _) = dense_parts(&proj.output);
    Ok(mat.numerical_rank(1e-6))
}

// ---------------------------------------------------------------------------
// invertible -> quasi-unitary

#[derive(Clone, Debug)]
pub struct PolarDecomposition {
    pub u: FilteredElement,
    pub y: FilteredElement,
    /// max(||uu* - 1||, ||u*u - 1||)
    pub unitary_defect: f64,
    /// ||x - u y||
    pub recon_defect: f64,
    /// ||y - y*||
    pub y_sa_defect: f64,
    pub q: PolyApprox,
    pub u_path: Option<HomotopyPath>,
    pub control: ControlPair,
}

fn gram_window(xs: &[&FilteredElement], vs: &[&FilteredElement]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (x, v) in xs.iter().zip(vs) {
        let xn = op_norm_element(x).upper;
        let vn = op_norm_element(v).upper.max(1e-9);
        hi = hi.max(xn * xn);
        lo = lo.min(1.0 / (vn * vn));
    }
    (0.5 * lo, 1.1 * hi + 1e-9)
}

/// Polar decomposition through functional calculus: u = x Q(x*x) and
/// y = x*x Q(x*x) with Q a certified approximation of t^{-1/2} on the
/// spectral window of x*x, normalized so Q(1) = 1. When the input carries a
/// homotopy to the identity, the same prescription applied samplewise gives
/// the induced quasi-unitary homotopy.
pub fn polar_decompose(
    pair: &InversePair,
    path: Option<&HomotopyPath>,
) -> Result<PolarDecomposition> {
    require_hilbert(&pair.u)?;
    let x = &pair.u;
    let v = &pair.v;
    let nb = pair.cert.n_bound.max(1.0);
    let tol = pair.cert.epsilon / (6.0 * nb.powi(5));

    let (mut lo, mut hi) = match path {
        Some(p) => {
            let invs = p.inverses.as_ref().map(|i| i.iter().collect::<Vec<_>>());
            let fw: Vec<&FilteredElement> = p.samples.iter().collect();
            match invs {
                Some(iv) => gram_window(&fw, &iv),
                None => gram_window(&[x], &[v]),
            }
        }
        None => gram_window(&[x], &[v]),
    };
    // the normalization point must lie inside the certified window
    lo = lo.min(0.9);
    hi = hi.max(1.1);
    let mut q = PolyApprox::build(PolyTarget::InvSqrt, lo, hi, tol.min(1e-3))?;
    q.normalize_at(1.0);

    let one = ident(&x.algebra, x.blocks);
    let make_uy = |xt: &FilteredElement| -> (FilteredElement, FilteredElement) {
        let g = xt.adjoint().mul(xt);
        let qg = q.eval_element(&g);
        (xt.mul(&qg), g.mul(&qg))
    };
    let (u, y) = make_uy(&promote(x));

    let unitary_defect = distance(&u.mul(&u.adjoint()), &one)
        .upper
        .max(distance(&u.adjoint().mul(&u), &one).upper);
    let recon_defect = distance(&promote(x), &u.mul(&y)).upper;
    let y_sa_defect = distance(&y, &y.adjoint()).upper;

    let u_path = match path {
        Some(p) => {
            let mut us = Vec::with_capacity(p.samples.len());
            let mut eps_u: f64 = 0.0;
            let mut n_u: f64 = 0.0;
            let mut r_u: f64 = 0.0;
            for smp in &p.samples {
                let (ut, _) = make_uy(&promote(smp));
                eps_u = eps_u
                    .max(distance(&ut.mul(&ut.adjoint()), &one).upper)
                    .max(distance(&ut.adjoint().mul(&ut), &one).upper);
                n_u = n_u.max(op_norm_element(&ut).upper);
                r_u = r_u.max(ut.support_propagation());
                us.push(ut);
            }
            let cert = QCertificate::new(eps_u + CERT_MARGIN, r_u, n_u + eps_u);
            Some(HomotopyPath {
                lipschitz: measured_lipschitz(&us) * 1.1,
                samples: us,
                inverses: None,
                cert,
                kind: PathKind::Invertible,
            })
        }
        None => None,
    };

    let control = ControlPair::new(
        CtrlExpr::c((unitary_defect + CERT_MARGIN) / pair.cert.epsilon.max(1e-15)),
        CtrlExpr::c((u.support_propagation() / pair.cert.r.max(1.0)).max(1.0)),
        "polar decomposition, measured composite",
    );

    Ok(PolarDecomposition {
        u,
        y,
        unitary_defect,
        recon_defect,
        y_sa_defect,
        q,
        u_path,
        control,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::AlgebraInstance;
    use crate::funcalc::eigenprojection_oracle;
    use crate::linalg::Mat;
    use crate::pnorm::random_matrix;
    use crate::quasi::certify_inverse_pair;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn alg(n: usize) -> AlgebraInstance {
        AlgebraInstance::interval_roe(n, PExp::TWO)
    }

    fn elem(a: &AlgebraInstance, m: Mat) -> FilteredElement {
        let prop = m.rows as f64;
        FilteredElement {
            algebra: a.clone(),
            blocks: 1,
            data: crate::algebra::ElemData::Dense { mat: m, scalar: None },
            propagation: prop,
        }
    }

    #[test]
    fn chebyshev_meets_tolerance_on_both_targets() {
        for target in [PolyTarget::SqrtShift, PolyTarget::InvSqrtShift] {
            let p = PolyApprox::build(target, 0.0, 11.6, 1e-7).unwrap();
            assert!(p.sup_error < 1e-7, "{target:?}: {}", p.sup_error);
            assert!(p.degree <= 256);
        }
        let p = PolyApprox::build(PolyTarget::InvSqrt, 0.3, 4.0, 1e-6).unwrap();
        assert!(p.sup_error < 1e-6);
    }

    #[test]
    fn exact_projection_is_fixed() {
        let a = alg(4);
        let mut m = Mat::zeros(4, 4);
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        m[(2, 2)] = Complex64::new(1.0, 0.0);
        let e = elem(&a, m);
        let cert = certify_idempotent(&e, None).unwrap();
        let qp = to_quasi_projection(&e, &cert, 9).unwrap();
        assert!(distance(&qp.p2, &promote(&e)).upper < 1e-10, "p2 moved");
        assert!(qp.sa_defect < 1e-14);
    }

    #[test]
    fn skew_idempotent_maps_to_range_projection() {
        let a = alg(2);
        let m = Mat::from_real_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        let e = elem(&a, m.clone());
        let cert = certify_idempotent(&e, None).unwrap();
        let qp = to_quasi_projection(&e, &cert, 17).unwrap();
        // symmetrized output is an exact self-adjoint projection of rank 1:
        // the conjugation bisects the angle between range and co-kernel, so
        // the output is the projection onto the bisecting line rather than
        // the plain range projection
        let (p2m, _) = dense_parts(&qp.p2);
        assert!(p2m.sub(&p2m.adjoint()).max_abs() < 1e-12);
        assert!(p2m.mul(&p2m).sub(&p2m).max_abs() < 1e-8, "p2 {:?}", p2m);
        let expected = {
            // projection onto span(cos pi/8, sin pi/8), the bisector of the
            // range (x-axis) and the orthocomplement of the kernel
            let c = (std::f64::consts::PI / 8.0).cos();
            let s = (std::f64::consts::PI / 8.0).sin();
            Mat::from_real_rows(&[vec![c * c, c * s], vec![c * s, s * s]])
        };
        assert!(p2m.sub(&expected).max_abs() < 1e-6, "p2 {:?}", p2m);
        // independent oracle: spectral projection of the exact idempotent
        // has the same rank
        let oracle = eigenprojection_oracle(&m).unwrap();
        assert_eq!(oracle.numerical_rank(1e-8), p2m.numerical_rank(1e-8));
        // homotopy re-certifies and stays admissible
        assert!(qp.homotopy.cert.admissible());
    }

    #[test]
    fn random_idempotents_symmetrize_with_rank_preserved() {
        let a = alg(6);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            // build a genuine idempotent by polishing a random near-projection
            let g = random_matrix(&mut rng, 6, 6);
            let h = g.scale_re(0.08);
            let mut m = Mat::zeros(6, 6);
            for i in 0..3 {
                m[(i, i)] = Complex64::new(1.0, 0.0);
            }
            let seed = m.add(&h);
            let Some(pol) = seed.idempotent_newton() else { continue };
            let e = elem(&a, pol);
            let cert = certify_idempotent(&e, None).unwrap();
            let qp = to_quasi_projection(&e, &cert, 9).unwrap();
            assert!(qp.sa_defect < 1e-13);
            assert!(qp.cert.admissible());
            assert!(qp.homotopy.cert.admissible());
            let r0 = kappa0_rank(&e, &cert).unwrap();
            let r1 = kappa0_rank(&qp.p2, &qp.cert).unwrap();
            assert_eq!(r0, r1, "spectral rank changed");
        }
    }

    #[test]
    fn projection_round_trip_certificate() {
        let a = alg(4);
        let mut m = Mat::zeros(4, 4);
        m[(1, 1)] = Complex64::new(1.0, 0.0);
        m[(2, 2)] = Complex64::new(0.01, 0.0); // small self-adjoint defect
        let p = elem(&a, m);
        let cert = projection_to_idempotent(&p, 0.02).unwrap();
        assert!(cert.epsilon < 0.02);
        assert!(cert.n_bound <= 1.0 + 0.02 + 1e-9);
    }

    #[test]
    fn unitary_polar_decomposition_is_trivial() {
        let a = alg(4);
        // a permutation matrix with a phase: exactly unitary
        let mut m = Mat::zeros(4, 4);
        m[(0, 1)] = Complex64::new(0.0, 1.0);
        m[(1, 0)] = Complex64::new(1.0, 0.0);
        m[(2, 3)] = Complex64::new(-1.0, 0.0);
        m[(3, 2)] = Complex64::new(0.0, -1.0);
        let x = elem(&a, m.clone());
        let xinv = elem(&a, m.adjoint());
        let pair = certify_inverse_pair(&x, &xinv).unwrap();
        let pd = polar_decompose(&pair, None).unwrap();
        assert!(distance(&pd.u, &promote(&x)).upper < 1e-8, "u != x");
        let one = ident(&a, 1);
        assert!(distance(&pd.y, &one).upper < 1e-8, "y != 1");
    }

    #[test]
    fn positive_diagonal_gives_identity_unitary() {
        let a = alg(3);
        let m = Mat::from_real_rows(&[vec![1.2, 0.0, 0.0], vec![0.0, 0.8, 0.0], vec![0.0, 0.0, 1.05]]);
        let minv = Mat::from_real_rows(&[
            vec![1.0 / 1.2, 0.0, 0.0],
            vec![0.0, 1.0 / 0.8, 0.0],
            vec![0.0, 0.0, 1.0 / 1.05],
        ]);
        let x = elem(&a, m);
        let xinv = elem(&a, minv);
        let pair = certify_inverse_pair(&x, &xinv).unwrap();
        let pd = polar_decompose(&pair, None).unwrap();
        let one = ident(&a, 1);
        assert!(distance(&pd.u, &one).upper < 1e-6, "u != 1: {}", distance(&pd.u, &one).upper);
    }

    #[test]
    fn random_invertibles_certify_polar_bounds() {
        let a = alg(5);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let one = ident(&a, 1);
        for _ in 0..10 {
            let noise = random_matrix(&mut rng, 5, 5).scale_re(0.1);
            let x = one.add(&elem(&a, noise.clone()));
            let Some(inv) = dense_parts(&x).0.inverse() else { continue };
            let xinv = elem(&a, inv);
            let pair = certify_inverse_pair(&x, &xinv).unwrap();
            let pd = polar_decompose(&pair, None).unwrap();
            assert!(pd.unitary_defect < 1e-4, "unitary defect {}", pd.unitary_defect);
            assert!(pd.recon_defect < 1e-4, "reconstruction defect {}", pd.recon_defect);
            assert!(pd.y_sa_defect < 1e-8, "y symmetry defect {}", pd.y_sa_defect);
        }
    }

    #[test]
    fn induced_unitary_path_recertifies() {
        let a = alg(4);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let one = ident(&a, 1);
        let noise = random_matrix(&mut rng, 4, 4).scale_re(0.05);
        let x = one.add(&elem(&a, noise));
        let Some(inv) = dense_parts(&x).0.inverse() else { panic!("singular") };
        let xinv = elem(&a, inv);
        let pair = certify_inverse_pair(&x, &xinv).unwrap();
        let path = crate::mayervietoris::linear_path_to_identity(&x, 0.02, 17).unwrap();
        let pd = polar_decompose(&pair, Some(&path)).unwrap();
        let upath = pd.u_path.unwrap();
        assert!(upath.cert.admissible());
        assert!(distance(upath.end(), &one).upper < 1e-8, "path must end at 1");
    }

    #[test]
    fn wrong_exponent_is_rejected() {
        let a = AlgebraInstance::interval_roe(3, PExp::Inf);
        let m = Mat::identity(3);
        let e = elem(&a, m);
        let cert = certify_idempotent(&e, None).unwrap();
        assert!(matches!(
            to_quasi_projection(&e, &cert, 5),
            Err(CStarError::NotHilbert)
        ));
    }
}
