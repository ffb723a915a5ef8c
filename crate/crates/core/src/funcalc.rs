//! Holomorphic functional calculus: the Riesz projection kappa0 computed by
//! contour quadrature, its quantitative error bounds, and the comparison
//! maps between quantitative and ordinary K-theory.

use crate::algebra::FilteredElement;
use crate::kclasses::KZeroRep;
use crate::linalg::Mat;
use crate::pnorm::{op_norm, op_norm_element};
use crate::quasi::{certify_idempotent, idempotent_residual, promote, HomotopyPath, QCertificate};
use num_complex::Complex64;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FuncalcError {
    #[error("epsilon {0} outside the functional-calculus window (< 1/4 required)")]
    EpsilonWindow(f64),
    #[error("spectrum not localized: eigenvalue {0} outside the two epsilon-balls")]
    SpectrumOutside(Complex64),
    #[error("eigenvalue {0} too close to the integration contour")]
    NearContour(Complex64),
    #[error("quadrature did not converge within {0} nodes")]
    NoConvergence(usize),
    #[error("resolvent solve failed at node {0}")]
    Resolvent(Complex64),
    #[error("trace {0} not within 1e-6 of an integer")]
    TraceNotInteger(f64),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, FuncalcError>;

#[derive(Clone, Debug)]
pub struct RieszProjection {
    pub input_cert: QCertificate,
    pub output: FilteredElement,
    pub nodes_used: usize,
    pub residual: f64,
}

/// One trapezoid pass of the Riesz integral over the circle |z - 1| = rho.
fn contour_pass(m: &Mat, rho: f64, nodes: usize) -> Result<Mat> {
    let n = m.rows;
    let mut acc = Mat::zeros(n, n);
    let id = Mat::identity(n);
    for j in 0..nodes {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / nodes as f64;
        let w = Complex64::new(theta.cos(), theta.sin());
        let z = Complex64::new(1.0, 0.0) + rho * w;
        // (1/2 pi i) Int (z-e)^{-1} dz  ->  (1/nodes) Sum rho w (z_j - e)^{-1}
        let zi_minus_e = id.scale(z).sub(m);
        let resolvent = zi_minus_e.inverse().ok_or(FuncalcError::Resolvent(z))?;
        acc = acc.add(&resolvent.scale(rho * w));
    }
    Ok(acc.scale(Complex64::new(1.0 / nodes as f64, 0.0)))
}

/// kappa0(e): Riesz projection onto the spectrum near 1, by adaptive
/// trapezoidal quadrature on the circle |z - 1| = sqrt(eps). Only the circle
/// about 1 is integrated (the integrand vanishes on the 0-circle component).
pub fn kappa0(e: &FilteredElement, cert: &QCertificate) -> Result<RieszProjection> {
    let eps = cert.epsilon;
    if eps >= 0.25 {
        return Err(FuncalcError::EpsilonWindow(eps));
    }
    let ep = promote(e);
    let m = match &ep.data {
        crate::algebra::ElemData::Dense { mat, .. } => mat.clone(),
        _ => {
            return Err(FuncalcError::Unsupported(
                "kappa0 requires a dense (finite-matrix) element; truncate band elements first".into(),
            ))
        }
    };
    let rho = eps.sqrt();
    // spectrum localization: eigenvalues inside B_rho(0) u B_rho(1), and at
    // distance >= rho/4 from the contour about 1
    let eigs = m.eigenvalues();
    for &l in &eigs {
        let d0 = l.norm();
        let d1 = (l - Complex64::new(1.0, 0.0)).norm();
        if d0 > rho && d1 > rho {
            return Err(FuncalcError::SpectrumOutside(l));
        }
        if (d1 - rho).abs() < rho / 4.0 {
            return Err(FuncalcError::NearContour(l));
        }
    }
    let mut nodes = 64usize;
    let mut prev = contour_pass(&m, rho, nodes)?;
    let max_nodes = 65536usize;
    loop {
        nodes *= 2;
        if nodes > max_nodes {
            return Err(FuncalcError::NoConvergence(max_nodes));
        }
        let cur = contour_pass(&m, rho, nodes)?;
        let diff = cur.sub(&prev).max_abs();
        prev = cur;
        if diff < 1e-10 {
            break;
        }
    }
    let out = FilteredElement::make(
        &ep.algebra,
        ep.blocks,
        crate::algebra::ElemData::Dense { mat: prev.clone(), scalar: ep.scalar_part() },
    )
    .map_err(|er| FuncalcError::Unsupported(format!("output element invalid: {er}")))?;
    let residual = idempotent_residual(&out).upper;
    if residual > 1e-8 {
        return Err(FuncalcError::NoConvergence(nodes));
    }
    Ok(RieszProjection { input_cert: cert.clone(), output: out, nodes_used: nodes, residual })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub bound: String,
    pub lhs_upper: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Kappa0Report {
    pub distance_to_input: BoundCheck,
    pub projection_norm: BoundCheck,
}

/// The two quantitative bounds: ||kappa0(e) - e|| and ||kappa0(e)||.
pub fn check_kappa0_bounds(e: &FilteredElement, cert: &QCertificate) -> Result<Kappa0Report> {
    let proj = kappa0(e, cert)?;
    let eps = cert.epsilon;
    let n = cert.n_bound;
    let s = eps.sqrt();
    let diff = op_norm_element(&proj.output.sub(&promote(e))).upper;
    let diff_bound = 2.0 * (n + 1.0) * eps / ((1.0 - s) * (1.0 - 2.0 * s));
    let pn = op_norm_element(&proj.output).upper;
    let pn_bound = (n + 1.0) / (1.0 - 2.0 * s);
    Ok(Kappa0Report {
        distance_to_input: BoundCheck {
            bound: "||kappa0(e) - e|| < 2(N+1)eps/((1-sqrt(eps))(1-2 sqrt(eps)))".into(),
            lhs_upper: diff,
            rhs: diff_bound,
            pass: diff < diff_bound,
        },
        projection_norm: BoundCheck {
            bound: "||kappa0(e)|| < (N+1)/(1-2 sqrt(eps))".into(),
            lhs_upper: pn,
            rhs: pn_bound,
            pass: pn < pn_bound,
        },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Kappa0DistanceReport {
    pub lipschitz: BoundCheck,
    /// present when the homotopy-criterion hypothesis holds
    pub homotopy_criterion: Option<BoundCheck>,
}

/// ||kappa0(e) - kappa0(f)|| against the quantitative Lipschitz bound, plus
/// the homotopy criterion when the inputs are close enough.
pub fn kappa0_distance(
    e: &FilteredElement,
    f: &FilteredElement,
    cert: &QCertificate,
) -> Result<Kappa0DistanceReport> {
    let pe = kappa0(e, cert)?;
    let pf = kappa0(f, cert)?;
    let eps = cert.epsilon;
    let n = cert.n_bound;
    let s = eps.sqrt();
    let dist_in = op_norm_element(&promote(e).sub(&promote(f))).upper;
    let dist_out = op_norm_element(&pe.output.sub(&pf.output)).upper;
    let rhs = (n + 1.0).powi(2) / (s * (1.0 - 2.0 * s).powi(2)) * dist_in;
    let lipschitz = BoundCheck {
        bound: "||kappa0(e) - kappa0(f)|| < (N+1)^2/(sqrt(eps)(1-2 sqrt(eps))^2) ||e - f||".into(),
        lhs_upper: dist_out,
        rhs,
        pass: dist_out < rhs || dist_in == 0.0,
    };
    let homotopy_criterion = if eps < 1.0 / 9.0
        && dist_in < eps / (9.0 * (2.0 * n + 3.0) * (n + 1.0).powi(2))
    {
        let one = FilteredElement::identity(&pe.output.algebra, pe.output.blocks);
        let denom = op_norm_element(&pe.output.scale(Complex64::new(2.0, 0.0)).sub(&one)).upper;
        Some(BoundCheck {
            bound: "||kappa0(e) - kappa0(f)|| < 1/||2 kappa0(e) - 1||".into(),
            lhs_upper: dist_out,
            rhs: 1.0 / denom,
            pass: dist_out < 1.0 / denom,
        })
    } else {
        None
    };
    Ok(Kappa0DistanceReport { lipschitz, homotopy_criterion })
}

/// Ordinary K0 invariant of a representative [e] - [I_k]: rank(kappa0(e))
/// minus the rank of I_k in the same matrix representation (k times the
/// representation dimension of the unit). Rank is the rounded real trace of
/// the idempotent.
pub fn to_ordinary_k0(rep: &KZeroRep) -> Result<i64> {
    let proj = kappa0(&rep.e, &rep.cert)?;
    let tr = proj.output.dense().trace();
    let re = tr.re;
    let rounded = re.round();
    if (re - rounded).abs() > 1e-6 || tr.im.abs() > 1e-6 {
        return Err(FuncalcError::TraceNotInteger(re));
    }
    let unit_rank = rep.e.algebra.dim() as i64;
    Ok(rounded as i64 - rep.k as i64 * unit_rank)
}

/// The ordinary invariant evaluated at every sample of a homotopy path; the
/// class is well-defined exactly when this is constant.
pub fn ordinary_k0_along_path(path: &HomotopyPath, k: usize) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(path.samples.len());
    for s in &path.samples {
        let cert = certify_idempotent(s, Some(path.cert.n_bound))
            .map_err(|e| FuncalcError::Unsupported(format!("sample not certifiable: {e}")))?;
        let rep = KZeroRep::new(s, k, cert);
        out.push(to_ordinary_k0(&rep)?);
    }
    Ok(out)
}

/// From an exact idempotent with unbounded propagation, produce a certified
/// quantitative representative by truncating entries beyond propagation r,
/// with r chosen so that ||e - f|| < eps/(9N(N+1)^2).
pub fn approximate_from_ordinary(
    f: &FilteredElement,
    eps: f64,
) -> Result<(FilteredElement, QCertificate, BoundCheck)> {
    let fp = promote(f);
    let resid = idempotent_residual(&fp).upper;
    if resid > 1e-12 {
        return Err(FuncalcError::Unsupported(format!(
            "input must be an exact idempotent (residual {resid})"
        )));
    }
    let one = FilteredElement::identity(&fp.algebra, fp.blocks);
    let n = op_norm_element(&fp)
        .upper
        .max(op_norm_element(&one.sub(&fp)).upper)
        .max(1.0);
    let target = eps / (9.0 * n * (n + 1.0).powi(2));
    // try increasing truncation radii on the metric grid
    let metric = fp
        .algebra
        .metric_table()
        .ok_or_else(|| FuncalcError::Unsupported("instance has no finite metric table".into()))?;
    let mut radii: Vec<f64> = metric.clone();
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    radii.dedup();
    let mut chosen: Option<FilteredElement> = None;
    for &r in &radii {
        let e = truncate_to_radius(&fp, r);
        if op_norm_element(&e.sub(&fp)).upper < target {
            chosen = Some(e);
            break;
        }
    }
    let e = chosen.ok_or_else(|| {
        FuncalcError::Unsupported("no truncation radius achieves the required accuracy".into())
    })?;
    let cert_raw = certify_idempotent(&e, Some(n))
        .map_err(|er| FuncalcError::Unsupported(format!("truncation not certifiable: {er}")))?;
    let cert = QCertificate::new(eps.max(cert_raw.epsilon), e.propagation, cert_raw.n_bound);
    // homotopy criterion: ||kappa0(e) - f|| < 1/||2f - 1||
    let proj = kappa0(&e, &cert)?;
    let dist = op_norm_element(&proj.output.sub(&fp)).upper;
    let denom = op_norm_element(&fp.scale(Complex64::new(2.0, 0.0)).sub(&one)).upper;
    let check = BoundCheck {
        bound: "||kappa0(e) - f|| < 1/||2f - 1||".into(),
        lhs_upper: dist,
        rhs: 1.0 / denom,
        pass: dist < 1.0 / denom,
    };
    Ok((e, cert, check))
}

/// Zero every matrix entry whose metric distance exceeds r, keeping the
/// unitization scalar part.
fn truncate_to_radius(x: &FilteredElement, r: f64) -> FilteredElement {
    let xp = promote(x);
    let metric = xp.algebra.metric_table().expect("finite metric table");
    let nn = xp.algebra.dim();
    let mut m = xp.dense().clone();
    let scalar = xp.scalar_part();
    for i in 0..m.rows {
        for j in 0..m.cols {
            if metric[(i % nn) * nn + (j % nn)] > r {
                // subtract only the inner part; the scalar part is diagonal in
                // the base, so off-diagonal entries can be zeroed outright
                if i % nn != j % nn || scalar.is_none() {
                    m[(i, j)] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    FilteredElement::make(&xp.algebra, xp.blocks, crate::algebra::ElemData::Dense { mat: m, scalar })
        .expect("truncation preserves shape")
}

/// Independent oracle: spectral projection near 1 via eigen-decomposition,
/// falling back to the quadratic Newton iteration when the eigenbasis is
/// ill-conditioned.
pub fn eigenprojection_oracle(m: &Mat) -> Option<Mat> {
    if let Some((eigs, v, cond)) = m.eigen_decomposition() {
        if cond <= 1e3 {
            let vinv = v.inverse()?;
            let sel = Mat::diag(
                &eigs
                    .iter()
                    .map(|&l| {
                        if (l - Complex64::new(1.0, 0.0)).norm() < 0.5 {
                            Complex64::new(1.0, 0.0)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect::<Vec<_>>(),
            );
            return Some(v.mul(&sel).mul(&vinv));
        }
    }
    m.idempotent_newton()
}

pub fn op_norm_mat(m: &Mat, p: crate::algebra::PExp) -> f64 {
    op_norm(m, p).upper
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{make_element, AlgebraInstance, ElementInput, PExp};
    use crate::quasi::{certify_inverse_pair, conjugation_homotopy, rotation, sample_ts, PathKind};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn roe(n: usize) -> AlgebraInstance {
        AlgebraInstance::interval_roe(n, PExp::TWO)
    }

    fn from_mat(alg: &AlgebraInstance, m: Mat) -> FilteredElement {
        make_element(alg, m.rows / alg.dim(), ElementInput::Matrix(m)).unwrap()
    }

    #[test]
    fn kappa0_fixes_exact_idempotents() {
        let alg = roe(3);
        let e = from_mat(
            &alg,
            Mat::from_real_rows(&[vec![1.0, 0.4, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.3, 1.0]]),
        );
        assert!(idempotent_residual(&e).upper < 1e-12);
        let cert = QCertificate::new(0.01, e.propagation, 2.0);
        let proj = kappa0(&e, &cert).unwrap();
        assert!(op_norm_element(&proj.output.sub(&e)).upper < 1e-10);
        assert!(proj.residual <= 1e-8);
    }

    #[test]
    fn kappa0_diagonal_example() {
        // diag(1, 0.04) -> diag(1, 0); distance 0.04; bound ~ 0.3142
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.04, 0.0)]));
        let cert = certify_idempotent(&e, None).unwrap();
        assert!((cert.epsilon - 0.0384).abs() < 1e-10);
        let proj = kappa0(&e, &cert).unwrap();
        let want = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.0, 0.0)]));
        assert!(op_norm_element(&proj.output.sub(&want)).upper < 1e-10);
        let report = check_kappa0_bounds(&e, &cert).unwrap();
        assert!((report.distance_to_input.lhs_upper - 0.04).abs() < 1e-9);
        let eps = cert.epsilon;
        let s = eps.sqrt();
        let expect = 2.0 * 2.0 * eps / ((1.0 - s) * (1.0 - 2.0 * s));
        assert!((report.distance_to_input.rhs - expect).abs() < 1e-12);
        assert!((expect - 0.3142).abs() < 1e-3);
        assert!(report.distance_to_input.pass && report.projection_norm.pass);
    }

    #[test]
    fn kappa0_matches_eigenprojection() {
        // non-normal perturbation with well-separated spectrum
        let alg = roe(2);
        let e = from_mat(&alg, Mat::from_real_rows(&[vec![1.0, 1.0], vec![0.01, 0.0]]));
        let cert = certify_idempotent(&e, None).unwrap();
        let proj = kappa0(&e, &cert).unwrap();
        let oracle = eigenprojection_oracle(e.dense()).unwrap();
        assert!(proj.output.dense().sub(&oracle).max_abs() <= 1e-7);
    }

    #[test]
    fn kappa0_random_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let alg = roe(4);
        let mut accepted = 0usize;
        let mut violations = 0usize;
        while accepted < 500 {
            let mut m = Mat::zeros(4, 4);
            for i in 0..4 {
                if rng.gen_bool(0.5) {
                    m[(i, i)] = c(1.0, 0.0);
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    if (i as i64 - j as i64).abs() <= 1 {
                        m[(i, j)] += c(
                            (rng.gen::<f64>() - 0.5) * 0.02,
                            (rng.gen::<f64>() - 0.5) * 0.02,
                        );
                    }
                }
            }
            let e = from_mat(&alg, m);
            let cert = match certify_idempotent(&e, None) {
                Ok(cc) => cc,
                Err(_) => continue,
            };
            match check_kappa0_bounds(&e, &cert) {
                Ok(rep) => {
                    accepted += 1;
                    if !rep.distance_to_input.pass || !rep.projection_norm.pass {
                        violations += 1;
                    }
                }
                Err(FuncalcError::NearContour(_)) | Err(FuncalcError::SpectrumOutside(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn kappa0_distance_checks() {
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.02, 0.0)]));
        let cert = certify_idempotent(&e, None).unwrap();
        // f = e: zero distance
        let rep = kappa0_distance(&e, &e, &cert).unwrap();
        assert!(rep.lipschitz.lhs_upper < 1e-10 && rep.lipschitz.pass);
        assert!(rep.homotopy_criterion.unwrap().pass);
        // scaled diagonal pair
        let f = from_mat(&alg, Mat::diag(&[c(0.9999, 0.0), c(0.02, 0.0)]));
        let joint = QCertificate::new(cert.epsilon.max(0.02), cert.r, cert.n_bound);
        let rep2 = kappa0_distance(&e, &f, &joint).unwrap();
        assert!(rep2.lipschitz.pass);
        // random pairs
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = 0.01 * rng.gen::<f64>();
            let b = 0.01 * rng.gen::<f64>();
            let e1 = from_mat(&alg, Mat::diag(&[c(1.0 + a, 0.0), c(b, 0.0)]));
            let e2 = from_mat(&alg, Mat::diag(&[c(1.0 - b, 0.0), c(a, 0.0)]));
            let c1 = certify_idempotent(&e1, None).unwrap();
            let c2 = certify_idempotent(&e2, None).unwrap();
            let jc = QCertificate::new(c1.epsilon.max(c2.epsilon), 0.0, c1.n_bound.max(c2.n_bound));
            let r = kappa0_distance(&e1, &e2, &jc).unwrap();
            assert!(r.lipschitz.pass, "{r:?}");
        }
    }

    #[test]
    fn ordinary_k0_examples() {
        let alg = roe(2);
        // [I_n] - [I_n] = 0
        let one = FilteredElement::identity(&alg, 3);
        let cert = certify_idempotent(&one, None).unwrap();
        let rep = KZeroRep::new(&one, 3, cert);
        assert_eq!(to_ordinary_k0(&rep).unwrap(), 0);
        // diag(1, 0.04) with k = 0 -> 1
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.04, 0.0)]));
        let cert = certify_idempotent(&e, None).unwrap();
        let rep = KZeroRep::new(&e, 0, cert);
        assert_eq!(to_ordinary_k0(&rep).unwrap(), 1);
    }

    #[test]
    fn ordinary_k0_constant_along_homotopy() {
        // conjugation rotation path: the integer invariant is constant
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.01, 0.0)]));
        let cert = certify_idempotent(&e, None).unwrap();
        let cert = QCertificate::new(0.011, cert.r, cert.n_bound);
        let perm = Mat::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let up = from_mat(&alg, perm.clone());
        let vp = from_mat(&alg, perm.transpose());
        let pair = certify_inverse_pair(&up, &vp).unwrap();
        let path = conjugation_homotopy(&e, &cert, &pair, 17).unwrap();
        let vals = ordinary_k0_along_path(&path, 0).unwrap();
        assert!(vals.iter().all(|&v| v == vals[0]));
        assert_eq!(vals[0], 1);
    }

    #[test]
    fn ordinary_k0_constant_along_rotation() {
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.0, 0.0)]));
        let zero = FilteredElement::zero(&alg, 1);
        let e0 = e.block_diag(&zero);
        let f0 = FilteredElement::identity(&alg, 1)
            .sub(&from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.0, 0.0)])))
            .block_diag(&zero);
        let samples: Vec<FilteredElement> = sample_ts(17)
            .into_iter()
            .map(|t| {
                let (r, rinv) = rotation(&alg, 1, t);
                e0.add(&r.mul(&f0).mul(&rinv))
            })
            .collect();
        let path = HomotopyPath {
            samples,
            inverses: None,
            lipschitz: 4.0,
            cert: QCertificate::new(0.001, 0.0, 2.5),
            kind: PathKind::Idempotent,
        };
        let vals = ordinary_k0_along_path(&path, 0).unwrap();
        assert!(vals.iter().all(|&v| v == vals[0]));
        assert_eq!(vals[0], 2);
    }

    #[test]
    fn approximate_from_ordinary_cases() {
        let alg = roe(6);
        // f already local: e = f
        let f = from_mat(&alg, Mat::diag(&[c(1.0, 0.0); 6]));
        let (e, _cert, check) = approximate_from_ordinary(&f, 0.01).unwrap();
        assert!(op_norm_element(&e.sub(&f)).upper < 1e-14);
        assert!(check.pass);
        // banded-but-decaying exact idempotent: conjugate a projection by a
        // banded similarity with decaying tail
        let mut s = Mat::identity(6);
        for i in 0..5 {
            s[(i, i + 1)] = c(0.05 / (i as f64 + 1.0).powi(3), 0.0);
        }
        let sinv = s.inverse().unwrap();
        let mut d = Mat::zeros(6, 6);
        for i in 0..3 {
            d[(i, i)] = c(1.0, 0.0);
        }
        let fm = s.mul(&d).mul(&sinv);
        let f2 = from_mat(&alg, fm);
        let (e2, cert2, check2) = approximate_from_ordinary(&f2, 0.01).unwrap();
        assert!(check2.pass, "{check2:?}");
        assert!(cert2.epsilon < 0.05);
        assert!(e2.propagation <= f2.propagation);
    }
}
