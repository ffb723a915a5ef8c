//! Representatives of quantitative K-classes, standard-picture
//! normalizations, relaxation of control, stability under matrix
//! amplification, and the algebra of control pairs (lambda, h).

use crate::algebra::{ElemData, FilteredElement};
use crate::linalg::Mat;
use crate::pnorm::{op_norm_element, STRICT_MARGIN};
use crate::quasi::{
    certify_inverse_pair, conjugation_homotopy, idempotent_residual,
    inverse_pair_residuals, promote, rotation, sample_ts, HomotopyPath, InversePair, PathKind,
    QCertificate, QuasiError, EPS_MAX,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum KClassError {
    #[error("relaxation parameters must dominate: {0}")]
    Relax(String),
    #[error("control pair not composable: lambda_N * eps = {0} leaves the admissible window")]
    NotComposable(f64),
    #[error("scalar part missing or not of the required form: {0}")]
    ScalarPart(String),
    #[error("scalar normalization failed: {0}")]
    ScalarNormalization(String),
    #[error(transparent)]
    Quasi(#[from] QuasiError),
}

pub type Result<T> = std::result::Result<T, KClassError>;

/// Closed-form evaluable in the variables eps and N: the expression grammar
/// for control-pair components.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "op", content = "args")]
pub enum CtrlExpr {
    Const(f64),
    N,
    Eps,
    Add(Box<CtrlExpr>, Box<CtrlExpr>),
    Mul(Box<CtrlExpr>, Box<CtrlExpr>),
    Pow(Box<CtrlExpr>, f64),
    /// f evaluated at substituted arguments (composition node)
    Subst {
        f: Box<CtrlExpr>,
        eps: Box<CtrlExpr>,
        n: Box<CtrlExpr>,
    },
}

impl CtrlExpr {
    pub fn eval(&self, eps: f64, n: f64) -> f64 {
        match self {
            CtrlExpr::Const(c) => *c,
            CtrlExpr::N => n,
            CtrlExpr::Eps => eps,
            CtrlExpr::Add(a, b) => a.eval(eps, n) + b.eval(eps, n),
            CtrlExpr::Mul(a, b) => a.eval(eps, n) * b.eval(eps, n),
            CtrlExpr::Pow(a, p) => a.eval(eps, n).powf(*p),
            CtrlExpr::Subst { f, eps: es, n: ns } => f.eval(es.eval(eps, n), ns.eval(eps, n)),
        }
    }

    pub fn c(v: f64) -> CtrlExpr {
        CtrlExpr::Const(v)
    }
    pub fn add(self, o: CtrlExpr) -> CtrlExpr {
        CtrlExpr::Add(Box::new(self), Box::new(o))
    }
    pub fn mul(self, o: CtrlExpr) -> CtrlExpr {
        CtrlExpr::Mul(Box::new(self), Box::new(o))
    }
    pub fn pow(self, p: f64) -> CtrlExpr {
        CtrlExpr::Pow(Box::new(self), p)
    }
}

/// A control pair (lambda, h): lambda nondecreasing on [1,inf), h(.,N)
/// nonincreasing in eps; both >= 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlPair {
    pub lambda: CtrlExpr,
    pub h: CtrlExpr,
    pub provenance: Vec<String>,
}

const EPS_GRID: [f64; 5] = [0.0005, 0.001, 0.005, 0.01, 0.04];
const N_GRID: [f64; 5] = [1.0, 1.5, 2.0, 4.0, 8.0];

impl ControlPair {
    pub fn identity() -> ControlPair {
        ControlPair {
            lambda: CtrlExpr::c(1.0),
            h: CtrlExpr::c(1.0),
            provenance: vec!["identity".into()],
        }
    }

    pub fn new(lambda: CtrlExpr, h: CtrlExpr, provenance: &str) -> ControlPair {
        ControlPair { lambda, h, provenance: vec![provenance.into()] }
    }

    pub fn lambda_at(&self, n: f64) -> f64 {
        self.lambda.eval(f64::NAN, n)
    }

    pub fn h_at(&self, eps: f64, n: f64) -> f64 {
        self.h.eval(eps, n)
    }

    /// lambda >= 1, h >= 1, lambda nondecreasing, h(., N) nonincreasing:
    /// spot-checked on the standard grid.
    pub fn well_formed(&self) -> bool {
        let mut prev_l = 0.0f64;
        for &n in &N_GRID {
            let l = self.lambda_at(n);
            if !(l >= 1.0) || l + 1e-12 < prev_l {
                return false;
            }
            prev_l = l;
            let mut prev_h = f64::INFINITY;
            for &e in &EPS_GRID {
                let h = self.h_at(e, n);
                if !(h >= 1.0) || h > prev_h + 1e-12 {
                    return false;
                }
                prev_h = h;
            }
        }
        true
    }

    /// Apply the pair to parameters: (lambda_N eps, h_{eps,N} r, lambda_N).
    pub fn apply(&self, cert: &QCertificate) -> QCertificate {
        let l = self.lambda_at(cert.n_bound);
        QCertificate::new(
            l * cert.epsilon,
            self.h_at(cert.epsilon, cert.n_bound) * cert.r,
            l * cert.n_bound,
        )
    }
}

impl ControlPair {
    /// Structurally the constant pair (1, 1): no parameter growth.
    pub fn is_identity(&self) -> bool {
        self.lambda == CtrlExpr::Const(1.0) && self.h == CtrlExpr::Const(1.0)
    }
}

/// Composite pair: (lambda'.lambda)_N = lambda'_{lambda_N} lambda_N and
/// (h'.h)_{eps,N} = h'_{lambda_N eps, lambda_N} h_{eps,N}.
/// Composition with a no-growth pair returns the other pair unchanged (the
/// composite of a controlled morphism with the identity morphism is itself).
pub fn compose_control(cp2: &ControlPair, cp1: &ControlPair) -> Result<ControlPair> {
    if cp2.is_identity() {
        return Ok(cp1.clone());
    }
    if cp1.is_identity() {
        return Ok(cp2.clone());
    }
    // composability: lambda_N * eps stays inside the admissible window
    for &n in &N_GRID {
        for &e in &EPS_GRID {
            let le = cp1.lambda_at(n) * e;
            if e < 0.001 && le >= EPS_MAX {
                return Err(KClassError::NotComposable(le));
            }
        }
    }
    let lam1 = cp1.lambda.clone();
    let lambda = CtrlExpr::Subst {
        f: Box::new(cp2.lambda.clone()),
        eps: Box::new(CtrlExpr::Eps),
        n: Box::new(lam1.clone()),
    }
    .mul(lam1.clone());
    let h = CtrlExpr::Subst {
        f: Box::new(cp2.h.clone()),
        eps: Box::new(lam1.clone().mul(CtrlExpr::Eps)),
        n: Box::new(lam1),
    }
    .mul(cp1.h.clone());
    let mut provenance = cp2.provenance.clone();
    provenance.extend(cp1.provenance.iter().cloned());
    Ok(ControlPair { lambda, h, provenance })
}

/// K0 class representative [e] - [I_k].
#[derive(Clone, Debug)]
pub struct KZeroRep {
    pub e: FilteredElement,
    pub k: usize,
    pub cert: QCertificate,
    pub scalar_part: Option<Mat>,
}

impl KZeroRep {
    pub fn new(e: &FilteredElement, k: usize, cert: QCertificate) -> KZeroRep {
        let e = promote(e);
        let scalar_part = e.scalar_part();
        KZeroRep { e, k, cert, scalar_part }
    }
}

/// K1 class representative [u] with companion quasi-inverse.
#[derive(Clone, Debug)]
pub struct KOneRep {
    pub pair: InversePair,
}

/// Canonical relaxation-of-control map: same element, enlarged certificate.
pub fn relax(cert: &QCertificate, eps: f64, r: f64, n: f64) -> Result<QCertificate> {
    if eps + STRICT_MARGIN < cert.epsilon || r + STRICT_MARGIN < cert.r || n + STRICT_MARGIN < cert.n_bound {
        return Err(KClassError::Relax(format!(
            "({eps}, {r}, {n}) does not dominate ({}, {}, {})",
            cert.epsilon, cert.r, cert.n_bound
        )));
    }
    if eof(eps) {
        return Err(KClassError::Relax(format!("eps {eps} outside the admissible window")));
    }
    let mut out = QCertificate::new(eps.max(cert.epsilon), r.max(cert.r), n.max(cert.n_bound));
    out.residuals = cert.residuals.clone();
    Ok(out)
}

fn eof(eps: f64) -> bool {
    eps >= EPS_MAX
}

/// First normal form: [e] - [f] = [e'] - [I_k] with e' = diag(e, I_k - f),
/// at unchanged parameters.
pub fn standard_picture_k0(
    e: &FilteredElement,
    f: &FilteredElement,
    cert: &QCertificate,
) -> Result<KZeroRep> {
    let (e, f) = (promote(e), promote(f));
    assert_eq!(e.blocks, f.blocks, "e and f must share the matrix size");
    let k = e.blocks;
    let one_k = FilteredElement::identity(&e.algebra, k);
    let eprime = e.block_diag(&one_k.sub(&f));
    Ok(KZeroRep::new(&eprime, k, cert.clone()))
}

/// The rotation homotopy of (eps, r, 5N/2)-idempotents between
/// diag(I_m, 0_m) and diag(g, I_m - g) used by the first normal form.
pub fn standard_picture_homotopy(
    g: &FilteredElement,
    cert: &QCertificate,
    samples: usize,
) -> HomotopyPath {
    let g = promote(g);
    let m = g.blocks;
    let alg = &g.algebra;
    let one_m = FilteredElement::identity(alg, m);
    let zero_m = FilteredElement::zero(alg, m);
    let g0 = g.block_diag(&zero_m);
    let cg0 = one_m.sub(&g).block_diag(&zero_m);
    let path: Vec<FilteredElement> = sample_ts(samples)
        .into_iter()
        .map(|t| {
            let (r, rinv) = rotation(alg, m, t);
            g0.add(&r.mul(&cg0).mul(&rinv))
        })
        .collect();
    let lip = crate::quasi::measured_lipschitz(&path) * 1.1;
    HomotopyPath {
        samples: path,
        inverses: None,
        lipschitz: lip,
        cert: QCertificate::new(cert.epsilon, cert.r, 2.5 * cert.n_bound),
        kind: PathKind::Idempotent,
    }
}

#[derive(Clone, Debug)]
pub struct ScalarNormalization {
    pub rep: KZeroRep,
    /// inverse pair (u, v) with || u pi(e') v - diag(I_k, 0) || small
    pub pair: InversePair,
    /// control pair actually incurred by this construction (measured)
    pub incurred: ControlPair,
    pub scalar_error: f64,
}

/// Second normal form: replace [e'] - [I_k] by [e''] - [I_k] with
/// pi(e'') = diag(I_k, 0) structurally, via an exact scalar similarity
/// u pi(e') u^{-1} ~ diag(I_k, 0). Returns the incurred control pair.
pub fn scalar_normalize_k0(rep: &KZeroRep) -> Result<ScalarNormalization> {
    let scalar = rep
        .scalar_part
        .clone()
        .ok_or_else(|| KClassError::ScalarPart("element has no unitization scalar part".into()))?;
    let m = rep.e.blocks;
    let k = rep.k;
    if scalar.rows != m || m != 2 * k {
        return Err(KClassError::ScalarPart(format!(
            "scalar part is {}x{}, expected {m}x{m} with m = 2k",
            scalar.rows, scalar.cols
        )));
    }
    // exact idempotent near the scalar part: Newton iteration onto the
    // spectral projection near 1
    let proj = scalar
        .idempotent_newton()
        .ok_or_else(|| KClassError::ScalarNormalization("spectral projection failed".into()))?;
    let resid = proj.mul(&proj).sub(&proj).max_abs();
    if resid > 1e-8 {
        return Err(KClassError::ScalarNormalization(format!(
            "scalar eigenprojection residual {resid}"
        )));
    }
    let rank = proj.trace().re.round() as i64;
    if rank != k as i64 {
        return Err(KClassError::ScalarNormalization(format!(
            "scalar class has rank {rank}, expected k = {k}"
        )));
    }
    // basis adapted to im(P) (+) im(I-P): B^{-1} P B = diag(I_k, 0)
    let b = adapted_basis(&proj, k).ok_or_else(|| {
        KClassError::ScalarNormalization("could not extract an adapted basis".into())
    })?;
    let binv = b
        .inverse()
        .ok_or_else(|| KClassError::ScalarNormalization("basis not invertible".into()))?;
    let u = binv; // u pi(e') u^{-1} ~ diag(I_k, 0)
    let v = b;
    let target = Mat::block_diag(&[&Mat::identity(k), &Mat::zeros(k, k)]);
    let scalar_error = u.mul(&scalar).mul(&v).sub(&target).max_abs();
    let ue = FilteredElement::from_scalar(&rep.e.algebra, &u);
    let ve = FilteredElement::from_scalar(&rep.e.algebra, &v);
    let upev = ue.mul(&rep.e).mul(&ve);
    let pi_elem = FilteredElement::from_scalar(&rep.e.algebra, &scalar);
    let upiv = ue.mul(&pi_elem).mul(&ve);
    let target_elem = FilteredElement::from_scalar(&rep.e.algebra, &target);
    let mut edd = upev.sub(&upiv).add(&target_elem);
    // structural snap: the scalar part is diag(I_k, 0) exactly by
    // construction (the two conjugations cancel); enforce it bit-exactly
    if let ElemData::Dense { scalar: s, .. } = &mut edd.data {
        if let Some(sm) = s {
            let drift = sm.sub(&target).max_abs();
            if drift > 1e-10 {
                return Err(KClassError::ScalarNormalization(format!(
                    "structural scalar drift {drift}"
                )));
            }
            *sm = target.clone();
        }
    }
    let new_resid = idempotent_residual(&edd).upper;
    let new_norm = op_norm_element(&edd)
        .upper
        .max(op_norm_element(&FilteredElement::identity(&edd.algebra, m).sub(&edd)).upper);
    // incurred control pair: measured output over input, as constants
    let lam = (new_resid / rep.cert.epsilon)
        .max(new_norm / rep.cert.n_bound)
        .max(scalar_error.max(1e-15) / rep.cert.epsilon)
        .max(1.0)
        * 1.0000001;
    let h = if rep.cert.r > 0.0 { (edd.propagation / rep.cert.r).max(1.0) } else { 1.0 };
    let incurred = ControlPair::new(
        CtrlExpr::c(lam),
        CtrlExpr::c(h),
        "scalar-normalization (measured)",
    );
    let out_cert = QCertificate::new(
        (lam * rep.cert.epsilon).min(new_resid + 1e-11).max(new_resid + 1e-13),
        edd.propagation.max(rep.cert.r),
        lam * rep.cert.n_bound,
    );
    if eof(out_cert.epsilon) {
        return Err(KClassError::ScalarNormalization(format!(
            "output epsilon {} outside the admissible window",
            out_cert.epsilon
        )));
    }
    let pair_cert = QCertificate::new(
        (scalar_error + 1e-12).min(EPS_MAX / 2.0),
        0.0,
        u.one_norm().max(v.one_norm()).max(1.0),
    );
    let pair = InversePair { u: ue, v: ve, cert: pair_cert };
    let mut out = KZeroRep::new(&edd, k, out_cert);
    out.scalar_part = Some(target);
    Ok(ScalarNormalization { rep: out, pair, incurred, scalar_error })
}

/// Columns adapted to im(P) then im(I-P), chosen by pivoted Gram-Schmidt.
fn adapted_basis(p: &Mat, k: usize) -> Option<Mat> {
    let m = p.rows;
    let q = Mat::identity(m).sub(p);
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    for (src, want) in [(p, k), (&q, m - k)] {
        let mut picked = 0usize;
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        for j in 0..m {
            if picked == want {
                break;
            }
            let mut col = src.column(j);
            // orthogonalize against already-picked columns of this block
            for b in &basis {
                let dot: Complex64 = b.iter().zip(col.iter()).map(|(x, y)| x.conj() * y).sum();
                for (ci, bi) in col.iter_mut().zip(b.iter()) {
                    *ci -= dot * bi;
                }
            }
            let norm: f64 = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-8 {
                let unit: Vec<Complex64> = col.iter().map(|z| z / norm).collect();
                basis.push(unit);
                // keep the raw (non-orthogonalized) column as the basis vector
                cols.push(src.column(j));
                picked += 1;
            }
        }
        if picked != want {
            return None;
        }
    }
    let mut b = Mat::zeros(m, m);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..m {
            b[(i, j)] = col[i];
        }
    }
    Some(b)
}

/// Strip the scalar part of a quasi-invertible: w = pi(u)^{-1} u with
/// pi(w) = I structurally. Output ((20N/19)^2 + 20/19) eps, r, 20 N^2/19).
pub fn normalize_k1(rep: &KOneRep) -> Result<KOneRep> {
    let u = &rep.pair.u;
    let v = &rep.pair.v;
    let cert = &rep.pair.cert;
    let pu = u
        .scalar_part()
        .ok_or_else(|| KClassError::ScalarPart("u has no unitization scalar part".into()))?;
    let pv = v
        .scalar_part()
        .ok_or_else(|| KClassError::ScalarPart("v has no unitization scalar part".into()))?;
    let pu_inv = pu
        .inverse()
        .ok_or_else(|| KClassError::ScalarPart("pi(u) not invertible".into()))?;
    let pv_inv = pv
        .inverse()
        .ok_or_else(|| KClassError::ScalarPart("pi(v) not invertible".into()))?;
    let pui = FilteredElement::from_scalar(&u.algebra, &pu_inv);
    let pvi = FilteredElement::from_scalar(&u.algebra, &pv_inv);
    let mut w = pui.mul(u);
    let mut wv = v.mul(&pvi);
    // structural snap: pi(w) = pi(u)^{-1} pi(u) = I exactly
    let idk = Mat::identity(u.blocks);
    for el in [&mut w, &mut wv] {
        if let ElemData::Dense { scalar: s, .. } = &mut el.data {
            if let Some(sm) = s {
                if sm.sub(&idk).max_abs() > 1e-9 {
                    return Err(KClassError::ScalarNormalization(
                        "scalar part of normalized invertible is not I".into(),
                    ));
                }
                *sm = idk.clone();
            }
        }
    }
    let n = cert.n_bound;
    let factor = 20.0 / 19.0;
    let eps_claim = ((factor * n).powi(2) + factor) * cert.epsilon;
    let n_claim = factor * n * n;
    let (a, b) = inverse_pair_residuals(&w, &wv);
    let resid = a.upper.max(b.upper);
    if resid + STRICT_MARGIN >= eps_claim.max(2e-11) {
        return Err(KClassError::ScalarNormalization(format!(
            "normalized pair residual {resid} exceeds the claimed bound {eps_claim}"
        )));
    }
    let out_cert = QCertificate::new(eps_claim.max(2e-11), cert.r, n_claim)
        .with("pair_residual", resid)
        .with("norm_w", op_norm_element(&w).upper);
    if eof(out_cert.epsilon) {
        return Err(KClassError::ScalarNormalization(format!(
            "output epsilon {} outside the admissible window",
            out_cert.epsilon
        )));
    }
    Ok(KOneRep { pair: InversePair { u: w, v: wv, cert: out_cert } })
}

/// The block permutation realizing the parenthesis-removal isomorphism:
/// images of the embedding M_k(A) -> M_k(M_n(A)) ~ M_{kn}(A) equal
/// u diag(e, 0) u^{-1} for this u.
pub fn stability_permutation(k: usize, n: usize) -> Mat {
    let m = k * n;
    let mut sigma = vec![usize::MAX; m];
    for i in 0..k {
        sigma[i * n] = i; // slot i*n reads from position i of diag(e, 0)
    }
    let mut next = k;
    for s in sigma.iter_mut() {
        if *s == usize::MAX {
            *s = next;
            next += 1;
        }
    }
    let mut u = Mat::zeros(m, m);
    for (slot, &src) in sigma.iter().enumerate() {
        u[(slot, src)] = Complex64::new(1.0, 0.0);
    }
    u
}

#[derive(Clone, Debug)]
pub struct StabilityRoundTrip {
    pub image: FilteredElement,
    pub homotopy: HomotopyPath,
}

/// Push a K0 representative through A -> M_n(A) -> (flatten) M_{kn}(A) and
/// return the conjugation homotopy witnessing diag(image, 0) ~ diag(e, 0)
/// as (4 eps, r, 4N)-idempotents.
pub fn stability_iso_k0(rep: &KZeroRep, n: usize, samples: usize) -> Result<StabilityRoundTrip> {
    let e = &rep.e;
    let k = e.blocks;
    if n == 1 {
        let cert = rep.cert.clone();
        let z = FilteredElement::zero(&e.algebra, k);
        let samples_vec = vec![e.block_diag(&z); samples.max(2)];
        return Ok(StabilityRoundTrip {
            image: e.clone(),
            homotopy: HomotopyPath {
                samples: samples_vec,
                inverses: None,
                lipschitz: 0.0,
                cert,
                kind: PathKind::Idempotent,
            },
        });
    }
    let u = stability_permutation(k, n);
    let uinv = u.transpose();
    let embedded = e.embed(k * n, false); // diag(e, 0_{k(n-1)})
    let image = embedded.conjugate_scalar(&u, &uinv);
    // certificate is preserved by the scalar permutation
    let pair = certify_inverse_pair(
        &FilteredElement::from_scalar(&e.algebra, &u),
        &FilteredElement::from_scalar(&e.algebra, &uinv),
    )?;
    let path = conjugation_homotopy(&embedded, &rep.cert, &pair, samples)?;
    Ok(StabilityRoundTrip { image, homotopy: path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{adjoin_unit, make_element, AlgebraInstance, ElementInput, PExp};
    use crate::quasi::{certify_idempotent, verify_path};
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

    fn affine_pair(a: f64, b: f64) -> ControlPair {
        // lambda_N = a N + b, h = a + b / eps-independent constant
        ControlPair::new(
            CtrlExpr::c(a).mul(CtrlExpr::N).add(CtrlExpr::c(b)),
            CtrlExpr::c(a + b),
            "affine",
        )
    }

    #[test]
    fn control_pair_identity_compose() {
        let cp = affine_pair(2.0, 1.0);
        let idl = compose_control(&ControlPair::identity(), &cp).unwrap();
        let idr = compose_control(&cp, &ControlPair::identity()).unwrap();
        for &n in &N_GRID {
            for &e in &EPS_GRID {
                assert!((idl.lambda_at(n) - cp.lambda_at(n)).abs() < 1e-12);
                assert!((idr.lambda_at(n) - cp.lambda_at(n)).abs() < 1e-12);
                assert!((idl.h_at(e, n) - cp.h_at(e, n)).abs() < 1e-12);
                assert!((idr.h_at(e, n) - cp.h_at(e, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn control_pair_affine_composition_value() {
        let cp1 = affine_pair(2.0, 1.0); // lambda_N = 2N+1
        let cp2 = ControlPair::new(
            CtrlExpr::c(3.0).mul(CtrlExpr::N),
            CtrlExpr::c(2.0),
            "affine2",
        );
        assert!(cp1.well_formed() && cp2.well_formed());
        let comp = compose_control(&cp2, &cp1).unwrap();
        let (e, n) = (0.001, 2.0);
        // lambda composite at N=2: lambda'_{lambda_N} lambda_N = (3*5)*5 = 75
        assert!((comp.lambda_at(n) - 75.0).abs() < 1e-12);
        // h composite: h'_{lambda_N e, lambda_N} * h_{e,N} = 2 * 3 = 6
        assert!((comp.h_at(e, n) - 6.0).abs() < 1e-12);
        assert!(comp.well_formed());
    }

    #[test]
    fn control_pair_associative_on_grid() {
        // constant-lambda pairs with eps-dependent h: the composition law is
        // associative pointwise on this class
        let a = ControlPair::new(
            CtrlExpr::c(2.0),
            CtrlExpr::c(1.0).add(CtrlExpr::c(0.001).mul(CtrlExpr::Eps.pow(-1.0))),
            "a",
        );
        let b = ControlPair::new(CtrlExpr::c(3.0), CtrlExpr::c(3.0), "b");
        let cpc = ControlPair::new(
            CtrlExpr::c(1.5),
            CtrlExpr::c(2.0).add(CtrlExpr::c(0.0002).mul(CtrlExpr::Eps.pow(-1.0))),
            "c",
        );
        let left = compose_control(&compose_control(&a, &b).unwrap(), &cpc).unwrap();
        let right = compose_control(&a, &compose_control(&b, &cpc).unwrap()).unwrap();
        for &n in &[1.0, 2.0, 3.0] {
            for &e in &[0.0001, 0.0005] {
                assert!((left.lambda_at(n) - right.lambda_at(n)).abs() < 1e-9);
                assert!((left.h_at(e, n) - right.h_at(e, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn control_pair_json_roundtrip() {
        let cp = compose_control(&affine_pair(2.0, 1.0), &affine_pair(1.0, 2.0)).unwrap();
        let s = serde_json::to_string(&cp).unwrap();
        let back: ControlPair = serde_json::from_str(&s).unwrap();
        for &n in &N_GRID {
            assert!((cp.lambda_at(n) - back.lambda_at(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn relax_properties() {
        let cert = QCertificate::new(0.01, 2.0, 1.5);
        let same = relax(&cert, 0.01, 2.0, 1.5).unwrap();
        assert_eq!(same.epsilon, cert.epsilon);
        let once = relax(&cert, 0.02, 3.0, 2.0).unwrap();
        let twice = relax(&relax(&cert, 0.015, 2.5, 1.8).unwrap(), 0.02, 3.0, 2.0).unwrap();
        assert_eq!(once.epsilon, twice.epsilon);
        assert_eq!(once.r, twice.r);
        assert_eq!(once.n_bound, twice.n_bound);
        assert!(relax(&cert, 0.005, 3.0, 2.0).is_err());
        assert!(relax(&cert, 0.05, 3.0, 2.0).is_err()); // boundary eps = 1/20
    }

    #[test]
    fn standard_picture_f_identity() {
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.01, 0.0)]));
        let f = FilteredElement::identity(&alg, 1);
        // f in M_1: compare in M_1, e must be M_1 too
        let e1 = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.01, 0.0)]));
        let _ = e;
        let cert = certify_idempotent(&e1, None).unwrap();
        let rep = standard_picture_k0(&e1, &f, &cert).unwrap();
        assert_eq!(rep.k, 1);
        assert_eq!(rep.e.blocks, 2);
        // e' = diag(e, 1 - I) = diag(e, 0)
        let z = FilteredElement::zero(&alg, 1);
        let want = e1.block_diag(&z);
        assert!(op_norm_element(&rep.e.sub(&want)).upper < 1e-12);
    }

    #[test]
    fn standard_picture_e_equals_f_rotation() {
        // e = f: e' = diag(e, I - e) is homotopic to diag(I, 0) via the
        // rotation path of (eps, r, 5N/2)-idempotents
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.01, 0.0)]));
        let cert = certify_idempotent(&e, None).unwrap();
        let path = standard_picture_homotopy(&e, &cert, 65);
        let m = e.blocks;
        let one_m = FilteredElement::identity(&alg, m);
        let zero_m = FilteredElement::zero(&alg, m);
        let start = one_m.block_diag(&zero_m);
        let end = e.block_diag(&one_m.sub(&e));
        assert!(op_norm_element(&path.start().sub(&start)).upper < 1e-12);
        assert!(op_norm_element(&path.end().sub(&end)).upper < 1e-12);
        let rep = verify_path(&path);
        assert!(rep.max_residual < cert.epsilon, "{rep:?}");
        assert!(rep.max_norm <= 2.5 * cert.n_bound + 1e-9, "{rep:?}");
    }

    fn unitized_roe(n: usize) -> AlgebraInstance {
        AlgebraInstance::interval_roe_nonunital(n, PExp::TWO)
    }

    #[test]
    fn scalar_normalization_small_instance() {
        // non-unital instance; e = diag(I_k, 0) + small inner part, f = I_k
        let alg = unitized_roe(3);
        let k = 2usize;
        // inner parts (in A) for e and f
        let mut em = Mat::zeros(3 * k, 3 * k);
        em[(0, 0)] = c(0.004, 0.0);
        em[(1, 1)] = c(-0.003, 0.001);
        let e_inner = from_mat(&alg, em);
        let mut e = adjoin_unit(&e_inner).unwrap();
        // add scalar diag(1, 0): e = inner + diag(1,0) (x) 1
        let sc = Mat::diag(&[c(1.0, 0.0), c(0.0, 0.0)]);
        e = e.add(&FilteredElement::from_scalar(&alg, &sc));
        // f shares the scalar class of e ([pi(e)] = [pi(f)] is required)
        let f_inner = from_mat(&alg, Mat::zeros(3 * k, 3 * k));
        let f = adjoin_unit(&f_inner)
            .unwrap()
            .add(&FilteredElement::from_scalar(&alg, &sc));
        let cert = certify_idempotent(&e, None).unwrap();
        let certf = certify_idempotent(&f, None).unwrap();
        let joint = QCertificate::new(
            cert.epsilon.max(certf.epsilon),
            cert.r.max(certf.r),
            cert.n_bound.max(certf.n_bound),
        );
        let rep = standard_picture_k0(&e, &f, &joint).unwrap();
        let norm = scalar_normalize_k0(&rep).unwrap();
        // structural scalar part
        let target = Mat::block_diag(&[&Mat::identity(k), &Mat::zeros(k, k)]);
        assert_eq!(
            norm.rep.e.scalar_part().unwrap().sub(&target).max_abs(),
            0.0
        );
        assert!(norm.scalar_error < 1e-9, "{}", norm.scalar_error);
        assert!(norm.incurred.well_formed());
        // kappa0-rank preserved: rank(pi-corrected idempotent) stays k
        let proj = norm.rep.e.dense().idempotent_newton().unwrap();
        let rank = proj.trace().re.round() as i64;
        let proj0 = rep.e.dense().idempotent_newton().unwrap();
        let rank0 = proj0.trace().re.round() as i64;
        assert_eq!(rank, rank0);
    }

    #[test]
    fn normalize_k1_trivial_and_scalar() {
        let alg = unitized_roe(3);
        // u = 1 + small inner: pi(u) = I, w = u
        let mut m = Mat::zeros(3, 3);
        m[(0, 1)] = c(0.01, 0.0);
        let inner = from_mat(&alg, m);
        let u = adjoin_unit(&inner)
            .unwrap()
            .add(&FilteredElement::from_scalar(&alg, &Mat::identity(1)));
        let mut m2 = Mat::zeros(3, 3);
        m2[(0, 1)] = c(-0.01, 0.0);
        let v = adjoin_unit(&from_mat(&alg, m2))
            .unwrap()
            .add(&FilteredElement::from_scalar(&alg, &Mat::identity(1)));
        let pair = certify_inverse_pair(&u, &v).unwrap();
        let rep = KOneRep { pair: pair.clone() };
        let out = normalize_k1(&rep).unwrap();
        assert!(op_norm_element(&out.pair.u.sub(&u)).upper < 1e-12);
        // scalar unitary times u: w strips the scalar
        let phase = Mat::diag(&[c(0.0, 1.0)]); // i
        let phase_inv = Mat::diag(&[c(0.0, -1.0)]);
        let us = FilteredElement::from_scalar(&alg, &phase).mul(&u);
        let vs = v.mul(&FilteredElement::from_scalar(&alg, &phase_inv));
        let spair = certify_inverse_pair(&us, &vs).unwrap();
        let sout = normalize_k1(&KOneRep { pair: spair }).unwrap();
        assert!(op_norm_element(&sout.pair.u.sub(&u)).upper < 1e-10);
        assert_eq!(
            sout.pair.u.scalar_part().unwrap().sub(&Mat::identity(1)).max_abs(),
            0.0
        );
    }

    #[test]
    fn normalize_k1_norm_bound_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let alg = unitized_roe(3);
        for _ in 0..10 {
            let mut m = Mat::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    if (i as i64 - j as i64).abs() <= 1 {
                        m[(i, j)] = c((rng.gen::<f64>() - 0.5) * 0.02, (rng.gen::<f64>() - 0.5) * 0.02);
                    }
                }
            }
            let scalar = Mat::diag(&[c(1.0 + (rng.gen::<f64>() - 0.5) * 0.01, 0.0)]);
            let u = adjoin_unit(&from_mat(&alg, m))
                .unwrap()
                .add(&FilteredElement::from_scalar(&alg, &scalar));
            // quasi-inverse by dense inversion (exact inverse has full
            // propagation; fine for the bound check)
            let ud = u.dense().clone();
            let uinv = match ud.inverse() {
                Some(mi) => mi,
                None => continue,
            };
            // scalar part of the inverse is scalar^{-1}
            let sinv = scalar.inverse().unwrap();
            let inner = uinv.sub(&sinv.kron(&Mat::identity(3)));
            let v = adjoin_unit(&from_mat(&alg, inner))
                .unwrap()
                .add(&FilteredElement::from_scalar(&alg, &sinv));
            let pair = match certify_inverse_pair(&u, &v) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let out = normalize_k1(&KOneRep { pair: pair.clone() }).unwrap();
            let n = pair.cert.n_bound;
            let w_norm = op_norm_element(&out.pair.u).upper;
            assert!(w_norm < 20.0 / 19.0 * n * n + 1e-9, "{w_norm} vs N = {n}");
        }
    }

    #[test]
    fn stability_identity_n1() {
        let alg = roe(2);
        let e = from_mat(&alg, Mat::diag(&[c(1.0, 0.0), c(0.0, 0.0)]));
        let cert = certify_idempotent(&e, None).unwrap();
        let rep = KZeroRep::new(&e, 0, cert);
        let rt = stability_iso_k0(&rep, 1, 5).unwrap();
        assert!(op_norm_element(&rt.image.sub(&e)).upper < 1e-12);
    }

    #[test]
    fn stability_round_trip() {
        let alg = roe(2);
        let e = from_mat(
            &alg,
            Mat::from_real_rows(&[
                vec![1.0, 0.005, 0.0, 0.0],
                vec![0.0, 0.01, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ]),
        );
        let cert = certify_idempotent(&e, None).unwrap();
        let cert = QCertificate::new(0.011, cert.r, cert.n_bound);
        let rep = KZeroRep::new(&e, 0, cert.clone());
        let n = 3usize;
        let rt = stability_iso_k0(&rep, n, 33).unwrap();
        // permutation conjugation preserves the certificate
        let c_img = certify_idempotent(&rt.image, Some(cert.n_bound)).unwrap();
        assert!(c_img.epsilon <= cert.epsilon + 1e-9);
        // homotopy endpoints: diag(image-embedded...) per conjugation path
        let hrep = verify_path(&rt.homotopy);
        assert!(hrep.max_residual < rt.homotopy.cert.epsilon, "{hrep:?}");
        assert!(rt.homotopy.cert.epsilon <= 4.0 * cert.epsilon + 1e-6);
        assert!(rt.homotopy.cert.n_bound <= 4.0 * cert.n_bound + 1e-6);
        // entries of the image equal the embedding pattern: position (i*n, j*n)
        let k = e.blocks;
        let d = alg.dim();
        let img = rt.image.dense();
        let emb = e.dense();
        for bi in 0..k {
            for bj in 0..k {
                for x in 0..d {
                    for y in 0..d {
                        let got = img[(bi * n * d + x, bj * n * d + y)];
                        let want = emb[(bi * d + x, bj * d + y)];
                        assert!((got - want).norm() < 1e-13);
                    }
                }
            }
        }
    }
}
