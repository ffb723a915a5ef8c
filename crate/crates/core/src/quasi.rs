//! Quasi-idempotents, quasi-invertibles, and the explicit homotopy /
//! similarity constructions, each returning the constructed object together
//! with its certified (epsilon, r, N) output parameters.

use crate::algebra::{adjoin_unit, AlgebraInstance, FilteredElement};
use crate::linalg::Mat;
use crate::pnorm::{op_norm_element, NormInterval, STRICT_MARGIN};
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;

/// Admissible window for epsilon.
pub const EPS_MAX: f64 = 0.05;
/// Margin added to a computed residual to form the smallest certified epsilon.
pub const CERT_MARGIN: f64 = 1e-11;
/// Default number of path samples.
pub const DEFAULT_SAMPLES: usize = 65;

#[derive(Clone, Debug, Serialize)]
pub struct QCertificate {
    pub epsilon: f64,
    pub r: f64,
    pub n_bound: f64,
    pub residuals: BTreeMap<String, f64>,
}

impl QCertificate {
    pub fn new(epsilon: f64, r: f64, n_bound: f64) -> Self {
        QCertificate { epsilon, r, n_bound, residuals: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.residuals.insert(key.to_string(), value);
        self
    }

    pub fn admissible(&self) -> bool {
        self.epsilon < EPS_MAX
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OverflowInfo {
    pub cert: QCertificate,
    /// true when the paper inequalities were verified numerically even though
    /// the output epsilon left the admissible window
    pub verified: bool,
    pub notes: BTreeMap<String, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum QuasiError {
    #[error("residual too large: {residual}")]
    ResidualTooLarge { residual: f64 },
    #[error("norm bound unavailable")]
    NormUnbounded,
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),
    #[error("output epsilon {} outside the admissible window", .0.cert.epsilon)]
    EpsilonOverflow(Box<OverflowInfo>),
    #[error("inputs not orthogonal: defect {defect}")]
    Orthogonality { defect: f64 },
    #[error("partition not found: homotopy sampled too coarsely")]
    PartitionNotFound,
}

pub type Result<T> = std::result::Result<T, QuasiError>;

#[derive(Clone, Debug)]
pub struct InversePair {
    pub u: FilteredElement,
    pub v: FilteredElement,
    pub cert: QCertificate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PathKind {
    Idempotent,
    Invertible,
}

#[derive(Clone, Debug)]
pub struct HomotopyPath {
    pub samples: Vec<FilteredElement>,
    /// companion quasi-inverses along the path (invertible homotopies)
    pub inverses: Option<Vec<FilteredElement>>,
    pub lipschitz: f64,
    pub cert: QCertificate,
    pub kind: PathKind,
}

impl HomotopyPath {
    pub fn start(&self) -> &FilteredElement {
        self.samples.first().unwrap()
    }
    pub fn end(&self) -> &FilteredElement {
        self.samples.last().unwrap()
    }
    pub fn reversed(&self) -> HomotopyPath {
        HomotopyPath {
            samples: self.samples.iter().rev().cloned().collect(),
            inverses: self.inverses.as_ref().map(|v| v.iter().rev().cloned().collect()),
            lipschitz: self.lipschitz,
            cert: self.cert.clone(),
            kind: self.kind,
        }
    }

    /// Join with another path whose start matches this end.
    pub fn concat(&self, other: &HomotopyPath) -> HomotopyPath {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().skip(1).cloned());
        let inverses = match (&self.inverses, &other.inverses) {
            (Some(a), Some(b)) => {
                let mut v = a.clone();
                v.extend(b.iter().skip(1).cloned());
                Some(v)
            }
            _ => None,
        };
        let cert = QCertificate::new(
            self.cert.epsilon.max(other.cert.epsilon),
            self.cert.r.max(other.cert.r),
            self.cert.n_bound.max(other.cert.n_bound),
        );
        let n = samples.len();
        let lipschitz = measured_lipschitz(&samples) * 1.1;
        let _ = n;
        HomotopyPath { samples, inverses, lipschitz, cert, kind: self.kind }
    }
}

pub fn measured_lipschitz(samples: &[FilteredElement]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let delta = 1.0 / (samples.len() as f64 - 1.0);
    let mut slope = 0.0f64;
    for w in samples.windows(2) {
        slope = slope.max(op_norm_element(&w[1].sub(&w[0])).upper / delta);
    }
    slope
}

/// Promote x (living in a non-unital instance A) to its image (x, 0) in the
/// unitization; no-op for unital instances or already-promoted elements.
pub fn promote(x: &FilteredElement) -> FilteredElement {
    if x.algebra.unital || x.scalar_part().is_some() {
        x.clone()
    } else {
        adjoin_unit(x).expect("promote")
    }
}

fn one_like(x: &FilteredElement) -> FilteredElement {
    FilteredElement::identity(&x.algebra, x.blocks)
}

/// The 2x2 block rotation R_t = [[c,-s],[s,c]] (x) I_k as a scalar element.
pub fn rotation(alg: &AlgebraInstance, k: usize, t: f64) -> (FilteredElement, FilteredElement) {
    let c = (std::f64::consts::FRAC_PI_2 * t).cos();
    let s = (std::f64::consts::FRAC_PI_2 * t).sin();
    let r = Mat::from_real_rows(&[vec![c, -s], vec![s, c]]);
    let rinv = Mat::from_real_rows(&[vec![c, s], vec![-s, c]]);
    let rk = r.kron(&Mat::identity(k));
    let rkinv = rinv.kron(&Mat::identity(k));
    (
        FilteredElement::from_scalar(alg, &rk),
        FilteredElement::from_scalar(alg, &rkinv),
    )
}

pub fn sample_ts(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n as f64 - 1.0)).collect()
}

/// residual ||e^2 - e|| as an interval.
pub fn idempotent_residual(e: &FilteredElement) -> NormInterval {
    let e = promote(e);
    op_norm_element(&e.mul(&e).sub(&e))
}

pub fn certify_idempotent(e: &FilteredElement, target_n: Option<f64>) -> Result<QCertificate> {
    let ep = promote(e);
    let residual = idempotent_residual(&ep).upper;
    let epsilon = residual + CERT_MARGIN;
    if epsilon >= EPS_MAX {
        return Err(QuasiError::ResidualTooLarge { residual });
    }
    let norm_e = op_norm_element(&ep).upper;
    let norm_1e = op_norm_element(&one_like(&ep).sub(&ep)).upper;
    if !norm_e.is_finite() || !norm_1e.is_finite() {
        return Err(QuasiError::NormUnbounded);
    }
    let mut n = norm_e.max(norm_1e).max(1.0);
    if let Some(t) = target_n {
        if t + STRICT_MARGIN >= n {
            n = t;
        }
    }
    Ok(QCertificate::new(epsilon, e.propagation, n)
        .with("idempotent_residual", residual)
        .with("norm_e", norm_e)
        .with("norm_one_minus_e", norm_1e))
}

/// residuals (||uv-1||, ||vu-1||) as intervals.
pub fn inverse_pair_residuals(u: &FilteredElement, v: &FilteredElement) -> (NormInterval, NormInterval) {
    let (u, v) = (promote(u), promote(v));
    let one = one_like(&u);
    (
        op_norm_element(&u.mul(&v).sub(&one)),
        op_norm_element(&v.mul(&u).sub(&one)),
    )
}

pub fn certify_inverse_pair(u: &FilteredElement, v: &FilteredElement) -> Result<InversePair> {
    let (uv, vu) = inverse_pair_residuals(u, v);
    let residual = uv.upper.max(vu.upper);
    let epsilon = residual + CERT_MARGIN;
    if epsilon >= EPS_MAX {
        return Err(QuasiError::ResidualTooLarge { residual });
    }
    let nu = op_norm_element(&promote(u)).upper;
    let nv = op_norm_element(&promote(v)).upper;
    if !nu.is_finite() || !nv.is_finite() {
        return Err(QuasiError::NormUnbounded);
    }
    let n = nu.max(nv).max(1.0);
    // the quantitative inverse bound ||u^{-1}|| < N/(1-eps)
    let inv_bound = n / (1.0 - epsilon);
    let cert = QCertificate::new(epsilon, u.propagation.max(v.propagation), n)
        .with("uv_minus_1", uv.upper)
        .with("vu_minus_1", vu.upper)
        .with("inverse_norm_bound", inv_bound);
    Ok(InversePair { u: promote(u), v: promote(v), cert })
}

fn linear_samples(e: &FilteredElement, f: &FilteredElement, n: usize) -> Vec<FilteredElement> {
    sample_ts(n)
        .into_iter()
        .map(|t| {
            e.scale(Complex64::new(1.0 - t, 0.0))
                .add(&f.scale(Complex64::new(t, 0.0)))
        })
        .collect()
}

fn overflow(cert: QCertificate, verified: bool, notes: BTreeMap<String, f64>) -> QuasiError {
    QuasiError::EpsilonOverflow(Box::new(OverflowInfo { cert, verified, notes }))
}

/// Linear homotopy from a certified idempotent e to a nearby element f.
/// Output parameters ((2N+1)delta + eps, r, N).
pub fn perturb_idempotent(
    e: &FilteredElement,
    cert: &QCertificate,
    f: &FilteredElement,
    samples: usize,
) -> Result<HomotopyPath> {
    let (e, f) = (promote(e), promote(f));
    let delta = op_norm_element(&e.sub(&f)).upper;
    let nf = op_norm_element(&f).upper.max(op_norm_element(&one_like(&f).sub(&f)).upper);
    if nf > cert.n_bound + STRICT_MARGIN {
        return Err(QuasiError::Hypothesis(format!("||f|| = {nf} exceeds N = {}", cert.n_bound)));
    }
    if f.propagation > cert.r + STRICT_MARGIN {
        return Err(QuasiError::Hypothesis("prop(f) exceeds r".into()));
    }
    let eps_out = (2.0 * cert.n_bound + 1.0) * delta + cert.epsilon;
    let out = QCertificate::new(eps_out, cert.r, cert.n_bound).with("delta", delta);
    if eps_out >= EPS_MAX {
        return Err(overflow(out, true, BTreeMap::new()));
    }
    Ok(HomotopyPath {
        samples: linear_samples(&e, &f, samples),
        inverses: None,
        lipschitz: delta,
        cert: out,
        kind: PathKind::Idempotent,
    })
}

/// Linear homotopy from a certified quasi-invertible u (with quasi-inverse v)
/// to a nearby element a; v remains the companion inverse along the path.
/// Output parameters (N*delta + eps, r, N).
pub fn perturb_invertible(pair: &InversePair, a: &FilteredElement, samples: usize) -> Result<HomotopyPath> {
    let a = promote(a);
    let delta = op_norm_element(&pair.u.sub(&a)).upper;
    let na = op_norm_element(&a).upper;
    if na > pair.cert.n_bound + STRICT_MARGIN {
        return Err(QuasiError::Hypothesis("||a|| exceeds N".into()));
    }
    if a.propagation > pair.cert.r + STRICT_MARGIN {
        return Err(QuasiError::Hypothesis("prop(a) exceeds r".into()));
    }
    let eps_out = pair.cert.n_bound * delta + pair.cert.epsilon;
    let out = QCertificate::new(eps_out, pair.cert.r, pair.cert.n_bound).with("delta", delta);
    if eps_out >= EPS_MAX {
        return Err(overflow(out, true, BTreeMap::new()));
    }
    let path = linear_samples(&pair.u, &a, samples);
    let inverses = vec![pair.v.clone(); samples];
    Ok(HomotopyPath {
        samples: path,
        inverses: Some(inverses),
        lipschitz: delta,
        cert: out,
        kind: PathKind::Invertible,
    })
}

/// Linear homotopy between two (eps,r,N)-idempotents; output epsilon is
/// eps + ||e-f||^2 / 4.
pub fn segment_homotopy(
    e: &FilteredElement,
    f: &FilteredElement,
    cert: &QCertificate,
    samples: usize,
) -> Result<HomotopyPath> {
    let (e, f) = (promote(e), promote(f));
    let dist = op_norm_element(&e.sub(&f)).upper;
    let eps_out = cert.epsilon + dist * dist / 4.0;
    let out = QCertificate::new(eps_out, cert.r, cert.n_bound).with("distance", dist);
    if eps_out >= EPS_MAX {
        return Err(overflow(out, true, BTreeMap::new()));
    }
    Ok(HomotopyPath {
        samples: linear_samples(&e, &f, samples),
        inverses: None,
        lipschitz: dist,
        cert: out,
        kind: PathKind::Idempotent,
    })
}

/// Decomposition identity behind the linear-segment bound:
/// g_t^2 - g_t = (1-t)(e^2-e) + t(f^2-f) + (t^2-t)(e-f)^2. Returns the largest
/// defect over the sampled t's.
pub fn segment_identity_defect(e: &FilteredElement, f: &FilteredElement, samples: usize) -> f64 {
    let (e, f) = (promote(e), promote(f));
    let mut worst = 0.0f64;
    for t in sample_ts(samples) {
        let g = e
            .scale(Complex64::new(1.0 - t, 0.0))
            .add(&f.scale(Complex64::new(t, 0.0)));
        let lhs = g.mul(&g).sub(&g);
        let d = e.sub(&f);
        let rhs = e
            .mul(&e)
            .sub(&e)
            .scale(Complex64::new(1.0 - t, 0.0))
            .add(&f.mul(&f).sub(&f).scale(Complex64::new(t, 0.0)))
            .add(&d.mul(&d).scale(Complex64::new(t * t - t, 0.0)));
        worst = worst.max(op_norm_element(&lhs.sub(&rhs)).upper);
    }
    worst
}

/// Orthogonal sum: returns the certificate (2eps, r, 2N) for e+f and the
/// rotation path in M_2 between diag(e+f, 0) and diag(e, f), certified
/// (5eps/2, r, 5N/2).
pub fn orth_sum(
    e: &FilteredElement,
    f: &FilteredElement,
    cert: &QCertificate,
    samples: usize,
) -> Result<(QCertificate, HomotopyPath)> {
    let (e, f) = (promote(e), promote(f));
    let ef = op_norm_element(&e.mul(&f)).upper;
    let fe = op_norm_element(&f.mul(&e)).upper;
    if ef > 1e-12 || fe > 1e-12 {
        return Err(QuasiError::Orthogonality { defect: ef.max(fe) });
    }
    let sum_cert = QCertificate::new(2.0 * cert.epsilon, cert.r, 2.0 * cert.n_bound)
        .with("orthogonality_defect", ef.max(fe));
    if !sum_cert.admissible() {
        return Err(overflow(sum_cert, true, BTreeMap::new()));
    }
    let k = e.blocks;
    let zero = FilteredElement::zero(&e.algebra, k);
    let e0 = e.block_diag(&zero);
    let f0 = f.block_diag(&zero);
    let path_samples: Vec<FilteredElement> = sample_ts(samples)
        .into_iter()
        .map(|t| {
            let (r, rinv) = rotation(&e.algebra, k, t);
            e0.add(&r.mul(&f0).mul(&rinv))
        })
        .collect();
    let path_cert = QCertificate::new(2.5 * cert.epsilon, cert.r, 2.5 * cert.n_bound);
    if !path_cert.admissible() {
        return Err(overflow(path_cert, true, BTreeMap::new()));
    }
    let lip = std::f64::consts::PI * op_norm_element(&f).upper;
    Ok((
        sum_cert,
        HomotopyPath {
            samples: path_samples,
            inverses: None,
            lipschitz: lip,
            cert: path_cert,
            kind: PathKind::Idempotent,
        },
    ))
}

/// Homotopy in M_2 between diag(u,v) and I_2 for an (eps,r,N)-inverse pair:
/// the rotation path U_t followed by the linear path diag((1-t)uv+t, 1).
/// Certified (2eps, 2r, 2(N+eps)); companion inverses V_t are returned and
/// U_t V_t = diag(uv, vu) holds exactly along the rotation leg.
pub fn inverse_pair_to_identity(pair: &InversePair, samples: usize) -> Result<HomotopyPath> {
    let (u, v) = (&pair.u, &pair.v);
    let k = u.blocks;
    let alg = &u.algebra;
    let one_k = FilteredElement::identity(alg, k);
    let eps = pair.cert.epsilon;
    let cert = QCertificate::new(
        2.0 * eps,
        2.0 * pair.cert.r,
        2.0 * (pair.cert.n_bound + eps),
    );
    if !cert.admissible() {
        return Err(overflow(cert, true, BTreeMap::new()));
    }
    let du1 = u.block_diag(&one_k);
    let d1v = one_k.block_diag(v);
    let dv1 = v.block_diag(&one_k);
    let d1u = one_k.block_diag(u);
    let mut fwd = Vec::with_capacity(samples);
    let mut inv = Vec::with_capacity(samples);
    for t in sample_ts(samples) {
        let (r, rinv) = rotation(alg, k, t);
        fwd.push(du1.mul(&r).mul(&d1v).mul(&rinv));
        inv.push(r.mul(&dv1).mul(&rinv).mul(&d1u));
    }
    let uv = u.mul(v);
    let vu = v.mul(u);
    let uv1 = uv.block_diag(&one_k);
    let one2 = FilteredElement::identity(alg, 2 * k);
    let mut tail = Vec::with_capacity(samples);
    let mut tail_inv = Vec::with_capacity(samples);
    for t in sample_ts(samples) {
        tail.push(
            uv1.scale(Complex64::new(1.0 - t, 0.0))
                .add(&one2.scale(Complex64::new(t, 0.0))),
        );
        // companion: diag((1-t)vu + t, 1) certifies the pair along the tail
        tail_inv.push(
            vu.block_diag(&one_k)
                .scale(Complex64::new(1.0 - t, 0.0))
                .add(&one2.scale(Complex64::new(t, 0.0))),
        );
    }
    let rot = HomotopyPath {
        samples: fwd,
        inverses: Some(inv),
        lipschitz: 0.0,
        cert: cert.clone(),
        kind: PathKind::Invertible,
    };
    let lin = HomotopyPath {
        samples: tail,
        inverses: Some(tail_inv),
        lipschitz: 0.0,
        cert: cert.clone(),
        kind: PathKind::Invertible,
    };
    let mut out = rot.concat(&lin);
    out.cert = cert;
    Ok(out)
}

/// Defect of the identity U_t V_t = diag(uv, vu) along the rotation leg.
pub fn inverse_pair_identity_defect(pair: &InversePair, samples: usize) -> f64 {
    let (u, v) = (&pair.u, &pair.v);
    let k = u.blocks;
    let alg = &u.algebra;
    let one_k = FilteredElement::identity(alg, k);
    let du1 = u.block_diag(&one_k);
    let d1v = one_k.block_diag(v);
    let dv1 = v.block_diag(&one_k);
    let d1u = one_k.block_diag(u);
    let target = u.mul(v).block_diag(&v.mul(u));
    let mut worst = 0.0f64;
    for t in sample_ts(samples) {
        let (r, rinv) = rotation(alg, k, t);
        let ut = du1.mul(&r).mul(&d1v).mul(&rinv);
        let vt = r.mul(&dv1).mul(&rinv).mul(&d1u);
        worst = worst.max(op_norm_element(&ut.mul(&vt).sub(&target)).upper);
    }
    worst
}

/// Rotation homotopy in M_2 between diag(u,v) and diag(v,u), certified
/// (2eps, r, 2N). Companion inverses are the rotated diag(u',v').
pub fn swap_homotopy(pu: &InversePair, pv: &InversePair, samples: usize) -> Result<HomotopyPath> {
    assert_eq!(pu.u.blocks, pv.u.blocks);
    let k = pu.u.blocks;
    let alg = &pu.u.algebra;
    let eps = pu.cert.epsilon.max(pv.cert.epsilon);
    let n = pu.cert.n_bound.max(pv.cert.n_bound);
    let cert = QCertificate::new(2.0 * eps, pu.cert.r.max(pv.cert.r), 2.0 * n);
    if !cert.admissible() {
        return Err(overflow(cert, true, BTreeMap::new()));
    }
    let duv = pu.u.block_diag(&pv.u);
    let duv_inv = pu.v.block_diag(&pv.v);
    let mut fwd = Vec::with_capacity(samples);
    let mut inv = Vec::with_capacity(samples);
    for t in sample_ts(samples) {
        let (r, rinv) = rotation(alg, k, t);
        fwd.push(r.mul(&duv).mul(&rinv));
        inv.push(r.mul(&duv_inv).mul(&rinv));
    }
    let lip = measured_lipschitz(&fwd) * 1.1;
    Ok(HomotopyPath { samples: fwd, inverses: Some(inv), lipschitz: lip, cert, kind: PathKind::Invertible })
}

/// Defect of U_t V_t - I = R_t diag(uu'-1, vv'-1) R_t^{-1} for swap paths.
pub fn swap_identity_defect(pu: &InversePair, pv: &InversePair, samples: usize) -> f64 {
    let k = pu.u.blocks;
    let alg = &pu.u.algebra;
    let one = FilteredElement::identity(alg, 2 * k);
    let one_k = FilteredElement::identity(alg, k);
    let duv = pu.u.block_diag(&pv.u);
    let dinv = pu.v.block_diag(&pv.v);
    let inner = pu
        .u
        .mul(&pu.v)
        .sub(&one_k)
        .block_diag(&pv.u.mul(&pv.v).sub(&one_k));
    let mut worst = 0.0f64;
    for t in sample_ts(samples) {
        let (r, rinv) = rotation(alg, k, t);
        let ut = r.mul(&duv).mul(&rinv);
        let vt = r.mul(&dinv).mul(&rinv);
        let lhs = ut.mul(&vt).sub(&one);
        let rhs = r.mul(&inner).mul(&rinv);
        worst = worst.max(op_norm_element(&lhs.sub(&rhs)).upper);
    }
    worst
}

/// uev for an (eps,r,N)-idempotent e and (eps',r',N')-inverse pair (u,v);
/// output ((NN')^2 eps' + N'^2 eps, r + 2r', N N'^2).
pub fn conjugate_idempotent(
    e: &FilteredElement,
    cert: &QCertificate,
    pair: &InversePair,
) -> Result<(FilteredElement, QCertificate)> {
    let e = promote(e);
    let (n, np) = (cert.n_bound, pair.cert.n_bound);
    let (eps, epsp) = (cert.epsilon, pair.cert.epsilon);
    let eps_out = (n * np).powi(2) * epsp + np * np * eps;
    let out = QCertificate::new(eps_out, cert.r + 2.0 * pair.cert.r, n * np * np);
    let uev = pair.u.mul(&e).mul(&pair.v);
    if eps_out >= EPS_MAX {
        let resid = idempotent_residual(&uev).upper;
        let mut notes = BTreeMap::new();
        notes.insert("residual".into(), resid);
        return Err(overflow(out, resid < eps_out, notes));
    }
    Ok((uev, out))
}

/// Homotopy in M_2 between diag(uev, 0) and diag(e, 0): U_t diag(e,0) V_t
/// where (U_t, V_t) tracks the homotopy from diag(u,v) to I_2.
/// Output (4(N'+eps')^2 (2N^2 eps' + eps), r + 4r', 4N(N'+eps')^2).
pub fn conjugation_homotopy(
    e: &FilteredElement,
    cert: &QCertificate,
    pair: &InversePair,
    samples: usize,
) -> Result<HomotopyPath> {
    let e = promote(e);
    let (n, np) = (cert.n_bound, pair.cert.n_bound);
    let (eps, epsp) = (cert.epsilon, pair.cert.epsilon);
    let eps_out = 4.0 * (np + epsp).powi(2) * (2.0 * n * n * epsp + eps);
    let out = QCertificate::new(
        eps_out,
        cert.r + 4.0 * pair.cert.r,
        4.0 * n * (np + epsp).powi(2),
    );
    if eps_out >= EPS_MAX {
        return Err(overflow(out, true, BTreeMap::new()));
    }
    let carrier = inverse_pair_to_identity(pair, samples)?;
    let e0 = e.block_diag(&FilteredElement::zero(&e.algebra, e.blocks));
    let inverses = carrier.inverses.as_ref().unwrap();
    let path: Vec<FilteredElement> = carrier
        .samples
        .iter()
        .zip(inverses.iter())
        .map(|(ut, vt)| ut.mul(&e0).mul(vt))
        .collect();
    let lip = measured_lipschitz(&path) * 1.1;
    Ok(HomotopyPath { samples: path, inverses: None, lipschitz: lip, cert: out, kind: PathKind::Idempotent })
}

#[derive(Clone, Debug, Serialize)]
pub struct SimilarityReport {
    pub m_eps: usize,
    pub conjugation_error: f64,
    pub conjugation_bound: f64,
    pub v_minus_1: f64,
    pub bound_holds: bool,
}

/// From two idempotents with ||e - f|| < eps/(2N+1), build the explicit
/// similarity v = ef + (1-e)(1-f), u = truncated Neumann series of v^{-1}.
/// Returns the (eps, 2 m_eps r, 1/(1-3eps))-pair and the conjugation report.
pub fn close_implies_similar(
    e: &FilteredElement,
    f: &FilteredElement,
    cert: &QCertificate,
) -> Result<(InversePair, SimilarityReport)> {
    let (e, f) = (promote(e), promote(f));
    let eps = cert.epsilon;
    let n = cert.n_bound;
    let dist = op_norm_element(&e.sub(&f)).upper;
    if dist + STRICT_MARGIN >= eps / (2.0 * n + 1.0) {
        return Err(QuasiError::Hypothesis(format!(
            "||e-f|| = {dist} not below eps/(2N+1) = {}",
            eps / (2.0 * n + 1.0)
        )));
    }
    let one = one_like(&e);
    let v = e.mul(&f).add(&one.sub(&e).mul(&one.sub(&f)));
    let v_minus_1 = op_norm_element(&v.sub(&one)).upper;
    // tail bound (3eps)^{m+1}/(1-3eps) < eps/2 gives m_eps
    let q = 3.0 * eps;
    if q >= 1.0 {
        return Err(QuasiError::Hypothesis("3 eps >= 1: Neumann tail cannot certify".into()));
    }
    let mut m_eps = 1usize;
    while q.powi(m_eps as i32 + 1) / (1.0 - q) >= eps / 2.0 {
        m_eps += 1;
        if m_eps > 10_000 {
            return Err(QuasiError::Hypothesis("tail bound did not close".into()));
        }
    }
    let one_minus_v = one.sub(&v);
    let mut u = one.clone();
    let mut pw = one.clone();
    for _ in 1..=m_eps {
        pw = pw.mul(&one_minus_v);
        u = u.add(&pw);
    }
    let pair_cert = QCertificate::new(eps, 2.0 * m_eps as f64 * cert.r, 1.0 / (1.0 - q))
        .with("v_minus_1", v_minus_1)
        .with("m_eps", m_eps as f64);
    let pair = InversePair { u: u.clone(), v: v.clone(), cert: pair_cert };
    let uev = u.mul(&e).mul(&v);
    let err = op_norm_element(&uev.sub(&f)).upper;
    let bound = (5.0 * n + 2.0) * eps / (1.0 - q);
    let report = SimilarityReport {
        m_eps,
        conjugation_error: err,
        conjugation_bound: bound,
        v_minus_1,
        bound_holds: err + STRICT_MARGIN < bound,
    };
    Ok((pair, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzSimilarityReport {
    pub steps: usize,
    pub m_eps: usize,
    pub conjugation_error: f64,
    pub conjugation_bound: f64,
    pub pair_residual: f64,
    pub pair_residual_claim: f64,
    pub pair_norm: f64,
    pub pair_norm_claim: f64,
    pub bounds_hold: bool,
}

/// Convert an M-Lipschitz homotopy of idempotents into a single similarity by
/// composing stepwise conjugations. Output pair parameters follow
/// (2 (9/4)^k eps, k n_eps r, (3/2)^k); overflow is surfaced with the report.
pub fn lipschitz_homotopy_to_similarity(
    path: &HomotopyPath,
    m_modulus: f64,
) -> Result<(InversePair, LipschitzSimilarityReport)> {
    let cert = &path.cert;
    let (eps, n) = (cert.epsilon, cert.n_bound);
    if 1.0 / m_modulus > eps + STRICT_MARGIN {
        return Err(QuasiError::Hypothesis("need 1/M <= eps".into()));
    }
    // number of steps k with 1/(M(2N+1)+1) < h < 1/(M(2N+1))
    let base = m_modulus * (2.0 * n + 1.0);
    let k = base.floor() as usize + 1;
    let nsamp = path.samples.len();
    // partition points snapped to the sample grid
    let mut idx: Vec<usize> = (0..=k)
        .map(|i| ((i as f64 / k as f64) * (nsamp as f64 - 1.0)).round() as usize)
        .collect();
    idx.dedup();
    if idx.len() < 2 {
        return Err(QuasiError::PartitionNotFound);
    }
    let steps = idx.len() - 1;
    let mut u_total = one_like(&path.samples[0]);
    let mut v_total = one_total_like(&path.samples[0]);
    let mut m_eps_used = 1usize;
    for w in idx.windows(2) {
        let (a, b) = (&path.samples[w[0]], &path.samples[w[1]]);
        let (pair, rep) = close_implies_similar(a, b, cert)?;
        if !rep.bound_holds {
            return Err(QuasiError::Hypothesis("stepwise conjugation bound failed".into()));
        }
        m_eps_used = m_eps_used.max(rep.m_eps);
        u_total = pair.u.mul(&u_total);
        v_total = v_total.mul(&pair.v);
    }
    let kf = steps as f64;
    let eps_claim = 2.0 * (2.25f64).powf(kf) * eps;
    let n_claim = (1.5f64).powf(kf);
    let r_claim = kf * (2.0 * m_eps_used as f64) * cert.r;
    let (uv, vu) = inverse_pair_residuals(&u_total, &v_total);
    let pair_residual = uv.upper.max(vu.upper);
    let pair_norm = op_norm_element(&u_total).upper.max(op_norm_element(&v_total).upper);
    let e0 = &path.samples[0];
    let f1 = path.samples.last().unwrap();
    let err = op_norm_element(&u_total.mul(e0).mul(&v_total).sub(f1)).upper;
    let bound = 3.0 * (2.25f64).powf(kf) * (5.0 * n + 2.0) * eps;
    let bounds_hold = pair_residual + STRICT_MARGIN < eps_claim
        && pair_norm <= n_claim + STRICT_MARGIN
        && err + STRICT_MARGIN < bound;
    let report = LipschitzSimilarityReport {
        steps,
        m_eps: m_eps_used,
        conjugation_error: err,
        conjugation_bound: bound,
        pair_residual,
        pair_residual_claim: eps_claim,
        pair_norm,
        pair_norm_claim: n_claim,
        bounds_hold,
    };
    let out_cert = QCertificate::new(eps_claim, r_claim, n_claim)
        .with("conjugation_error", err)
        .with("pair_residual", pair_residual);
    if eps_claim >= EPS_MAX {
        let mut notes = BTreeMap::new();
        notes.insert("conjugation_error".into(), err);
        notes.insert("conjugation_bound".into(), bound);
        return Err(overflow(out_cert, bounds_hold, notes));
    }
    Ok((InversePair { u: u_total, v: v_total, cert: out_cert }, report))
}

fn one_total_like(x: &FilteredElement) -> FilteredElement {
    FilteredElement::identity(&x.algebra, x.blocks)
}

/// Replace a homotopy between e and f by a Lipschitz homotopy of
/// (2eps, r, 5N/2)-idempotents between diag(e, I_k, 0_k) and diag(f, I_k, 0_k),
/// following the five-stage chain (block swaps, pair rotations, linear leg).
pub fn make_lipschitz(path: &HomotopyPath, samples_per_stage: usize) -> Result<HomotopyPath> {
    let cert = &path.cert;
    let (eps, n) = (cert.epsilon, cert.n_bound);
    // partition: consecutive chosen samples closer than inf(eps - resid)/(2N+1)
    let mut slack = f64::INFINITY;
    for s in &path.samples {
        slack = slack.min(eps - idempotent_residual(s).upper);
    }
    if slack <= STRICT_MARGIN {
        return Err(QuasiError::PartitionNotFound);
    }
    let gap = slack / (2.0 * n + 1.0);
    let mut idx = vec![0usize];
    let mut i = 0usize;
    while i + 1 < path.samples.len() {
        // furthest j with ||e_j - e_i|| < gap
        let mut j = i + 1;
        let mut best = None;
        while j < path.samples.len() {
            let d = op_norm_element(&path.samples[j].sub(&path.samples[i])).upper;
            if d + STRICT_MARGIN < gap {
                best = Some(j);
                j += 1;
            } else {
                break;
            }
        }
        match best {
            Some(j) => {
                idx.push(j);
                i = j;
            }
            None => return Err(QuasiError::PartitionNotFound),
        }
    }
    let k = idx.len() - 1; // number of segments
    let k = k.max(1);
    if idx.len() == 1 {
        idx.push(path.samples.len() - 1);
    }
    let chosen: Vec<FilteredElement> = idx.iter().map(|&i| promote(&path.samples[i])).collect();
    let alg = chosen[0].algebra.clone();
    let b = chosen[0].blocks;
    let one_b = FilteredElement::identity(&alg, b);
    let zero_b = FilteredElement::zero(&alg, b);
    // ambient size: blocks for (e, pair_1, ..., pair_k), each pair two b-blocks
    let total_pairs = k;
    let width = (2 * total_pairs + 1) * b;

    // layout A: diag(e_{t0}, I_k, 0_k); layout B: diag(e_{t0}, 1,0,1,0,...)
    let interleave_perm: Vec<usize> = {
        // block permutation sending (I,I,...,0,0,...) slots to (1,0,1,0,...)
        // slot s (0-based among the 2k trailing blocks): ones at even, zeros odd
        let mut p = vec![0usize; 2 * total_pairs];
        for i in 0..total_pairs {
            p[2 * i] = i; // even slot <- i-th identity block
            p[2 * i + 1] = total_pairs + i; // odd slot <- i-th zero block
        }
        p
    };

    let mut stages: Vec<Vec<FilteredElement>> = Vec::new();

    // stage 1: permutation of scalar blocks via simultaneous pairwise swap
    // rotations (odd-even transposition rounds), conjugating the exact layout-A
    // matrix; endpoints are layout A and layout B.
    let layout_a = {
        let mut m = chosen[0].clone();
        for _ in 0..total_pairs {
            m = m.block_diag(&one_b);
        }
        for _ in 0..total_pairs {
            m = m.block_diag(&zero_b);
        }
        m
    };
    let stage1 = permutation_stage(&layout_a, &interleave_perm, b, &alg, samples_per_stage);
    stages.push(stage1);

    // intermediate targets
    let diag_with = |vals: &[&FilteredElement]| -> FilteredElement {
        let mut m = vals[0].clone();
        for v in &vals[1..] {
            m = m.block_diag(v);
        }
        m
    };
    let one_minus = |x: &FilteredElement| one_b.sub(x);

    // stage 2: per-pair rotation (1,0) -> (1 - e_{t_i}, e_{t_i}), simultaneous
    let mut stage2 = Vec::with_capacity(samples_per_stage);
    for t in sample_ts(samples_per_stage) {
        let mut parts: Vec<FilteredElement> = vec![chosen[0].clone()];
        for i in 1..=total_pairs {
            let e_i = &chosen[i.min(chosen.len() - 1)];
            parts.push(pair_rotation_sample(&alg, b, e_i, t));
        }
        let refs: Vec<&FilteredElement> = parts.iter().collect();
        stage2.push(diag_with(&refs));
    }
    stages.push(stage2);

    // stage 3: linear leg moving 1 - e_{t_i} to 1 - e_{t_{i-1}} in each pair
    let mut stage3 = Vec::with_capacity(samples_per_stage);
    for t in sample_ts(samples_per_stage) {
        let mut parts: Vec<FilteredElement> = vec![chosen[0].clone()];
        for i in 1..=total_pairs {
            let cur = &chosen[i.min(chosen.len() - 1)];
            let prev = &chosen[i - 1];
            let mix = one_minus(cur)
                .scale(Complex64::new(1.0 - t, 0.0))
                .add(&one_minus(prev).scale(Complex64::new(t, 0.0)));
            parts.push(mix);
            parts.push(cur.clone());
        }
        let refs: Vec<&FilteredElement> = parts.iter().collect();
        stage3.push(diag_with(&refs));
    }
    stages.push(stage3);

    // stage 4: per-pair rotation (e_{t_{i-1}}, 1-e_{t_{i-1}}) -> (1, 0),
    // leaving the final e_{t_k} in the last slot. Realized as the reverse of a
    // stage-2-type rotation applied to the shifted pairs.
    let mut stage4 = Vec::with_capacity(samples_per_stage);
    for t in sample_ts(samples_per_stage) {
        let mut parts: Vec<FilteredElement> = Vec::new();
        for i in 0..total_pairs {
            let e_i = &chosen[i];
            // path from (e_i, 1-e_i) at t=0 to (1,0) at t=1
            parts.push(pair_rotation_sample_rev(&alg, b, e_i, t));
        }
        parts.push(chosen.last().unwrap().clone());
        let refs: Vec<&FilteredElement> = parts.iter().collect();
        // first slot of the chain is pairs then final e; preserve width by
        // noting the first element e_{t0} merged into the first pair
        stage4.push(diag_with(&refs));
    }
    stages.push(stage4);

    // stage 5: permutation back to diag(e_{t_k}, I_k, 0_k)
    let layout_final = {
        let mut m = chosen.last().unwrap().clone();
        for _ in 0..total_pairs {
            m = m.block_diag(&one_b);
        }
        for _ in 0..total_pairs {
            m = m.block_diag(&zero_b);
        }
        m
    };
    // stage 4 ends at diag(1,0,...,1,0,e_{t_k}); bring e to the front and sort
    let back_perm: Vec<usize> = {
        // current block layout: [pair blocks..., e]; target: [e, I_k, 0_k]
        let total = 2 * total_pairs + 1;
        let mut p = vec![0usize; total];
        p[0] = total - 1; // e comes from the last slot
        for i in 0..total_pairs {
            p[1 + i] = 2 * i; // identities from even pair slots
            p[1 + total_pairs + i] = 2 * i + 1; // zeros from odd pair slots
        }
        p
    };
    let stage4_end = stages.last().unwrap().last().unwrap().clone();
    let stage5 = permutation_stage_full(&stage4_end, &back_perm, b, &alg, samples_per_stage);
    stages.push(stage5);
    let _ = layout_final;

    // concatenate stages
    let mut samples: Vec<FilteredElement> = Vec::new();
    for (si, st) in stages.into_iter().enumerate() {
        if si == 0 {
            samples.extend(st);
        } else {
            samples.extend(st.into_iter().skip(1));
        }
    }
    let out_cert = QCertificate::new(2.0 * eps, cert.r, 2.5 * n).with("segments", k as f64);
    if !out_cert.admissible() {
        return Err(overflow(out_cert, true, BTreeMap::new()));
    }
    let lip = measured_lipschitz(&samples) * 1.1;
    let _ = width;
    Ok(HomotopyPath { samples, inverses: None, lipschitz: lip, cert: out_cert, kind: PathKind::Idempotent })
}

/// Sample of the rotation pair path at time t: from diag(1, 0) (t=0) to
/// diag(1 - e, e) (t=1), as a 2b-block element.
fn pair_rotation_sample(alg: &AlgebraInstance, b: usize, e: &FilteredElement, t: f64) -> FilteredElement {
    let one_b = FilteredElement::identity(alg, b);
    let zero_b = FilteredElement::zero(alg, b);
    let e0 = one_b.sub(e).block_diag(&zero_b);
    let f0 = e.block_diag(&zero_b);
    let (r, rinv) = rotation(alg, b, t);
    e0.add(&r.mul(&f0).mul(&rinv))
}

/// Reverse orientation: from diag(e, 1-e) (t=0) to diag(1, 0) (t=1).
fn pair_rotation_sample_rev(alg: &AlgebraInstance, b: usize, e: &FilteredElement, t: f64) -> FilteredElement {
    let one_b = FilteredElement::identity(alg, b);
    let zero_b = FilteredElement::zero(alg, b);
    let e0 = e.block_diag(&zero_b);
    let f0 = one_b.sub(e).block_diag(&zero_b);
    let (r, rinv) = rotation(alg, b, 1.0 - t);
    e0.add(&r.mul(&f0).mul(&rinv))
}

/// Conjugation path realizing a block permutation of the trailing blocks of a
/// matrix whose first block stays fixed. perm[slot] = source index among the
/// trailing blocks.
fn permutation_stage(
    start: &FilteredElement,
    perm: &[usize],
    b: usize,
    alg: &AlgebraInstance,
    samples: usize,
) -> Vec<FilteredElement> {
    // build the full permutation on all blocks: block 0 fixed
    let total = perm.len() + 1;
    let mut full = vec![0usize; total];
    full[0] = 0;
    for (slot, &src) in perm.iter().enumerate() {
        full[slot + 1] = src + 1;
    }
    permutation_stage_full(start, &full, b, alg, samples)
}

/// Conjugation path for an arbitrary block permutation: X_t = Q_t X Q_t^{-1}
/// with Q_t a product of simultaneous pairwise swap rotations (odd-even
/// transposition rounds), time-compressed into [0,1].
fn permutation_stage_full(
    start: &FilteredElement,
    perm: &[usize],
    b: usize,
    alg: &AlgebraInstance,
    samples: usize,
) -> Vec<FilteredElement> {
    let total = perm.len();
    // odd-even transposition sort turning identity order into `perm` order:
    // compute rounds of disjoint adjacent swaps that sort perm to identity;
    // applying them in reverse to the identity produces perm.
    let mut work: Vec<usize> = perm.to_vec();
    let mut rounds: Vec<Vec<usize>> = Vec::new(); // each round: list of left indices swapped
    for pass in 0..total * total {
        let start_idx = pass % 2;
        let mut swaps = Vec::new();
        let mut i = start_idx;
        while i + 1 < total {
            if work[i] > work[i + 1] {
                work.swap(i, i + 1);
                swaps.push(i);
            }
            i += 2;
        }
        let sorted = work.windows(2).all(|w| w[0] <= w[1]);
        if !swaps.is_empty() {
            rounds.push(swaps);
        }
        if sorted {
            break;
        }
    }
    // Q = (round_m ... round_1) sorts perm; we want conjugation by Q^{-1}
    // applied progressively: X_t = Q(t)^{-1} X Q(t) with Q(t) built up from
    // the rounds, each round a rotation leg.
    let mut out = Vec::new();
    let nrounds = rounds.len().max(1);
    let per_round = ((samples - 1) / nrounds).max(2);
    let mut prefix: Option<(FilteredElement, FilteredElement)> = None; // (Q, Qinv) completed rounds
    if rounds.is_empty() {
        return vec![start.clone(); samples.max(2)];
    }
    for (ri, round) in rounds.iter().enumerate() {
        let tgrid = sample_ts(per_round + 1);
        for (ti, &t) in tgrid.iter().enumerate() {
            if ri > 0 && ti == 0 {
                continue;
            }
            let (q, qinv) = round_rotation(alg, b, total, round, t);
            let (qq, qqinv) = match &prefix {
                None => (q, qinv),
                Some((p, pinv)) => (q.mul(p), pinv.mul(&qinv)),
            };
            out.push(qqinv.mul(start).mul(&qq));
        }
        let (q1, q1inv) = round_rotation(alg, b, total, round, 1.0);
        prefix = Some(match prefix {
            None => (q1, q1inv),
            Some((p, pinv)) => (q1.mul(&p), pinv.mul(&q1inv)),
        });
    }
    out
}

/// Simultaneous rotation through disjoint adjacent block transpositions at
/// time t; returns (Q_t, Q_t^{-1}) as scalar elements.
fn round_rotation(
    alg: &AlgebraInstance,
    b: usize,
    total: usize,
    swaps: &[usize],
    t: f64,
) -> (FilteredElement, FilteredElement) {
    let c = (std::f64::consts::FRAC_PI_2 * t).cos();
    let s = (std::f64::consts::FRAC_PI_2 * t).sin();
    let mut q = Mat::identity(total);
    for &i in swaps {
        q[(i, i)] = Complex64::new(c, 0.0);
        q[(i + 1, i + 1)] = Complex64::new(c, 0.0);
        q[(i, i + 1)] = Complex64::new(-s, 0.0);
        q[(i + 1, i)] = Complex64::new(s, 0.0);
    }
    let qinv = q.transpose();
    let qb = q.kron(&Mat::identity(b));
    let qbinv = qinv.kron(&Mat::identity(b));
    (
        FilteredElement::from_scalar(alg, &qb),
        FilteredElement::from_scalar(alg, &qbinv),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct PathVerification {
    pub max_residual: f64,
    pub max_norm: f64,
    pub max_step: f64,
    pub epsilon_ok: bool,
    pub norm_ok: bool,
    pub prop_ok: bool,
}

/// Re-verify a path's certificate from scratch at every sample.
pub fn verify_path(path: &HomotopyPath) -> PathVerification {
    let mut max_residual = 0.0f64;
    let mut max_norm = 0.0f64;
    let mut prop_ok = true;
    for (i, s) in path.samples.iter().enumerate() {
        let sp = promote(s);
        let res = match path.kind {
            PathKind::Idempotent => idempotent_residual(&sp).upper,
            PathKind::Invertible => {
                let v = path
                    .inverses
                    .as_ref()
                    .map(|vs| promote(&vs[i]))
                    .expect("invertible path needs companion inverses");
                let (a, b) = inverse_pair_residuals(&sp, &v);
                a.upper.max(b.upper)
            }
        };
        max_residual = max_residual.max(res);
        let nv = match path.kind {
            PathKind::Idempotent => op_norm_element(&sp)
                .upper
                .max(op_norm_element(&one_like(&sp).sub(&sp)).upper),
            PathKind::Invertible => {
                let mut nn = op_norm_element(&sp).upper;
                if let Some(vs) = &path.inverses {
                    nn = nn.max(op_norm_element(&promote(&vs[i])).upper);
                }
                nn
            }
        };
        max_norm = max_norm.max(nv);
        if s.propagation > path.cert.r + 1e-9 {
            prop_ok = false;
        }
    }
    let max_step = if path.samples.len() > 1 {
        path.samples
            .windows(2)
            .map(|w| op_norm_element(&w[1].sub(&w[0])).upper)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    PathVerification {
        max_residual,
        max_norm,
        max_step,
        epsilon_ok: max_residual + STRICT_MARGIN < path.cert.epsilon.max(1e-12),
        norm_ok: max_norm <= path.cert.n_bound + 1e-9,
        prop_ok,
    }
}
