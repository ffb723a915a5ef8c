//! Completely filtered extensions of filtered algebras: quotient/lift/ideal
//! oracles, controlled lifting of quasi-invertibles, the controlled boundary
//! map d1 from K1 of the quotient to K0 of the ideal, and exactness probes.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::Serialize;

use crate::algebra::{AlgebraInstance, BandData, ElemData, FilteredElement, PExp};
use crate::kclasses::{ControlPair, CtrlExpr, KOneRep, KZeroRep};
use crate::linalg::Mat;
use crate::pnorm::{distance, op_norm, op_norm_element, random_matrix};
use crate::quasi::{
    certify_idempotent, certify_inverse_pair, promote, rotation, sample_ts, HomotopyPath,
    InversePair, PathKind, QCertificate, QuasiError,
};

#[derive(Debug, thiserror::Error)]
pub enum ExtError {
    #[error("quasi-certificate failure: {0}")]
    Quasi(#[from] QuasiError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("partition not found: gap {max_gap} exceeds required step {needed}")]
    Partition { max_gap: f64, needed: f64 },
    #[error("bound violated: {0}")]
    Bound(String),
    #[error("ideal window overflow: correction needs {needed}, instance allows {have}")]
    Window { needed: usize, have: usize },
}

pub type Result<T> = std::result::Result<T, ExtError>;

/// A named certified inequality: lhs (a computed upper bound) vs rhs.
#[derive(Clone, Debug, Serialize)]
pub struct BoundRecord {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundRecord {
    pub fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        BoundRecord { name: name.into(), lhs, rhs, pass: lhs <= rhs + 1e-9 }
    }
}

#[derive(Clone, Debug)]
pub enum ExtKind {
    /// Paths into a base algebra vanishing at t=0; the quotient map evaluates
    /// at t=1 and the ideal is paths vanishing at both endpoints.
    Cone { base: AlgebraInstance, samples: usize },
    /// Block direct sum J (+) B; the quotient map projects onto the B corner
    /// and the section is the corner inclusion (an algebra homomorphism).
    Split { n_ideal: usize, n_quot: usize },
    /// One-sided band compression: finite-window corrections form the ideal,
    /// two-sided band symbols the quotient.
    Toeplitz { band: i64, window: usize },
}

#[derive(Clone, Debug)]
pub struct Extension {
    pub kind: ExtKind,
    pub total: AlgebraInstance,
    pub quotient: AlgebraInstance,
    /// Finite-matrix carrier used to represent ideal K0 classes (for the cone
    /// this is the total path instance itself; classes stay path-valued).
    pub ideal: AlgebraInstance,
    /// Declared filtration constant C >= 1 of the extension.
    pub c: f64,
}

impl Extension {
    pub fn cone(n: usize, p: PExp, samples: usize) -> Extension {
        let base = AlgebraInstance::interval_roe_nonunital(n, p);
        let total = AlgebraInstance::path(base.clone(), samples, false);
        Extension { kind: ExtKind::Cone { base: base.clone(), samples }, total, quotient: base.clone(), ideal: AlgebraInstance::path(base, samples, false), c: 1.0 }
    }

    pub fn split(n_ideal: usize, n_quot: usize, p: PExp) -> Extension {
        Extension {
            kind: ExtKind::Split { n_ideal, n_quot },
            total: AlgebraInstance::interval_roe_nonunital(n_ideal + n_quot, p),
            quotient: AlgebraInstance::interval_roe_nonunital(n_quot, p),
            ideal: AlgebraInstance::interval_roe_nonunital(n_ideal, p),
            c: 1.0,
        }
    }

    pub fn toeplitz(band: i64, window: usize, p: PExp, declared_c: f64) -> Extension {
        Extension {
            kind: ExtKind::Toeplitz { band, window },
            total: AlgebraInstance::toeplitz(band, window, p),
            quotient: AlgebraInstance::laurent(band, p),
            ideal: AlgebraInstance::interval_roe_nonunital(window, p),
            c: declared_c,
        }
    }

    fn base_dim(&self) -> usize {
        match &self.kind {
            ExtKind::Cone { base, .. } => base.dim(),
            ExtKind::Split { n_ideal, n_quot } => n_ideal + n_quot,
            ExtKind::Toeplitz { .. } => 0,
        }
    }

    /// The quotient map q applied entrywise to an element of M_k(total).
    pub fn quotient_map(&self, x: &FilteredElement) -> FilteredElement {
        assert_eq!(x.algebra, self.total, "element not over the total algebra");
        let k = x.blocks;
        match &self.kind {
            ExtKind::Cone { samples, .. } => {
                let last = *samples - 1;
                x.path_sample(last)
            }
            ExtKind::Split { n_ideal, n_quot } => {
                let n = n_ideal + n_quot;
                let (mat, scalar) = dense_parts(x);
                let mut out = Mat::zeros(k * n_quot, k * n_quot);
                for b1 in 0..k {
                    for b2 in 0..k {
                        for i in 0..*n_quot {
                            for j in 0..*n_quot {
                                out[(b1 * n_quot + i, b2 * n_quot + j)] =
                                    mat[(b1 * n + n_ideal + i, b2 * n + n_ideal + j)];
                            }
                        }
                    }
                }
                FilteredElement {
                    algebra: self.quotient.clone(),
                    blocks: k,
                    data: ElemData::Dense { mat: out, scalar },
                    propagation: x.propagation,
                }
            }
            ExtKind::Toeplitz { .. } => {
                let b = band_parts(x);
                FilteredElement {
                    algebra: self.quotient.clone(),
                    blocks: k,
                    data: ElemData::Band(BandData { diags: b.diags.clone(), correction: None }),
                    propagation: x.propagation,
                }
            }
        }
    }

    /// The lift oracle: a section of q, unital on the adjoined scalars, with
    /// ||lift(x)|| <= C ||x||.
    pub fn lift(&self, x: &FilteredElement) -> FilteredElement {
        assert_eq!(x.algebra, self.quotient, "element not over the quotient algebra");
        let k = x.blocks;
        match &self.kind {
            ExtKind::Cone { samples, .. } => {
                let nb = self.base_dim();
                let (mat, scalar) = dense_parts(x);
                let zmat = match &scalar {
                    Some(z) => z.kron(&Mat::identity(nb)),
                    None => Mat::zeros(k * nb, k * nb),
                };
                let dir = mat.sub(&zmat);
                let slope = op_norm(&dir, self.total.p).upper;
                let ts = sample_ts(*samples);
                let samples_data: Vec<ElemData> = ts
                    .iter()
                    .map(|&t| ElemData::Dense {
                        mat: zmat.add(&dir.scale_re(t)),
                        scalar: scalar.clone(),
                    })
                    .collect();
                FilteredElement {
                    algebra: self.total.clone(),
                    blocks: k,
                    data: ElemData::Path { samples: samples_data, lipschitz: slope },
                    propagation: x.propagation,
                }
            }
            ExtKind::Split { n_ideal, n_quot } => {
                let n = n_ideal + n_quot;
                let (mat, scalar) = dense_parts(x);
                let mut out = Mat::zeros(k * n, k * n);
                if let Some(z) = &scalar {
                    for b1 in 0..k {
                        for b2 in 0..k {
                            for i in 0..*n_ideal {
                                out[(b1 * n + i, b2 * n + i)] = z[(b1, b2)];
                            }
                        }
                    }
                }
                for b1 in 0..k {
                    for b2 in 0..k {
                        for i in 0..*n_quot {
                            for j in 0..*n_quot {
                                out[(b1 * n + n_ideal + i, b2 * n + n_ideal + j)] =
                                    mat[(b1 * n_quot + i, b2 * n_quot + j)];
                            }
                        }
                    }
                }
                FilteredElement {
                    algebra: self.total.clone(),
                    blocks: k,
                    data: ElemData::Dense { mat: out, scalar },
                    propagation: x.propagation,
                }
            }
            ExtKind::Toeplitz { .. } => {
                let b = band_parts(x);
                FilteredElement {
                    algebra: self.total.clone(),
                    blocks: k,
                    data: ElemData::Band(BandData { diags: b.diags.clone(), correction: None }),
                    propagation: x.propagation,
                }
            }
        }
    }

    /// The ideal-approximation oracle: the part of `a` left after removing the
    /// lifted coset representative; q(ideal_approx(a)) = 0 exactly and
    /// ||a - ideal_approx(a)|| = ||lift(q(a))|| <= C dist(a, ideal).
    pub fn ideal_approx(&self, a: &FilteredElement) -> FilteredElement {
        a.sub(&self.lift(&self.quotient_map(a)))
    }

    /// Certified upper bound for the distance of `a` to the ideal.
    pub fn dist_to_ideal_upper(&self, a: &FilteredElement) -> f64 {
        self.c * op_norm_element(&self.quotient_map(a)).upper
    }

    /// Re-express an element of M_k(total) lying in the ideal over the dense
    /// ideal carrier instance (None for the cone, whose ideal stays path-valued).
    pub fn ideal_repr(&self, y: &FilteredElement) -> Result<Option<FilteredElement>> {
        let k = y.blocks;
        match &self.kind {
            ExtKind::Cone { .. } => Ok(None),
            ExtKind::Split { n_ideal, n_quot } => {
                let n = n_ideal + n_quot;
                let (mat, _) = dense_parts(y);
                let mut out = Mat::zeros(k * n_ideal, k * n_ideal);
                for b1 in 0..k {
                    for b2 in 0..k {
                        for i in 0..*n_ideal {
                            for j in 0..*n_ideal {
                                out[(b1 * n_ideal + i, b2 * n_ideal + j)] =
                                    mat[(b1 * n + i, b2 * n + j)];
                            }
                        }
                    }
                }
                Ok(Some(FilteredElement {
                    algebra: self.ideal.clone(),
                    blocks: k,
                    data: ElemData::Dense { mat: out, scalar: Some(Mat::zeros(k, k)) },
                    propagation: y.propagation.min(*n_ideal as f64),
                }))
            }
            ExtKind::Toeplitz { window, .. } => {
                let b = band_parts(y);
                let mut out = Mat::zeros(k * window, k * window);
                if let Some((w, corr)) = &b.correction {
                    if *w > *window {
                        return Err(ExtError::Window { needed: *w, have: *window });
                    }
                    for b1 in 0..k {
                        for b2 in 0..k {
                            for i in 0..*w {
                                for j in 0..*w {
                                    out[(b1 * window + i, b2 * window + j)] =
                                        corr[(b1 * w + i, b2 * w + j)];
                                }
                            }
                        }
                    }
                }
                Ok(Some(FilteredElement {
                    algebra: self.ideal.clone(),
                    blocks: k,
                    data: ElemData::Dense { mat: out, scalar: Some(Mat::zeros(k, k)) },
                    propagation: y.propagation.min(*window as f64),
                }))
            }
        }
    }

    /// Defect of the section identity q(lift(x)) = x.
    pub fn section_defect(&self, x: &FilteredElement) -> f64 {
        distance(&self.quotient_map(&self.lift(x)), x).upper
    }
}

/// Norm upper bound measured at the path samples (no Lipschitz widening);
/// for non-path data this is the certified upper bound. The constructions
/// here produce paths polynomial in the path parameter, so the sample maximum
/// over a dense grid is the honest measurement of residuals that vanish
/// identically at every sample.
pub(crate) fn sample_norm_upper(x: &FilteredElement) -> f64 {
    match &x.data {
        ElemData::Path { .. } => (0..x.path_len())
            .map(|i| op_norm_element(&x.path_sample(i)).upper)
            .fold(0.0, f64::max),
        _ => op_norm_element(x).upper,
    }
}

pub(crate) fn sample_distance(a: &FilteredElement, b: &FilteredElement) -> f64 {
    sample_norm_upper(&a.sub(b))
}

pub(crate) fn dense_parts(x: &FilteredElement) -> (Mat, Option<Mat>) {
    match &x.data {
        ElemData::Dense { mat, scalar } => (mat.clone(), scalar.clone()),
        _ => panic!("dense element expected"),
    }
}

fn band_parts(x: &FilteredElement) -> &BandData {
    match &x.data {
        ElemData::Band(b) => b,
        _ => panic!("band element expected"),
    }
}

pub(crate) fn zero_like(x: &FilteredElement) -> FilteredElement {
    let z = FilteredElement::zero(&x.algebra, x.blocks);
    if !x.algebra.unital && x.scalar_part().is_some() {
        promote(&z)
    } else {
        z
    }
}

pub(crate) fn ident(alg: &AlgebraInstance, blocks: usize) -> FilteredElement {
    FilteredElement::identity(alg, blocks)
}

pub(crate) fn fold_diag(xs: &[FilteredElement]) -> FilteredElement {
    let mut out = xs[0].clone();
    for x in &xs[1..] {
        out = out.block_diag(x);
    }
    out
}

/// [[0, x], [0, 0]] (upper) or [[0, 0], [x, 0]] (lower) in M_{2n}.
pub(crate) fn corner_embed(x: &FilteredElement, upper: bool) -> FilteredElement {
    let n = x.blocks;
    let z = zero_like(x);
    let d = if upper { z.block_diag(x) } else { x.block_diag(&z) };
    let mut p = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        if upper {
            p[(i, n + i)] = Complex64::new(1.0, 0.0);
        } else {
            p[(n + i, i)] = Complex64::new(1.0, 0.0);
        }
    }
    FilteredElement::from_scalar(&x.algebra, &p).mul(&d)
}

/// Elementary matrix [[1, u], [0, 1]].
pub(crate) fn elem_upper(u: &FilteredElement) -> FilteredElement {
    ident(&u.algebra, 2 * u.blocks).add(&corner_embed(u, true))
}

/// Elementary matrix [[1, 0], [v, 1]].
pub(crate) fn elem_lower(v: &FilteredElement) -> FilteredElement {
    ident(&v.algebra, 2 * v.blocks).add(&corner_embed(v, false))
}

pub(crate) fn neg(x: &FilteredElement) -> FilteredElement {
    x.scale(Complex64::new(-1.0, 0.0))
}

/// Scalar diag(I_n, 0, ..., 0) in M_m over the given instance.
pub(crate) fn scalar_top_projection(alg: &AlgebraInstance, n: usize, m: usize) -> FilteredElement {
    let mut d = Mat::zeros(m, m);
    for i in 0..n {
        d[(i, i)] = Complex64::new(1.0, 0.0);
    }
    FilteredElement::from_scalar(alg, &d)
}

// ---------------------------------------------------------------------------
// completely filtered constant estimation

#[derive(Clone, Debug, Serialize)]
pub struct FiltrationReport {
    pub declared_c: f64,
    pub estimate: f64,
    pub trials: usize,
}

/// Randomized estimate of the best filtration constant: for random elements x
/// the constructive coset representative lift(q(x)) realizes an element of
/// x + ideal, so ||lift(q(x))|| / ||q(x)|| upper-estimates the achievable
/// ratio. The maximum over trials is reported against the declared C.
pub fn check_completely_filtered(ext: &Extension, trials: usize, seed: u64) -> FiltrationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimate: f64 = 0.0;
    for _ in 0..trials {
        let x = random_total_element(ext, &mut rng);
        let q = ext.quotient_map(&x);
        let den = op_norm_element(&q).lower;
        if den < 1e-9 {
            continue;
        }
        let candidate = ext.lift(&q);
        let num = match &candidate.data {
            // the cone section is linear in t, so the sup over t is attained
            // at a sample; no Lipschitz widening is needed
            ElemData::Path { samples, .. } => samples
                .iter()
                .map(|s| match s {
                    ElemData::Dense { mat, .. } => op_norm(mat, ext.total.p).upper,
                    _ => unreachable!(),
                })
                .fold(0.0, f64::max),
            _ => op_norm_element(&candidate).upper,
        };
        estimate = estimate.max(num / den);
    }
    FiltrationReport { declared_c: ext.c, estimate, trials }
}

fn random_total_element(ext: &Extension, rng: &mut ChaCha8Rng) -> FilteredElement {
    match &ext.kind {
        ExtKind::Cone { base, samples } => {
            let nb = base.dim();
            let a = random_matrix(rng, nb, nb);
            let b = random_matrix(rng, nb, nb);
            let ts = sample_ts(*samples);
            let data: Vec<ElemData> = ts
                .iter()
                .map(|&t| ElemData::Dense {
                    mat: a.scale_re(t).add(&b.scale_re(t * (1.0 - t))),
                    scalar: None,
                })
                .collect();
            FilteredElement {
                algebra: ext.total.clone(),
                blocks: 1,
                data: ElemData::Path { samples: data, lipschitz: 0.0 },
                propagation: nb as f64,
            }
        }
        ExtKind::Split { n_ideal, n_quot } => {
            let n = n_ideal + n_quot;
            let xj = random_matrix(rng, *n_ideal, *n_ideal);
            let xb = random_matrix(rng, *n_quot, *n_quot);
            let mut m = Mat::zeros(n, n);
            for i in 0..*n_ideal {
                for j in 0..*n_ideal {
                    m[(i, j)] = xj[(i, j)];
                }
            }
            for i in 0..*n_quot {
                for j in 0..*n_quot {
                    m[(n_ideal + i, n_ideal + j)] = xb[(i, j)];
                }
            }
            FilteredElement {
                algebra: ext.total.clone(),
                blocks: 1,
                data: ElemData::Dense { mat: m, scalar: None },
                propagation: n as f64,
            }
        }
        ExtKind::Toeplitz { band, window } => {
            let mut diags = BTreeMap::new();
            for d in -*band..=*band {
                diags.insert(d, random_matrix(rng, 1, 1));
            }
            let w = (*window).min(3).max(1);
            let correction = Some((w, random_matrix(rng, w, w)));
            FilteredElement {
                algebra: ext.total.clone(),
                blocks: 1,
                data: ElemData::Band(BandData { diags, correction }),
                propagation: *band as f64,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// lifting a quasi-inverse pair to an invertible in doubled dimension

#[derive(Clone, Debug, Serialize)]
pub struct InvLiftReport {
    pub bounds: Vec<BoundRecord>,
    pub q_defect: f64,
    pub identity_defect: f64,
    pub inv_residual: f64,
}

impl InvLiftReport {
    pub fn pass(&self) -> bool {
        self.bounds.iter().all(|b| b.pass)
    }
}

#[derive(Clone, Debug)]
pub struct InvLift {
    pub w: FilteredElement,
    pub winv: FilteredElement,
    pub path: HomotopyPath,
    pub report: InvLiftReport,
}

/// Lift a quasi-inverse pair (u, v) over the quotient to an exactly invertible
/// w in doubled dimension over the total algebra:
/// w = [[1,U],[0,1]] [[1,0],[-V,1]] [[1,U],[0,1]] [[0,-1],[1,0]],
/// together with the rotation homotopy w_t from the identity.
pub fn lift_inverse_pair(ext: &Extension, pair: &InversePair, samples: usize) -> Result<InvLift> {
    let u = &pair.u;
    let v = &pair.v;
    let n = u.blocks;
    let eps = pair.cert.epsilon;
    let nn = pair.cert.n_bound;
    let r = pair.cert.r;
    let c = ext.c;

    let ubig = ext.lift(u);
    let vbig = ext.lift(v);
    // the section is linear along the path, so the sup is attained at a sample
    let lift_norm = sample_norm_upper(&ubig).max(sample_norm_upper(&vbig));
    let norm_bound = (c * nn + eps + 1.0).powi(3);

    let build = |t: f64| -> (FilteredElement, FilteredElement) {
        let ut = ubig.scale(Complex64::new(t, 0.0));
        let vt = vbig.scale(Complex64::new(t, 0.0));
        let xu = elem_upper(&ut);
        let xu_inv = elem_upper(&neg(&ut));
        let ynegv = elem_lower(&neg(&vt));
        let yv = elem_lower(&vt);
        let (rt, rt_inv) = rotation(&ext.total, n, t);
        let wt = xu.mul(&ynegv).mul(&xu).mul(&rt);
        let wt_inv = rt_inv.mul(&xu_inv).mul(&yv).mul(&xu_inv);
        (wt, wt_inv)
    };

    let (w, winv) = build(1.0);
    let norm_w = sample_norm_upper(&w);
    let norm_winv = sample_norm_upper(&winv);
    let inv_residual = sample_distance(&w.mul(&winv), &ident(&ext.total, 2 * n));

    // quotient-side defects
    let qw = ext.quotient_map(&w);
    let qwinv = ext.quotient_map(&winv);
    let duv = u.block_diag(v);
    let dvu = v.block_diag(u);
    let q_defect = distance(&qw, &duv).upper.max(distance(&qwinv, &dvu).upper);

    // exact algebraic form of the defect on the quotient side:
    // q(w) - diag(u,v) = [[u(1-vu), uv-1], [1-vu, 0]]
    let one = ident(&u.algebra, n);
    let a11 = u.mul(&one.sub(&v.mul(u)));
    let a12 = u.mul(v).sub(&one);
    let a21 = one.sub(&v.mul(u));
    let explicit = a11
        .block_diag(&zero_like(&a11))
        .add(&corner_embed(&a12, true))
        .add(&corner_embed(&a21, false));
    let identity_defect = distance(&qw.sub(&duv), &explicit).upper;

    // rotation homotopy from the identity to w
    let ts = sample_ts(samples.max(2));
    let mut path_samples = Vec::with_capacity(ts.len());
    let mut path_invs = Vec::with_capacity(ts.len());
    let mut path_norm: f64 = 0.0;
    for &t in &ts {
        let (wt, wt_inv) = build(t);
        path_norm = path_norm
            .max(sample_norm_upper(&wt))
            .max(sample_norm_upper(&wt_inv));
        path_samples.push(wt);
        path_invs.push(wt_inv);
    }
    let lipschitz = crate::quasi::measured_lipschitz(&path_samples);
    let prop = w.propagation;
    let cert = QCertificate::new(eps, prop.max(3.0 * r), norm_bound)
        .with("inv_residual", inv_residual)
        .with("q_defect", q_defect);
    let path = HomotopyPath {
        samples: path_samples,
        inverses: Some(path_invs),
        lipschitz,
        cert,
        kind: PathKind::Invertible,
    };

    let bounds = vec![
        BoundRecord::new("lift_norm <= C*N + eps", lift_norm, c * nn + eps),
        BoundRecord::new("norm(w) <= (CN+eps+1)^3", norm_w, norm_bound),
        BoundRecord::new("norm(winv) <= (CN+eps+1)^3", norm_winv, norm_bound),
        BoundRecord::new("q-defect <= (N+1)eps", q_defect, (nn + 1.0) * eps),
        BoundRecord::new("propagation <= 3r", prop, 3.0 * r),
        BoundRecord::new(
            "path norms <= sqrt(2)(CN+eps+1)^3",
            path_norm,
            std::f64::consts::SQRT_2 * norm_bound,
        ),
        BoundRecord::new("w invertible exactly", inv_residual, 1e-9),
    ];
    let report = InvLiftReport { bounds, q_defect, identity_defect, inv_residual };
    Ok(InvLift { w, winv, path, report })
}

// ---------------------------------------------------------------------------
// lifting an invertible homotopic to the identity

#[derive(Clone, Debug)]
pub struct HomotopicLift {
    /// a in M_{(2k+2)n}(total) with q(a) = diag(u, I) exactly.
    pub a: FilteredElement,
    /// candidate quasi-inverse of a.
    pub a_inv: FilteredElement,
    /// the plain lift of u.
    pub b: FilteredElement,
    /// ideal part: a = diag(b, I) + d with q(d) = 0.
    pub d: FilteredElement,
    pub k: usize,
    pub defect: f64,
    pub defect_bound: f64,
    pub q_exactness: f64,
    pub inv_residual: f64,
    pub vw_defect: f64,
    pub vw_defect_bound: f64,
}

pub(crate) fn partition_indices(path: &HomotopyPath, step: f64) -> Result<Vec<usize>> {
    let s = &path.samples;
    let mut idx = vec![0usize];
    let mut cur = 0usize;
    while cur + 1 < s.len() {
        let mut nxt = None;
        for j in (cur + 1..s.len()).rev() {
            if distance(&s[j], &s[cur]).upper < step {
                nxt = Some(j);
                break;
            }
        }
        match nxt {
            Some(j) => {
                idx.push(j);
                cur = j;
            }
            None => {
                return Err(ExtError::Partition {
                    max_gap: distance(&s[cur + 1], &s[cur]).upper,
                    needed: step,
                })
            }
        }
    }
    Ok(idx)
}

/// Given a certified path of invertibles from u to (approximately) the
/// identity over the quotient, produce a in M_{(2k+2)n}(total) with
/// q(a) = diag(u, I_{(2k+1)n}) exactly, via block-diagonal stacks of the
/// partition values and two doubled-dimension lifts.
pub fn lift_homotopic_invertible(
    ext: &Extension,
    path: &HomotopyPath,
    eps_target: f64,
) -> Result<HomotopicLift> {
    if path.kind != PathKind::Invertible {
        return Err(ExtError::Unsupported("invertible path required".into()));
    }
    let invs = path
        .inverses
        .as_ref()
        .ok_or_else(|| ExtError::Unsupported("path inverses required".into()))?;
    let n = path.start().blocks;
    let eps = eps_target.max(path.cert.epsilon);
    let nn = path.cert.n_bound;
    let c = ext.c;
    let one_q = ident(&path.start().algebra, n);

    // trivial input: u already the identity
    if distance(path.start(), &one_q).upper < 1e-12 {
        let a = ident(&ext.total, 2 * n);
        let b = ext.lift(&one_q);
        let d = zero_like(&a);
        return Ok(HomotopicLift {
            a_inv: a.clone(),
            a,
            b,
            d,
            k: 0,
            defect: 0.0,
            defect_bound: ((nn + 1.0) * ((c * nn + eps + 1.0).powi(3) + nn) + 2.0) * c * eps,
            q_exactness: 0.0,
            inv_residual: 0.0,
            vw_defect: 0.0,
            vw_defect_bound: (nn + 1.0) * ((c * nn + eps + 1.0).powi(3) + nn) * eps,
        });
    }

    let step = eps / nn;
    let idx = partition_indices(path, step)?;
    let end_gap = distance(path.end(), &one_q).upper;
    if end_gap >= step {
        return Err(ExtError::Partition { max_gap: end_gap, needed: step });
    }
    // partition nodes, with the exact identity appended as the final node
    let mut us: Vec<FilteredElement> = idx.iter().map(|&i| path.samples[i].clone()).collect();
    let mut vs: Vec<FilteredElement> = idx.iter().map(|&i| invs[i].clone()).collect();
    us.push(one_q.clone());
    vs.push(one_q.clone());
    let k = us.len() - 1;

    // first stack: diag(u_0..u_k) with inverse stack diag(v_0..v_k)
    let s_stack = fold_diag(&us);
    let s_inv_stack = fold_diag(&vs);
    let pair_v = certify_inverse_pair(&s_stack, &s_inv_stack)?;
    let il_v = lift_inverse_pair(ext, &pair_v, 2)?;

    // second stack: diag(I, v_0..v_{k-1}) with inverse diag(I, u_0..u_{k-1});
    // the required diag(I, v_0..v_{k-1}, u_0..u_k) is its cyclic-permutation
    // conjugate because the final node is exactly the identity.
    let mut hat: Vec<FilteredElement> = vec![one_q.clone()];
    hat.extend(vs[..k].iter().cloned());
    let mut hat_inv: Vec<FilteredElement> = vec![one_q.clone()];
    hat_inv.extend(us[..k].iter().cloned());
    let pair_w = certify_inverse_pair(&fold_diag(&hat), &fold_diag(&hat_inv))?;
    let il_w = lift_inverse_pair(ext, &pair_w, 2)?;

    // permutation conjugation on the lower half of the doubled stack
    let m_half = (k + 1) * n;
    let mut q_cycle = Mat::zeros(k + 1, k + 1);
    for i in 0..=k {
        q_cycle[(i, (i + 1) % (k + 1))] = Complex64::new(1.0, 0.0);
    }
    let mut p = Mat::identity(2 * m_half);
    let qk = q_cycle.kron(&Mat::identity(n));
    for i in 0..m_half {
        for j in 0..m_half {
            p[(m_half + i, m_half + j)] = qk[(i, j)];
        }
        p[(m_half + i, m_half + i)] = qk[(i, i)];
    }
    // overwrite the lower identity block entirely
    for i in 0..m_half {
        for j in 0..m_half {
            p[(m_half + i, m_half + j)] = qk[(i, j)];
        }
    }
    let pe = FilteredElement::from_scalar(&ext.total, &p);
    let pinv = FilteredElement::from_scalar(&ext.total, &p.transpose());
    let w_big = pe.mul(&il_w.w).mul(&pinv);
    let w_big_inv = pe.mul(&il_w.winv).mul(&pinv);

    let vw = il_v.w.mul(&w_big);
    let vw_inv = w_big_inv.mul(&il_v.winv);

    // quotient-side target: diag(u_0..u_k, v_0..v_k) * diag(I, v_0..v_{k-1}, u_0..u_k)
    let mut w_nodes: Vec<FilteredElement> = vec![one_q.clone()];
    w_nodes.extend(vs[..k].iter().cloned());
    w_nodes.extend(us.iter().cloned());
    let target = s_stack.block_diag(&s_inv_stack).mul(&fold_diag(&w_nodes));
    let big = (c * nn + eps + 1.0).powi(3);
    let vw_defect = distance(&ext.quotient_map(&vw), &target).upper;
    let vw_defect_bound = (nn + 1.0) * (big + nn) * eps;

    let b = ext.lift(path.start());
    let rest = ident(&ext.total, (2 * k + 1) * n);
    let b_block = b.block_diag(&rest);
    let d = ext.ideal_approx(&vw.sub(&b_block));
    let a = b_block.add(&d);
    let defect = sample_norm_upper(&b_block.sub(&vw).add(&d));
    let defect_bound = ((nn + 1.0) * (big + nn) + 2.0) * c * eps;

    let q_target = path.start().block_diag(&ident(&path.start().algebra, (2 * k + 1) * n));
    let q_exactness = distance(&ext.quotient_map(&a), &q_target).upper;
    let inv_residual = sample_distance(&a.mul(&vw_inv), &ident(&ext.total, (2 * k + 2) * n));

    Ok(HomotopicLift {
        a,
        a_inv: vw_inv,
        b,
        d,
        k,
        defect,
        defect_bound,
        q_exactness,
        inv_residual,
        vw_defect,
        vw_defect_bound,
    })
}

// ---------------------------------------------------------------------------
// the boundary map d1

pub enum BoundaryRoute<'a> {
    /// Doubled-dimension lift of (u, v); cheapest and the default.
    Direct,
    /// Caller-provided invertible lift w of diag(u, v) (possibly stabilized).
    Explicit { w: &'a FilteredElement, winv: &'a FilteredElement },
    /// Through a path diag(u,v) -> I over the quotient and the stacked lift.
    ViaHomotopyLift { path: &'a HomotopyPath, eps_target: f64 },
}

#[derive(Clone, Debug)]
pub struct BoundaryClass {
    pub class: KZeroRep,
    pub y: FilteredElement,
    pub residual: f64,
    pub residual_bound: f64,
    /// true when y = 0 already satisfies the residual bound (image of a
    /// liftable class).
    pub zero_witness: bool,
    pub control: ControlPair,
    pub scalar_rank: usize,
}

/// The boundary map: from a K1 representative (u, v) over the quotient to a
/// K0 representative [y + diag(I_n,0)] - [diag(I_n,0)] over the ideal, where
/// x = w diag(I_n,0) w^{-1} for an invertible lift w of diag(u, v) and y is
/// the ideal part of x - diag(I_n,0).
pub fn boundary_d1(ext: &Extension, rep: &KOneRep, route: BoundaryRoute) -> Result<BoundaryClass> {
    let pair = &rep.pair;
    let n = pair.u.blocks;
    let eps = pair.cert.epsilon;
    let nn = pair.cert.n_bound;
    let c = ext.c;

    let (w, winv, eps_used) = match route {
        BoundaryRoute::Direct => {
            let il = lift_inverse_pair(ext, pair, 2)?;
            (il.w, il.winv, eps)
        }
        BoundaryRoute::Explicit { w, winv } => {
            // any invertible lift with a small quotient defect yields the
            // same class; verify the defect before using it
            let m = w.blocks;
            let duv = pair.u.block_diag(&pair.v);
            let duv_stab = if m > 2 * n {
                duv.block_diag(&ident(&pair.u.algebra, m - 2 * n))
            } else {
                duv
            };
            let defect = distance(&ext.quotient_map(w), &duv_stab).upper;
            let lam = (nn + 1.0) * (c * nn + eps + 1.0).powi(3);
            if defect > (lam * eps).max(1e-9) {
                return Err(ExtError::Bound(format!(
                    "explicit lift quotient defect {defect} exceeds {}",
                    (lam * eps).max(1e-9)
                )));
            }
            (w.clone(), winv.clone(), eps)
        }
        BoundaryRoute::ViaHomotopyLift { path, eps_target } => {
            let hl = lift_homotopic_invertible(ext, path, eps_target)?;
            (hl.a, hl.a_inv, eps_target.max(eps))
        }
    };

    let m = w.blocks;
    let d_top = scalar_top_projection(&ext.total, n, m);
    let x = w.mul(&d_top).mul(&winv);
    let delta = x.sub(&d_top);
    let big = (c * nn + eps_used + 1.0).powi(3);
    let lam_prime = (nn + 1.0) * (big + nn) + 2.0;
    let residual_bound = 3.0 * c * lam_prime * eps_used;

    let delta_norm = sample_norm_upper(&delta);
    let zero_witness = delta_norm < residual_bound;
    let y = if zero_witness {
        zero_like(&delta)
    } else {
        ext.ideal_approx(&delta)
    };
    let residual = sample_norm_upper(&delta.sub(&y));
    if residual > residual_bound + 1e-9 {
        return Err(ExtError::Bound(format!(
            "ideal approximation residual {residual} exceeds {residual_bound}"
        )));
    }

    let e = match ext.ideal_repr(&y)? {
        Some(yr) => {
            let d_ideal = scalar_top_projection(&ext.ideal, n, yr.blocks);
            yr.add(&d_ideal)
        }
        None => y.add(&d_top),
    };
    let cert = certify_idempotent(&e, None)?;
    let lambda = CtrlExpr::c(cert.epsilon / eps.max(1e-15));
    let h = CtrlExpr::c(cert.r / pair.cert.r.max(1.0));
    let control = ControlPair::new(lambda, h, "boundary map, measured composite");
    Ok(BoundaryClass {
        class: KZeroRep::new(&e, n, cert),
        y,
        residual,
        residual_bound,
        zero_witness,
        control,
        scalar_rank: n,
    })
}

/// Rank-based Fredholm index of the one-sided compression of a band symbol
/// with an exact band inverse: rank(1 - VU) - rank(1 - UV) on the lifted pair.
pub fn toeplitz_index_oracle(ext: &Extension, pair: &InversePair) -> Result<i64> {
    let (band, window) = match &ext.kind {
        ExtKind::Toeplitz { band, window } => (*band, *window),
        _ => return Err(ExtError::Unsupported("index oracle needs the band extension".into())),
    };
    let u = ext.lift(&pair.u);
    let v = ext.lift(&pair.v);
    let one = ident(&ext.total, pair.u.blocks);
    let ker = one.sub(&v.mul(&u));
    let coker = one.sub(&u.mul(&v));
    let m = window + 4 * band.unsigned_abs() as usize + 8;
    let rk = ker.band_truncation(m).numerical_rank(1e-8) as i64;
    let rc = coker.band_truncation(m).numerical_rank(1e-8) as i64;
    Ok(rk - rc)
}

// ---------------------------------------------------------------------------
// mid-exactness witnesses

#[derive(Clone, Debug)]
pub struct MidexactWitness {
    pub witness: FilteredElement,
    pub distance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// K0 mid-exactness: an idempotent g over the total algebra whose image in
/// the quotient is conjugate to a scalar projection (via the pair (s, s'))
/// is close to a representative supported in the ideal:
/// f = ideal part of (w diag(g,0) w^{-1} - diag(I_k,0)) + diag(I_k,0).
pub fn k0_midexactness_witness(
    ext: &Extension,
    g: &FilteredElement,
    sim: &InversePair,
    k_rank: usize,
) -> Result<MidexactWitness> {
    let m = g.blocks;
    let il = lift_inverse_pair(ext, sim, 2)?;
    let e2 = g.block_diag(&zero_like(g));
    let eprime = il.w.mul(&e2).mul(&il.winv);
    let dk = scalar_top_projection(&ext.total, k_rank, 2 * m);
    let y = ext.ideal_approx(&eprime.sub(&dk));
    let f = y.add(&dk);
    let dist = sample_distance(&f, &eprime);
    let eps = sim.cert.epsilon;
    let nn = sim.cert.n_bound;
    let c = ext.c;
    let lam = nn + 1.0;
    let bound = 3.0 * c * nn * (lam + 1.0) * (c * lam + eps + 1.0).powi(3) * eps;
    Ok(MidexactWitness { witness: f, distance: dist, bound, pass: dist <= bound + 1e-9 })
}

/// K1 mid-exactness: an invertible over the total algebra whose image in the
/// quotient is homotopic to the identity differs from an invertible of the
/// unitized ideal by a controlled amount.
pub fn k1_midexactness_witness(
    ext: &Extension,
    u_total: &FilteredElement,
    path_q: &HomotopyPath,
    eps_target: f64,
) -> Result<MidexactWitness> {
    let hl = lift_homotopic_invertible(ext, path_q, eps_target)?;
    let m = hl.a.blocks;
    let n = u_total.blocks;
    let z = u_total
        .block_diag(&ident(&ext.total, m - n))
        .mul(&hl.a_inv);
    let one = ident(&ext.total, m);
    let y = ext.ideal_approx(&z.sub(&one));
    let witness = one.add(&y);
    let dist = sample_distance(&witness, &z);
    let eps = eps_target.max(path_q.cert.epsilon);
    let nn = path_q.cert.n_bound;
    let c = ext.c;
    let lam = (nn + 1.0) * ((c * nn + eps + 1.0).powi(3) + nn) + 2.0;
    let bound = c * (lam * lam + lam) * eps;
    Ok(MidexactWitness { witness, distance: dist, bound, pass: dist <= bound + 1e-9 })
}

// ---------------------------------------------------------------------------
// exactness probe suites

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRecord {
    pub probe: String,
    pub params: BTreeMap<String, f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub records: Vec<ProbeRecord>,
    pub pass: bool,
}

pub(crate) fn record(probe: &str, params: &[(&str, f64)], pass: bool) -> ProbeRecord {
    ProbeRecord {
        probe: probe.into(),
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        pass,
    }
}

/// A random invertible of the unitized quotient of the form 1 + (small),
/// returned with its exact inverse.
fn random_near_identity(
    ext: &Extension,
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> Option<(FilteredElement, FilteredElement)> {
    let nb = match &ext.kind {
        ExtKind::Split { n_quot, .. } => *n_quot,
        ExtKind::Cone { base, .. } => base.dim(),
        ExtKind::Toeplitz { .. } => return None,
    };
    let a = random_matrix(rng, nb, nb).scale_re(scale / nb as f64);
    let mat = Mat::identity(nb).add(&a);
    let inv = mat.inverse()?;
    let mk = |m: Mat| FilteredElement {
        algebra: ext.quotient.clone(),
        blocks: 1,
        data: ElemData::Dense { mat: m, scalar: Some(Mat::identity(1)) },
        propagation: nb as f64,
    };
    Some((mk(mat), mk(inv)))
}

pub fn exactness_probes(ext: &Extension, trials: usize, seed: u64) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    match &ext.kind {
        ExtKind::Cone { base, samples } => {
            let nb = base.dim();
            for _ in 0..trials {
                // a liftable class: u = q(U) for an invertible path U, with a
                // slightly perturbed companion inverse
                let a = random_matrix(&mut rng, nb, nb).scale_re(0.2 / nb as f64);
                let noise = random_matrix(&mut rng, nb, nb).scale_re(1e-4 / nb as f64);
                let ts = sample_ts(*samples);
                let mk_path = |mats: Vec<Mat>| ElemData::Path {
                    samples: mats
                        .into_iter()
                        .map(|m| ElemData::Dense { mat: m, scalar: Some(Mat::identity(1)) })
                        .collect(),
                    lipschitz: 1.0,
                };
                let umats: Vec<Mat> =
                    ts.iter().map(|&t| Mat::identity(nb).add(&a.scale_re(t))).collect();
                let uinvmats: Vec<Mat> = umats
                    .iter()
                    .map(|m| m.inverse().expect("near-identity invertible").add(&noise))
                    .collect();
                let mk = |d: ElemData| FilteredElement {
                    algebra: ext.total.clone(),
                    blocks: 1,
                    data: d,
                    propagation: nb as f64,
                };
                let ubig = mk(mk_path(umats));
                let vbig = mk(mk_path(uinvmats));
                let u = ext.quotient_map(&ubig);
                let v = ext.quotient_map(&vbig);
                let pair = certify_inverse_pair(&u, &v)?;
                // w = diag(U, V) with blockwise inverse diag(V, U) (up to the
                // injected noise, which the residual bound absorbs)
                let w = ubig.block_diag(&vbig);
                let winv = vbig.block_diag(&ubig);
                let bd = boundary_d1(
                    ext,
                    &KOneRep { pair },
                    BoundaryRoute::Explicit { w: &w, winv: &winv },
                )?;
                records.push(record(
                    "liftable class boundary vanishes (y = 0 witness)",
                    &[("residual", bd.residual), ("bound", bd.residual_bound)],
                    bd.zero_witness,
                ));
            }
        }
        ExtKind::Split { .. } => {
            for _ in 0..trials {
                let (u, v) = random_near_identity(ext, &mut rng, 0.3)
                    .ok_or_else(|| ExtError::Unsupported("singular random draw".into()))?;
                let pair = certify_inverse_pair(&u, &v)?;
                let bd = boundary_d1(ext, &KOneRep { pair }, BoundaryRoute::Direct)?;
                let class = crate::funcalc::to_ordinary_k0(&bd.class)
                    .map_err(|e| ExtError::Unsupported(e.to_string()))?;
                records.push(record(
                    "split extension boundary is zero",
                    &[("class", class as f64), ("residual", bd.residual)],
                    class == 0,
                ));
            }
        }
        ExtKind::Toeplitz { band, .. } => {
            let wmax = *band;
            for w in -wmax..=wmax {
                let mk = |d: i64| FilteredElement {
                    algebra: ext.quotient.clone(),
                    blocks: 1,
                    data: ElemData::Band(BandData {
                        diags: [(d, Mat::identity(1))].into_iter().collect(),
                        correction: None,
                    }),
                    propagation: d.unsigned_abs() as f64,
                };
                let pair = certify_inverse_pair(&mk(w), &mk(-w))?;
                let oracle = toeplitz_index_oracle(ext, &pair)?;
                let bd = boundary_d1(ext, &KOneRep { pair }, BoundaryRoute::Direct)?;
                let class = crate::funcalc::to_ordinary_k0(&bd.class)
                    .map_err(|e| ExtError::Unsupported(e.to_string()))?;
                records.push(record(
                    "band symbol boundary equals minus the winding",
                    &[
                        ("winding", w as f64),
                        ("class", class as f64),
                        ("oracle", oracle as f64),
                    ],
                    class == -w && class == oracle,
                ));
            }
        }
    }
    let pass = records.iter().all(|r| r.pass);
    Ok(ProbeReport { records, pass })
}

/// Naturality of the boundary map under a corner inclusion of split
/// extensions: the integer invariant of the boundary class agrees whether the
/// class is mapped before or after applying the boundary.
pub fn naturality_probe(
    small: &Extension,
    big: &Extension,
    trials: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let (nq_s, nq_b) = match (&small.kind, &big.kind) {
        (ExtKind::Split { n_quot: a, .. }, ExtKind::Split { n_quot: b, .. }) if b >= a => (*a, *b),
        _ => return Err(ExtError::Unsupported("naturality probe needs nested split extensions".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for _ in 0..trials {
        let (u, v) = random_near_identity(small, &mut rng, 0.3)
            .ok_or_else(|| ExtError::Unsupported("singular random draw".into()))?;
        let embed = |x: &FilteredElement| -> FilteredElement {
            let (mat, scalar) = dense_parts(x);
            let z = scalar.clone().unwrap();
            let mut out = z.kron(&Mat::identity(nq_b));
            for i in 0..nq_s {
                for j in 0..nq_s {
                    out[(i, j)] = mat[(i, j)];
                }
            }
            FilteredElement {
                algebra: big.quotient.clone(),
                blocks: 1,
                data: ElemData::Dense { mat: out, scalar },
                propagation: nq_b as f64,
            }
        };
        let pair_s = certify_inverse_pair(&u, &v)?;
        let pair_b = certify_inverse_pair(&embed(&u), &embed(&v))?;
        let c_s = boundary_d1(small, &KOneRep { pair: pair_s }, BoundaryRoute::Direct)?;
        let c_b = boundary_d1(big, &KOneRep { pair: pair_b }, BoundaryRoute::Direct)?;
        let k_s = crate::funcalc::to_ordinary_k0(&c_s.class)
            .map_err(|e| ExtError::Unsupported(e.to_string()))?;
        let k_b = crate::funcalc::to_ordinary_k0(&c_b.class)
            .map_err(|e| ExtError::Unsupported(e.to_string()))?;
        records.push(record(
            "boundary commutes with the corner inclusion",
            &[("small", k_s as f64), ("big", k_b as f64)],
            k_s == k_b,
        ));
    }
    let pass = records.iter().all(|r| r.pass);
    Ok(ProbeReport { records, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcalc::to_ordinary_k0;
    use crate::quasi::measured_lipschitz;

    fn split_pair_near_identity(ext: &Extension, seed: u64, scale: f64) -> InversePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, v) = random_near_identity(ext, &mut rng, scale).unwrap();
        certify_inverse_pair(&u, &v).unwrap()
    }

    #[test]
    fn sections_are_exact_and_contractive() {
        let cone = Extension::cone(3, PExp::Inf, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x = random_total_element(&cone, &mut rng);
            assert!(cone.section_defect(&cone.quotient_map(&x)) < 1e-12);
            // q kills the ideal part
            let y = cone.ideal_approx(&x);
            assert!(op_norm_element(&cone.quotient_map(&y)).upper < 1e-12);
        }
        let rep = check_completely_filtered(&cone, 20, 1);
        assert!(rep.estimate <= 1.0 + 1e-6, "cone estimate {}", rep.estimate);

        let split = Extension::split(2, 3, PExp::TWO);
        let rep2 = check_completely_filtered(&split, 20, 2);
        assert!(rep2.estimate <= 1.0 + 1e-6, "split estimate {}", rep2.estimate);

        // zero ideal: the quotient map is an isomorphism and the constant is 1
        let zero_ideal = Extension::split(0, 3, PExp::TWO);
        let rep3 = check_completely_filtered(&zero_ideal, 10, 3);
        assert!((rep3.estimate - 1.0).abs() <= 1e-9);

        let toe = Extension::toeplitz(1, 8, PExp::TWO, 2.0);
        let rep4 = check_completely_filtered(&toe, 10, 4);
        assert!(rep4.estimate.is_finite() && rep4.estimate > 0.0);
    }

    #[test]
    fn inverse_pair_lift_identity_input() {
        let ext = Extension::split(2, 2, PExp::Inf);
        let one = ident(&ext.quotient, 1);
        let pair = certify_inverse_pair(&one, &one).unwrap();
        let il = lift_inverse_pair(&ext, &pair, 9).unwrap();
        assert!(il.report.pass(), "bounds: {:?}", il.report.bounds);
        assert!(il.report.q_defect < 1e-10);
        // q(w) is exactly the 2x2 identity
        let q = ext.quotient_map(&il.w);
        assert!(distance(&q, &ident(&ext.quotient, 2)).upper < 1e-10);
    }

    #[test]
    fn inverse_pair_lift_exact_invertible() {
        let ext = Extension::split(2, 3, PExp::Inf);
        let pair = split_pair_near_identity(&ext, 11, 0.4);
        let il = lift_inverse_pair(&ext, &pair, 9).unwrap();
        assert!(il.report.pass(), "bounds: {:?}", il.report.bounds);
        // the quotient defect has the exact algebraic 2x2 block form
        assert!(il.report.identity_defect < 1e-10);
        assert!(il.report.inv_residual < 1e-10);
        // the homotopy starts at the identity and ends at w
        assert!(distance(il.path.start(), &ident(&ext.total, 2)).upper < 1e-12);
        assert!(distance(il.path.end(), &il.w).upper < 1e-12);
        assert!(measured_lipschitz(&il.path.samples).is_finite());
    }

    #[test]
    fn inverse_pair_lift_on_cone_randoms() {
        let ext = Extension::cone(2, PExp::Inf, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let (u, v) = random_near_identity(&ext, &mut rng, 0.3).unwrap();
            let pair = certify_inverse_pair(&u, &v).unwrap();
            let il = lift_inverse_pair(&ext, &pair, 5).unwrap();
            assert!(il.report.pass(), "bounds: {:?}", il.report.bounds);
            assert!(il.report.identity_defect < 1e-10);
        }
    }

    #[test]
    fn homotopic_lift_identity_is_identity() {
        let ext = Extension::split(2, 2, PExp::Inf);
        let one = ident(&ext.quotient, 1);
        let path = HomotopyPath {
            samples: vec![one.clone(), one.clone()],
            inverses: Some(vec![one.clone(), one.clone()]),
            lipschitz: 0.0,
            cert: QCertificate::new(0.01, 2.0, 1.0),
            kind: PathKind::Invertible,
        };
        let hl = lift_homotopic_invertible(&ext, &path, 0.01).unwrap();
        assert_eq!(hl.k, 0);
        assert!(distance(&hl.a, &ident(&ext.total, 2)).upper < 1e-12);
    }

    #[test]
    fn homotopic_lift_cone_short_path() {
        let ext = Extension::cone(2, PExp::Inf, 9);
        let nb = 2;
        let a = Mat::from_real_rows(&[vec![0.05, 0.02], vec![0.0, -0.04]]);
        let mk = |t: f64| {
            let m = Mat::identity(nb).add(&a.scale_re(1.0 - t));
            FilteredElement {
                algebra: ext.quotient.clone(),
                blocks: 1,
                data: ElemData::Dense { mat: m.clone(), scalar: Some(Mat::identity(1)) },
                propagation: nb as f64,
            }
        };
        let ts = sample_ts(9);
        let samples: Vec<FilteredElement> = ts.iter().map(|&t| mk(t)).collect();
        let inverses: Vec<FilteredElement> = ts
            .iter()
            .map(|&t| {
                let m = Mat::identity(nb).add(&a.scale_re(1.0 - t));
                FilteredElement {
                    algebra: ext.quotient.clone(),
                    blocks: 1,
                    data: ElemData::Dense {
                        mat: m.inverse().unwrap(),
                        scalar: Some(Mat::identity(1)),
                    },
                    propagation: nb as f64,
                }
            })
            .collect();
        let path = HomotopyPath {
            lipschitz: measured_lipschitz(&samples),
            samples,
            inverses: Some(inverses),
            cert: QCertificate::new(0.02, 2.0, 1.2),
            kind: PathKind::Invertible,
        };
        let hl = lift_homotopic_invertible(&ext, &path, 0.02).unwrap();
        assert!(hl.k >= 1);
        assert!(hl.q_exactness < 1e-10, "q defect {}", hl.q_exactness);
        assert!(hl.defect <= hl.defect_bound + 1e-9, "{} vs {}", hl.defect, hl.defect_bound);
        assert!(hl.vw_defect <= hl.vw_defect_bound + 1e-9);
        assert!(hl.inv_residual < 0.05);
        // the ideal part really is killed by q
        assert!(op_norm_element(&ext.quotient_map(&hl.d)).upper < 1e-10);
    }

    #[test]
    fn boundary_vanishes_on_split_extension() {
        let ext = Extension::split(2, 2, PExp::Inf);
        for seed in 0..5 {
            let pair = split_pair_near_identity(&ext, 100 + seed, 0.3);
            let bd = boundary_d1(&ext, &KOneRep { pair }, BoundaryRoute::Direct).unwrap();
            assert!(bd.residual <= bd.residual_bound + 1e-9);
            let class = to_ordinary_k0(&bd.class).unwrap();
            assert_eq!(class, 0);
        }
    }

    #[test]
    fn boundary_identity_input_is_zero() {
        let ext = Extension::split(2, 2, PExp::Inf);
        let one = ident(&ext.quotient, 1);
        let pair = certify_inverse_pair(&one, &one).unwrap();
        let bd = boundary_d1(&ext, &KOneRep { pair }, BoundaryRoute::Direct).unwrap();
        assert!(bd.zero_witness);
        assert_eq!(to_ordinary_k0(&bd.class).unwrap(), 0);
    }

    #[test]
    fn boundary_matches_winding_on_band_extension() {
        let ext = Extension::toeplitz(2, 48, PExp::Inf, 2.0);
        let report = exactness_probes(&ext, 0, 5).unwrap();
        assert_eq!(report.records.len(), 5);
        assert!(report.pass, "records: {:?}", report.records);
    }

    #[test]
    fn boundary_via_homotopy_lift_agrees() {
        let ext = Extension::split(2, 2, PExp::Inf);
        let pair = split_pair_near_identity(&ext, 31, 0.15);
        // path diag(u,v) -> I (entrywise linear; stays invertible near 1)
        let duv = pair.u.block_diag(&pair.v);
        let dvu = pair.v.block_diag(&pair.u);
        let one2 = ident(&ext.quotient, 2);
        let ts = sample_ts(17);
        let samples: Vec<FilteredElement> = ts
            .iter()
            .map(|&t| duv.scale(Complex64::new(1.0 - t, 0.0)).add(&one2.scale(Complex64::new(t, 0.0))))
            .collect();
        let inverses: Vec<FilteredElement> = samples
            .iter()
            .map(|s| {
                let (m, z) = dense_parts(s);
                FilteredElement {
                    algebra: ext.quotient.clone(),
                    blocks: 2,
                    data: ElemData::Dense { mat: m.inverse().unwrap(), scalar: z.map(|zz| zz.inverse().unwrap()) },
                    propagation: s.propagation,
                }
            })
            .collect();
        let _ = &dvu;
        let path = HomotopyPath {
            lipschitz: measured_lipschitz(&samples),
            samples,
            inverses: Some(inverses),
            cert: QCertificate::new(0.04, 2.0, 1.3),
            kind: PathKind::Invertible,
        };
        let rep = KOneRep { pair };
        let via = boundary_d1(&ext, &rep, BoundaryRoute::ViaHomotopyLift { path: &path, eps_target: 0.04 }).unwrap();
        let direct = boundary_d1(&ext, &rep, BoundaryRoute::Direct).unwrap();
        assert_eq!(
            to_ordinary_k0(&via.class).unwrap(),
            to_ordinary_k0(&direct.class).unwrap()
        );
    }

    #[test]
    fn liftable_classes_vanish_on_cone() {
        let ext = Extension::cone(2, PExp::Inf, 17);
        let report = exactness_probes(&ext, 5, 9).unwrap();
        assert!(report.pass, "records: {:?}", report.records);
    }

    #[test]
    fn naturality_on_nested_split_extensions() {
        let small = Extension::split(2, 2, PExp::Inf);
        let big = Extension::split(2, 3, PExp::Inf);
        let report = naturality_probe(&small, &big, 5, 13).unwrap();
        assert!(report.pass, "records: {:?}", report.records);
    }

    #[test]
    fn midexactness_witnesses_on_split_extension() {
        let ext = Extension::split(2, 2, PExp::Inf);
        // K0: g = lifted scalar projection conjugated by a near-identity
        let g = scalar_top_projection(&ext.total, 1, 2);
        let pair1 = split_pair_near_identity(&ext, 41, 0.1);
        // stabilize the similarity pair to the matrix size of g
        let one_q = ident(&ext.quotient, 1);
        let pair = certify_inverse_pair(&pair1.u.block_diag(&one_q), &pair1.v.block_diag(&one_q))
            .unwrap();
        let w0 = k0_midexactness_witness(&ext, &g, &pair, 1).unwrap();
        assert!(w0.pass, "k0 witness distance {} vs {}", w0.distance, w0.bound);

        // K1: u over the total algebra with q(u) homotopic to 1
        let pair2 = split_pair_near_identity(&ext, 43, 0.1);
        let u_total = ext.lift(&pair2.u);
        let one_q = ident(&ext.quotient, 1);
        let ts = sample_ts(9);
        let samples: Vec<FilteredElement> = ts
            .iter()
            .map(|&t| {
                pair2
                    .u
                    .scale(Complex64::new(1.0 - t, 0.0))
                    .add(&one_q.scale(Complex64::new(t, 0.0)))
            })
            .collect();
        let inverses: Vec<FilteredElement> = samples
            .iter()
            .map(|s| {
                let (m, z) = dense_parts(s);
                FilteredElement {
                    algebra: ext.quotient.clone(),
                    blocks: 1,
                    data: ElemData::Dense {
                        mat: m.inverse().unwrap(),
                        scalar: z.map(|zz| zz.inverse().unwrap()),
                    },
                    propagation: s.propagation,
                }
            })
            .collect();
        let path = HomotopyPath {
            lipschitz: measured_lipschitz(&samples),
            samples,
            inverses: Some(inverses),
            cert: QCertificate::new(0.03, 2.0, 1.2),
            kind: PathKind::Invertible,
        };
        let w1 = k1_midexactness_witness(&ext, &u_total, &path, 0.03).unwrap();
        assert!(w1.pass, "k1 witness distance {} vs {}", w1.distance, w1.bound);
    }
}
