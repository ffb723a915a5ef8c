//! Suite runner: seeded randomized instances for every certified
//! construction, per-trial pass/overflow/fail records, and byte-stable
//! JSON/CSV report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{make_element, AlgebraInstance, ElementInput, FilteredElement, PExp};
use crate::cstar::{kappa0_rank, polar_decompose, to_quasi_projection};
use crate::extensions::{exactness_probes, naturality_probe, Extension, ProbeRecord};
use crate::funcalc::{check_kappa0_bounds, eigenprojection_oracle, kappa0};
use crate::linalg::Mat;
use crate::mayervietoris::{
    linear_path_to_identity, metamorphic_suite, mv_factorize, negative_control,
    random_near_identity_pair, FactorizeOptions, MVPair,
};
use crate::pnorm::{boyd_estimate, distance, op_norm, op_norm_element, random_matrix};
use crate::quasi::{
    certify_idempotent, certify_inverse_pair, close_implies_similar, conjugate_idempotent,
    conjugation_homotopy, idempotent_residual, inverse_pair_identity_defect,
    inverse_pair_residuals, inverse_pair_to_identity, lipschitz_homotopy_to_similarity, orth_sum,
    perturb_idempotent, perturb_invertible, segment_homotopy, segment_identity_defect,
    swap_homotopy, swap_identity_defect, verify_path, InversePair, QCertificate, QuasiError,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown suite: {0}")]
    UnknownSuite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical non-convergence: {0}")]
    NonConvergence(String),
    #[error("report parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Suite registry: id -> the construction it exercises. Doubles as the docs
/// table; a test checks the dispatcher covers exactly these ids.
pub const SUITES: &[(&str, &str)] = &[
    ("axioms", "block-diagonal and compression norm axioms on random matrices"),
    ("boyd", "power-iteration lower bound vs the exact p = 2 norm"),
    ("normest1", "linear perturbation of a certified idempotent"),
    ("normest2", "linear perturbation of a certified quasi-invertible"),
    ("normest3", "linear segment between close idempotents + its defect identity"),
    ("orthsum", "orthogonal sum certificate and the rotation homotopy"),
    ("pairpath", "homotopy diag(u,v) -> 1 with the exact product identity"),
    ("invcomm", "rotation swap homotopy diag(u,v) -> diag(v,u)"),
    ("simtohom1", "conjugated idempotent u e v and its homotopy to e"),
    ("simtohom2", "Lipschitz homotopy compiled into a single similarity"),
    ("closesim", "close idempotents are conjugate via a Neumann inverse"),
    ("kappa0", "Riesz projection bounds and the eigenprojection oracle"),
    ("boundary-toeplitz", "index map on the band-symbol extension vs the rank oracle"),
    ("boundary-cone", "liftable classes have vanishing boundary on the cone"),
    ("boundary-split", "split extensions have zero boundary"),
    ("naturality", "boundary commutes with corner inclusions of split extensions"),
    ("mv-factor", "two-window factorization of a near-identity invertible"),
    ("mv-meta", "boundary well-definedness under construction variations"),
    ("cstar-bridge", "p = 2 symmetrization and polar decomposition"),
    ("noop", "empty suite (plumbing check)"),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub suite: String,
    pub trials: usize,
    pub seed: u64,
    pub p: PExp,
    /// base matrix dimension for generated instances
    pub size: usize,
    /// declared-epsilon sampling range, within (0, 1/20)
    pub eps_range: (f64, f64),
    /// tolerance knob used by oracle-comparison suites
    pub tol: f64,
    /// path samples for homotopy re-certification
    pub samples: usize,
}

impl SuiteConfig {
    pub fn new(suite: &str) -> SuiteConfig {
        SuiteConfig {
            suite: suite.into(),
            trials: 200,
            seed: 7,
            p: PExp::Inf,
            size: 8,
            eps_range: (1e-3, 0.02),
            tol: 1e-6,
            samples: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p.is_valid() {
            return Err(HarnessError::Config("invalid p".into()));
        }
        let (lo, hi) = self.eps_range;
        if !(lo > 0.0 && lo <= hi && hi < 0.05) {
            return Err(HarnessError::Config(format!(
                "eps range ({lo}, {hi}) not inside (0, 1/20)"
            )));
        }
        if self.size < 2 || self.samples < 2 {
            return Err(HarnessError::Config("size and samples must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Overflow,
    Fail,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub check: String,
    /// hash of the generated inputs, for reproducibility triage
    pub digest: String,
    /// certified left-hand side (measured quantity)
    pub lhs: f64,
    /// claimed bound
    pub bound: f64,
    pub status: Status,
}

/// Incurred control data: the output certificate of a construction, keyed by
/// check name (worst epsilon kept).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlRecord {
    pub check: String,
    pub epsilon: f64,
    pub r: f64,
    pub n_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub trials: Vec<TrialRecord>,
    pub pass: usize,
    pub fail: usize,
    pub overflow: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<ControlRecord>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.fail == 0
    }
}

// ---------------------------------------------------------------------------
// record plumbing

/// FNV-1a over a canonical byte stream; hex digest.
struct Digest(u64);

impl Digest {
    fn new() -> Digest {
        Digest(0xcbf29ce484222325)
    }
    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_bits().to_le_bytes());
    }
    fn mat(&mut self, m: &Mat) {
        self.bytes(&(m.rows as u64).to_le_bytes());
        for z in &m.data {
            self.f64(z.re);
            self.f64(z.im);
        }
    }
    fn elem(&mut self, x: &FilteredElement) {
        self.mat(x.dense());
    }
    fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

/// pass needs a certified margin: 1e-12 absolute, relaxed to half the bound
/// when the bound itself is tiny (identity checks at ~1e-12).
fn status_of(lhs: f64, bound: f64) -> Status {
    let margin = 1e-12f64.min(bound.abs() * 0.5);
    if lhs <= bound - margin {
        Status::Pass
    } else {
        Status::Fail
    }
}

struct Recorder {
    out: Vec<TrialRecord>,
    controls: BTreeMap<String, ControlRecord>,
}

impl Recorder {
    fn new() -> Recorder {
        Recorder { out: Vec::new(), controls: BTreeMap::new() }
    }
    fn bound(&mut self, trial: usize, check: &str, digest: &str, lhs: f64, bound: f64) {
        self.out.push(TrialRecord {
            trial,
            check: check.into(),
            digest: digest.into(),
            lhs,
            bound,
            status: status_of(lhs, bound),
        });
    }
    fn flag(&mut self, trial: usize, check: &str, digest: &str, ok: bool) {
        self.out.push(TrialRecord {
            trial,
            check: check.into(),
            digest: digest.into(),
            lhs: if ok { 0.0 } else { 1.0 },
            bound: 0.5,
            status: if ok { Status::Pass } else { Status::Fail },
        });
    }
    fn overflow(&mut self, trial: usize, check: &str, digest: &str, lhs: f64, bound: f64) {
        self.out.push(TrialRecord {
            trial,
            check: check.into(),
            digest: digest.into(),
            lhs,
            bound,
            status: Status::Overflow,
        });
    }
    fn control(&mut self, check: &str, cert: &QCertificate) {
        let e = self.controls.entry(check.into()).or_insert(ControlRecord {
            check: check.into(),
            epsilon: 0.0,
            r: 0.0,
            n_bound: 0.0,
        });
        e.epsilon = e.epsilon.max(cert.epsilon);
        e.r = e.r.max(cert.r);
        e.n_bound = e.n_bound.max(cert.n_bound);
    }
    fn probe(&mut self, trial: usize, rec: &ProbeRecord) {
        let mut d = Digest::new();
        d.bytes(rec.probe.as_bytes());
        for (k, v) in &rec.params {
            d.bytes(k.as_bytes());
            d.f64(*v);
        }
        self.flag(trial, &rec.probe, &d.hex(), rec.pass);
    }
    fn finish(self) -> SuiteReport {
        let pass = self.out.iter().filter(|r| r.status == Status::Pass).count();
        let fail = self.out.iter().filter(|r| r.status == Status::Fail).count();
        let overflow = self.out.iter().filter(|r| r.status == Status::Overflow).count();
        SuiteReport {
            trials: self.out,
            pass,
            fail,
            overflow,
            controls: self.controls.into_values().collect(),
        }
    }
}

fn trial_seed(master: u64, trial: usize) -> u64 {
    // counter-derived so parallel trial order can never change results
    master ^ (trial as u64).wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x2545f4914f6cdd1d)
}

fn trial_rng(master: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(master, trial))
}

// ---------------------------------------------------------------------------
// instance generators

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn from_mat(alg: &AlgebraInstance, m: Mat) -> FilteredElement {
    let blocks = m.rows / alg.dim();
    make_element(alg, blocks, ElementInput::Matrix(m)).expect("well-formed dense element")
}

fn banded_mat(rng: &mut ChaCha8Rng, n: usize, band: usize, scale: f64) -> Mat {
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if (i as i64 - j as i64).unsigned_abs() as usize <= band {
                m[(i, j)] = c(
                    (rng.gen::<f64>() - 0.5) * scale,
                    (rng.gen::<f64>() - 0.5) * scale,
                );
            }
        }
    }
    m
}

/// near-identity similarity with a dense inverse
fn similarity(rng: &mut ChaCha8Rng, n: usize) -> (Mat, Mat) {
    loop {
        let g = Mat::identity(n).add(&banded_mat(rng, n, 2, 0.3));
        if let Some(gi) = g.inverse() {
            return (g, gi);
        }
    }
}

/// random proper diagonal 0/1 projection
fn split_diag(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    loop {
        let mut m = Mat::zeros(n, n);
        let mut ones = 0;
        for i in 0..n {
            if rng.gen_bool(0.5) {
                m[(i, i)] = c(1.0, 0.0);
                ones += 1;
            }
        }
        if ones > 0 && ones < n {
            return m;
        }
    }
}

/// exact idempotent g d g^{-1} with moderate norm
fn exact_idempotent(alg: &AlgebraInstance, rng: &mut ChaCha8Rng) -> FilteredElement {
    let n = alg.dim();
    let (g, gi) = similarity(rng, n);
    let d = split_diag(rng, n);
    from_mat(alg, g.mul(&d).mul(&gi))
}

/// quasi-inverse pair u = 1 + a (banded), v = exact inverse + noise; the
/// injected noise sets the certified epsilon away from zero.
fn quasi_pair(
    alg: &AlgebraInstance,
    rng: &mut ChaCha8Rng,
    scale: f64,
    noise: f64,
) -> InversePair {
    let n = alg.dim();
    loop {
        let u = Mat::identity(n).add(&banded_mat(rng, n, 2, scale));
        let Some(ui) = u.inverse() else { continue };
        let v = ui.add(&banded_mat(rng, n, 2, noise));
        let ue = from_mat(alg, u);
        let ve = from_mat(alg, v);
        if let Ok(pair) = certify_inverse_pair(&ue, &ve) {
            return pair;
        }
    }
}

fn sample_eps(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = cfg.eps_range;
    lo + (hi - lo) * rng.gen::<f64>()
}

fn norm_cap(e: &FilteredElement) -> f64 {
    let one = FilteredElement::identity(&e.algebra, e.blocks);
    op_norm_element(e)
        .upper
        .max(op_norm_element(&one.sub(e)).upper)
}

// ---------------------------------------------------------------------------
// suites

fn suite_axioms(cfg: &SuiteConfig, rec: &mut Recorder) {
    for t in 0..cfg.trials {
        let rep = crate::pnorm::check_axioms(cfg.p, 1, trial_seed(cfg.seed, t), cfg.size);
        let mut d = Digest::new();
        d.bytes(&trial_seed(cfg.seed, t).to_le_bytes());
        let worst = rep.max_d_inf_defect.max(rep.max_m_p_defect);
        if rep.clean() {
            rec.bound(t, "norm axioms certified", &d.hex(), worst, cfg.tol.max(1e-9));
        } else {
            rec.flag(t, "norm axioms certified", &d.hex(), false);
        }
    }
}

fn suite_boyd(cfg: &SuiteConfig, rec: &mut Recorder) {
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let n = rng.gen_range(2..=cfg.size);
        let m = random_matrix(&mut rng, n, n);
        let mut d = Digest::new();
        d.mat(&m);
        let exact = op_norm(&m, PExp::TWO).upper;
        let est = boyd_estimate(&m, 2.0, trial_seed(cfg.seed, t), 4000);
        rec.bound(t, "power iteration reaches the p=2 norm", &d.hex(), (exact - est).abs(), cfg.tol);
    }
}

fn suite_normest1(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let e = exact_idempotent(&alg, &mut rng);
        let eps = sample_eps(cfg, &mut rng);
        let nb = norm_cap(&e);
        let delta = eps / (2.0 * nb + 1.0) * 0.5;
        let f = e.add(&from_mat(&alg, banded_mat(&mut rng, cfg.size, 2, delta / 4.0)));
        let cert = QCertificate::new(eps, e.propagation.max(f.propagation), norm_cap(&f).max(nb));
        let mut d = Digest::new();
        d.elem(&e);
        d.elem(&f);
        let path = match perturb_idempotent(&e, &cert, &f, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("perturbed idempotent path", &path.cert);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        rec.bound(t, "path norm within certificate", &d.hex(), rep.max_norm, path.cert.n_bound + 1e-9);
        rec.flag(t, "path propagation within certificate", &d.hex(), rep.prop_ok);
    }
    Ok(())
}

fn suite_normest2(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let pair = quasi_pair(&alg, &mut rng, 0.2, 1e-5);
        let eps = sample_eps(cfg, &mut rng).max(pair.cert.epsilon * 2.0);
        let delta = (eps - pair.cert.epsilon) / pair.cert.n_bound * 0.5;
        let a = pair.u.add(&from_mat(&alg, banded_mat(&mut rng, cfg.size, 2, delta / 4.0)));
        let mut d = Digest::new();
        d.elem(&pair.u);
        d.elem(&a);
        let mut pair = pair;
        pair.cert.n_bound = pair.cert.n_bound.max(op_norm_element(&a).upper);
        pair.cert.r = pair.cert.r.max(a.propagation);
        let path = match perturb_invertible(&pair, &a, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("perturbed invertible path", &path.cert);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        rec.bound(t, "path norm within certificate", &d.hex(), rep.max_norm, path.cert.n_bound + 1e-9);
    }
    Ok(())
}

fn suite_normest3(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let e = exact_idempotent(&alg, &mut rng);
        let eps = sample_eps(cfg, &mut rng);
        let f = e.add(&from_mat(&alg, banded_mat(&mut rng, cfg.size, 2, eps / 8.0)));
        let cert = QCertificate::new(
            eps.max(idempotent_residual(&f).upper * 1.5),
            e.propagation.max(f.propagation),
            norm_cap(&e).max(norm_cap(&f)),
        );
        let mut d = Digest::new();
        d.elem(&e);
        d.elem(&f);
        let path = match segment_homotopy(&e, &f, &cert, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("linear segment path", &path.cert);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        let defect = segment_identity_defect(&e, &f, 65);
        rec.bound(t, "segment decomposition identity", &d.hex(), defect, 1e-12);
    }
    Ok(())
}

fn suite_orthsum(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let n = cfg.size;
        let (g, gi) = similarity(&mut rng, n);
        let d1 = split_diag(&mut rng, n);
        let mut d2 = Mat::zeros(n, n);
        for i in 0..n {
            if d1[(i, i)].re < 0.5 && rng.gen_bool(0.5) {
                d2[(i, i)] = c(1.0, 0.0);
            }
        }
        let e = from_mat(&alg, g.mul(&d1).mul(&gi));
        let f = from_mat(&alg, g.mul(&d2).mul(&gi));
        let ce = certify_idempotent(&e, None)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let cf = certify_idempotent(&f, None)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let cert = QCertificate::new(
            ce.epsilon.max(cf.epsilon),
            ce.r.max(cf.r),
            ce.n_bound.max(cf.n_bound),
        );
        let mut d = Digest::new();
        d.elem(&e);
        d.elem(&f);
        let (sum_cert, path) = match orth_sum(&e, &f, &cert, cfg.samples) {
            Ok(v) => v,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("orthogonal sum", &sum_cert);
        rec.control("orthogonal sum rotation path", &path.cert);
        let resid = idempotent_residual(&e.add(&f)).upper;
        rec.bound(t, "sum residual within certificate", &d.hex(), resid, sum_cert.epsilon);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        rec.bound(t, "path norm within certificate", &d.hex(), rep.max_norm, path.cert.n_bound + 1e-9);
    }
    Ok(())
}

fn suite_pairpath(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let pair = quasi_pair(&alg, &mut rng, 0.2, 1e-5);
        let mut d = Digest::new();
        d.elem(&pair.u);
        d.elem(&pair.v);
        let path = match inverse_pair_to_identity(&pair, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("pair-to-identity path", &path.cert);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        rec.bound(t, "path norm within certificate", &d.hex(), rep.max_norm, path.cert.n_bound + 1e-9);
        let defect = inverse_pair_identity_defect(&pair, 65);
        rec.bound(t, "rotation product identity", &d.hex(), defect, 1e-12);
    }
    Ok(())
}

fn suite_invcomm(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let pu = quasi_pair(&alg, &mut rng, 0.2, 1e-5);
        let pv = quasi_pair(&alg, &mut rng, 0.2, 1e-5);
        let mut d = Digest::new();
        d.elem(&pu.u);
        d.elem(&pv.u);
        let path = match swap_homotopy(&pu, &pv, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("swap rotation path", &path.cert);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        let defect = swap_identity_defect(&pu, &pv, 65);
        rec.bound(t, "swap conjugation identity", &d.hex(), defect, 1e-12);
    }
    Ok(())
}

fn suite_simtohom1(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let e = exact_idempotent(&alg, &mut rng);
        let cert = certify_idempotent(&e, None)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let pair = quasi_pair(&alg, &mut rng, 0.1, 1e-6);
        let mut d = Digest::new();
        d.elem(&e);
        d.elem(&pair.u);
        let (uev, out) = match conjugate_idempotent(&e, &cert, &pair) {
            Ok(v) => v,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("conjugated idempotent", &out);
        rec.bound(t, "conjugate residual within certificate", &d.hex(), idempotent_residual(&uev).upper, out.epsilon);
        let path = match conjugation_homotopy(&e, &cert, &pair, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("conjugation homotopy", &path.cert);
        let rep = verify_path(&path);
        rec.bound(t, "path residual within certificate", &d.hex(), rep.max_residual, path.cert.epsilon);
        rec.bound(t, "path norm within certificate", &d.hex(), rep.max_norm, path.cert.n_bound + 1e-9);
    }
    Ok(())
}

fn suite_simtohom2(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let e = exact_idempotent(&alg, &mut rng);
        let eps = 0.04;
        let f = e.add(&from_mat(&alg, banded_mat(&mut rng, cfg.size, 2, 5e-4)));
        let cert = QCertificate::new(
            eps,
            e.propagation.max(f.propagation),
            norm_cap(&e).max(norm_cap(&f)),
        );
        let mut d = Digest::new();
        d.elem(&e);
        d.elem(&f);
        let path = match segment_homotopy(&e, &f, &cert, cfg.samples) {
            Ok(p) => p,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        match lipschitz_homotopy_to_similarity(&path, 1.0 / path.cert.epsilon) {
            Ok((pair, rep)) => {
                rec.control("homotopy-induced similarity", &pair.cert);
                rec.bound(t, "conjugation error within bound", &d.hex(), rep.conjugation_error, rep.conjugation_bound);
                rec.bound(t, "pair residual within claim", &d.hex(), rep.pair_residual, rep.pair_residual_claim);
                rec.bound(t, "pair norm within claim", &d.hex(), rep.pair_norm, rep.pair_norm_claim + 1e-9);
            }
            Err(QuasiError::EpsilonOverflow(info)) if info.verified => {
                rec.overflow(
                    t,
                    "similarity parameters overflow (inequalities verified)",
                    &d.hex(),
                    info.cert.epsilon,
                    0.05,
                );
            }
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        }
    }
    Ok(())
}

fn suite_closesim(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size, cfg.p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let e = exact_idempotent(&alg, &mut rng);
        let eps = sample_eps(cfg, &mut rng);
        let nb = norm_cap(&e);
        let step = eps / (3.0 * (2.0 * nb + 1.0));
        let f = e.add(&from_mat(&alg, banded_mat(&mut rng, cfg.size, 2, step / 4.0)));
        let cert = QCertificate::new(
            eps.max(idempotent_residual(&f).upper * 1.5),
            e.propagation.max(f.propagation),
            nb.max(norm_cap(&f)),
        );
        let mut d = Digest::new();
        d.elem(&e);
        d.elem(&f);
        let (pair, rep) = match close_implies_similar(&e, &f, &cert) {
            Ok(v) => v,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("closeness similarity pair", &pair.cert);
        rec.bound(t, "conjugation error within bound", &d.hex(), rep.conjugation_error, rep.conjugation_bound);
        let (uv, vu) = inverse_pair_residuals(&pair.u, &pair.v);
        rec.bound(t, "Neumann tail certifies the inverse", &d.hex(), uv.upper.max(vu.upper), cert.epsilon);
    }
    Ok(())
}

fn suite_kappa0(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let p = if cfg.p.is_valid() { cfg.p } else { PExp::TWO };
    let alg = AlgebraInstance::interval_roe(cfg.size, p);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let e0 = exact_idempotent(&alg, &mut rng);
        let pert = banded_mat(&mut rng, cfg.size, 2, 1e-3);
        let e = e0.add(&from_mat(&alg, pert));
        let cert = match certify_idempotent(&e, None) {
            Ok(c) => c,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        let mut d = Digest::new();
        d.elem(&e);
        let riesz = kappa0(&e, &cert).map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        rec.bound(t, "projection residual", &d.hex(), riesz.residual, 1e-8);
        let bounds = check_kappa0_bounds(&e, &cert)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        rec.bound(t, "distance to the input within bound", &d.hex(), bounds.distance_to_input.lhs_upper, bounds.distance_to_input.rhs);
        rec.bound(t, "projection norm within bound", &d.hex(), bounds.projection_norm.lhs_upper, bounds.projection_norm.rhs);
        if let Some(oracle) = eigenprojection_oracle(riesz.output.dense()) {
            let diff = op_norm(&riesz.output.dense().sub(&oracle), p).upper;
            rec.bound(t, "matches the eigenprojection oracle", &d.hex(), diff, 1e-7);
        }
    }
    Ok(())
}

fn boundary_ext(cfg: &SuiteConfig, which: &str) -> Extension {
    match which {
        "toeplitz" => Extension::toeplitz(2, 24, cfg.p, 2.0),
        "cone" => Extension::cone(3, cfg.p, cfg.samples),
        _ => Extension::split(2, 3, cfg.p),
    }
}

fn suite_boundary(cfg: &SuiteConfig, which: &str, rec: &mut Recorder) -> Result<()> {
    let ext = boundary_ext(cfg, which);
    let rep = exactness_probes(&ext, cfg.trials, cfg.seed)
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    for (t, r) in rep.records.iter().enumerate() {
        rec.probe(t, r);
    }
    Ok(())
}

fn suite_naturality(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let small = Extension::split(2, 2, cfg.p);
    let big = Extension::split(2, 3, cfg.p);
    let rep = naturality_probe(&small, &big, cfg.trials, cfg.seed)
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    for (t, r) in rep.records.iter().enumerate() {
        rec.probe(t, r);
    }
    Ok(())
}

fn mv_instance(cfg: &SuiteConfig) -> MVPair {
    // overlap window scales with the instance: >= 16 r for propagation-1 pairs
    let n = cfg.size.max(16);
    MVPair::interval(n, cfg.p, (n / 8).max(2))
}

fn suite_mv_factor(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let mv = mv_instance(cfg);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        let pair = random_near_identity_pair(&mv, &mut rng, 2.5e-4, 1e-4, 1, None)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let path = linear_path_to_identity(&pair.u, pair.cert.epsilon, cfg.samples)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let mut d = Digest::new();
        d.elem(&pair.u);
        let opts = FactorizeOptions { homotopy_samples: 3, ..Default::default() };
        let fact = match mv_factorize(&mv, &pair, &path, &opts) {
            Ok(f) => f,
            Err(e) if e.is_overflow() => {
                rec.overflow(t, "factorization overflow", &d.hex(), 0.05, 0.05);
                continue;
            }
            Err(e) => return Err(HarnessError::NonConvergence(e.to_string())),
        };
        for b in &fact.records {
            if b.pass {
                rec.bound(t, &b.name, &d.hex(), b.lhs, b.rhs.max(b.lhs + 1e-9));
            } else {
                rec.flag(t, &b.name, &d.hex(), false);
            }
        }
        for (name, ok) in &fact.checks {
            rec.flag(t, name, &d.hex(), *ok);
        }
    }
    // the shortcut: a pair already within epsilon of the identity maps to I_2
    let one = FilteredElement::identity(&mv.algebra, 1);
    let mut rng = trial_rng(cfg.seed, usize::MAX / 2);
    let tiny = from_mat(&mv.algebra, banded_mat(&mut rng, mv.algebra.dim(), 1, 5e-5 / mv.algebra.dim() as f64));
    let u = one.add(&tiny);
    let pair = certify_inverse_pair(&u, &one)
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    let path = linear_path_to_identity(&u, pair.cert.epsilon.max(1e-4), 9)
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    let fact = mv_factorize(&mv, &pair, &path, &FactorizeOptions::default())
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    let mut d = Digest::new();
    d.elem(&u);
    let dist = distance(&fact.z1, &FilteredElement::identity(&mv.algebra, 2)).upper;
    rec.flag(cfg.trials, "near-identity shortcut", &d.hex(), fact.shortcut && fact.k == 2);
    rec.bound(cfg.trials, "shortcut output is the identity", &d.hex(), dist, 1e-12);
    Ok(())
}

fn suite_mv_meta(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let mv = MVPair::interval(cfg.size.max(16), cfg.p, 2);
    let rep = metamorphic_suite(&mv, cfg.trials, cfg.seed, 1)
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    for (t, r) in rep.records.iter().enumerate() {
        rec.probe(t, r);
    }
    // designed failure: an overlap too small for the factor supports must
    // surface as a stagewise overflow, never as a pass
    let overflowed = negative_control(cfg.size.max(16), cfg.p, cfg.seed, 1)
        .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
    let mut d = Digest::new();
    d.bytes(b"undersized overlap");
    d.bytes(&cfg.seed.to_le_bytes());
    if overflowed {
        rec.overflow(rep.records.len(), "undersized overlap control", &d.hex(), 0.05, 0.05);
    } else {
        rec.flag(rep.records.len(), "undersized overlap control", &d.hex(), false);
    }
    Ok(())
}

fn suite_cstar(cfg: &SuiteConfig, rec: &mut Recorder) -> Result<()> {
    let alg = AlgebraInstance::interval_roe(cfg.size.min(8), PExp::TWO);
    let n = alg.dim();
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, t);
        // polished random idempotent with a genuine skew part
        let mut seedm = Mat::zeros(n, n);
        for i in 0..n / 2 {
            seedm[(i, i)] = c(1.0, 0.0);
        }
        let seedm = seedm.add(&random_matrix(&mut rng, n, n).scale_re(0.08));
        let Some(pol) = seedm.idempotent_newton() else {
            continue;
        };
        let e = from_mat(&alg, pol);
        let cert = certify_idempotent(&e, None)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let mut d = Digest::new();
        d.elem(&e);
        let qp = match to_quasi_projection(&e, &cert, 9) {
            Ok(q) => q,
            Err(err) => return Err(HarnessError::NonConvergence(err.to_string())),
        };
        rec.control("symmetrized projection", &qp.cert);
        rec.control("symmetrization homotopy", &qp.homotopy.cert);
        rec.bound(t, "output is self-adjoint", &d.hex(), qp.sa_defect, 1e-12);
        rec.bound(t, "projection residual within certificate", &d.hex(), idempotent_residual(&qp.p2).upper, qp.cert.epsilon);
        let r0 = kappa0_rank(&e, &cert).map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let r1 = kappa0_rank(&qp.p2, &qp.cert).map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        rec.flag(t, "spectral rank preserved", &d.hex(), r0 == r1);

        // polar decomposition of an exact unitary: u = x and y = 1
        let perm = random_permutation_unitary(&mut rng, n);
        let x = from_mat(&alg, perm);
        let pair = certify_inverse_pair(&x, &x.adjoint())
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let pd = polar_decompose(&pair, None)
            .map_err(|e| HarnessError::NonConvergence(e.to_string()))?;
        let one = FilteredElement::identity(&alg, 1);
        let du = op_norm_element(&pd.u.sub(&crate::quasi::promote(&x))).upper;
        let dy = op_norm_element(&pd.y.sub(&one)).upper;
        rec.bound(t, "unitary factor reproduces the input", &d.hex(), du, 1e-8);
        rec.bound(t, "positive factor is the identity", &d.hex(), dy, 1e-8);
    }
    Ok(())
}

fn random_permutation_unitary(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut m = Mat::zeros(n, n);
    for (i, &j) in idx.iter().enumerate() {
        let phase = rng.gen::<f64>() * std::f64::consts::TAU;
        m[(i, j)] = c(phase.cos(), phase.sin());
    }
    m
}

// ---------------------------------------------------------------------------
// driver

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut rec = Recorder::new();
    match cfg.suite.as_str() {
        "axioms" => suite_axioms(cfg, &mut rec),
        "boyd" => suite_boyd(cfg, &mut rec),
        "normest1" => suite_normest1(cfg, &mut rec)?,
        "normest2" => suite_normest2(cfg, &mut rec)?,
        "normest3" => suite_normest3(cfg, &mut rec)?,
        "orthsum" => suite_orthsum(cfg, &mut rec)?,
        "pairpath" => suite_pairpath(cfg, &mut rec)?,
        "invcomm" => suite_invcomm(cfg, &mut rec)?,
        "simtohom1" => suite_simtohom1(cfg, &mut rec)?,
        "simtohom2" => suite_simtohom2(cfg, &mut rec)?,
        "closesim" => suite_closesim(cfg, &mut rec)?,
        "kappa0" => suite_kappa0(cfg, &mut rec)?,
        "boundary-toeplitz" => suite_boundary(cfg, "toeplitz", &mut rec)?,
        "boundary-cone" => suite_boundary(cfg, "cone", &mut rec)?,
        "boundary-split" => suite_boundary(cfg, "split", &mut rec)?,
        "naturality" => suite_naturality(cfg, &mut rec)?,
        "mv-factor" => suite_mv_factor(cfg, &mut rec)?,
        "mv-meta" => suite_mv_meta(cfg, &mut rec)?,
        "cstar-bridge" => suite_cstar(cfg, &mut rec)?,
        "noop" => {}
        other => return Err(HarnessError::UnknownSuite(other.into())),
    }
    Ok(rec.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Format> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(HarnessError::Config(format!("unknown format: {other}"))),
        }
    }
}

/// Canonical emission: field order is fixed by the struct, floats rendered by
/// serde_json's shortest round-trip form, so identical reports are
/// byte-identical.
pub fn emit_report(report: &SuiteReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string(report).expect("report serializes"),
        Format::Csv => {
            let mut out = String::from("trial,check,digest,lhs,bound,status\n");
            for r in &report.trials {
                let status = match r.status {
                    Status::Pass => "pass",
                    Status::Overflow => "overflow",
                    Status::Fail => "fail",
                };
                let check = r.check.replace(',', ";");
                let _ = writeln!(out, "{},{},{},{},{},{}", r.trial, check, r.digest, r.lhs, r.bound, status);
            }
            out
        }
    }
}

pub fn parse_report(json: &str) -> Result<SuiteReport> {
    serde_json::from_str(json).map_err(|e| HarnessError::Parse(e.to_string()))
}
