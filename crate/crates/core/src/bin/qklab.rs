//! CLI driver: run certification suites, apply single constructions to
//! user-supplied matrices, and re-emit reports.
//!
//! Exit codes: 0 pass, 1 fail records present, 2 usage/config error,
//! 3 numerical non-convergence.

use std::fs;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde_json::Value;

use qklab::algebra::{
    make_element, AlgebraInstance, BandData, ElemData, ElementInput, FilteredElement, PExp,
};
use qklab::extensions::{boundary_d1, BoundaryRoute, Extension};
use qklab::funcalc::{kappa0, to_ordinary_k0};
use qklab::harness::{emit_report, parse_report, run_suite, Format, HarnessError, SuiteConfig, SUITES};
use qklab::kclasses::KOneRep;
use qklab::linalg::Mat;
use qklab::mayervietoris::{linear_path_to_identity, mv_factorize, FactorizeOptions, MVPair};
use qklab::quasi::{certify_idempotent, certify_inverse_pair};

#[derive(Parser)]
#[command(name = "qklab", about = "numerical laboratory for certified quantitative K-theory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// master seed (QK_SEED overrides)
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// trial count
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// exponent p: a number >= 1 or "inf"
    #[arg(long, default_value = "inf")]
    p: String,
    /// oracle-comparison tolerance
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// write output here instead of stdout
    #[arg(long)]
    out: Option<String>,
    /// output format: json or csv
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// run a named suite and emit its report
    Verify {
        /// suite id; `--list` prints the registry
        suite: Option<String>,
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Riesz projection of a quasi-idempotent matrix (JSON file)
    Kappa0 {
        matrix_file: String,
        #[command(flatten)]
        common: Common,
    },
    /// boundary class of an invertible over the quotient of an extension
    Boundary {
        ext_config: String,
        u_file: String,
        #[command(flatten)]
        common: Common,
    },
    /// two-window factorization of a near-identity invertible
    MvFactor {
        mv_config: String,
        u_file: String,
        #[command(flatten)]
        common: Common,
    },
    /// re-emit a JSON report in another format
    Report {
        input: String,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                AppError::Usage(_) => ExitCode::from(2),
                AppError::Numerical(_) => ExitCode::from(3),
            }
        }
    }
}

#[derive(Debug)]
enum AppError {
    Usage(String),
    Numerical(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(s) | AppError::Numerical(s) => write!(f, "{s}"),
        }
    }
}

impl From<HarnessError> for AppError {
    fn from(e: HarnessError) -> AppError {
        match e {
            HarnessError::NonConvergence(s) => AppError::Numerical(s),
            other => AppError::Usage(other.to_string()),
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> AppError {
    AppError::Usage(e.to_string())
}

fn seed_of(common: &Common) -> Result<u64, AppError> {
    match std::env::var("QK_SEED") {
        Ok(s) => s.parse().map_err(|_| usage(format!("QK_SEED not a u64: {s}"))),
        Err(_) => Ok(common.seed),
    }
}

fn p_of(common: &Common) -> Result<PExp, AppError> {
    PExp::parse(&common.p).ok_or_else(|| usage(format!("invalid p: {}", common.p)))
}

fn write_out(common: &Common, text: &str) -> Result<(), AppError> {
    match &common.out {
        Some(path) => fs::write(path, text).map_err(usage),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_json(path: &str) -> Result<Value, AppError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{path}: {e}")))
}

/// matrix JSON: {"matrix": [[entry, ...], ...]} with entries either numbers
/// or [re, im] pairs
fn read_matrix(path: &str) -> Result<Mat, AppError> {
    let v = read_json(path)?;
    let rows = v
        .get("matrix")
        .and_then(Value::as_array)
        .ok_or_else(|| usage(format!("{path}: expected a \"matrix\" key with an array of rows")))?;
    let n = rows.len();
    let mut m = Mat::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .filter(|r| r.len() == n)
            .ok_or_else(|| usage(format!("{path}: row {i} is not an array of length {n}")))?;
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = parse_entry(e).ok_or_else(|| usage(format!("{path}: bad entry at ({i},{j})")))?;
        }
    }
    Ok(m)
}

fn parse_entry(v: &Value) -> Option<Complex64> {
    if let Some(x) = v.as_f64() {
        return Some(Complex64::new(x, 0.0));
    }
    let arr = v.as_array()?;
    if arr.len() != 2 {
        return None;
    }
    Some(Complex64::new(arr[0].as_f64()?, arr[1].as_f64()?))
}

fn dense_element(alg: &AlgebraInstance, m: Mat) -> Result<FilteredElement, AppError> {
    if m.rows % alg.dim() != 0 {
        return Err(usage(format!(
            "matrix size {} does not match the instance dimension {}",
            m.rows,
            alg.dim()
        )));
    }
    let blocks = m.rows / alg.dim();
    make_element(alg, blocks, ElementInput::Matrix(m)).map_err(usage)
}

fn cmd_verify(suite: Option<String>, list: bool, common: Common) -> Result<ExitCode, AppError> {
    if list {
        let mut text = String::new();
        for (id, what) in SUITES {
            text.push_str(&format!("{id:18} {what}\n"));
        }
        print!("{text}");
        return Ok(ExitCode::SUCCESS);
    }
    let suite = suite.ok_or_else(|| usage("verify needs a suite id (or --list)"))?;
    let mut cfg = SuiteConfig::new(&suite);
    cfg.trials = common.trials;
    cfg.seed = seed_of(&common)?;
    cfg.p = p_of(&common)?;
    cfg.tol = common.tol;
    let report = run_suite(&cfg)?;
    let text = emit_report(&report, Format::parse(&common.format)?);
    write_out(&common, &text)?;
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_kappa0(matrix_file: String, common: Common) -> Result<ExitCode, AppError> {
    let m = read_matrix(&matrix_file)?;
    let p = p_of(&common)?;
    let alg = AlgebraInstance::interval_roe(m.rows, p);
    let e = dense_element(&alg, m)?;
    let cert = certify_idempotent(&e, None).map_err(|e| AppError::Numerical(e.to_string()))?;
    let riesz = kappa0(&e, &cert).map_err(|e| AppError::Numerical(e.to_string()))?;
    let out = riesz.output.dense();
    let rows: Vec<Vec<[f64; 2]>> = (0..out.rows)
        .map(|i| (0..out.cols).map(|j| [out[(i, j)].re, out[(i, j)].im]).collect())
        .collect();
    let text = serde_json::to_string(&serde_json::json!({
        "residual": riesz.residual,
        "input_epsilon": cert.epsilon,
        "rank": out.numerical_rank(1e-6),
        "projection": rows,
    }))
    .expect("serializes");
    write_out(&common, &text)?;
    Ok(ExitCode::SUCCESS)
}

/// ext config JSON: {"kind": "toeplitz"|"cone"|"split", ...kind params}
fn read_extension(path: &str, p: PExp) -> Result<Extension, AppError> {
    let v = read_json(path)?;
    let kind = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| usage(format!("{path}: missing \"kind\"")))?;
    let get = |key: &str, default: u64| v.get(key).and_then(Value::as_u64).unwrap_or(default);
    match kind {
        "toeplitz" => Ok(Extension::toeplitz(
            get("band", 2) as i64,
            get("window", 24) as usize,
            p,
            v.get("c").and_then(Value::as_f64).unwrap_or(2.0),
        )),
        "cone" => Ok(Extension::cone(get("dim", 3) as usize, p, get("samples", 17) as usize)),
        "split" => Ok(Extension::split(get("ideal", 2) as usize, get("quotient", 2) as usize, p)),
        other => Err(usage(format!("{path}: unknown extension kind {other}"))),
    }
}

/// u over the quotient: either {"matrix": ...} or, for the band extension,
/// {"band": [[offset, re, im], ...]}
fn read_quotient_invertible(
    ext: &Extension,
    path: &str,
) -> Result<(FilteredElement, FilteredElement), AppError> {
    let v = read_json(path)?;
    if let Some(diags) = v.get("band").and_then(Value::as_array) {
        let mk = |entries: &[(i64, Complex64)]| {
            let data = ElemData::Band(BandData {
                diags: entries.iter().map(|(d, z)| (*d, Mat::diag(&[*z]))).collect(),
                correction: None,
            });
            let prop = entries.iter().map(|(d, _)| d.unsigned_abs()).max().unwrap_or(0);
            FilteredElement {
                algebra: ext.quotient.clone(),
                blocks: 1,
                data,
                propagation: prop as f64,
            }
        };
        let mut entries = Vec::new();
        for d in diags {
            let arr = d.as_array().filter(|a| a.len() == 3);
            let arr = arr.ok_or_else(|| usage(format!("{path}: band entries are [offset, re, im]")))?;
            entries.push((
                arr[0].as_i64().ok_or_else(|| usage("band offset must be an integer"))?,
                Complex64::new(arr[1].as_f64().unwrap_or(0.0), arr[2].as_f64().unwrap_or(0.0)),
            ));
        }
        if entries.len() != 1 {
            return Err(usage("band input: exactly one diagonal (a monomial symbol) is supported"));
        }
        let (off, z) = entries[0];
        if z.norm() < 1e-12 {
            return Err(usage("band coefficient must be nonzero"));
        }
        let u = mk(&[(off, z)]);
        let uinv = mk(&[(-off, z.inv())]);
        return Ok((u, uinv));
    }
    let m = read_matrix(path)?;
    let minv = m
        .inverse()
        .ok_or_else(|| AppError::Numerical("quotient matrix is singular".into()))?;
    let u = dense_element(&ext.quotient, m)?;
    let uinv = dense_element(&ext.quotient, minv)?;
    Ok((u, uinv))
}

fn cmd_boundary(ext_config: String, u_file: String, common: Common) -> Result<ExitCode, AppError> {
    let p = p_of(&common)?;
    let ext = read_extension(&ext_config, p)?;
    let (u, v) = read_quotient_invertible(&ext, &u_file)?;
    let pair = certify_inverse_pair(&u, &v).map_err(|e| AppError::Numerical(e.to_string()))?;
    let bd = boundary_d1(&ext, &KOneRep { pair }, BoundaryRoute::Direct)
        .map_err(|e| AppError::Numerical(e.to_string()))?;
    let class = to_ordinary_k0(&bd.class).map_err(|e| AppError::Numerical(e.to_string()))?;
    let text = serde_json::to_string(&serde_json::json!({
        "class": class,
        "residual": bd.residual,
        "residual_bound": bd.residual_bound,
        "zero_witness": bd.zero_witness,
        "epsilon": bd.class.cert.epsilon,
        "pass": bd.residual <= bd.residual_bound,
    }))
    .expect("serializes");
    write_out(&common, &text)?;
    Ok(if bd.residual <= bd.residual_bound { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// mv config JSON: {"n": 64, "s": 8}
fn cmd_mv_factor(mv_config: String, u_file: String, common: Common) -> Result<ExitCode, AppError> {
    let p = p_of(&common)?;
    let v = read_json(&mv_config)?;
    let n = v.get("n").and_then(Value::as_u64).unwrap_or(64) as usize;
    let s = v.get("s").and_then(Value::as_u64).unwrap_or((n as u64 / 8).max(2)) as usize;
    let mv = MVPair::interval(n, p, s);
    let m = read_matrix(&u_file)?;
    if m.rows != n {
        return Err(usage(format!("matrix size {} does not match n = {n}", m.rows)));
    }
    let minv = m
        .inverse()
        .ok_or_else(|| AppError::Numerical("input matrix is singular".into()))?;
    // split off the scalar bookkeeping: u = 1 + (ideal part)
    let mv_elem = |mat: Mat| -> FilteredElement {
        let ideal = FilteredElement {
            algebra: mv.algebra.clone(),
            blocks: 1,
            data: ElemData::Dense {
                mat: mat.sub(&Mat::identity(n)),
                scalar: Some(Mat::zeros(1, 1)),
            },
            propagation: 0.0,
        }
        .recompute_propagation();
        FilteredElement::identity(&mv.algebra, 1).add(&ideal)
    };
    let u = mv_elem(m);
    let uinv = mv_elem(minv);
    let pair = certify_inverse_pair(&u, &uinv).map_err(|e| AppError::Numerical(e.to_string()))?;
    let eps = pair.cert.epsilon.max(common.tol);
    // sample finely enough that the partition step eps/N is resolvable
    let one = FilteredElement::identity(&mv.algebra, 1);
    let delta = qklab::pnorm::op_norm_element(&pair.u.sub(&one)).upper;
    let samples = (33usize).max(8 * (delta * pair.cert.n_bound / eps).ceil() as usize + 1);
    if samples > 4097 {
        return Err(AppError::Usage(format!(
            "||u - 1|| = {delta} needs more than 4096 path samples at tol {eps}; raise --tol"
        )));
    }
    let path = linear_path_to_identity(&pair.u, eps, samples)
        .map_err(|e| AppError::Numerical(e.to_string()))?;
    let fact = mv_factorize(&mv, &pair, &path, &FactorizeOptions::default())
        .map_err(|e| AppError::Numerical(e.to_string()))?;
    let records: Vec<_> = fact
        .records
        .iter()
        .map(|b| serde_json::json!({"check": b.name, "lhs": b.lhs, "bound": b.rhs, "pass": b.pass}))
        .collect();
    let checks: Vec<_> = fact
        .checks
        .iter()
        .map(|(name, ok)| serde_json::json!({"check": name, "pass": ok}))
        .collect();
    let text = serde_json::to_string(&serde_json::json!({
        "segments": fact.m,
        "size_multiplier": fact.k,
        "shortcut": fact.shortcut,
        "defect": fact.defect,
        "defect_bound_coefficient": fact.q_hat,
        "norm_bound": fact.m_hat,
        "records": records,
        "checks": checks,
        "pass": fact.pass(),
    }))
    .expect("serializes");
    write_out(&common, &text)?;
    Ok(if fact.pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_report(input: String, common: Common) -> Result<ExitCode, AppError> {
    let text = fs::read_to_string(&input).map_err(|e| usage(format!("{input}: {e}")))?;
    let report = parse_report(&text)?;
    let out = emit_report(&report, Format::parse(&common.format)?);
    write_out(&common, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, AppError> {
    match cli.cmd {
        Cmd::Verify { suite, list, common } => cmd_verify(suite, list, common),
        Cmd::Kappa0 { matrix_file, common } => cmd_kappa0(matrix_file, common),
        Cmd::Boundary { ext_config, u_file, common } => cmd_boundary(ext_config, u_file, common),
        Cmd::MvFactor { mv_config, u_file, common } => cmd_mv_factor(mv_config, u_file, common),
        Cmd::Report { input, common } => cmd_report(input, common),
    }
}
