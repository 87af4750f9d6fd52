//! Library half of the `coresets` binary: a validated run configuration, one
//! dispatch function per invocation, and machine-readable documents for
//! reports and errors.
//!
//! Apart from `bench`, whose payload is wall-clock time, every command is a
//! pure function of its input files and the configuration: identical
//! invocations produce identical bytes. Artifacts embed the full
//! configuration plus the resolved constants, so a run can be replayed from
//! nothing but the container.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use coresets::dimred::{dim_reduce_exact, dim_reduce_sampled};
use coresets::io::{self, Artifact, InputFormat};
use coresets::kmedian::{build_kmedian_coreset, eval_kmedian_cost};
use coresets::linalg::{self, CenterSet, PointMatrix, Subspace};
use coresets::oracle::{self, Query, QueryFamily};
use coresets::rng;
use coresets::subspace::{build_subspace_coreset, eval_subspace_cost_pth, ReductionVariant};
use coresets::{Config, Error, Result};

/// Provenance documents embedded in artifacts.
pub const RUN_SCHEMA: &str = "coresets-run/1";
/// Error documents printed to stderr.
pub const ERROR_SCHEMA: &str = "coresets-error/1";

// Pinned dimensions of the projection counterexample experiment.
const CE_N: usize = 2000;
const CE_D: usize = 500;
const CE_ELL: usize = 5;

const TAG_SYNTH: u64 = 0x636c_6964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Reduce,
    CoresetSubspace,
    CoresetKmedian,
    Eval,
    Verify,
    Counterexample,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    /// Scalar inequalities behind the analysis, checked on random tuples.
    Claims,
    /// Build a coreset and compare it against the full data over random
    /// queries.
    Distortion,
}

/// One invocation, fully resolved. Optional fields are demanded by the
/// commands that need them; ranges are validated at dispatch so a config
/// deserialized from an artifact goes through the same checks as one parsed
/// from flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandName,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub p: Option<f64>,
    pub variant: ReductionVariant,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub output: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub suite: Option<SuiteName>,
    pub samples: Option<usize>,
    /// Worker-pool size for this process. A scheduling knob, not a semantic
    /// input: results never depend on it, and embedding it would make
    /// artifact bytes differ between thread settings, so it stays out of
    /// provenance.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub constants: Option<PathBuf>,
}

impl RunConfig {
    /// A config with nothing set but the command; the starting point for
    /// tests and programmatic drivers.
    pub fn new(command: CommandName) -> Self {
        RunConfig {
            command,
            k: None,
            epsilon: None,
            p: None,
            variant: ReductionVariant::Exact,
            seed: 0,
            input: None,
            format: InputFormat::DenseCsv,
            output: None,
            queries: None,
            suite: None,
            samples: None,
            threads: None,
            constants: None,
        }
    }
}

/// What a finished run hands back to `main`.
#[derive(Debug)]
pub struct Outcome {
    /// Report document for stdout, when the command produces one and no
    /// output path redirected it.
    pub report: Option<String>,
    /// Artifact or report path written, if any.
    pub wrote: Option<PathBuf>,
    /// Set when the run completed but its checks failed; `main` turns this
    /// into an error document and a nonzero exit.
    pub failure: Option<String>,
}

impl Outcome {
    fn wrote(path: &Path) -> Self {
        Outcome { report: None, wrote: Some(path.to_path_buf()), failure: None }
    }
}

/// The document embedded in every artifact: the run configuration plus the
/// constants it resolved to, so replay does not depend on the constants file
/// still existing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub schema: String,
    pub config: RunConfig,
    pub constants: Config,
}

pub fn provenance_json(cfg: &RunConfig, constants: &Config) -> String {
    let doc = Provenance {
        schema: RUN_SCHEMA.to_string(),
        config: cfg.clone(),
        constants: constants.clone(),
    };
    serde_json::to_string(&doc).expect("provenance serializes")
}

/// Reads the constants file as partial overrides of the defaults.
pub fn load_constants(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("constants file: {e}")))
        }
    }
}

/// Sizes the global worker pool. Called once by `main` before dispatch; a
/// missing knob keeps the default of all available cores.
pub fn apply_threads(threads: Option<usize>) -> Result<()> {
    let Some(t) = threads else { return Ok(()) };
    if t == 0 {
        return Err(Error::invalid_parameter("threads", "must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(t)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

// ---- dispatch ----

pub fn run_command(cfg: &RunConfig) -> Result<Outcome> {
    let constants = load_constants(cfg.constants.as_deref())?;
    run_with(cfg, &constants)
}

/// Re-runs the invocation recorded in an artifact, using the constants
/// snapshot from the document instead of re-reading the constants file; the
/// dataset it names must still be present. Reproduces the artifact byte for
/// byte.
pub fn replay(prov: &Provenance) -> Result<Outcome> {
    if prov.schema != RUN_SCHEMA {
        return Err(Error::UnsupportedFormat(format!(
            "provenance schema {:?}, this build replays {RUN_SCHEMA:?}",
            prov.schema
        )));
    }
    run_with(&prov.config, &prov.constants)
}

fn run_with(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    match cfg.command {
        CommandName::Reduce => cmd_reduce(cfg, constants),
        CommandName::CoresetSubspace => cmd_coreset_subspace(cfg, constants),
        CommandName::CoresetKmedian => cmd_coreset_kmedian(cfg, constants),
        CommandName::Eval => cmd_eval(cfg),
        CommandName::Verify => cmd_verify(cfg, constants),
        CommandName::Counterexample => cmd_counterexample(cfg),
        CommandName::Bench => cmd_bench(cfg, constants),
    }
}

fn need_k(cfg: &RunConfig) -> Result<usize> {
    let k = cfg.k.ok_or_else(|| Error::invalid_parameter("k", "required for this command"))?;
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    Ok(k)
}

fn need_epsilon(cfg: &RunConfig) -> Result<f64> {
    let eps = cfg
        .epsilon
        .ok_or_else(|| Error::invalid_parameter("epsilon", "required for this command"))?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid_parameter("epsilon", "must lie in (0, 1]"));
    }
    Ok(eps)
}

fn p_or_one(cfg: &RunConfig) -> Result<f64> {
    let p = cfg.p.unwrap_or(1.0);
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::invalid_parameter("p", "need finite p >= 1"));
    }
    Ok(p)
}

fn need_input(cfg: &RunConfig) -> Result<&Path> {
    cfg.input
        .as_deref()
        .ok_or_else(|| Error::invalid_parameter("input", "required for this command"))
}

fn need_output(cfg: &RunConfig) -> Result<&Path> {
    cfg.output
        .as_deref()
        .ok_or_else(|| Error::invalid_parameter("output", "required for this command"))
}

fn need_queries(cfg: &RunConfig) -> Result<&Path> {
    cfg.queries
        .as_deref()
        .ok_or_else(|| Error::invalid_parameter("queries", "required for this command"))
}

/// The textual container goes to .txt/.text destinations, binary anywhere
/// else.
fn is_textual(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("txt") | Some("text"))
}

fn write_out(cfg: &RunConfig, constants: &Config, artifact: &Artifact) -> Result<Outcome> {
    let out = need_output(cfg)?;
    io::write_artifact(out, artifact, &provenance_json(cfg, constants), is_textual(out))?;
    Ok(Outcome::wrote(out))
}

fn emit_report(
    cfg: &RunConfig,
    doc: serde_json::Value,
    failure: Option<String>,
) -> Result<Outcome> {
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    match cfg.output.as_deref() {
        Some(path) => {
            std::fs::write(path, &text)?;
            Ok(Outcome { report: None, wrote: Some(path.to_path_buf()), failure })
        }
        None => Ok(Outcome { report: Some(text), wrote: None, failure }),
    }
}

// ---- artifact-producing commands ----

fn cmd_reduce(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    let k = need_k(cfg)?;
    let eps = need_epsilon(cfg)?;
    let p = p_or_one(cfg)?;
    let a = io::ingest(need_input(cfg)?, cfg.format)?;
    let (matrix, report) = match cfg.variant {
        ReductionVariant::Exact => dim_reduce_exact(&a, k, eps, p, cfg.seed, constants)?,
        ReductionVariant::Fast => dim_reduce_sampled(&a, k, eps, p, cfg.seed, constants)?,
    };
    write_out(cfg, constants, &Artifact::Augmented { matrix, report, p, k })
}

fn cmd_coreset_subspace(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    let k = need_k(cfg)?;
    let eps = need_epsilon(cfg)?;
    let p = p_or_one(cfg)?;
    let a = io::ingest(need_input(cfg)?, cfg.format)?;
    let coreset = build_subspace_coreset(&a, k, eps, p, cfg.variant, cfg.seed, constants)?;
    write_out(cfg, constants, &Artifact::Subspace(coreset))
}

fn cmd_coreset_kmedian(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    let k = need_k(cfg)?;
    let eps = need_epsilon(cfg)?;
    if let Some(p) = cfg.p {
        if p != 1.0 {
            return Err(Error::invalid_parameter(
                "p",
                "the k-median cost sums plain distances; only p = 1 applies",
            ));
        }
    }
    let a = io::ingest(need_input(cfg)?, cfg.format)?;
    let coreset = build_kmedian_coreset(&a, k, eps, cfg.seed, constants)?;
    write_out(cfg, constants, &Artifact::KMedian(coreset))
}

// ---- eval ----

/// One query per non-empty line: k*d decimals, comma or whitespace
/// separated, row-major. For a subspace coreset the k rows span the queried
/// subspace (dependent rows just lower its dimension); for a k-median
/// coreset they are the k centers.
fn parse_query_lines(text: &str, k: usize, d: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut vals = Vec::with_capacity(k * d);
        for tok in trimmed.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                detail: format!("bad decimal {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: idx + 1,
                    detail: format!("non-finite value {tok:?}"),
                });
            }
            vals.push(v);
        }
        if vals.len() != k * d {
            return Err(Error::Parse {
                line: idx + 1,
                detail: format!(
                    "query line has {} values, expected k*d = {}",
                    vals.len(),
                    k * d
                ),
            });
        }
        out.push(vals.chunks(d).map(|c| c.to_vec()).collect());
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no query lines".into()));
    }
    Ok(out)
}

fn subspace_from_rows(rows: &[Vec<f64>], d: usize) -> Subspace {
    let raw = DMatrix::from_fn(d, rows.len(), |r, c| rows[c][r]);
    linalg::orthonormalize(&raw)
}

fn cmd_eval(cfg: &RunConfig) -> Result<Outcome> {
    let (artifact, _) = io::read_artifact(need_input(cfg)?)?;
    let text = std::fs::read_to_string(need_queries(cfg)?)?;
    let (kind, costs) = match &artifact {
        Artifact::Subspace(c) => {
            let queries = parse_query_lines(&text, c.k(), c.d())?;
            let costs = queries
                .iter()
                .map(|rows| eval_subspace_cost_pth(c, &subspace_from_rows(rows, c.d())))
                .collect::<Result<Vec<f64>>>()?;
            ("subspace", costs)
        }
        Artifact::KMedian(c) => {
            let queries = parse_query_lines(&text, c.k(), c.d())?;
            let costs = queries
                .iter()
                .map(|rows| eval_kmedian_cost(c, &CenterSet::from_rows(rows)?))
                .collect::<Result<Vec<f64>>>()?;
            ("kmedian", costs)
        }
        Artifact::Augmented { .. } => {
            return Err(Error::UnsupportedFormat(
                "eval needs a coreset container, not a reduction".into(),
            ));
        }
    };
    let doc = json!({
        "schema": "coresets-eval/1",
        "artifact": kind,
        "queries": costs.len(),
        "costs": costs,
    });
    emit_report(cfg, doc, None)
}

// ---- verify ----

fn cmd_verify(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    match cfg.suite.unwrap_or(SuiteName::Claims) {
        SuiteName::Claims => {
            let samples = cfg.samples.unwrap_or(100_000);
            let claims = oracle::verify_scalar_claims(samples, cfg.seed)?;
            let violations = claims.total_violations();
            let doc = json!({
                "schema": "coresets-verify/1",
                "suite": "claims",
                "seed": cfg.seed,
                "violations": violations,
                "claims": claims,
            });
            let failure =
                (violations > 0).then(|| format!("{violations} scalar claim violations"));
            emit_report(cfg, doc, failure)
        }
        SuiteName::Distortion => cmd_verify_distortion(cfg, constants),
    }
}

/// Builds both coreset kinds on the input (or a seeded synthetic instance)
/// and measures their worst query error against the full data.
fn cmd_verify_distortion(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    let k = cfg.k.unwrap_or(2);
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    let eps = cfg.epsilon.unwrap_or(0.3);
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid_parameter("epsilon", "must lie in (0, 1]"));
    }
    let p = p_or_one(cfg)?;
    let queries = cfg.samples.unwrap_or(200);
    let a = match cfg.input.as_deref() {
        Some(path) => io::ingest(path, cfg.format)?,
        None => synthetic_instance(300, 20, cfg.seed),
    };
    let d = a.d();

    let sub = build_subspace_coreset(&a, k, eps, p, cfg.variant, cfg.seed, constants)?;
    let family = QueryFamily::projections(d, k, queries, rng::child_seed(cfg.seed, &[1]));
    let scale = a.mass_p(p);
    let sub_report = oracle::measure_distortion(
        |q| match q {
            Query::Projection(v) => linalg::cost_p(&a, v, p),
            Query::Centers(_) => unreachable!("projection family"),
        },
        |q| match q {
            Query::Projection(v) => eval_subspace_cost_pth(&sub, v),
            Query::Centers(_) => unreachable!("projection family"),
        },
        &family,
        scale,
        false,
    )?;

    let km = build_kmedian_coreset(&a, k, eps, cfg.seed, constants)?;
    let (lo, hi) = bounding_box(&a);
    let family = QueryFamily::centers_in_box(lo, hi, k, queries, rng::child_seed(cfg.seed, &[2]));
    let km_scale = a.mass_p(1.0);
    let km_report = oracle::measure_distortion(
        |q| match q {
            Query::Centers(c) => kmedian_cost_full(&a, c),
            Query::Projection(_) => unreachable!("center family"),
        },
        |q| match q {
            Query::Centers(c) => eval_kmedian_cost(&km, c),
            Query::Projection(_) => unreachable!("center family"),
        },
        &family,
        km_scale,
        false,
    )?;

    let worst = sub_report.max_rel_err.max(km_report.max_rel_err);
    let doc = json!({
        "schema": "coresets-verify/1",
        "suite": "distortion",
        "seed": cfg.seed,
        "k": k,
        "epsilon": eps,
        "p": p,
        "rows": a.n(),
        "cols": d,
        "subspace": sub_report,
        "kmedian": km_report,
    });
    let failure = (worst > eps)
        .then(|| format!("worst relative query error {worst:.6} exceeds epsilon {eps}"));
    emit_report(cfg, doc, failure)
}

fn kmedian_cost_full(a: &PointMatrix, centers: &CenterSet) -> Result<f64> {
    let mut buf = vec![0.0; a.d()];
    let mut total = 0.0;
    for i in 0..a.n() {
        a.row_dense(i, &mut buf);
        let (_, g) = linalg::dist_to_centers(&buf, centers)?;
        total += g;
    }
    Ok(total)
}

fn bounding_box(a: &PointMatrix) -> (Vec<f64>, Vec<f64>) {
    let d = a.d();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut buf = vec![0.0; d];
    for i in 0..a.n() {
        a.row_dense(i, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            lo[c] = lo[c].min(*v);
            hi[c] = hi[c].max(*v);
        }
    }
    (lo, hi)
}

fn synthetic_instance(n: usize, d: usize, seed: u64) -> PointMatrix {
    let mut r = rng::stream(seed, &[TAG_SYNTH, n as u64, d as u64]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    PointMatrix::from_rows(&rows).expect("synthetic rows are finite")
}

// ---- counterexample ----

fn cmd_counterexample(cfg: &RunConfig) -> Result<Outcome> {
    let res = oracle::gaussian_counterexample(CE_N, CE_D, CE_ELL, cfg.seed)?;
    let doc = json!({
        "schema": "coresets-counterexample/1",
        "n": CE_N,
        "d": CE_D,
        "ell": CE_ELL,
        "seed": cfg.seed,
        "naive_over_true": res.naive_estimate / res.true_cost,
        "augmented_over_true": res.augmented_estimate / res.true_cost,
        "measurements": res,
    });
    emit_report(cfg, doc, None)
}

// ---- bench ----

fn cmd_bench(cfg: &RunConfig, constants: &Config) -> Result<Outcome> {
    let n = cfg.samples.unwrap_or(2000);
    if n == 0 {
        return Err(Error::invalid_parameter("samples", "must be positive"));
    }
    let d = 30;
    let k = cfg.k.unwrap_or(3);
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    let eps = cfg.epsilon.unwrap_or(0.3);
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid_parameter("epsilon", "must lie in (0, 1]"));
    }
    let p = p_or_one(cfg)?;
    let a = synthetic_instance(n, d, cfg.seed);

    let mut rows = Vec::new();
    let mut time = |stage: &str, detail: String, f: &mut dyn FnMut() -> Result<()>| -> Result<()> {
        let start = Instant::now();
        f()?;
        rows.push(json!({
            "stage": stage,
            "seconds": start.elapsed().as_secs_f64(),
            "detail": detail,
        }));
        Ok(())
    };

    time("reduce-exact", format!("{n}x{d}, k={k}"), &mut || {
        dim_reduce_exact(&a, k, eps, p, cfg.seed, constants).map(|_| ())
    })?;
    time("reduce-fast", format!("{n}x{d}, k={k}"), &mut || {
        dim_reduce_sampled(&a, k, eps, p, cfg.seed, constants).map(|_| ())
    })?;
    let mut sub_len = 0;
    time("coreset-subspace", format!("{n}x{d}, k={k}, eps={eps}"), &mut || {
        let c = build_subspace_coreset(&a, k, eps, p, cfg.variant, cfg.seed, constants)?;
        sub_len = c.len();
        Ok(())
    })?;
    let mut km_len = 0;
    time("coreset-kmedian", format!("{n}x{d}, k={k}, eps={eps}"), &mut || {
        let c = build_kmedian_coreset(&a, k, eps, cfg.seed, constants)?;
        km_len = c.len();
        Ok(())
    })?;

    let doc = json!({
        "schema": "coresets-bench/1",
        "rows": n,
        "cols": d,
        "k": k,
        "epsilon": eps,
        "p": p,
        "seed": cfg.seed,
        "subspace_coreset_rows": sub_len,
        "kmedian_coreset_rows": km_len,
        "stages": rows,
    });
    emit_report(cfg, doc, None)
}

// ---- error documents ----

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter { .. } => "invalid-parameter",
        Error::DimensionMismatch(_) => "dimension-mismatch",
        Error::InvalidInput(_) => "invalid-input",
        Error::DegenerateInput(_) => "degenerate-input",
        Error::CapExceeded(_) => "cap-exceeded",
        Error::ValidationFailed { .. } => "validation-failed",
        Error::Parse { .. } => "parse",
        Error::UnsupportedFormat(_) => "unsupported-format",
        Error::Io(_) => "io",
    }
}

/// One-line JSON document for stderr; `kind` is stable across releases,
/// `detail` is for humans.
pub fn error_doc(e: &Error) -> String {
    json!({
        "schema": ERROR_SCHEMA,
        "kind": error_kind(e),
        "detail": e.to_string(),
    })
    .to_string()
}

/// The document for a run that finished but failed its own checks.
pub fn failure_doc(detail: &str) -> String {
    json!({
        "schema": ERROR_SCHEMA,
        "kind": "check-failed",
        "detail": detail,
    })
    .to_string()
}

/// The document for malformed command lines.
pub fn usage_doc(detail: &str) -> String {
    json!({
        "schema": ERROR_SCHEMA,
        "kind": "usage",
        "detail": detail,
    })
    .to_string()
}
