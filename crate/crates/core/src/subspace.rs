//! Weighted row subsets that preserve subspace-approximation costs.
//!
//! A coreset here is a small set of rows in R^(d+1) - a projected d-dimensional
//! part plus one appended distance coordinate - together with positive weights,
//! built so that for every rank-k orthogonal projection the weighted cost of
//! the subset tracks the cost of the full input within a relative epsilon. The
//! pipeline is: reduce the input to an augmented representation, compute Lewis
//! weights of its factored form, sample rows proportionally, and materialize
//! only the sampled rows in original coordinates.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, COST_NOISE_REL};
use crate::dimred::{self, AugmentedMatrix, ReductionReport};
use crate::error::{Error, Result};
use crate::linalg::{self, PointMatrix, Subspace};
use crate::oracle::{Query, QueryFamily};
use crate::rng;
use crate::sketch;

const TAG_BUILD: u64 = 0x6275_696c;
const TAG_REDUCE: u64 = 0x7265_6475;
const TAG_SAMPLE: u64 = 0x7361_6d70;
const TAG_VALIDATE: u64 = 0x7661_6c71;

/// Which reduction feeds the sampler: the iterative exact-tail variant or the
/// sampled-dimension variant with sketched tails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionVariant {
    Exact,
    Fast,
}

/// Provenance of a build: reduction trace, seeds, and the realized validation
/// error of the attempt that was accepted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceMeta {
    pub reduction: ReductionReport,
    pub variant: ReductionVariant,
    pub epsilon: f64,
    pub sampling_seed: u64,
    /// Build attempts consumed, counting the accepted one.
    pub attempts: usize,
    /// Worst relative error over the validation queries of the accepted
    /// attempt, in the p-th-power form.
    pub validation_err: f64,
}

/// s weighted rows in R^(d+1); the last coordinate is a residual distance and
/// is never projected by queries.
#[derive(Debug, Clone)]
pub struct SubspaceCoreset {
    points: DMatrix<f64>,
    weights: Vec<f64>,
    p: f64,
    k: usize,
    meta: SubspaceMeta,
}

impl SubspaceCoreset {
    /// Invariants: at least one row, width >= 2, finite entries, one positive
    /// finite weight per row, p >= 1, k >= 1.
    pub fn from_parts(
        points: DMatrix<f64>,
        weights: Vec<f64>,
        p: f64,
        k: usize,
        meta: SubspaceMeta,
    ) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() < 2 {
            return Err(Error::invalid_parameter(
                "points",
                "need at least one row and a projected part plus tail column",
            ));
        }
        if weights.len() != points.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                points.nrows()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("coreset points must be finite".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidInput("coreset weights must be positive".into()));
        }
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::invalid_parameter("p", "need finite p >= 1"));
        }
        if k == 0 {
            return Err(Error::invalid_parameter("k", "must be positive"));
        }
        Ok(Self { points, weights, p, k, meta })
    }

    /// Rows of the coreset: projected part in the first d columns, tail last.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Ambient dimension of the projected part (one less than the row width).
    pub fn d(&self) -> usize {
        self.points.ncols() - 1
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn meta(&self) -> &SubspaceMeta {
        &self.meta
    }
}

// ---- evaluation ----

fn check_query(c: &SubspaceCoreset, v: &Subspace) -> Result<()> {
    if v.d() != c.d() {
        return Err(Error::DimensionMismatch(format!(
            "query lives in R^{} but the coreset's projected part in R^{}",
            v.d(),
            c.d()
        )));
    }
    // Fewer than k directions is just a partially specified projection; more
    // than k voids the guarantee the coreset was built for.
    if v.ell() > c.k {
        return Err(Error::DimensionMismatch(format!(
            "query rank {} exceeds the coreset's target rank {}",
            v.ell(),
            c.k
        )));
    }
    Ok(())
}

/// Sum over rows of weight^p * (dist(b, span V)^2 + tail^2)^(p/2): the cost in
/// the p-th-power form. The tail coordinate never enters the projection.
pub fn eval_subspace_cost_pth(c: &SubspaceCoreset, v: &Subspace) -> Result<f64> {
    check_query(c, v)?;
    let d = c.d();
    let mut total = 0.0;
    for (i, w) in c.weights.iter().enumerate() {
        let row = c.points.row(i);
        let mut norm_sq = 0.0;
        for j in 0..d {
            norm_sq += row[j] * row[j];
        }
        let mut through_sq = 0.0;
        for col in 0..v.ell() {
            let mut dot = 0.0;
            for j in 0..d {
                dot += row[j] * v.basis()[(j, col)];
            }
            through_sq += dot * dot;
        }
        let tail = row[d];
        let dist_sq = (norm_sq - through_sq).max(0.0) + tail * tail;
        total += w.powf(c.p) * dist_sq.powf(c.p / 2.0);
    }
    Ok(total)
}

/// The same cost reported as a norm: the p-th root of the p-th-power form.
pub fn eval_subspace_cost(c: &SubspaceCoreset, v: &Subspace) -> Result<f64> {
    Ok(eval_subspace_cost_pth(c, v)?.powf(1.0 / c.p))
}

// ---- construction ----

fn check_build_params(eps: f64, p: f64, k: usize) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid_parameter("eps", "must lie in (0, 1]"));
    }
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::invalid_parameter("p", "need finite p >= 1"));
    }
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    Ok(())
}

/// Number of sampled rows for a factored width f: c_sample * f * ln(f/eps) /
/// eps^2, capped by the documented size bound so the coreset invariant holds
/// even when the reduced dimension is inflated by a small ambient dimension.
fn sample_count(f: usize, k: usize, eps: f64, cfg: &Config) -> usize {
    let f = f.max(2) as f64;
    let raw = (cfg.c_sample_subspace * f * (f / eps).ln() / (eps * eps)).ceil();
    let bound = size_bound(k, eps, cfg);
    (raw.min(bound).max(1.0)) as usize
}

/// The size bound the coreset type promises: c_size * k * ln(k/eps) / eps^4.
fn size_bound(k: usize, eps: f64, cfg: &Config) -> f64 {
    let arg = (k as f64 / eps).max(std::f64::consts::E);
    (cfg.c_size_subspace * k as f64 * arg.ln() / eps.powi(4)).floor()
}

/// The reduced representation's rows as the n x (ell+1) factored matrix
/// [coefficients, tail], re-expressed in an orthonormal basis of its own row
/// space. Lewis weights depend only on the row vectors inside their span, so
/// the change of coordinates leaves them untouched while guaranteeing full
/// column rank (a lossless reduction makes the tail column identically zero,
/// and a short input can have fewer rows than ell+1).
fn factored_rows(b: &AugmentedMatrix) -> DMatrix<f64> {
    let n = b.n();
    let ell = b.ell();
    let f = DMatrix::from_fn(n, ell + 1, |i, j| {
        if j < ell {
            b.coeffs()[(i, j)]
        } else {
            b.tail()[i]
        }
    });
    let row_space = linalg::orthonormalize(&f.transpose());
    if row_space.ell() == 0 {
        // All-zero representation; keep one throwaway column so downstream
        // shape checks stay trivial. Callers handle the zero input earlier.
        return DMatrix::zeros(n, 1);
    }
    &f * row_space.basis()
}

/// Materialize the sampled rows in original coordinates: row i of the output
/// is [b_i U^T, tail_i] for sampled source row i, where U is the reduction
/// basis. Only the s sampled rows are ever projected back to R^d.
fn materialize(
    b: &AugmentedMatrix,
    sampling: &sketch::SamplingRescaling,
) -> (DMatrix<f64>, Vec<f64>) {
    let points = b.materialize_rows(sampling.source_rows());
    (points, sampling.weights().to_vec())
}

/// Builds the coreset: reduce, weight, sample, materialize, then check the
/// result against fresh random queries and retry with a new seed if the
/// realized distortion exceeds eps. The sampling step succeeds with
/// probability bounded away from one half, so a small number of retries
/// drives the failure rate down geometrically.
pub fn build_subspace_coreset(
    a: &PointMatrix,
    k: usize,
    eps: f64,
    p: f64,
    variant: ReductionVariant,
    seed: u64,
    cfg: &Config,
) -> Result<SubspaceCoreset> {
    check_build_params(eps, p, k)?;
    let mass = linalg::norm_p2(a, p)?.powf(p);
    if mass == 0.0 {
        return degenerate_zero(a, k, eps, p, variant, seed);
    }

    let family = QueryFamily::projections(
        a.d(),
        k.min(a.d()),
        cfg.validate_queries,
        rng::child_seed(seed, &[TAG_VALIDATE]),
    );
    let truths = validation_truths(a, p, &family)?;
    let floor = COST_NOISE_REL.powf(p) * mass;

    let attempts_allowed = 1 + cfg.validate_retries;
    let mut worst_overall: f64 = 0.0;
    for attempt in 0..attempts_allowed {
        let attempt_seed = rng::child_seed(seed, &[TAG_BUILD, attempt as u64]);
        let reduce_seed = rng::child_seed(attempt_seed, &[TAG_REDUCE]);
        let sample_seed = rng::child_seed(attempt_seed, &[TAG_SAMPLE]);

        let (b, report) = match variant {
            ReductionVariant::Exact => dimred::dim_reduce_exact(a, k, eps, p, reduce_seed, cfg)?,
            ReductionVariant::Fast => dimred::dim_reduce_sampled(a, k, eps, p, reduce_seed, cfg)?,
        };

        let factored = factored_rows(&b);
        let lw = sketch::lewis_weights(&factored, p, None, sample_seed, false, cfg)?;
        let count = sample_count(b.ell() + 1, k, eps, cfg);
        let sampling = sketch::build_sampling_matrix(&lw, count, sample_seed)?;
        let (points, weights) = materialize(&b, &sampling);

        let meta = SubspaceMeta {
            reduction: report,
            variant,
            epsilon: eps,
            sampling_seed: sample_seed,
            attempts: attempt + 1,
            validation_err: 0.0,
        };
        let mut candidate = SubspaceCoreset::from_parts(points, weights, p, k, meta)?;

        let worst = validation_worst(&candidate, &family, &truths, floor)?;
        worst_overall = worst_overall.max(worst);
        if worst <= eps {
            candidate.meta.validation_err = worst;
            return Ok(candidate);
        }
    }
    Err(Error::ValidationFailed {
        attempts: attempts_allowed,
        detail: format!(
            "worst relative cost error {:.3e} stayed above eps = {:.3e}",
            worst_overall, eps
        ),
    })
}

/// All-zero input: one zero row whose weight restores the total mass, making
/// every query cost exactly zero, like the input's.
fn degenerate_zero(
    a: &PointMatrix,
    k: usize,
    eps: f64,
    p: f64,
    variant: ReductionVariant,
    seed: u64,
) -> Result<SubspaceCoreset> {
    let meta = SubspaceMeta {
        reduction: ReductionReport {
            iterations: 0,
            cost_trace: vec![0.0],
            opt_estimate: 0.0,
            i_star: None,
            seed,
        },
        variant,
        epsilon: eps,
        sampling_seed: seed,
        attempts: 1,
        validation_err: 0.0,
    };
    SubspaceCoreset::from_parts(
        DMatrix::zeros(1, a.d() + 1),
        vec![(a.n() as f64).powf(1.0 / p)],
        p,
        k,
        meta,
    )
}

fn validation_truths(a: &PointMatrix, p: f64, family: &QueryFamily) -> Result<Vec<f64>> {
    (0..family.count)
        .into_par_iter()
        .map(|i| match family.query(i) {
            Query::Projection(v) => linalg::cost_p(a, &v, p),
            Query::Centers(_) => unreachable!("projection family"),
        })
        .collect()
}

fn validation_worst(
    c: &SubspaceCoreset,
    family: &QueryFamily,
    truths: &[f64],
    floor: f64,
) -> Result<f64> {
    let errs: Vec<f64> = truths
        .par_iter()
        .enumerate()
        .map(|(i, &t)| match family.query(i) {
            Query::Projection(v) => {
                let approx = eval_subspace_cost_pth(c, &v)?;
                Ok((approx - t).abs() / t.max(floor))
            }
            Query::Centers(_) => unreachable!("projection family"),
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

// ==== tests ====
