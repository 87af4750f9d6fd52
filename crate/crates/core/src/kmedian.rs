//! Weighted coresets for k-median on augmented rows: a small set of rows in
//! R^(d+1), each a projected point plus one appended residual coordinate,
//! carrying non-negative weights chosen so that the weighted sum of distances
//! to any k centers tracks the full input's sum within a relative epsilon.
//! Centers are matched against the first d coordinates only; the appended
//! coordinate joins each distance by Pythagoras and is never compared to a
//! center directly.
//!
//! The build pipeline: reduce the input to an augmented representation,
//! replace the rows by approximate projections, pad the reduced basis with k
//! spare dimensions, run a quick bicriteria clustering there, convert the
//! cluster geometry into per-row importance scores, then sample rows with
//! replacement and reweight so the estimator is unbiased.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dimred::{self, ReductionReport};
use crate::error::{Error, Result};
use crate::linalg::{self, CenterSet, PointMatrix};
use crate::rng;

const TAG_BUILD: u64 = 0x6b62_6c64;
const TAG_REDUCE: u64 = 0x6b72_6564;
const TAG_PROJECT: u64 = 0x6b70_726a;
const TAG_CENTERS: u64 = 0x6b63_656e;
const TAG_SAMPLE: u64 = 0x6b73_6d70;
const TAG_SEEDING: u64 = 0x6263_7472;

/// Provenance of a build: reduction trace, the input row count the weight
/// mass is measured against, seeds, and sampling statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMedianMeta {
    pub reduction: ReductionReport,
    /// Rows of the input the coreset stands in for; the weight-mass window
    /// is (1 +- epsilon) times this.
    pub input_rows: usize,
    pub sampling_seed: u64,
    /// Build attempts consumed, counting the accepted one.
    pub attempts: usize,
    /// Total importance score of the accepted attempt.
    pub sensitivity_total: f64,
    /// Realized sum of the coreset weights.
    pub weight_sum: f64,
}

/// s weighted rows in R^(d+1); the last coordinate is a residual distance
/// that never participates in nearest-center selection.
#[derive(Debug, Clone)]
pub struct WeightedCoreset {
    points: DMatrix<f64>,
    weights: Vec<f64>,
    k: usize,
    epsilon: f64,
    meta: KMedianMeta,
}

impl WeightedCoreset {
    /// Invariants: at least one row, width >= 2, finite entries, one finite
    /// non-negative weight per row, k >= 1, epsilon in (0, 1], and the weight
    /// mass inside (1 +- epsilon) times `meta.input_rows`.
    pub fn from_parts(
        points: DMatrix<f64>,
        weights: Vec<f64>,
        k: usize,
        epsilon: f64,
        meta: KMedianMeta,
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
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("coreset weights must be non-negative".into()));
        }
        if k == 0 {
            return Err(Error::invalid_parameter("k", "must be positive"));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid_parameter("epsilon", "need 0 < epsilon <= 1"));
        }
        if meta.input_rows == 0 {
            return Err(Error::invalid_parameter("meta", "input_rows must be positive"));
        }
        let n = meta.input_rows as f64;
        let mass: f64 = weights.iter().sum();
        let slack = 1e-9 * n;
        if mass < (1.0 - epsilon) * n - slack || mass > (1.0 + epsilon) * n + slack {
            return Err(Error::InvalidInput(format!(
                "weight mass {:.6e} outside (1 +- {:.2e}) x {} rows",
                mass, epsilon, meta.input_rows
            )));
        }
        Ok(Self { points, weights, k, epsilon, meta })
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

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn meta(&self) -> &KMedianMeta {
        &self.meta
    }
}

/// Importance scores of each row for sampling, together with the clustering
/// they were derived from. Every score is at least 1/n, and the total is at
/// most 2k + 1: the distance shares sum to one and each cluster contributes
/// one unit through its size terms.
#[derive(Debug, Clone)]
pub struct SensitivityProfile {
    pub bicriteria_centers: CenterSet,
    pub assignments: Vec<usize>,
    pub sensitivities: Vec<f64>,
    pub total: f64,
}

/// Quick k-median search: distance-proportional seeding, then alternating
/// rounds of nearest-center assignment and per-cluster geometric-median
/// refinement. The result is a constant-factor solution in expectation, not
/// a certified one; with fewer distinct points than k, duplicate centers
/// are returned rather than an error.
pub fn bicriteria_kmedian(
    points: &PointMatrix,
    k: usize,
    seed: u64,
    cfg: &Config,
) -> Result<CenterSet> {
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    let dense = points.to_dmatrix();
    let uniform = vec![1.0; points.n()];
    bicriteria_weighted(&dense, &uniform, k, seed, cfg)
}

/// The same search over weighted rows: what a consumer runs on a coreset to
/// pick centers without touching the full data.
pub fn bicriteria_kmedian_weighted(
    rows: &DMatrix<f64>,
    weights: &[f64],
    k: usize,
    seed: u64,
    cfg: &Config,
) -> Result<CenterSet> {
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    if rows.nrows() == 0 {
        return Err(Error::InvalidInput("no rows to cluster".into()));
    }
    if weights.len() != rows.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            weights.len(),
            rows.nrows()
        )));
    }
    if rows.iter().any(|v| !v.is_finite()) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
    {
        return Err(Error::InvalidInput(
            "rows must be finite and weights finite and non-negative".into(),
        ));
    }
    bicriteria_weighted(rows, weights, k, seed, cfg)
}

/// Euclidean distance from row i to the point y.
fn row_dist(rows: &DMatrix<f64>, i: usize, y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (j, yj) in y.iter().enumerate() {
        let t = rows[(i, j)] - yj;
        s += t * t;
    }
    s.sqrt()
}

/// One draw proportional to the given non-negative masses; None when the
/// total mass vanishes (all remaining points coincide with a chosen center).
fn draw_proportional(mass: &[f64], r: &mut impl Rng) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let mut cumulative = Vec::with_capacity(mass.len());
    let mut acc = 0.0;
    for &m in mass {
        acc += m;
        cumulative.push(acc);
    }
    let u: f64 = r.gen::<f64>() * total;
    Some(cumulative.partition_point(|&c| c <= u).min(mass.len() - 1))
}

/// Weighted geometric median of the listed rows. Starts from the weighted
/// mean and iterates the standard reweighting, with distances floored a few
/// orders below the cluster scale so points sitting on the iterate do not
/// blow up the step.
fn weighted_geometric_median(
    rows: &DMatrix<f64>,
    members: &[usize],
    w: &[f64],
    cfg: &Config,
) -> Vec<f64> {
    let m = rows.ncols();
    let mut y = vec![0.0; m];
    let tw: f64 = members.iter().map(|&i| w[i]).sum();
    if tw > 0.0 {
        for &i in members {
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += w[i] * rows[(i, j)];
            }
        }
        for yj in y.iter_mut() {
            *yj /= tw;
        }
    } else {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = rows[(members[0], j)];
        }
    }
    let scale = members.iter().map(|&i| row_dist(rows, i, &y)).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return y;
    }
    let floor = 1e-12 * scale;
    for _ in 0..cfg.weiszfeld_max_iters {
        let mut num = vec![0.0; m];
        let mut den = 0.0;
        for &i in members {
            let d = row_dist(rows, i, &y).max(floor);
            let c = w[i] / d;
            den += c;
            for (j, nj) in num.iter_mut().enumerate() {
                *nj += c * rows[(i, j)];
            }
        }
        if den == 0.0 {
            break;
        }
        let mut step_sq = 0.0;
        for (yj, nj) in y.iter_mut().zip(&num) {
            let next = nj / den;
            let delta = next - *yj;
            step_sq += delta * delta;
            *yj = next;
        }
        if step_sq.sqrt() <= cfg.weiszfeld_tol * scale {
            break;
        }
    }
    y
}

fn bicriteria_weighted(
    rows: &DMatrix<f64>,
    w: &[f64],
    k: usize,
    seed: u64,
    cfg: &Config,
) -> Result<CenterSet> {
    let n = rows.nrows();
    debug_assert_eq!(w.len(), n);
    let mut r = rng::stream(seed, &[TAG_SEEDING]);

    let first = draw_proportional(w, &mut r).unwrap_or(0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows.row(first).iter().copied().collect());
    let mut dist: Vec<f64> = (0..n).map(|i| row_dist(rows, i, &centers[0])).collect();
    while centers.len() < k {
        let mass: Vec<f64> = dist.iter().zip(w).map(|(d, wi)| d * wi).collect();
        let idx = match draw_proportional(&mass, &mut r) {
            Some(i) => i,
            // Every point already sits on a center: duplicates are allowed.
            None => r.gen_range(0..n),
        };
        let c: Vec<f64> = rows.row(idx).iter().copied().collect();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(row_dist(rows, i, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..cfg.bicriteria_rounds {
        let mut changed = false;
        for (i, slot) in assign.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = row_dist(rows, i, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = row_dist(rows, i, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assign.iter().enumerate() {
            clusters[c].push(i);
        }
        for (c, members) in clusters.iter().enumerate() {
            // An empty cluster keeps its center as a candidate.
            if !members.is_empty() {
                centers[c] = weighted_geometric_median(rows, members, w, cfg);
            }
        }
    }
    CenterSet::from_rows(&centers)
}

/// Importance score of each point against the given clustering: its share of
/// the total assignment cost plus the reciprocal of its cluster size, the
/// latter alone when the clustering is exact. Scores upper-bound how much a
/// single point can matter to any center set of the same cardinality.
pub fn sensitivities(points: &PointMatrix, centers: &CenterSet) -> Result<SensitivityProfile> {
    if points.d() != centers.dim() {
        return Err(Error::DimensionMismatch(format!(
            "points live in dimension {}, centers in {}",
            points.d(),
            centers.dim()
        )));
    }
    let n = points.n();
    let mut buf = vec![0.0; points.d()];
    let mut assignments = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let mut sizes = vec![0usize; centers.k()];
    for i in 0..n {
        points.row_dense(i, &mut buf);
        let (c, d) = linalg::dist_to_centers(&buf, centers)?;
        assignments.push(c);
        dists.push(d);
        sizes[c] += 1;
    }
    let total_cost: f64 = dists.iter().sum();
    let mut sensitivities = Vec::with_capacity(n);
    let mut total = 0.0;
    for (d, &c) in dists.iter().zip(&assignments) {
        let share = if total_cost > 0.0 { d / total_cost } else { 0.0 };
        let s = share + 1.0 / sizes[c] as f64;
        sensitivities.push(s);
        total += s;
    }
    assert!(
        total <= (2 * centers.k() + 1) as f64 + 1e-9,
        "importance scores exceeded their structural cap"
    );
    debug_assert!(sensitivities.iter().all(|s| *s >= 1.0 / n as f64));
    Ok(SensitivityProfile { bicriteria_centers: centers.clone(), assignments, sensitivities, total })
}

/// Rows drawn per build: the pinned count formula, kept at or below the
/// documented size bound and at least one.
fn sample_count(k: usize, eps: f64, cfg: &Config) -> usize {
    let kf = k as f64;
    let lg = (k.max(2) as f64).ln();
    let raw = (cfg.c_sample_kmedian * kf * kf * lg / eps.powi(4)).ceil();
    let bound = (cfg.c_size_kmedian * kf * kf * lg / eps.powi(4)).floor();
    raw.min(bound).max(1.0) as usize
}

/// Builds the coreset: reduce, approximate the projections, cluster in the
/// padded reduced space, sample rows by importance, and map the sampled rows
/// back to original coordinates. An attempt is accepted only when its weight
/// mass lands inside the (1 +- eps) window around n; fresh seeds retry the
/// bounded-away-from-one success probability down to a negligible failure
/// rate.
pub fn build_kmedian_coreset(
    a: &PointMatrix,
    k: usize,
    eps: f64,
    seed: u64,
    cfg: &Config,
) -> Result<WeightedCoreset> {
    if k == 0 {
        return Err(Error::invalid_parameter("k", "must be positive"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid_parameter("eps", "need 0 < eps <= 1"));
    }
    let n = a.n();
    if a.mass_p(1.0) == 0.0 {
        return degenerate_zero(a, k, eps, seed);
    }
    let count = sample_count(k, eps, cfg);
    let nf = n as f64;
    let lo = (1.0 - eps) * nf;
    let hi = (1.0 + eps) * nf;
    let slack = 1e-9 * nf;

    let attempts_allowed = 1 + cfg.validate_retries;
    let mut last_mass = f64::NAN;
    for attempt in 0..attempts_allowed {
        let attempt_seed = rng::child_seed(seed, &[TAG_BUILD, attempt as u64]);
        let (b0, report) = dimred::dim_reduce_sampled(
            a,
            k,
            eps / 10.0,
            1.0,
            rng::child_seed(attempt_seed, &[TAG_REDUCE]),
            cfg,
        )?;
        let btilde = dimred::approx_projection_rows(
            a,
            b0.basis(),
            eps / 10.0,
            rng::child_seed(attempt_seed, &[TAG_PROJECT]),
            cfg,
        )?;

        // Reduced-space geometry: coefficients, k spare zero coordinates so
        // any k centers fit after a rotation, and the tail carried along as
        // an ordinary coordinate.
        let ell = btilde.ell();
        let ext = DMatrix::from_fn(n, ell + k + 1, |i, c| {
            if c < ell {
                btilde.coeffs()[(i, c)]
            } else if c == ell + k {
                btilde.tail()[i]
            } else {
                0.0
            }
        });
        let ext_pm = PointMatrix::from_dmatrix(&ext)?;
        let centers =
            bicriteria_kmedian(&ext_pm, k, rng::child_seed(attempt_seed, &[TAG_CENTERS]), cfg)?;
        let profile = sensitivities(&ext_pm, &centers)?;
        assert!(
            profile.total <= cfg.c_total_sensitivity * k as f64 + 1e-9,
            "importance scores exceeded the configured cap"
        );

        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &s in &profile.sensitivities {
            acc += s;
            cumulative.push(acc);
        }
        let mut r = rng::stream(attempt_seed, &[TAG_SAMPLE]);
        let mut picked = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        let mut mass = 0.0;
        for _ in 0..count {
            let u: f64 = r.gen::<f64>() * profile.total;
            let idx = cumulative.partition_point(|&c| c <= u).min(n - 1);
            // w = 1 / (count q) for draw probability q = s_i / total, which
            // makes each draw an unbiased estimate of the row count.
            let wj = profile.total / (count as f64 * profile.sensitivities[idx]);
            picked.push(idx);
            weights.push(wj);
            mass += wj;
        }
        last_mass = mass;
        if mass < lo - slack || mass > hi + slack {
            continue;
        }

        let points = btilde.materialize_rows(&picked);
        let meta = KMedianMeta {
            reduction: report,
            input_rows: n,
            sampling_seed: attempt_seed,
            attempts: attempt + 1,
            sensitivity_total: profile.total,
            weight_sum: mass,
        };
        return WeightedCoreset::from_parts(points, weights, k, eps, meta);
    }
    Err(Error::ValidationFailed {
        attempts: attempts_allowed,
        detail: format!(
            "sampled weight mass {:.6e} stayed outside ({:.6e}, {:.6e})",
            last_mass, lo, hi
        ),
    })
}

/// All-zero input: one zero row carrying the full row count as its weight,
/// making the coreset cost n times the nearest-center norm, exactly the
/// input's cost.
fn degenerate_zero(a: &PointMatrix, k: usize, eps: f64, seed: u64) -> Result<WeightedCoreset> {
    let meta = KMedianMeta {
        reduction: ReductionReport {
            iterations: 0,
            cost_trace: vec![0.0],
            opt_estimate: 0.0,
            i_star: None,
            seed,
        },
        input_rows: a.n(),
        sampling_seed: seed,
        attempts: 1,
        sensitivity_total: 1.0,
        weight_sum: a.n() as f64,
    };
    WeightedCoreset::from_parts(
        DMatrix::zeros(1, a.d() + 1),
        vec![a.n() as f64],
        k,
        eps,
        meta,
    )
}

/// Weighted cost of the coreset against centers in the original space: each
/// row picks its nearest center by the first d coordinates alone, then
/// contributes weight times sqrt(in-span distance squared plus tail squared).
/// Choosing the nearest center by the augmented distance would pick the same
/// center, since the tail is constant per row.
pub fn eval_kmedian_cost(c: &WeightedCoreset, centers: &CenterSet) -> Result<f64> {
    if centers.dim() != c.d() {
        return Err(Error::DimensionMismatch(format!(
            "centers live in dimension {}, coreset in {}",
            centers.dim(),
            c.d()
        )));
    }
    let d = c.d();
    let mut buf = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..c.len() {
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = c.points()[(i, j)];
        }
        let (_, g) = linalg::dist_to_centers(&buf, centers)?;
        let v = c.points()[(i, d)];
        total += c.weights()[i] * (g * g + v * v).sqrt();
    }
    Ok(total)
}

// ==== tests ====

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{self, Query, QueryFamily};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_points(n: usize, d: usize, seed: u64) -> PointMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        PointMatrix::from_rows(&rows).unwrap()
    }

    fn planted_clusters(per: usize, locs: &[Vec<f64>], spread: f64, seed: u64) -> PointMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(per * locs.len());
        for loc in locs {
            for _ in 0..per {
                let mut row = loc.clone();
                for v in row.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut r);
                    *v += spread * g;
                }
                rows.push(row);
            }
        }
        PointMatrix::from_rows(&rows).unwrap()
    }

    fn gaussian_centers(k: usize, d: usize, seed: u64) -> CenterSet {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        CenterSet::from_rows(&rows).unwrap()
    }

    fn bounding_box(a: &PointMatrix) -> (Vec<f64>, Vec<f64>) {
        let mut buf = vec![0.0; a.d()];
        let mut lo = vec![f64::INFINITY; a.d()];
        let mut hi = vec![f64::NEG_INFINITY; a.d()];
        for i in 0..a.n() {
            a.row_dense(i, &mut buf);
            for (j, &v) in buf.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        (lo, hi)
    }

    #[test]
    fn bicriteria_recovers_repeated_locations() {
        let cfg = Config::default();
        let locs =
            [vec![4.0, 0.0, 0.0], vec![0.0, -3.0, 1.0], vec![2.0, 2.0, 2.0]];
        let mut rows = Vec::new();
        for loc in &locs {
            for _ in 0..7 {
                rows.push(loc.clone());
            }
        }
        let a = PointMatrix::from_rows(&rows).unwrap();
        let centers = bicriteria_kmedian(&a, 3, 11, &cfg).unwrap();
        let cost = oracle::true_kmedian_cost(&a, &centers).unwrap();
        assert!(cost <= 1e-9, "pure repeated clusters should cost nothing, got {cost}");
        for loc in &locs {
            let hit = (0..centers.k()).any(|c| {
                let mut s = 0.0;
                for (j, v) in loc.iter().enumerate() {
                    let t = centers.matrix()[(c, j)] - v;
                    s += t * t;
                }
                s.sqrt() <= 1e-6
            });
            assert!(hit, "no center recovered location {loc:?}");
        }
    }

    #[test]
    fn single_center_sits_at_the_symmetric_median() {
        let cfg = Config::default();
        let rows = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![2.0, -1.0],
            vec![-2.0, 1.0],
        ];
        let a = PointMatrix::from_rows(&rows).unwrap();
        let centers = bicriteria_kmedian(&a, 1, 3, &cfg).unwrap();
        let norm =
            (centers.matrix()[(0, 0)].powi(2) + centers.matrix()[(0, 1)].powi(2)).sqrt();
        assert!(norm <= 1e-4, "negation-symmetric points have their median at the origin");
    }

    #[test]
    fn bicriteria_lands_within_three_times_the_pair_oracle() {
        let cfg = Config::default();
        let a = planted_clusters(25, &[vec![0.0, 0.0], vec![6.0, 5.0]], 0.5, 3);
        let centers = bicriteria_kmedian(&a, 2, 5, &cfg).unwrap();
        let mine = oracle::true_kmedian_cost(&a, &centers).unwrap();

        let mut best = f64::INFINITY;
        let mut ri = vec![0.0; a.d()];
        let mut rj = vec![0.0; a.d()];
        for i in 0..a.n() {
            a.row_dense(i, &mut ri);
            for j in (i + 1)..a.n() {
                a.row_dense(j, &mut rj);
                let pair = CenterSet::from_rows(&[ri.clone(), rj.clone()]).unwrap();
                best = best.min(oracle::true_kmedian_cost(&a, &pair).unwrap());
            }
        }
        assert!(
            mine <= 3.0 * best,
            "search cost {mine:.4} vs exhaustive-pair cost {best:.4}"
        );
    }

    #[test]
    fn sensitivities_are_uniform_when_all_points_coincide() {
        let cfg = Config::default();
        let rows = vec![vec![2.0, -1.0, 3.0]; 12];
        let a = PointMatrix::from_rows(&rows).unwrap();
        let centers = bicriteria_kmedian(&a, 1, 9, &cfg).unwrap();
        let profile = sensitivities(&a, &centers).unwrap();
        for s in &profile.sensitivities {
            assert!((s - 1.0 / 12.0).abs() <= 1e-12);
        }
        assert!((profile.total - 1.0).abs() <= 1e-9);
        assert!(profile.assignments.iter().all(|&c| c == 0));
    }

    #[test]
    fn an_outlier_dominates_the_sensitivity_profile() {
        let cfg = Config::default();
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut r);
                        0.1 * g
                    })
                    .collect()
            })
            .collect();
        rows.push(vec![50.0, 0.0, 0.0]);
        let a = PointMatrix::from_rows(&rows).unwrap();
        let centers = bicriteria_kmedian(&a, 1, 13, &cfg).unwrap();
        let profile = sensitivities(&a, &centers).unwrap();

        let out = profile.sensitivities[40];
        let worst_inlier =
            profile.sensitivities[..40].iter().fold(0.0f64, |acc, &s| acc.max(s));
        assert!(out > 10.0 * worst_inlier, "outlier {out:.4} vs inlier {worst_inlier:.4}");

        let total_cost = oracle::true_kmedian_cost(&a, &centers).unwrap();
        let (_, outlier_dist) =
            linalg::dist_to_centers(&[50.0, 0.0, 0.0], &centers).unwrap();
        assert!(out >= outlier_dist / total_cost - 1e-12);
    }

    #[test]
    fn sensitivity_totals_obey_the_structural_cap() {
        let cfg = Config::default();
        let a = gaussian_points(60, 5, 19);
        for k in [1usize, 2, 4] {
            let centers = bicriteria_kmedian(&a, k, 23 + k as u64, &cfg).unwrap();
            let profile = sensitivities(&a, &centers).unwrap();
            assert!(profile.total <= (2 * k + 1) as f64 + 1e-9);
            assert!(profile.total >= 1.0);
            assert!(profile.sensitivities.iter().all(|&s| s >= 1.0 / 60.0));
            assert_eq!(profile.assignments.len(), 60);
            assert!(profile.assignments.iter().all(|&c| c < k));
        }
    }

    #[test]
    fn augmented_nearest_center_matches_the_plain_one() {
        let mut r = ChaCha8Rng::seed_from_u64(31);
        let d = 4;
        for _ in 0..30 {
            let b: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let v: f64 = {
                let g: f64 = StandardNormal.sample(&mut r);
                g.abs()
            };
            let centers: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
                .collect();
            let plain_dist = |c: &[f64]| -> f64 {
                b.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            };
            let mut arg_plain = 0;
            let mut arg_aug = 0;
            let mut best_plain = f64::INFINITY;
            let mut best_aug = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let g = plain_dist(center);
                if g < best_plain {
                    best_plain = g;
                    arg_plain = c;
                }
                let aug = (g * g + v * v).sqrt();
                if aug < best_aug {
                    best_aug = aug;
                    arg_aug = c;
                }
            }
            assert_eq!(arg_plain, arg_aug);
        }
    }

    #[test]
    fn identical_rows_collapse_to_copies_with_exact_mass() {
        let cfg = Config::default();
        let q = vec![1.5, -2.0, 0.5, 3.0, 1.0, -1.0];
        let rows = vec![q.clone(); 200];
        let a = PointMatrix::from_rows(&rows).unwrap();
        let c = build_kmedian_coreset(&a, 2, 0.3, 41, &cfg).unwrap();

        assert_eq!(c.len(), sample_count(2, 0.3, &cfg));
        for i in 0..c.len() {
            for (j, v) in q.iter().enumerate() {
                assert!((c.points()[(i, j)] - v).abs() <= 1e-9);
            }
            assert!(c.points()[(i, 6)].abs() <= 1e-9);
        }
        let mass: f64 = c.weights().iter().sum();
        assert!((mass - 200.0).abs() <= 1e-6, "uniform scores make the mass exact");
        assert_eq!(c.meta().attempts, 1);

        let centers = gaussian_centers(2, 6, 99);
        let got = eval_kmedian_cost(&c, &centers).unwrap();
        let (_, g) = linalg::dist_to_centers(&q, &centers).unwrap();
        let want = 200.0 * g;
        assert!((got - want).abs() <= 1e-6 * want);
    }

    #[test]
    fn random_center_queries_stay_within_epsilon() {
        let cfg = Config::default();
        let (n, d, k, eps) = (250usize, 12usize, 2usize, 0.25f64);
        let mut passes = 0;
        for s in 0..8u64 {
            let a = gaussian_points(n, d, 100 + s);
            let c = build_kmedian_coreset(&a, k, eps, 1000 + s, &cfg).unwrap();
            let (lo, hi) = bounding_box(&a);
            let family = QueryFamily::centers_in_box(lo, hi, k, 100, 77 + s);
            let mut worst = 0.0f64;
            for i in 0..family.count {
                let centers = match family.query(i) {
                    Query::Centers(cs) => cs,
                    Query::Projection(_) => unreachable!("center family"),
                };
                let approx = eval_kmedian_cost(&c, &centers).unwrap();
                let truth = oracle::true_kmedian_cost(&a, &centers).unwrap();
                worst = worst.max((approx - truth).abs() / truth);
            }
            if worst <= eps {
                passes += 1;
            }
        }
        assert!(passes >= 5, "only {passes} of 8 seeds stayed within eps");
    }

    #[test]
    fn rotations_fixing_the_row_span_leave_costs_unchanged() {
        let cfg = Config::default();
        let d = 12;
        let mut r = ChaCha8Rng::seed_from_u64(53);
        let g1 = DMatrix::<f64>::from_fn(120, 4, |_, _| StandardNormal.sample(&mut r));
        let g2 = DMatrix::<f64>::from_fn(4, d, |_, _| StandardNormal.sample(&mut r));
        let a = PointMatrix::from_dmatrix(&(&g1 * &g2)).unwrap();
        let c = build_kmedian_coreset(&a, 2, 0.3, 53, &cfg).unwrap();

        // Orthonormal basis of the span of the projected parts.
        let cols = DMatrix::<f64>::from_fn(d, c.len(), |i, j| c.points()[(j, i)]);
        let v = linalg::orthonormalize(&cols);
        let rank = v.ell();
        assert!(rank < d, "rank-4 input must leave room outside its span");

        // Complete to a full basis keeping the span columns first, then spin
        // the complement with a random rotation.
        let filler = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut r));
        let stacked = DMatrix::<f64>::from_fn(d, rank + d, |i, j| {
            if j < rank {
                v.basis()[(i, j)]
            } else {
                filler[(i, j - rank)]
            }
        });
        let full = linalg::orthonormalize(&stacked);
        assert_eq!(full.ell(), d);
        let spin_seed = DMatrix::<f64>::from_fn(d - rank, d - rank, |_, _| {
            StandardNormal.sample(&mut r)
        });
        let spin = linalg::orthonormalize(&spin_seed);
        assert_eq!(spin.ell(), d - rank);
        let block = DMatrix::<f64>::from_fn(d, d, |i, j| {
            if i < rank && j < rank {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else if i >= rank && j >= rank {
                spin.basis()[(i - rank, j - rank)]
            } else {
                0.0
            }
        });
        let q = full.basis() * block * full.basis().transpose();

        let centers = gaussian_centers(3, d, 530);
        let rotated: Vec<Vec<f64>> = (0..centers.k())
            .map(|c0| {
                (0..d)
                    .map(|i| {
                        (0..d).map(|l| q[(i, l)] * centers.matrix()[(c0, l)]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let centers_rot = CenterSet::from_rows(&rotated).unwrap();

        let e1 = eval_kmedian_cost(&c, &centers).unwrap();
        let e2 = eval_kmedian_cost(&c, &centers_rot).unwrap();
        assert!(
            (e1 - e2).abs() <= 1e-8 * e1,
            "rotation moved the cost: {e1:.12e} vs {e2:.12e}"
        );
    }

    #[test]
    fn coreset_guided_search_stays_sound() {
        let cfg = Config::default();
        let eps = 0.3;
        let locs = vec![
            vec![8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let mut passes = 0;
        for seed in 0..5u64 {
            let a = planted_clusters(50, &locs, 0.6, 300 + seed);
            let cs = build_kmedian_coreset(&a, 3, eps, 200 + seed, &cfg).unwrap();

            let rows_d =
                DMatrix::<f64>::from_fn(cs.len(), 10, |i, j| cs.points()[(i, j)]);
            let on_coreset =
                bicriteria_weighted(&rows_d, cs.weights(), 3, 777 + seed, &cfg).unwrap();
            let on_input = bicriteria_kmedian(&a, 3, 777 + seed, &cfg).unwrap();

            let via_coreset = oracle::true_kmedian_cost(&a, &on_coreset).unwrap();
            let direct = oracle::true_kmedian_cost(&a, &on_input).unwrap();
            if via_coreset <= (1.0 + 5.0 * eps) * direct {
                passes += 1;
            }
        }
        assert!(passes >= 4, "only {passes} of 5 seeds kept the search sound");
    }

    #[test]
    fn sample_count_matches_the_pinned_formula() {
        let cfg = Config::default();
        let expected =
            (cfg.c_sample_kmedian * 9.0 * 3.0f64.ln() / 0.3f64.powi(4)).ceil() as usize;
        assert_eq!(sample_count(3, 0.3, &cfg), expected);
        assert_eq!(expected, 306);

        // The size bound caps the count when the multipliers are flipped.
        let big = Config { c_sample_kmedian: 10.0, ..Config::default() };
        let bound = (big.c_size_kmedian * 9.0 * 3.0f64.ln() / 0.3f64.powi(4)).floor() as usize;
        assert_eq!(sample_count(3, 0.3, &big), bound);

        // Never empty, even when the bound rounds to zero.
        assert_eq!(sample_count(1, 1.0, &cfg), 1);

        let a = gaussian_points(400, 30, 9);
        let c = build_kmedian_coreset(&a, 3, 0.3, 9, &cfg).unwrap();
        assert_eq!(c.len(), 306);
    }

    #[test]
    fn weight_mass_and_meta_are_consistent() {
        let cfg = Config::default();
        let a = gaussian_points(300, 8, 61);
        for seed in 0..5u64 {
            let c = build_kmedian_coreset(&a, 2, 0.2, seed, &cfg).unwrap();
            let mass: f64 = c.weights().iter().sum();
            assert!((0.8 * 300.0 - 1e-6..=1.2 * 300.0 + 1e-6).contains(&mass));
            assert!((c.meta().weight_sum - mass).abs() <= 1e-9 * 300.0);
            assert_eq!(c.meta().input_rows, 300);
            assert!(c.meta().attempts >= 1 && c.meta().attempts <= 1 + cfg.validate_retries);
            assert!(c.meta().sensitivity_total >= 1.0);
            assert!(c.meta().sensitivity_total <= 5.0 + 1e-9);
            assert_eq!(c.k(), 2);
            assert_eq!(c.d(), 8);
            assert!((c.epsilon() - 0.2).abs() == 0.0);
        }
    }

    #[test]
    fn undersized_mass_window_exhausts_retries() {
        let cfg = Config { c_sample_kmedian: 1e-9, ..Config::default() };
        let mut rows = vec![vec![1.0, 1.0]; 9];
        rows.push(vec![9.0, 9.0]);
        let a = PointMatrix::from_rows(&rows).unwrap();
        // A single draw weighs either far above or far below the 10-row
        // window, so every attempt must fail.
        let err = build_kmedian_coreset(&a, 1, 0.1, 5, &cfg).unwrap_err();
        match err {
            Error::ValidationFailed { attempts, .. } => {
                assert_eq!(attempts, 1 + cfg.validate_retries);
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn builds_replay_bit_for_bit() {
        let cfg = Config::default();
        let a = gaussian_points(100, 6, 17);
        let c1 = build_kmedian_coreset(&a, 2, 0.3, 5, &cfg).unwrap();
        let c2 = build_kmedian_coreset(&a, 2, 0.3, 5, &cfg).unwrap();
        assert_eq!(c1.points().as_slice(), c2.points().as_slice());
        assert_eq!(c1.weights(), c2.weights());
        assert_eq!(c1.meta().sampling_seed, c2.meta().sampling_seed);

        let c3 = build_kmedian_coreset(&a, 2, 0.3, 6, &cfg).unwrap();
        assert!(
            c1.points().as_slice() != c3.points().as_slice()
                || c1.weights() != c3.weights()
        );
    }

    #[test]
    fn eval_matches_a_scalar_reimplementation() {
        let mut r = ChaCha8Rng::seed_from_u64(71);
        let s = 25;
        let d = 5;
        let points =
            DMatrix::<f64>::from_fn(s, d + 1, |_, _| StandardNormal.sample(&mut r));
        let weights: Vec<f64> = (0..s).map(|_| 0.5 + 1.5 * r.gen::<f64>()).collect();
        let meta = KMedianMeta {
            reduction: ReductionReport {
                iterations: 0,
                cost_trace: vec![0.0],
                opt_estimate: 0.0,
                i_star: None,
                seed: 0,
            },
            input_rows: 25,
            sampling_seed: 0,
            attempts: 1,
            sensitivity_total: 1.0,
            weight_sum: weights.iter().sum(),
        };
        let c = WeightedCoreset::from_parts(points.clone(), weights.clone(), 3, 0.5, meta)
            .unwrap();
        let centers = gaussian_centers(3, d, 710);

        let mut scalar = 0.0;
        for i in 0..s {
            let mut best = f64::INFINITY;
            for c0 in 0..centers.k() {
                let mut g = 0.0;
                for j in 0..d {
                    let t = points[(i, j)] - centers.matrix()[(c0, j)];
                    g += t * t;
                }
                best = best.min(g.sqrt());
            }
            let v = points[(i, d)];
            scalar += weights[i] * (best * best + v * v).sqrt();
        }
        let got = eval_kmedian_cost(&c, &centers).unwrap();
        assert!((got - scalar).abs() <= 1e-10 * scalar);
    }

    #[test]
    fn trivial_row_contributions() {
        let meta = |wsum: f64| KMedianMeta {
            reduction: ReductionReport {
                iterations: 0,
                cost_trace: vec![0.0],
                opt_estimate: 0.0,
                i_star: None,
                seed: 0,
            },
            input_rows: 1,
            sampling_seed: 0,
            attempts: 1,
            sensitivity_total: 1.0,
            weight_sum: wsum,
        };
        let points = DMatrix::from_row_slice(1, 3, &[2.0, -1.0, 3.0]);
        let c = WeightedCoreset::from_parts(points, vec![1.0], 1, 1.0, meta(1.0)).unwrap();

        // Center on the projected part: only the tail survives.
        let on_row = CenterSet::from_rows(&[vec![2.0, -1.0]]).unwrap();
        let got = eval_kmedian_cost(&c, &on_row).unwrap();
        assert!((got - 3.0).abs() <= 1e-12);

        // Center at distance g: Pythagoras with the tail.
        let g = 4.0;
        let offset = CenterSet::from_rows(&[vec![2.0 + g, -1.0]]).unwrap();
        let got = eval_kmedian_cost(&c, &offset).unwrap();
        assert!((got - (g * g + 9.0).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn shape_and_parameter_errors() {
        let cfg = Config::default();
        let a = gaussian_points(20, 4, 23);
        assert!(build_kmedian_coreset(&a, 0, 0.3, 1, &cfg).is_err());
        assert!(build_kmedian_coreset(&a, 2, 0.0, 1, &cfg).is_err());
        assert!(build_kmedian_coreset(&a, 2, 1.5, 1, &cfg).is_err());
        assert!(build_kmedian_coreset(&a, 2, f64::NAN, 1, &cfg).is_err());
        assert!(bicriteria_kmedian(&a, 0, 1, &cfg).is_err());

        let centers3 = gaussian_centers(2, 3, 1);
        assert!(sensitivities(&a, &centers3).is_err());

        let meta = KMedianMeta {
            reduction: ReductionReport {
                iterations: 0,
                cost_trace: vec![0.0],
                opt_estimate: 0.0,
                i_star: None,
                seed: 0,
            },
            input_rows: 2,
            sampling_seed: 0,
            attempts: 1,
            sensitivity_total: 1.0,
            weight_sum: 2.0,
        };
        let two = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.5]);
        let ok = WeightedCoreset::from_parts(two.clone(), vec![0.0, 2.0], 1, 1.0, meta.clone());
        assert!(ok.is_ok(), "zero weights are allowed");
        let c = ok.unwrap();
        let bad_dim = gaussian_centers(1, 5, 2);
        assert!(matches!(
            eval_kmedian_cost(&c, &bad_dim),
            Err(Error::DimensionMismatch(_))
        ));

        assert!(WeightedCoreset::from_parts(
            DMatrix::zeros(0, 3),
            vec![],
            1,
            1.0,
            meta.clone()
        )
        .is_err());
        assert!(WeightedCoreset::from_parts(
            DMatrix::zeros(2, 1),
            vec![1.0, 1.0],
            1,
            1.0,
            meta.clone()
        )
        .is_err());
        assert!(
            WeightedCoreset::from_parts(two.clone(), vec![-0.1, 2.0], 1, 1.0, meta.clone())
                .is_err()
        );
        assert!(
            WeightedCoreset::from_parts(two.clone(), vec![1.0], 1, 1.0, meta.clone()).is_err()
        );
        assert!(
            WeightedCoreset::from_parts(two.clone(), vec![1.0, 1.0], 0, 1.0, meta.clone())
                .is_err()
        );
        assert!(
            WeightedCoreset::from_parts(two.clone(), vec![1.0, 1.0], 1, 0.0, meta.clone())
                .is_err()
        );
        // Mass far outside the window is rejected.
        assert!(
            WeightedCoreset::from_parts(two, vec![10.0, 10.0], 1, 0.5, meta).is_err()
        );
    }

    #[test]
    fn all_zero_input_collapses_to_one_row() {
        let cfg = Config::default();
        let a = PointMatrix::from_flat(50, 4, vec![0.0; 200]).unwrap();
        let c = build_kmedian_coreset(&a, 2, 0.4, 77, &cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.points().iter().all(|&v| v == 0.0));
        assert_eq!(c.weights(), &[50.0]);
        assert_eq!(c.meta().attempts, 1);

        let centers = gaussian_centers(2, 4, 770);
        let got = eval_kmedian_cost(&c, &centers).unwrap();
        let want = 50.0
            * (0..2)
                .map(|c0| {
                    (0..4)
                        .map(|j| centers.matrix()[(c0, j)].powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
        assert!((got - want).abs() <= 1e-12 * want);
    }
}
