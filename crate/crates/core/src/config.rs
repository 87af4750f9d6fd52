//! Library-wide numeric tolerances and tunable constants.
//!
//! The fixed tolerances below are part of the public contract: tests and
//! downstream checks compare against these exact values. The tunable
//! multipliers live in [`Config`], which every pipeline accepts; defaults
//! are the shipped behavior and every field can be overridden (the CLI
//! reads a JSON file of partial overrides).

use serde::{Deserialize, Serialize};

/// Orthonormality check: max |(U^T U - I)_{ij}| accepted for a subspace basis.
pub const ORTHO_TOL: f64 = 1e-10;

/// Projection consistency: max |(A - A')U| entry accepted relative to the
/// input scale, where A' is the reconstruction through an orthonormal basis.
pub const PROJECTION_ORTH_TOL: f64 = 1e-8;

/// Column pivot threshold in orthonormalization, relative to the largest
/// original column norm. Columns whose re-orthogonalized remainder falls
/// below this are treated as dependent and dropped.
pub const PIVOT_REL_TOL: f64 = 1e-10;

/// Relative tolerance for an exactly-carried tail coordinate.
pub const EXACT_TAIL_REL_TOL: f64 = 1e-8;

/// Lower clamp for Lewis weights; keeps reweighting iterations finite.
pub const LEWIS_WEIGHT_MIN: f64 = 1e-12;

/// Upper clamp for Lewis weights.
pub const LEWIS_WEIGHT_MAX: f64 = 1.0;

/// A Lewis iteration that still moves some weight by more than this relative
/// amount after its iteration budget is flagged as non-converged.
pub const LEWIS_DIVERGENCE_REL: f64 = 0.5;

/// Relative floor used when turning absolute cost differences into relative
/// errors; scaled by the instance's total mass.
pub const REL_ERR_FLOOR: f64 = 1e-12;

/// Per-row projection residuals computed in double precision bottom out near
/// sqrt(machine epsilon) times the row norm; a cost of p-th powers therefore
/// carries noise of about this constant to the p, times the total mass.
/// Costs below that are treated as converged rather than optimized further.
pub const COST_NOISE_REL: f64 = 1e-7;

// Ordering invariants between the tolerances, enforced at compile time.
// Pivoting must be at least as strict as the orthonormality check.
const _: () = assert!(ORTHO_TOL > 0.0);
const _: () = assert!(PIVOT_REL_TOL <= ORTHO_TOL);
const _: () = assert!(PROJECTION_ORTH_TOL >= ORTHO_TOL);
const _: () = assert!(LEWIS_WEIGHT_MIN > 0.0 && LEWIS_WEIGHT_MIN < LEWIS_WEIGHT_MAX);

/// Tunable multipliers and iteration budgets.
///
/// `..Default::default()` is the supported way to override a subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Sketch rows per unit of (subspace dim)^2 / eps^2 in regression
    /// sketches, and per (column count)^2 in leverage-score sketches.
    pub sketch_width_mult: f64,
    /// Gaussian columns per unit of ln(n) in leverage-score estimation.
    pub gauss_col_mult: f64,
    /// Divisor in the iterative-augmentation stopping threshold
    /// eps^max(2/p,1) * opt / drop_divisor, and in its iteration cap.
    pub drop_divisor: f64,
    /// Divisor mapping eps^max(2/p,1) to the sampled variant's accuracy tau.
    pub tau_divisor: f64,
    /// Repeats per unit of ln(n) when estimating residuals by medians.
    pub residual_repeats_mult: f64,
    /// Iteratively reweighted subspace fitting: iteration cap per start.
    pub irls_max_iters: usize,
    /// Extra random restarts beyond the spectral initialization.
    pub irls_restarts: usize,
    /// Relative cost-change convergence threshold for reweighted fitting.
    pub irls_tol: f64,
    /// Residual damping floor, relative to the largest row norm.
    pub irls_floor_rel: f64,
    /// Sample-count multiplier for subspace coresets.
    pub c_sample_subspace: f64,
    /// Size-bound multiplier for subspace coresets (p = 1 form).
    pub c_size_subspace: f64,
    /// Sample-count multiplier for k-median coresets.
    pub c_sample_kmedian: f64,
    /// Size-bound multiplier for k-median coresets.
    pub c_size_kmedian: f64,
    /// Cap on total sensitivity, in units of k.
    pub c_total_sensitivity: f64,
    /// Alternation rounds in the bicriteria k-median search.
    pub bicriteria_rounds: usize,
    /// Relative movement threshold stopping a geometric-median refinement.
    pub weiszfeld_tol: f64,
    /// Iteration cap for one geometric-median refinement.
    pub weiszfeld_max_iters: usize,
    /// Random queries evaluated by a build's self-validation pass.
    pub validate_queries: usize,
    /// Fresh-seed rebuilds allowed when self-validation fails; 0 disables
    /// the validation pass entirely.
    pub validate_retries: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            sketch_width_mult: 20.0,
            gauss_col_mult: 8.0,
            drop_divisor: 80.0,
            tau_divisor: 8.0,
            residual_repeats_mult: 8.0,
            irls_max_iters: 30,
            irls_restarts: 2,
            irls_tol: 1e-6,
            irls_floor_rel: 1e-8,
            c_sample_subspace: 0.5,
            c_size_subspace: 1.0,
            c_sample_kmedian: 0.25,
            c_size_kmedian: 1.0,
            c_total_sensitivity: 3.0,
            bicriteria_rounds: 20,
            weiszfeld_tol: 1e-7,
            weiszfeld_max_iters: 60,
            validate_queries: 50,
            validate_retries: 3,
        }
    }
}

impl Config {
    /// Exponent max(2/p, 1) governing accuracy thresholds across the crate.
    pub fn accuracy_exponent(p: f64) -> f64 {
        (2.0 / p).max(1.0)
    }

    /// Stopping threshold for one augmentation step at accuracy `eps`.
    pub fn drop_threshold(&self, eps: f64, p: f64, opt_estimate: f64) -> f64 {
        eps.powf(Self::accuracy_exponent(p)) * opt_estimate / self.drop_divisor
    }

    /// Iteration cap matching the stopping threshold.
    pub fn augmentation_cap(&self, eps: f64, p: f64) -> usize {
        (self.drop_divisor / eps.powf(Self::accuracy_exponent(p))).ceil() as usize
    }

    /// Accuracy parameter for the sampled reduction variant.
    pub fn tau(&self, eps: f64, p: f64) -> f64 {
        eps.powf(Self::accuracy_exponent(p)) / self.tau_divisor
    }

    /// Default repeat count for median-amplified residual estimation.
    pub fn residual_repeats(&self, n: usize) -> usize {
        ((self.residual_repeats_mult * (n.max(2) as f64).ln()).ceil() as usize).max(1)
    }
}

// ==== tests ====

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_exponent_switches_at_p_two() {
        assert_eq!(Config::accuracy_exponent(1.0), 2.0);
        assert_eq!(Config::accuracy_exponent(2.0), 1.0);
        assert_eq!(Config::accuracy_exponent(4.0), 1.0);
        assert!((Config::accuracy_exponent(1.5) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = Config::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(back.sketch_width_mult, cfg.sketch_width_mult);
        assert_eq!(back.validate_retries, cfg.validate_retries);
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg: Config = serde_json::from_str(r#"{"drop_divisor": 40.0}"#).unwrap();
        assert_eq!(cfg.drop_divisor, 40.0);
        assert_eq!(cfg.sketch_width_mult, Config::default().sketch_width_mult);
    }
}
