//! Tolerance and pipeline knobs shared by the scenario format and the
//! foliation pipeline. Every default here can be overridden per scenario.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Acceptance bound on `|G_i(p) - c_i|`.
    pub constraint_tol: f64,
    /// Relative singular-value threshold for rank decisions.
    pub rank_tol: f64,
    /// Convergence bound on the projected gradient norm.
    pub grad_tol: f64,
    /// Kernel-membership bound along certified leaves.
    pub leaf_tol: f64,
    /// Distance bound for leaf-on-orbit certification.
    pub orbit_tol: f64,
    /// Minimum `S_1` gap for two leaves to count as distinct.
    pub distinctness_tol: f64,
    /// Bound on pullback/commutator/periodicity residuals and the
    /// local-freeness singular-value ratio.
    pub invariance_tol: f64,
    /// Stddev bound under which `alpha(Z_i)` counts as constant.
    pub constancy_tol: f64,
    /// Kernel-residual bound for the foliation-coincidence test.
    pub kernel_tol: f64,
    /// Bound on `|phi_i^1(p) - p|` in leaf certification.
    pub closure_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            constraint_tol: 1e-10,
            rank_tol: 1e-8,
            grad_tol: 1e-8,
            leaf_tol: 1e-6,
            orbit_tol: 1e-5,
            distinctness_tol: 1e-6,
            invariance_tol: 1e-8,
            constancy_tol: 1e-8,
            kernel_tol: 1e-8,
            closure_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Master seed; all random draws derive from it.
    pub seed: u64,
    /// Half-width of the rejection-sampling box; derived from the levels
    /// when absent.
    pub box_halfwidth: Option<f64>,
    /// Sample size for the hypothesis checks.
    pub invariance_samples: usize,
    /// Sample size for the global kernel/constancy scan.
    pub global_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            seed: 2022,
            box_halfwidth: None,
            invariance_samples: 100,
            global_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Haar quadrature nodes per circle factor.
    pub quadrature_nodes: usize,
    /// Random restarts per optimization mode.
    pub restarts: usize,
    pub max_opt_iters: usize,
    /// Central-difference step for gradients and the identity checks.
    pub fd_step: f64,
    /// Points collected per leaf trace (in addition to the seed).
    pub trace_steps: usize,
    pub trace_step_size: f64,
    /// Grid resolution per circle when searching the orbit for a point.
    pub orbit_grid: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            quadrature_nodes: 32,
            restarts: 16,
            max_opt_iters: 500,
            fd_step: 1e-5,
            trace_steps: 400,
            trace_step_size: 0.05,
            orbit_grid: 64,
        }
    }
}
