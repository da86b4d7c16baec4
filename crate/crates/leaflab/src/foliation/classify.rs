//! End-to-end classification: hypothesis checks, global constancy/kernel
//! scan, critical-point search and leaf certification.

use serde::Serialize;

use crate::action::{check_invariance, AveragedForm, InvarianceReport, TorusAction};
use crate::config::{PipelineConfig, SamplingConfig, Tolerances};
use crate::error::Result;
use crate::geometry::{LevelSetManifold, OneForm};
use crate::sample;

use super::certify::{verify_torus_leaf, CertifyOptions, LeafCertification};
use super::optimize::{optimize_moment, CriticalPoint, OptMode, OptimizeOptions};
use super::trace::TraceOptions;
use super::{kernel_scan, ScanRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TwoDistinctToroidalLeaves,
    AllLeavesToroidal,
    HypothesesViolated,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::TwoDistinctToroidalLeaves => "two_distinct_toroidal_leaves",
            Verdict::AllLeavesToroidal => "all_leaves_toroidal",
            Verdict::HypothesesViolated => "hypotheses_violated",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Everything classification needs, borrowed from the scenario.
pub struct ClassifyContext<'a> {
    pub alpha: &'a OneForm,
    pub action: &'a TorusAction,
    pub manifold: &'a LevelSetManifold,
    pub tolerances: &'a Tolerances,
    pub sampling: &'a SamplingConfig,
    pub pipeline: &'a PipelineConfig,
    pub box_halfwidth: f64,
}

impl<'a> ClassifyContext<'a> {
    pub fn averaged(&self) -> AveragedForm<'a> {
        AveragedForm::new(
            self.alpha,
            self.action,
            self.pipeline.quadrature_nodes,
            Some(self.manifold),
        )
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            restarts: self.pipeline.restarts,
            max_iters: self.pipeline.max_opt_iters,
            fd_step: self.pipeline.fd_step,
            grad_tol: self.tolerances.grad_tol,
            seed: self.sampling.seed,
            box_halfwidth: self.box_halfwidth,
        }
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            trace: TraceOptions {
                steps: self.pipeline.trace_steps,
                step_size: self.pipeline.trace_step_size,
            },
            orbit_grid: self.pipeline.orbit_grid,
            leaf_tol: self.tolerances.leaf_tol,
            orbit_tol: self.tolerances.orbit_tol,
            closure_tol: self.tolerances.closure_tol,
        }
    }
}

/// Aggregates of the global kernel/constancy scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub samples: usize,
    pub alpha_z_stddev: Vec<f64>,
    pub alpha_z_mean: Vec<f64>,
    pub max_kernel_residual: Vec<f64>,
    pub max_span_distance: f64,
    /// Distinct numerical ranks seen over the sample.
    pub ranks: Vec<usize>,
}

impl ScanSummary {
    pub fn from_rows(rows: &[ScanRow], r: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; r];
        let mut max_res = vec![0.0f64; r];
        let mut max_span = 0.0f64;
        let mut ranks: Vec<usize> = Vec::new();
        for row in rows {
            for i in 0..r {
                mean[i] += row.alpha_z[i] / n;
                max_res[i] = max_res[i].max(row.kernel_residuals[i]);
            }
            max_span = max_span.max(row.span_distance);
            if !ranks.contains(&row.rank) {
                ranks.push(row.rank);
            }
        }
        let mut stddev = vec![0.0; r];
        for row in rows {
            for i in 0..r {
                let d = row.alpha_z[i] - mean[i];
                stddev[i] += d * d / n;
            }
        }
        for s in &mut stddev {
            *s = s.sqrt();
        }
        ranks.sort_unstable();
        ScanSummary {
            samples: rows.len(),
            alpha_z_stddev: stddev,
            alpha_z_mean: mean,
            max_kernel_residual: max_res,
            max_span_distance: max_span,
            ranks,
        }
    }
}

/// A certified (or refuted) leaf with its provenance label.
#[derive(Debug, Clone)]
pub struct LabelledLeaf {
    pub label: String,
    pub certification: LeafCertification,
}

#[derive(Debug, Clone)]
pub struct CriticalPair {
    pub max: CriticalPoint,
    pub min: CriticalPoint,
    pub gap: f64,
}

pub struct ClassifyOutcome {
    pub verdict: Verdict,
    pub invariance: InvarianceReport,
    pub hypothesis_violations: Vec<String>,
    pub scan: Option<ScanSummary>,
    pub critical: Option<CriticalPair>,
    pub leaves: Vec<LabelledLeaf>,
    pub diagnostics: Vec<String>,
}

/// Run the full decision pipeline.
pub fn classify(ctx: &ClassifyContext<'_>) -> Result<ClassifyOutcome> {
    let tol = ctx.tolerances;
    let inv_points = sample::sample_points(
        ctx.manifold,
        ctx.sampling.invariance_samples,
        ctx.sampling.seed,
        ctx.box_halfwidth,
    )?;
    let invariance = check_invariance(
        ctx.alpha,
        ctx.action,
        ctx.manifold,
        &inv_points,
        ctx.sampling.seed,
    )?;
    let violations = invariance.violations(tol.invariance_tol, tol.constancy_tol);
    if !violations.is_empty() {
        return Ok(ClassifyOutcome {
            verdict: Verdict::HypothesesViolated,
            invariance,
            hypothesis_violations: violations,
            scan: None,
            critical: None,
            leaves: Vec::new(),
            diagnostics: Vec::new(),
        });
    }

    let global = sample::sample_points(
        ctx.manifold,
        ctx.sampling.global_samples,
        ctx.sampling.seed,
        ctx.box_halfwidth,
    )?;
    let rows = kernel_scan(ctx.alpha, ctx.action, ctx.manifold, &global)?;
    let r = ctx.action.num_generators();
    let scan = ScanSummary::from_rows(&rows, r);

    let all_constant = scan.alpha_z_stddev.iter().all(|&s| s < tol.constancy_tol);
    let kernels_ok = scan.max_kernel_residual.iter().all(|&v| v < tol.kernel_tol);

    let mut diagnostics = Vec::new();
    let mut leaves = Vec::new();

    if all_constant && kernels_ok {
        // The foliations coincide; certify one representative leaf for the
        // report.
        match verify_torus_leaf(
            ctx.alpha,
            ctx.action,
            ctx.manifold,
            &rows[0].point,
            &ctx.certify_options(),
        ) {
            Ok((_, certification)) => leaves.push(LabelledLeaf {
                label: "representative".into(),
                certification,
            }),
            Err(e) => diagnostics.push(format!("representative leaf trace failed: {e}")),
        }
        return Ok(ClassifyOutcome {
            verdict: Verdict::AllLeavesToroidal,
            invariance,
            hypothesis_violations: Vec::new(),
            scan: Some(scan),
            critical: None,
            leaves,
            diagnostics,
        });
    }

    let avg = ctx.averaged();
    let opts = ctx.optimize_options();
    let run = |mode: OptMode| -> Result<CriticalPoint> {
        optimize_moment(&avg, ctx.manifold, mode, &opts)
    };
    let (max_cp, min_cp) = match (run(OptMode::Max), run(OptMode::Min)) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            for (mode, res) in [("max", a), ("min", b)] {
                if let Err(e) = res {
                    diagnostics.push(format!("{mode} optimization failed: {e}"));
                }
            }
            return Ok(ClassifyOutcome {
                verdict: Verdict::Inconclusive,
                invariance,
                hypothesis_violations: Vec::new(),
                scan: Some(scan),
                critical: None,
                leaves,
                diagnostics,
            });
        }
    };

    let gap = max_cp.value - min_cp.value;
    let copts = ctx.certify_options();
    let mut all_certified = true;
    for (label, cp) in [("max", &max_cp), ("min", &min_cp)] {
        match verify_torus_leaf(ctx.alpha, ctx.action, ctx.manifold, &cp.point, &copts) {
            Ok((_, certification)) => {
                if !certification.certified {
                    all_certified = false;
                    diagnostics.push(format!(
                        "{label} leaf not certified: {}",
                        certification.failures.join("; ")
                    ));
                }
                leaves.push(LabelledLeaf {
                    label: label.into(),
                    certification,
                });
            }
            Err(e) => {
                all_certified = false;
                diagnostics.push(format!("{label} leaf trace failed: {e}"));
            }
        }
    }

    let distinct = gap > tol.distinctness_tol;
    if !distinct {
        diagnostics.push(format!(
            "critical values are not distinct: gap {gap:.3e} <= {:.3e}",
            tol.distinctness_tol
        ));
    }
    let verdict = if all_certified && distinct {
        Verdict::TwoDistinctToroidalLeaves
    } else {
        Verdict::Inconclusive
    };
    Ok(ClassifyOutcome {
        verdict,
        invariance,
        hypothesis_violations: Vec::new(),
        scan: Some(scan),
        critical: Some(CriticalPair {
            max: max_cp,
            min: min_cp,
            gap,
        }),
        leaves,
        diagnostics,
    })
}

/// The raw global scan rows, for callers that need per-point data.
pub fn global_scan(ctx: &ClassifyContext<'_>) -> Result<Vec<ScanRow>> {
    let pts = sample::sample_points(
        ctx.manifold,
        ctx.sampling.global_samples,
        ctx.sampling.seed,
        ctx.box_halfwidth,
    )?;
    kernel_scan(ctx.alpha, ctx.action, ctx.manifold, &pts)
}
