//! Command orchestration: run one pipeline per invocation and produce the
//! versioned JSON report (plus a CSV point cloud for `trace`).
//!
//! Exit codes: 0 when the outcome matches the scenario's `expect` field (or
//! no expectation is declared), 1 on a mismatch, 2 on errors.

use nalgebra::DVector;
use serde_json::{json, Value};

use crate::action::{check_ds_identity, check_invariance, d_alpha0_fd, AveragedForm};
use crate::error::Result;
use crate::foliation::{classify, optimize_moment, orbit_distance, trace_leaf, verify_torus_leaf};
use crate::geometry::{poisson_bracket, two_form_matrix};
use crate::report::{self, ClassifyBlock, CriticalPointReport, HypothesisBlock, LeafReportEntry};
use crate::sample;
use crate::scenario::{Lab, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Verify,
    FindLeaves,
    Trace,
    Classify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::FindLeaves => "find-leaves",
            Command::Trace => "trace",
            Command::Classify => "classify",
        }
    }
}

pub struct RunOutput {
    pub report: Value,
    pub exit_code: i32,
    /// CSV payload, produced by `trace`.
    pub csv: Option<String>,
}

/// Run `command` against an already-validated scenario.
pub fn run(command: Command, scenario: &Scenario) -> RunOutput {
    match run_inner(command, scenario) {
        Ok(out) => out,
        Err(e) => RunOutput {
            report: json!({
                "schema": report::SCHEMA_VERSION,
                "command": command.as_str(),
                "scenario_id": scenario.id,
                "error": e.to_string(),
            }),
            exit_code: 2,
            csv: None,
        },
    }
}

fn run_inner(command: Command, scenario: &Scenario) -> Result<RunOutput> {
    let lab = scenario.build()?;
    match command {
        Command::Verify => run_verify(scenario, &lab),
        Command::FindLeaves => run_find_leaves(scenario, &lab),
        Command::Trace => run_trace(scenario, &lab),
        Command::Classify => run_classify(scenario, &lab),
    }
}

fn expect_exit(scenario: &Scenario, verdict: &str) -> i32 {
    match &scenario.expect {
        Some(e) if e == verdict => 0,
        Some(_) => 1,
        None => 0,
    }
}

/// `verify` matches the expectation only at hypothesis granularity: every
/// verdict except `hypotheses_violated` presumes the hypotheses hold.
fn verify_exit(scenario: &Scenario, hypotheses_ok: bool) -> i32 {
    match &scenario.expect {
        Some(e) => {
            let expected_ok = e != "hypotheses_violated";
            if expected_ok == hypotheses_ok {
                0
            } else {
                1
            }
        }
        None => {
            if hypotheses_ok {
                0
            } else {
                1
            }
        }
    }
}

fn run_verify(scenario: &Scenario, lab: &Lab) -> Result<RunOutput> {
    let tol = &scenario.tolerances;
    let sampling = &scenario.sampling;
    let points = sample::sample_points(
        &lab.manifold,
        sampling.invariance_samples,
        sampling.seed,
        lab.box_halfwidth,
    )?;
    let invariance = check_invariance(
        &lab.alpha,
        &lab.action,
        &lab.manifold,
        &points,
        sampling.seed,
    )?;
    let violations = invariance.violations(tol.invariance_tol, tol.constancy_tol);
    let ok = violations.is_empty();

    // Identity diagnostics on a small deterministic subsample.
    let idents = identity_block(scenario, lab, &points)?;

    let verdict = if ok {
        "hypotheses_ok"
    } else {
        "hypotheses_violated"
    };
    let result = json!({
        "hypotheses": HypothesisBlock { ok, violations, residuals: invariance },
        "identities": idents,
    });
    let exit_code = verify_exit(scenario, ok);
    Ok(RunOutput {
        report: report::envelope("verify", scenario, Some(verdict), result),
        exit_code,
        csv: None,
    })
}

fn identity_block(scenario: &Scenario, lab: &Lab, points: &[DVector<f64>]) -> Result<Value> {
    let pipeline = &scenario.pipeline;
    let avg = AveragedForm::new(
        &lab.alpha,
        &lab.action,
        pipeline.quadrature_nodes,
        Some(&lab.manifold),
    );
    let r = lab.action.num_generators();
    let subset: Vec<&DVector<f64>> = points.iter().take(10).collect();

    let mut ds_max = 0.0f64;
    for p in &subset {
        for i in 0..r {
            ds_max = ds_max.max(check_ds_identity(
                &avg,
                &lab.manifold,
                i,
                p,
                pipeline.fd_step,
            )?);
        }
    }

    let mut quad_gap = 0.0f64;
    let half = AveragedForm::new(
        &lab.alpha,
        &lab.action,
        (pipeline.quadrature_nodes / 2).max(1),
        Some(&lab.manifold),
    );
    for p in subset.iter().take(5) {
        for i in 0..r {
            quad_gap = quad_gap.max((avg.moment(i, p)? - half.moment(i, p)?).abs());
        }
    }

    let mut d_alpha_gap = 0.0f64;
    for p in subset.iter().take(3) {
        let fd = d_alpha0_fd(&avg, p, pipeline.fd_step)?;
        let omega = two_form_matrix(&lab.alpha, p)?.omega;
        d_alpha_gap = d_alpha_gap.max((fd - omega).amax());
    }

    let mut bracket_max = 0.0f64;
    if lab.ambient.symplectic_pairs().is_some() {
        let cons = lab.manifold.constraints();
        for p in &subset {
            for a in 0..cons.len() {
                for b in a + 1..cons.len() {
                    bracket_max = bracket_max
                        .max(poisson_bracket(&cons[a], &cons[b], p, &lab.ambient)?.abs());
                }
            }
        }
    }

    Ok(json!({
        "ds_identity_max_residual": ds_max,
        "quadrature_consistency_gap": quad_gap,
        "d_alpha0_vs_omega_max": d_alpha_gap,
        "constraint_poisson_bracket_max": bracket_max,
        "identity_sample_points": subset.len(),
    }))
}

fn run_find_leaves(scenario: &Scenario, lab: &Lab) -> Result<RunOutput> {
    let ctx = lab.classify_context();
    let avg = ctx.averaged();
    let opts = ctx.optimize_options();
    let copts = ctx.certify_options();

    let max = optimize_moment(&avg, &lab.manifold, crate::foliation::OptMode::Max, &opts)?;
    let min = optimize_moment(&avg, &lab.manifold, crate::foliation::OptMode::Min, &opts)?;
    let gap = max.value - min.value;

    let mut leaves = Vec::new();
    let mut all_certified = true;
    for (label, cp) in [("max", &max), ("min", &min)] {
        let (_, cert) =
            verify_torus_leaf(&lab.alpha, &lab.action, &lab.manifold, &cp.point, &copts)?;
        all_certified &= cert.certified;
        leaves.push(LeafReportEntry::new(label, &cert));
    }

    let result = json!({
        "critical_points": [CriticalPointReport::from(&max), CriticalPointReport::from(&min)],
        "s1_max": max.value,
        "s1_min": min.value,
        "s1_gap": gap,
        "leaves": leaves,
        "all_certified": all_certified,
    });
    Ok(RunOutput {
        report: report::envelope("find-leaves", scenario, None, result),
        exit_code: 0,
        csv: None,
    })
}

fn run_trace(scenario: &Scenario, lab: &Lab) -> Result<RunOutput> {
    let ctx = lab.classify_context();
    let seed_point = match &scenario.trace.seed_point {
        Some(coords) => {
            let q = DVector::from_vec(coords.clone());
            crate::geometry::project_to_manifold(&q, &lab.manifold)?
        }
        None => {
            let avg = ctx.averaged();
            optimize_moment(
                &avg,
                &lab.manifold,
                crate::foliation::OptMode::Max,
                &ctx.optimize_options(),
            )?
            .point
        }
    };

    let trace = trace_leaf(
        &lab.alpha,
        &lab.action,
        &lab.manifold,
        &seed_point,
        &ctx.certify_options().trace,
    )?;
    let avg = ctx.averaged();
    let mut s1 = Vec::with_capacity(trace.points.len());
    let mut distances = Vec::with_capacity(trace.points.len());
    for p in &trace.points {
        s1.push(avg.moment(0, p)?);
        distances.push(orbit_distance(
            &lab.action,
            &seed_point,
            p,
            scenario.pipeline.orbit_grid,
        )?);
    }
    let csv = report::trace_csv(
        lab.ambient.coord_names(),
        &trace.points,
        &s1,
        &trace.kernel_residuals,
        &distances,
        lab.action.num_generators(),
    );

    let result = json!({
        "seed": seed_point.as_slice().to_vec(),
        "points": trace.points.len(),
        "max_orbit_distance": distances.iter().cloned().fold(0.0f64, f64::max),
    });
    Ok(RunOutput {
        report: report::envelope("trace", scenario, None, result),
        exit_code: 0,
        csv: Some(csv),
    })
}

fn run_classify(scenario: &Scenario, lab: &Lab) -> Result<RunOutput> {
    let ctx = lab.classify_context();
    let outcome = classify(&ctx)?;
    let verdict = outcome.verdict.as_str();
    let block = ClassifyBlock::new(&outcome);
    let result = serde_json::to_value(&block).unwrap_or_else(|_| json!({}));
    let exit_code = expect_exit(scenario, verdict);
    Ok(RunOutput {
        report: report::envelope("classify", scenario, Some(verdict), result),
        exit_code,
        csv: None,
    })
}
