//! Critical points of the moment function, leaf tracing, torus-leaf
//! certification, and scenario classification.

mod certify;
mod classify;
mod optimize;
mod trace;

pub use certify::{orbit_distance, verify_torus_leaf, CertifyOptions, LeafCertification};
pub use classify::{
    classify, global_scan, ClassifyContext, ClassifyOutcome, CriticalPair, LabelledLeaf,
    ScanSummary, Verdict,
};
pub use optimize::{optimize_moment, optimize_moment_seq, CriticalPoint, OptMode, OptimizeOptions};
pub use trace::{trace_leaf, LeafTrace, TraceOptions};

use nalgebra::DVector;

use crate::action::TorusAction;
use crate::error::Result;
use crate::geometry::{
    orthonormalize, rank_and_kernel, subspace_distance, LevelSetManifold, OneForm,
};
use crate::parallel;

/// Per-point diagnostics used by the global classification scan.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub point: DVector<f64>,
    pub rank: usize,
    /// Raw `alpha(Z_i)(p)` per generator.
    pub alpha_z: Vec<f64>,
    /// Kernel residual of each generator.
    pub kernel_residuals: Vec<f64>,
    /// Projector distance between `ker(omega|TM)` and `span{Z_i}`.
    pub span_distance: f64,
}

fn scan_row(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    p: &DVector<f64>,
) -> Result<ScanRow> {
    let data = rank_and_kernel(alpha, p, m)?;
    let gens = action.generator_matrix(p)?;
    let r = action.num_generators();
    let mut alpha_z = Vec::with_capacity(r);
    let mut kernel_residuals = Vec::with_capacity(r);
    for i in 0..r {
        let z = gens.column(i).clone_owned();
        alpha_z.push(alpha.value(p.as_slice(), &z)?);
        kernel_residuals.push(data.kernel_residual(&z));
    }
    let span_distance = subspace_distance(&data.kernel_basis, &orthonormalize(&gens));
    Ok(ScanRow {
        point: p.clone(),
        rank: data.rank,
        alpha_z,
        kernel_residuals,
        span_distance,
    })
}

/// Rank, kernel residuals and `alpha(Z_i)` over a point batch.
pub fn kernel_scan(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    points: &[DVector<f64>],
) -> Result<Vec<ScanRow>> {
    parallel::map_slice(points, |p| scan_row(alpha, action, m, p))
        .into_iter()
        .collect()
}

/// Sequential twin of [`kernel_scan`] for benchmarks.
pub fn kernel_scan_seq(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    points: &[DVector<f64>],
) -> Result<Vec<ScanRow>> {
    parallel::map_slice_seq(points, |p| scan_row(alpha, action, m, p))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{AveragedForm, TorusAction};
    use crate::expr::Expression;
    use crate::geometry::AmbientSpace;
    use crate::sample;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn coords6() -> Vec<String> {
        ["x1", "y1", "x2", "y2", "x3", "y3"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn ambient6() -> AmbientSpace {
        AmbientSpace::new(coords6(), Some(vec![(0, 1), (2, 3), (4, 5)])).unwrap()
    }

    fn liouville6() -> OneForm {
        let coords = coords6();
        OneForm::new(
            ["y1/2", "-x1/2", "y2/2", "-x2/2", "y3/2", "-x3/2"]
                .iter()
                .map(|s| Expression::parse(s, &coords).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn example1() -> (LevelSetManifold, OneForm, TorusAction) {
        let coords = coords6();
        let m = LevelSetManifold::new(
            vec![
                Expression::parse("(x1^2+y1^2)^2 + x2^2 + y2^2", &coords).unwrap(),
                Expression::parse("x2^2 + y2^2 + x3^2 + y3^2", &coords).unwrap(),
            ],
            vec![4.0, 1.0],
        )
        .unwrap();
        let action =
            TorusAction::from_rotation_weights(&ambient6(), &[vec![1, 1, 1], vec![0, 1, 1]])
                .unwrap();
        (m, liouville6(), action)
    }

    fn example2() -> (LevelSetManifold, OneForm, TorusAction) {
        let coords = coords6();
        let m = LevelSetManifold::new(
            vec![
                Expression::parse("x1^2 + y1^2", &coords).unwrap(),
                Expression::parse("x1^2 + y1^2 + x2^2 + y2^2 + x3^2 + y3^2", &coords).unwrap(),
            ],
            vec![1.0, 3.0],
        )
        .unwrap();
        let action =
            TorusAction::from_rotation_weights(&ambient6(), &[vec![1, 0, 0], vec![1, 1, 1]])
                .unwrap();
        (m, liouville6(), action)
    }

    fn p_max() -> DVector<f64> {
        DVector::from_vec(vec![2f64.sqrt(), 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    fn example1_generic_point(t: f64) -> DVector<f64> {
        let (c1, c2) = (4.0, 1.0);
        let rho2 = t * c2;
        DVector::from_vec(vec![
            (c1 - rho2).sqrt().sqrt(),
            0.0,
            rho2.sqrt(),
            0.0,
            (c2 - rho2).sqrt(),
            0.0,
        ])
    }

    fn quick_opts(seed: u64) -> OptimizeOptions {
        OptimizeOptions {
            restarts: 4,
            max_iters: 500,
            fd_step: 1e-5,
            grad_tol: 1e-8,
            seed,
            box_halfwidth: 3.0,
        }
    }

    fn invariants(p: &DVector<f64>) -> (f64, f64, f64) {
        (
            p[0] * p[0] + p[1] * p[1],
            p[2] * p[2] + p[3] * p[3],
            p[4] * p[4] + p[5] * p[5],
        )
    }

    #[test]
    fn optimizer_finds_both_critical_values_of_example1() {
        let (m, alpha, action) = example1();
        let avg = AveragedForm::new(&alpha, &action, 16, Some(&m));
        let opts = quick_opts(1);

        let max = optimize_moment(&avg, &m, OptMode::Max, &opts).unwrap();
        assert!((max.value - 3.0 * PI).abs() < 1e-6, "max {}", max.value);
        assert!(max.projected_gradient_norm < 1e-8);
        let (r1, r2, r3) = invariants(&max.point);
        assert!((r1 - 2.0).abs() < 1e-6 && r2 < 1e-6 && (r3 - 1.0).abs() < 1e-6);

        let min = optimize_moment(&avg, &m, OptMode::Min, &opts).unwrap();
        let expect = (3f64.sqrt() + 1.0) * PI;
        assert!((min.value - expect).abs() < 1e-6, "min {}", min.value);
        let (r1, r2, r3) = invariants(&min.point);
        assert!((r1 - 3f64.sqrt()).abs() < 1e-6 && (r2 - 1.0).abs() < 1e-6 && r3 < 1e-6);
    }

    #[test]
    fn optimizer_on_constant_moment_example2() {
        let (m, alpha, action) = example2();
        let avg = AveragedForm::new(&alpha, &action, 16, Some(&m));
        let opts = quick_opts(2);
        let max = optimize_moment(&avg, &m, OptMode::Max, &opts).unwrap();
        let min = optimize_moment(&avg, &m, OptMode::Min, &opts).unwrap();
        assert!((max.value - min.value).abs() < 1e-8);
        assert!((max.value - PI).abs() < 1e-8);
    }

    #[test]
    fn optimizer_is_stable_under_seed_and_step_changes() {
        let (m, alpha, action) = example1();
        let avg = AveragedForm::new(&alpha, &action, 16, Some(&m));
        let a = optimize_moment(&avg, &m, OptMode::Max, &quick_opts(3)).unwrap();
        let b = optimize_moment(&avg, &m, OptMode::Max, &quick_opts(4)).unwrap();
        assert!((a.value - b.value).abs() < 1e-6);
        let mut halved = quick_opts(3);
        halved.fd_step /= 2.0;
        let c = optimize_moment(&avg, &m, OptMode::Max, &halved).unwrap();
        assert!((a.value - c.value).abs() < 1e-6);
    }

    #[test]
    fn critical_point_generator_enters_kernel() {
        let (m, alpha, action) = example1();
        let avg = AveragedForm::new(&alpha, &action, 16, Some(&m));
        let max = optimize_moment(&avg, &m, OptMode::Max, &quick_opts(5)).unwrap();
        let data = rank_and_kernel(&alpha, &max.point, &m).unwrap();
        let z1 = action.generator_value(0, &max.point).unwrap();
        assert!(data.kernel_residual(&z1) < 1e-6);
    }

    #[test]
    fn trace_stays_on_the_max_leaf() {
        let (m, alpha, action) = example1();
        let opts = TraceOptions {
            steps: 120,
            step_size: 0.05,
        };
        let trace = trace_leaf(&alpha, &action, &m, &p_max(), &opts).unwrap();
        assert_eq!(trace.points.len(), 121);
        for p in &trace.points {
            let (r1, r2, r3) = invariants(p);
            assert!((r1 - 2.0).abs() < 1e-6, "leaf invariant drifted: {r1}");
            assert!(r2.sqrt() < 1e-6);
            assert!((r3 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn trace_with_zero_steps_is_the_seed() {
        let (m, alpha, action) = example1();
        let opts = TraceOptions {
            steps: 0,
            step_size: 0.05,
        };
        let trace = trace_leaf(&alpha, &action, &m, &p_max(), &opts).unwrap();
        assert_eq!(trace.points.len(), 1);
        assert_eq!(trace.points[0], p_max());
    }

    #[test]
    fn trace_from_generic_point_keeps_z2_in_kernel() {
        let (m, alpha, action) = example1();
        let q = example1_generic_point(0.5);
        let opts = TraceOptions {
            steps: 60,
            step_size: 0.05,
        };
        let trace = trace_leaf(&alpha, &action, &m, &q, &opts).unwrap();
        for (p, res) in trace.points.iter().zip(&trace.kernel_residuals) {
            assert!(m.is_on_manifold(p));
            assert!(res[1] < 1e-6, "Z2 residual {}", res[1]);
        }
    }

    fn quick_certify() -> CertifyOptions {
        CertifyOptions {
            trace: TraceOptions {
                steps: 80,
                step_size: 0.05,
            },
            orbit_grid: 64,
            leaf_tol: 1e-6,
            orbit_tol: 1e-5,
            closure_tol: 1e-6,
        }
    }

    #[test]
    fn max_leaf_is_certified() {
        let (m, alpha, action) = example1();
        let (_, cert) = verify_torus_leaf(&alpha, &action, &m, &p_max(), &quick_certify()).unwrap();
        assert!(cert.certified, "failures: {:?}", cert.failures);
        assert!(cert.max_orbit_distance < 1e-5);
    }

    #[test]
    fn generic_leaf_is_not_certified() {
        let (m, alpha, action) = example1();
        let q = example1_generic_point(0.5);
        let mut copts = quick_certify();
        copts.trace.steps = 20;
        let (_, cert) = verify_torus_leaf(&alpha, &action, &m, &q, &copts).unwrap();
        assert!(!cert.certified);
        assert!(
            cert.max_kernel_residual[0] > 0.05,
            "Z1 residual {}",
            cert.max_kernel_residual[0]
        );
        assert!(cert.failures.iter().any(|f| f.contains("Z_1")));
    }

    #[test]
    fn example2_leaf_is_certified_from_any_point() {
        let (m, alpha, action) = example2();
        let p = sample::sample_points(&m, 1, 77, 3.0)
            .unwrap()
            .pop()
            .unwrap();
        let (_, cert) = verify_torus_leaf(&alpha, &action, &m, &p, &quick_certify()).unwrap();
        assert!(cert.certified, "failures: {:?}", cert.failures);
    }

    #[test]
    fn distinct_leaves_are_geometrically_separated() {
        let (m, alpha, action) = example1();
        let avg = AveragedForm::new(&alpha, &action, 16, Some(&m));
        let copts = quick_certify();
        let max = optimize_moment(&avg, &m, OptMode::Max, &quick_opts(6)).unwrap();
        let min = optimize_moment(&avg, &m, OptMode::Min, &quick_opts(6)).unwrap();
        let (tmax, _) = verify_torus_leaf(&alpha, &action, &m, &max.point, &copts).unwrap();
        let (tmin, _) = verify_torus_leaf(&alpha, &action, &m, &min.point, &copts).unwrap();
        let mut closest = f64::INFINITY;
        for a in &tmax.points {
            for b in &tmin.points {
                closest = closest.min((a - b).norm());
            }
        }
        assert!(closest > 0.1, "leaves too close: {closest}");
    }

    #[test]
    fn hopeless_budget_reports_optimization_failure() {
        let (m, alpha, action) = example1();
        let avg = AveragedForm::new(&alpha, &action, 8, Some(&m));
        let mut opts = quick_opts(9);
        opts.max_iters = 0;
        opts.restarts = 2;
        match optimize_moment(&avg, &m, OptMode::Max, &opts) {
            Err(crate::error::Error::OptimizationFailed { restarts, .. }) => {
                assert_eq!(restarts, 2)
            }
            other => panic!("expected optimization failure, got {other:?}"),
        }
    }

    #[test]
    fn tracing_from_another_leaf_point_certifies_the_same_leaf() {
        let (m, alpha, action) = example1();
        let copts = quick_certify();
        let p = p_max();
        let q = action.group_action(&[0.23, 0.71], &p, None).unwrap();
        let (trace_q, cert_q) = verify_torus_leaf(&alpha, &action, &m, &q, &copts).unwrap();
        assert!(cert_q.certified);
        // every point of the second trace sits on the first seed's orbit
        for pt in trace_q.points.iter().step_by(7) {
            let d = orbit_distance(&action, &p, pt, 64).unwrap();
            assert!(d < 1e-5, "distance {d}");
        }
    }
}
