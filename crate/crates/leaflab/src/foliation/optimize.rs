//! Projected-gradient search for critical points of `S_1` on the manifold:
//! ambient central-difference gradient, tangential projection, Barzilai-
//! Borwein step with Armijo backtracking, Gauss-Newton retraction, best
//! result over random restarts.

use nalgebra::DVector;
use serde::Serialize;

use crate::action::AveragedForm;
use crate::error::{Error, Result};
use crate::geometry::{project_to_manifold, tangent_basis, LevelSetManifold};
use crate::parallel;
use crate::sample;

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e3;
const INITIAL_STEP: f64 = 0.05;
const EXTRA_VALUE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMode {
    Max,
    Min,
}

impl OptMode {
    fn sign(self) -> f64 {
        match self {
            OptMode::Max => 1.0,
            OptMode::Min => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptMode::Max => "max",
            OptMode::Min => "min",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub fd_step: f64,
    pub grad_tol: f64,
    pub seed: u64,
    pub box_halfwidth: f64,
}

/// A converged critical point of `S_1` on the manifold.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub point: DVector<f64>,
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub mode: OptMode,
    pub restarts_used: usize,
    pub converged_restarts: usize,
    /// Distinct converged values other restarts found; reported, not
    /// interpreted.
    pub extra_values: Vec<f64>,
}

struct RestartOutcome {
    point: DVector<f64>,
    value: f64,
    grad_norm: f64,
    converged: bool,
}

fn fd_gradient(avg: &AveragedForm<'_>, p: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let n = p.len();
    let mut g = DVector::zeros(n);
    for j in 0..n {
        let mut hi = p.clone();
        let mut lo = p.clone();
        hi[j] += h;
        lo[j] -= h;
        g[j] = (avg.moment(0, &hi)? - avg.moment(0, &lo)?) / (2.0 * h);
    }
    Ok(g)
}

fn run_restart(
    avg: &AveragedForm<'_>,
    m: &LevelSetManifold,
    mode: OptMode,
    seed_point: DVector<f64>,
    opts: &OptimizeOptions,
) -> Result<RestartOutcome> {
    let sign = mode.sign();
    let mut p = seed_point;
    let mut f = avg.moment(0, &p)?;
    let mut step = INITIAL_STEP;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;

    for _ in 0..opts.max_iters {
        let t = tangent_basis(&p, m)?;
        let g_amb = fd_gradient(avg, &p, opts.fd_step)?;
        let ascent = &t * (t.transpose() * &g_amb) * sign;
        grad_norm = ascent.norm();
        if grad_norm < opts.grad_tol {
            converged = true;
            break;
        }

        if let Some((pp, aa)) = &prev {
            let s = &p - pp;
            let y = &ascent - aa;
            let sy = s.dot(&y);
            if sy.abs() > 1e-300 {
                step = (s.dot(&s) / sy).abs().clamp(STEP_MIN, STEP_MAX);
            } else {
                step = (step * 2.0).clamp(STEP_MIN, STEP_MAX);
            }
        }

        // Near a degenerate critical set the true improvement drops below the
        // floating-point resolution of f; accept non-worsening steps once the
        // Armijo bound itself is unresolvable.
        let eps_f = 8.0 * f64::EPSILON * f.abs().max(1.0);
        let mut tau = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let Ok(cand) = project_to_manifold(&(&p + &ascent * tau), m) else {
                tau *= 0.5;
                continue;
            };
            let fc = avg.moment(0, &cand)?;
            let gain = sign * (fc - f);
            let bound = ARMIJO_C * tau * grad_norm * grad_norm;
            if gain >= bound || (bound < eps_f && gain >= -eps_f) {
                accepted = Some((cand, fc));
                break;
            }
            tau *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                prev = Some((p, ascent));
                p = cand;
                f = fc;
            }
            // Line search stalled above the gradient tolerance.
            None => break,
        }
    }

    Ok(RestartOutcome {
        point: p,
        value: f,
        grad_norm,
        converged,
    })
}

fn pick_best(
    outcomes: Vec<Result<RestartOutcome>>,
    mode: OptMode,
    restarts: usize,
) -> Result<CriticalPoint> {
    let sign = mode.sign();
    let mut best: Option<RestartOutcome> = None;
    let mut best_grad = f64::INFINITY;
    let mut best_any: Option<RestartOutcome> = None;
    let mut converged_restarts = 0;
    let mut converged_values: Vec<f64> = Vec::new();
    for out in outcomes {
        // A failed restart (projection loss, domain error) just burns one seed.
        let Ok(out) = out else { continue };
        if out.converged {
            converged_restarts += 1;
            converged_values.push(out.value);
            let better = match &best {
                None => true,
                Some(b) => sign * (out.value - b.value) > 0.0,
            };
            if better {
                best = Some(out);
            }
        } else if out.grad_norm < best_grad {
            best_grad = out.grad_norm;
            best_any = Some(out);
        }
    }
    match best {
        Some(b) => {
            // Surface any other critical values the restarts landed on.
            let mut extra_values = Vec::new();
            converged_values.sort_by(f64::total_cmp);
            for v in converged_values {
                if (v - b.value).abs() > EXTRA_VALUE_TOL
                    && extra_values
                        .last()
                        .is_none_or(|&last: &f64| (v - last).abs() > EXTRA_VALUE_TOL)
                {
                    extra_values.push(v);
                }
            }
            Ok(CriticalPoint {
                point: b.point,
                value: b.value,
                projected_gradient_norm: b.grad_norm,
                mode,
                restarts_used: restarts,
                converged_restarts,
                extra_values,
            })
        }
        None => Err(Error::OptimizationFailed {
            best_grad,
            restarts,
            best_point: best_any
                .map(|b| b.point.as_slice().to_vec())
                .unwrap_or_default(),
        }),
    }
}

/// Best critical point of `S_1` over `opts.restarts` random seeds.
pub fn optimize_moment(
    avg: &AveragedForm<'_>,
    m: &LevelSetManifold,
    mode: OptMode,
    opts: &OptimizeOptions,
) -> Result<CriticalPoint> {
    let seeds = sample::sample_points(m, opts.restarts, opts.seed, opts.box_halfwidth)?;
    let outcomes = parallel::map_slice(&seeds, |s| run_restart(avg, m, mode, s.clone(), opts));
    pick_best(outcomes, mode, opts.restarts)
}

/// Sequential twin of [`optimize_moment`] for benchmarks.
pub fn optimize_moment_seq(
    avg: &AveragedForm<'_>,
    m: &LevelSetManifold,
    mode: OptMode,
    opts: &OptimizeOptions,
) -> Result<CriticalPoint> {
    let seeds = sample::sample_points_seq(m, opts.restarts, opts.seed, opts.box_halfwidth)?;
    let outcomes = parallel::map_slice_seq(&seeds, |s| run_restart(avg, m, mode, s.clone(), opts));
    pick_best(outcomes, mode, opts.restarts)
}
