//! Certify a traced leaf as a torus orbit: kernel membership of every
//! generator along the trace, every traced point on the orbit of the seed,
//! and time-1 closure of the generator flows.

use nalgebra::DVector;

use crate::action::TorusAction;
use crate::error::Result;
use crate::geometry::{LevelSetManifold, OneForm};
use crate::parallel;

use super::trace::{trace_leaf, LeafTrace, TraceOptions};

const MAX_REFINE_ROUNDS: usize = 40;
const REFINE_STALL: f64 = 1e-14;
const GOLDEN_ITERS: usize = 48;
const INV_PHI: f64 = 0.618_033_988_749_895;

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub trace: TraceOptions,
    /// Grid resolution per circle factor for the orbit search.
    pub orbit_grid: usize,
    pub leaf_tol: f64,
    pub orbit_tol: f64,
    pub closure_tol: f64,
}

/// Outcome of one leaf certification, with the residual maxima that
/// produced it.
#[derive(Debug, Clone)]
pub struct LeafCertification {
    pub seed: DVector<f64>,
    pub points: usize,
    /// Max kernel residual per generator along the trace.
    pub max_kernel_residual: Vec<f64>,
    pub max_orbit_distance: f64,
    /// Distance of each traced point to the seed's orbit.
    pub orbit_distances: Vec<f64>,
    /// `|phi_i^1(seed) - seed|` per generator.
    pub closure_residuals: Vec<f64>,
    pub certified: bool,
    pub failures: Vec<String>,
}

fn decode_grid(mut idx: usize, r: usize, n: usize) -> Vec<f64> {
    let mut s = vec![0.0; r];
    for slot in s.iter_mut().rev() {
        *slot = (idx % n) as f64 / n as f64;
        idx /= n;
    }
    s
}

fn golden_minimize<F: Fn(f64) -> f64>(mut lo: f64, mut hi: f64, f: F) -> (f64, f64) {
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..GOLDEN_ITERS {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    if fa < fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Minimum distance from `q` to the orbit `{rho^s(base)}`: coarse grid scan
/// refined by per-coordinate golden-section descent.
pub fn orbit_distance(
    action: &TorusAction,
    base: &DVector<f64>,
    q: &DVector<f64>,
    grid: usize,
) -> Result<f64> {
    let r = action.num_generators();
    let total = grid.pow(r as u32);
    let dist = |s: &[f64]| -> f64 {
        match action.group_action(s, base, None) {
            Ok(p) => (p - q).norm(),
            Err(_) => f64::INFINITY,
        }
    };
    let mut best_s = vec![0.0; r];
    let mut best = f64::INFINITY;
    for idx in 0..total {
        let s = decode_grid(idx, r, grid);
        let d = dist(&s);
        if d < best {
            best = d;
            best_s = s;
        }
    }
    // Coordinate descent zigzags in coupled valleys, so iterate until the
    // distance stalls rather than a fixed round count.
    let halfwidth = 1.0 / grid as f64;
    for _ in 0..MAX_REFINE_ROUNDS {
        let before = best;
        for axis in 0..r {
            let centre = best_s[axis];
            let (si, d) = golden_minimize(centre - halfwidth, centre + halfwidth, |x| {
                let mut s = best_s.clone();
                s[axis] = x.rem_euclid(1.0);
                dist(&s)
            });
            if d < best {
                best = d;
                best_s[axis] = si.rem_euclid(1.0);
            }
        }
        if before - best < REFINE_STALL {
            break;
        }
    }
    Ok(best)
}

/// Certify the traced leaf through `seed`; returns the trace alongside the
/// certification record so callers can reuse the point cloud.
pub fn verify_torus_leaf(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    seed: &DVector<f64>,
    opts: &CertifyOptions,
) -> Result<(LeafTrace, LeafCertification)> {
    let trace = trace_leaf(alpha, action, m, seed, &opts.trace)?;
    let r = action.num_generators();

    let mut max_kernel = vec![0.0f64; r];
    for row in &trace.kernel_residuals {
        for (i, &v) in row.iter().enumerate() {
            max_kernel[i] = max_kernel[i].max(v);
        }
    }

    let distances: Vec<f64> = parallel::map_slice(&trace.points, |p| {
        orbit_distance(action, seed, p, opts.orbit_grid)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let max_orbit_distance = distances.iter().cloned().fold(0.0f64, f64::max);

    let mut closure = Vec::with_capacity(r);
    for i in 0..r {
        closure.push((action.flow(i, 1.0, seed, Some(m))? - seed).norm());
    }

    let mut failures = Vec::new();
    let fails_below = |v: f64, tol: f64| !v.is_finite() || v >= tol;
    for (i, &v) in max_kernel.iter().enumerate() {
        if fails_below(v, opts.leaf_tol) {
            failures.push(format!(
                "Z_{} leaves the kernel along the trace: residual {v:.3e}",
                i + 1
            ));
        }
    }
    if fails_below(max_orbit_distance, opts.orbit_tol) {
        failures.push(format!(
            "trace departs from the seed orbit: distance {max_orbit_distance:.3e}"
        ));
    }
    for (i, &v) in closure.iter().enumerate() {
        if fails_below(v, opts.closure_tol) {
            failures.push(format!(
                "flow of Z_{} does not close up: |phi^1(p)-p| = {v:.3e}",
                i + 1
            ));
        }
    }

    let certification = LeafCertification {
        seed: seed.clone(),
        points: trace.points.len(),
        max_kernel_residual: max_kernel,
        max_orbit_distance,
        orbit_distances: distances,
        closure_residuals: closure,
        certified: failures.is_empty(),
        failures,
    };
    Ok((trace, certification))
}
