//! Leaf tracing: breadth-first exploration of the kernel foliation on an
//! r-parameter grid. Each step integrates RK4 along one column of the kernel
//! frame, keeping the frame continuously aligned to its parent by orthogonal
//! Procrustes so the trace never flips between sheets of the frame bundle.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::action::TorusAction;
use crate::error::{Error, Result};
use crate::geometry::{project_to_manifold, rank_and_kernel, LevelSetManifold, OneForm};

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Points collected beyond the seed.
    pub steps: usize,
    pub step_size: f64,
}

/// A sampled patch of one leaf, seed first.
#[derive(Debug, Clone)]
pub struct LeafTrace {
    pub seed: DVector<f64>,
    pub points: Vec<DVector<f64>>,
    /// Kernel residual of each generator at each traced point.
    pub kernel_residuals: Vec<Vec<f64>>,
}

/// Rotate `new` (orthonormal columns) to best overlap `reference`.
fn procrustes_align(new: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let overlap = new.transpose() * reference;
    let svd = overlap.svd(true, true);
    let q = svd.u.expect("requested u") * svd.v_t.expect("requested v_t");
    new * q
}

fn kernel_frame(
    alpha: &OneForm,
    m: &LevelSetManifold,
    expected_dim: usize,
    y: &DVector<f64>,
    reference: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    // RK4 stage points sit slightly off the manifold; retract before asking
    // for the kernel.
    let yp = project_to_manifold(y, m)?;
    let data = rank_and_kernel(alpha, &yp, m)?;
    if data.kernel_dim() != expected_dim {
        return Err(Error::RankDrift {
            expected: expected_dim,
            found: data.kernel_dim(),
        });
    }
    Ok(procrustes_align(&data.kernel_basis, reference))
}

fn residuals_at(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    p: &DVector<f64>,
) -> Result<Vec<f64>> {
    let data = rank_and_kernel(alpha, p, m)?;
    (0..action.num_generators())
        .map(|i| Ok(data.kernel_residual(&action.generator_value(i, p)?)))
        .collect()
}

struct Step {
    point: DVector<f64>,
    frame: DMatrix<f64>,
}

fn step_along_kernel(
    alpha: &OneForm,
    m: &LevelSetManifold,
    point: &DVector<f64>,
    frame: &DMatrix<f64>,
    axis: usize,
    h: f64,
) -> Result<Step> {
    let dim = frame.ncols();
    let field = |y: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(kernel_frame(alpha, m, dim, y, frame)?
            .column(axis)
            .clone_owned())
    };
    let k1 = field(point)?;
    let k2 = field(&(point + &k1 * (h / 2.0)))?;
    let k3 = field(&(point + &k2 * (h / 2.0)))?;
    let k4 = field(&(point + &k3 * h))?;
    let raw = point + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let next = project_to_manifold(&raw, m)?;
    let next_frame = kernel_frame(alpha, m, dim, &next, frame)?;
    Ok(Step {
        point: next,
        frame: next_frame,
    })
}

/// Explore the leaf through `seed` over an r-parameter grid.
pub fn trace_leaf(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    seed: &DVector<f64>,
    opts: &TraceOptions,
) -> Result<LeafTrace> {
    m.assert_on_manifold(seed)?;
    let r = action.num_generators();
    let data = rank_and_kernel(alpha, seed, m)?;
    if data.kernel_dim() != r {
        return Err(Error::RankDrift {
            expected: r,
            found: data.kernel_dim(),
        });
    }

    let cap = opts.steps + 1;
    let mut points = vec![seed.clone()];
    let mut kernel_residuals = vec![residuals_at(alpha, action, m, seed)?];
    let mut visited: HashSet<Vec<i32>> = HashSet::new();
    let origin = vec![0i32; r];
    visited.insert(origin.clone());
    let mut queue: VecDeque<(Vec<i32>, Step)> = VecDeque::new();
    queue.push_back((
        origin,
        Step {
            point: seed.clone(),
            frame: data.kernel_basis,
        },
    ));

    'bfs: while let Some((pos, node)) = queue.pop_front() {
        for axis in 0..r {
            for dir in [1i32, -1] {
                if points.len() >= cap {
                    break 'bfs;
                }
                let mut npos = pos.clone();
                npos[axis] += dir;
                if !visited.insert(npos.clone()) {
                    continue;
                }
                let step = step_along_kernel(
                    alpha,
                    m,
                    &node.point,
                    &node.frame,
                    axis,
                    dir as f64 * opts.step_size,
                )?;
                points.push(step.point.clone());
                kernel_residuals.push(residuals_at(alpha, action, m, &step.point)?);
                queue.push_back((npos, step));
            }
        }
    }

    Ok(LeafTrace {
        seed: seed.clone(),
        points,
        kernel_residuals,
    })
}
