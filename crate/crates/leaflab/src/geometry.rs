//! Level-set manifolds in a flat ambient space, the exact two-form
//! `omega = d(alpha)`, its restriction to tangent spaces, and the ambient
//! Poisson bracket.
//!
//! Conventions (fixed once, used everywhere):
//! * `Omega[i][j] = d(alpha_j)/dx_i - d(alpha_i)/dx_j`, so that
//!   `omega(u, v) = u^T Omega v`. For the Liouville form
//!   `alpha = 1/2 sum(y_j dx_j - x_j dy_j)` this makes `Omega` block-diagonal
//!   with 2x2 blocks `[[0,-1],[1,0]]` on each `(x_j, y_j)` pair.
//! * `{F, G} = sum_j (dF/dx_j dG/dy_j - dF/dy_j dG/dx_j)` over the declared
//!   pairing; in particular `{x_1, y_1} = +1`.
//! * Rank thresholds are relative: a singular value counts when it exceeds
//!   `rank_tol * sigma_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{self, Expression};

const DEFAULT_CONSTRAINT_TOL: f64 = 1e-10;
const DEFAULT_RANK_TOL: f64 = 1e-8;
const DEFAULT_PROJECTION_ITERS: usize = 50;
const NORM_FLOOR: f64 = 1e-30;
const SIGN_FIX_EPS: f64 = 1e-9;

const RESERVED_NAMES: &[&str] = &["pi", "sqrt", "sin", "cos"];

/// Flat ambient space: coordinate names plus an optional symplectic pairing.
#[derive(Debug, Clone)]
pub struct AmbientSpace {
    coord_names: Vec<String>,
    pairs: Option<Vec<(usize, usize)>>,
}

impl AmbientSpace {
    pub fn new(coord_names: Vec<String>, pairs: Option<Vec<(usize, usize)>>) -> Result<Self> {
        if coord_names.is_empty() {
            return Err(Error::Scenario {
                field: "ambient.coords".into(),
                message: "at least one coordinate is required".into(),
            });
        }
        for (i, a) in coord_names.iter().enumerate() {
            if RESERVED_NAMES.contains(&a.as_str()) {
                return Err(Error::Scenario {
                    field: "ambient.coords".into(),
                    message: format!("`{a}` is reserved"),
                });
            }
            if coord_names[i + 1..].contains(a) {
                return Err(Error::Scenario {
                    field: "ambient.coords".into(),
                    message: format!("duplicate coordinate `{a}`"),
                });
            }
        }
        if let Some(ps) = &pairs {
            let mut seen = vec![false; coord_names.len()];
            for &(a, b) in ps {
                for idx in [a, b] {
                    if idx >= coord_names.len() {
                        return Err(Error::Scenario {
                            field: "ambient.symplectic_pairs".into(),
                            message: format!("index {idx} out of range"),
                        });
                    }
                    if seen[idx] {
                        return Err(Error::Scenario {
                            field: "ambient.symplectic_pairs".into(),
                            message: format!("index {idx} used twice"),
                        });
                    }
                    seen[idx] = true;
                }
            }
        }
        Ok(AmbientSpace { coord_names, pairs })
    }

    pub fn dim(&self) -> usize {
        self.coord_names.len()
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coord_names
    }

    pub fn symplectic_pairs(&self) -> Option<&[(usize, usize)]> {
        self.pairs.as_deref()
    }

    pub fn parse_expression(&self, text: &str) -> Result<Expression> {
        Expression::parse(text, &self.coord_names)
    }
}

/// `M = { p : G_i(p) = c_i }` with its acceptance tolerances.
#[derive(Debug, Clone)]
pub struct LevelSetManifold {
    dim: usize,
    constraints: Vec<Expression>,
    levels: Vec<f64>,
    constraint_tol: f64,
    rank_tol: f64,
    max_projection_iters: usize,
}

impl LevelSetManifold {
    pub fn new(constraints: Vec<Expression>, levels: Vec<f64>) -> Result<Self> {
        if constraints.is_empty() || constraints.len() != levels.len() {
            return Err(Error::Scenario {
                field: "manifold".into(),
                message: "constraints and levels must be non-empty and of equal length".into(),
            });
        }
        let dim = constraints[0].arity();
        if constraints.iter().any(|c| c.arity() != dim) {
            return Err(Error::Scenario {
                field: "manifold.constraints".into(),
                message: "constraints disagree on ambient dimension".into(),
            });
        }
        if constraints.len() >= dim {
            return Err(Error::Scenario {
                field: "manifold.constraints".into(),
                message: "need fewer constraints than ambient dimensions".into(),
            });
        }
        Ok(LevelSetManifold {
            dim,
            constraints,
            levels,
            constraint_tol: DEFAULT_CONSTRAINT_TOL,
            rank_tol: DEFAULT_RANK_TOL,
            max_projection_iters: DEFAULT_PROJECTION_ITERS,
        })
    }

    pub fn with_tolerances(mut self, constraint_tol: f64, rank_tol: f64) -> Self {
        self.constraint_tol = constraint_tol;
        self.rank_tol = rank_tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codim(&self) -> usize {
        self.constraints.len()
    }

    pub fn tangent_dim(&self) -> usize {
        self.dim - self.codim()
    }

    pub fn constraints(&self) -> &[Expression] {
        &self.constraints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn constraint_tol(&self) -> f64 {
        self.constraint_tol
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// `G_i(p) - c_i` for all i.
    pub fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let mut r = DVector::zeros(self.codim());
        for (i, g) in self.constraints.iter().enumerate() {
            r[i] = g.eval(p.as_slice())? - self.levels[i];
        }
        Ok(r)
    }

    pub fn max_residual(&self, p: &DVector<f64>) -> Result<f64> {
        Ok(self.residuals(p)?.amax())
    }

    pub fn is_on_manifold(&self, p: &DVector<f64>) -> bool {
        matches!(self.max_residual(p), Ok(r) if r < self.constraint_tol)
    }

    pub fn assert_on_manifold(&self, p: &DVector<f64>) -> Result<()> {
        let r = self.max_residual(p)?;
        if r < self.constraint_tol {
            Ok(())
        } else {
            Err(Error::OffManifold {
                residual: r,
                tol: self.constraint_tol,
            })
        }
    }

    pub fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        expr::jacobian(&self.constraints, p.as_slice())
    }
}

/// A one-form given by one coefficient expression per ambient coordinate.
#[derive(Debug, Clone)]
pub struct OneForm {
    coeffs: Vec<Expression>,
}

impl OneForm {
    pub fn new(coeffs: Vec<Expression>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Scenario {
                field: "alpha.coeffs".into(),
                message: "a one-form needs at least one coefficient".into(),
            });
        }
        let dim = coeffs[0].arity();
        if coeffs.len() != dim || coeffs.iter().any(|c| c.arity() != dim) {
            return Err(Error::Scenario {
                field: "alpha.coeffs".into(),
                message: "need exactly one coefficient per ambient coordinate".into(),
            });
        }
        Ok(OneForm { coeffs })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Expression] {
        &self.coeffs
    }

    /// Coefficient vector `alpha_i(p)`.
    pub fn coefficients(&self, p: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.coeffs.len());
        for (i, c) in self.coeffs.iter().enumerate() {
            out[i] = c.eval(p)?;
        }
        Ok(out)
    }

    /// `alpha(p)(v)`.
    pub fn value(&self, p: &[f64], v: &DVector<f64>) -> Result<f64> {
        Ok(self.coefficients(p)?.dot(v))
    }
}

/// The matrix of `omega = d(alpha)` at one point.
#[derive(Debug, Clone)]
pub struct TwoFormMatrix {
    pub point: DVector<f64>,
    pub omega: DMatrix<f64>,
}

impl TwoFormMatrix {
    /// `omega(u, v) = u^T Omega v`.
    pub fn apply(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.omega * v))
    }
}

/// Tangent space, restricted form and kernel data at one accepted point.
#[derive(Debug, Clone)]
pub struct TangentKernelData {
    pub point: DVector<f64>,
    /// Orthonormal columns spanning `T_p M` (dim x tangent_dim).
    pub tangent_basis: DMatrix<f64>,
    /// `B = T^T Omega T`, antisymmetric.
    pub restricted_form: DMatrix<f64>,
    pub rank: usize,
    /// Orthonormal ambient vectors spanning `ker(omega|T_pM)`, sign-fixed.
    pub kernel_basis: DMatrix<f64>,
    /// Singular values of `B`, descending.
    pub singular_values: Vec<f64>,
}

impl TangentKernelData {
    pub fn kernel_dim(&self) -> usize {
        self.kernel_basis.ncols()
    }

    /// `|B c| / max(|v|, eps)` with `c` the tangent coordinates of the
    /// tangential projection of `v`; zero iff that projection is in the
    /// kernel of the restricted form.
    pub fn kernel_residual(&self, v: &DVector<f64>) -> f64 {
        let c = self.tangent_basis.transpose() * v;
        (&self.restricted_form * c).norm() / v.norm().max(NORM_FLOOR)
    }
}

/// Gauss-Newton retraction onto the level set (minimal-norm corrections).
pub fn project_to_manifold(q: &DVector<f64>, m: &LevelSetManifold) -> Result<DVector<f64>> {
    project_with_tol(q, m, m.constraint_tol)
}

/// Retraction with an explicit residual target, for callers that feed the
/// result into finite differences and need endpoints well below the
/// acceptance tolerance.
pub fn project_with_tol(q: &DVector<f64>, m: &LevelSetManifold, tol: f64) -> Result<DVector<f64>> {
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    // One extra step after crossing the tolerance polishes the residual to
    // near machine level (quadratic convergence), which keeps quantities of
    // the form f(G_i(p)) tight across large samples.
    let mut polished = false;
    for iter in 0..m.max_projection_iters {
        let r = m.residuals(&p)?;
        residual = r.amax();
        if residual < tol {
            // Points that arrive within tolerance are fixed points; only a
            // point we actually corrected gets the polish step.
            if iter == 0 || polished || residual == 0.0 {
                return Ok(p);
            }
            polished = true;
        }
        let j = m.jacobian(&p)?;
        let jjt = &j * j.transpose();
        let chol = jjt.cholesky().ok_or(Error::ProjectionFailed {
            iterations: iter,
            residual,
        })?;
        let delta = j.transpose() * chol.solve(&r);
        p -= delta;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::ProjectionFailed {
                iterations: iter,
                residual,
            });
        }
    }
    if m.max_residual(&p)? < tol {
        return Ok(p);
    }
    Err(Error::ProjectionFailed {
        iterations: m.max_projection_iters,
        residual,
    })
}

/// Orthonormal basis of `T_p M` as columns, via the null space of the
/// constraint Jacobian. Deterministic: eigenvectors of the complement
/// projector, sorted and sign-fixed.
pub fn tangent_basis(p: &DVector<f64>, m: &LevelSetManifold) -> Result<DMatrix<f64>> {
    m.assert_on_manifold(p)?;
    let j = m.jacobian(p)?;
    let k = m.codim();
    let n = m.dim();
    let svd = j.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin <= m.rank_tol * smax {
        return Err(Error::NotRegularLevelSet {
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let vt = svd.v_t.expect("requested v_t");
    // Projector onto the orthogonal complement of the row space.
    let mut proj = DMatrix::identity(n, n);
    for r in 0..k {
        let row = vt.row(r).transpose();
        proj -= &row * row.transpose();
    }
    let eig = proj.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(n, n - k);
    for (c, &idx) in order.iter().take(n - k).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(idx));
    }
    sign_fix_columns(&mut basis);
    Ok(basis)
}

fn sign_fix_columns(mat: &mut DMatrix<f64>) {
    for c in 0..mat.ncols() {
        let mut flip = false;
        for r in 0..mat.nrows() {
            let v = mat[(r, c)];
            if v.abs() > SIGN_FIX_EPS {
                flip = v < 0.0;
                break;
            }
        }
        if flip {
            for r in 0..mat.nrows() {
                mat[(r, c)] = -mat[(r, c)];
            }
        }
    }
}

/// `Omega[i][j] = d(alpha_j)/dx_i - d(alpha_i)/dx_j` at `p`, exactly
/// antisymmetric by construction.
pub fn two_form_matrix(alpha: &OneForm, p: &DVector<f64>) -> Result<TwoFormMatrix> {
    let a = expr::jacobian(alpha.coeffs(), p.as_slice())?; // a[i][j] = d alpha_i / dx_j
    let omega = a.transpose() - a;
    Ok(TwoFormMatrix {
        point: p.clone(),
        omega,
    })
}

/// Count of singular values above `rel_tol * sigma_max`; errors on an odd
/// count since an antisymmetric form must have even rank.
pub fn rank_from_spectrum(sigma: &[f64], rel_tol: f64) -> Result<usize> {
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max);
    if smax <= 0.0 {
        return Ok(0);
    }
    let rank = sigma.iter().filter(|&&s| s > rel_tol * smax).count();
    if rank % 2 != 0 {
        return Err(Error::RankAmbiguity {
            rank,
            spectrum: sigma.to_vec(),
        });
    }
    Ok(rank)
}

/// Restrict `d(alpha)` to `T_p M` and split it into rank and kernel.
pub fn rank_and_kernel(
    alpha: &OneForm,
    p: &DVector<f64>,
    m: &LevelSetManifold,
) -> Result<TangentKernelData> {
    let t = tangent_basis(p, m)?;
    let omega = two_form_matrix(alpha, p)?;
    let tdim = t.ncols();
    let mut b = t.transpose() * &omega.omega * &t;
    let bt = b.transpose();
    b = (b - bt) * 0.5;

    let svd = b.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..tdim).collect();
    order.sort_by(|&a, &c| svd.singular_values[c].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rank = rank_from_spectrum(&sigma, m.rank_tol)?;

    let kdim = tdim - rank;
    let mut kernel_t = DMatrix::zeros(tdim, kdim);
    for (c, &idx) in order.iter().rev().take(kdim).enumerate() {
        kernel_t.set_column(c, &vt.row(idx).transpose());
    }
    let mut kernel = &t * kernel_t;
    sign_fix_columns(&mut kernel);

    Ok(TangentKernelData {
        point: p.clone(),
        tangent_basis: t,
        restricted_form: b,
        rank,
        kernel_basis: kernel,
        singular_values: sigma,
    })
}

/// Convenience wrapper: membership residual of `v` in `ker(omega|T_pM)`.
pub fn kernel_residual(
    v: &DVector<f64>,
    alpha: &OneForm,
    p: &DVector<f64>,
    m: &LevelSetManifold,
) -> Result<f64> {
    Ok(rank_and_kernel(alpha, p, m)?.kernel_residual(v))
}

/// Canonical Poisson bracket of two functions under the declared pairing.
pub fn poisson_bracket(
    f: &Expression,
    g: &Expression,
    p: &DVector<f64>,
    ambient: &AmbientSpace,
) -> Result<f64> {
    let pairs = ambient.symplectic_pairs().ok_or(Error::NoPairing)?;
    let gf = f.gradient(p.as_slice())?;
    let gg = g.gradient(p.as_slice())?;
    let mut acc = 0.0;
    for &(x, y) in pairs {
        acc += gf[x] * gg[y] - gf[y] * gg[x];
    }
    Ok(acc)
}

/// Operator-norm distance between the orthogonal projectors of two subspaces
/// spanned by the columns of `a` and `b` (sine of the largest principal angle).
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let diff = &qa * qa.transpose() - &qb * qb.transpose();
    diff.svd(false, false).singular_values.max()
}

/// Gram-Schmidt with column pruning below a relative floor.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let scale = m.norm().max(NORM_FLOOR);
    for c in 0..m.ncols() {
        let mut v = m.column(c).clone_owned();
        for q in &cols {
            let coeff = q.dot(&v);
            v -= q * coeff;
        }
        let n = v.norm();
        if n > 1e-12 * scale {
            cols.push(v / n);
        }
    }
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (i, c) in cols.iter().enumerate() {
        out.set_column(i, c);
    }
    out
}
