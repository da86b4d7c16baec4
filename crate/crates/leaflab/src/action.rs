//! Torus actions by infinitesimal generators, their flows, the Haar-averaged
//! one-form, the moment-like functions `S_i`, and the hypothesis checks.
//!
//! Parameters are normalised so that `s in [0,1)` is one full loop of each
//! circle factor. Rotation-kind generators act in closed form on the declared
//! symplectic pairs with integer weights; numeric-kind generators are
//! integrated with fixed-step RK4 and retracted onto the manifold.

use std::f64::consts::TAU;

use dashmap::DashMap;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{Ast, Expression};
use crate::geometry::{
    project_to_manifold, project_with_tol, tangent_basis, two_form_matrix, AmbientSpace,
    LevelSetManifold, OneForm,
};
use crate::parallel;

const RK4_MAX_STEP: f64 = 1e-3;
const PUSHFORWARD_FD_STEP: f64 = 1e-6;
const CACHE_QUANTUM: f64 = 1e-12;

/// How a generator's flow is computed.
#[derive(Debug, Clone)]
pub enum FlowKind {
    /// Closed-form block rotation: one integer weight per symplectic pair,
    /// pair `j` turning by `2*pi*w_j*t`.
    LinearRotation { weights: Vec<i64> },
    /// Fixed-step RK4 on the generator field, retracted after integration.
    Numeric,
}

#[derive(Debug, Clone)]
pub struct Generator {
    components: Vec<Expression>,
    kind: FlowKind,
}

impl Generator {
    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn kind(&self) -> &FlowKind {
        &self.kind
    }
}

/// A `T^r` action on the ambient space.
#[derive(Debug, Clone)]
pub struct TorusAction {
    dim: usize,
    generators: Vec<Generator>,
    pairs: Vec<(usize, usize)>,
}

impl TorusAction {
    /// Build rotation-kind generators from per-pair integer weights; the
    /// component fields `-2*pi*w*y, 2*pi*w*x` are synthesised on each pair.
    pub fn from_rotation_weights(ambient: &AmbientSpace, weights: &[Vec<i64>]) -> Result<Self> {
        let pairs = ambient.symplectic_pairs().ok_or(Error::NoPairing)?.to_vec();
        if weights.is_empty() {
            return Err(Error::Scenario {
                field: "action.rotation_weights".into(),
                message: "at least one generator is required".into(),
            });
        }
        let names = ambient.coord_names();
        let mut generators = Vec::with_capacity(weights.len());
        for (gi, row) in weights.iter().enumerate() {
            if row.len() != pairs.len() {
                return Err(Error::Scenario {
                    field: format!("action.rotation_weights[{gi}]"),
                    message: format!("expected one weight per symplectic pair ({})", pairs.len()),
                });
            }
            let mut components = vec![Expression::constant(0.0, names); ambient.dim()];
            for (&w, &(x, y)) in row.iter().zip(&pairs) {
                if w == 0 {
                    continue;
                }
                let wf = w as f64;
                components[x] = Expression::from_ast(
                    Ast::Mul(Box::new(Ast::Const(-TAU * wf)), Box::new(Ast::Var(y))),
                    names,
                )?;
                components[y] = Expression::from_ast(
                    Ast::Mul(Box::new(Ast::Const(TAU * wf)), Box::new(Ast::Var(x))),
                    names,
                )?;
            }
            generators.push(Generator {
                components,
                kind: FlowKind::LinearRotation {
                    weights: row.clone(),
                },
            });
        }
        Ok(TorusAction {
            dim: ambient.dim(),
            generators,
            pairs,
        })
    }

    /// Numeric-kind generators from explicit component expressions.
    pub fn from_generator_expressions(
        ambient: &AmbientSpace,
        components: Vec<Vec<Expression>>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Scenario {
                field: "action.generators".into(),
                message: "at least one generator is required".into(),
            });
        }
        for (gi, comps) in components.iter().enumerate() {
            if comps.len() != ambient.dim() || comps.iter().any(|c| c.arity() != ambient.dim()) {
                return Err(Error::Scenario {
                    field: format!("action.generators[{gi}]"),
                    message: "need one component expression per ambient coordinate".into(),
                });
            }
        }
        Ok(TorusAction {
            dim: ambient.dim(),
            generators: components
                .into_iter()
                .map(|components| Generator {
                    components,
                    kind: FlowKind::Numeric,
                })
                .collect(),
            pairs: ambient
                .symplectic_pairs()
                .map(|p| p.to_vec())
                .unwrap_or_default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of circle factors `r`.
    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    fn all_linear(&self) -> bool {
        self.generators
            .iter()
            .all(|g| matches!(g.kind, FlowKind::LinearRotation { .. }))
    }

    /// `Z_i(p)` (0-based generator index).
    pub fn generator_value(&self, i: usize, p: &DVector<f64>) -> Result<DVector<f64>> {
        let gen = &self.generators[i];
        let mut out = DVector::zeros(self.dim);
        for (j, c) in gen.components.iter().enumerate() {
            out[j] = c.eval(p.as_slice())?;
        }
        Ok(out)
    }

    /// Stack `Z_1(p) .. Z_r(p)` as columns.
    pub fn generator_matrix(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.dim, self.num_generators());
        for i in 0..self.num_generators() {
            out.set_column(i, &self.generator_value(i, p)?);
        }
        Ok(out)
    }

    /// Lie bracket `[Z_i, Z_j](p)` via the generator Jacobians.
    pub fn commutator(&self, i: usize, j: usize, p: &DVector<f64>) -> Result<DVector<f64>> {
        let zi = self.generator_value(i, p)?;
        let zj = self.generator_value(j, p)?;
        let ji = crate::expr::jacobian(&self.generators[i].components, p.as_slice())?;
        let jj = crate::expr::jacobian(&self.generators[j].components, p.as_slice())?;
        Ok(jj * zi - ji * zj)
    }

    /// Per-pair rotation angles accumulated over all generators at `s`.
    fn pair_angles(&self, s: &[f64]) -> Vec<f64> {
        let mut angles = vec![0.0; self.pairs.len()];
        for (gen, &si) in self.generators.iter().zip(s) {
            if let FlowKind::LinearRotation { weights } = &gen.kind {
                for (a, &w) in angles.iter_mut().zip(weights) {
                    *a += TAU * w as f64 * si;
                }
            }
        }
        angles
    }

    fn rotate(&self, angles: &[f64], p: &DVector<f64>) -> DVector<f64> {
        let mut out = p.clone();
        for (&theta, &(x, y)) in angles.iter().zip(&self.pairs) {
            let (sn, cs) = theta.sin_cos();
            let (px, py) = (p[x], p[y]);
            out[x] = cs * px - sn * py;
            out[y] = sn * px + cs * py;
        }
        out
    }

    fn rotation_matrix(&self, angles: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::identity(self.dim, self.dim);
        for (&theta, &(x, y)) in angles.iter().zip(&self.pairs) {
            let (sn, cs) = theta.sin_cos();
            out[(x, x)] = cs;
            out[(x, y)] = -sn;
            out[(y, x)] = sn;
            out[(y, y)] = cs;
        }
        out
    }

    fn rk4_flow(
        &self,
        i: usize,
        t: f64,
        p: &DVector<f64>,
        manifold: Option<&LevelSetManifold>,
    ) -> Result<DVector<f64>> {
        let steps = ((t.abs() / RK4_MAX_STEP).ceil() as usize).max(1);
        let h = t / steps as f64;
        let field = |q: &DVector<f64>| self.generator_value(i, q);
        let mut y = p.clone();
        for _ in 0..steps {
            let k1 = field(&y)?;
            let k2 = field(&(&y + &k1 * (h / 2.0)))?;
            let k3 = field(&(&y + &k2 * (h / 2.0)))?;
            let k4 = field(&(&y + &k3 * h))?;
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if y.iter().any(|x| !x.is_finite()) {
                return Err(Error::FlowDiverged("state became non-finite".into()));
            }
        }
        if let Some(m) = manifold {
            y = project_to_manifold(&y, m)
                .map_err(|e| Error::FlowDiverged(format!("retraction failed: {e}")))?;
        }
        Ok(y)
    }

    /// Flow of generator `i` for parameter time `t`.
    pub fn flow(
        &self,
        i: usize,
        t: f64,
        p: &DVector<f64>,
        manifold: Option<&LevelSetManifold>,
    ) -> Result<DVector<f64>> {
        match &self.generators[i].kind {
            FlowKind::LinearRotation { weights } => {
                let angles: Vec<f64> = weights.iter().map(|&w| TAU * w as f64 * t).collect();
                Ok(self.rotate(&angles, p))
            }
            FlowKind::Numeric => self.rk4_flow(i, t, p, manifold),
        }
    }

    fn group_action_impl(
        &self,
        s: &[f64],
        p: &DVector<f64>,
        manifold: Option<&LevelSetManifold>,
    ) -> Result<DVector<f64>> {
        if self.all_linear() {
            return Ok(self.rotate(&self.pair_angles(s), p));
        }
        let mut q = p.clone();
        for (i, &si) in s.iter().enumerate() {
            q = self.flow(i, si, &q, manifold)?;
        }
        Ok(q)
    }

    /// `rho^s(p)`: composition of the generator flows at `s in [0,1)^r`.
    pub fn group_action(
        &self,
        s: &[f64],
        p: &DVector<f64>,
        manifold: Option<&LevelSetManifold>,
    ) -> Result<DVector<f64>> {
        self.group_action_impl(s, p, manifold)
    }

    /// Pushforward `D rho^s(p)`: exact rotation matrix when every generator is
    /// linear, otherwise central finite differences of the unretracted flow.
    pub fn pushforward(&self, s: &[f64], p: &DVector<f64>) -> Result<DMatrix<f64>> {
        if self.all_linear() {
            return Ok(self.rotation_matrix(&self.pair_angles(s)));
        }
        let h = PUSHFORWARD_FD_STEP;
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[j] += h;
            lo[j] -= h;
            let col = (self.group_action_impl(s, &hi, None)?
                - self.group_action_impl(s, &lo, None)?)
                / (2.0 * h);
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

type CacheKey = (usize, Vec<i64>);

fn quantize(p: &DVector<f64>) -> Vec<i64> {
    p.iter()
        .map(|&x| (x / CACHE_QUANTUM).round() as i64)
        .collect()
}

/// The Haar-averaged one-form `alpha_0` and the moment functions
/// `S_i(p) = -alpha_0(p)(Z_i(p))`, evaluated by an `N^r` rectangle rule on the
/// torus (spectrally accurate for smooth periodic integrands).
pub struct AveragedForm<'a> {
    alpha: &'a OneForm,
    action: &'a TorusAction,
    nodes: usize,
    manifold: Option<&'a LevelSetManifold>,
    moment_cache: DashMap<CacheKey, f64>,
}

impl<'a> AveragedForm<'a> {
    pub fn new(
        alpha: &'a OneForm,
        action: &'a TorusAction,
        nodes: usize,
        manifold: Option<&'a LevelSetManifold>,
    ) -> Self {
        AveragedForm {
            alpha,
            action,
            nodes: nodes.max(1),
            manifold,
            moment_cache: DashMap::new(),
        }
    }

    pub fn alpha(&self) -> &OneForm {
        self.alpha
    }

    pub fn action(&self) -> &TorusAction {
        self.action
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    fn grid_size(&self) -> usize {
        self.nodes.pow(self.action.num_generators() as u32)
    }

    fn node_parameter(&self, mut idx: usize) -> Vec<f64> {
        let r = self.action.num_generators();
        let mut s = vec![0.0; r];
        for slot in s.iter_mut().rev() {
            *slot = (idx % self.nodes) as f64 / self.nodes as f64;
            idx /= self.nodes;
        }
        s
    }

    fn node_term(&self, idx: usize, p: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let s = self.node_parameter(idx);
        let q = self.action.group_action(&s, p, self.manifold)?;
        let push = self.action.pushforward(&s, p)?;
        self.alpha.value(q.as_slice(), &(push * v))
    }

    /// `alpha_0(p)(v)`.
    pub fn value(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let total = self.grid_size();
        let terms = parallel::map_range(total, |idx| self.node_term(idx, p, v));
        let mut acc = 0.0;
        for t in terms {
            acc += t?;
        }
        Ok(acc / total as f64)
    }

    /// Sequential twin of [`AveragedForm::value`] for benchmarks.
    pub fn value_seq(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let total = self.grid_size();
        let terms = parallel::map_range_seq(total, |idx| self.node_term(idx, p, v));
        let mut acc = 0.0;
        for t in terms {
            acc += t?;
        }
        Ok(acc / total as f64)
    }

    /// All coefficients `alpha_0(p)(e_j)` in one sweep over the grid.
    pub fn coefficient_row(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let total = self.grid_size();
        let rows = parallel::map_range(total, |idx| -> Result<DVector<f64>> {
            let s = self.node_parameter(idx);
            let q = self.action.group_action(&s, p, self.manifold)?;
            let push = self.action.pushforward(&s, p)?;
            // row = alpha(q)^T * D rho^s
            Ok(push.transpose() * self.alpha.coefficients(q.as_slice())?)
        });
        let mut acc = DVector::zeros(self.action.dim());
        for r in rows {
            acc += r?;
        }
        Ok(acc / total as f64)
    }

    /// `S_i(p) = -alpha_0(p)(Z_i(p))`, memoised per quantised point.
    pub fn moment(&self, i: usize, p: &DVector<f64>) -> Result<f64> {
        let key = (i, quantize(p));
        if let Some(hit) = self.moment_cache.get(&key) {
            return Ok(*hit);
        }
        let v = self.moment_uncached(i, p)?;
        self.moment_cache.insert(key, v);
        Ok(v)
    }

    pub fn moment_uncached(&self, i: usize, p: &DVector<f64>) -> Result<f64> {
        let z = self.action.generator_value(i, p)?;
        Ok(-self.value(p, &z)?)
    }

    /// Sequential twin of [`AveragedForm::moment_uncached`] for benchmarks.
    pub fn moment_seq(&self, i: usize, p: &DVector<f64>) -> Result<f64> {
        let z = self.action.generator_value(i, p)?;
        Ok(-self.value_seq(p, &z)?)
    }
}

/// Aggregate residuals for the torus-action hypotheses over a point sample.
#[derive(Debug, Clone, serde::Serialize)]
pub struct InvarianceReport {
    pub samples: usize,
    /// Max entry of `(rho^s)^* omega - omega` over samples and random `s`.
    pub pullback_max: f64,
    /// Standard deviation of `alpha(Z_i)` over the sample, per generator.
    pub alpha_z_stddev: Vec<f64>,
    pub alpha_z_mean: Vec<f64>,
    /// Min over samples of sigma_min/sigma_max of the generator matrix.
    pub local_freeness_min_ratio: f64,
    pub commutator_max: f64,
    /// Max over samples and generators of `|phi_i^1(p) - p|`.
    pub periodicity_max: f64,
}

impl InvarianceReport {
    /// Violations of the torus-action hypotheses: the action must preserve omega,
    /// be locally free, commute, have 1-periodic flows, and keep
    /// `alpha(Z_i)` constant for every generator beyond the first.
    pub fn violations(&self, invariance_tol: f64, constancy_tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let fails_below = |v: f64, tol: f64| !v.is_finite() || v >= tol;
        if fails_below(self.pullback_max, invariance_tol) {
            out.push(format!(
                "action does not preserve omega: pullback residual {:.3e}",
                self.pullback_max
            ));
        }
        if !self.local_freeness_min_ratio.is_finite()
            || self.local_freeness_min_ratio <= invariance_tol
        {
            out.push(format!(
                "action is not locally free: generator sigma ratio {:.3e}",
                self.local_freeness_min_ratio
            ));
        }
        if fails_below(self.commutator_max, invariance_tol) {
            out.push(format!(
                "generators do not commute: {:.3e}",
                self.commutator_max
            ));
        }
        if fails_below(self.periodicity_max, invariance_tol) {
            out.push(format!(
                "flows are not 1-periodic: {:.3e}",
                self.periodicity_max
            ));
        }
        for (i, sd) in self.alpha_z_stddev.iter().enumerate().skip(1) {
            if fails_below(*sd, constancy_tol) {
                out.push(format!(
                    "alpha(Z_{}) is not constant: stddev {:.3e}",
                    i + 1,
                    sd
                ));
            }
        }
        out
    }
}

fn stddev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct InvarianceRow {
    pullback: f64,
    alpha_z: Vec<f64>,
    freeness: f64,
    commutator: f64,
    periodicity: f64,
}

fn invariance_row(
    alpha: &OneForm,
    action: &TorusAction,
    p: &DVector<f64>,
    s: &[f64],
) -> Result<InvarianceRow> {
    let r = action.num_generators();

    let q = action.group_action(s, p, None)?;
    let push = action.pushforward(s, p)?;
    let omega_p = two_form_matrix(alpha, p)?.omega;
    let omega_q = two_form_matrix(alpha, &q)?.omega;
    let pullback = (push.transpose() * omega_q * &push - omega_p).amax();

    let gens = action.generator_matrix(p)?;
    let mut alpha_z = Vec::with_capacity(r);
    for i in 0..r {
        alpha_z.push(alpha.value(p.as_slice(), &gens.column(i).clone_owned())?);
    }

    let sv = gens.svd(false, false).singular_values;
    let smax = sv.max();
    let freeness = if smax > 0.0 { sv.min() / smax } else { 0.0 };

    let mut commutator = 0.0f64;
    for i in 0..r {
        for j in i + 1..r {
            commutator = commutator.max(action.commutator(i, j, p)?.norm());
        }
    }

    let mut periodicity = 0.0f64;
    for i in 0..r {
        periodicity = periodicity.max((action.flow(i, 1.0, p, None)? - p).norm());
    }

    Ok(InvarianceRow {
        pullback,
        alpha_z,
        freeness,
        commutator,
        periodicity,
    })
}

/// Evaluate the hypothesis residuals over a batch of accepted points. One
/// random group element per point, drawn deterministically from `seed`.
pub fn check_invariance(
    alpha: &OneForm,
    action: &TorusAction,
    m: &LevelSetManifold,
    points: &[DVector<f64>],
    seed: u64,
) -> Result<InvarianceReport> {
    use rand::{Rng, SeedableRng};
    let r = action.num_generators();
    let rows = parallel::map_range(points.len(), |idx| -> Result<InvarianceRow> {
        let p = &points[idx];
        m.assert_on_manifold(p)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5000 + idx as u64);
        let s: Vec<f64> = (0..r).map(|_| rng.gen::<f64>()).collect();
        invariance_row(alpha, action, p, &s)
    });

    let mut pullback_max = 0.0f64;
    let mut freeness_min = f64::INFINITY;
    let mut commutator_max = 0.0f64;
    let mut periodicity_max = 0.0f64;
    let mut alpha_z: Vec<Vec<f64>> = vec![Vec::with_capacity(points.len()); r];
    for row in rows {
        let row = row?;
        pullback_max = pullback_max.max(row.pullback);
        freeness_min = freeness_min.min(row.freeness);
        commutator_max = commutator_max.max(row.commutator);
        periodicity_max = periodicity_max.max(row.periodicity);
        for (i, v) in row.alpha_z.into_iter().enumerate() {
            alpha_z[i].push(v);
        }
    }
    Ok(InvarianceReport {
        samples: points.len(),
        pullback_max,
        alpha_z_stddev: alpha_z.iter().map(|v| stddev(v)).collect(),
        alpha_z_mean: alpha_z.iter().map(|v| mean(v)).collect(),
        local_freeness_min_ratio: freeness_min,
        commutator_max,
        periodicity_max,
    })
}

/// Residual of `dS_i = i_{Z_i} omega` at an accepted point: max over tangent
/// basis directions of the gap between a central finite difference of `S_i`
/// along the retracted curve and `omega(Z_i, e_k)`.
pub fn check_ds_identity(
    avg: &AveragedForm<'_>,
    m: &LevelSetManifold,
    i: usize,
    p: &DVector<f64>,
    fd_step: f64,
) -> Result<f64> {
    m.assert_on_manifold(p)?;
    let t = tangent_basis(p, m)?;
    let omega = two_form_matrix(avg.alpha(), p)?;
    let zi = avg.action().generator_value(i, p)?;
    // Endpoint placement error divides by 2h below, so retract far beyond the
    // acceptance tolerance.
    let fd_tol = m.constraint_tol().min(1e-13);
    let mut worst = 0.0f64;
    for k in 0..t.ncols() {
        let e = t.column(k).clone_owned();
        let hi = project_with_tol(&(p + &e * fd_step), m, fd_tol)?;
        let lo = project_with_tol(&(p - &e * fd_step), m, fd_tol)?;
        let fd = (avg.moment(i, &hi)? - avg.moment(i, &lo)?) / (2.0 * fd_step);
        let rhs = omega.apply(&zi, &e);
        worst = worst.max((fd - rhs).abs());
    }
    Ok(worst)
}

/// Finite-difference exterior derivative of the averaged form:
/// `D[i][j] ~ d(alpha_0)_j / dx_i`, returned as `D - D^T`.
pub fn d_alpha0_fd(avg: &AveragedForm<'_>, p: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = p.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut hi = p.clone();
        let mut lo = p.clone();
        hi[i] += h;
        lo[i] -= h;
        let row = (avg.coefficient_row(&hi)? - avg.coefficient_row(&lo)?) / (2.0 * h);
        for j in 0..n {
            d[(i, j)] = row[j];
        }
    }
    Ok(&d - d.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::geometry::rank_and_kernel;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn coords6() -> Vec<String> {
        ["x1", "y1", "x2", "y2", "x3", "y3"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn ambient6() -> AmbientSpace {
        AmbientSpace::new(coords6(), Some(vec![(0, 1), (2, 3), (4, 5)])).unwrap()
    }

    fn example1_manifold() -> LevelSetManifold {
        let coords = coords6();
        LevelSetManifold::new(
            vec![
                Expression::parse("(x1^2+y1^2)^2 + x2^2 + y2^2", &coords).unwrap(),
                Expression::parse("x2^2 + y2^2 + x3^2 + y3^2", &coords).unwrap(),
            ],
            vec![4.0, 1.0],
        )
        .unwrap()
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

    fn example1_action() -> TorusAction {
        TorusAction::from_rotation_weights(&ambient6(), &[vec![1, 1, 1], vec![0, 1, 1]]).unwrap()
    }

    fn example2_manifold() -> LevelSetManifold {
        let coords = coords6();
        LevelSetManifold::new(
            vec![
                Expression::parse("x1^2 + y1^2", &coords).unwrap(),
                Expression::parse("x1^2 + y1^2 + x2^2 + y2^2 + x3^2 + y3^2", &coords).unwrap(),
            ],
            vec![1.0, 3.0],
        )
        .unwrap()
    }

    fn example2_action() -> TorusAction {
        TorusAction::from_rotation_weights(&ambient6(), &[vec![1, 0, 0], vec![1, 1, 1]]).unwrap()
    }

    fn p_max() -> DVector<f64> {
        DVector::from_vec(vec![2f64.sqrt(), 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    fn sample_accepted(m: &LevelSetManifold, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < count {
            let q = DVector::from_fn(6, |_, _| rng.gen_range(-3.0..3.0));
            if let Ok(p) = project_to_manifold(&q, m) {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn generator_values_match_rotation_fields() {
        let a = example1_action();
        let p = p_max();
        let z1 = a.generator_value(0, &p).unwrap();
        let z2 = a.generator_value(1, &p).unwrap();
        let expect1 = DVector::from_vec(vec![0.0, TAU * 2f64.sqrt(), 0.0, 0.0, 0.0, TAU]);
        let expect2 = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, TAU]);
        assert_relative_eq!(z1, expect1, epsilon = 1e-12);
        assert_relative_eq!(z2, expect2, epsilon = 1e-12);
        assert_eq!(
            a.generator_value(0, &DVector::zeros(6)).unwrap().norm(),
            0.0
        );
    }

    #[test]
    fn quarter_turn_of_second_circle() {
        let a = example1_action();
        let p = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let q = a.flow(1, 0.25, &p, None).unwrap();
        let expect = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_relative_eq!(q, expect, epsilon = 1e-12);
        assert_eq!(a.flow(1, 0.0, &p, None).unwrap(), p);
        assert!((a.flow(0, 1.0, &p, None).unwrap() - &p).norm() < 1e-8);
    }

    #[test]
    fn group_action_half_half() {
        let a = example1_action();
        let p = p_max();
        let q = a.group_action(&[0.5, 0.5], &p, None).unwrap();
        let expect = DVector::from_vec(vec![-(2f64.sqrt()), 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(q, expect, epsilon = 1e-12);
        assert_eq!(a.group_action(&[0.0, 0.0], &p, None).unwrap(), p);
    }

    #[test]
    fn group_law_holds() {
        let a = example1_action();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for p in sample_accepted(&example1_manifold(), 5, 17) {
            let s: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
            let t: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
            let one = a
                .group_action(&s, &a.group_action(&t, &p, None).unwrap(), None)
                .unwrap();
            let st: Vec<f64> = s.iter().zip(&t).map(|(a, b)| (a + b) % 1.0).collect();
            let two = a.group_action(&st, &p, None).unwrap();
            assert!((one - two).norm() < 1e-8);
        }
    }

    #[test]
    fn haar_average_reduces_to_alpha_under_invariance() {
        // Example 1 preserves the Liouville form, so averaging changes nothing.
        let alpha = liouville6();
        let action = example1_action();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for nodes in [1, 4, 32] {
            let avg = AveragedForm::new(&alpha, &action, nodes, None);
            for _ in 0..5 {
                let p = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
                let v = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
                let direct = alpha.value(p.as_slice(), &v).unwrap();
                assert!((avg.value(&p, &v).unwrap() - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn haar_average_of_constant_form_under_full_rotation_vanishes() {
        // alpha = dx on R^2 averaged over the full rotation: the covector turns
        // through a whole circle, so the mean is zero for any N >= 2.
        let coords = vec!["x".to_string(), "y".to_string()];
        let ambient = AmbientSpace::new(coords.clone(), Some(vec![(0, 1)])).unwrap();
        let alpha = OneForm::new(vec![
            Expression::parse("1", &coords).unwrap(),
            Expression::parse("0", &coords).unwrap(),
        ])
        .unwrap();
        let action = TorusAction::from_rotation_weights(&ambient, &[vec![1]]).unwrap();
        let p = DVector::from_vec(vec![0.3, -0.8]);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let avg = AveragedForm::new(&alpha, &action, 8, None);
        assert!(avg.value(&p, &v).unwrap().abs() < 1e-14);
        // N = 1 degenerates to the single-sample value.
        let avg1 = AveragedForm::new(&alpha, &action, 1, None);
        assert_eq!(
            avg1.value(&p, &v).unwrap(),
            alpha.value(p.as_slice(), &v).unwrap()
        );
    }

    #[test]
    fn moment_values_example1() {
        let alpha = liouville6();
        let action = example1_action();
        let avg = AveragedForm::new(&alpha, &action, 32, None);
        let s1 = avg.moment(0, &p_max()).unwrap();
        assert!((s1 - 3.0 * std::f64::consts::PI).abs() < 1e-12);
        for p in sample_accepted(&example1_manifold(), 5, 23) {
            let s2 = avg.moment(1, &p).unwrap();
            assert!((s2 - std::f64::consts::PI).abs() < 1e-10);
        }
    }

    #[test]
    fn moment_values_example2() {
        let alpha = liouville6();
        let action = example2_action();
        let m = example2_manifold();
        let avg = AveragedForm::new(&alpha, &action, 16, None);
        for p in sample_accepted(&m, 5, 29) {
            let s1 = avg.moment(0, &p).unwrap();
            assert!((s1 - std::f64::consts::PI).abs() < 1e-10, "S1 = {s1}");
        }
    }

    #[test]
    fn moment_constant_along_orbits() {
        let alpha = liouville6();
        let action = example1_action();
        let avg = AveragedForm::new(&alpha, &action, 16, None);
        let m = example1_manifold();
        let p = sample_accepted(&m, 1, 31).pop().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for i in 0..2 {
            let values: Vec<f64> = (0..100)
                .map(|_| {
                    let s = [rng.gen::<f64>(), rng.gen::<f64>()];
                    let q = action.group_action(&s, &p, None).unwrap();
                    avg.moment_uncached(i, &q).unwrap()
                })
                .collect();
            assert!(
                stddev(&values) < 1e-8,
                "S_{} stddev {}",
                i + 1,
                stddev(&values)
            );
        }
    }

    #[test]
    fn quadrature_is_node_count_consistent() {
        let alpha = liouville6();
        let action = example1_action();
        let m = example1_manifold();
        let a16 = AveragedForm::new(&alpha, &action, 16, None);
        let a32 = AveragedForm::new(&alpha, &action, 32, None);
        for p in sample_accepted(&m, 5, 41) {
            for i in 0..2 {
                let d = (a16.moment(i, &p).unwrap() - a32.moment(i, &p).unwrap()).abs();
                assert!(d < 1e-10);
            }
        }
    }

    #[test]
    fn averaged_form_is_invariant() {
        let alpha = liouville6();
        let action = example1_action();
        let avg = AveragedForm::new(&alpha, &action, 16, None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let p = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
            let v = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let s = [rng.gen::<f64>(), rng.gen::<f64>()];
            let q = action.group_action(&s, &p, None).unwrap();
            let push = action.pushforward(&s, &p).unwrap();
            let lhs = avg.value(&q, &(push * &v)).unwrap();
            let rhs = avg.value(&p, &v).unwrap();
            assert!((lhs - rhs).abs() < 1e-8);
        }
    }

    #[test]
    fn d_alpha0_matches_two_form() {
        let alpha = liouville6();
        let action = example1_action();
        let avg = AveragedForm::new(&alpha, &action, 8, None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        for _ in 0..3 {
            let p = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
            let fd = d_alpha0_fd(&avg, &p, 1e-5).unwrap();
            let omega = two_form_matrix(&alpha, &p).unwrap().omega;
            assert!((fd - omega).amax() < 1e-5);
        }
    }

    #[test]
    fn invariance_report_example1() {
        let alpha = liouville6();
        let action = example1_action();
        let m = example1_manifold();
        let points = sample_accepted(&m, 50, 53);
        let rep = check_invariance(&alpha, &action, &m, &points, 99).unwrap();
        assert!(rep.pullback_max < 1e-8, "pullback {}", rep.pullback_max);
        assert!(rep.alpha_z_stddev[1] < 1e-10);
        assert!(
            rep.alpha_z_stddev[0] > 0.1,
            "alpha(Z_1) stddev {}",
            rep.alpha_z_stddev[0]
        );
        assert!(rep.commutator_max < 1e-8);
        assert!(rep.periodicity_max < 1e-8);
        assert!(rep.local_freeness_min_ratio > 1e-8);
        assert!(rep.violations(1e-8, 1e-8).is_empty());
    }

    #[test]
    fn invariance_report_example2() {
        let alpha = liouville6();
        let action = example2_action();
        let m = example2_manifold();
        let points = sample_accepted(&m, 50, 59);
        let rep = check_invariance(&alpha, &action, &m, &points, 99).unwrap();
        assert!(rep.alpha_z_stddev[0] < 1e-10);
        assert!(rep.alpha_z_stddev[1] < 1e-10);
        assert!(rep.violations(1e-8, 1e-8).is_empty());
    }

    #[test]
    fn zero_generator_is_rejected_by_local_freeness() {
        let coords = vec!["x".to_string(), "y".to_string()];
        let ambient = AmbientSpace::new(coords.clone(), Some(vec![(0, 1)])).unwrap();
        let zero = Expression::parse("0", &coords).unwrap();
        let action =
            TorusAction::from_generator_expressions(&ambient, vec![vec![zero.clone(), zero]])
                .unwrap();
        let m = LevelSetManifold::new(
            vec![Expression::parse("x^2 + y^2", &coords).unwrap()],
            vec![1.0],
        )
        .unwrap();
        let alpha = OneForm::new(vec![
            Expression::parse("y/2", &coords).unwrap(),
            Expression::parse("-x/2", &coords).unwrap(),
        ])
        .unwrap();
        let p = DVector::from_vec(vec![1.0, 0.0]);
        let rep = check_invariance(&alpha, &action, &m, &[p], 1).unwrap();
        assert_eq!(rep.local_freeness_min_ratio, 0.0);
        assert!(!rep.violations(1e-8, 1e-8).is_empty());
    }

    #[test]
    fn ds_identity_example1() {
        let alpha = liouville6();
        let action = example1_action();
        let m = example1_manifold();
        let avg = AveragedForm::new(&alpha, &action, 16, None);
        for p in sample_accepted(&m, 3, 61) {
            let r1 = check_ds_identity(&avg, &m, 0, &p, 1e-5).unwrap();
            assert!(r1 < 1e-5, "i=1 residual {r1}");
            // For i=2 both sides vanish individually.
            let t = tangent_basis(&p, &m).unwrap();
            let omega = two_form_matrix(&alpha, &p).unwrap();
            let z2 = action.generator_value(1, &p).unwrap();
            for k in 0..t.ncols() {
                let e = t.column(k).clone_owned();
                assert!(omega.apply(&z2, &e).abs() < 1e-8);
            }
            let r2 = check_ds_identity(&avg, &m, 1, &p, 1e-5).unwrap();
            assert!(r2 < 1e-8, "i=2 residual {r2}");
        }
    }

    #[test]
    fn ds_identity_trivial_for_exact_invariant_form() {
        // alpha = dF with F = x^2 + y^2 rotation-invariant: omega = 0 and the
        // moment vanishes identically, so both sides of the identity are zero.
        let coords = vec!["x".to_string(), "y".to_string()];
        let ambient = AmbientSpace::new(coords.clone(), Some(vec![(0, 1)])).unwrap();
        let alpha = OneForm::new(vec![
            Expression::parse("2*x", &coords).unwrap(),
            Expression::parse("2*y", &coords).unwrap(),
        ])
        .unwrap();
        let action = TorusAction::from_rotation_weights(&ambient, &[vec![1]]).unwrap();
        let m = LevelSetManifold::new(
            vec![Expression::parse("x^2 + y^2", &coords).unwrap()],
            vec![1.0],
        )
        .unwrap();
        let avg = AveragedForm::new(&alpha, &action, 8, None);
        let p = DVector::from_vec(vec![1.0, 0.0]);
        assert!(avg.moment(0, &p).unwrap().abs() < 1e-12);
        let r = check_ds_identity(&avg, &m, 0, &p, 1e-5).unwrap();
        assert!(r < 1e-10);
    }

    #[test]
    fn numeric_flow_matches_closed_form() {
        let ambient = ambient6();
        let coords = coords6();
        let comps1: Vec<Expression> = [
            "-2*pi*y1", "2*pi*x1", "-2*pi*y2", "2*pi*x2", "-2*pi*y3", "2*pi*x3",
        ]
        .iter()
        .map(|s| Expression::parse(s, &coords).unwrap())
        .collect();
        let comps2: Vec<Expression> = ["0", "0", "-2*pi*y2", "2*pi*x2", "-2*pi*y3", "2*pi*x3"]
            .iter()
            .map(|s| Expression::parse(s, &coords).unwrap())
            .collect();
        let numeric =
            TorusAction::from_generator_expressions(&ambient, vec![comps1, comps2]).unwrap();
        let linear = example1_action();
        let p = p_max();

        let a = numeric.flow(1, 0.25, &p, None).unwrap();
        let b = linear.flow(1, 0.25, &p, None).unwrap();
        assert!((a - b).norm() < 1e-9);

        let s = [0.3, 0.65];
        let qa = numeric.group_action(&s, &p, None).unwrap();
        let qb = linear.group_action(&s, &p, None).unwrap();
        assert!((qa - qb).norm() < 1e-9);

        let pa = numeric.pushforward(&s, &p).unwrap();
        let pb = linear.pushforward(&s, &p).unwrap();
        assert!((pa - pb).amax() < 1e-5);

        let alpha = liouville6();
        let avg_n = AveragedForm::new(&alpha, &numeric, 4, None);
        let avg_l = AveragedForm::new(&alpha, &linear, 4, None);
        let dm = (avg_n.moment(0, &p).unwrap() - avg_l.moment(0, &p).unwrap()).abs();
        assert!(dm < 1e-6, "numeric vs linear moment gap {dm}");
    }

    #[test]
    fn diverging_numeric_flow_is_reported() {
        let coords = vec!["x".to_string(), "y".to_string()];
        let ambient = AmbientSpace::new(coords.clone(), Some(vec![(0, 1)])).unwrap();
        // Super-linear growth blows up in finite time.
        let comps = vec![
            Expression::parse("x^3", &coords).unwrap(),
            Expression::parse("y^3", &coords).unwrap(),
        ];
        let action = TorusAction::from_generator_expressions(&ambient, vec![comps]).unwrap();
        let p = DVector::from_vec(vec![3.0, 3.0]);
        assert!(matches!(
            action.flow(0, 1.0, &p, None).unwrap_err(),
            Error::FlowDiverged(_)
        ));
    }

    #[test]
    fn kernel_membership_of_z2_everywhere() {
        let alpha = liouville6();
        let action = example1_action();
        let m = example1_manifold();
        for p in sample_accepted(&m, 10, 67) {
            let data = rank_and_kernel(&alpha, &p, &m).unwrap();
            let z2 = action.generator_value(1, &p).unwrap();
            assert!(data.kernel_residual(&z2) < 1e-8);
        }
    }
}
