//! Convex QP over linear inequalities, with multiplier extraction.
//!
//! Problems have the form
//!
//! ```text
//! minimize    vec(x)ᵀ Q vec(x) − 2cᵀ vec(x) + k0
//! subject to  A z ≤ b,       z = [vec(x); s]
//! ```
//!
//! where `s` are auxiliary variables that do not appear in the objective.
//! L1 point constraints `‖y − x_j‖₁ ≤ ρ` are brought into this form by
//! [`reformulate_l1`] and solved by [`solve_qp`], a primal-dual
//! interior-point method with Mehrotra predictor-corrector steps.

use nalgebra::{DMatrix, DVector};

use crate::constraints::PointConstraint;
use crate::energy::QuadraticObjective;
use crate::{Error, Result};

/// What a row of a [`LinearConstraintSystem`] stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRole {
    /// The row whose multiplier is reported as constraint `id`'s dual value.
    /// For L1 constraints this is the radius row `Σ s_k ≤ ρ`.
    Primary(usize),
    /// One of the `±(y − x_j) ≤ s` rows of constraint `id`.
    Split(usize),
    Auxiliary,
}

impl RowRole {
    pub fn constraint(&self) -> Option<usize> {
        match *self {
            RowRole::Primary(i) | RowRole::Split(i) => Some(i),
            RowRole::Auxiliary => None,
        }
    }
}

/// `A z ≤ b` over `z = [vec(x); aux]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraintSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub roles: Vec<RowRole>,
    /// Length of `vec(x)`; columns beyond it are auxiliary.
    pub num_primary_vars: usize,
    /// Number of high-level constraints the rows came from.
    pub num_constraints: usize,
    /// Constraints whose radius was raised to the minimum radius.
    pub clamped: Vec<usize>,
    /// Pairs of constraints with identical radius rows; their multipliers are
    /// not unique.
    pub duplicates: Vec<(usize, usize)>,
}

impl LinearConstraintSystem {
    /// A system with no rows over `num_vars` primary variables.
    pub fn empty(num_vars: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, num_vars),
            b: DVector::zeros(0),
            roles: Vec::new(),
            num_primary_vars: num_vars,
            num_constraints: 0,
            clamped: Vec::new(),
            duplicates: Vec::new(),
        }
    }

    /// Plain rows over the primary variables, each row its own constraint.
    pub fn from_rows(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let m = a.nrows();
        Self {
            num_primary_vars: a.ncols(),
            a,
            b,
            roles: (0..m).map(RowRole::Primary).collect(),
            num_constraints: m,
            clamped: Vec::new(),
            duplicates: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_aux(&self) -> usize {
        self.num_vars() - self.num_primary_vars
    }
}

/// Epigraph form of L1 point constraints.
///
/// Constraint `i` on node `j` gets one auxiliary `s_k` per constrained
/// coordinate `k` and the rows
///
/// ```text
///  (y_k − x_{j,k}) ≤ s_k,   −(y_k − x_{j,k}) ≤ s_k,   Σ_k s_k ≤ ρ
/// ```
///
/// with `ρ = max(r + u, eps_r)`.
pub fn reformulate_l1(
    constraints: &[PointConstraint],
    nodes: usize,
    dim: usize,
    eps_r: f64,
) -> Result<LinearConstraintSystem> {
    let nx = nodes * dim;
    let mut rows: Vec<(Vec<(usize, f64)>, f64, RowRole)> = Vec::new();
    let mut aux = 0usize;
    let mut clamped = Vec::new();

    for (id, c) in constraints.iter().enumerate() {
        if c.node >= nodes {
            return Err(Error::NodeIndexOutOfRange { index: c.node, nodes });
        }
        if c.anchor.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: c.anchor.len() });
        }
        let mut rho = c.effective_radius();
        if !(rho >= eps_r) {
            log::debug!("constraint {id}: radius {rho} clamped to {eps_r}");
            rho = eps_r;
            clamped.push(id);
        }
        let mut radius_row = Vec::new();
        for k in c.axes_iter(dim) {
            let col_x = k * nodes + c.node;
            let col_s = nx + aux;
            aux += 1;
            // −x − s ≤ −y
            rows.push((vec![(col_x, -1.0), (col_s, -1.0)], -c.anchor[k], RowRole::Split(id)));
            // x − s ≤ y
            rows.push((vec![(col_x, 1.0), (col_s, -1.0)], c.anchor[k], RowRole::Split(id)));
            radius_row.push((col_s, 1.0));
        }
        rows.push((radius_row, rho, RowRole::Primary(id)));
    }

    let mut a = DMatrix::zeros(rows.len(), nx + aux);
    let mut b = DVector::zeros(rows.len());
    let mut roles = Vec::with_capacity(rows.len());
    for (r, (entries, rhs, role)) in rows.into_iter().enumerate() {
        for (col, v) in entries {
            a[(r, col)] = v;
        }
        b[r] = rhs;
        roles.push(role);
    }

    let mut duplicates = Vec::new();
    for i in 0..constraints.len() {
        for j in i + 1..constraints.len() {
            let (ci, cj) = (&constraints[i], &constraints[j]);
            if ci.node == cj.node
                && ci.anchor == cj.anchor
                && ci.axes == cj.axes
                && ci.effective_radius().max(eps_r) == cj.effective_radius().max(eps_r)
            {
                duplicates.push((i, j));
            }
        }
    }
    if !duplicates.is_empty() {
        log::info!("identical constraints {duplicates:?}; their multipliers are not unique");
    }

    Ok(LinearConstraintSystem {
        a,
        b,
        roles,
        num_primary_vars: nx,
        num_constraints: constraints.len(),
        clamped,
        duplicates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    /// Stationarity residual, `‖∇_z L‖∞`.
    pub kkt: f64,
    /// Primal infeasibility, `max(Az − b)₊`.
    pub feas: f64,
    /// Complementary slackness, `max_k |λ_k (Az − b)_k|`.
    pub cs: f64,
    /// Duality gap relative to `max(1, |p*|)`.
    pub gap: f64,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { kkt: 1e-8, feas: 1e-8, cs: 1e-8, gap: 1e-6, max_iter: 200 }
    }
}

impl SolverTolerances {
    /// The same tolerances with every residual threshold set to `tol`.
    pub fn uniform(tol: f64) -> Self {
        Self { kkt: tol, feas: tol, cs: tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Optimal nodes, `N × d`.
    pub x_star: DMatrix<f64>,
    /// Auxiliary variables of the reformulation.
    pub aux: DVector<f64>,
    pub p_star: f64,
    /// One multiplier per high-level constraint.
    pub lambda: Vec<f64>,
    /// Multiplier of every row of the constraint system.
    pub row_multipliers: DVector<f64>,
    pub d_star: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// For infeasible problems: `y ≥ 0` with `Aᵀy = 0` and `bᵀy < 0`,
    /// normalized to `Σ y = 1`.
    pub certificate: Option<DVector<f64>>,
}

impl Solution {
    pub fn is_solved(&self) -> bool {
        self.status == SolveStatus::Solved
    }

    /// Constraints whose radius row carries weight in the infeasibility
    /// certificate.
    pub fn conflicting_constraints(&self, sys: &LinearConstraintSystem) -> Vec<usize> {
        let Some(cert) = &self.certificate else { return Vec::new() };
        let max = cert.amax();
        let mut ids: Vec<usize> = sys
            .roles
            .iter()
            .zip(cert.iter())
            .filter(|(_, y)| **y > 1e-3 * max)
            .filter_map(|(role, _)| role.constraint())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Residuals of a candidate solution, computed from the problem data alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    pub dual_feasibility: f64,
    pub slackness: f64,
    pub gap: f64,
}

impl KktReport {
    pub fn within(&self, tol: &SolverTolerances, p_star: f64) -> bool {
        self.stationarity <= tol.kkt
            && self.feasibility <= tol.feas
            && self.dual_feasibility <= tol.feas
            && self.slackness <= tol.cs
            && self.gap <= tol.gap * p_star.abs().max(1.0)
    }
}

fn stack(x: &DMatrix<f64>, aux: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + aux.len());
    z.rows_mut(0, x.len()).copy_from_slice(x.as_slice());
    z.rows_mut(x.len(), aux.len()).copy_from(aux);
    z
}

fn unstack(z: &DVector<f64>, nodes: usize, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let nx = nodes * dim;
    let x = DMatrix::from_column_slice(nodes, dim, &z.as_slice()[..nx]);
    let aux = z.rows(nx, z.len() - nx).into_owned();
    (x, aux)
}

/// Lagrange dual function at the multipliers `y`, with the auxiliary
/// variables held at `aux`:
/// `min_x  f(x) + yᵀ(A_x x + A_s aux − b)`.
fn dual_value(obj: &QuadraticObjective, sys: &LinearConstraintSystem, y: &DVector<f64>, aux: &DVector<f64>) -> Option<f64> {
    let n = obj.nodes();
    let d = obj.dim();
    let aty = sys.a.tr_mul(y);
    // ∇_x = 2(Bx − c) + A_xᵀy = 0  ⇒  B x_k = c_k − ½ (A_xᵀy)_k
    let shift = DMatrix::from_column_slice(n, d, &aty.as_slice()[..n * d]);
    let rhs = obj.linear() - shift * 0.5;
    let chol = crate::energy::factor_block(obj.block())?;
    let x_min = chol.solve(&rhs);
    let z = stack(&x_min, aux);
    Some(obj.value(&x_min) + y.dot(&(&sys.a * z - &sys.b)))
}

/// Certifies `sol` against `obj` and `sys` without using solver internals.
pub fn kkt_report(obj: &QuadraticObjective, sys: &LinearConstraintSystem, sol: &Solution) -> KktReport {
    let z = stack(&sol.x_star, &sol.aux);
    let y = &sol.row_multipliers;
    let nx = sys.num_primary_vars;

    let mut grad = sys.a.tr_mul(y);
    let g = obj.gradient(&sol.x_star);
    for (i, v) in g.as_slice().iter().enumerate() {
        grad[i] += v;
    }
    let stationarity = grad.amax();

    let resid = &sys.a * &z - &sys.b;
    let feasibility = resid.iter().fold(0.0f64, |acc, r| acc.max(*r));
    let dual_feasibility = y.iter().fold(0.0f64, |acc, v| acc.max(-v));
    let slackness = y.iter().zip(resid.iter()).fold(0.0f64, |acc, (l, r)| acc.max((l * r).abs()));

    let p = obj.value(&sol.x_star);
    let gap = match dual_value(obj, sys, y, &sol.aux) {
        Some(d) => (p - d).abs(),
        None => f64::INFINITY,
    };
    debug_assert_eq!(nx, obj.num_vars());
    KktReport { stationarity, feasibility, dual_feasibility, slackness, gap }
}

/// Sparse copy of the rows of `A`.
struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl SparseRows {
    fn new(a: &DMatrix<f64>) -> Self {
        let rows = (0..a.nrows())
            .map(|r| {
                (0..a.ncols())
                    .filter_map(|c| (a[(r, c)] != 0.0).then(|| (c, a[(r, c)])))
                    .collect()
            })
            .collect();
        Self { rows, ncols: a.ncols() }
    }

    fn mul(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|row| row.iter().map(|(c, v)| v * z[*c]).sum()))
    }

    fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (row, yr) in self.rows.iter().zip(y.iter()) {
            for (c, v) in row {
                out[*c] += v * yr;
            }
        }
        out
    }

    /// `M += Aᵀ diag(w) A`
    fn add_weighted_gram(&self, w: &DVector<f64>, m: &mut DMatrix<f64>) {
        for (row, wr) in self.rows.iter().zip(w.iter()) {
            for (ci, vi) in row {
                for (cj, vj) in row {
                    m[(*ci, *cj)] += wr * vi * vj;
                }
            }
        }
    }
}

struct Newton {
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    matrix: DMatrix<f64>,
}

impl Newton {
    fn new(m: DMatrix<f64>) -> Option<Self> {
        let scale = m.diagonal().amax().max(1.0);
        let mut reg = 0.0;
        for _ in 0..8 {
            let mut trial = m.clone();
            for i in 0..trial.nrows() {
                trial[(i, i)] += reg;
            }
            if let Some(factor) = trial.cholesky() {
                if reg > 0.0 {
                    log::debug!("newton system regularized by {reg:e}");
                }
                return Some(Self { factor, matrix: m });
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        None
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.factor.solve(rhs);
        // one step of iterative refinement against the unregularized matrix
        let r = rhs - &self.matrix * &x;
        x += self.factor.solve(&r);
        x
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Solves the QP with a primal-dual interior-point method.
///
/// The objective must be positive definite on the primary variables and the
/// constraint rows must bound every auxiliary variable.
pub fn solve_qp(obj: &QuadraticObjective, sys: &LinearConstraintSystem, tol: &SolverTolerances) -> Solution {
    let nodes = obj.nodes();
    let dim = obj.dim();
    let nx = obj.num_vars();
    assert_eq!(nx, sys.num_primary_vars, "constraint system does not match the objective");
    let n = sys.num_vars();
    let m = sys.num_rows();

    // ½ zᵀPz + qᵀz, P = 2Q padded with zeros for the auxiliaries
    let mut p_mat = DMatrix::zeros(n, n);
    for k in 0..dim {
        p_mat.view_mut((k * nodes, k * nodes), (nodes, nodes)).copy_from(&(obj.block() * 2.0));
    }
    let mut q = DVector::zeros(n);
    for (i, c) in obj.linear_vec().iter().enumerate() {
        q[i] = -2.0 * c;
    }

    let finish = |z: &DVector<f64>, y: DVector<f64>, status: SolveStatus, iterations: usize, certificate| {
        let (x_star, aux) = unstack(z, nodes, dim);
        let p_star = obj.value(&x_star);
        let mut lambda = vec![0.0; sys.num_constraints];
        for (role, v) in sys.roles.iter().zip(y.iter()) {
            if let RowRole::Primary(i) = role {
                lambda[*i] = *v;
            }
        }
        let d_star = dual_value(obj, sys, &y, &aux).unwrap_or(f64::NEG_INFINITY);
        Solution {
            x_star,
            aux,
            p_star,
            lambda,
            row_multipliers: y,
            d_star,
            gap: (p_star - d_star).abs(),
            status,
            iterations,
            certificate,
        }
    };

    if m == 0 {
        return match crate::energy::solve_unconstrained(obj) {
            Ok(x) => {
                let z = stack(&x, &DVector::zeros(n - nx));
                finish(&z, DVector::zeros(0), SolveStatus::Solved, 0, None)
            }
            Err(_) => finish(&DVector::zeros(n), DVector::zeros(0), SolveStatus::MaxIter, 0, None),
        };
    }

    let a = SparseRows::new(&sys.a);
    let b = &sys.b;
    let mf = m as f64;

    // starting point: minimize ½zᵀPz + qᵀz + ½‖Az − b‖², then shift s and y
    // into the positive orthant
    let mut m0 = p_mat.clone();
    a.add_weighted_gram(&DVector::from_element(m, 1.0), &mut m0);
    let Some(init) = Newton::new(m0) else {
        return finish(&DVector::zeros(n), DVector::zeros(m), SolveStatus::MaxIter, 0, None);
    };
    let mut z = init.solve(&(a.tr_mul(b) - &q));
    let az = a.mul(&z);
    let mut s = b - &az;
    let mut y = -s.clone();
    let shift = |v: &mut DVector<f64>| {
        let lo = v.min();
        if lo <= 0.0 {
            v.add_scalar_mut(1.0 - lo);
        }
    };
    shift(&mut s);
    shift(&mut y);

    let b_scale = 1.0 + b.amax();
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let mut stall = 0;
    let mut last_mu = f64::INFINITY;

    for iter in 0..tol.max_iter {
        let rd = &p_mat * &z + &q + a.tr_mul(&y);
        let az = a.mul(&z);
        let rp = &az + &s - b;
        let mu = s.dot(&y) / mf;

        // residuals measured at the true feasibility of z, not through s
        let viol = (&az - b).iter().fold(0.0f64, |acc, r| acc.max(*r));
        let comp = (&az - b).iter().zip(y.iter()).fold(0.0f64, |acc, (r, l)| acc.max((r * l).abs()));
        let rd_inf = rd.amax();
        let merit = (rd_inf / tol.kkt).max(viol / tol.feas).max(comp / tol.cs);
        if best.as_ref().map_or(true, |(bm, _, _)| merit < *bm) {
            best = Some((merit, z.clone(), y.clone()));
        }

        let p_val = 0.5 * z.dot(&(&p_mat * &z)) + q.dot(&z) + obj.constant();
        let deep = s.dot(&y) <= 1e-13 * p_val.abs().max(1.0)
            && rd_inf <= 1e-3 * tol.kkt
            && rp.amax() <= 1e-3 * tol.feas;
        if deep {
            log::trace!("converged in {iter} iterations");
            return finish(&z, y, SolveStatus::Solved, iter, None);
        }

        // Farkas ray: y ≥ 0, Aᵀy = 0, bᵀy < 0
        if y.amax() > 1e4 {
            let yn = &y / y.sum();
            let aty = a.tr_mul(&yn);
            if aty.amax() <= 1e-7 * b_scale && b.dot(&yn) < -1e-7 * b_scale {
                return finish(&z, y, SolveStatus::Infeasible, iter, Some(yn));
            }
        }

        log::trace!("iter {iter}: mu {mu:e} rd {rd_inf:e} rp {:e}", rp.amax());
        // a diverging multiplier is the road to a Farkas certificate, not a stall
        if mu >= last_mu * 0.999 && y.amax() <= 1e4 {
            stall += 1;
        } else {
            stall = 0;
        }
        last_mu = mu;
        if stall >= 5 {
            break;
        }

        let w = y.component_div(&s);
        let mut mat = p_mat.clone();
        a.add_weighted_gram(&w, &mut mat);
        let Some(newton) = Newton::new(mat) else { break };

        let direction = |rc: &DVector<f64>| {
            // P dz + Aᵀdy = −rd;  A dz + ds = −rp;  y∘ds + s∘dy = −rc
            let t = (rc - y.component_mul(&rp)).component_div(&s);
            let dz = newton.solve(&(a.tr_mul(&t) - &rd));
            let ds = -&rp - a.mul(&dz);
            let dy = (-rc - y.component_mul(&ds)).component_div(&s);
            (dz, ds, dy)
        };

        let rc_aff = s.component_mul(&y);
        let (_, ds_a, dy_a) = direction(&rc_aff);
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&y, &dy_a)).min(1.0);
        let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&y + &dy_a * alpha_aff)) / mf;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let rc = rc_aff + ds_a.component_mul(&dy_a) - DVector::from_element(m, sigma * mu);
        let (dz, ds, dy) = direction(&rc);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&y, &dy))).min(1.0);

        z += &dz * alpha;
        s += &ds * alpha;
        y += &dy * alpha;
        // keep strictly interior
        s.iter_mut().for_each(|v| *v = v.max(f64::MIN_POSITIVE));
        y.iter_mut().for_each(|v| *v = v.max(f64::MIN_POSITIVE));
    }

    let (_, z_best, y_best) = best.expect("at least one iteration ran");
    let sol = finish(&z_best, y_best, SolveStatus::MaxIter, tol.max_iter, None);
    let report = kkt_report(obj, sys, &sol);
    if report.within(tol, sol.p_star) {
        Solution { status: SolveStatus::Solved, ..sol }
    } else {
        log::debug!("interior point stopped short of tolerance: {report:?}");
        sol
    }
}

/// Reformulates `constraints` and solves. Returns [`Error::Infeasible`] with the
/// conflicting constraint ids when no point satisfies them all.
pub fn solve_constrained(
    obj: &QuadraticObjective,
    constraints: &[PointConstraint],
    eps_r: f64,
    tol: &SolverTolerances,
) -> Result<(Solution, LinearConstraintSystem)> {
    let sys = reformulate_l1(constraints, obj.nodes(), obj.dim(), eps_r)?;
    let sol = solve_qp(obj, &sys, tol);
    match sol.status {
        SolveStatus::Solved => Ok((sol, sys)),
        SolveStatus::Infeasible => Err(Error::Infeasible { conflicting: sol.conflicting_constraints(&sys) }),
        SolveStatus::MaxIter => Err(Error::NotConverged { iterations: sol.iterations }),
    }
}
