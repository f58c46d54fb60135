//! Elastic-map energies and the quadratic objective they induce.
//!
//! For nodes `x` (an `N × d` matrix) fit to a clustered target `t` with node
//! weights `W`:
//!
//! ```text
//! U_X = γ Σ_i W_i ‖x_i − t_i‖² + γ·scatter
//! U_E = α ‖E x‖²
//! U_R = β ‖R x‖²
//! ```
//!
//! `E` and `R` are the first- and second-difference operators. Every
//! coordinate shares the same `N × N` block `γ diag(W) + αEᵀE + βRᵀR`, so the
//! objective stores that block once instead of the full `Nd × Nd` matrix.

use nalgebra::{DMatrix, DVector};

use crate::trajectory::{resample, DemonstrationSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    /// Stretching constant.
    pub alpha: f64,
    /// Bending constant.
    pub beta: f64,
    /// Fit normalization, usually `1 / Σ w_j`.
    pub gamma: f64,
    pub nodes: usize,
}

impl ElasticParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, nodes: usize) -> Result<Self> {
        let p = Self { alpha, beta, gamma, nodes };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParams(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParams(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.nodes < 3 {
            return Err(Error::InvalidParams(format!("need at least 3 nodes, got {}", self.nodes)));
        }
        Ok(())
    }
}

/// The data each node is pulled towards.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTarget {
    /// Weighted mean of the index-matched demonstration points, `N × d`.
    pub points: DMatrix<f64>,
    /// Total data weight clustered onto each node.
    pub node_weights: DVector<f64>,
    /// `1 / Σ w_j` over every clustered data point.
    pub gamma: f64,
    /// `Σ_j w_j ‖ζ_j − t_{k(j)}‖²`: the part of the fit energy no choice of
    /// nodes can remove. Zero for a single demonstration.
    pub scatter: f64,
}

impl ClusterTarget {
    /// A target with unit weight per node, as for a single demonstration that
    /// already has `N` points.
    pub fn from_points(points: DMatrix<f64>) -> Self {
        let n = points.nrows();
        Self {
            points,
            node_weights: DVector::from_element(n, 1.0),
            gamma: 1.0 / n as f64,
            scatter: 0.0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// First-difference operator, `(n − 1) × n`.
pub fn build_edge_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("edge matrix needs n >= 2, got {n}")));
    }
    let mut e = DMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        e[(i, i)] = -1.0;
        e[(i, i + 1)] = 1.0;
    }
    Ok(e)
}

/// Second-difference operator, `(n − 2) × n`.
pub fn build_rib_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n < 3 {
        return Err(Error::InvalidParams(format!("rib matrix needs n >= 3, got {n}")));
    }
    let mut r = DMatrix::zeros(n - 2, n);
    for i in 0..n - 2 {
        r[(i, i)] = 1.0;
        r[(i, i + 1)] = -2.0;
        r[(i, i + 2)] = 1.0;
    }
    Ok(r)
}

/// Resamples every demonstration to `n` nodes and averages them index-wise
/// with the (resampled) data weights.
pub fn build_cluster_target(demos: &DemonstrationSet, n: usize) -> Result<ClusterTarget> {
    let d = demos.dim();
    let resampled = demos
        .demos()
        .iter()
        .map(|t| resample(t, n))
        .collect::<Result<Vec<_>>>()?;

    let mut weighted_sum = DMatrix::<f64>::zeros(n, d);
    let mut node_weights = DVector::<f64>::zeros(n);
    for t in &resampled {
        for i in 0..n {
            let w = t.weights()[i];
            node_weights[i] += w;
            for k in 0..d {
                weighted_sum[(i, k)] += w * t.points()[(i, k)];
            }
        }
    }

    let total: f64 = node_weights.sum();
    let mut points = DMatrix::zeros(n, d);
    for i in 0..n {
        if node_weights[i] > 0.0 {
            for k in 0..d {
                points[(i, k)] = weighted_sum[(i, k)] / node_weights[i];
            }
        } else {
            // no data on this node; any value works since its fit weight is zero
            for k in 0..d {
                points[(i, k)] = resampled.iter().map(|t| t.points()[(i, k)]).sum::<f64>()
                    / resampled.len() as f64;
            }
        }
    }

    let mut scatter = 0.0;
    if resampled.len() > 1 {
        for t in &resampled {
            for i in 0..n {
                let diff = t.points().row(i) - points.row(i);
                scatter += t.weights()[i] * diff.norm_squared();
            }
        }
    }

    Ok(ClusterTarget { points, node_weights, gamma: 1.0 / total, scatter })
}

/// The three elastic-map energies of a node configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub fit: f64,
    pub stretch: f64,
    pub bend: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.fit + self.stretch + self.bend
    }
}

fn check_shape(x: &DMatrix<f64>, target: &ClusterTarget) -> Result<()> {
    if x.nrows() != target.nodes() {
        return Err(Error::DimensionMismatch { expected: target.nodes(), found: x.nrows() });
    }
    if x.ncols() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: x.ncols() });
    }
    Ok(())
}

/// Evaluates `U_X`, `U_E` and `U_R` directly from their sums of squared
/// differences.
pub fn evaluate_energies(
    x: &DMatrix<f64>,
    target: &ClusterTarget,
    params: &ElasticParams,
) -> Result<Energies> {
    check_shape(x, target)?;
    let n = x.nrows();

    let mut fit = 0.0;
    for i in 0..n {
        fit += target.node_weights[i] * (x.row(i) - target.points.row(i)).norm_squared();
    }
    fit = params.gamma * (fit + target.scatter);

    let mut stretch = 0.0;
    for i in 0..n.saturating_sub(1) {
        stretch += (x.row(i + 1) - x.row(i)).norm_squared();
    }

    let mut bend = 0.0;
    for i in 0..n.saturating_sub(2) {
        bend += (x.row(i) - x.row(i + 1) * 2.0 + x.row(i + 2)).norm_squared();
    }

    Ok(Energies { fit, stretch: params.alpha * stretch, bend: params.beta * bend })
}

/// `f(x) = Σ_k x_kᵀ B x_k − 2 c_kᵀ x_k + k0`, summed over coordinates `k`,
/// where `x_k` is column `k` of the `N × d` node matrix.
///
/// In vectorized form (columns stacked) this is `vec(x)ᵀ Q vec(x) − 2cᵀ vec(x)
/// + k0` with `Q = I_d ⊗ B`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    block: DMatrix<f64>,
    linear: DMatrix<f64>,
    constant: f64,
}

impl QuadraticObjective {
    /// `block` must be symmetric `N × N`; `linear` is `N × d`.
    pub fn new(block: DMatrix<f64>, linear: DMatrix<f64>, constant: f64) -> Result<Self> {
        if !block.is_square() || block.nrows() != linear.nrows() {
            return Err(Error::DimensionMismatch { expected: block.nrows(), found: linear.nrows() });
        }
        Ok(Self { block, linear, constant })
    }

    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn nodes(&self) -> usize {
        self.block.nrows()
    }

    pub fn dim(&self) -> usize {
        self.linear.ncols()
    }

    /// Number of primal variables, `N·d`.
    pub fn num_vars(&self) -> usize {
        self.nodes() * self.dim()
    }

    /// The full `Nd × Nd` matrix `Q`.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let n = self.nodes();
        let mut q = DMatrix::zeros(n * self.dim(), n * self.dim());
        for k in 0..self.dim() {
            q.view_mut((k * n, k * n), (n, n)).copy_from(&self.block);
        }
        q
    }

    /// The stacked linear term `c = vec(linear)`.
    pub fn linear_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.linear.as_slice())
    }

    pub fn value(&self, x: &DMatrix<f64>) -> f64 {
        let mut v = self.constant;
        for k in 0..self.dim() {
            let xk = x.column(k);
            v += xk.dot(&(&self.block * xk)) - 2.0 * self.linear.column(k).dot(&xk);
        }
        v
    }

    /// `∇f = 2(Bx − c)`, shaped like `x`.
    pub fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        (&self.block * x - &self.linear) * 2.0
    }
}

/// Builds the quadratic form whose value equals the sum of
/// [`evaluate_energies`] for every `x`.
pub fn assemble_quadratic(target: &ClusterTarget, params: &ElasticParams) -> Result<QuadraticObjective> {
    let n = target.nodes();
    let mut block = DMatrix::from_diagonal(&(&target.node_weights * params.gamma));
    if n >= 2 && params.alpha != 0.0 {
        let e = build_edge_matrix(n)?;
        block += e.transpose() * &e * params.alpha;
    }
    if n >= 3 && params.beta != 0.0 {
        let r = build_rib_matrix(n)?;
        block += r.transpose() * &r * params.beta;
    }

    let mut linear = target.points.clone();
    for i in 0..n {
        let w = params.gamma * target.node_weights[i];
        linear.row_mut(i).scale_mut(w);
    }
    let mut constant = target.scatter;
    for i in 0..n {
        constant += target.node_weights[i] * target.points.row(i).norm_squared();
    }
    constant *= params.gamma;

    QuadraticObjective::new(block, linear, constant)
}

/// Minimizes the objective with no constraints by solving `B x_k = c_k` for
/// each coordinate.
pub fn solve_unconstrained(obj: &QuadraticObjective) -> Result<DMatrix<f64>> {
    let chol = factor_block(obj.block()).ok_or(Error::SingularObjective)?;
    Ok(chol.solve(obj.linear()))
}

/// Cholesky factor of a block that is positive definite beyond rounding noise.
pub(crate) fn factor_block(block: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = block.diagonal().amax();
    let chol = block.clone().cholesky()?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v * v));
    (scale > 0.0 && min_pivot > 1e-12 * scale).then_some(chol)
}
