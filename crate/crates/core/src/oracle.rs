//! Slow reference solver used to check [`crate::qp`].
//!
//! Projected gradient descent on the elastic-map energy. The gradient is
//! computed from explicit node differences and never touches the assembled
//! matrices or the interior-point code, so agreement between the two is
//! meaningful. Projection onto several balls on the *same* node is done
//! sequentially and is only approximate; balls on distinct nodes project
//! exactly.

use nalgebra::DMatrix;

use crate::constraints::PointConstraint;
use crate::energy::{evaluate_energies, ClusterTarget, ElasticParams};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub x: DMatrix<f64>,
    /// Evaluated with [`evaluate_energies`] at `x`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection of `p` onto `{q : ‖q − center‖₁ ≤ rho}`.
pub fn l1_ball_project(p: &[f64], center: &[f64], rho: f64) -> Vec<f64> {
    let v: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= rho {
        return p.to_vec();
    }
    if rho <= 0.0 {
        return center.to_vec();
    }
    // soft-threshold level θ with Σ max(|v_k| − θ, 0) = rho
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - rho) / (j + 1) as f64;
        if *m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter()
        .zip(center)
        .map(|(x, c)| c + x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// `H v` for the Hessian half `H = γ diag(W) + αEᵀE + βRᵀR`, from differences.
fn hessian_apply(v: &DMatrix<f64>, target: &ClusterTarget, params: &ElasticParams) -> DMatrix<f64> {
    let n = v.nrows();
    let d = v.ncols();
    let mut out = DMatrix::zeros(n, d);
    for k in 0..d {
        for i in 0..n {
            out[(i, k)] += params.gamma * target.node_weights[i] * v[(i, k)];
        }
        for i in 0..n.saturating_sub(1) {
            let e = v[(i + 1, k)] - v[(i, k)];
            out[(i, k)] -= params.alpha * e;
            out[(i + 1, k)] += params.alpha * e;
        }
        for i in 0..n.saturating_sub(2) {
            let r = v[(i, k)] - 2.0 * v[(i + 1, k)] + v[(i + 2, k)];
            out[(i, k)] += params.beta * r;
            out[(i + 1, k)] -= 2.0 * params.beta * r;
            out[(i + 2, k)] += params.beta * r;
        }
    }
    out
}

/// Largest eigenvalue of `H` by 50 power iterations.
fn largest_eigenvalue(target: &ClusterTarget, params: &ElasticParams) -> f64 {
    let n = target.nodes();
    // alternating signs line up with the highest-frequency difference mode
    let mut v = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 } + 0.01 * i as f64);
    let mut lambda = 0.0;
    for _ in 0..50 {
        let norm = v.norm();
        if norm == 0.0 {
            break;
        }
        v /= norm;
        let hv = hessian_apply(&v, target, params);
        lambda = v.dot(&hv);
        v = hv;
    }
    lambda
}

/// Projected gradient descent from the target. `step` defaults to
/// `0.9 / λ_max(Q)`; iteration stops once no coordinate moves by more than
/// `1e-10`.
pub fn oracle_solve(
    target: &ClusterTarget,
    params: &ElasticParams,
    constraints: &[PointConstraint],
    eps_r: f64,
    step: Option<f64>,
    max_iter: usize,
) -> Result<OracleResult> {
    let step = step.unwrap_or_else(|| 0.9 / largest_eigenvalue(target, params));
    let d = target.dim();
    let mut x = target.points.clone();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        // ∇f = 2(Hx − γ W∘t)
        let mut grad = hessian_apply(&x, target, params);
        for i in 0..x.nrows() {
            for k in 0..d {
                grad[(i, k)] -= params.gamma * target.node_weights[i] * target.points[(i, k)];
            }
        }
        let mut next = &x - grad * (2.0 * step);
        for c in constraints {
            let axes: Vec<usize> = c.axes_iter(d).collect();
            let p: Vec<f64> = axes.iter().map(|&k| next[(c.node, k)]).collect();
            let y: Vec<f64> = axes.iter().map(|&k| c.anchor[k]).collect();
            let proj = l1_ball_project(&p, &y, c.effective_radius().max(eps_r));
            for (&k, v) in axes.iter().zip(proj) {
                next[(c.node, k)] = v;
            }
        }
        let change = (&next - &x).amax();
        x = next;
        if change <= 1e-10 {
            converged = true;
            break;
        }
    }

    let objective = evaluate_energies(&x, target, params)?.total();
    Ok(OracleResult { x, objective, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::make_point_constraint;
    use crate::energy::{assemble_quadratic, solve_unconstrained};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_examples() {
        assert_eq!(l1_ball_project(&[0.2, 0.3], &[0.0, 0.0], 1.0), vec![0.2, 0.3]);
        assert_eq!(l1_ball_project(&[3.0], &[0.0], 1.0), vec![1.0]);
        assert_eq!(l1_ball_project(&[3.0, 1.0], &[1.0, 1.0], 0.0), vec![1.0, 1.0]);
        // (2, 1) onto the unit ball: θ = 1 → (1, 0)
        assert_eq!(l1_ball_project(&[2.0, 1.0], &[0.0, 0.0], 1.0), vec![1.0, 0.0]);
    }

    /// Brute force: minimize the distance over a fine grid on the ball
    /// surface (points outside project onto the surface).
    fn grid_projection(p: &[f64; 3], rho: f64) -> [f64; 3] {
        let steps = 400;
        let mut best = [0.0; 3];
        let mut best_d = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let u = rho * a as f64 / steps as f64;
                let v = rho * b as f64 / steps as f64;
                let w = rho - u - v;
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            let q = [sx * u, sy * v, sz * w];
                            let dd = (0..3).map(|k| (q[k] - p[k]).powi(2)).sum::<f64>();
                            if dd < best_d {
                                best_d = dd;
                                best = q;
                            }
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn projection_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let rho = rng.gen_range(0.2..1.0);
            if p.iter().map(|v: &f64| v.abs()).sum::<f64>() <= rho {
                continue;
            }
            let q = l1_ball_project(&p, &[0.0; 3], rho);
            let g = grid_projection(&p, rho);
            for k in 0..3 {
                assert!((q[k] - g[k]).abs() < 1e-2 * rho.max(1.0), "{q:?} vs {g:?}");
            }
            // the analytic projection is never worse than the grid point
            let dq: f64 = (0..3).map(|k| (q[k] - p[k]).powi(2)).sum();
            let dg: f64 = (0..3).map(|k| (g[k] - p[k]).powi(2)).sum();
            assert!(dq <= dg + 1e-12);
        }
    }

    #[test]
    fn one_dimensional_toy() {
        // (x − 1)² with x ≤ 0 written as |x − (−M)| ≤ M
        let target = ClusterTarget::from_points(DMatrix::from_element(1, 1, 1.0));
        let params = ElasticParams { alpha: 0.0, beta: 0.0, gamma: 1.0, nodes: 1 };
        let c = make_point_constraint(0, vec![-50.0], 50.0, 1).unwrap();
        let r = oracle_solve(&target, &params, &[c], 1e-6, None, 10_000).unwrap();
        assert!(r.converged);
        assert!(r.x[(0, 0)].abs() < 1e-6);
        assert!((r.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n = rng.gen_range(3..15);
            let pts = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
            let target = ClusterTarget::from_points(pts);
            let params = ElasticParams {
                alpha: rng.gen_range(0.0..0.5),
                beta: rng.gen_range(0.0..0.5),
                gamma: target.gamma,
                nodes: n,
            };
            let exact = solve_unconstrained(&assemble_quadratic(&target, &params).unwrap()).unwrap();
            let r = oracle_solve(&target, &params, &[], 1e-6, None, 1_000_000).unwrap();
            assert!(r.converged);
            assert!((r.x - exact).amax() < 1e-6);
        }
    }
}
