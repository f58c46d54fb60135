//! Demonstrations and constraints in, certified reproduction out.
//!
//! Everything is solved in a normalized [`Frame`]: the demonstrations'
//! bounding box is centred on the origin and scaled to unit diagonal, so
//! solver tolerances mean the same thing for millimetre and kilometre data.
//! Results are mapped back before they are returned.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::constraints::{
    apply_confidence_factor, closest_obstacle_point, generate_obstacle_constraints, make_point_constraint,
    prune_zero_dual, ConstraintKind, ObstacleSet, PointConstraint,
};
use crate::energy::{assemble_quadratic, build_cluster_target, evaluate_energies, ClusterTarget, ElasticParams, Energies, QuadraticObjective};
use crate::qp::{kkt_report, solve_constrained, KktReport, Solution, SolverTolerances};
use crate::trajectory::DemonstrationSet;
use crate::{Error, Result};

/// Affine map `user = center + scale · unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl Frame {
    pub fn identity(dim: usize) -> Self {
        Self { center: vec![0.0; dim], scale: 1.0 }
    }

    /// Bounding-box centre and diagonal of all demonstration points.
    pub fn from_demos(demos: &DemonstrationSet) -> Self {
        let (lo, hi) = demos.bounding_box();
        let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let diag = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        Self { center, scale: if diag > 0.0 && diag.is_finite() { diag } else { 1.0 } }
    }

    pub fn point_to_unit(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.center).map(|(v, c)| (v - c) / self.scale).collect()
    }

    pub fn point_to_user(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.center).map(|(v, c)| c + v * self.scale).collect()
    }

    pub fn nodes_to_unit(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| (x[(i, k)] - self.center[k]) / self.scale)
    }

    pub fn nodes_to_user(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| self.center[k] + x[(i, k)] * self.scale)
    }

    fn map_constraint(&self, c: &PointConstraint, point: impl Fn(&[f64]) -> Vec<f64>, len: f64) -> PointConstraint {
        PointConstraint {
            node: c.node,
            anchor: point(&c.anchor),
            radius: c.radius * len,
            perturbation: c.perturbation * len,
            kind: match &c.kind {
                ConstraintKind::Obstacle { obstacle_point } => ConstraintKind::Obstacle { obstacle_point: point(obstacle_point) },
                k => k.clone(),
            },
            axes: c.axes.clone(),
        }
    }

    pub fn constraint_to_unit(&self, c: &PointConstraint) -> PointConstraint {
        self.map_constraint(c, |p| self.point_to_unit(p), 1.0 / self.scale)
    }

    pub fn constraint_to_user(&self, c: &PointConstraint) -> PointConstraint {
        self.map_constraint(c, |p| self.point_to_user(p), self.scale)
    }

    pub fn obstacles_to_unit(&self, obs: &ObstacleSet) -> Result<ObstacleSet> {
        ObstacleSet::new(
            obs.clouds().iter().map(|cloud| cloud.iter().map(|p| self.point_to_unit(p)).collect()).collect(),
        )
    }

    /// Lengths scale by `s`, energies by `s²` and multipliers by `s`.
    pub fn solution_to_user(&self, sol: &Solution) -> Solution {
        let s = self.scale;
        Solution {
            x_star: self.nodes_to_user(&sol.x_star),
            aux: &sol.aux * s,
            p_star: sol.p_star * s * s,
            lambda: sol.lambda.iter().map(|l| l * s).collect(),
            row_multipliers: &sol.row_multipliers * s,
            d_star: sol.d_star * s * s,
            gap: sol.gap * s * s,
            status: sol.status,
            iterations: sol.iterations,
            certificate: sol.certificate.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionSettings {
    pub alpha: f64,
    pub beta: f64,
    /// Defaults to `1 / Σ W`.
    pub gamma: Option<f64>,
    pub nodes: usize,
    pub tol: SolverTolerances,
    /// Multipliers at or below this (in the normalized frame) are pruned.
    pub eps_prune: f64,
    /// Smallest radius a constraint may have, relative to the data scale.
    pub eps_r: f64,
    /// Pins nodes `0` and `N − 1` to the start and end of the mean demonstration.
    pub pin_endpoints: bool,
    /// Radius of the endpoint pins in data units.
    pub endpoint_radius: f64,
    /// Confidence factor applied to every obstacle constraint.
    pub sigma_s: Option<f64>,
}

impl Default for ReproductionSettings {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.1,
            gamma: None,
            nodes: 100,
            tol: SolverTolerances::default(),
            eps_prune: 1e-6,
            eps_r: 1e-6,
            pin_endpoints: false,
            endpoint_radius: 0.0,
            sigma_s: None,
        }
    }
}

/// A reproduction problem in the normalized frame.
#[derive(Debug, Clone)]
pub struct Problem {
    pub frame: Frame,
    pub target: ClusterTarget,
    pub params: ElasticParams,
    pub objective: QuadraticObjective,
    /// User constraints, then endpoint pins, then one obstacle constraint per node.
    pub constraints: Vec<PointConstraint>,
    pub eps_r: f64,
    pub tol: SolverTolerances,
}

impl Problem {
    pub fn build(
        demos: &DemonstrationSet,
        user_constraints: &[PointConstraint],
        obstacles: Option<&ObstacleSet>,
        settings: &ReproductionSettings,
    ) -> Result<Self> {
        let frame = Frame::from_demos(demos);
        let mut target = build_cluster_target(demos, settings.nodes)?;
        let gamma = settings.gamma.unwrap_or(target.gamma);
        let params = ElasticParams::new(settings.alpha, settings.beta, gamma, settings.nodes)?;
        target.points = frame.nodes_to_unit(&target.points);
        target.scatter /= frame.scale * frame.scale;
        target.gamma = gamma;
        let objective = assemble_quadratic(&target, &params)?;

        let n = settings.nodes;
        let d = demos.dim();
        let mut constraints = Vec::new();
        for c in user_constraints {
            if c.node >= n {
                return Err(Error::NodeIndexOutOfRange { index: c.node, nodes: n });
            }
            if c.anchor.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: c.anchor.len() });
            }
            constraints.push(frame.constraint_to_unit(c));
        }
        if settings.pin_endpoints {
            let r = settings.endpoint_radius / frame.scale;
            for j in [0, n - 1] {
                let anchor = target.points.row(j).iter().copied().collect();
                constraints.push(make_point_constraint(j, anchor, r, n)?);
            }
        }
        if let Some(obs) = obstacles {
            let unit = frame.obstacles_to_unit(obs)?;
            constraints.extend(generate_obstacle_constraints(&target.points, &unit)?);
        }
        Ok(Self { frame, target, params, objective, constraints, eps_r: settings.eps_r, tol: settings.tol })
    }

    /// Constraints in data units.
    pub fn user_constraints(&self) -> Vec<PointConstraint> {
        self.constraints.iter().map(|c| self.frame.constraint_to_user(c)).collect()
    }

    /// Solves with the given confidence factor, prunes zero-dual constraints
    /// and re-solves on the survivors.
    pub fn reproduce(&self, sigma_s: Option<f64>, eps_prune: f64) -> Result<Reproduction> {
        let cons = match sigma_s {
            Some(s) => apply_confidence_factor(&self.constraints, s)?,
            None => self.constraints.clone(),
        };
        let (full, _) = solve_constrained(&self.objective, &cons, self.eps_r, &self.tol)?;
        let pruned = prune_zero_dual(&cons, &full, eps_prune);
        let (sol, sys) = solve_constrained(&self.objective, &pruned.kept, self.eps_r, &self.tol)?;
        let kkt = kkt_report(&self.objective, &sys, &sol);

        let s2 = self.frame.scale * self.frame.scale;
        let e = evaluate_energies(&sol.x_star, &self.target, &self.params)?;
        let energies = Energies { fit: e.fit * s2, stretch: e.stretch * s2, bend: e.bend * s2 };

        let prune_check = PruneCheck {
            max_node_deviation: (&sol.x_star - &full.x_star).amax() * self.frame.scale,
            p_star_rel_deviation: (sol.p_star - full.p_star).abs() / full.p_star.abs().max(1e-300),
        };
        if prune_check.p_star_rel_deviation > 1e-6 {
            log::warn!("pruned re-solve moved p* by {:.3e} (relative)", prune_check.p_star_rel_deviation);
        }

        let solution = self.frame.solution_to_user(&sol);
        Ok(Reproduction {
            nodes: solution.x_star.clone(),
            solution,
            full_solution: self.frame.solution_to_user(&full),
            constraints: cons.iter().map(|c| self.frame.constraint_to_user(c)).collect(),
            active_constraints: pruned.kept.iter().map(|c| self.frame.constraint_to_user(c)).collect(),
            active_ids: pruned.kept_ids,
            removed_ids: pruned.removed_ids,
            confidence: sigma_s,
            kkt,
            energies,
            prune_check,
            radius_floor: self.eps_r * self.frame.scale,
        })
    }
}

/// How far the pruned re-solve moved from the full solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneCheck {
    pub max_node_deviation: f64,
    pub p_star_rel_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    /// `N × d`, data units.
    pub nodes: DMatrix<f64>,
    /// Solve on the pruned set; `lambda[k]` belongs to `active_ids[k]`.
    pub solution: Solution,
    /// Solve on every constraint.
    pub full_solution: Solution,
    /// Every constraint, with the confidence factor applied.
    pub constraints: Vec<PointConstraint>,
    pub active_constraints: Vec<PointConstraint>,
    pub active_ids: Vec<usize>,
    pub removed_ids: Vec<usize>,
    /// The confidence factor `σ_s` when one was applied.
    pub confidence: Option<f64>,
    /// Residuals of the pruned solve, in the normalized frame.
    pub kkt: KktReport,
    pub energies: Energies,
    pub prune_check: PruneCheck,
    /// Smallest radius the solver enforces, in data units.
    pub radius_floor: f64,
}

impl Reproduction {
    /// Indices of constraints the nodes violate by more than `tol`.
    pub fn violations(&self, tol: f64) -> Vec<usize> {
        constraint_violations(&self.nodes, &self.constraints, self.radius_floor, tol)
    }
}

/// Indices of `cons` whose L1 distance exceeds `max(r + u, floor)` by more than `tol`.
pub fn constraint_violations(nodes: &DMatrix<f64>, cons: &[PointConstraint], floor: f64, tol: f64) -> Vec<usize> {
    cons.iter()
        .enumerate()
        .filter(|(_, c)| c.distance(nodes) > c.effective_radius().max(floor) + tol)
        .map(|(i, _)| i)
        .collect()
}

/// Smallest L1 distance from any node to any obstacle point.
pub fn obstacle_clearance(nodes: &DMatrix<f64>, obs: &ObstacleSet) -> Result<f64> {
    (0..nodes.nrows())
        .map(|i| {
            let p: Vec<f64> = nodes.row(i).iter().copied().collect();
            closest_obstacle_point(&p, obs).map(|c| c.distance)
        })
        .try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d)))
}

/// `Σ‖R x‖²` over coordinates.
pub fn squared_jerk(nodes: &DMatrix<f64>) -> f64 {
    (0..nodes.nrows().saturating_sub(2))
        .map(|i| (nodes.row(i) - nodes.row(i + 1) * 2.0 + nodes.row(i + 2)).norm_squared())
        .sum()
}

pub fn reproduce(
    demos: &DemonstrationSet,
    user_constraints: &[PointConstraint],
    obstacles: Option<&ObstacleSet>,
    settings: &ReproductionSettings,
) -> Result<Reproduction> {
    Problem::build(demos, user_constraints, obstacles, settings)?.reproduce(settings.sigma_s, settings.eps_prune)
}

/// One reproduction per confidence factor, in the order given.
pub fn confidence_family(
    demos: &DemonstrationSet,
    user_constraints: &[PointConstraint],
    obstacles: Option<&ObstacleSet>,
    levels: &[f64],
    settings: &ReproductionSettings,
) -> Result<Vec<Reproduction>> {
    if let Some(&bad) = levels.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidConfidenceFactor(bad));
    }
    let problem = Problem::build(demos, user_constraints, obstacles, settings)?;
    levels.par_iter().map(|&s| problem.reproduce(Some(s), settings.eps_prune)).collect()
}

/// Column-stacked copy of `x`, handy when comparing against flat vectors.
pub fn stacked(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Trajectory;

    fn arc_demo(m: usize, scale: f64, shift: f64) -> DemonstrationSet {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let t = i as f64 / (m - 1) as f64;
                vec![shift + scale * t, shift + scale * (std::f64::consts::PI * t).sin()]
            })
            .collect();
        DemonstrationSet::single(Trajectory::from_rows(&rows).unwrap())
    }

    #[test]
    fn frame_round_trip() {
        let demos = arc_demo(20, 40.0, -7.0);
        let f = Frame::from_demos(&demos);
        let p = vec![3.5, -1.25];
        let q = f.point_to_user(&f.point_to_unit(&p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        let x = demos.demos()[0].points().clone();
        let unit = f.nodes_to_unit(&x);
        let (lo, hi) = (unit.min(), unit.max());
        assert!(lo >= -0.5 && hi <= 0.5);
    }

    #[test]
    fn no_constraints_and_no_smoothing_gives_the_mean() {
        let demos = arc_demo(25, 1.0, 0.0);
        let settings = ReproductionSettings { alpha: 0.0, beta: 0.0, nodes: 12, ..Default::default() };
        let rep = reproduce(&demos, &[], None, &settings).unwrap();
        let target = build_cluster_target(&demos, 12).unwrap();
        assert!((&rep.nodes - &target.points).amax() < 1e-9);
        assert!(rep.solution.lambda.is_empty());
        assert!(rep.energies.total().abs() < 1e-12);
    }

    #[test]
    fn result_does_not_depend_on_units() {
        let settings = ReproductionSettings { nodes: 20, pin_endpoints: true, ..Default::default() };
        let via = |s: f64, o: f64| make_point_constraint(10, vec![o + 0.5 * s, o + 0.2 * s], 0.05 * s, 20).unwrap();
        let a = reproduce(&arc_demo(30, 1.0, 0.0), &[via(1.0, 0.0)], None, &settings).unwrap();
        let b = reproduce(&arc_demo(30, 1000.0, 50.0), &[via(1000.0, 50.0)], None, &settings).unwrap();
        let back = (b.nodes.add_scalar(-50.0)) / 1000.0;
        assert!((a.nodes - back).amax() < 1e-7);
        assert!((a.solution.p_star * 1e6 - b.solution.p_star).abs() <= 1e-6 * b.solution.p_star);
    }

    #[test]
    fn via_point_is_honoured_and_costs_energy() {
        let demos = arc_demo(30, 1.0, 0.0);
        let settings = ReproductionSettings { nodes: 30, pin_endpoints: true, ..Default::default() };
        let free = reproduce(&demos, &[], None, &settings).unwrap();
        let via = make_point_constraint(15, vec![0.5, 0.6], 0.02, 30).unwrap();
        let rep = reproduce(&demos, &[via.clone()], None, &settings).unwrap();
        assert!(via.distance(&rep.nodes) <= 0.02 + 1e-7);
        assert!(rep.solution.p_star > free.solution.p_star);
        assert!(rep.violations(1e-7).is_empty());
        assert!(rep.prune_check.max_node_deviation <= 1e-5);
    }

    #[test]
    fn obstacle_family_tightens() {
        let demos = arc_demo(40, 1.0, 0.0);
        let obs = ObstacleSet::new(vec![ObstacleSet::circle([0.5, 0.7], 0.1, 24)]).unwrap();
        let settings = ReproductionSettings { nodes: 30, ..Default::default() };
        let fam = confidence_family(&demos, &[], Some(&obs), &[0.0, 0.5, 1.0], &settings).unwrap();
        assert_eq!(fam.len(), 3);
        for w in fam.windows(2) {
            assert!(w[1].solution.p_star >= w[0].solution.p_star - 1e-12);
        }
        // σ_s = 1 pins every node to the demonstration
        let target = build_cluster_target(&demos, 30).unwrap();
        assert!((&fam[2].nodes - &target.points).amax() < 1e-5);
        assert!(confidence_family(&demos, &[], Some(&obs), &[1.5], &settings).is_err());
    }

    #[test]
    fn reproduce_is_deterministic() {
        let demos = arc_demo(40, 1.0, 0.0);
        let obs = ObstacleSet::new(vec![ObstacleSet::circle([0.5, 0.7], 0.1, 24)]).unwrap();
        let settings = ReproductionSettings { nodes: 30, sigma_s: Some(0.3), ..Default::default() };
        let a = reproduce(&demos, &[], Some(&obs), &settings).unwrap();
        let b = reproduce(&demos, &[], Some(&obs), &settings).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.solution.p_star.to_bits(), b.solution.p_star.to_bits());
    }

    #[test]
    fn conflicting_constraints_are_reported() {
        let demos = arc_demo(30, 1.0, 0.0);
        let settings = ReproductionSettings { nodes: 10, ..Default::default() };
        let a = make_point_constraint(4, vec![0.0, 0.0], 0.01, 10).unwrap();
        let b = make_point_constraint(4, vec![1.0, 1.0], 0.01, 10).unwrap();
        match reproduce(&demos, &[a, b], None, &settings) {
            Err(Error::Infeasible { conflicting }) => assert_eq!(conflicting, vec![0, 1]),
            other => panic!("{other:?}"),
        }
    }
}
