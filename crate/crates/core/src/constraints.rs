//! Point and obstacle-avoidance constraints.
//!
//! Every constraint has the form `‖y − x_j‖₁ ≤ r + u`: node `j` must stay
//! within L1 distance `r + u` of the anchor `y`. `u` is the perturbation;
//! negative values tighten, positive values loosen.

use nalgebra::DMatrix;

use crate::qp::Solution;
use crate::trajectory::l1_distance;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    Via,
    Endpoint,
    /// Keeps node `j` inside the L1 ball around the demonstration point that
    /// reaches up to the closest obstacle point.
    Obstacle { obstacle_point: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointConstraint {
    pub node: usize,
    pub anchor: Vec<f64>,
    pub radius: f64,
    pub perturbation: f64,
    pub kind: ConstraintKind,
    /// Restricts the constraint to the selected coordinates. `None` constrains
    /// all of them.
    pub axes: Option<Vec<bool>>,
}

impl PointConstraint {
    /// `r + u`.
    pub fn effective_radius(&self) -> f64 {
        self.radius + self.perturbation
    }

    pub fn is_obstacle(&self) -> bool {
        matches!(self.kind, ConstraintKind::Obstacle { .. })
    }

    pub fn with_perturbation(&self, u: f64) -> Self {
        Self { perturbation: u, ..self.clone() }
    }

    pub fn with_axes(self, axes: Vec<bool>) -> Self {
        Self { axes: Some(axes), ..self }
    }

    pub(crate) fn axes_iter(&self, dim: usize) -> impl Iterator<Item = usize> + '_ {
        (0..dim).filter(move |k| self.axes.as_ref().map_or(true, |m| m.get(*k).copied().unwrap_or(false)))
    }

    /// L1 distance from the anchor to node `j` of `x`, over the constrained axes.
    pub fn distance(&self, x: &DMatrix<f64>) -> f64 {
        self.axes_iter(x.ncols()).map(|k| (self.anchor[k] - x[(self.node, k)]).abs()).sum()
    }

    /// `f(x) = ‖y − x_j‖₁ − (r + u)`; feasible when `≤ 0`.
    pub fn value(&self, x: &DMatrix<f64>) -> f64 {
        self.distance(x) - self.effective_radius()
    }
}

/// A via or endpoint constraint with `u = 0`. A zero radius asks for an exact
/// pin; the solver represents it with its minimum radius.
pub fn make_point_constraint(node: usize, anchor: Vec<f64>, radius: f64, nodes: usize) -> Result<PointConstraint> {
    if node >= nodes {
        return Err(Error::NodeIndexOutOfRange { index: node, nodes });
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidRadius(radius));
    }
    let kind = if node == 0 || node + 1 == nodes { ConstraintKind::Endpoint } else { ConstraintKind::Via };
    Ok(PointConstraint { node, anchor, radius, perturbation: 0.0, kind, axes: None })
}

/// Obstacles as point clouds; convex or not.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSet {
    clouds: Vec<Vec<Vec<f64>>>,
}

impl ObstacleSet {
    pub fn new(clouds: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if clouds.is_empty() || clouds.iter().any(Vec::is_empty) {
            return Err(Error::EmptyObstacles);
        }
        let dim = clouds[0][0].len();
        for p in clouds.iter().flatten() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
        }
        Ok(Self { clouds })
    }

    /// Samples `samples` points evenly on the boundary of a 2D circle.
    pub fn circle(center: [f64; 2], radius: f64, samples: usize) -> Vec<Vec<f64>> {
        (0..samples)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / samples as f64;
                vec![center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect()
    }

    pub fn clouds(&self) -> &[Vec<Vec<f64>>] {
        &self.clouds
    }

    pub fn dim(&self) -> usize {
        self.clouds[0][0].len()
    }

    pub fn points(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.clouds.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec<f64>,
    pub distance: f64,
    pub obstacle: usize,
    pub index: usize,
}

/// L1-closest obstacle point to `p`. Ties go to the lowest
/// `(obstacle, point)` index.
pub fn closest_obstacle_point(p: &[f64], obs: &ObstacleSet) -> Result<ClosestPoint> {
    let mut best: Option<ClosestPoint> = None;
    for (oi, cloud) in obs.clouds().iter().enumerate() {
        for (pi, b) in cloud.iter().enumerate() {
            let dist = l1_distance(p, b)?;
            if best.as_ref().map_or(true, |c| dist < c.distance) {
                best = Some(ClosestPoint { point: b.clone(), distance: dist, obstacle: oi, index: pi });
            }
        }
    }
    best.ok_or(Error::EmptyObstacles)
}

/// One obstacle constraint per node: node `j` stays within
/// `‖ζ_j − b_j‖₁` of the demonstration node `ζ_j`, where `b_j` is the obstacle
/// point closest to `ζ_j`.
pub fn generate_obstacle_constraints(demo_nodes: &DMatrix<f64>, obs: &ObstacleSet) -> Result<Vec<PointConstraint>> {
    if obs.dim() != demo_nodes.ncols() {
        return Err(Error::DimensionMismatch { expected: demo_nodes.ncols(), found: obs.dim() });
    }
    (0..demo_nodes.nrows())
        .map(|j| {
            let zeta: Vec<f64> = demo_nodes.row(j).iter().copied().collect();
            let closest = closest_obstacle_point(&zeta, obs)?;
            if closest.distance == 0.0 {
                return Err(Error::DemoTouchesObstacle { node: j });
            }
            Ok(PointConstraint {
                node: j,
                anchor: zeta,
                radius: closest.distance,
                perturbation: 0.0,
                kind: ConstraintKind::Obstacle { obstacle_point: closest.point },
                axes: None,
            })
        })
        .collect()
}

/// Sets `u = −σ_s·r` on every obstacle constraint, shrinking its radius to
/// `(1 − σ_s)·r`. Other constraints pass through unchanged.
pub fn apply_confidence_factor(cons: &[PointConstraint], sigma_s: f64) -> Result<Vec<PointConstraint>> {
    if !(0.0..=1.0).contains(&sigma_s) {
        return Err(Error::InvalidConfidenceFactor(sigma_s));
    }
    Ok(cons
        .iter()
        .map(|c| if c.is_obstacle() { c.with_perturbation(-sigma_s * c.radius) } else { c.clone() })
        .collect())
}

/// Per-constraint variant of [`apply_confidence_factor`]; `factors[i]` applies
/// to `cons[i]` and is ignored for non-obstacle constraints.
pub fn apply_confidence_factors(cons: &[PointConstraint], factors: &[f64]) -> Result<Vec<PointConstraint>> {
    if factors.len() != cons.len() {
        return Err(Error::DimensionMismatch { expected: cons.len(), found: factors.len() });
    }
    cons.iter()
        .zip(factors)
        .map(|(c, &f)| {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfidenceFactor(f));
            }
            Ok(if c.is_obstacle() { c.with_perturbation(-f * c.radius) } else { c.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub kept: Vec<PointConstraint>,
    /// Indices into the original list.
    pub kept_ids: Vec<usize>,
    pub removed_ids: Vec<usize>,
}

/// Drops every constraint whose multiplier is at most `eps_prune`.
pub fn prune_zero_dual(cons: &[PointConstraint], sol: &Solution, eps_prune: f64) -> Pruned {
    assert_eq!(cons.len(), sol.lambda.len(), "solution does not belong to these constraints");
    let (kept_ids, removed_ids): (Vec<usize>, Vec<usize>) = (0..cons.len()).partition(|&i| sol.lambda[i] > eps_prune);
    Pruned { kept: kept_ids.iter().map(|&i| cons[i].clone()).collect(), kept_ids, removed_ids }
}
