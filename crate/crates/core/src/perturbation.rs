//! Perturbation sweeps over a single constraint and the confidence scale
//! derived from them.
//!
//! Perturbing constraint `i` by `u` replaces its radius `r` with `r + u`.
//! Under strong duality the optimal value obeys
//!
//! ```text
//! p*(u) ≥ p*(0) − λ*·u
//! ```
//!
//! and `λ(u)` is the local slope `−dp*/du`. The sweep samples `p*(u)` on a
//! grid; `u_upper` is the smallest loosening past which `λ(u)` vanishes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::constraints::PointConstraint;
use crate::energy::{solve_unconstrained, QuadraticObjective};
use crate::pipeline::Frame;
use crate::qp::{kkt_report, reformulate_l1, solve_qp, Solution, SolveStatus, SolverTolerances};
use crate::{Error, Result};

/// Slack on the bound check and the shape checks of a curve.
pub const CURVE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Samples over the initial range.
    pub samples: usize,
    /// Upper end of the initial range. `None` picks it from the distance
    /// between the anchor and the solution without this constraint.
    pub initial_upper: Option<f64>,
    /// The range may double this many times (4 → 16× the initial range).
    pub max_doublings: u32,
    /// The grid starts at `−r(1 − delta)`.
    pub delta: f64,
    /// Multipliers at or below this count as zero.
    pub eps_lambda: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { samples: 50, initial_upper: None, max_doublings: 4, delta: 0.01, eps_lambda: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSample {
    pub u: f64,
    pub p_star: f64,
    pub lambda: f64,
    pub x_star: DMatrix<f64>,
    pub feasible: bool,
    /// KKT residuals of this solve are within tolerance.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCurve {
    pub constraint_id: usize,
    /// Base radius `r` of the swept constraint.
    pub radius: f64,
    /// Sorted by `u`.
    pub samples: Vec<CurveSample>,
    pub u_lower: f64,
    pub u_upper: Option<f64>,
    pub p0: f64,
    pub lambda0: f64,
}

impl PerturbationCurve {
    pub fn feasible(&self) -> impl Iterator<Item = &CurveSample> {
        self.samples.iter().filter(|s| s.feasible)
    }

    /// `p*(u)` never increases with `u`, up to `tol`.
    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        let f: Vec<_> = self.feasible().collect();
        f.windows(2).all(|w| w[1].p_star <= w[0].p_star + tol)
    }

    /// Every consecutive triple lies on or below its chord, up to `tol`.
    pub fn is_convex(&self, tol: f64) -> bool {
        self.convexity_violation() <= tol
    }

    /// Largest amount by which a middle sample sits above the chord of its
    /// neighbours.
    pub fn convexity_violation(&self) -> f64 {
        let f: Vec<_> = self.feasible().collect();
        f.windows(3)
            .map(|w| {
                let t = (w[1].u - w[0].u) / (w[2].u - w[0].u);
                let chord = w[0].p_star + t * (w[2].p_star - w[0].p_star);
                w[1].p_star - chord
            })
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    pub fn lambda_is_nonincreasing(&self, tol: f64) -> bool {
        let f: Vec<_> = self.feasible().collect();
        f.windows(2).all(|w| w[1].lambda <= w[0].lambda + tol)
    }

    /// The curve in the units of `frame`'s original data.
    pub fn to_user(&self, frame: &Frame) -> Self {
        let s = frame.scale;
        Self {
            constraint_id: self.constraint_id,
            radius: self.radius * s,
            samples: self
                .samples
                .iter()
                .map(|c| CurveSample {
                    u: c.u * s,
                    p_star: c.p_star * s * s,
                    lambda: c.lambda * s,
                    x_star: frame.nodes_to_user(&c.x_star),
                    feasible: c.feasible,
                    certified: c.certified,
                })
                .collect(),
            u_lower: self.u_lower * s,
            u_upper: self.u_upper.map(|u| u * s),
            p0: self.p0 * s * s,
            lambda0: self.lambda0 * s,
        }
    }
}

/// Solves a problem repeatedly with one constraint perturbed.
#[derive(Debug, Clone)]
pub struct Perturber<'a> {
    obj: &'a QuadraticObjective,
    cons: &'a [PointConstraint],
    eps_r: f64,
    tol: SolverTolerances,
}

/// Result of one perturbed solve.
#[derive(Debug, Clone)]
pub struct PerturbedSolve {
    pub u: f64,
    pub solution: Solution,
    pub certified: bool,
    /// `b − A z` for every row of the perturbed system.
    pub slack: DVector<f64>,
}

/// Central finite difference of `p*` around `u = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeCheck {
    /// `(p*(−h) − p*(h)) / 2h`
    pub slope: f64,
    pub lambda0: f64,
    pub h: f64,
    /// The active set is the same at `−h`, `0` and `h` and strictly
    /// complementary, so the slope estimate is meaningful.
    pub stable: bool,
}

impl SlopeCheck {
    pub fn agrees(&self, rel: f64, abs: f64) -> bool {
        (self.slope - self.lambda0).abs() <= (rel * self.lambda0.abs()).max(abs)
    }
}

impl<'a> Perturber<'a> {
    pub fn new(obj: &'a QuadraticObjective, cons: &'a [PointConstraint], eps_r: f64, tol: SolverTolerances) -> Self {
        Self { obj, cons, eps_r, tol }
    }

    /// Solves with `cons[id].perturbation = u`.
    pub fn solve_at(&self, id: usize, u: f64) -> Result<PerturbedSolve> {
        let base = self.cons.get(id).ok_or(Error::UnknownConstraint(id))?;
        if u < -base.radius {
            return Err(Error::InvalidPerturbation { u, radius: base.radius });
        }
        let mut cons = self.cons.to_vec();
        cons[id] = base.with_perturbation(u);
        let sys = reformulate_l1(&cons, self.obj.nodes(), self.obj.dim(), self.eps_r)?;
        let solution = solve_qp(self.obj, &sys, &self.tol);
        let certified = solution.is_solved() && kkt_report(self.obj, &sys, &solution).within(&self.tol, solution.p_star);
        let mut z = solution.x_star.as_slice().to_vec();
        z.extend(solution.aux.iter());
        let slack = &sys.b - &sys.a * DVector::from_vec(z);
        Ok(PerturbedSolve { u, solution, certified, slack })
    }

    fn sample(&self, id: usize, u: f64) -> Result<CurveSample> {
        let s = self.solve_at(id, u)?;
        let feasible = s.solution.status == SolveStatus::Solved;
        if s.solution.status == SolveStatus::MaxIter {
            log::warn!("sweep sample u = {u} did not converge");
        }
        Ok(CurveSample {
            u,
            p_star: s.solution.p_star,
            lambda: s.solution.lambda[id],
            x_star: s.solution.x_star,
            feasible,
            certified: s.certified,
        })
    }

    /// Upper end of the first sweep range when the grid does not fix one.
    fn auto_upper(&self, id: usize) -> Result<f64> {
        let c = &self.cons[id];
        let others: Vec<PointConstraint> =
            self.cons.iter().enumerate().filter(|(i, _)| *i != id).map(|(_, c)| c.clone()).collect();
        let free = if others.is_empty() {
            solve_unconstrained(self.obj)?
        } else {
            let sys = reformulate_l1(&others, self.obj.nodes(), self.obj.dim(), self.eps_r)?;
            solve_qp(self.obj, &sys, &self.tol).x_star
        };
        let estimate = c.distance(&free) - c.radius;
        let upper = (1.25 * estimate).max(c.radius);
        Ok(if upper > 0.0 { upper } else { 1.0 })
    }

    /// Samples `p*(u)` on a uniform grid starting at `−r(1 − δ)`, doubling the
    /// range until the multiplier at the last sample drops to `eps_lambda` or
    /// the doubling cap is reached.
    pub fn sweep(&self, id: usize, grid: &GridSpec) -> Result<PerturbationCurve> {
        let c = self.cons.get(id).ok_or(Error::UnknownConstraint(id))?;
        let r = c.radius;
        let u_lo = -r * (1.0 - grid.delta);
        let upper0 = match grid.initial_upper {
            Some(u) => u,
            None => self.auto_upper(id)?,
        };
        let samples = grid.samples.max(3);
        let step = (upper0 - u_lo) / (samples - 1) as f64;

        let base = self.solve_at(id, 0.0)?;
        if base.solution.status != SolveStatus::Solved {
            return Err(match base.solution.status {
                SolveStatus::Infeasible => Error::Infeasible { conflicting: vec![id] },
                _ => Error::NotConverged { iterations: base.solution.iterations },
            });
        }
        let p0 = base.solution.p_star;
        let lambda0 = base.solution.lambda[id];

        let grid_points = |from: usize, to: usize| (from..to).map(|i| u_lo + step * i as f64).collect::<Vec<_>>();
        let mut us = grid_points(0, samples);
        let mut out: Vec<CurveSample> = us.par_iter().map(|&u| self.sample(id, u)).collect::<Result<_>>()?;

        let mut count = samples;
        let mut doublings = 0;
        loop {
            let last = out.iter().rev().find(|s| s.feasible);
            if last.map_or(false, |s| s.lambda <= grid.eps_lambda) || doublings >= grid.max_doublings {
                break;
            }
            doublings += 1;
            let new_count = (count - 1) * 2 + 1;
            let extra = grid_points(count, new_count);
            let more: Vec<CurveSample> = extra.par_iter().map(|&u| self.sample(id, u)).collect::<Result<_>>()?;
            us.extend(extra);
            out.extend(more);
            count = new_count;
        }

        if !us.iter().any(|u| *u == 0.0) {
            out.push(CurveSample {
                u: 0.0,
                p_star: p0,
                lambda: lambda0,
                x_star: base.solution.x_star,
                feasible: true,
                certified: base.certified,
            });
        }
        out.sort_by(|a, b| a.u.total_cmp(&b.u));

        Ok(PerturbationCurve { constraint_id: id, radius: r, samples: out, u_lower: -r, u_upper: None, p0, lambda0 })
    }

    /// Smallest `u ≥ 0` whose multiplier is at most `eps_lambda`, refined by
    /// bisection between the bracketing samples to `1e-3` of the swept range.
    pub fn find_u_upper(&self, curve: &PerturbationCurve, eps_lambda: f64) -> Result<f64> {
        let (lo, hi) = match bracket_u_upper(curve, eps_lambda)? {
            Bracket::Exact(u) => return Ok(u),
            Bracket::Between(lo, hi) => (lo, hi),
        };
        let span = curve.samples.last().map_or(0.0, |s| s.u) - curve.samples.first().map_or(0.0, |s| s.u);
        let resolution = 1e-3 * span;
        let (mut lo, mut hi) = (lo, hi);
        while hi - lo > resolution {
            let mid = 0.5 * (lo + hi);
            let s = self.solve_at(curve.constraint_id, mid)?;
            if s.solution.is_solved() && s.solution.lambda[curve.constraint_id] <= eps_lambda {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// [`Perturber::sweep`] followed by [`Perturber::find_u_upper`].
    pub fn analyze(&self, id: usize, grid: &GridSpec) -> Result<PerturbationCurve> {
        let mut curve = self.sweep(id, grid)?;
        curve.u_upper = Some(self.find_u_upper(&curve, grid.eps_lambda)?);
        Ok(curve)
    }

    /// Central difference of `p*` at `u = 0` with step `h`.
    pub fn slope_at_zero(&self, id: usize, h: f64) -> Result<SlopeCheck> {
        let minus = self.solve_at(id, -h)?;
        let zero = self.solve_at(id, 0.0)?;
        let plus = self.solve_at(id, h)?;
        let slope = (minus.solution.p_star - plus.solution.p_star) / (2.0 * h);
        // active rows, or None when some row is active without a multiplier
        let pattern = |s: &PerturbedSolve| -> Option<Vec<bool>> {
            let threshold = 1e-7;
            s.solution
                .row_multipliers
                .iter()
                .zip(s.slack.iter())
                .map(|(y, sl)| if *y <= threshold && *sl <= threshold { None } else { Some(*y > threshold) })
                .collect()
        };
        let stable = [&minus, &zero, &plus].iter().all(|s| s.solution.is_solved())
            && match (pattern(&minus), pattern(&zero), pattern(&plus)) {
                (Some(a), Some(b), Some(c)) => a == b && b == c,
                _ => false,
            };
        Ok(SlopeCheck { slope, lambda0: zero.solution.lambda[id], h, stable })
    }
}

enum Bracket {
    Exact(f64),
    Between(f64, f64),
}

fn bracket_u_upper(curve: &PerturbationCurve, eps_lambda: f64) -> Result<Bracket> {
    let feasible: Vec<&CurveSample> = curve.feasible().collect();
    if feasible.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, found: feasible.len() });
    }
    if curve.lambda0 <= eps_lambda {
        return Ok(Bracket::Exact(0.0));
    }
    let positive: Vec<&&CurveSample> = feasible.iter().filter(|s| s.u > 0.0).collect();
    match positive.iter().position(|s| s.lambda <= eps_lambda) {
        None => Err(Error::UnboundedInfluence {
            constraint: curve.constraint_id,
            eps_lambda,
            u_max: positive.last().map_or(0.0, |s| s.u),
        }),
        Some(0) => Ok(Bracket::Between(0.0, positive[0].u)),
        Some(k) => Ok(Bracket::Between(positive[k - 1].u, positive[k].u)),
    }
}

/// `u_upper` located on the sampled grid alone: the first positive sample
/// whose multiplier is at most `eps_lambda`.
pub fn find_u_upper(curve: &PerturbationCurve, eps_lambda: f64) -> Result<f64> {
    Ok(match bracket_u_upper(curve, eps_lambda)? {
        Bracket::Exact(u) => u,
        Bracket::Between(_, hi) => hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confidence {
    /// Position of `u` between the tightest (`0`) and loosest (`1`) perturbation.
    pub sigma_c: f64,
    /// `1 − sigma_c`: the tightest perturbation is fully confident.
    pub confidence: f64,
}

/// `σ_c = (u + r) / (u_upper + r)` and `confidence = 1 − σ_c`.
pub fn confidence_of(u: f64, r: f64, u_upper: f64) -> Result<Confidence> {
    let span = u_upper + r;
    if !(span > 0.0) {
        return Err(Error::OutOfRange { u, lower: -r, upper: u_upper });
    }
    let slack = 1e-12 * span;
    if u < -r - slack || u > u_upper + slack {
        return Err(Error::OutOfRange { u, lower: -r, upper: u_upper });
    }
    let sigma_c = ((u + r) / span).clamp(0.0, 1.0);
    Ok(Confidence { sigma_c, confidence: 1.0 - sigma_c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub holds: bool,
    pub worst_margin: f64,
    /// `(u, p*(u) − (p*(0) − λ0·u))` per feasible sample.
    pub margins: Vec<(f64, f64)>,
}

/// Checks `p*(u) ≥ p*(0) − λ0·u` at every feasible sample.
pub fn check_sensitivity_bound(curve: &PerturbationCurve) -> SensitivityReport {
    let margins: Vec<(f64, f64)> =
        curve.feasible().map(|s| (s.u, s.p_star - (curve.p0 - curve.lambda0 * s.u))).collect();
    let worst_margin = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    SensitivityReport { holds: worst_margin >= -CURVE_TOL, worst_margin, margins }
}
