//! Serialized results.
//!
//! Floats are written with 17 significant digits so that every value reads
//! back to the same `f64`. Non-finite values become `null`.
//!
//! `plotdata.csv` has the columns `series,index,x,y[,z]`, one row per point.
//! Trajectory series hold node coordinates; the `p_star` and `bound` series
//! of a sweep hold `(u, p*)` and `(u, p*(0) − λ0·u)`.

use std::io::Write;
use std::path::Path;

use elmap::constraints::{ConstraintKind, PointConstraint};
use elmap::energy::Energies;
use elmap::perturbation::{check_sensitivity_bound, confidence_of, PerturbationCurve, CURVE_TOL};
use elmap::pipeline::Reproduction;
use elmap::qp::{KktReport, SolveStatus};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

use crate::error::{CliError, CliResult};

struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser).expect("serializing into memory cannot fail");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, to_json(value) + "\n").map_err(|e| CliError::io(path, e))
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Serialize)]
pub struct EnergiesOut {
    pub fit: f64,
    pub stretch: f64,
    pub bend: f64,
    pub total: f64,
}

impl From<&Energies> for EnergiesOut {
    fn from(e: &Energies) -> Self {
        Self { fit: e.fit, stretch: e.stretch, bend: e.bend, total: e.total() }
    }
}

#[derive(Debug, Serialize)]
pub struct KktOut {
    pub stationarity: f64,
    pub feasibility: f64,
    pub dual_feasibility: f64,
    pub slackness: f64,
    pub gap: f64,
}

impl From<&KktReport> for KktOut {
    fn from(k: &KktReport) -> Self {
        Self {
            stationarity: k.stationarity,
            feasibility: k.feasibility,
            dual_feasibility: k.dual_feasibility,
            slackness: k.slackness,
            gap: k.gap,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ConstraintOut {
    pub id: usize,
    pub kind: &'static str,
    pub node: usize,
    pub anchor: Vec<f64>,
    pub radius: f64,
    pub perturbation: f64,
    pub lambda: f64,
    pub pruned: bool,
}

pub fn kind_name(c: &PointConstraint) -> &'static str {
    match c.kind {
        ConstraintKind::Via => "via",
        ConstraintKind::Endpoint => "endpoint",
        ConstraintKind::Obstacle { .. } => "obstacle",
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Solved => "solved",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIter => "max_iter",
    }
}

#[derive(Debug, Serialize)]
pub struct SolutionOut {
    pub status: &'static str,
    pub iterations: usize,
    pub nodes: Vec<Vec<f64>>,
    pub p_star: f64,
    pub d_star: f64,
    pub gap: f64,
    pub confidence_factor: Option<f64>,
    /// Multipliers from the solve over every constraint.
    pub constraints: Vec<ConstraintOut>,
    pub pruned_ids: Vec<usize>,
    pub active_ids: Vec<usize>,
    pub energies: EnergiesOut,
    pub kkt: KktOut,
    pub prune_max_node_deviation: f64,
    pub prune_p_star_rel_deviation: f64,
}

impl From<&Reproduction> for SolutionOut {
    fn from(r: &Reproduction) -> Self {
        let constraints = r
            .constraints
            .iter()
            .enumerate()
            .map(|(id, c)| ConstraintOut {
                id,
                kind: kind_name(c),
                node: c.node,
                anchor: c.anchor.clone(),
                radius: c.radius,
                perturbation: c.perturbation,
                lambda: r.full_solution.lambda[id],
                pruned: r.removed_ids.contains(&id),
            })
            .collect();
        Self {
            status: status_name(r.solution.status),
            iterations: r.solution.iterations,
            nodes: rows(&r.nodes),
            p_star: r.solution.p_star,
            d_star: r.solution.d_star,
            gap: r.solution.gap,
            confidence_factor: r.confidence,
            constraints,
            pruned_ids: r.removed_ids.clone(),
            active_ids: r.active_ids.clone(),
            energies: (&r.energies).into(),
            kkt: (&r.kkt).into(),
            prune_max_node_deviation: r.prune_check.max_node_deviation,
            prune_p_star_rel_deviation: r.prune_check.p_star_rel_deviation,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SampleOut {
    pub u: f64,
    pub p_star: f64,
    pub lambda: f64,
    pub feasible: bool,
    pub certified: bool,
    /// `p*(u) − (p*(0) − λ0·u)`
    pub bound_margin: f64,
    pub nodes: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct ConfidenceRow {
    pub u: f64,
    pub sigma_c: f64,
    pub confidence: f64,
}

#[derive(Debug, Serialize)]
pub struct CurveOut {
    pub constraint_id: usize,
    pub radius: f64,
    pub u_lower: f64,
    pub u_upper: Option<f64>,
    pub p0: f64,
    pub lambda0: f64,
    pub bound_holds: bool,
    pub worst_bound_margin: f64,
    pub nonincreasing: bool,
    pub convex: bool,
    pub samples: Vec<SampleOut>,
    pub confidence_table: Vec<ConfidenceRow>,
}

impl From<&PerturbationCurve> for CurveOut {
    fn from(c: &PerturbationCurve) -> Self {
        let report = check_sensitivity_bound(c);
        let scale = c.p0.abs().max(1.0);
        let samples = c
            .samples
            .iter()
            .map(|s| SampleOut {
                u: s.u,
                p_star: s.p_star,
                lambda: s.lambda,
                feasible: s.feasible,
                certified: s.certified,
                bound_margin: s.p_star - (c.p0 - c.lambda0 * s.u),
                nodes: rows(&s.x_star),
            })
            .collect();
        let mut confidence_table = Vec::new();
        if let Some(upper) = c.u_upper {
            let r = c.radius;
            let mut us: Vec<f64> = std::iter::once(-r).chain(c.feasible().map(|s| s.u)).filter(|u| *u >= -r && *u <= upper).collect();
            us.push(upper);
            us.dedup();
            for u in us {
                if let Ok(conf) = confidence_of(u, r, upper) {
                    confidence_table.push(ConfidenceRow { u, sigma_c: conf.sigma_c, confidence: conf.confidence });
                }
            }
        }
        Self {
            constraint_id: c.constraint_id,
            radius: c.radius,
            u_lower: c.u_lower,
            u_upper: c.u_upper,
            p0: c.p0,
            lambda0: c.lambda0,
            bound_holds: report.worst_margin >= -CURVE_TOL * scale,
            worst_bound_margin: report.worst_margin,
            nonincreasing: c.is_nonincreasing(CURVE_TOL * scale),
            convex: c.is_convex(CURVE_TOL * scale),
            samples,
            confidence_table,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FamilyMemberOut {
    pub confidence_factor: f64,
    pub clearance: Option<f64>,
    pub squared_jerk: f64,
    #[serde(flatten)]
    pub solution: SolutionOut,
}

#[derive(Debug, Serialize)]
pub struct FamilyOut {
    pub levels: Vec<f64>,
    pub members: Vec<FamilyMemberOut>,
}

#[derive(Debug, Serialize)]
pub struct PruneReportOut {
    pub total: usize,
    pub removed: usize,
    pub kept: usize,
    pub fraction_removed: f64,
    pub eps_prune: f64,
    pub max_node_deviation: f64,
    pub p_star_rel_deviation: f64,
    pub removed_ids: Vec<usize>,
    pub kept_ids: Vec<usize>,
}

/// Long-format plot data.
#[derive(Debug, Default)]
pub struct PlotData {
    rows: Vec<(String, usize, Vec<f64>)>,
    width: usize,
}

impl PlotData {
    pub fn add_points<'a>(&mut self, series: &str, points: impl IntoIterator<Item = &'a [f64]>) {
        for (i, p) in points.into_iter().enumerate() {
            self.width = self.width.max(p.len());
            self.rows.push((series.to_string(), i, p.to_vec()));
        }
    }

    pub fn add_nodes(&mut self, series: &str, x: &DMatrix<f64>) {
        let r = rows(x);
        self.add_points(series, r.iter().map(Vec::as_slice));
    }

    pub fn to_csv(&self) -> String {
        let names = ["x", "y", "z"];
        let mut out = String::from("series,index");
        for name in names.iter().take(self.width.max(2)) {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (s, i, p) in &self.rows {
            out.push_str(&format!("{s},{i}"));
            for k in 0..self.width.max(2) {
                match p.get(k) {
                    Some(v) => out.push_str(&format!(",{v:.16e}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let s = to_json(&vec![0.1, 1.0 / 3.0, f64::NAN]);
        assert_eq!(s, "[1.0000000000000001e-1,3.3333333333333331e-1,null]");
        let back: Vec<Option<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[1], Some(1.0 / 3.0));
    }

    #[test]
    fn plotdata_layout() {
        let mut p = PlotData::default();
        p.add_points("a", [[1.0, 2.0].as_slice(), [3.0, 4.0].as_slice()]);
        let csv = p.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "series,index,x,y");
        assert!(lines[2].starts_with("a,1,3.0"));
    }
}
