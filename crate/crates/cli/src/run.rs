use std::path::{Path, PathBuf};

use elmap::constraints::{ObstacleSet, PointConstraint};
use elmap::perturbation::{check_sensitivity_bound, PerturbationCurve, Perturber, CURVE_TOL};
use elmap::pipeline::{obstacle_clearance, squared_jerk, Problem, Reproduction, ReproductionSettings};
use elmap::trajectory::DemonstrationSet;
use elmap::GridSpec;
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};
use crate::io::{jitter, load_demonstrations};
use crate::output::{
    kind_name, write_json, CurveOut, FamilyMemberOut, FamilyOut, PlotData, PruneReportOut, SolutionOut,
};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub sigma_s: Option<f64>,
    pub levels: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> CliResult<()> {
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(s) = self.sigma_s {
            cfg.params.sigma_s = Some(s);
        }
        if let Some(l) = &self.levels {
            cfg.family.levels = l.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tol {
            cfg.params.tol = Some(t);
        }
        if let Some(s) = cfg.params.sigma_s {
            if !(0.0..=1.0).contains(&s) {
                return Err(CliError::Config(format!("sigma_s = {s} is outside [0, 1]")));
            }
        }
        if let Some(t) = cfg.params.tol {
            if !(t > 0.0) {
                return Err(CliError::Config(format!("tol = {t} must be positive")));
            }
        }
        cfg.validate()
    }
}

/// Everything a run needs, read from disk.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub demos: DemonstrationSet,
    pub constraints: Vec<PointConstraint>,
    pub obstacles: Option<ObstacleSet>,
    pub settings: ReproductionSettings,
    pub grid: GridSpec,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> CliResult<Self> {
        let mut all = Vec::new();
        for p in &cfg.demos {
            all.extend(load_demonstrations(&cfg.resolve(p))?.demos().iter().cloned());
        }
        let demos = DemonstrationSet::new(all).map_err(|e| CliError::Config(format!("demonstrations: {e}")))?;
        let demos = jitter(&demos, cfg.jitter, cfg.seed);
        let constraints = cfg.point_constraints(demos.dim())?;
        let obstacles = cfg.obstacle_set()?;
        Ok(Self { demos, constraints, obstacles, settings: cfg.settings(), grid: cfg.grid() })
    }

    pub fn problem(&self) -> CliResult<Problem> {
        Ok(Problem::build(&self.demos, &self.constraints, self.obstacles.as_ref(), &self.settings)?)
    }

    /// The same problem without obstacle constraints.
    pub fn unconstrained(&self) -> CliResult<Reproduction> {
        let p = Problem::build(&self.demos, &self.constraints, None, &self.settings)?;
        Ok(p.reproduce(None, self.settings.eps_prune)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl RunSummary {
    fn file(&mut self, p: PathBuf) {
        self.files.push(p);
    }
}

#[derive(Serialize)]
struct CertificateOut<'a> {
    conflicting: &'a [usize],
    constraints: Vec<crate::output::ConstraintOut>,
}

fn add_inputs(plot: &mut PlotData, inputs: &Inputs) {
    for (k, d) in inputs.demos.demos().iter().enumerate() {
        plot.add_nodes(&format!("demo_{k}"), d.points());
    }
    if let Some(obs) = &inputs.obstacles {
        for (k, cloud) in obs.clouds().iter().enumerate() {
            plot.add_points(&format!("obstacle_{k}"), cloud.iter().map(Vec::as_slice));
        }
    }
}

/// Runs `mode` and writes its artifacts under `cfg.output`. An infeasible
/// problem leaves `certificate.json` behind before the error is returned.
pub fn run(cfg: &ExperimentConfig, mode: Mode) -> CliResult<RunSummary> {
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let inputs = Inputs::load(cfg)?;
    let result = match mode {
        Mode::Solve => run_solve(&inputs, &out, false),
        Mode::PruneReport => run_solve(&inputs, &out, true),
        Mode::Sweep => run_sweep(&inputs, cfg.sweep.constraint, &out),
        Mode::Family => run_family(&inputs, &cfg.family.levels, &out),
    };
    if let Err(CliError::Solve(elmap::Error::Infeasible { conflicting })) = &result {
        let cons = inputs.problem().map(|p| p.user_constraints()).unwrap_or_default();
        let dump = CertificateOut {
            conflicting,
            constraints: conflicting
                .iter()
                .filter_map(|&i| cons.get(i).map(|c| (i, c)))
                .map(|(id, c)| crate::output::ConstraintOut {
                    id,
                    kind: kind_name(c),
                    node: c.node,
                    anchor: c.anchor.clone(),
                    radius: c.radius,
                    perturbation: c.perturbation,
                    lambda: f64::NAN,
                    pruned: false,
                })
                .collect(),
        };
        write_json(&out.join("certificate.json"), &dump)?;
    }
    result
}

fn run_solve(inputs: &Inputs, out: &Path, prune_report: bool) -> CliResult<RunSummary> {
    let mut summary = RunSummary::default();
    let problem = inputs.problem()?;
    let rep = problem.reproduce(inputs.settings.sigma_s, inputs.settings.eps_prune)?;
    let path = out.join("solution.json");
    write_json(&path, &SolutionOut::from(&rep))?;
    summary.file(path);
    summary.lines.push(format!(
        "p* = {:.10e}, gap = {:.3e}, {} of {} constraints kept",
        rep.solution.p_star,
        rep.full_solution.gap,
        rep.active_ids.len(),
        rep.constraints.len()
    ));

    let mut plot = PlotData::default();
    add_inputs(&mut plot, inputs);
    plot.add_nodes("target", &problem.frame.nodes_to_user(&problem.target.points));
    if inputs.obstacles.is_some() {
        plot.add_nodes("unconstrained", &inputs.unconstrained()?.nodes);
    }
    plot.add_nodes("reproduction", &rep.nodes);
    let path = out.join("plotdata.csv");
    plot.write(&path)?;
    summary.file(path);

    if prune_report {
        let total = rep.constraints.len();
        let report = PruneReportOut {
            total,
            removed: rep.removed_ids.len(),
            kept: rep.active_ids.len(),
            fraction_removed: if total == 0 { 0.0 } else { rep.removed_ids.len() as f64 / total as f64 },
            eps_prune: inputs.settings.eps_prune,
            max_node_deviation: rep.prune_check.max_node_deviation,
            p_star_rel_deviation: rep.prune_check.p_star_rel_deviation,
            removed_ids: rep.removed_ids.clone(),
            kept_ids: rep.active_ids.clone(),
        };
        summary.lines.push(format!(
            "pruned {} of {} constraints ({:.1}%), re-solve moved nodes by {:.3e}",
            report.removed,
            total,
            100.0 * report.fraction_removed,
            report.max_node_deviation
        ));
        let path = out.join("prune_report.json");
        write_json(&path, &report)?;
        summary.file(path);
    }
    Ok(summary)
}

/// Sweeps constraint `id` of `problem` (ids as in [`Problem::constraints`])
/// and returns the curve in data units.
pub fn sweep_problem(problem: &Problem, id: usize, grid: &GridSpec) -> CliResult<PerturbationCurve> {
    let s = problem.frame.scale;
    let unit_grid = GridSpec { initial_upper: grid.initial_upper.map(|u| u / s), eps_lambda: grid.eps_lambda / s, ..*grid };
    let perturber = Perturber::new(&problem.objective, &problem.constraints, problem.eps_r, problem.tol);
    let curve = perturber.analyze(id, &unit_grid)?;
    Ok(curve.to_user(&problem.frame))
}

fn run_sweep(inputs: &Inputs, id: usize, out: &Path) -> CliResult<RunSummary> {
    let mut summary = RunSummary::default();
    let problem = inputs.problem()?;
    if id >= problem.constraints.len() {
        return Err(CliError::Config(format!(
            "sweep.constraint = {id}, but the problem has {} constraints",
            problem.constraints.len()
        )));
    }
    let rep = problem.reproduce(inputs.settings.sigma_s, inputs.settings.eps_prune)?;
    let curve = sweep_problem(&problem, id, &inputs.grid)?;
    let curve_out = CurveOut::from(&curve);
    summary.lines.push(format!(
        "{} samples, u_upper = {:?}, bound holds: {}, nonincreasing: {}, convex: {}",
        curve.samples.len(),
        curve.u_upper,
        curve_out.bound_holds,
        curve_out.nonincreasing,
        curve_out.convex
    ));

    for (name, value) in [("solution.json", None), ("curve.json", Some(&curve_out))] {
        let path = out.join(name);
        match value {
            None => write_json(&path, &SolutionOut::from(&rep))?,
            Some(c) => write_json(&path, c)?,
        }
        summary.file(path);
    }

    let mut plot = PlotData::default();
    add_inputs(&mut plot, inputs);
    plot.add_nodes("reproduction", &rep.nodes);
    let feasible: Vec<_> = curve.feasible().collect();
    plot.add_points("p_star", feasible.iter().map(|s| [s.u, s.p_star]).collect::<Vec<_>>().iter().map(|p| p.as_slice()));
    plot.add_points(
        "bound",
        feasible.iter().map(|s| [s.u, curve.p0 - curve.lambda0 * s.u]).collect::<Vec<_>>().iter().map(|p| p.as_slice()),
    );
    let upper = curve.u_upper.unwrap_or(f64::INFINITY);
    for (k, s) in feasible.iter().enumerate().filter(|(_, s)| s.u <= upper) {
        plot.add_nodes(&format!("sample_{k}"), &s.x_star);
    }
    let path = out.join("plotdata.csv");
    plot.write(&path)?;
    summary.file(path);
    Ok(summary)
}

fn run_family(inputs: &Inputs, levels: &[f64], out: &Path) -> CliResult<RunSummary> {
    let mut summary = RunSummary::default();
    let family = elmap::pipeline::confidence_family(
        &inputs.demos,
        &inputs.constraints,
        inputs.obstacles.as_ref(),
        levels,
        &inputs.settings,
    )?;
    let mut members = Vec::new();
    let mut plot = PlotData::default();
    add_inputs(&mut plot, inputs);
    for (level, rep) in levels.iter().zip(&family) {
        let clearance = inputs.obstacles.as_ref().map(|o| obstacle_clearance(&rep.nodes, o)).transpose()?;
        summary.lines.push(format!("sigma_s = {level}: p* = {:.10e}, clearance = {clearance:?}", rep.solution.p_star));
        plot.add_nodes(&format!("level_{level}"), &rep.nodes);
        members.push(FamilyMemberOut {
            confidence_factor: *level,
            clearance,
            squared_jerk: squared_jerk(&rep.nodes),
            solution: SolutionOut::from(rep),
        });
    }
    let path = out.join("family.json");
    write_json(&path, &FamilyOut { levels: levels.to_vec(), members })?;
    summary.file(path);
    let path = out.join("plotdata.csv");
    plot.write(&path)?;
    summary.file(path);
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

/// Runs the invariant suite on a config without writing anything.
pub fn validate(cfg: &ExperimentConfig) -> CliResult<Vec<Check>> {
    let inputs = Inputs::load(cfg)?;
    let problem = inputs.problem()?;
    let tol = inputs.settings.tol;
    let rep = problem.reproduce(inputs.settings.sigma_s, inputs.settings.eps_prune)?;
    let p = rep.solution.p_star;
    let mut checks = vec![
        check("kkt residuals", rep.kkt.within(&tol, p / (problem.frame.scale * problem.frame.scale)), format!("{:?}", rep.kkt)),
        check("strong duality", rep.full_solution.gap <= 1e-6 * p.abs().max(1.0), format!("gap = {:.3e}", rep.full_solution.gap)),
        check(
            "constraints satisfied",
            rep.violations(tol.feas * problem.frame.scale).is_empty(),
            format!("violated: {:?}", rep.violations(tol.feas * problem.frame.scale)),
        ),
        check(
            "pruned re-solve",
            rep.prune_check.max_node_deviation <= 1e-5 * problem.frame.scale && rep.prune_check.p_star_rel_deviation <= 1e-6,
            format!("{:?}", rep.prune_check),
        ),
    ];
    if matches!(cfg.mode, Mode::Sweep) && cfg.sweep.constraint < problem.constraints.len() {
        let curve = sweep_problem(&problem, cfg.sweep.constraint, &inputs.grid)?;
        let scale = curve.p0.abs().max(1.0);
        let report = check_sensitivity_bound(&curve);
        checks.push(check(
            "sensitivity bound",
            report.worst_margin >= -CURVE_TOL * scale,
            format!("worst margin {:.3e}", report.worst_margin),
        ));
        checks.push(check("p* nonincreasing", curve.is_nonincreasing(CURVE_TOL * scale), String::new()));
        checks.push(check("p* convex", curve.is_convex(CURVE_TOL * scale), format!("violation {:.3e}", curve.convexity_violation())));
    }
    if matches!(cfg.mode, Mode::Family) {
        let fam = elmap::pipeline::confidence_family(
            &inputs.demos,
            &inputs.constraints,
            inputs.obstacles.as_ref(),
            &cfg.family.levels,
            &inputs.settings,
        )?;
        let mut sorted: Vec<(f64, f64)> = cfg.family.levels.iter().copied().zip(fam.iter().map(|r| r.solution.p_star)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ok = sorted.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-8 * w[0].1.abs().max(1.0));
        checks.push(check("p* nondecreasing in sigma_s", ok, format!("{sorted:?}")));
    }
    Ok(checks)
}

