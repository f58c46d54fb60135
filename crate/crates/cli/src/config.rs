//! Experiment configuration files.
//!
//! Demonstration and obstacle paths are resolved against the directory that
//! holds the config file; the output directory is resolved against the
//! working directory.

use std::path::{Path, PathBuf};

use elmap::constraints::{make_point_constraint, ObstacleSet, PointConstraint};
use elmap::perturbation::GridSpec;
use elmap::pipeline::ReproductionSettings;
use elmap::qp::SolverTolerances;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Solve,
    Sweep,
    Family,
    PruneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub demos: Vec<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Uniform noise of this amplitude is added to every demonstration
    /// coordinate, drawn from `seed`.
    #[serde(default)]
    pub jitter: f64,
    /// Directory the config was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub alpha: f64,
    pub beta: f64,
    pub nodes: usize,
    pub gamma: Option<f64>,
    pub pin_endpoints: bool,
    pub endpoint_radius: f64,
    pub sigma_s: Option<f64>,
    pub tol: Option<f64>,
    pub eps_prune: f64,
    pub eps_r: f64,
}

impl Default for Params {
    fn default() -> Self {
        let d = ReproductionSettings::default();
        Self {
            alpha: d.alpha,
            beta: d.beta,
            nodes: d.nodes,
            gamma: None,
            pin_endpoints: d.pin_endpoints,
            endpoint_radius: d.endpoint_radius,
            sigma_s: None,
            tol: None,
            eps_prune: d.eps_prune,
            eps_r: d.eps_r,
        }
    }
}

/// A point constraint on node `node`, or on node `round(t·(N − 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub node: Option<usize>,
    pub t: Option<f64>,
    pub anchor: Vec<f64>,
    pub radius: f64,
    /// Coordinates the constraint applies to; all of them when absent.
    pub axes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    /// CSV point cloud, one point per row.
    pub path: Option<PathBuf>,
    pub circle: Option<CircleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub constraint: usize,
    pub samples: usize,
    pub initial_upper: Option<f64>,
    pub max_doublings: u32,
    pub delta: f64,
    pub eps_lambda: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            constraint: 0,
            samples: g.samples,
            initial_upper: None,
            max_doublings: g.max_doublings,
            delta: g.delta,
            eps_lambda: g.eps_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    pub levels: Vec<f64>,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self { levels: vec![0.0, 0.25, 0.5, 0.75, 1.0] }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.demos.is_empty() {
            return bad("no demonstration files given".into());
        }
        for p in &self.demos {
            if !self.resolve(p).is_file() {
                return bad(format!("demonstration file {} does not exist", self.resolve(p).display()));
            }
        }
        if self.params.nodes < 3 {
            return bad(format!("params.nodes must be at least 3, got {}", self.params.nodes));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            match (c.node, c.t) {
                (Some(_), Some(_)) | (None, None) => {
                    return bad(format!("constraints[{i}]: give exactly one of `node` and `t`"))
                }
                (None, Some(t)) if !(0.0..=1.0).contains(&t) => {
                    return bad(format!("constraints[{i}]: t = {t} is outside [0, 1]"))
                }
                _ => {}
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            match (&o.path, &o.circle) {
                (Some(p), None) if !self.resolve(p).is_file() => {
                    return bad(format!("obstacles[{i}]: file {} does not exist", self.resolve(p).display()))
                }
                (Some(_), None) => {}
                (None, Some(c)) if c.samples < 3 || !(c.radius > 0.0) => {
                    return bad(format!("obstacles[{i}]: circle needs radius > 0 and at least 3 samples"))
                }
                (None, Some(_)) => {}
                _ => return bad(format!("obstacles[{i}]: give exactly one of `path` and `circle`")),
            }
        }
        if self.sweep.samples < 3 {
            return bad("sweep.samples must be at least 3".into());
        }
        if let Some(l) = self.family.levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return bad(format!("family level {l} is outside [0, 1]"));
        }
        if !(self.jitter >= 0.0) {
            return bad("jitter must be non-negative".into());
        }
        Ok(())
    }

    pub fn settings(&self) -> ReproductionSettings {
        let p = &self.params;
        ReproductionSettings {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            nodes: p.nodes,
            tol: p.tol.map(SolverTolerances::uniform).unwrap_or_default(),
            eps_prune: p.eps_prune,
            eps_r: p.eps_r,
            pin_endpoints: p.pin_endpoints,
            endpoint_radius: p.endpoint_radius,
            sigma_s: p.sigma_s,
        }
    }

    pub fn grid(&self) -> GridSpec {
        let s = &self.sweep;
        GridSpec {
            samples: s.samples,
            initial_upper: s.initial_upper,
            max_doublings: s.max_doublings,
            delta: s.delta,
            eps_lambda: s.eps_lambda,
        }
    }

    pub fn point_constraints(&self, dim: usize) -> CliResult<Vec<PointConstraint>> {
        let n = self.params.nodes;
        self.constraints
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let node = c.node.unwrap_or_else(|| (c.t.unwrap_or(0.0) * (n - 1) as f64).round() as usize);
                if c.anchor.len() != dim {
                    return Err(CliError::Config(format!(
                        "constraints[{i}]: anchor has {} coordinates, demonstrations have {dim}",
                        c.anchor.len()
                    )));
                }
                let pc = make_point_constraint(node, c.anchor.clone(), c.radius, n)
                    .map_err(|e| CliError::Config(format!("constraints[{i}]: {e}")))?;
                Ok(match &c.axes {
                    None => pc,
                    Some(axes) => {
                        if axes.iter().any(|&a| a >= dim) || axes.is_empty() {
                            return Err(CliError::Config(format!("constraints[{i}]: invalid axes {axes:?}")));
                        }
                        pc.with_axes((0..dim).map(|k| axes.contains(&k)).collect())
                    }
                })
            })
            .collect()
    }

    pub fn obstacle_set(&self) -> CliResult<Option<ObstacleSet>> {
        if self.obstacles.is_empty() {
            return Ok(None);
        }
        let clouds = self
            .obstacles
            .iter()
            .map(|o| match (&o.path, &o.circle) {
                (Some(p), _) => crate::io::load_points(&self.resolve(p)),
                (_, Some(c)) => Ok(ObstacleSet::circle(c.center, c.radius, c.samples)),
                _ => Err(CliError::Config("obstacle without `path` or `circle`".into())),
            })
            .collect::<CliResult<Vec<_>>>()?;
        ObstacleSet::new(clouds).map(Some).map_err(|e| CliError::Config(format!("obstacles: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_demo(text: &str) -> (tempfile::TempDir, CliResult<ExperimentConfig>) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("demo.csv"), "0,0\n1,1\n2,0\n").unwrap();
        let cfg = ExperimentConfig::from_toml_str(text, dir.path());
        (dir, cfg)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let (_d, cfg) = with_demo("demos = [\"demo.csv\"]\n");
        let cfg = cfg.unwrap();
        assert_eq!(cfg.mode, Mode::Solve);
        assert_eq!(cfg.params.nodes, 100);
        assert_eq!(cfg.family.levels.len(), 5);
    }

    #[test]
    fn parameter_t_maps_to_nearest_node() {
        let text = "demos = [\"demo.csv\"]\n[params]\nnodes = 11\n[[constraints]]\nt = 0.26\nanchor = [1.0, 1.0]\nradius = 0.1\n";
        let (_d, cfg) = with_demo(text);
        let cons = cfg.unwrap().point_constraints(2).unwrap();
        assert_eq!(cons[0].node, 3);
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            "demos = [\"missing.csv\"]\n",
            "demos = [\"demo.csv\"]\nunknown = 1\n",
            "demos = [\"demo.csv\"]\n[[constraints]]\nnode = 1\nt = 0.5\nanchor = [0.0, 0.0]\nradius = 0.1\n",
            "demos = [\"demo.csv\"]\n[family]\nlevels = [1.5]\n",
            "demos = [\"demo.csv\"]\n[[obstacles]]\n",
            "demos = [\"demo.csv\"\n",
        ] {
            let (_d, cfg) = with_demo(text);
            assert!(matches!(cfg, Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn axes_become_a_mask() {
        let text = "demos = [\"demo.csv\"]\n[params]\nnodes = 5\n[[constraints]]\nnode = 2\nanchor = [1.0, 1.0]\nradius = 0.1\naxes = [1]\n";
        let (_d, cfg) = with_demo(text);
        let cons = cfg.unwrap().point_constraints(2).unwrap();
        assert_eq!(cons[0].axes, Some(vec![false, true]));
    }
}
