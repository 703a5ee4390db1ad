//! Run configuration files (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use slac_core::actor_critic::{NetworkConfig, TrainConfig};
use slac_core::grid::{validate_setup, GridAxis};
use slac_core::ocp::{control_lattice, ControlProblem, ProblemSpec};
use slac_core::rollout::RolloutConfig;
use slac_core::sl::SlOperatorConfig;

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Default output directory; `--out` wins over it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub problem: ProblemSpec,
    pub actor: NetworkConfig,
    pub critic: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub axes: Vec<GridAxis>,
    /// Samples per control coordinate, endpoints included.
    #[serde(default = "three")]
    pub controls_per_dim: usize,
    /// Defaults to `train.dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Defaults to `train.mu`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

fn three() -> usize {
    3
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_sweeps() -> usize {
    20_000
}

/// Where rollout initial states come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStates {
    /// The training sampler.
    #[default]
    Domain,
    /// Training sampler with the first two coordinates redrawn uniformly
    /// (by area) from an annulus.
    Annulus { r_min: f64, r_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    /// Defaults to `train.dt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_max: f64,
    pub runs: usize,
    pub domain_margin: f64,
    pub stop_at_target: bool,
    /// Attitude bound for the settling statistics.
    pub settle_tolerance: f64,
    pub initial: InitialStates,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            dt: None,
            t_max: 20.0,
            runs: 100,
            domain_margin: 2.0,
            stop_at_target: true,
            settle_tolerance: 0.05,
            initial: InitialStates::Domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub test_points: usize,
    /// Lattice points per axis for the sign check.
    pub sign_lattice: usize,
    /// Minimum distance from the switching curve for the sign check.
    pub sign_margin: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            test_points: 3200,
            sign_lattice: 101,
            sign_margin: 0.2,
        }
    }
}

/// Configurations shipped with the binary.
pub const PRESETS: [(&str, &str); 3] = [
    ("double_integrator", include_str!("../presets/double_integrator.cfg")),
    ("dubins", include_str!("../presets/dubins.cfg")),
    ("trace", include_str!("../presets/trace.cfg")),
];

impl RunConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).context(format!("reading {}", path.display()))?;
        Self::parse(&text).context(format!("in {}", path.display()))
    }

    pub fn preset(name: &str) -> CliResult<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            CliError::config(format!("unknown preset `{name}`; available: {}", names.join(", ")))
        })?;
        Self::parse(text).context(format!("preset {name}"))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::runtime(format!("serializing config: {e}")))
    }

    pub fn build_problem(&self) -> CliResult<Arc<dyn ControlProblem>> {
        self.problem.build().context("problem")
    }

    pub fn validate(&self) -> CliResult<()> {
        let p = self.build_problem()?;
        self.actor.layers(p.feature_dim(), p.control_dim()).context("actor")?;
        self.critic.layers(p.feature_dim(), 1).context("critic")?;
        self.train.validate().context("train")?;
        if let Some(g) = &self.grid {
            if g.max_sweeps == 0 {
                return Err(CliError::config("grid.max_sweeps must be positive"));
            }
            if !(g.tolerance > 0.0) {
                return Err(CliError::config("grid.tolerance must be positive"));
            }
            let controls = control_lattice(p.as_ref(), g.controls_per_dim).context("grid.controls_per_dim")?;
            validate_setup(p.as_ref(), &g.axes, &controls).context("grid.axes")?;
            self.grid_operator()?;
        }
        self.rollout_config(None).validate().context("rollout")?;
        if !(self.rollout.settle_tolerance > 0.0) {
            return Err(CliError::config("rollout.settle_tolerance must be positive"));
        }
        if let InitialStates::Annulus { r_min, r_max } = self.rollout.initial {
            if p.state_dim() < 2 || !(0.0 <= r_min && r_min < r_max) {
                return Err(CliError::config("rollout.initial: annulus needs 0 <= r_min < r_max and a planar state"));
            }
        }
        let e = &self.evaluate;
        if e.test_points == 0 || e.sign_lattice < 2 || !(e.sign_margin >= 0.0) {
            return Err(CliError::config(
                "evaluate: test_points >= 1, sign_lattice >= 2 and sign_margin >= 0 are required",
            ));
        }
        Ok(())
    }

    /// Operator used by the grid reference.
    pub fn grid_operator(&self) -> CliResult<SlOperatorConfig> {
        let g = self.grid.as_ref().ok_or_else(|| CliError::config("config has no [grid] section"))?;
        SlOperatorConfig::new(g.dt.unwrap_or(self.train.dt), g.mu.unwrap_or(self.train.mu)).context("grid")
    }

    pub fn rollout_config(&self, dt_override: Option<f64>) -> RolloutConfig {
        let r = &self.rollout;
        RolloutConfig {
            dt: dt_override.or(r.dt).unwrap_or(self.train.dt),
            t_max: r.t_max,
            domain_margin: r.domain_margin,
            stop_at_target: r.stop_at_target,
        }
    }
}
