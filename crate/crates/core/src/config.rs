//! Experiment configuration, read from TOML.
//!
//! Every key has a default, so an empty file (or just `task = 2`) is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Variant};
use crate::simlab::{GenConfig, Systems, Task};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the structured approximators and the learned Hamiltonian.
    pub hidden: Vec<usize>,
    /// Hidden widths of the naive and geometric baselines.
    pub baseline_hidden: Vec<usize>,
    pub mass_epsilon: f64,
    pub dissipation_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = ModelSpec::new(Variant::DissipativeSymoden, Task::Pendulum.representation(), Task::Pendulum.dims());
        Self {
            hidden: spec.hidden,
            baseline_hidden: spec.baseline_hidden,
            mass_epsilon: spec.mass_epsilon,
            dissipation_epsilon: spec.dissipation_epsilon,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, variant: Variant, task: Task) -> ModelSpec {
        let mut spec = ModelSpec::new(variant, task.representation(), task.dims());
        spec.hidden = self.hidden.clone();
        spec.baseline_hidden = self.baseline_hidden.clone();
        spec.mass_epsilon = self.mass_epsilon;
        spec.dissipation_epsilon = self.dissipation_epsilon;
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Points of the angle grid over `[-π, π]` for learned-function curves.
    pub grid_points: usize,
    /// Vector-field grid over `(q, p)` as `[q points, p points]`.
    pub portrait_grid: [usize; 2],
    /// Half-width of the momentum axis of the vector-field grid.
    pub portrait_momentum: f64,
    /// Steps of the learned and truth portrait trajectories.
    pub portrait_steps: usize,
    /// Shared initial condition `(q, p)` of the portrait trajectories.
    pub portrait_start: [f64; 2],
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { grid_points: 101, portrait_grid: [21, 21], portrait_momentum: 2.0, portrait_steps: 100, portrait_start: [1.5, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Variants to train; empty means every variant valid for the task.
    pub variants: Vec<Variant>,
    /// Seeds data generation, initialization and mini-batch order.
    pub seed: u64,
    pub out: PathBuf,
    pub data: GenConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub systems: Systems,
    pub plots: PlotConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Pendulum,
            variants: Vec::new(),
            seed: 0,
            out: PathBuf::from("runs"),
            data: GenConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            systems: Systems::default(),
            plots: PlotConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        Self { task, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Requested variants, or all applicable ones, in table order.
    pub fn variants(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            Variant::applicable(self.task.representation())
        } else {
            self.variants.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate(self.data.steps + 1)?;
        let repr = self.task.representation();
        for v in &self.variants {
            if !v.supports(repr) {
                return Err(Error::Config(format!("{v} is not defined for task {} ({repr} data)", self.task.id())));
            }
        }
        for v in self.variants() {
            self.model.spec(v, self.task).validate()?;
        }
        if self.plots.grid_points < 2 || self.plots.portrait_grid.iter().any(|&n| n < 2) {
            return Err(Error::Config("plot grids need at least two points per axis".into()));
        }
        Ok(())
    }
}
