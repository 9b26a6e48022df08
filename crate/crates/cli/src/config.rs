//! Run configuration: defaults, then an optional TOML file, then flags.

use std::path::Path;

use anyhow::{Context, Result};
use idff::data::{AttractorKind, Toy2d};
use idff::experiments::ExperimentConfig;
use idff::sampling::{DivMode, GammaMode, TimeGrid};
use idff::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub nfe: usize,
    pub n: usize,
    pub seed: u64,
    /// Momentum coefficients; empty keeps the checkpoint's schedule.
    pub gamma: Vec<f64>,
    pub gamma_mode: GammaMode,
    pub final_step_deterministic: bool,
    /// Drift-only ODE instead of the SDE.
    pub ode: bool,
    /// Generated sequence length for time-series models.
    pub steps: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            nfe: 10,
            n: 4096,
            seed: 0,
            gamma: Vec::new(),
            gamma_mode: GammaMode::Normalized,
            final_step_deterministic: false,
            ode: false,
            steps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LikelihoodSection {
    pub nfe: usize,
    pub div: DivMode,
    pub probes: usize,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl Default for LikelihoodSection {
    fn default() -> Self {
        Self {
            nfe: 100,
            div: DivMode::ExactFd,
            probes: 8,
            grid: TimeGrid::Geometric,
            seed: 0,
        }
    }
}

/// Experiment settings apart from the shared training budget, which comes
/// from the `train` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub dataset: Toy2d,
    pub train_rows: usize,
    pub eval_samples: usize,
    pub nfe: usize,
    pub eval_nfe: usize,
    pub nfe_list: Vec<usize>,
    pub attractor: AttractorKind,
    pub attractor_trajectories: usize,
    pub attractor_steps: usize,
    pub attractor_stride: usize,
    pub free_run_steps: usize,
    pub plot_window: usize,
    pub self_test: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            dataset: e.dataset,
            train_rows: e.train_rows,
            eval_samples: e.eval_samples,
            nfe: e.nfe,
            eval_nfe: e.eval_nfe,
            nfe_list: e.nfe_list,
            attractor: e.attractor,
            attractor_trajectories: e.attractor_trajectories,
            attractor_steps: e.attractor_steps,
            attractor_stride: e.attractor_stride,
            free_run_steps: e.free_run_steps,
            plot_window: e.plot_window,
            self_test: e.self_test,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub likelihood: LikelihoodSection,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).map_err(|e| anyhow::Error::new(idff::Error::Config(format!("{}: {e}", p.display()))))
            }
        }
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn experiment_config(&self, threads: usize) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            train: self.train.clone(),
            dataset: e.dataset,
            train_rows: e.train_rows,
            eval_samples: e.eval_samples,
            nfe: e.nfe,
            eval_nfe: e.eval_nfe,
            nfe_list: e.nfe_list.clone(),
            attractor: e.attractor,
            attractor_trajectories: e.attractor_trajectories,
            attractor_steps: e.attractor_steps,
            attractor_stride: e.attractor_stride,
            free_run_steps: e.free_run_steps,
            plot_window: e.plot_window,
            threads,
            self_test: e.self_test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_snapshot() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.snapshot()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::parse("[train]\niters = 5\n[train.path]\nsigma0 = 0.2\n").unwrap();
        assert_eq!(c.train.iters, 5);
        assert_eq!(c.train.path.sigma0, 0.2);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.sample, SampleSection::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[train]\niterations = 5\n").is_err());
        assert!(RunConfig::parse("[bogus]\n").is_err());
        assert!(RunConfig::parse("[sample]\ngamma_mode = \"weird\"\n").is_err());
    }

    #[test]
    fn experiment_config_inherits_training_budget() {
        let mut c = RunConfig::default();
        c.train.iters = 17;
        c.experiment.nfe = 4;
        let e = c.experiment_config(2);
        assert_eq!((e.train.iters, e.nfe, e.threads), (17, 4, 2));
    }
}
