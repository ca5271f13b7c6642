//! Key-value configuration files.
//!
//! Format: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored. Unknown keys are rejected with the offending name.
//! The optional `profile` key (`desk` or `paper`) selects the base
//! defaults; every other key overrides one field.
//!
//! ```text
//! profile = desk
//! scenario.n_ue = 50
//! scenario.n_ap = 8
//! objective.mu_h = 6.0
//! experiment.p_sweep = 4,8,12
//! experiment.methods = baseline1,baseline4_10it,dujad
//! ```
//!
//! Keys:
//! - `scenario.{n_ue, n_ap, ant_per_ap, pilot_len, data_len,
//!   activity_prob, qpsk_amp, area_side, ue_height, ap_height, tx_power_w,
//!   power_ctrl_range_db, shadow_std_db, noise_figure_db, bandwidth_hz,
//!   carrier_hz, noise_temp_k, rng_seed, pilot_power, noise_scale}`
//! - `objective.{mu_h, mu_x, tau}`
//! - `solver.{fbs_tol, init_max_iter, init_tol, step_rule, t_aud}`
//! - `train.{n_train, n_val, batch_size, epochs, step_rule, base_lr,
//!   spsa_perturb, seed, param_init, layers}`
//! - `experiment.{trials, p_sweep, methods, seed, checkpoint, output,
//!   timing, gen_count}`

use crate::error::{CoreError, Result};
use crate::fbs::{ObjectiveParams, StepRule};
use crate::harness::{ExperimentConfig, Method, Timing};
use crate::io::read_checkpoint;
use crate::scenario::ScenarioConfig;
use crate::trainer::{LrSchedule, TrainConfig};
use std::path::{Path, PathBuf};

/// Solver knobs shared by the baselines and the initialization stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub fbs_tol: f64,
    pub init_max_iter: usize,
    pub init_tol: f64,
    pub step_rule: StepRule,
    /// Channel-energy activity threshold of the baseline detectors.
    pub t_aud: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            fbs_tol: 1e-3,
            init_max_iter: 200,
            init_tol: 1e-3,
            step_rule: StepRule::BarzilaiBorwein,
            t_aud: 0.3,
        }
    }
}

/// Experiment-level settings from the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub trials: usize,
    pub p_sweep: Vec<usize>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub timing: Timing,
    /// Instance count written by the `gen` subcommand.
    pub gen_count: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            trials: 500,
            p_sweep: vec![4, 8, 12],
            methods: vec![
                Method::Baseline1,
                Method::Baseline4Full,
                Method::Baseline4Short,
                Method::DuJad,
            ],
            seed: 1,
            checkpoint: None,
            output: None,
            timing: Timing::None,
            gen_count: 200,
        }
    }
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub objective: ObjectiveParams,
    pub solver: SolverSettings,
    pub train: TrainConfig,
    pub experiment: ExperimentSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config::desk_defaults()
    }
}

impl Config {
    /// CI-sized defaults.
    pub fn desk_defaults() -> Self {
        let scenario = ScenarioConfig::desk_profile();
        Config {
            objective: ObjectiveParams::new(8.0, 1.0, scenario.qpsk_amp, 1e-3),
            scenario,
            solver: SolverSettings::default(),
            train: TrainConfig::default(),
            experiment: ExperimentSettings::default(),
        }
    }

    /// Full-scale defaults (400 UEs, 20..100 APs, 5000 trials).
    pub fn paper_defaults() -> Self {
        let scenario = ScenarioConfig::paper_profile();
        Config {
            objective: ObjectiveParams::new(12.0, 1.0, scenario.qpsk_amp, 1e-3),
            scenario,
            solver: SolverSettings::default(),
            train: TrainConfig::default(),
            experiment: ExperimentSettings {
                trials: 5000,
                p_sweep: vec![20, 40, 60, 80, 100],
                ..ExperimentSettings::default()
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Config::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, origin: &str) -> Result<Config> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CoreError::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            pairs.push((
                idx + 1,
                key.trim().to_string(),
                value.trim().to_string(),
            ));
        }

        // Profile first, regardless of position.
        let mut cfg = match pairs.iter().find(|(_, k, _)| k == "profile") {
            None => Config::desk_defaults(),
            Some((line, _, v)) => match v.as_str() {
                "desk" => Config::desk_defaults(),
                "paper" => Config::paper_defaults(),
                other => {
                    return Err(CoreError::Parse {
                        path: origin.to_string(),
                        line: *line,
                        reason: format!("unknown profile `{other}` (expected desk or paper)"),
                    })
                }
            },
        };

        for (line, key, value) in &pairs {
            if key == "profile" {
                continue;
            }
            cfg.apply(key, value).map_err(|e| CoreError::Parse {
                path: origin.to_string(),
                line: *line,
                reason: e.to_string(),
            })?;
        }
        cfg.scenario.validate()?;
        cfg.objective.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| CoreError::config(key, format!("cannot parse `{value}`")))
        }
        match key {
            "scenario.n_ue" => self.scenario.n_ue = num(key, value)?,
            "scenario.n_ap" => self.scenario.n_ap = num(key, value)?,
            "scenario.ant_per_ap" => self.scenario.ant_per_ap = num(key, value)?,
            "scenario.pilot_len" => self.scenario.pilot_len = num(key, value)?,
            "scenario.data_len" => self.scenario.data_len = num(key, value)?,
            "scenario.activity_prob" => self.scenario.activity_prob = num(key, value)?,
            "scenario.qpsk_amp" => {
                self.scenario.qpsk_amp = num(key, value)?;
                self.objective.b = self.scenario.qpsk_amp;
            }
            "scenario.area_side" => self.scenario.area_side = num(key, value)?,
            "scenario.ue_height" => self.scenario.ue_height = num(key, value)?,
            "scenario.ap_height" => self.scenario.ap_height = num(key, value)?,
            "scenario.tx_power_w" => self.scenario.tx_power_w = num(key, value)?,
            "scenario.power_ctrl_range_db" => {
                self.scenario.power_ctrl_range_db = num(key, value)?
            }
            "scenario.shadow_std_db" => self.scenario.shadow_std_db = num(key, value)?,
            "scenario.noise_figure_db" => self.scenario.noise_figure_db = num(key, value)?,
            "scenario.bandwidth_hz" => self.scenario.bandwidth_hz = num(key, value)?,
            "scenario.carrier_hz" => self.scenario.carrier_hz = num(key, value)?,
            "scenario.noise_temp_k" => self.scenario.noise_temp_k = num(key, value)?,
            "scenario.rng_seed" => self.scenario.rng_seed = num(key, value)?,
            "scenario.pilot_power" => self.scenario.pilot_power = num(key, value)?,
            "scenario.noise_scale" => self.scenario.noise_scale = num(key, value)?,
            "objective.mu_h" => self.objective.mu_h = num(key, value)?,
            "objective.mu_x" => self.objective.mu_x = num(key, value)?,
            "objective.tau" => self.objective.tau = num(key, value)?,
            "solver.fbs_tol" => self.solver.fbs_tol = num(key, value)?,
            "solver.init_max_iter" => self.solver.init_max_iter = num(key, value)?,
            "solver.init_tol" => self.solver.init_tol = num(key, value)?,
            "solver.step_rule" => {
                self.solver.step_rule = match value {
                    "bb" => StepRule::BarzilaiBorwein,
                    "fixed" => StepRule::Fixed,
                    other => {
                        return Err(CoreError::config(
                            key,
                            format!("unknown step rule `{other}` (expected bb or fixed)"),
                        ))
                    }
                }
            }
            "solver.t_aud" => self.solver.t_aud = num(key, value)?,
            "train.n_train" => self.train.n_train = num(key, value)?,
            "train.n_val" => self.train.n_val = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.step_rule" => {
                self.train.step_rule = match value {
                    "fixed" => LrSchedule::Fixed,
                    "decaying" => LrSchedule::Decaying,
                    other => {
                        return Err(CoreError::config(
                            key,
                            format!("unknown schedule `{other}` (expected fixed or decaying)"),
                        ))
                    }
                }
            }
            "train.base_lr" => self.train.base_lr = num(key, value)?,
            "train.spsa_perturb" => self.train.spsa_perturb = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "train.param_init" => self.train.param_init = value.parse()?,
            "train.layers" => self.train.layers = num(key, value)?,
            "experiment.trials" => self.experiment.trials = num(key, value)?,
            "experiment.p_sweep" => {
                let sweep: Result<Vec<usize>> = value
                    .split(',')
                    .map(|t| num::<usize>(key, t.trim()))
                    .collect();
                self.experiment.p_sweep = sweep?;
            }
            "experiment.methods" => {
                let methods: Result<Vec<Method>> =
                    value.split(',').map(|t| t.trim().parse()).collect();
                self.experiment.methods = methods?;
            }
            "experiment.seed" => self.experiment.seed = num(key, value)?,
            "experiment.checkpoint" => self.experiment.checkpoint = Some(PathBuf::from(value)),
            "experiment.output" => self.experiment.output = Some(PathBuf::from(value)),
            "experiment.timing" => self.experiment.timing = value.parse()?,
            "experiment.gen_count" => self.experiment.gen_count = num(key, value)?,
            other => {
                return Err(CoreError::config(
                    other,
                    "unknown configuration key".to_string(),
                ))
            }
        }
        Ok(())
    }

    /// Assembles the harness configuration, loading the checkpoint when one
    /// is configured.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let checkpoint = match &self.experiment.checkpoint {
            Some(path) => Some(read_checkpoint(path)?),
            None => None,
        };
        Ok(ExperimentConfig {
            scenario: self.scenario.clone(),
            objective: self.objective.clone(),
            methods: self.experiment.methods.clone(),
            trials: self.experiment.trials,
            p_sweep: self.experiment.p_sweep.clone(),
            checkpoint,
            seed: self.experiment.seed,
            fbs_tol: self.solver.fbs_tol,
            init_max_iter: self.solver.init_max_iter,
            init_tol: self.solver.init_tol,
            step_rule: self.solver.step_rule,
            t_aud: self.solver.t_aud,
            timing: self.experiment.timing,
        })
    }
}
