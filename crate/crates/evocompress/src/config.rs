//! Run configuration: one JSON document naming the task, the assets, the
//! evaluator and the engine settings. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use evocompress_core::engine::EngineConfig;
use evocompress_core::evaluator::{BuiltinEvaluator, Dataset, Evaluator, SyntheticLandscape, ConstantEvaluator};
use evocompress_core::genome::{GenomeSchema, Task};
use evocompress_core::model::{ModelSpec, TensorStore};
use serde::{Deserialize, Serialize};

use crate::container::load_model;
use crate::dataset::load_dataset;
use crate::error::{AppError, Result};
use crate::external::{ExternalEvaluator, WorkerCommand, DEFAULT_TIMEOUT};
use crate::parallel::Parallel;

fn default_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    /// Forward pass over the validation subset of `dataset`.
    #[default]
    Builtin,
    Synthetic { base_accuracy: f64, coefficients: Vec<f64> },
    Constant { accuracy: f64 },
    /// Worker processes speaking the evaluation protocol; `command[0]` is the
    /// program.
    External {
        command: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pareto_thresholds: Vec<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(|e| AppError::parse(origin, e))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        config.model = base.join(&config.model);
        config.dataset = config.dataset.map(|d| base.join(d));
        config.engine.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        RunConfig::from_json(&text, path)
    }
}

/// Everything a run reads from disk.
pub struct Assets {
    pub model: ModelSpec,
    pub tensors: TensorStore,
    /// The validation subset, present when a dataset is configured.
    pub validation: Option<Dataset>,
}

impl Assets {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let (model, tensors) = load_model(&config.model)?;
        let validation = match &config.dataset {
            Some(path) => {
                let classes = model.layers().last().map_or(0, |l| l.m);
                Some(load_dataset(path, classes)?.validation_subset(config.validation_fraction)?)
            }
            None => None,
        };
        Ok(Assets {
            model,
            tensors,
            validation,
        })
    }

    /// Files whose hashes identify the run inputs.
    pub fn paths(config: &RunConfig) -> Vec<&Path> {
        let mut paths = vec![config.model.as_path()];
        paths.extend(config.dataset.as_deref());
        paths
    }
}

/// Builds the configured evaluator; `workers` bounds concurrent evaluations.
pub fn build_evaluator<'a>(
    config: &RunConfig,
    assets: &'a Assets,
    workers: usize,
) -> Result<Box<dyn Evaluator + Sync + 'a>> {
    let schema = GenomeSchema::build(&assets.model, config.task)?;
    Ok(match &config.evaluator {
        EvaluatorConfig::Builtin => {
            let dataset = assets
                .validation
                .as_ref()
                .ok_or_else(|| AppError::Usage("the builtin evaluator needs a `dataset`".into()))?;
            let eval = BuiltinEvaluator::new(&assets.model, &assets.tensors, dataset)?;
            Box::new(Parallel::new(eval, workers))
        }
        EvaluatorConfig::Synthetic {
            base_accuracy,
            coefficients,
        } => Box::new(SyntheticLandscape::new(*base_accuracy, coefficients.clone(), &schema)?),
        EvaluatorConfig::Constant { accuracy } => {
            if !(0.0..=1.0).contains(accuracy) {
                return Err(AppError::Usage(format!("constant accuracy {accuracy} outside [0, 1]")));
            }
            Box::new(ConstantEvaluator(*accuracy))
        }
        EvaluatorConfig::External { command, timeout_secs } => {
            let (program, args) = command
                .split_first()
                .ok_or_else(|| AppError::Usage("external evaluator `command` is empty".into()))?;
            let timeout = match timeout_secs {
                Some(s) if *s > 0.0 && s.is_finite() => Duration::from_secs_f64(*s),
                Some(s) => return Err(AppError::Usage(format!("timeout_secs {s} must be positive"))),
                None => DEFAULT_TIMEOUT,
            };
            let command = WorkerCommand {
                program: program.clone(),
                args: args.to_vec(),
                timeout,
            };
            Box::new(ExternalEvaluator::launch(command, workers, &schema, &assets.model)?)
        }
    })
}
