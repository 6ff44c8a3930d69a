//! JSON run configuration.
//!
//! Every field is optional; missing fields take the documented defaults and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::divergence::{FlowConfig, Normalization};
use crate::error::{range_err, Error, Result};
use crate::pipeline::PipelineConfig;
use crate::pruning::{IdapConfig, PruneSchedule};
use crate::trainer::TrainConfig;
use crate::truncation::{AcceptanceRule, TruncationConfig};

/// Architecture built by the `train` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Relu MLP on vector inputs.
    Mlp { hidden: Vec<usize> },
    /// Two conv layers and two dense layers on `[H, W, C]` images.
    Cnn { c1: usize, c2: usize, hidden: usize },
    /// Residual attention block on `[tokens, d_model]` inputs.
    Attention { heads: usize, d_k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub delta_max: f64,
    pub alpha: f64,
    pub rho0: f64,
    pub beta: f64,
    pub t_filter: usize,
    /// Budget of the standalone `prune-filters` command; defaults to
    /// `delta_max / 2`, the share the pipeline gives its first phase.
    pub tau: Option<f64>,
    pub gamma: f64,
    pub r_max: usize,
    /// Rule of the standalone `truncate-layers` command.
    pub acceptance_rule: AcceptanceRule,
    pub apply_beta: bool,
    pub recompute_profile: bool,
    pub epsilon: f64,
    pub lambda: f64,
    pub normalization: Normalization,
    pub neighborhood_radius: usize,
    pub num_classes: Option<usize>,
    pub model: Option<ModelSpec>,
    pub train: TrainConfig,
    /// Fine-tune after `prune-filters`.
    pub prune_ft: TrainConfig,
    pub local_ft: TrainConfig,
    pub intermediate_ft: TrainConfig,
    pub global_ft: TrainConfig,
    pub seed: u64,
    pub model_in: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let truncation = TruncationConfig::default();
        let schedule = PruneSchedule::default();
        let flow = FlowConfig::default();
        Self {
            delta_max: pipeline.delta_max,
            alpha: schedule.alpha,
            rho0: schedule.rho0,
            beta: pipeline.beta,
            t_filter: schedule.iterations,
            tau: None,
            gamma: truncation.gamma,
            r_max: truncation.r_max,
            acceptance_rule: truncation.acceptance_rule,
            apply_beta: pipeline.apply_beta,
            recompute_profile: truncation.recompute,
            epsilon: flow.epsilon,
            lambda: flow.lambda,
            normalization: flow.normalization,
            neighborhood_radius: truncation.radius,
            num_classes: None,
            model: None,
            train: TrainConfig::default(),
            prune_ft: truncation.local_ft.clone(),
            local_ft: truncation.local_ft,
            intermediate_ft: pipeline.intermediate_ft,
            global_ft: pipeline.global_ft,
            seed: 0,
            model_in: None,
            model_out: None,
            data: None,
            val: None,
            report_out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |field: &str, v: f64| {
            if v.is_nan() || v < 0.0 {
                Err(range_err(field, format!("{v} must be nonnegative")))
            } else {
                Ok(())
            }
        };
        nonneg("delta_max", self.delta_max)?;
        nonneg("beta", self.beta)?;
        nonneg("gamma", self.gamma)?;
        if let Some(tau) = self.tau {
            nonneg("tau", tau)?;
        }
        if let Some(0) = self.num_classes {
            return Err(range_err("num_classes", "must be at least 1"));
        }
        self.schedule().validate("")?;
        let flow = self.flow();
        flow.validate("")?;
        if self.r_max == 0 {
            return Err(range_err("r_max", "must be at least 1"));
        }
        for (name, cfg) in [
            ("train.", &self.train),
            ("prune_ft.", &self.prune_ft),
            ("local_ft.", &self.local_ft),
            ("intermediate_ft.", &self.intermediate_ft),
            ("global_ft.", &self.global_ft),
        ] {
            cfg.validate(name)?;
        }
        if let Some(spec) = &self.model {
            let zero = match spec {
                ModelSpec::Mlp { hidden } => hidden.contains(&0),
                ModelSpec::Cnn { c1, c2, hidden } => *c1 == 0 || *c2 == 0 || *hidden == 0,
                ModelSpec::Attention { heads, d_k } => *heads == 0 || *d_k == 0,
            };
            if zero {
                return Err(range_err("model", "layer sizes must be positive"));
            }
        }
        Ok(())
    }

    /// Sets the run seed and the seed of every training schedule.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        for cfg in [
            &mut self.train,
            &mut self.prune_ft,
            &mut self.local_ft,
            &mut self.intermediate_ft,
            &mut self.global_ft,
        ] {
            cfg.seed = seed;
        }
        self
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            epsilon: self.epsilon,
            normalization: self.normalization,
            lambda: self.lambda,
        }
    }

    pub fn schedule(&self) -> PruneSchedule {
        PruneSchedule {
            rho0: self.rho0,
            alpha: self.alpha,
            iterations: self.t_filter,
            tau: self.tau.unwrap_or(self.delta_max / 2.0),
        }
    }

    pub fn idap(&self) -> IdapConfig {
        IdapConfig {
            flow: self.flow(),
            fine_tune: self.prune_ft.clone(),
        }
    }

    pub fn truncation(&self) -> TruncationConfig {
        TruncationConfig {
            gamma: self.gamma,
            r_max: self.r_max,
            acceptance_rule: self.acceptance_rule,
            delta_max: self.delta_max,
            local_ft: self.local_ft.clone(),
            radius: self.neighborhood_radius,
            final_ft: self.global_ft.clone(),
            recompute: self.recompute_profile,
            max_candidate_flow: self.apply_beta.then_some(self.beta),
            flow: self.flow(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            delta_max: self.delta_max,
            schedule: self.schedule(),
            truncation: self.truncation(),
            flow: self.flow(),
            beta: self.beta,
            apply_beta: self.apply_beta,
            intermediate_ft: self.intermediate_ft.clone(),
            global_ft: self.global_ft.clone(),
        }
    }
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = super::read_text(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            path: path.display().to_string(),
            line: j.line(),
            detail: j.to_string(),
        },
        other => other,
    })
}

/// Parses config text; blank input yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text)?
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_has_published_defaults() {
        for text in ["", "{}"] {
            let cfg = parse_config(text).unwrap();
            assert_eq!(cfg.alpha, 1.2);
            assert_eq!(cfg.delta_max, 0.02);
            assert_eq!(cfg.rho0, 0.2);
            assert_eq!(cfg.beta, 0.1);
            assert_eq!(cfg.t_filter, 30);
        }
    }

    #[test]
    fn range_errors_name_the_field() {
        let err = parse_config(r#"{"alpha": -1}"#).unwrap_err();
        assert!(matches!(err, Error::Range { ref field, .. } if field == "alpha"), "{err}");
        let err = parse_config(r#"{"train": {"batch_size": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Range { ref field, .. } if field == "train.batch_size"), "{err}");
    }

    #[test]
    fn overrides_merge_with_defaults() {
        let cfg = parse_config(r#"{"delta_max": 0.05}"#).unwrap();
        assert_eq!(cfg.delta_max, 0.05);
        assert_eq!(cfg.alpha, 1.2);
        assert_eq!(cfg.schedule().tau, 0.025);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config(r#"{"alhpa": 1.0}"#).is_err());
        assert!(parse_config(r#"{"train": {"momentum": 0.9}}"#).is_err());
    }

    #[test]
    fn model_spec_parses() {
        let cfg = parse_config(r#"{"model": {"kind": "cnn", "c1": 4, "c2": 4, "hidden": 16}}"#).unwrap();
        assert_eq!(cfg.model, Some(ModelSpec::Cnn { c1: 4, c2: 4, hidden: 16 }));
    }
}
