//! Flow-guided layer truncation.
//!
//! Layers are tried for removal in ascending order of flow score. A trial
//! replaces the layer with an identity (or a near-identity projection when
//! the shape changes), fine-tunes the neighbouring layers and keeps the
//! result if the acceptance rule holds; otherwise the layer is marked
//! essential.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::divergence::{compute_profile, DivergenceProfile, FlowConfig};
use crate::error::{range_err, Error, Result};
use crate::network::{LayerKind, Network};
use crate::trainer::{evaluate, fine_tune, Metrics, Scope, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptanceRule {
    /// Keep a removal only if validation error strictly decreases.
    ErrorImproves,
    /// Keep a removal while the accuracy drop against the reference stays
    /// within `delta_max`.
    WithinBudget,
}

impl FromStr for AcceptanceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error-improves" => Ok(Self::ErrorImproves),
            "within-budget" => Ok(Self::WithinBudget),
            other => Err(range_err("acceptance_rule", format!("unknown rule `{other}`"))),
        }
    }
}

impl fmt::Display for AcceptanceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ErrorImproves => "error-improves",
            Self::WithinBudget => "within-budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    /// Target cumulative error reduction, as a fraction of the entry error.
    /// Only used by [`AcceptanceRule::ErrorImproves`].
    pub gamma: f64,
    pub r_max: usize,
    pub acceptance_rule: AcceptanceRule,
    /// Budget for [`AcceptanceRule::WithinBudget`].
    pub delta_max: f64,
    /// Fine-tuning of the replaced layer's neighbourhood after each trial.
    pub local_ft: TrainConfig,
    pub radius: usize,
    /// Fine-tuning of the whole network after the loop; zero epochs skips it.
    pub final_ft: TrainConfig,
    /// Recompute the profile after every accepted removal instead of
    /// reusing the entry ranking.
    pub recompute: bool,
    /// Only layers with a flow score at most this value are candidates.
    pub max_candidate_flow: Option<f64>,
    pub flow: FlowConfig,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            r_max: 8,
            acceptance_rule: AcceptanceRule::ErrorImproves,
            delta_max: 0.02,
            local_ft: TrainConfig::default().with_epochs(10),
            radius: 1,
            final_ft: TrainConfig::default().with_epochs(0),
            recompute: false,
            max_candidate_flow: None,
            flow: FlowConfig::default(),
        }
    }
}

impl TruncationConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(range_err(format!("{prefix}gamma"), "must be nonnegative"));
        }
        if self.r_max == 0 {
            return Err(range_err(format!("{prefix}r_max"), "must be at least 1"));
        }
        if self.delta_max.is_nan() || self.delta_max < 0.0 {
            return Err(range_err(format!("{prefix}delta_max"), "must be nonnegative"));
        }
        self.local_ft.validate(&format!("{prefix}local_ft."))?;
        self.final_ft.validate(&format!("{prefix}final_ft."))?;
        self.flow.validate(&format!("{prefix}flow."))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub layer: usize,
    pub accepted: bool,
    /// `E(before) - E(after)` with `E = 1 - accuracy`.
    pub delta_e: f64,
    pub metrics: Metrics,
    /// Parameter count of the trial network.
    pub params: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub entry: Metrics,
    pub reference_accuracy: f64,
    pub removed: Vec<usize>,
    pub essential: Vec<usize>,
    /// Every trial in the order it ran.
    pub trials: Vec<Trial>,
    pub final_metrics: Metrics,
    pub final_ft_discarded: bool,
}

impl RemovalReport {
    /// Sum of the error reductions of accepted removals.
    pub fn total_delta_e(&self) -> f64 {
        self.trials.iter().filter(|t| t.accepted).map(|t| t.delta_e).sum()
    }
}

/// Layers eligible for removal in ascending flow order; ties go to the lower
/// index. Mandatory layers and flattens are excluded.
pub fn rank_layers(profile: &DivergenceProfile, net: &Network) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..net.len().min(profile.flow_scores.len()))
        .filter(|i| !net.mandatory().contains(i))
        .filter(|&i| !matches!(net.layers()[i].kind, LayerKind::Flatten))
        .collect();
    candidates.sort_by(|&a, &b| profile.flow_scores[a].total_cmp(&profile.flow_scores[b]).then(a.cmp(&b)));
    candidates
}

/// Replaces layer `l`, fine-tunes its neighbourhood on `train` and measures
/// the change in validation error. The input network is not modified.
pub fn try_remove(
    net: &Network,
    l: usize,
    train: &Dataset,
    val: &Dataset,
    cfg: &TruncationConfig,
) -> Result<(Network, f64)> {
    let before = evaluate(net, val)?;
    let (candidate, after) = trial(net, l, train, val, cfg)?;
    Ok((candidate, before.error() - after.error()))
}

fn trial(net: &Network, l: usize, train: &Dataset, val: &Dataset, cfg: &TruncationConfig) -> Result<(Network, Metrics)> {
    let mut candidate = net.replace_with_identity(l)?;
    if cfg.local_ft.epochs > 0 {
        let scope = Scope::Neighborhood {
            layer: l,
            radius: cfg.radius,
        };
        candidate = fine_tune(&candidate, train, &cfg.local_ft, &scope)?;
    }
    let metrics = evaluate(&candidate, val)?;
    Ok((candidate, metrics))
}

/// Runs the removal loop. `reference_accuracy` is the accuracy the
/// within-budget rule measures drops against; it defaults to the entry
/// accuracy of `net`.
pub fn truncate_run(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    profile: &DivergenceProfile,
    cfg: &TruncationConfig,
    reference_accuracy: Option<f64>,
) -> Result<(Network, RemovalReport)> {
    cfg.validate("")?;
    let entry = evaluate(net, val)?;
    let reference = reference_accuracy.unwrap_or(entry.accuracy);
    let mut report = RemovalReport {
        entry,
        reference_accuracy: reference,
        removed: Vec::new(),
        essential: Vec::new(),
        trials: Vec::new(),
        final_metrics: entry,
        final_ft_discarded: false,
    };
    let within = |acc: f64| reference - acc <= cfg.delta_max;
    let eligible = |p: &DivergenceProfile, n: &Network, l: usize| {
        !n.layers()[l].is_identity() && cfg.max_candidate_flow.is_none_or(|m| p.flow_scores[l] <= m)
    };

    let mut incumbent = net.clone();
    let mut current = entry;
    let mut profile = profile.clone();
    let mut candidates: Vec<usize> = rank_layers(&profile, net)
        .into_iter()
        .filter(|&l| eligible(&profile, net, l))
        .collect();
    let mut gained = 0.0;
    while report.removed.len() < cfg.r_max && !candidates.is_empty() {
        if cfg.acceptance_rule == AcceptanceRule::ErrorImproves && entry.error() > 0.0 && gained / entry.error() >= cfg.gamma {
            break;
        }
        let l = candidates.remove(0);
        let (candidate, metrics) = trial(&incumbent, l, train, val, cfg)?;
        let delta_e = current.error() - metrics.error();
        let params = candidate.count_params();
        let shrinks = params < incumbent.count_params();
        let accepted = shrinks
            && match cfg.acceptance_rule {
                AcceptanceRule::ErrorImproves => delta_e > 0.0,
                AcceptanceRule::WithinBudget => within(metrics.accuracy),
            };
        report.trials.push(Trial {
            layer: l,
            accepted,
            delta_e,
            metrics,
            params,
            flops: candidate.estimate_flops(net.input_shape())?,
        });
        if !accepted {
            info!("layer {l} kept (delta_e {delta_e:.6}, params {params})");
            report.essential.push(l);
            continue;
        }
        info!("layer {l} removed (delta_e {delta_e:.6}, params {params})");
        report.removed.push(l);
        gained += delta_e;
        incumbent = candidate;
        current = metrics;
        if cfg.recompute && !candidates.is_empty() {
            profile = compute_profile(&incumbent, val, &cfg.flow)?;
            let remaining = candidates.clone();
            candidates = rank_layers(&profile, &incumbent)
                .into_iter()
                .filter(|l| remaining.contains(l) && eligible(&profile, &incumbent, *l))
                .collect();
        }
    }
    report.final_metrics = current;
    if cfg.final_ft.epochs > 0 {
        let tuned = fine_tune(&incumbent, train, &cfg.final_ft, &Scope::Global)?;
        let metrics = evaluate(&tuned, val)?;
        let keep = match cfg.acceptance_rule {
            AcceptanceRule::ErrorImproves => true,
            AcceptanceRule::WithinBudget => within(metrics.accuracy) || !within(current.accuracy),
        };
        if keep {
            incumbent = tuned;
            report.final_metrics = metrics;
        } else {
            warn!("final fine-tune broke the accuracy budget; keeping the un-tuned network");
            report.final_ft_discarded = true;
        }
    }
    Ok((incumbent, report))
}
