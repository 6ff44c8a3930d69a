//! Iterative divergence-aware filter pruning.
//!
//! Structural units (dense neurons, conv filters, attention heads) are ranked
//! by their divergence scores pooled across the network. At iteration `k` the
//! lowest `rho_k` fraction is masked, with `rho_k = rho0 * (1 + k/K)^alpha`.
//! The loop stops at the first iteration whose validation accuracy drop
//! exceeds `tau`; the last accepted mask is fine-tuned once.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::divergence::{compute_profile, DivergenceProfile, FlowConfig};
use crate::error::{range_err, Error, Result};
use crate::network::{Network, PruningMask};
use crate::tensor::quantile;
use crate::trainer::{evaluate, fine_tune, Metrics, Scope, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSchedule {
    pub rho0: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// Largest tolerated validation accuracy drop.
    pub tau: f64,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            rho0: 0.2,
            alpha: 1.2,
            iterations: 30,
            tau: 0.02,
        }
    }
}

impl PruneSchedule {
    pub fn new(rho0: f64, alpha: f64, iterations: usize, tau: f64) -> Result<Self> {
        let s = Self {
            rho0,
            alpha,
            iterations,
            tau,
        };
        s.validate("")?;
        Ok(s)
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return Err(range_err(format!("{prefix}rho0"), format!("{} not in (0, 1)", self.rho0)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(range_err(format!("{prefix}alpha"), format!("{} must be nonnegative", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(range_err(format!("{prefix}iterations"), "must be at least 1"));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(range_err(format!("{prefix}tau"), format!("{} must be nonnegative", self.tau)));
        }
        Ok(())
    }
}

/// `rho0 * (1 + k/K)^alpha`, clamped to 1.
pub fn pruning_ratio(sched: &PruneSchedule, k: usize) -> f64 {
    let rho = sched.rho0 * (1.0 + k as f64 / sched.iterations as f64).powf(sched.alpha);
    if rho > 1.0 {
        warn!("pruning ratio {rho} at iteration {k} exceeds 1; clamped");
        return 1.0;
    }
    rho
}

/// Layers whose units may be pruned: every layer with structural units
/// except the output head.
pub fn prunable_layers(net: &Network) -> Vec<usize> {
    (0..net.len())
        .filter(|&i| net.layers()[i].unit_count() > 0 && i != net.head_index())
        .collect()
}

fn pooled_scores(profile: &DivergenceProfile, net: &Network) -> Vec<f64> {
    prunable_layers(net)
        .into_iter()
        .filter_map(|i| profile.prune_scores.get(i).and_then(Option::as_ref))
        .flatten()
        .copied()
        .collect()
}

/// The `rho`-quantile of all prunable unit scores pooled across layers.
pub fn threshold_for_ratio(profile: &DivergenceProfile, net: &Network, rho: f64) -> Result<f64> {
    quantile(&pooled_scores(profile, net), rho)
}

/// Keeps a unit iff its score strictly exceeds `theta`; every prunable layer
/// keeps at least its highest-scoring unit. Non-prunable layers get `None`.
pub fn build_mask(profile: &DivergenceProfile, net: &Network, theta: f64) -> Vec<Option<PruningMask>> {
    let mut masks = vec![None; net.len()];
    for i in prunable_layers(net) {
        let Some(scores) = profile.prune_scores.get(i).and_then(Option::as_ref) else {
            continue;
        };
        let mut flags: Vec<bool> = scores.iter().map(|&s| s > theta).collect();
        let live = |u: usize| net.mask(i).is_none_or(|m| m.keeps(u));
        if !flags.iter().enumerate().any(|(u, &f)| f && live(u)) {
            let best = (0..scores.len())
                .filter(|&u| live(u))
                .fold(None, |best: Option<usize>, u| match best {
                    Some(b) if scores[b] >= scores[u] => Some(b),
                    _ => Some(u),
                });
            if let Some(b) = best {
                flags[b] = true;
            }
        }
        masks[i] = Some(PruningMask::new(flags));
    }
    masks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecomputePolicy {
    Reuse,
    Recompute,
}

/// What last happened to the network since the profile was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastStep {
    MaskTrial,
    FineTune,
}

/// Profiles stay valid across mask trials; any parameter update invalidates
/// them.
pub fn divergence_recompute_policy(last: LastStep) -> RecomputePolicy {
    match last {
        LastStep::MaskTrial => RecomputePolicy::Reuse,
        LastStep::FineTune => RecomputePolicy::Recompute,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub k: usize,
    pub rho: f64,
    pub theta: f64,
    pub params: usize,
    pub flops: u64,
    pub surviving_units: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneHistory {
    pub baseline: Metrics,
    pub baseline_params: usize,
    /// Accepted iterations in order.
    pub steps: Vec<PruneStep>,
    /// The iteration that breached the budget, if any.
    pub rejected: Option<PruneStep>,
    pub selected_rho: Option<f64>,
    /// Validation metrics of the returned network.
    pub final_metrics: Metrics,
    pub profile_computations: usize,
    pub masked_evaluations: usize,
    /// Set when fine-tuning pushed accuracy past the budget and the
    /// un-tuned masked network was returned instead.
    pub fine_tune_discarded: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdapConfig {
    pub flow: FlowConfig,
    /// Applied once to the selected mask; zero epochs disables it.
    pub fine_tune: TrainConfig,
}

/// Runs the pruning loop against a baseline measured on `val`. The returned
/// network's validation accuracy is at least `baseline - tau`.
pub fn idap_run(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    sched: &PruneSchedule,
    cfg: &IdapConfig,
) -> Result<(Network, PruneHistory)> {
    sched.validate("")?;
    let baseline = evaluate(net, val)?;
    let profile = compute_profile(net, val, &cfg.flow)?;
    idap_with_profile(net, train, val, sched, cfg, &profile, baseline)
}

/// [`idap_run`] with a precomputed profile and baseline.
pub fn idap_with_profile(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    sched: &PruneSchedule,
    cfg: &IdapConfig,
    profile: &DivergenceProfile,
    baseline: Metrics,
) -> Result<(Network, PruneHistory)> {
    if profile.len() != net.len() {
        return Err(Error::Config(format!(
            "profile covers {} layers, network has {}",
            profile.len(),
            net.len()
        )));
    }
    let mut history = PruneHistory {
        baseline,
        baseline_params: net.count_params(),
        steps: Vec::new(),
        rejected: None,
        selected_rho: None,
        final_metrics: baseline,
        profile_computations: 1,
        masked_evaluations: 0,
        fine_tune_discarded: false,
    };
    if pooled_scores(profile, net).is_empty() {
        warn!("no prunable units; returning the network unchanged");
        return Ok((net.clone(), history));
    }
    let mut best: Option<Network> = None;
    for k in 1..=sched.iterations {
        let rho = pruning_ratio(sched, k);
        let theta = threshold_for_ratio(profile, net, rho)?;
        let candidate = net.apply_masks(&build_mask(profile, net, theta))?;
        let metrics = evaluate(&candidate, val)?;
        history.masked_evaluations += 1;
        let step = PruneStep {
            k,
            rho,
            theta,
            params: candidate.count_params(),
            flops: candidate.estimate_flops(net.input_shape())?,
            surviving_units: candidate.surviving_units(),
            metrics,
        };
        if baseline.accuracy - metrics.accuracy > sched.tau {
            history.rejected = Some(step);
            break;
        }
        history.steps.push(step);
        best = Some(candidate);
    }
    let Some(masked) = best else {
        warn!("no pruning ratio met the accuracy budget; returning the network unchanged");
        return Ok((net.clone(), history));
    };
    let last = history.steps.last().expect("an accepted step exists");
    history.selected_rho = Some(last.rho);
    history.final_metrics = last.metrics;
    if cfg.fine_tune.epochs == 0 {
        return Ok((masked, history));
    }
    let tuned = fine_tune(&masked, train, &cfg.fine_tune, &Scope::Global)?;
    let tuned_metrics = evaluate(&tuned, val)?;
    if baseline.accuracy - tuned_metrics.accuracy > sched.tau {
        warn!("fine-tuning broke the accuracy budget; keeping the un-tuned mask");
        history.fine_tune_discarded = true;
        return Ok((masked, history));
    }
    history.final_metrics = tuned_metrics;
    Ok((tuned, history))
}
