//! Two-phase compression under a single accuracy budget.
//!
//! Phase 1 prunes structural units with half the budget, the network is then
//! fine-tuned and re-profiled, and phase 2 removes whole layers while the
//! drop against the original accuracy stays within the full budget. A final
//! global fine-tune is kept only if it respects the budget.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::divergence::{compute_profile, FlowConfig};
use crate::error::{range_err, Error, Result};
use crate::network::Network;
use crate::pruning::{
    divergence_recompute_policy, idap_with_profile, IdapConfig, LastStep, PruneHistory, PruneSchedule, RecomputePolicy,
};
use crate::tensor::l2_norm;
use crate::trainer::{evaluate, fine_tune, Metrics, Scope, TrainConfig};
use crate::truncation::{truncate_run, AcceptanceRule, RemovalReport, TruncationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Largest tolerated validation accuracy drop, as a fraction.
    pub delta_max: f64,
    /// Pruning schedule; its `tau` is replaced by `delta_max / 2`.
    pub schedule: PruneSchedule,
    /// Layer-removal settings; the rule is forced to within-budget against
    /// the original accuracy with the full `delta_max`.
    pub truncation: TruncationConfig,
    pub flow: FlowConfig,
    /// Flow-score ceiling for removal candidates, applied when
    /// `apply_beta` is set.
    pub beta: f64,
    pub apply_beta: bool,
    /// Fine-tune between the phases; zero epochs disables it.
    pub intermediate_ft: TrainConfig,
    /// Fine-tune after phase 2; zero epochs disables it.
    pub global_ft: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let local = TruncationConfig::default();
        Self {
            delta_max: 0.02,
            schedule: PruneSchedule::default(),
            intermediate_ft: local.local_ft.clone(),
            truncation: local,
            flow: FlowConfig::default(),
            beta: 0.1,
            apply_beta: false,
            global_ft: TrainConfig::default().with_epochs(10),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_max.is_nan() || self.delta_max < 0.0 {
            return Err(range_err("delta_max", format!("{} must be nonnegative", self.delta_max)));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(range_err("beta", "must be nonnegative"));
        }
        self.schedule.validate("schedule.")?;
        self.truncation.validate("truncation.")?;
        self.flow.validate("flow.")?;
        self.intermediate_ft.validate("intermediate_ft.")?;
        self.global_ft.validate("global_ft.")
    }

    fn phase1_schedule(&self) -> PruneSchedule {
        PruneSchedule {
            tau: self.delta_max / 2.0,
            ..self.schedule.clone()
        }
    }

    fn phase2_truncation(&self) -> TruncationConfig {
        TruncationConfig {
            acceptance_rule: AcceptanceRule::WithinBudget,
            delta_max: self.delta_max,
            final_ft: TrainConfig {
                epochs: 0,
                ..self.truncation.final_ft.clone()
            },
            max_candidate_flow: if self.apply_beta {
                Some(self.beta)
            } else {
                self.truncation.max_candidate_flow
            },
            flow: self.flow.clone(),
            ..self.truncation.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TrackerEvent {
    FilterIteration {
        t: usize,
        rho: f64,
        surviving_units: usize,
        params: usize,
        flops: u64,
        metrics: Metrics,
    },
    RejectedIteration {
        t: usize,
        rho: f64,
        metrics: Metrics,
    },
    Rebalance {
        metrics: Metrics,
        /// Fingerprint of the network the phase-2 profile was computed on.
        profile_fingerprint: String,
        fine_tune_kept: bool,
    },
    Removal {
        layer: usize,
        delta_e: f64,
        params: usize,
        flops: u64,
        metrics: Metrics,
    },
    RejectedRemoval {
        layer: usize,
        metrics: Metrics,
    },
    PhaseSkipped {
        phase: String,
        reason: String,
    },
    Final {
        metrics: Metrics,
        params: usize,
        flops: u64,
        fine_tune_kept: bool,
    },
}

/// Append-only log of a compression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionTracker {
    pub baseline: Metrics,
    pub baseline_params: usize,
    pub baseline_flops: u64,
    pub delta_max: f64,
    pub events: Vec<TrackerEvent>,
}

impl CompressionTracker {
    pub fn new(baseline: Metrics, baseline_params: usize, baseline_flops: u64, delta_max: f64) -> Self {
        Self {
            baseline,
            baseline_params,
            baseline_flops,
            delta_max,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: TrackerEvent) -> Result<()> {
        if self.is_finalized() {
            return Err(Error::Tracker("event after final".into()));
        }
        if matches!(event, TrackerEvent::Rebalance { .. })
            && self.events.iter().any(|e| matches!(e, TrackerEvent::Rebalance { .. }))
        {
            return Err(Error::Tracker("second rebalance".into()));
        }
        self.events.push(event);
        Ok(())
    }

    /// Appends the accepted iterations of a pruning run and its breaching
    /// iteration, if any.
    pub fn record_pruning(&mut self, history: &PruneHistory) -> Result<()> {
        for step in &history.steps {
            self.push(TrackerEvent::FilterIteration {
                t: step.k,
                rho: step.rho,
                surviving_units: step.surviving_units,
                params: step.params,
                flops: step.flops,
                metrics: step.metrics,
            })?;
        }
        if let Some(step) = &history.rejected {
            self.push(TrackerEvent::RejectedIteration {
                t: step.k,
                rho: step.rho,
                metrics: step.metrics,
            })?;
        }
        Ok(())
    }

    /// Appends every removal trial in the order it ran.
    pub fn record_truncation(&mut self, report: &RemovalReport) -> Result<()> {
        for trial in &report.trials {
            self.push(if trial.accepted {
                TrackerEvent::Removal {
                    layer: trial.layer,
                    delta_e: trial.delta_e,
                    params: trial.params,
                    flops: trial.flops,
                    metrics: trial.metrics,
                }
            } else {
                TrackerEvent::RejectedRemoval {
                    layer: trial.layer,
                    metrics: trial.metrics,
                }
            })?;
        }
        Ok(())
    }

    pub fn is_finalized(&self) -> bool {
        matches!(self.events.last(), Some(TrackerEvent::Final { .. }))
    }

    pub fn final_metrics(&self) -> Option<Metrics> {
        match self.events.last() {
            Some(TrackerEvent::Final { metrics, .. }) => Some(*metrics),
            _ => None,
        }
    }

    /// SHA-256 of the JSON encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("tracker serialises");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Baseline,
    FilterPrune,
    LayerTrunc,
    FinalFineTune,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Baseline => "Baseline",
            Stage::FilterPrune => "Filter Prune",
            Stage::LayerTrunc => "Layer Trunc",
            Stage::FinalFineTune => "Final Fine-Tune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: usize,
    pub stage: Stage,
    pub params: usize,
    pub flops: u64,
    pub accuracy: f64,
    /// Accuracy minus baseline accuracy.
    pub delta_accuracy: f64,
}

/// One row per accepted event: the baseline, each accepted pruning
/// iteration, each accepted removal and the final network.
pub fn emit_tracker(tracker: &CompressionTracker, before: &Network, after: &Network) -> Result<Vec<ReportRow>> {
    if !tracker.is_finalized() {
        return Err(Error::Tracker("tracker has no final event".into()));
    }
    let base = tracker.baseline.accuracy;
    let mut rows = vec![ReportRow {
        step: 1,
        stage: Stage::Baseline,
        params: before.count_params(),
        flops: before.estimate_flops(before.input_shape())?,
        accuracy: base,
        delta_accuracy: 0.0,
    }];
    for event in &tracker.events {
        let (stage, params, flops, metrics) = match event {
            TrackerEvent::FilterIteration {
                params, flops, metrics, ..
            } => (Stage::FilterPrune, *params, *flops, metrics),
            TrackerEvent::Removal {
                params, flops, metrics, ..
            } => (Stage::LayerTrunc, *params, *flops, metrics),
            TrackerEvent::Final { metrics, .. } => (
                Stage::FinalFineTune,
                after.count_params(),
                after.estimate_flops(after.input_shape())?,
                metrics,
            ),
            _ => continue,
        };
        rows.push(ReportRow {
            step: rows.len() + 1,
            stage,
            params,
            flops,
            accuracy: metrics.accuracy,
            delta_accuracy: metrics.accuracy - base,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetCheck {
    pub original_accuracy: f64,
    pub compressed_accuracy: f64,
    pub accuracy_drop: f64,
    /// Largest `||N0(x) - N(x)|| / ||N0(x)||` over the validation inputs.
    pub max_relative_deviation: f64,
    /// The accuracy drop is within the budget; this is the acceptance test.
    pub accuracy_within: bool,
    /// The output deviation is within the budget (diagnostic only).
    pub deviation_within: bool,
}

impl BudgetCheck {
    pub fn passed(&self) -> bool {
        self.accuracy_within
    }
}

pub fn verify_budget(original: &Network, compressed: &Network, val: &Dataset, delta_max: f64) -> Result<BudgetCheck> {
    let a = evaluate(original, val)?;
    let b = evaluate(compressed, val)?;
    let mut worst: f64 = 0.0;
    for x in val.inputs() {
        let y0 = original.forward(x)?;
        let y1 = compressed.forward(x)?;
        let norm = l2_norm(&y0);
        let diff = l2_norm(&y0.sub(&y1)?);
        let dev = if norm > 0.0 {
            diff / norm
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(dev);
    }
    let drop = a.accuracy - b.accuracy;
    Ok(BudgetCheck {
        original_accuracy: a.accuracy,
        compressed_accuracy: b.accuracy,
        accuracy_drop: drop,
        max_relative_deviation: worst,
        accuracy_within: drop <= delta_max,
        deviation_within: worst <= delta_max,
    })
}

/// Runs both phases. The returned network's validation accuracy drop
/// against `net` never exceeds `cfg.delta_max`.
pub fn run_pipeline(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &PipelineConfig,
) -> Result<(Network, CompressionTracker)> {
    cfg.validate()?;
    let acc0 = evaluate(net, val)?;
    let mut tracker = CompressionTracker::new(
        acc0,
        net.count_params(),
        net.estimate_flops(net.input_shape())?,
        cfg.delta_max,
    );
    let within = |m: &Metrics, budget: f64| acc0.accuracy - m.accuracy <= budget;

    // Phase 1: filter pruning with half the budget.
    let mut current = net.clone();
    let mut current_metrics = acc0;
    let idap_cfg = IdapConfig {
        flow: cfg.flow.clone(),
        fine_tune: cfg.intermediate_ft.clone().with_epochs(0),
    };
    let phase1 = compute_profile(net, val, &cfg.flow)
        .and_then(|profile| idap_with_profile(net, train, val, &cfg.phase1_schedule(), &idap_cfg, &profile, acc0));
    match phase1 {
        Ok((pruned, history)) => {
            tracker.record_pruning(&history)?;
            current = pruned;
            current_metrics = history.final_metrics;
        }
        Err(e) => {
            warn!("filter pruning skipped: {e}");
            tracker.push(TrackerEvent::PhaseSkipped {
                phase: "filter-prune".into(),
                reason: e.to_string(),
            })?;
        }
    }

    // Rebalance: intermediate fine-tune, then a fresh profile.
    let mut last = LastStep::MaskTrial;
    let mut rebalance_kept = false;
    if cfg.intermediate_ft.epochs > 0 {
        match fine_tune(&current, train, &cfg.intermediate_ft, &Scope::Global).and_then(|n| {
            let m = evaluate(&n, val)?;
            Ok((n, m))
        }) {
            Ok((tuned, m)) if within(&m, cfg.delta_max / 2.0) || m.accuracy >= current_metrics.accuracy => {
                current = tuned;
                current_metrics = m;
                last = LastStep::FineTune;
                rebalance_kept = true;
            }
            Ok(_) => warn!("intermediate fine-tune broke the phase budget; discarded"),
            Err(e) => warn!("intermediate fine-tune failed: {e}"),
        }
    }
    let profile = compute_profile(&current, val, &cfg.flow);
    if divergence_recompute_policy(last) == RecomputePolicy::Recompute {
        info!("profile recomputed after intermediate fine-tune");
    }
    let profile = match profile {
        Ok(p) => {
            tracker.push(TrackerEvent::Rebalance {
                metrics: current_metrics,
                profile_fingerprint: p.network_fingerprint.clone(),
                fine_tune_kept: rebalance_kept,
            })?;
            Some(p)
        }
        Err(e) => {
            warn!("profile recompute failed: {e}");
            tracker.push(TrackerEvent::PhaseSkipped {
                phase: "rebalance".into(),
                reason: e.to_string(),
            })?;
            None
        }
    };

    // Phase 2: layer removal against the original accuracy and full budget.
    if let Some(profile) = profile {
        debug_assert!(profile.is_fresh_for(&current));
        match truncate_run(&current, train, val, &profile, &cfg.phase2_truncation(), Some(acc0.accuracy)) {
            Ok((truncated, report)) => {
                tracker.record_truncation(&report)?;
                current = truncated;
                current_metrics = report.final_metrics;
            }
            Err(e) => {
                warn!("layer truncation skipped: {e}");
                tracker.push(TrackerEvent::PhaseSkipped {
                    phase: "layer-trunc".into(),
                    reason: e.to_string(),
                })?;
            }
        }
    }

    // Global fine-tune, kept only within budget.
    let mut final_kept = false;
    if cfg.global_ft.epochs > 0 {
        match fine_tune(&current, train, &cfg.global_ft, &Scope::Global).and_then(|n| {
            let m = evaluate(&n, val)?;
            Ok((n, m))
        }) {
            Ok((tuned, m)) if within(&m, cfg.delta_max) => {
                current = tuned;
                current_metrics = m;
                final_kept = true;
            }
            Ok(_) => warn!("global fine-tune broke the budget; discarded"),
            Err(e) => warn!("global fine-tune failed: {e}"),
        }
    }
    if !within(&current_metrics, cfg.delta_max) {
        // Only reachable if an intermediate result was already over budget.
        warn!("compressed network exceeds the budget; returning the original");
        current = net.clone();
        current_metrics = acc0;
    }
    tracker.push(TrackerEvent::Final {
        metrics: current_metrics,
        params: current.count_params(),
        flops: current.estimate_flops(current.input_shape())?,
        fine_tune_kept: final_kept,
    })?;
    Ok((current, tracker))
}
