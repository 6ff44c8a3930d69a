use flowprune::data::{bar_images, blobs, Dataset};
use flowprune::divergence::{compute_profile, FlowConfig};
use flowprune::models;
use flowprune::pipeline::{run_pipeline, PipelineConfig, TrackerEvent};
use flowprune::pruning::{idap_run, IdapConfig, PruneSchedule};
use flowprune::trainer::{evaluate, train, TrainConfig};
use flowprune::truncation::{truncate_run, AcceptanceRule, TruncationConfig};
use flowprune::Network;

fn blob_setup(seed: u64) -> (Network, Dataset, Dataset) {
    let (tr, val) = blobs(400, seed).unwrap().split_at(280).unwrap();
    let net = models::mlp(2, &[16, 16, 16], 2, seed).unwrap();
    let net = train(&net, &tr, &TrainConfig::default().with_epochs(5)).unwrap();
    (net, tr, val)
}

#[test]
fn idap_respects_tau_and_shrinks_monotonically() {
    for seed in 0..4 {
        let (net, tr, val) = blob_setup(seed);
        let sched = PruneSchedule {
            tau: 0.01,
            ..Default::default()
        };
        let cfg = IdapConfig {
            fine_tune: TrainConfig::default().with_epochs(2),
            ..Default::default()
        };
        let (pruned, history) = idap_run(&net, &tr, &val, &sched, &cfg).unwrap();
        let base = evaluate(&net, &val).unwrap().accuracy;
        assert!(base - evaluate(&pruned, &val).unwrap().accuracy <= sched.tau);
        let params: Vec<usize> = history.steps.iter().map(|s| s.params).collect();
        assert!(params.windows(2).all(|w| w[1] <= w[0]), "{params:?}");
        if let Some(r) = &history.rejected {
            assert!(base - r.metrics.accuracy > sched.tau);
        }
    }
}

#[test]
fn idap_without_fine_tune_profiles_once() {
    let (net, tr, val) = blob_setup(5);
    let sched = PruneSchedule::default();
    let cfg = IdapConfig {
        fine_tune: TrainConfig::default().with_epochs(0),
        ..Default::default()
    };
    let (_, h) = idap_run(&net, &tr, &val, &sched, &cfg).unwrap();
    assert_eq!(h.profile_computations, 1);
    assert!(h.masked_evaluations <= sched.iterations);
    assert_eq!(h.masked_evaluations, h.steps.len() + usize::from(h.rejected.is_some()));
}

#[test]
fn within_budget_truncation_stays_within_budget() {
    let (net, tr, val) = blob_setup(6);
    let profile = compute_profile(&net, &val, &FlowConfig::default()).unwrap();
    let cfg = TruncationConfig {
        acceptance_rule: AcceptanceRule::WithinBudget,
        delta_max: 0.01,
        local_ft: TrainConfig::default().with_epochs(2),
        ..Default::default()
    };
    let before = net.clone();
    let (out, report) = truncate_run(&net, &tr, &val, &profile, &cfg, None).unwrap();
    assert_eq!(net, before);
    for t in report.trials.iter().filter(|t| t.accepted) {
        assert!(report.reference_accuracy - t.metrics.accuracy <= cfg.delta_max);
    }
    assert!(report.reference_accuracy - evaluate(&out, &val).unwrap().accuracy <= cfg.delta_max);
    for x in val.inputs() {
        out.forward_with_trace(x).unwrap();
    }
}

#[test]
fn error_improving_removals_have_positive_delta_e() {
    let (net, tr, val) = blob_setup(7);
    let profile = compute_profile(&net, &val, &FlowConfig::default()).unwrap();
    let cfg = TruncationConfig {
        local_ft: TrainConfig::default().with_epochs(2),
        ..Default::default()
    };
    let (_, report) = truncate_run(&net, &tr, &val, &profile, &cfg, None).unwrap();
    assert!(report.trials.iter().filter(|t| t.accepted).all(|t| t.delta_e > 0.0));
    assert_eq!(
        report.removed.len() + report.essential.len(),
        report.trials.len()
    );
}

#[test]
fn conv_truncation_keeps_shapes_closed() {
    let (tr, val) = bar_images(120, 8, 2).unwrap().split_at(80).unwrap();
    let net = models::toy_cnn(8, 1, 4, 6, 8, 2, 3).unwrap();
    let net = train(&net, &tr, &TrainConfig::default().with_epochs(2)).unwrap();
    let profile = compute_profile(&net, &val, &FlowConfig::default()).unwrap();
    let cfg = TruncationConfig {
        acceptance_rule: AcceptanceRule::WithinBudget,
        delta_max: 1.0,
        local_ft: TrainConfig::default().with_epochs(1),
        ..Default::default()
    };
    let (out, report) = truncate_run(&net, &tr, &val, &profile, &cfg, None).unwrap();
    assert!(!report.trials.is_empty());
    for x in val.inputs() {
        assert_eq!(out.forward(x).unwrap().shape(), &[2]);
    }
}

#[test]
fn pipeline_tracker_is_budget_safe_monotone_and_deterministic() {
    let (net, tr, val) = blob_setup(8);
    let cfg = PipelineConfig {
        intermediate_ft: TrainConfig::default().with_epochs(2),
        global_ft: TrainConfig::default().with_epochs(2),
        truncation: TruncationConfig {
            local_ft: TrainConfig::default().with_epochs(2),
            ..Default::default()
        },
        ..Default::default()
    };
    let (out, tracker) = run_pipeline(&net, &tr, &val, &cfg).unwrap();
    let (out2, tracker2) = run_pipeline(&net, &tr, &val, &cfg).unwrap();
    assert_eq!(tracker, tracker2);
    assert_eq!(out.fingerprint(), out2.fingerprint());

    let acc0 = tracker.baseline.accuracy;
    let mut last = (tracker.baseline_params, tracker.baseline_flops);
    let mut rebalanced = false;
    for e in &tracker.events {
        match e {
            TrackerEvent::FilterIteration {
                params, flops, metrics, ..
            } => {
                assert!(!rebalanced);
                assert!(acc0 - metrics.accuracy <= cfg.delta_max / 2.0);
                assert!(*params <= last.0 && *flops <= last.1);
                last = (*params, *flops);
            }
            TrackerEvent::Rebalance { .. } => rebalanced = true,
            TrackerEvent::Removal {
                params, metrics, ..
            } => {
                assert!(rebalanced);
                assert!(acc0 - metrics.accuracy <= cfg.delta_max);
                assert!(*params < last.0);
                last.0 = *params;
            }
            TrackerEvent::Final {
                params, metrics, ..
            } => {
                assert!(acc0 - metrics.accuracy <= cfg.delta_max);
                assert!(*params <= last.0);
            }
            _ => {}
        }
    }
    assert!(tracker.is_finalized());
    assert_eq!(tracker.final_metrics().unwrap(), evaluate(&out, &val).unwrap());
}
