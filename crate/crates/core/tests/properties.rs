use flowprune::data::{Dataset, Split};
use flowprune::divergence::{compute_profile, FlowConfig};
use flowprune::io::checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
use flowprune::models;
use flowprune::pruning::{build_mask, pruning_ratio, threshold_for_ratio, PruneSchedule};
use flowprune::tensor::{frobenius_norm, quantile, softmax_rows};
use flowprune::trainer::evaluate;
use flowprune::{Network, PruningMask, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(seed: u64, n: usize, shape: &[usize]) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    (0..n)
        .map(|_| Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

fn random_data(seed: u64, n: usize, shape: &[usize], classes: usize) -> Dataset {
    let labels = (0..n).map(|i| (i * 7 + seed as usize) % classes).collect();
    Dataset::new(random_inputs(seed, n, shape), labels, classes, Split::Val).unwrap()
}

/// Small dense, conv or attention network chosen by `kind`.
fn random_network(kind: u8, seed: u64) -> Network {
    match kind % 3 {
        0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hidden: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..9)).collect();
            models::mlp(rng.random_range(1..5), &hidden, 3, seed).unwrap()
        }
        1 => models::toy_cnn(6, 2, 3, 2, 5, 2, seed).unwrap(),
        _ => models::attention_classifier(3, 4, 2, 2, 2, seed).unwrap(),
    }
}

fn random_mask(layer_units: usize, bits: u64) -> PruningMask {
    PruningMask::new((0..layer_units).map(|u| bits >> (u % 64) & 1 == 1).collect())
}

proptest! {
    #[test]
    fn frobenius_is_absolutely_homogeneous(
        data in prop::collection::vec(-10.0f64..10.0, 1..40),
        alpha in -5.0f64..5.0,
    ) {
        let t = Tensor::vector(data);
        let lhs = frobenius_norm(&t.scale(alpha));
        let rhs = alpha.abs() * frobenius_norm(&t);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn quantile_is_monotone_and_order_free(
        mut data in prop::collection::vec(-100.0f64..100.0, 1..50),
        q1 in 0.0f64..=1.0,
        q2 in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(quantile(&data, lo).unwrap() <= quantile(&data, hi).unwrap());
        let before = quantile(&data, q1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..data.len()).rev() {
            data.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(before, quantile(&data, q1).unwrap());
    }

    #[test]
    fn softmax_rows_normalise_and_ignore_shifts(
        rows in 1usize..5,
        cols in 1usize..7,
        shift in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let m = random_inputs(seed, 1, &[rows, cols]).remove(0).scale(5.0);
        let s = softmax_rows(&m, 1.0).unwrap();
        for r in 0..rows {
            let total: f64 = (0..cols).map(|c| s.at2(r, c)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
        let shifted = softmax_rows(&m.map(|v| v + shift), 1.0).unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mask_and_is_commutative_and_idempotent(a in any::<u64>(), b in any::<u64>(), units in 1usize..40) {
        let (ma, mb) = (random_mask(units, a), random_mask(units, b));
        prop_assert_eq!(ma.and(&mb), mb.and(&ma));
        prop_assert_eq!(ma.and(&ma), ma.clone());
        let net = models::mlp(3, &[units], 2, 1).unwrap();
        let ab = net.apply_mask(0, &ma).unwrap().apply_mask(0, &mb).unwrap();
        let ba = net.apply_mask(0, &mb).unwrap().apply_mask(0, &ma).unwrap();
        prop_assert_eq!(ab.fingerprint(), ba.fingerprint());
    }

    #[test]
    fn extra_masking_never_adds_params_or_flops(kind in 0u8..3, seed in any::<u64>(), bits in any::<u64>()) {
        let net = random_network(kind, seed);
        let mut masked = net.clone();
        for i in 0..net.len() {
            let units = net.layers()[i].unit_count();
            if units > 0 {
                let next = masked.apply_mask(i, &random_mask(units, bits.rotate_left(i as u32 * 7))).unwrap();
                prop_assert!(next.count_params() <= masked.count_params());
                prop_assert!(
                    next.estimate_flops(net.input_shape()).unwrap() <= masked.estimate_flops(net.input_shape()).unwrap()
                );
                masked = next;
            }
        }
    }

    #[test]
    fn identity_replacement_passes_activations_through(seed in any::<u64>()) {
        let net = models::mlp(4, &[4, 4, 4], 2, seed).unwrap();
        for l in 1..3 {
            let replaced = net.replace_with_identity(l).unwrap();
            for x in random_inputs(seed, 3, &[4]) {
                let (_, trace) = replaced.forward_with_trace(&x).unwrap();
                prop_assert_eq!(&trace.outputs[l + 1], &trace.outputs[l]);
            }
        }
    }

    #[test]
    fn bias_free_relu_nets_are_positively_homogeneous(seed in any::<u64>(), alpha in 0.1f64..10.0) {
        let net = models::mlp(3, &[6, 5], 2, seed).unwrap();
        let x = random_inputs(seed, 1, &[3]).remove(0);
        let (_, t1) = net.forward_with_trace(&x).unwrap();
        let (_, t2) = net.forward_with_trace(&x.scale(alpha)).unwrap();
        for (a, b) in t1.outputs.iter().zip(&t2.outputs) {
            for (u, v) in a.data().iter().zip(b.data()) {
                prop_assert!((alpha * u - v).abs() <= 1e-12 * (alpha * u).abs().max(1.0));
            }
        }
    }

    #[test]
    fn evaluate_is_pure(kind in 0u8..3, seed in any::<u64>()) {
        let net = random_network(kind, seed);
        let data = random_data(seed, 12, net.input_shape(), net.output_shape()[0]);
        prop_assert_eq!(evaluate(&net, &data).unwrap(), evaluate(&net, &data).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn profile_scores_are_nonnegative_and_order_free(kind in 0u8..3, seed in any::<u64>()) {
        let net = random_network(kind, seed);
        let data = random_data(seed, 10, net.input_shape(), net.output_shape()[0]);
        let cfg = FlowConfig::default();
        let p = compute_profile(&net, &data, &cfg).unwrap();
        let all = p.layer_scores.iter().chain(&p.flow_scores).chain(&p.trajectory_scores);
        prop_assert!(all.clone().all(|&v| v >= 0.0 && v.is_finite()));
        for units in p.prune_scores.iter().flatten() {
            prop_assert!(units.iter().all(|&v| v >= 0.0));
        }
        let order: Vec<usize> = (0..data.len()).rev().collect();
        let q = compute_profile(&net, &data.permuted(&order), &cfg).unwrap();
        for (a, b) in p.flow_scores.iter().zip(&q.flow_scores).chain(p.layer_scores.iter().zip(&q.layer_scores)) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        prop_assert_eq!(q.forward_passes, data.len());
    }

    #[test]
    fn masks_are_nested_when_scores_are_reused(seed in any::<u64>(), alpha in 0.1f64..3.0) {
        let net = models::mlp(3, &[8, 6], 2, seed).unwrap();
        let data = random_data(seed, 10, &[3], 2);
        let profile = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        let sched = PruneSchedule { alpha, ..Default::default() };
        let mut previous: Option<Vec<Option<PruningMask>>> = None;
        let mut last_rho = 0.0;
        for k in 1..=sched.iterations {
            let rho = pruning_ratio(&sched, k);
            prop_assert!(rho > last_rho || rho == 1.0);
            last_rho = rho;
            let masks = build_mask(&profile, &net, threshold_for_ratio(&profile, &net, rho).unwrap());
            if let Some(prev) = &previous {
                for (now, before) in masks.iter().zip(prev) {
                    if let (Some(now), Some(before)) = (now, before) {
                        for u in 0..now.len() {
                            prop_assert!(!now.keeps(u) || before.keeps(u));
                        }
                    }
                }
            }
            previous = Some(masks);
        }
    }

    #[test]
    fn zero_score_units_do_not_affect_predictions(seed in any::<u64>(), dead in any::<u64>()) {
        // Units with zero outgoing weights score zero and can be masked
        // without changing any output.
        let mut net_layers = models::mlp(3, &[10, 6], 2, seed).unwrap().layers().to_vec();
        if let flowprune::LayerKind::Dense { weight, .. } = &mut net_layers[1].kind {
            for u in 0..10 {
                if dead >> u & 1 == 1 {
                    for r in 0..weight.rows() {
                        weight.set2(r, u, 0.0);
                    }
                }
            }
        }
        let net = Network::new(vec![3], net_layers).unwrap();
        let data = random_data(seed, 15, &[3], 2);
        let profile = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        let scores = profile.prune_scores[0].as_ref().unwrap();
        let keep: Vec<bool> = scores.iter().map(|&s| s != 0.0).collect();
        for (u, &score) in scores.iter().enumerate() {
            if dead >> u & 1 == 1 {
                prop_assert_eq!(score, 0.0);
            }
        }
        let masked = net.apply_mask(0, &PruningMask::new(keep)).unwrap();
        for x in data.inputs() {
            prop_assert_eq!(net.forward(x).unwrap(), masked.forward(x).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(kind in 0u8..3, seed in any::<u64>(), bits in any::<u64>()) {
        let mut net = random_network(kind, seed);
        let l = (0..net.len()).find(|&i| net.layers()[i].unit_count() > 1);
        if let Some(l) = l {
            let units = net.layers()[l].unit_count();
            let mut mask = random_mask(units, bits);
            if mask.kept() == 0 {
                mask = PruningMask::all(units);
            }
            net = net.apply_mask(l, &mask).unwrap();
        }
        let ckpt = Checkpoint::new(net.clone(), seed);
        let back = decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap().network;
        prop_assert_eq!(back.count_params(), net.count_params());
        for x in random_inputs(seed, 4, net.input_shape()) {
            let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
            prop_assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
