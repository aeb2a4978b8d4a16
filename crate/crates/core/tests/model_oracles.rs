use std::collections::HashMap;

use actisleep::models::arch::{build_multitask_cnn, build_right_path_cnn, build_sequential_cnn, ConvStage};
use actisleep::models::features::{features_from_values, SCALES};
use actisleep::models::{make_mtl_targets, ModelSpec, MultiTaskCnnSpec, SequentialCnnSpec};
use actisleep::{SleepState, WindowSample, WINDOW_LEN};
use actisleep_nn::gradcheck::{analytic_gradients, batch_loss, CheckSample};
use actisleep_nn::{softmax, NetworkGraph, Op, SgdMomentum, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn default_sequential_parameter_count_matches_hand_count() {
    // Valid convolutions, pooling with stride = width and floor division.
    let mut len = 721;
    let mut channels = 1;
    let mut total = 0;
    for (filters, width, pool) in [(32, 16, 4), (64, 8, 4), (96, 8, 2)] {
        total += width * channels * filters + filters;
        len = (len - width + 1) / pool;
        channels = filters;
    }
    assert_eq!(len, 17);
    let mut units = len * channels;
    for out in [512, 32, 4] {
        total += units * out + out;
        units = out;
    }
    assert_eq!(total, 918_884);
    let g = build_sequential_cnn(&SequentialCnnSpec::default()).unwrap();
    assert_eq!(g.num_params(), total);
}

#[test]
fn untrained_networks_emit_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::new(vec![3, WINDOW_LEN, 1], (0..3 * WINDOW_LEN).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
    for spec in [ModelSpec::SeqCnn(Default::default()), ModelSpec::MtlCnn(Default::default())] {
        let mut g = spec.build().unwrap();
        g.init_params(3);
        g.set_standardization(0.5, 0.4).unwrap();
        for out in g.predict(&input).unwrap() {
            for r in 0..3 {
                let p = softmax(out.row(r));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&v| v > 0.0));
            }
        }
    }
}

/// Direct statistics of one slice, written from the catalog definitions
/// without sorting: order statistics come from rank counting.
fn reference_features(x: &[f64], full: &[f64]) -> [f64; 10] {
    let n = x.len();
    let nth = |data: &[f64], k: usize| -> f64 {
        // Smallest value with at least k + 1 values <= it.
        *data
            .iter()
            .filter(|&&v| data.iter().filter(|&&u| u <= v).count() > k)
            .min_by(|a, b| a.total_cmp(b))
            .unwrap()
    };
    let median = |data: &[f64]| -> f64 {
        let m = data.len();
        if m % 2 == 1 {
            nth(data, m / 2)
        } else {
            0.5 * (nth(data, m / 2 - 1) + nth(data, m / 2))
        }
    };
    let mut dev = 0.0;
    for &v in x {
        dev += v - x[0];
    }
    let mean = x[0] + dev / n as f64;
    let mut ss = 0.0;
    let mut sq = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        ss += (v - mean) * (v - mean);
        sq += v * v;
        min = min.min(v);
        max = max.max(v);
    }
    let global = median(full);
    let mut below = 0;
    let mut crossings = 0;
    let mut absdiff = 0.0;
    for i in 0..n {
        if x[i] < global {
            below += 1;
        }
        if i + 1 < n {
            if (x[i] - mean) * (x[i + 1] - mean) < 0.0 {
                crossings += 1;
            }
            absdiff += (x[i + 1] - x[i]).abs();
        }
    }
    let rank90 = (9 * n).div_ceil(10);
    [
        mean,
        (ss / n as f64).sqrt(),
        min,
        max,
        median(x),
        below as f64 / n as f64,
        crossings as f64 / (n - 1) as f64,
        absdiff / (n - 1) as f64,
        nth(x, rank90 - 1),
        sq / n as f64,
    ]
}

#[test]
fn features_match_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..6 {
        let window: Vec<f64> = (0..WINDOW_LEN)
            .map(|_| if case % 2 == 0 { rng.random_range(0.0..3.0) } else { f64::from(rng.random_range(0..5u8)) })
            .collect();
        let f = features_from_values(&window).unwrap();
        assert_eq!(f.len(), 80);
        let c = WINDOW_LEN / 2;
        for (s, &w) in SCALES.iter().enumerate() {
            let slice = &window[c - w / 2..=c + w / 2];
            assert_eq!(&f[s * 10..s * 10 + 10], &reference_features(slice, &window), "scale {w}");
        }
    }
}

#[test]
fn feature_vector_is_deterministic_and_reads_only_the_values() {
    let values: Vec<f64> = (0..WINDOW_LEN).map(|i| ((i * 7919) % 97) as f64 / 13.0).collect();
    let a = WindowSample { patient_id: "a".into(), values: values.clone(), center_index: 360, center_label: None, window_labels: None };
    let b = WindowSample { patient_id: "b".into(), values, center_index: 999, center_label: Some(SleepState::Sleep), window_labels: None };
    let fa = actisleep::models::engineer_features(&a).unwrap();
    assert_eq!(fa, actisleep::models::engineer_features(&b).unwrap());
    assert_eq!(fa, actisleep::models::engineer_features(&a).unwrap());
}

proptest! {
    #[test]
    fn order_statistics_ignore_within_scale_order(
        values in prop::collection::vec(0.0f64..10.0, WINDOW_LEN),
        seed in any::<u64>(),
    ) {
        // Reversing the innermost scale keeps it and every outer scale a
        // permutation of itself.
        let mut permuted = values.clone();
        let c = WINDOW_LEN / 2;
        permuted[c - 2..=c + 2].reverse();
        let a = features_from_values(&values).unwrap();
        let b = features_from_values(&permuted).unwrap();
        for s in 0..SCALES.len() {
            for k in [2usize, 3, 4, 5, 8] {
                prop_assert_eq!(a[s * 10 + k], b[s * 10 + k]);
            }
            prop_assert!((a[s * 10] - b[s * 10]).abs() < 1e-12);
        }
        // A swap that breaks adjacency changes the first-difference feature.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut step = vec![0.0; WINDOW_LEN];
        for (i, v) in step.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.0 } else { 1.0 + rng.random_range(0.0..0.5) };
        }
        let mut sorted = step.clone();
        sorted[c - 2..=c + 2].sort_by(f64::total_cmp);
        let fs = features_from_values(&step).unwrap();
        let ft = features_from_values(&sorted).unwrap();
        prop_assert!(fs[7] != ft[7]);
        prop_assert_eq!(fs[2], ft[2]);
        prop_assert_eq!(fs[3], ft[3]);
    }
}

#[test]
fn mtl_target_examples() {
    let sample = |labels: Vec<SleepState>| WindowSample {
        patient_id: "p".into(),
        values: vec![0.0; labels.len()],
        center_index: labels.len() / 2,
        center_label: Some(labels[labels.len() / 2]),
        window_labels: Some(labels),
    };
    use SleepState::*;
    let t = make_mtl_targets(&sample(vec![Sleep; 721])).unwrap();
    assert_eq!(t.aux(), [1.0, 0.0]);
    let t = make_mtl_targets(&sample(vec![Wake; 721])).unwrap();
    assert_eq!(t.aux(), [0.0, 1.0]);
    assert_eq!(t.center_one_hot, [1.0, 0.0, 0.0, 0.0]);
    let toy = vec![Wake, Sleep, Sleep, Wake, Sleep, Siesta, Wake, Sleep, FallingAsleep, Wake];
    assert_eq!(make_mtl_targets(&sample(toy)).unwrap().sleep_fraction, 0.5);
    let mut unlabeled = sample(vec![Wake; 3]);
    unlabeled.window_labels = None;
    assert!(make_mtl_targets(&unlabeled).is_err());
}

fn small_mtl(aux_weight: f64) -> MultiTaskCnnSpec {
    MultiTaskCnnSpec {
        input_len: 61,
        trunk: vec![ConvStage::new(6, 5, 2), ConvStage::new(8, 3, 2)],
        aux_dense: vec![10],
        right_stages: vec![ConvStage::new(7, 3, 2)],
        pre_concat_dense: vec![12],
        post_concat_dense: vec![6],
        aux_weight,
        main_weight: 1.0,
    }
}

fn batch(rng: &mut ChaCha8Rng, n: usize, len: usize) -> (Tensor, Tensor, Tensor) {
    let input = Tensor::new(vec![n, len, 1], (0..n * len).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
    let mut main = vec![0.0; n * 4];
    let mut aux = vec![0.0; n * 2];
    for r in 0..n {
        main[r * 4 + rng.random_range(0..4)] = 1.0;
        let p: f64 = rng.random();
        aux[r * 2] = p;
        aux[r * 2 + 1] = 1.0 - p;
    }
    (input, Tensor::new(vec![n, 4], main).unwrap(), Tensor::new(vec![n, 2], aux).unwrap())
}

fn by_name(g: &NetworkGraph, values: &[Vec<f64>]) -> HashMap<String, Vec<f64>> {
    g.parameter_names().into_iter().zip(values.iter().cloned()).collect()
}

fn params(g: &NetworkGraph) -> Vec<Vec<f64>> {
    g.parameters().iter().map(|p| p.to_vec()).collect()
}

#[test]
fn zero_aux_weight_matches_single_task_right_path() {
    let spec = small_mtl(0.0);
    let mut mtl = build_multitask_cnn(&spec).unwrap();
    mtl.init_params(17);
    mtl.set_standardization(0.9, 0.6).unwrap();
    let mut single = build_right_path_cnn(&spec).unwrap();
    let shared: HashMap<String, _> = mtl.named_blocks().into_iter().map(|b| (b.name.clone(), b)).collect();
    let blocks: Vec<_> = single.named_blocks().iter().map(|b| shared[&b.name].clone()).collect();
    single.load_blocks(&blocks).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut opt_m = SgdMomentum::new(0.05, 0.9, &mtl.parameters().iter().map(|p| p.len()).collect::<Vec<_>>()).unwrap();
    let mut opt_s = SgdMomentum::new(0.05, 0.9, &single.parameters().iter().map(|p| p.len()).collect::<Vec<_>>()).unwrap();
    for _ in 0..3 {
        let (input, main, aux) = batch(&mut rng, 5, 61);
        let gm = analytic_gradients(&mut mtl, &CheckSample { input: input.clone(), targets: vec![main.clone(), aux], head_weights: vec![1.0, 0.0] }).unwrap();
        let gs = analytic_gradients(&mut single, &CheckSample::new(input, vec![main])).unwrap();
        let (gm_named, gs_named) = (by_name(&mtl, &gm.blocks), by_name(&single, &gs.blocks));
        for (name, g) in &gs_named {
            let other = &gm_named[name];
            let diff = g.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{name}: gradient differs by {diff}");
        }
        for (name, g) in &gm_named {
            if name.starts_with("aux_") {
                assert!(g.iter().all(|&v| v == 0.0), "{name} moved with zero weight");
            }
        }
        opt_m.step(&mut mtl.parameters_mut(), &gm.blocks).unwrap();
        opt_s.step(&mut single.parameters_mut(), &gs.blocks).unwrap();
    }
    let (pm, ps) = (by_name(&mtl, &params(&mtl)), by_name(&single, &params(&single)));
    for (name, p) in &ps {
        let diff = p.iter().zip(&pm[name]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10, "{name}: parameters differ by {diff}");
    }
}

#[test]
fn mtl_loss_is_the_sum_of_head_losses() {
    let spec = small_mtl(1.0);
    let mut g = build_multitask_cnn(&spec).unwrap();
    g.init_params(2);
    g.set_standardization(1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (input, main, aux) = batch(&mut rng, 4, 61);
        let out = g.predict(&input).unwrap();
        let loss = |w: Vec<f64>| {
            batch_loss(&out, &CheckSample { input: input.clone(), targets: vec![main.clone(), aux.clone()], head_weights: w })
                .unwrap()
                .0
        };
        assert_eq!(loss(vec![1.0, 1.0]), loss(vec![1.0, 0.0]) + loss(vec![0.0, 1.0]));
    }
}

#[test]
fn center_value_reaches_the_main_head_through_the_join() {
    let spec = small_mtl(1.0);
    let mut g = build_multitask_cnn(&spec).unwrap();
    g.init_params(6);
    let (mean, std) = (0.8, 0.5);
    g.set_standardization(mean, std).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (input, _, _) = batch(&mut rng, 1, 61);
    let mut bumped = input.data().to_vec();
    bumped[30] += 0.75;
    let bumped = Tensor::new(vec![1, 61, 1], bumped).unwrap();

    let id = |name: &str| g.node_id(name).unwrap();
    let before = g.trace(&input).unwrap();
    let after = g.trace(&bumped).unwrap();
    assert_eq!(before.activation(id("center")), &[(input.data()[30] - mean) / std]);
    assert_eq!(after.activation(id("center")), &[(input.data()[30] + 0.75 - mean) / std]);
    for cache in [&before, &after] {
        let mut joined = cache.activation(id("right_fc1_relu")).to_vec();
        joined.extend_from_slice(cache.activation(id("center")));
        assert_eq!(cache.activation(id("join")), &joined[..]);
    }
    assert_ne!(before.activation(id("out")), after.activation(id("out")));
    assert_ne!(before.activation(id("pool2")), after.activation(id("pool2")));

    // With the center column of the first joined layer zeroed, the main head
    // sees the bump only through the trunk, so bumping an input the trunk
    // discards leaves it unchanged while the center path still changes.
    let mut cut = g.clone();
    if let Some(Op::Dense(d)) = cut.layer_mut("joined_fc1") {
        let last = d.in_units - 1;
        for o in 0..d.out_units {
            d.weights[last * d.out_units + o] = 0.0;
        }
    }
    let out_cut = |t: &Tensor| cut.predict(t).unwrap()[0].data().to_vec();
    let mut tail = input.data().to_vec();
    tail[60] += 5.0;
    let tail = Tensor::new(vec![1, 61, 1], tail).unwrap();
    assert_eq!(g.trace(&tail).unwrap().activation(id("pool2")), before.activation(id("pool2")));
    assert_eq!(out_cut(&tail), out_cut(&input));
    assert_ne!(out_cut(&bumped), out_cut(&input));
}
