use proptest::prelude::*;

use protoflow::flowfield::{encode_time, flow_loss, TimeEncodingConfig, TimeNormalization};
use protoflow::model::{Encoder, Head, HeadInit};
use protoflow::numkit::optim::clip_global_norm;
use protoflow::numkit::{finite_diff_grad, max_relative_error, Mlp2Params, Rng};
use protoflow::stream::{herding_select, permute_tasks, sample_step, time_shuffle};
use protoflow::theory::{
    check_g_lipschitz, check_margin_path, check_path_curvature, g_margin_bound, random_trajectory_world,
};
use protoflow::trainer::standard_benchmark;

fn rng_stream(seed: u64, n: usize) -> Vec<u64> {
    let mut r = Rng::new(seed);
    (0..n).map(|_| r.uniform().to_bits() ^ r.normal().to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rng_streams_repeat_per_seed(seed in any::<u64>()) {
        prop_assert_eq!(rng_stream(seed, 64), rng_stream(seed, 64));
    }

    #[test]
    fn clipping_is_idempotent(
        grads in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 1..6), 1..4),
        clip in 0.01f64..10.0,
    ) {
        let mut once = grads;
        clip_global_norm(&mut once, clip);
        let mut twice = once.clone();
        clip_global_norm(&mut twice, clip);
        for (a, b) in once.iter().flatten().zip(twice.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences(seed in any::<u64>(), input in 1usize..=8, hidden in 1usize..=8, output in 1usize..=8) {
        let mut rng = Rng::new(seed);
        let params = Mlp2Params::kaiming(input, hidden, output, &mut rng);
        let x: Vec<f64> = (0..input).map(|_| rng.normal()).collect();
        let probe: Vec<f64> = (0..output).map(|_| rng.normal()).collect();
        let (_, cache) = params.forward(&x).unwrap();
        prop_assume!(cache.pre.iter().all(|p| p.abs() > 1e-3));
        let (grads, grad_in) = params.backward(&cache, &probe).unwrap();

        let objective = |p: &Mlp2Params, x: &[f64]| -> f64 {
            let (y, _) = p.forward(x).unwrap();
            y.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let flat = params.to_flat();
        let numeric = finite_diff_grad(
            |theta| {
                let mut p = params.clone();
                p.set_flat(theta).unwrap();
                objective(&p, &x)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        prop_assert!(max_relative_error(&grads.to_flat(), numeric.as_slice(), 1e-8) < 1e-5);
        let numeric_in = finite_diff_grad(|x| objective(&params, x), &x, 1e-5).unwrap();
        prop_assert!(max_relative_error(grad_in.as_slice(), numeric_in.as_slice(), 1e-8) < 1e-5);
    }

    #[test]
    fn emitted_labels_are_already_introduced(seed in any::<u64>(), step in 0usize..4) {
        let schedule = standard_benchmark();
        let seen = schedule.classes_upto(step);
        let samples = sample_step(&schedule, step, 200, &mut Rng::new(seed)).unwrap();
        prop_assert!(samples.iter().all(|s| seen.contains(&s.y) && s.step == step));
    }

    #[test]
    fn permuted_schedules_keep_disjoint_class_sets(order in Just(vec![1usize, 2, 3]).prop_shuffle()) {
        let schedule = permute_tasks(&standard_benchmark(), &order).unwrap();
        let mut all: Vec<_> = schedule.class_sets.iter().flatten().copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        for (k, &old) in order.iter().enumerate() {
            prop_assert_eq!(&schedule.class_sets[k + 1], &standard_benchmark().class_sets[old]);
        }
    }

    #[test]
    fn time_shuffle_permutes_timestamps(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let schedule = standard_benchmark();
        let mut rng = Rng::new(seed);
        let mut samples: Vec<_> = (0..4).flat_map(|t| sample_step(&schedule, t, 25, &mut rng).unwrap()).collect();
        let key = |v: &[protoflow::stream::Sample]| {
            let mut t: Vec<u64> = v.iter().map(|s| s.timestamp.to_bits()).collect();
            t.sort_unstable();
            t
        };
        let before = key(&samples);
        let idx = time_shuffle(&mut samples, alpha, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), (alpha * 100.0).floor() as usize);
        prop_assert_eq!(key(&samples), before);
    }

    #[test]
    fn herding_with_budget_one_picks_the_point_nearest_the_mean(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..12),
    ) {
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let n = points.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let d = |p: &[f64]| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..points.len()).fold(0, |b, i| if d(&points[i]) < d(&points[b]) { i } else { b });
        prop_assert_eq!(herding_select(&refs, 1), vec![best]);
    }

    #[test]
    fn head_growth_preserves_existing_rows(seed in any::<u64>(), first in 1usize..4, more in 1usize..4) {
        let mut rng = Rng::new(seed);
        let mut head = Head::empty(5);
        head.grow(&(0..first).collect::<Vec<_>>(), HeadInit::Random(0.5), &mut rng).unwrap();
        let before = head.clone();
        head.grow(&(first..first + more).collect::<Vec<_>>(), HeadInit::Random(0.5), &mut rng).unwrap();
        prop_assert_eq!(head.len(), first + more);
        for r in 0..first {
            prop_assert_eq!(head.weights.row(r), before.weights.row(r));
            prop_assert_eq!(head.bias[r].to_bits(), before.bias[r].to_bits());
        }
    }

    #[test]
    fn encoder_features_are_finite(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 4)) {
        let enc = Encoder::new(4, 16, 8, &mut Rng::new(seed)).unwrap();
        let z = enc.encode(&x).unwrap();
        prop_assert_eq!(z.dim(), 8);
        prop_assert!(z.is_finite());
    }

    #[test]
    fn time_encoding_is_bounded_and_pairs_are_unit(
        half in 1usize..10,
        t in -5.0f64..5.0,
        t_first in -5.0f64..5.0,
        span in 0.0f64..5.0,
        global in any::<bool>(),
    ) {
        let cfg = TimeEncodingConfig {
            d_tau: 2 * half,
            normalization: if global { TimeNormalization::Global } else { TimeNormalization::PerClass },
            ..TimeEncodingConfig::default()
        };
        let enc = encode_time(&cfg, t, t_first, t_first + span).unwrap();
        prop_assert_eq!(enc.values.dim(), 2 * half);
        for pair in enc.values.as_slice().chunks(2) {
            prop_assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
        }
        for k in 2..cfg.d_tau {
            prop_assert!(cfg.frequency(k) >= cfg.frequency(k - 1));
        }
    }

    #[test]
    fn flow_loss_is_zero_exactly_at_agreement(
        obs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..5),
        shift in prop::collection::vec(-1.0f64..1.0, 4),
        which in 0usize..5,
    ) {
        let same = flow_loss(&obs, &obs).unwrap();
        prop_assert_eq!(same.value, 0.0);
        let mut pred = obs.clone();
        let i = which % pred.len();
        for (p, s) in pred[i].iter_mut().zip(&shift) {
            *p += s;
        }
        let moved = flow_loss(&pred, &obs).unwrap();
        prop_assert!(moved.value >= 0.0);
        prop_assert_eq!(moved.value > 0.0, shift.iter().any(|&s| s != 0.0));
    }

    #[test]
    fn margin_and_path_lemmas_hold_on_random_trajectories(seed in any::<u64>()) {
        let world = random_trajectory_world(10, 8, &mut Rng::new(seed));
        prop_assert!(check_margin_path(&world).pass);
        prop_assert!(check_path_curvature(&world.geometry()).pass);
    }

    #[test]
    fn margin_bound_is_decreasing_and_lipschitz(
        gamma_min in 0.5f64..5.0,
        sigma in 0.1f64..3.0,
        classes in 2usize..6,
        a in 0.0f64..10.0,
        b in 0.0f64..10.0,
    ) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(g_margin_bound(hi, classes, sigma) <= g_margin_bound(lo, classes, sigma));
        prop_assert!(check_g_lipschitz(gamma_min.max(sigma), classes, sigma, 64).pass);
    }
}
