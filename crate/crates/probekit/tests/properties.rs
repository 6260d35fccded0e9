//! Property-based checks of the math-level invariants the rest of the stack
//! relies on.

use proptest::collection::vec;
use proptest::prelude::*;

use probekit::metrics::{average_precision, macro_map, top1_accuracy};
use probekit::rng::Rng;
use probekit::tensor::{dropout, interpolate_time, interpolate_time_backward, softmax, Tensor};
use probekit::train::ce_loss;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    vec(-10.0..10.0f64, len)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        logits in finite_vec(1..12),
        shift in -50.0..50.0f64,
    ) {
        let t = Tensor::vector(logits.clone());
        let y = softmax(&t).unwrap();
        let sum: f64 = y.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(y.data().iter().all(|&p| p > 0.0));

        let shifted = Tensor::vector(logits.iter().map(|v| v + shift).collect());
        let ys = softmax(&shifted).unwrap();
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_linear(
        t_in in 1usize..10,
        t_out in 1usize..10,
        f in 1usize..5,
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::from_seed(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect() };
        let x = Tensor::from_vec(&[t_in, f], draw(t_in * f)).unwrap();
        let y = Tensor::from_vec(&[t_in, f], draw(t_in * f)).unwrap();
        let combo = Tensor::from_vec(
            &[t_in, f],
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let lhs = interpolate_time(&combo, t_out).unwrap();
        let ix = interpolate_time(&x, t_out).unwrap();
        let iy = interpolate_time(&y, t_out).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(ix.data()).zip(iy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_backward_is_the_transpose(
        t_in in 1usize..10,
        t_out in 1usize..10,
        f in 1usize..5,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::from_seed(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect() };
        let x = Tensor::from_vec(&[t_in, f], draw(t_in * f)).unwrap();
        let u = Tensor::from_vec(&[t_out, f], draw(t_out * f)).unwrap();
        let ix = interpolate_time(&x, t_out).unwrap();
        let itu = interpolate_time_backward(t_in, t_out, &u);
        let lhs: f64 = ix.data().iter().zip(u.data()).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.data().iter().zip(itu.data()).map(|(p, q)| p * q).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot(
        logits in finite_vec(1..10),
        target_pick in 0usize..100,
    ) {
        let target = target_pick % logits.len();
        let t = Tensor::vector(logits);
        let (_, grad) = ce_loss(&t, target).unwrap();
        let sm = softmax(&t).unwrap();
        for (j, (g, p)) in grad.data().iter().zip(sm.data()).enumerate() {
            let want = p - if j == target { 1.0 } else { 0.0 };
            prop_assert!((g - want).abs() < 1e-12);
        }
        // Logit gradients of a shift-invariant loss sum to zero.
        let total: f64 = grad.data().iter().sum();
        prop_assert!(total.abs() < 1e-12);
    }

    #[test]
    fn top1_is_invariant_under_increasing_transforms(
        rows in vec(finite_vec(3..6), 1..8),
        scale in 0.1..5.0f64,
    ) {
        let c = rows.iter().map(|r| r.len()).min().unwrap();
        let logits: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r[..c].to_vec())).collect();
        let labels: Vec<u32> = (0..logits.len()).map(|i| (i % c) as u32).collect();
        let base = top1_accuracy(&logits, &labels).unwrap();
        let warped: Vec<Tensor> = logits
            .iter()
            .map(|t| Tensor::vector(t.data().iter().map(|v| scale * v + v.powi(3)).collect()))
            .collect();
        prop_assert_eq!(top1_accuracy(&warped, &labels).unwrap(), base);
    }

    #[test]
    fn ap_is_rank_invariant_and_matches_counting_oracle(
        n in 1usize..12,
        seed in 0u64..2000,
    ) {
        let mut rng = Rng::from_seed(seed);
        // Coarse scores so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_index(5) as f64).collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.uniform01() < 0.5).collect();
        if !positives.iter().any(|&p| p) {
            positives[0] = true;
        }
        let ap = average_precision(&scores, &positives).unwrap();

        // Strictly increasing transform preserves ranks (and ties).
        let warped: Vec<f64> = scores.iter().map(|v| (v * 0.3).exp() + v).collect();
        prop_assert!((average_precision(&warped, &positives).unwrap() - ap).abs() < 1e-12);

        // Brute-force precision-at-positive oracle.
        let mut acc = 0.0;
        let mut num_pos = 0;
        for i in 0..n {
            if !positives[i] { continue; }
            num_pos += 1;
            let mut rank = 1;
            let mut pos_above = 1;
            for j in 0..n {
                if j != i && (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) {
                    rank += 1;
                    if positives[j] { pos_above += 1; }
                }
            }
            acc += pos_above as f64 / rank as f64;
        }
        prop_assert!((ap - acc / num_pos as f64).abs() < 1e-12);
    }

    #[test]
    fn macro_map_perfect_scores_are_one(
        n in 1usize..10,
        c in 2usize..5,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::from_seed(seed);
        let targets: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..c).map(|_| (rng.uniform01() < 0.5) as u8).collect())
            .collect();
        prop_assume!(targets.iter().any(|t| t.iter().any(|&y| y == 1)));
        let scores: Vec<Tensor> = targets
            .iter()
            .map(|t| Tensor::vector(t.iter().map(|&y| y as f64).collect()))
            .collect();
        prop_assert_eq!(macro_map(&scores, &targets).unwrap().value, 1.0);
    }

    #[test]
    fn shuffle_is_a_permutation(n in 0usize..200, seed in 0u64..1000) {
        let mut xs: Vec<usize> = (0..n).collect();
        Rng::from_seed(seed).shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn dropout_masks_are_seed_deterministic(
        p in 0.0..0.9f64,
        n in 1usize..64,
        seed in 0u64..1000,
    ) {
        let x = Tensor::from_vec(&[n, 1], vec![1.0; n]).unwrap();
        let run = |seed: u64| {
            let mut rng = Rng::from_seed(seed);
            dropout(&x, p, &mut rng, true).unwrap()
        };
        let (ya, ma) = run(seed);
        let (yb, mb) = run(seed);
        prop_assert_eq!(ya.data(), yb.data());
        prop_assert_eq!(ma, mb);
        // Surviving entries carry exactly the inverted-dropout scale.
        for &v in ya.data() {
            prop_assert!(v == 0.0 || (v - 1.0 / (1.0 - p)).abs() < 1e-15);
        }
    }
}
