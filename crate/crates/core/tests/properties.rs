//! Property tests for the library's contract invariants: shape laws, linearity,
//! loss identities, mining oracles, and metric monotonicity.

use proptest::prelude::*;

use quadtrack_core::eval::{curves, iou};
use quadtrack_core::loss::{combine_loss, pair_loss, triplet_loss, LossWeights};
use quadtrack_core::mining::{
    adapt_weights, build_label_map, init_balance_weights, select_hard_pair, MiningMode,
};
use quadtrack_core::rng::Rng;
use quadtrack_core::tensor::{bicubic_resize, conv2d, cross_correlate, Grid, Tensor};
use quadtrack_core::BoundingBox;

fn conv_len(n: usize, k: usize, s: usize) -> usize {
    (n - k) / s + 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_shape_formula(
        b in 1usize..3,
        ci in 1usize..4,
        co in 1usize..4,
        h in 1usize..12,
        w in 1usize..12,
        kh in 1usize..6,
        kw in 1usize..6,
        s in 1usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(kh <= h && kw <= w);
        let mut rng = Rng::from_seed(seed);
        let x = Tensor::<f32>::from_fn([b, ci, h, w], |_, _, _, _| rng.uniform(-1.0, 1.0) as f32);
        let k = Tensor::<f32>::from_fn([co, ci, kh, kw], |_, _, _, _| rng.uniform(-1.0, 1.0) as f32);
        let bias = vec![0.25f32; co];
        let y = conv2d(&x, &k, &bias, s).unwrap();
        prop_assert_eq!(y.shape(), [b, co, conv_len(h, kh, s), conv_len(w, kw, s)]);
        prop_assert!(y.all_finite());
    }

    #[test]
    fn conv_is_linear(
        seed in any::<u64>(),
        a in -2.0f64..2.0,
        bcoef in -2.0f64..2.0,
    ) {
        let mut rng = Rng::from_seed(seed);
        let mk = |rng: &mut Rng| Tensor::<f64>::from_fn([1, 2, 6, 7], |_, _, _, _| rng.uniform(-1.0, 1.0));
        let x = mk(&mut rng);
        let y = mk(&mut rng);
        let k = Tensor::<f64>::from_fn([2, 2, 3, 3], |_, _, _, _| rng.uniform(-1.0, 1.0));
        let bias = vec![0.0; 2];
        let mix = Tensor::from_fn([1, 2, 6, 7], |bb, c, i, j| {
            a * x.at(bb, c, i, j) + bcoef * y.at(bb, c, i, j)
        });
        let lhs = conv2d(&mix, &k, &bias, 1).unwrap();
        let cx = conv2d(&x, &k, &bias, 1).unwrap();
        let cy = conv2d(&y, &k, &bias, 1).unwrap();
        for (l, (px, py)) in lhs.data().iter().zip(cx.data().iter().zip(cy.data())) {
            let rhs = a * px + bcoef * py;
            prop_assert!((l - rhs).abs() <= 1e-5 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn bicubic_constant_stays_constant(
        v in -10.0f64..10.0,
        h in 2usize..9,
        w in 2usize..9,
        oh in 1usize..40,
        ow in 1usize..40,
    ) {
        let g = Grid::filled(h, w, v as f32);
        let up = bicubic_resize(&g, oh, ow).unwrap();
        for &x in up.data() {
            prop_assert!((x - v as f32).abs() < 1e-6);
        }
    }

    #[test]
    fn xcorr_equals_brute_force_exactly(
        seed in any::<u64>(),
        ch in 1usize..4,
        eh in 1usize..4,
        ew in 1usize..4,
        dh in 0usize..4,
        dw in 0usize..4,
    ) {
        let mut rng = Rng::from_seed(seed);
        let z = Tensor::<f32>::from_fn([1, ch, eh, ew], |_, _, _, _| rng.uniform(-1.0, 1.0) as f32);
        let x = Tensor::<f32>::from_fn([1, ch, eh + dh, ew + dw], |_, _, _, _| {
            rng.uniform(-1.0, 1.0) as f32
        });
        let g = cross_correlate(&z, &x).unwrap();
        prop_assert_eq!((g.height(), g.width()), (dh + 1, dw + 1));
        for oy in 0..=dh {
            for ox in 0..=dw {
                let mut acc = 0.0f32;
                for c in 0..ch {
                    for ky in 0..eh {
                        for kx in 0..ew {
                            acc += z.at(0, c, ky, kx) * x.at(0, c, oy + ky, ox + kx);
                        }
                    }
                }
                prop_assert_eq!(acc, g.at(oy, ox));
            }
        }
    }

    #[test]
    fn triplet_identities(f_plus in -50.0f64..50.0, f_minus in -50.0f64..50.0, shift in -30.0f64..30.0) {
        let out = triplet_loss(f_plus, f_minus).unwrap();
        prop_assert_eq!(out.s_plus + out.s_minus, 1.0);
        prop_assert!((out.loss - 2.0 * out.s_minus * out.s_minus).abs() < 1e-12);
        // Shift invariance: the shared max-subtraction cancels any offset.
        let shifted = triplet_loss(f_plus + shift, f_minus + shift).unwrap();
        prop_assert!((shifted.loss - out.loss).abs() < 1e-12);
        prop_assert!((shifted.d_f_plus - out.d_f_plus).abs() < 1e-12);
    }

    #[test]
    fn triplet_softmax_strictly_interior(f_plus in -18.0f64..18.0, f_minus in -18.0f64..18.0) {
        // The open-interval property holds wherever f64 can express it;
        // past a ~37 margin the winning side is indistinguishable from 1.
        let out = triplet_loss(f_plus, f_minus).unwrap();
        prop_assert!(out.s_plus > 0.0 && out.s_plus < 1.0);
        prop_assert!(out.s_minus > 0.0 && out.s_minus < 1.0);
    }

    #[test]
    fn triplet_monotone_in_margin(base in -20.0f64..20.0, m1 in -10.0f64..10.0, m2 in -10.0f64..10.0) {
        prop_assume!((m1 - m2).abs() > 1e-9);
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        let a = triplet_loss(base + lo, base).unwrap().loss;
        let b = triplet_loss(base + hi, base).unwrap().loss;
        // Larger (f+ - f-) margin gives strictly smaller loss.
        prop_assert!(b < a);
    }

    #[test]
    fn combine_identities(
        l1 in 0.0f64..5.0,
        l2 in 0.0f64..5.0,
        w1 in 0.01f64..3.0,
        w2 in 0.01f64..3.0,
        alpha in 0.1f64..10.0,
    ) {
        let w = LossWeights::new([w1, w2], 0.01);
        let out = combine_loss(l1, l2, &w).unwrap();
        prop_assert_eq!(out.d_l1 + out.d_l2, 1.0);
        // Positive rescaling of the weights leaves the loss unchanged.
        let scaled = combine_loss(l1, l2, &LossWeights::new([alpha * w1, alpha * w2], 1e-9)).unwrap();
        prop_assert!((scaled.loss - out.loss).abs() < 1e-12);
    }

    #[test]
    fn adapted_weights_sum_to_one_and_stay_positive(seed in any::<u64>()) {
        let mut rng = Rng::from_seed(seed);
        let y = build_label_map(9, 2.0).unwrap();
        let w = init_balance_weights(&y).unwrap();
        let v = Grid::new(9, 9, (0..81).map(|_| rng.uniform(-2.0, 2.0)).collect::<Vec<f64>>()).unwrap();
        let a1 = adapt_weights(&v, &y, &w).unwrap();
        prop_assert!((a1.sum() - 1.0).abs() < 1e-12);
        prop_assert!(a1.weights().iter().all(|&x| x > 0.0));
        // Re-running doubles the same violator set again: ratios of violator
        // to non-violator weights double per call.
        let a2 = adapt_weights(&v, &y, &a1).unwrap();
        prop_assert!((a2.sum() - 1.0).abs() < 1e-12);
        let min_pos = (0..81)
            .filter(|i| y.labels()[*i] == 1)
            .map(|i| v.data()[i])
            .fold(f64::INFINITY, f64::min);
        let violators: Vec<usize> = (0..81)
            .filter(|&i| y.labels()[i] == -1 && v.data()[i] > min_pos)
            .collect();
        if let (Some(&vi), Some(ni)) = (
            violators.first(),
            (0..81).find(|&i| y.labels()[i] == -1 && v.data()[i] <= min_pos),
        ) {
            let r0 = w.weights()[vi] / w.weights()[ni];
            let r1 = a1.weights()[vi] / a1.weights()[ni];
            let r2 = a2.weights()[vi] / a2.weights()[ni];
            prop_assert!((r1 - 2.0 * r0).abs() < 1e-9 * r0.max(1.0));
            prop_assert!((r2 - 4.0 * r0).abs() < 1e-9 * r0.max(1.0));
        }
    }

    #[test]
    fn hard_pair_matches_scan_oracle(seed in any::<u64>()) {
        let mut rng = Rng::from_seed(seed);
        let y = build_label_map(17, 2.0).unwrap();
        let v = Grid::new(
            17,
            17,
            (0..289).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let got = select_hard_pair(&v, &y, MiningMode::General).unwrap();
        // Exhaustive scan oracle.
        let (mut best_pos, mut best_neg) = (None, None);
        for r in 0..17 {
            for c in 0..17 {
                let s = v.at(r, c);
                if y.at(r, c) == 1 {
                    if best_pos.is_none_or(|(_, b)| s < b) {
                        best_pos = Some(((r, c), s));
                    }
                } else if best_neg.is_none_or(|(_, b)| s > b) {
                    best_neg = Some(((r, c), s));
                }
            }
        }
        prop_assert_eq!(got.pos_index, best_pos.unwrap().0);
        prop_assert_eq!(got.neg_index, best_neg.unwrap().0);
        let tracked = select_hard_pair(&v, &y, MiningMode::Tracking).unwrap();
        prop_assert_eq!(tracked.pos_index, (8, 8));
        prop_assert_eq!(tracked.neg_index, best_neg.unwrap().0);
    }

    #[test]
    fn pair_loss_stable_at_extreme_scores(seed in any::<u64>(), amp in 100.0f64..1000.0) {
        let mut rng = Rng::from_seed(seed);
        let y = build_label_map(5, 1.0).unwrap();
        let w = init_balance_weights(&y).unwrap();
        let v = Grid::new(5, 5, (0..25).map(|_| rng.uniform(-amp, amp)).collect::<Vec<f64>>()).unwrap();
        let out = pair_loss(&v, &y, &w).unwrap();
        prop_assert!(out.loss.is_finite());
        prop_assert!(out.grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn metric_curves_are_monotone(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = Rng::from_seed(seed);
        let bx = |rng: &mut Rng| {
            BoundingBox::new(
                rng.uniform(0.0, 80.0),
                rng.uniform(0.0, 80.0),
                rng.uniform(1.0, 40.0),
                rng.uniform(1.0, 40.0),
            )
            .unwrap()
        };
        let gt: Vec<BoundingBox> = (0..n).map(|_| bx(&mut rng)).collect();
        let pred: Vec<BoundingBox> = (0..n).map(|_| bx(&mut rng)).collect();
        let c = curves(&pred, &gt).unwrap();
        for win in c.precision.windows(2) {
            prop_assert!(win[1] >= win[0]);
        }
        for win in c.success.windows(2) {
            prop_assert!(win[1] <= win[0]);
        }
        for v in c.precision.iter().chain(&c.success) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn iou_symmetry_and_scale_invariance(
        ax in 0.0f64..50.0, ay in 0.0f64..50.0, aw in 1.0f64..30.0, ah in 1.0f64..30.0,
        bx in 0.0f64..50.0, by in 0.0f64..50.0, bw in 1.0f64..30.0, bh in 1.0f64..30.0,
        s in 0.1f64..8.0,
    ) {
        let a = BoundingBox::new(ax, ay, aw, ah).unwrap();
        let b = BoundingBox::new(bx, by, bw, bh).unwrap();
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        let scale = |r: &BoundingBox| BoundingBox::new(r.x * s, r.y * s, r.w * s, r.h * s).unwrap();
        prop_assert!((iou(&scale(&a), &scale(&b)) - iou(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn label_maps_have_positive_center_mass(size in 1usize..12, r in 1usize..5) {
        let size = 2 * size + 3; // odd, >= 5
        prop_assume!((r as f64) < size as f64 / 2.0);
        let y = build_label_map(size, r as f64).unwrap();
        prop_assert_eq!(y.at(size / 2, size / 2), 1);
        let w = init_balance_weights(&y).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
        let pos_mass: f64 = (0..size * size)
            .filter(|&i| y.labels()[i] == 1)
            .map(|i| w.weights()[i])
            .sum();
        prop_assert!((pos_mass - 0.5).abs() < 1e-12);
    }
}

/// The label-map identity the whole pipeline leans on, frozen by offset
/// enumeration: 17x17 at radius 2 has exactly 13 positive cells.
#[test]
fn label_map_17_2_enumeration() {
    let mut count = 0;
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            if dy * dy + dx * dx <= 4 {
                count += 1;
            }
        }
    }
    assert_eq!(count, 13);
    let y = build_label_map(17, 2.0).unwrap();
    assert_eq!(y.positive_count(), count);
}
