//! Ignored micro-benchmarks for the hot paths; run on demand with
//! `cargo test --test bench_parts -- --ignored --nocapture --test-threads=1`.

use std::time::Instant;

use quadtrack_core::bbox::BoundingBox;
use quadtrack_core::embed::{desk_arch, forward, init_params};
use quadtrack_core::loss::LossWeights;
use quadtrack_core::mining::build_label_map;
use quadtrack_core::score::score_map;
use quadtrack_core::tensor::{bicubic_resize, conv2d, sample_patch, Tensor};
use quadtrack_core::track::{track_init, track_step, TrackParams};
use quadtrack_core::train::{pair_gradients, TrainMode, LABEL_RADIUS};

fn time_ms(n: usize, mut f: impl FnMut()) -> f64 {
    let t0 = Instant::now();
    for _ in 0..n {
        f();
    }
    t0.elapsed().as_secs_f64() * 1000.0 / n as f64
}

#[test]
#[ignore]
fn bench_parts() {
    let net = init_params::<f32>(&desk_arch(), 3, 1).unwrap();
    let img = Tensor::<f32>::from_fn([1, 3, 255, 255], |_, c, y, x| {
        ((c + y + x) % 11) as f32 * 0.05
    });
    let ex = Tensor::<f32>::from_fn([1, 3, 127, 127], |_, c, y, x| {
        ((c + 2 * y + x) % 7) as f32 * 0.1
    });

    eprintln!(
        "search forward: {:.1} ms",
        time_ms(5, || {
            forward(&net, &img).unwrap();
        })
    );
    eprintln!(
        "exemplar forward: {:.1} ms",
        time_ms(5, || {
            forward(&net, &ex).unwrap();
        })
    );

    let (zf, _) = forward(&net, &ex).unwrap();
    let (xf, _) = forward(&net, &img).unwrap();
    eprintln!(
        "xcorr: {:.1} ms",
        time_ms(5, || {
            score_map(&net, &zf, &xf).unwrap();
        })
    );
    let sm = score_map(&net, &zf, &xf).unwrap();
    eprintln!(
        "upsample: {:.1} ms",
        time_ms(5, || {
            bicubic_resize(&sm.values, 272, 272).unwrap();
        })
    );
    eprintln!(
        "sample_patch 255: {:.1} ms",
        time_ms(5, || {
            sample_patch(&img, (127.0, 127.0), 120.0, 255).unwrap();
        })
    );

    let l1in = Tensor::<f32>::from_fn([1, 3, 255, 255], |_, _, y, x| ((y * x) % 13) as f32 * 0.02);
    let k1 = Tensor::<f32>::from_fn([16, 3, 11, 11], |_, _, _, _| 0.01);
    eprintln!(
        "conv1 s2 (88 MMAC): {:.1} ms",
        time_ms(5, || {
            conv2d(&l1in, &k1, &[0.0; 16], 2).unwrap();
        })
    );
    let l2in = Tensor::<f32>::from_fn([1, 16, 61, 61], |_, _, y, x| ((y + x) % 9) as f32 * 0.03);
    let k2 = Tensor::<f32>::from_fn([32, 16, 5, 5], |_, _, _, _| 0.01);
    eprintln!(
        "conv2 s1 (41.6 MMAC): {:.1} ms",
        time_ms(5, || {
            conv2d(&l2in, &k2, &[0.0; 32], 1).unwrap();
        })
    );
}

#[test]
#[ignore]
fn bench_step_level() {
    let net = init_params::<f32>(&desk_arch(), 3, 1).unwrap();
    let frame = Tensor::<f32>::from_fn([1, 3, 144, 144], |_, c, y, x| {
        ((c * 31 + y * 7 + x * 3) % 17) as f32 / 17.0
    });
    let init = BoundingBox::new(50.0, 50.0, 30.0, 30.0).unwrap();
    let mut state = track_init(&net, &frame, &init).unwrap();
    let params = TrackParams::default();
    eprintln!(
        "track_step: {:.1} ms",
        time_ms(10, || {
            track_step(&net, &params, &mut state, &frame).unwrap();
        })
    );

    let exemplar = Tensor::<f32>::from_fn([1, 3, 127, 127], |_, c, y, x| {
        ((c + y + x) % 9) as f32 * 0.1
    });
    let search = Tensor::<f32>::from_fn([1, 3, 255, 255], |_, c, y, x| {
        ((c + y * 2 + x) % 11) as f32 * 0.08
    });
    let label = build_label_map(17, LABEL_RADIUS).unwrap();
    let w = LossWeights::new([0.9, 0.1], 0.01);
    eprintln!(
        "train pair fwd+bwd: {:.1} ms",
        time_ms(5, || {
            pair_gradients(&net, &w, &exemplar, &search, &label, TrainMode::QuadLearned).unwrap();
        })
    );
}
