//! Analytic-vs-numeric gradient verification.
//!
//! Every differentiable operation in the crate is checked against the
//! central finite-difference oracle, in 64-bit (tight tolerance) and in the
//! production 32-bit types (loose tolerance). The suite backs the
//! `gradcheck` CLI subcommand and the test suite.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::embed::{self, EmbedNet, LayerSpec};
use crate::loss::{self, LossWeights};
use crate::mining;
use crate::rng::Rng;
use crate::score;
use crate::tensor::{
    conv2d, conv2d_grad, finite_diff_grad, max_pool, max_pool_grad, relu_grad, Tensor,
};
use crate::train;

/// Largest per-coordinate relative error between two gradient vectors.
///
/// Coordinates far smaller than the dominant gradient magnitude are judged
/// against a floor of `1e-3 * max|g|` so that finite-difference noise on
/// negligible entries cannot fail the check.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-9);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tolerance
    }
}

fn random_tensor(shape: [usize; 4], rng: &mut Rng, amp: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform(-amp, amp))
}

fn check_conv(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let x = random_tensor([2, 2, 6, 7], rng, 1.0);
    let k = random_tensor([3, 2, 3, 3], rng, 1.0);
    let bias: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
    let stride = 2;
    let up = random_tensor([2, 3, 2, 3], rng, 1.0);
    let (gi, gk, gb) = conv2d_grad(&x, &k, stride, &up).unwrap();
    let loss = |xs: &[f64], ks: &[f64], bs: &[f64]| {
        let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
        let kt = Tensor::new(k.shape(), ks.to_vec()).unwrap();
        conv2d(&xt, &kt, bs, stride)
            .unwrap()
            .data()
            .iter()
            .zip(up.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let eps = 1e-5;
    let gi_n = finite_diff_grad(|v| loss(v, k.data(), &bias), x.data(), eps);
    let gk_n = finite_diff_grad(|v| loss(x.data(), v, &bias), k.data(), eps);
    let gb_n = finite_diff_grad(|v| loss(x.data(), k.data(), v), &bias, eps);
    rows.push(CheckRow {
        name: "conv2d/input".into(),
        max_rel_err: max_rel_err(gi.data(), &gi_n),
        tolerance: tol,
    });
    rows.push(CheckRow {
        name: "conv2d/kernels".into(),
        max_rel_err: max_rel_err(gk.data(), &gk_n),
        tolerance: tol,
    });
    rows.push(CheckRow {
        name: "conv2d/bias".into(),
        max_rel_err: max_rel_err(&gb, &gb_n),
        tolerance: tol,
    });
}

fn check_relu(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    // Keep samples away from the kink at zero where the derivative jumps.
    let x = Tensor::from_fn([1, 2, 4, 4], |_, _, _, _| {
        let v = rng.uniform(0.1, 1.0);
        if rng.next_f64() < 0.5 {
            -v
        } else {
            v
        }
    });
    let up = random_tensor(x.shape(), rng, 1.0);
    let g = relu_grad(&x, &up).unwrap();
    let loss = |xs: &[f64]| {
        let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
        crate::tensor::relu(&xt)
            .data()
            .iter()
            .zip(up.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let g_n = finite_diff_grad(loss, x.data(), 1e-6);
    rows.push(CheckRow {
        name: "relu".into(),
        max_rel_err: max_rel_err(g.data(), &g_n),
        tolerance: tol,
    });
}

fn check_max_pool(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let x = random_tensor([1, 2, 6, 6], rng, 1.0);
    let (_, am) = max_pool(&x, 3, 2).unwrap();
    let up = random_tensor([1, 2, 2, 2], rng, 1.0);
    let g = max_pool_grad(&x, 3, 2, &am, &up).unwrap();
    let loss = |xs: &[f64]| {
        let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
        let (y, _) = max_pool(&xt, 3, 2).unwrap();
        y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    };
    let g_n = finite_diff_grad(loss, x.data(), 1e-7);
    rows.push(CheckRow {
        name: "max_pool".into(),
        max_rel_err: max_rel_err(g.data(), &g_n),
        tolerance: tol,
    });
}

fn check_score_map(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let z = random_tensor([1, 2, 3, 3], rng, 1.0);
    let x = random_tensor([1, 2, 5, 5], rng, 1.0);
    let b = rng.uniform(-0.5, 0.5);
    let up = Tensor::from_fn([1, 1, 3, 3], |_, _, r, c| 0.2 + 0.1 * (r * 3 + c) as f64);
    let up_grid = crate::tensor::Grid::new(3, 3, up.data().to_vec()).unwrap();
    let (dz, dx, db) = score::score_map_grad(&up_grid, &z, &x).unwrap();
    let loss = |zs: &[f64], xs: &[f64], bb: f64| {
        let zt = Tensor::new(z.shape(), zs.to_vec()).unwrap();
        let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
        let sm = score::score_map_with_bias(bb, &zt, &xt).unwrap();
        sm.values
            .data()
            .iter()
            .zip(up_grid.data())
            .map(|(a, g)| a * g)
            .sum()
    };
    let eps = 1e-6;
    let dz_n = finite_diff_grad(|v| loss(v, x.data(), b), z.data(), eps);
    let dx_n = finite_diff_grad(|v| loss(z.data(), v, b), x.data(), eps);
    let db_n = finite_diff_grad(|v| loss(z.data(), x.data(), v[0]), &[b], eps);
    rows.push(CheckRow {
        name: "score_map/exemplar".into(),
        max_rel_err: max_rel_err(dz.data(), &dz_n),
        tolerance: tol,
    });
    rows.push(CheckRow {
        name: "score_map/search".into(),
        max_rel_err: max_rel_err(dx.data(), &dx_n),
        tolerance: tol,
    });
    rows.push(CheckRow {
        name: "score_map/bias".into(),
        max_rel_err: max_rel_err(&[db], &db_n),
        tolerance: tol,
    });
}

fn check_pair_loss(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let label = mining::build_label_map(5, 1.0).unwrap();
    let w = mining::init_balance_weights(&label).unwrap();
    let v: Vec<f64> = (0..25).map(|_| rng.uniform(-3.0, 3.0)).collect();
    let grid = crate::tensor::Grid::new(5, 5, v.clone()).unwrap();
    let out = loss::pair_loss(&grid, &label, &w).unwrap();
    let loss_of = |vs: &[f64]| {
        let g = crate::tensor::Grid::new(5, 5, vs.to_vec()).unwrap();
        loss::pair_loss(&g, &label, &w).unwrap().loss
    };
    let numeric = finite_diff_grad(loss_of, &v, 1e-6);
    rows.push(CheckRow {
        name: "pair_loss".into(),
        max_rel_err: max_rel_err(out.grad.data(), &numeric),
        tolerance: tol,
    });
}

fn check_triplet_loss(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let p = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
    let out = loss::triplet_loss(p[0], p[1]).unwrap();
    let numeric = finite_diff_grad(|v| loss::triplet_loss(v[0], v[1]).unwrap().loss, &p, 1e-6);
    rows.push(CheckRow {
        name: "triplet_loss".into(),
        max_rel_err: max_rel_err(&[out.d_f_plus, out.d_f_minus], &numeric),
        tolerance: tol,
    });
}

fn check_combine_loss(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let point = [
        rng.uniform(0.1, 2.0),  // l1
        rng.uniform(0.1, 2.0),  // l2
        rng.uniform(0.05, 1.5), // w1
        rng.uniform(0.05, 1.5), // w2
    ];
    let weights = LossWeights::new([point[2], point[3]], 0.01);
    let out = loss::combine_loss(point[0], point[1], &weights).unwrap();
    let numeric = finite_diff_grad(
        |v| {
            let w = LossWeights::new([v[2], v[3]], 0.01);
            loss::combine_loss(v[0], v[1], &w).unwrap().loss
        },
        &point,
        1e-7,
    );
    let analytic = [out.d_l1, out.d_l2, out.d_w[0], out.d_w[1]];
    rows.push(CheckRow {
        name: "combine_loss".into(),
        max_rel_err: max_rel_err(&analytic, &numeric),
        tolerance: tol,
    });
}

fn check_embed_net(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let specs = vec![
        LayerSpec::Conv {
            out_channels: 3,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Conv {
            out_channels: 2,
            kernel: 3,
            stride: 2,
        },
    ];
    let mut net: EmbedNet<f64> = embed::init_params_unchecked(&specs, 2, rng.next_u64());
    // Nudge biases off zero so their gradients are informative.
    for p in net.conv_params_mut() {
        for b in &mut p.bias {
            *b = rng.uniform(-0.2, 0.2);
        }
    }
    let img = random_tensor([1, 2, 9, 9], rng, 0.8);
    let (out, cache) = embed::forward(&net, &img).unwrap();
    let up = random_tensor(out.shape(), rng, 1.0);
    let grads = embed::backward(&net, &cache, &up).unwrap();

    let n = net.param_count();
    let flat: Vec<f64> = (0..n).map(|i| net.get_param(i).unwrap()).collect();
    let loss = |params: &[f64]| {
        let mut m = net.clone();
        for (i, &v) in params.iter().enumerate() {
            m.set_param(i, v);
        }
        let (o, _) = embed::forward(&m, &img).unwrap();
        o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    };
    let numeric = finite_diff_grad(loss, &flat, 1e-6);
    let analytic: Vec<f64> = (0..n).map(|i| grads.get(i).unwrap()).collect();
    rows.push(CheckRow {
        name: "embed_net/backward".into(),
        max_rel_err: max_rel_err(&analytic, &numeric),
        tolerance: tol,
    });
}

/// End-to-end training-step gradient at the desk preset. The precompute
/// decisions (weight map, selected hard pair) are frozen at the base point,
/// matching what the analytic backward differentiates. A seeded sample of
/// parameter coordinates is checked; exhaustive finite differences over
/// every weight would take hours.
///
/// The analytic side runs in the working precision `T`; the oracle always
/// differentiates a 64-bit twin evaluated at the same parameter values, as
/// the finite-difference contract specifies. Central differences are only
/// a derivative where the loss is smooth, and the net is piecewise smooth
/// through its ReLU gates and pooling argmaxes, so each coordinate is
/// probed at two step sizes and skipped when the estimates disagree (the
/// secant crossed a kink). The row fails outright if too few coordinates
/// survive.
fn check_train_step<T: crate::scalar::Scalar>(
    name: &str,
    rng: &mut Rng,
    coords: usize,
    tol: f64,
    rows: &mut Vec<CheckRow>,
) {
    let net: EmbedNet<T> = embed::init_params::<f64>(&embed::desk_arch(), 3, rng.next_u64())
        .unwrap()
        .cast();
    // Smallest inputs that keep every desk layer valid and give a 3x3 map.
    let exemplar: Tensor<T> = random_tensor([1, 3, 87, 87], rng, 0.5).cast();
    let search: Tensor<T> = random_tensor([1, 3, 103, 103], rng, 0.5).cast();
    let label = mining::build_label_map(3, 1.0).unwrap();
    let weights = LossWeights::new([0.9, 0.1], 0.01);

    let frozen = train::precompute_for_gradcheck(&net, &exemplar, &search, &label).unwrap();
    let grads = train::pair_gradients(
        &net,
        &weights,
        &exemplar,
        &search,
        &label,
        train::TrainMode::QuadLearned,
    )
    .unwrap();

    // 64-bit twin of the same point for the oracle side.
    let net64: EmbedNet<f64> = net.cast();
    let ex64: Tensor<f64> = exemplar.cast();
    let se64: Tensor<f64> = search.cast();

    let n = net.param_count();
    let mut picked = Vec::with_capacity(coords);
    for _ in 0..coords {
        picked.push(rng.gen_range(n));
    }
    picked.sort_unstable();
    picked.dedup();

    let loss_at = |m: &EmbedNet<f64>, w: &LossWeights| -> f64 {
        train::frozen_loss(m, w, &ex64, &se64, &label, &frozen).unwrap()
    };
    let fd_param = |i: usize, eps: f64| -> f64 {
        let orig = net64.get_param(i).unwrap();
        let mut plus = net64.clone();
        plus.set_param(i, orig + eps);
        let mut minus = net64.clone();
        minus.set_param(i, orig - eps);
        (loss_at(&plus, &weights) - loss_at(&minus, &weights)) / (2.0 * eps)
    };

    let eps = 1e-5;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &i in &picked {
        let n1 = fd_param(i, eps);
        let n2 = fd_param(i, eps / 4.0);
        if (n1 - n2).abs() > 0.02 * n1.abs().max(n2.abs()).max(1e-12) {
            continue;
        }
        numeric.push(n1);
        analytic.push(grads.net.get(i).unwrap().to_f64());
    }
    let kept = numeric.len();
    // Score bias and the combination weights enter the loss smoothly.
    {
        let mut plus = net64.clone();
        plus.set_score_bias(net64.score_bias() + eps);
        let mut minus = net64.clone();
        minus.set_score_bias(net64.score_bias() - eps);
        numeric.push((loss_at(&plus, &weights) - loss_at(&minus, &weights)) / (2.0 * eps));
        analytic.push(grads.score_bias);
    }
    for j in 0..2 {
        let we = 1e-6;
        let mut wp = weights.values();
        wp[j] += we;
        let mut wm = weights.values();
        wm[j] -= we;
        numeric.push(
            (loss_at(&net64, &LossWeights::new(wp, 0.01))
                - loss_at(&net64, &LossWeights::new(wm, 0.01)))
                / (2.0 * we),
        );
        analytic.push(grads.loss_weights[j]);
    }
    let err = if kept * 2 < picked.len() {
        // Too many kink-crossing samples: no meaningful verification.
        f64::INFINITY
    } else {
        max_rel_err(&analytic, &numeric)
    };
    rows.push(CheckRow {
        name: format!("train_step/{name}"),
        max_rel_err: err,
        tolerance: tol,
    });
}

fn check_conv_f32(rng: &mut Rng, tol: f64, rows: &mut Vec<CheckRow>) {
    let x64 = random_tensor([1, 2, 6, 6], rng, 1.0);
    let k64 = random_tensor([2, 2, 3, 3], rng, 1.0);
    let up64 = random_tensor([1, 2, 4, 4], rng, 1.0);
    // Analytic gradients in f32; the oracle differentiates the 64-bit twin
    // of the same (f32-quantized) point.
    let (x, k, up): (Tensor<f32>, Tensor<f32>, Tensor<f32>) = (x64.cast(), k64.cast(), up64.cast());
    let bias = [0.1f32, -0.2];
    let (gi, gk, gb) = conv2d_grad(&x, &k, 1, &up).unwrap();
    let loss = |xs: &[f64], ks: &[f64], bs: &[f64]| {
        let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
        let kt = Tensor::new(k.shape(), ks.to_vec()).unwrap();
        conv2d(&xt, &kt, bs, 1)
            .unwrap()
            .data()
            .iter()
            .zip(up.data())
            .map(|(a, b)| a * (*b as f64))
            .sum()
    };
    let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let ks: Vec<f64> = k.data().iter().map(|&v| v as f64).collect();
    let bs: Vec<f64> = bias.iter().map(|&v| v as f64).collect();
    let eps = 1e-5;
    let gi_n = finite_diff_grad(|v| loss(v, &ks, &bs), &xs, eps);
    let gk_n = finite_diff_grad(|v| loss(&xs, v, &bs), &ks, eps);
    let gb_n = finite_diff_grad(|v| loss(&xs, &ks, v), &bs, eps);
    let ga: Vec<f64> = gi.data().iter().map(|&v| v as f64).collect();
    let ka: Vec<f64> = gk.data().iter().map(|&v| v as f64).collect();
    let ba: Vec<f64> = gb.iter().map(|&v| v as f64).collect();
    rows.push(CheckRow {
        name: "conv2d/f32".into(),
        max_rel_err: max_rel_err(&ga, &gi_n)
            .max(max_rel_err(&ka, &gk_n))
            .max(max_rel_err(&ba, &gb_n)),
        tolerance: tol,
    });
}

/// Run the whole verification suite. `tol64` applies to the 64-bit checks
/// (default 1e-6), with 1e-3 for the 32-bit re-executions.
pub fn run_suite(seed: u64, tol64: f64) -> Vec<CheckRow> {
    let tol32 = 1e-3;
    let mut rng = Rng::from_seed(seed);
    let mut rows = Vec::new();
    check_conv(&mut rng, tol64, &mut rows);
    check_relu(&mut rng, tol64, &mut rows);
    check_max_pool(&mut rng, tol64, &mut rows);
    check_score_map(&mut rng, tol64, &mut rows);
    check_pair_loss(&mut rng, tol64, &mut rows);
    check_triplet_loss(&mut rng, tol64, &mut rows);
    check_combine_loss(&mut rng, tol64, &mut rows);
    check_embed_net(&mut rng, tol64, &mut rows);
    check_train_step::<f64>("desk64", &mut rng, 32, tol64, &mut rows);
    check_conv_f32(&mut rng, tol32, &mut rows);
    check_train_step::<f32>("desk32", &mut rng, 16, tol32, &mut rows);
    rows
}
