//! Analytic gradients checked against central finite differences.

use everywhere::attack::{everywhere_batch_gradient, AttackConfig};
use everywhere::imagekit::{split_blocks, Image, NormalizationSpec, Rect};
use everywhere::losses::{ce_targeted, logit_loss, margin_loss, LossKind, LossParams, TargetSpec};
use everywhere::models::{build_architecture, Architecture, Conv2d, Dense, Layer, Model};
use everywhere::rng::RngState;
use ndarray::{Array1, Array3};
use rand::Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn scalar_loss(kind: LossKind, logits: &Array1<f64>, target: usize) -> f64 {
    match kind {
        LossKind::Ce => ce_targeted(logits, target).unwrap(),
        LossKind::Logit => logit_loss(logits, target).unwrap(),
        LossKind::Margin => margin_loss(logits, target, LossParams::default().tau).unwrap(),
        LossKind::SupHigh => unreachable!(),
    }
}

/// Probes step in raw 0..255 pixel units, the scale budgets are given in.
#[test]
fn input_gradients_match_finite_differences() {
    let h = 1e-3;
    let norm = NormalizationSpec::new(vec![0.5, 0.45, 0.4], vec![0.29, 0.3, 0.28]).unwrap();
    for arch in Architecture::ALL {
        let model = build_architecture(arch, (3, 16, 16), 10, RngState(8)).unwrap();
        let mut g = RngState(9).generator();
        let mut worst = 0.0f64;
        for probe in 0..30 {
            let raw = Array3::from_shape_fn((3, 16, 16), |_| g.gen_range(0.0..255.0));
            let x = everywhere::imagekit::normalize(&raw, &norm).unwrap();
            let t = probe % 10;
            let (_, grad) = model
                .input_gradient(std::slice::from_ref(x.data()), |l| {
                    let mut d = everywhere::models::softmax(l);
                    d[t] -= 1.0;
                    Ok((ce_targeted(l, t)?, d))
                })
                .unwrap();
            let (c, i, j) = (g.gen_range(0..3), g.gen_range(0..16), g.gen_range(0..16));
            let f = |v: f64| {
                let mut r = raw.clone();
                r[[c, i, j]] = v;
                let y = everywhere::imagekit::normalize(&r, &norm).unwrap();
                ce_targeted(&model.forward(y.data()).unwrap(), t).unwrap()
            };
            let v = raw[[c, i, j]];
            let fd = (f(v + h) - f(v - h)) / (2.0 * h);
            let analytic = grad[0][[c, i, j]] / (255.0 * norm.std[c]);
            worst = worst.max(rel_err(analytic, fd));
        }
        assert!(worst <= 1e-3, "{arch}: worst relative error {worst}");
    }
}

fn toy_model() -> Model {
    let mut conv = Conv2d::zeros(3, 4, 3, 1);
    let mut dense = Dense::zeros(4, 3);
    let mut g = RngState(2).generator();
    conv.weight.mapv_inplace(|_| g.gen_range(-0.6..0.6));
    conv.bias.mapv_inplace(|_| g.gen_range(0.05..0.3));
    dense.weight.mapv_inplace(|_| g.gen_range(-1.0..1.0));
    Model::new(
        "toy",
        (3, 4, 4),
        3,
        vec![Layer::Conv(conv), Layer::Relu, Layer::GlobalAvgPool, Layer::Dense(dense)],
        Some(1),
    )
    .unwrap()
}

/// The concatenated objective built directly: mean loss over the global
/// input and each block kept alone on a zero background.
fn batch_objective(model: &Model, x: &Array3<f64>, rects: &[Rect], kind: LossKind, target: usize) -> f64 {
    let mut total = scalar_loss(kind, &model.forward(x).unwrap(), target);
    for r in rects {
        let local = Array3::from_shape_fn(x.dim(), |(c, i, j)| {
            let inside = i >= r.row && i < r.row + r.height && j >= r.col && j < r.col + r.width;
            if inside {
                x[[c, i, j]]
            } else {
                0.0
            }
        });
        total += scalar_loss(kind, &model.forward(&local).unwrap(), target);
    }
    total / (rects.len() + 1) as f64
}

#[test]
fn block_batch_gradient_matches_finite_differences() {
    let model = toy_model();
    let norm = NormalizationSpec::new(vec![0.4, 0.5, 0.6], vec![0.2, 0.25, 0.3]).unwrap();
    let px = Array3::from_shape_fn((3, 4, 4), |(c, y, x)| 0.1 + 0.05 * (c + 2 * y + 3 * x) as f64 % 0.8);
    let grid = split_blocks(4, 4, 2).unwrap();
    let spec = TargetSpec::new(2, 0, 1, 3).unwrap();
    let h = 1e-3;
    for kind in [LossKind::Ce, LossKind::Logit, LossKind::Margin] {
        for rects in [vec![], vec![grid.rects[1]], vec![grid.rects[0], grid.rects[3], grid.rects[2]]] {
            let cfg = AttackConfig {
                partitions: 2,
                samples: rects.len(),
                loss: LossParams::with_kind(kind),
                ..AttackConfig::default()
            };
            // Objective as a function of the pixel-space perturbation.
            let obj = |delta: &Array3<f64>| {
                let img = Image::from_pixels(&(&px + delta), &norm).unwrap();
                batch_objective(&model, img.data(), &rects, kind, 2)
            };
            let x = Image::from_pixels(&px, &norm).unwrap();
            let (_, gx) = everywhere_batch_gradient(&model, x.data(), &spec, &cfg, &rects).unwrap();
            let zero = Array3::<f64>::zeros((3, 4, 4));
            for ((c, i, j), &gv) in gx.indexed_iter() {
                let analytic = gv / norm.std[c];
                let mut e = zero.clone();
                e[[c, i, j]] = h;
                let fd = (obj(&e) - obj(&(-&e))) / (2.0 * h);
                assert!(
                    rel_err(analytic, fd) <= 1e-3,
                    "{kind} {} blocks at {:?}: {analytic} vs {fd}",
                    rects.len(),
                    (c, i, j)
                );
            }
        }
    }
}
