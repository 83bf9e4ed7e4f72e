//! The iterative attack loop: signed-gradient steps on a pixel-space
//! perturbation with DI, TI and MI, optionally attacking N mean-padded local
//! blocks jointly with the global image.

use ndarray::{Array2, Array3};

use super::di::DiTransform;
use super::ti::{gaussian_kernel, mi_accumulate, ti_smooth, MomentumState};
use super::AttackConfig;
use crate::error::{Error, Result};
use crate::imagekit::{
    clip_entry, mask_to_rect, sample_blocks, shape_err, split_blocks, Image, Perturbation, Rect,
};
use crate::losses::{loss_and_grad, suphigh_direction, LossKind, TargetSpec};
use crate::models::Model;
use crate::rng::RngState;

pub(crate) const DI_STREAM: u64 = 1;
pub(crate) const BLOCK_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub adversarial: Image,
    pub perturbation: Perturbation,
    /// Mean batch loss observed at each iteration, before the update.
    pub losses: Vec<f64>,
}

/// Loss value and its *descent* gradient w.r.t. one model input. SupHigh's
/// ascent direction is negated so every loss is handled as a minimization.
pub fn image_objective(
    model: &Model,
    x: &Array3<f64>,
    spec: &TargetSpec,
    cfg: &AttackConfig,
) -> Result<(f64, Array3<f64>)> {
    match cfg.loss.kind {
        LossKind::SupHigh => {
            let (dir, logits) = suphigh_direction(model, x, spec, cfg.loss.beta1, cfg.loss.beta2)?;
            let value = -(logits[spec.target] - cfg.loss.beta1 * logits[spec.original]);
            Ok((value, -dir))
        }
        _ => {
            let trace = model.trace(x)?;
            let (loss, dl) = loss_and_grad(&trace.logits, spec.target, &cfg.loss)?;
            Ok((loss, model.backprop(&trace, &dl)))
        }
    }
}

/// Mean loss over `[x, local(x, r) for r in rects]` and its gradient w.r.t.
/// `x`: the global gradient plus each local gradient masked to its block,
/// divided by the batch size. `x` is the (already DI-transformed) input.
pub fn everywhere_batch_gradient(
    model: &Model,
    x: &Array3<f64>,
    spec: &TargetSpec,
    cfg: &AttackConfig,
    rects: &[Rect],
) -> Result<(f64, Array3<f64>)> {
    let (mut total_loss, mut total) = image_objective(model, x, spec, cfg)?;
    for &r in rects {
        let local = mask_to_rect(x, r)?;
        let (loss, g) = image_objective(model, &local, spec, cfg)?;
        total_loss += loss;
        total += &mask_to_rect(&g, r)?;
    }
    let scale = 1.0 / (rects.len() + 1) as f64;
    Ok((total_loss * scale, total * scale))
}

/// Model input for the current perturbation.
pub(crate) fn perturbed_input(image: &Image, delta: &Array3<f64>) -> Array3<f64> {
    let mut x = image.data().clone();
    for (c, (mut plane, d)) in x.outer_iter_mut().zip(delta.outer_iter()).enumerate() {
        let s = image.norm().std[c];
        ndarray::Zip::from(&mut plane).and(&d).for_each(|v, &dv| *v += dv / s);
    }
    x
}

/// Chain rule from normalized input space to pixel-space δ.
pub(crate) fn to_delta_space(image: &Image, mut g: Array3<f64>) -> Array3<f64> {
    for (c, mut plane) in g.outer_iter_mut().enumerate() {
        let s = image.norm().std[c];
        plane.mapv_inplace(|v| v / s);
    }
    g
}

/// Shared post-processing of a raw δ-gradient: TI, MI, signed step, clip.
struct Stepper {
    kernel: Option<Array2<f64>>,
    momentum: Option<MomentumState>,
    mu: f64,
    alpha: f64,
    eps: f64,
    pixels: Array3<f64>,
}

impl Stepper {
    fn new(image: &Image, cfg: &AttackConfig) -> Result<Self> {
        Ok(Stepper {
            kernel: if cfg.ti {
                Some(gaussian_kernel(cfg.ti_kernel)?)
            } else {
                None
            },
            momentum: cfg.mi.then(|| MomentumState::zeros(image.shape())),
            mu: cfg.mi_decay,
            alpha: cfg.alpha_pixels(),
            eps: cfg.epsilon_pixels(),
            pixels: image.to_pixels(),
        })
    }

    fn step(&mut self, delta: &mut Array3<f64>, grad: Array3<f64>) -> Result<()> {
        let grad = match &self.kernel {
            Some(k) => ti_smooth(&grad, k)?,
            None => grad,
        };
        let dir = match self.momentum.take() {
            Some(state) => {
                let next = mi_accumulate(state, &grad, self.mu);
                let d = next.g.clone();
                self.momentum = Some(next);
                d
            }
            None => grad,
        };
        if dir.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attack gradient"));
        }
        let (alpha, eps) = (self.alpha, self.eps);
        ndarray::Zip::from(delta)
            .and(&dir)
            .and(&self.pixels)
            .for_each(|d, &g, &p| {
                let s = if g > 0.0 {
                    1.0
                } else if g < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *d = clip_entry(*d - alpha * s, p, eps);
            });
        Ok(())
    }
}

fn check_inputs(model: &Model, image: &Image, spec: &TargetSpec, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if image.shape() != model.input_dim {
        return Err(shape_err(model.input_dim, image.shape()));
    }
    if spec.target >= model.classes || spec.original >= model.classes {
        return Err(Error::invalid("target spec outside the model's classes"));
    }
    Ok(())
}

fn finish(image: &Image, delta: Array3<f64>, eps: f64, losses: Vec<f64>) -> Result<AttackOutcome> {
    let perturbation = Perturbation {
        delta,
        epsilon: eps,
    };
    Ok(AttackOutcome {
        adversarial: image.perturbed(&perturbation)?,
        perturbation,
        losses,
    })
}

/// The everywhere attack. Each iteration: DI on `I + δ`, split into M×M
/// blocks, sample N, mean-pad them into local images, take the mean loss over
/// the global image plus the locals, route the gradient back to δ, then
/// TI, MI and a clipped signed step. With N = 0 this is exactly TMDI.
pub fn everywhere_attack(
    model: &Model,
    image: &Image,
    spec: &TargetSpec,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    check_inputs(model, image, spec, cfg)?;
    let (_, h, w) = image.shape();
    let grid = if cfg.samples > 0 {
        Some(split_blocks(h, w, cfg.partitions)?)
    } else {
        None
    };
    let seed = RngState(cfg.seed);
    let mut stepper = Stepper::new(image, cfg)?;
    let mut delta = Array3::zeros(image.shape());
    let mut losses = Vec::with_capacity(cfg.iterations);

    for t in 0..cfg.iterations {
        let x = perturbed_input(image, &delta);
        let di = if cfg.di {
            DiTransform::sample(h, w, cfg.di_prob, cfg.di_min_scale, seed.fork(DI_STREAM, t as u64))
        } else {
            None
        };
        let x_in = match &di {
            Some(d) => d.apply(&x),
            None => x,
        };
        let rects = match &grid {
            Some(g) => sample_blocks(g, cfg.samples, seed.fork(BLOCK_STREAM, t as u64))?,
            None => Vec::new(),
        };
        let (loss, g) = everywhere_batch_gradient(model, &x_in, spec, cfg, &rects)?;
        let g = match &di {
            Some(d) => d.adjoint(&g),
            None => g,
        };
        stepper.step(&mut delta, to_delta_space(image, g))?;
        losses.push(loss);
    }
    finish(image, delta, cfg.epsilon_pixels(), losses)
}

/// Plain TMDI-IFGSM on the global image only; ignores `partitions` and
/// `samples`.
pub fn tmdi_attack(
    model: &Model,
    image: &Image,
    spec: &TargetSpec,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    check_inputs(model, image, spec, cfg)?;
    let (_, h, w) = image.shape();
    let seed = RngState(cfg.seed);
    let mut stepper = Stepper::new(image, cfg)?;
    let mut delta = Array3::zeros(image.shape());
    let mut losses = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let mut x = perturbed_input(image, &delta);
        let di = if cfg.di {
            DiTransform::sample(h, w, cfg.di_prob, cfg.di_min_scale, seed.fork(DI_STREAM, t as u64))
        } else {
            None
        };
        if let Some(d) = &di {
            x = d.apply(&x);
        }
        let (loss, mut g) = image_objective(model, &x, spec, cfg)?;
        if let Some(d) = &di {
            g = d.adjoint(&g);
        }
        stepper.step(&mut delta, to_delta_space(image, g))?;
        losses.push(loss);
    }
    finish(image, delta, cfg.epsilon_pixels(), losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::NormalizationSpec;
    use crate::losses::LossParams;
    use crate::models::{build_architecture, Architecture};

    fn setup() -> (Model, Image) {
        let m = build_architecture(Architecture::Wide, (3, 16, 16), 5, RngState(3)).unwrap();
        let norm = NormalizationSpec::new(vec![0.45, 0.5, 0.55], vec![0.25, 0.2, 0.3]).unwrap();
        let px = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c * 40 + y * 9 + x * 13) % 256) as f64 / 255.0);
        (m, Image::from_pixels(&px, &norm).unwrap())
    }

    fn small_cfg(kind: LossKind) -> AttackConfig {
        AttackConfig {
            iterations: 8,
            partitions: 2,
            samples: 3,
            loss: LossParams::with_kind(kind),
            seed: 21,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (m, img) = setup();
        let spec = TargetSpec::new(1, 0, 3, 5).unwrap();
        let cfg = AttackConfig {
            iterations: 0,
            ..small_cfg(LossKind::Ce)
        };
        let out = everywhere_attack(&m, &img, &spec, &cfg).unwrap();
        assert_eq!(out.adversarial, img);
        assert!(out.perturbation.delta.iter().all(|&d| d == 0.0));
        assert!(out.losses.is_empty());
    }

    #[test]
    fn no_samples_matches_tmdi_bitwise() {
        let (m, img) = setup();
        let spec = TargetSpec::new(3, 1, 2, 5).unwrap();
        for kind in [LossKind::Ce, LossKind::Logit, LossKind::Margin, LossKind::SupHigh] {
            let cfg = small_cfg(kind).baseline();
            let a = everywhere_attack(&m, &img, &spec, &cfg).unwrap();
            let b = tmdi_attack(&m, &img, &spec, &cfg).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn outputs_respect_budget_and_range() {
        let (m, img) = setup();
        let spec = TargetSpec::new(4, 2, 3, 5).unwrap();
        for kind in [LossKind::Ce, LossKind::Logit, LossKind::Margin, LossKind::SupHigh] {
            let cfg = small_cfg(kind);
            let out = everywhere_attack(&m, &img, &spec, &cfg).unwrap();
            let eps = cfg.epsilon_pixels();
            let before = img.to_pixels();
            let after = out.adversarial.to_pixels();
            for (a, b) in after.iter().zip(before.iter()) {
                assert!((a - b).abs() <= eps + 1e-12);
                assert!((-1e-12..=1.0 + 1e-12).contains(a));
            }
            assert!(out.losses.iter().all(|l| l.is_finite()));
            assert_eq!(out.losses.len(), 8);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (m, img) = setup();
        let spec = TargetSpec::new(2, 0, 3, 5).unwrap();
        let cfg = small_cfg(LossKind::Logit);
        assert_eq!(
            everywhere_attack(&m, &img, &spec, &cfg).unwrap(),
            everywhere_attack(&m, &img, &spec, &cfg).unwrap()
        );
    }

    #[test]
    fn rejects_invalid_configs() {
        let (m, img) = setup();
        let spec = TargetSpec::new(2, 0, 3, 5).unwrap();
        let cfg = AttackConfig {
            samples: 5,
            ..small_cfg(LossKind::Ce)
        };
        assert!(everywhere_attack(&m, &img, &spec, &cfg).is_err());
        let (other, _) = (build_architecture(Architecture::Wide, (3, 8, 8), 5, RngState(0)).unwrap(), ());
        assert!(everywhere_attack(&other, &img, &spec, &small_cfg(LossKind::Ce)).is_err());
    }
}
