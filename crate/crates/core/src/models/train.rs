use ndarray::{Array1, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax, Model, ParamGrad};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imagekit::NormalizationSpec;
use crate::rng::RngState;

/// Seeded Adam recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 32,
            learning_rate: 4e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Mean training loss observed during each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

struct Adam {
    m: Vec<ParamGrad>,
    v: Vec<ParamGrad>,
    step: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&mut self, model: &mut Model, grads: &[ParamGrad], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (((w, b), g), (m, v)) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            step_tensor(w.as_slice_mut().unwrap(), g.weight.as_slice().unwrap(), m.weight.as_slice_mut().unwrap(), v.weight.as_slice_mut().unwrap(), lr, c1, c2);
            step_tensor(b.as_slice_mut().unwrap(), g.bias.as_slice().unwrap(), m.bias.as_slice_mut().unwrap(), v.bias.as_slice_mut().unwrap(), lr, c1, c2);
        }
        model.quantize_f32();
    }
}

fn step_tensor(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for i in 0..p.len() {
        m[i] = Adam::B1 * m[i] + (1.0 - Adam::B1) * g[i];
        v[i] = Adam::B2 * v[i] + (1.0 - Adam::B2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Adam::EPS);
    }
}

fn ce_and_grad(logits: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    let mut p = softmax(logits);
    let loss = -p[label].max(1e-300).ln();
    p[label] -= 1.0;
    (loss, p)
}

/// Mean cross-entropy of `model` over normalized inputs.
pub fn mean_loss(model: &Model, inputs: &[Array3<f64>], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        total += ce_and_grad(&model.forward(x)?, y).0;
    }
    Ok(total / inputs.len() as f64)
}

/// Trains `model` in place. Bit-deterministic for a fixed seed.
pub fn train_model(
    mut model: Model,
    data: &Dataset,
    norm: &NormalizationSpec,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    data.validate()?;
    if data.classes > model.classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, model {}",
            data.classes, model.classes
        )));
    }
    cfg.validate()?;
    let inputs: Vec<Array3<f64>> = data
        .normalized(norm)?
        .into_iter()
        .map(|i| i.into_data())
        .collect();
    let initial_loss = mean_loss(&model, &inputs, &data.labels)?;

    let mut adam = Adam {
        m: model.param_grads_zeroed(),
        v: model.param_grads_zeroed(),
        step: 0,
        lr: cfg.learning_rate,
    };
    let seed = RngState(cfg.seed);
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed.fork(1, epoch as u64).generator());
        let mut running = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.param_grads_zeroed();
            for &i in batch {
                let trace = model.trace(&inputs[i])?;
                let (loss, dl) = ce_and_grad(&trace.logits, data.labels[i]);
                running += loss;
                model.backprop_params(&trace, &(dl / batch.len() as f64), &mut grads);
            }
            // cosine decay to 5% of the base rate
            let t = adam.step as f64 / total_steps as f64;
            let lr = adam.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
            adam.update(&mut model, &grads, lr);
        }
        let mean = running / data.len() as f64;
        log::info!("{} epoch {}: train loss {mean:.4}", model.arch, epoch + 1);
        epoch_losses.push(mean);
    }
    let final_loss = mean_loss(&model, &inputs, &data.labels)?;
    Ok((
        model,
        TrainReport {
            initial_loss,
            epoch_losses,
            final_loss,
        },
    ))
}

/// Fraction of `data` that `model` classifies correctly.
pub fn evaluate_accuracy(model: &Model, data: &Dataset, norm: &NormalizationSpec) -> Result<f64> {
    let mut correct = 0usize;
    for (img, &y) in data.images.iter().zip(&data.labels) {
        let x = crate::imagekit::normalize(img, norm)?;
        if argmax(&model.forward(x.data())?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
