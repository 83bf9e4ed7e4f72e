//! Differentiable classifiers: a layer stack with exact input gradients, a
//! designated feature layer for GradCAM, training and a weight file format.

mod arch;
mod format;
mod layers;
mod train;

pub use arch::{build_architecture, Architecture, ModelZoo, ZooEntry, ZooRole, ZOO_MANIFEST};
pub use format::{load_model, save_model, MODEL_MAGIC};
pub use layers::{Cache, Conv2d, Dense, Layer, ParamGrad};
pub use train::{evaluate_accuracy, train_model, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::imagekit::Image;

/// An immutable classifier. Cheap to share across threads by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: String,
    pub input_dim: (usize, usize, usize),
    pub classes: usize,
    pub layers: Vec<Layer>,
    /// Top-level layer whose output is the GradCAM feature map.
    pub feature_layer: Option<usize>,
}

/// Forward-pass record needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    pub logits: Array1<f64>,
    caches: Vec<Cache>,
    feature: Option<Array3<f64>>,
}

impl Trace {
    pub fn feature(&self) -> Option<&Array3<f64>> {
        self.feature.as_ref()
    }
}

impl Model {
    pub fn new(
        arch: impl Into<String>,
        input_dim: (usize, usize, usize),
        classes: usize,
        layers: Vec<Layer>,
        feature_layer: Option<usize>,
    ) -> Result<Self> {
        let model = Model {
            arch: arch.into(),
            input_dim,
            classes,
            layers,
            feature_layer,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        let mut dim = self.input_dim;
        let mut dims = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            dim = l.output_dim(dim)?;
            dims.push(dim);
        }
        if dim != (self.classes, 1, 1) {
            return Err(Error::invalid(format!(
                "network output {dim:?} does not match {} classes",
                self.classes
            )));
        }
        if let Some(f) = self.feature_layer {
            if f >= self.layers.len() {
                return Err(Error::invalid("feature layer index out of range"));
            }
            if !self.layers[..=f].iter().any(Layer::is_conv_like) {
                return Err(Error::invalid("feature layer precedes every convolution"));
            }
        }
        Ok(())
    }

    /// Shape of the feature-layer activation, if one is designated.
    pub fn feature_dim(&self) -> Option<(usize, usize, usize)> {
        let f = self.feature_layer?;
        let mut dim = self.input_dim;
        for l in &self.layers[..=f] {
            dim = l.output_dim(dim).ok()?;
        }
        Some(dim)
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != self.input_dim {
            return Err(crate::imagekit::shape_err(self.input_dim, x.dim()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h);
        }
        let logits = Array1::from_iter(h.iter().copied());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(logits)
    }

    /// Logits for each image, one row per image.
    pub fn forward_batch(&self, batch: &[Image]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((batch.len(), self.classes));
        for (mut row, img) in out.outer_iter_mut().zip(batch) {
            row.assign(&self.forward(img.data())?);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Array3<f64>) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn trace(&self, x: &Array3<f64>) -> Result<Trace> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut feature = None;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (o, c) = l.forward_cached(&h);
            caches.push(c);
            if Some(i) == self.feature_layer {
                feature = Some(o.clone());
            }
            h = o;
        }
        let logits = Array1::from_iter(h.iter().copied());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activations"));
        }
        Ok(Trace {
            logits,
            caches,
            feature,
        })
    }

    fn backprop_layers(
        &self,
        trace: &Trace,
        dlogits: &Array1<f64>,
        stop_after: Option<usize>,
        mut params: Option<&mut [ParamGrad]>,
    ) -> Array3<f64> {
        let mut g = dlogits
            .clone()
            .into_shape_with_order((self.classes, 1, 1))
            .expect("logit shape");
        let first = stop_after.map_or(0, |f| f + 1);
        let mut slot: usize = self.layers.iter().map(Layer::param_count).sum();
        for (l, c) in self.layers.iter().zip(&trace.caches).skip(first).rev() {
            slot -= l.param_count();
            let mut cur = slot;
            g = l.backward(c, &g, &mut params, &mut cur);
        }
        g
    }

    /// Gradient of `⟨dlogits, logits⟩` with respect to the input.
    pub fn backprop(&self, trace: &Trace, dlogits: &Array1<f64>) -> Array3<f64> {
        self.backprop_layers(trace, dlogits, None, None)
    }

    /// Like [`Model::backprop`] but also accumulates parameter gradients.
    pub fn backprop_params(
        &self,
        trace: &Trace,
        dlogits: &Array1<f64>,
        grads: &mut [ParamGrad],
    ) -> Array3<f64> {
        self.backprop_layers(trace, dlogits, None, Some(grads))
    }

    /// Per-image loss values and exact input gradients. `objective` maps logits
    /// to `(loss, ∂loss/∂logits)`.
    pub fn input_gradient<F>(
        &self,
        batch: &[Array3<f64>],
        objective: F,
    ) -> Result<(Vec<f64>, Vec<Array3<f64>>)>
    where
        F: Fn(&Array1<f64>) -> Result<(f64, Array1<f64>)>,
    {
        let mut losses = Vec::with_capacity(batch.len());
        let mut grads = Vec::with_capacity(batch.len());
        for x in batch {
            let t = self.trace(x)?;
            let (loss, dl) = objective(&t.logits)?;
            grads.push(self.backprop(&t, &dl));
            losses.push(loss);
        }
        Ok((losses, grads))
    }

    /// Feature-layer activations `A` and `∂logit_class/∂A`.
    pub fn feature_activations(
        &self,
        x: &Array3<f64>,
        class: usize,
    ) -> Result<(Array3<f64>, Array3<f64>)> {
        let f = self
            .feature_layer
            .ok_or_else(|| Error::invalid(format!("model {} has no feature layer", self.arch)))?;
        if class >= self.classes {
            return Err(Error::invalid(format!("class {class} out of range")));
        }
        let t = self.trace(x)?;
        let mut onehot = Array1::zeros(self.classes);
        onehot[class] = 1.0;
        let grad = self.backprop_layers(&t, &onehot, Some(f), None);
        let act = t.feature.expect("feature recorded during trace");
        Ok((act, grad))
    }

    pub fn param_grads_zeroed(&self) -> Vec<ParamGrad> {
        let mut ps = Vec::new();
        self.layers.iter().for_each(|l| l.visit_params(&mut ps));
        ps.into_iter()
            .map(|(w, b)| ParamGrad {
                weight: Array2::zeros(w.raw_dim()),
                bias: Array1::zeros(b.raw_dim()),
            })
            .collect()
    }

    pub fn params(&self) -> Vec<(&Array2<f64>, &Array1<f64>)> {
        let mut ps = Vec::new();
        self.layers.iter().for_each(|l| l.visit_params(&mut ps));
        ps
    }

    pub fn params_mut(&mut self) -> Vec<(&mut Array2<f64>, &mut Array1<f64>)> {
        let mut ps = Vec::new();
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(&mut ps));
        ps
    }

    pub fn param_len(&self) -> usize {
        self.params().iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Rounds every parameter to the nearest float32 so the weight file
    /// round-trips exactly.
    pub fn quantize_f32(&mut self) {
        for (w, b) in self.params_mut() {
            w.mapv_inplace(|v| v as f32 as f64);
            b.mapv_inplace(|v| v as f32 as f64);
        }
    }
}

pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}
