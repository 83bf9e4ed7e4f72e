//! Image tensors, normalization, perturbation clipping and the block grid
//! used by the everywhere scheme.

mod blocks;
pub mod io;

pub use blocks::{make_local_image, mask_to_rect, sample_blocks, split_blocks, BlockGrid, Rect};

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a raw 0..255 budget (as written in configs) to pixel units.
pub fn raw_to_pixel(raw: f64) -> f64 {
    raw / 255.0
}

/// Per-channel mean and standard deviation in pixel units ([0, 1] scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationSpec {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let spec = NormalizationSpec { mean, std };
        spec.validate()?;
        Ok(spec)
    }

    /// Mean 0.5, std 0.5 on every channel: maps [0, 1] onto [-1, 1].
    pub fn symmetric(channels: usize) -> Self {
        NormalizationSpec {
            mean: vec![0.5; channels],
            std: vec![0.5; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::invalid(
                "normalization mean and std must be non-empty and of equal length",
            ));
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normalization spec"));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("normalization std must be > 0"));
        }
        Ok(())
    }
}

/// A normalized C×H×W image in model-input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
    norm: NormalizationSpec,
}

impl Image {
    /// Wraps an already-normalized tensor. Entries must be finite and map back
    /// into the valid pixel range (a small rounding slack is tolerated).
    pub fn from_normalized(data: Array3<f64>, norm: NormalizationSpec) -> Result<Self> {
        norm.validate()?;
        check_channels(data.dim().0, &norm)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        let img = Image { data, norm };
        let slack = 1e-9;
        if img
            .to_pixels()
            .iter()
            .any(|&p| !(-slack..=1.0 + slack).contains(&p))
        {
            return Err(Error::invalid("image leaves the valid pixel range"));
        }
        Ok(img)
    }

    /// Builds an image from pixel values in [0, 1].
    pub fn from_pixels(pixels: &Array3<f64>, norm: &NormalizationSpec) -> Result<Self> {
        norm.validate()?;
        check_channels(pixels.dim().0, norm)?;
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pixels"));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("pixel value outside [0, 1]"));
        }
        let mut data = pixels.clone();
        for (c, mut plane) in data.outer_iter_mut().enumerate() {
            let (m, s) = (norm.mean[c], norm.std[c]);
            plane.mapv_inplace(|p| (p - m) / s);
        }
        Ok(Image {
            data,
            norm: norm.clone(),
        })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn norm(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// De-normalized pixel values in [0, 1].
    pub fn to_pixels(&self) -> Array3<f64> {
        denormalize(&self.data, &self.norm)
    }

    /// Raw 0..255 values (unrounded).
    pub fn to_raw(&self) -> Array3<f64> {
        self.to_pixels().mapv(|p| p * 255.0)
    }

    /// The image shifted by a pixel-space perturbation. The caller guarantees
    /// feasibility (see [`clip_perturbation`]).
    pub fn perturbed(&self, delta: &Perturbation) -> Result<Image> {
        if delta.delta.dim() != self.data.dim() {
            return Err(shape_err(self.data.dim(), delta.delta.dim()));
        }
        let mut data = self.data.clone();
        for (c, (mut plane, dplane)) in data
            .outer_iter_mut()
            .zip(delta.delta.outer_iter())
            .enumerate()
        {
            let s = self.norm.std[c];
            Zip::from(&mut plane).and(&dplane).for_each(|x, &d| *x += d / s);
        }
        Ok(Image {
            data,
            norm: self.norm.clone(),
        })
    }
}

fn check_channels(c: usize, norm: &NormalizationSpec) -> Result<()> {
    if c != norm.channels() {
        return Err(Error::invalid(format!(
            "image has {c} channels, normalization has {}",
            norm.channels()
        )));
    }
    Ok(())
}

pub(crate) fn shape_err(expected: (usize, usize, usize), got: (usize, usize, usize)) -> Error {
    Error::ShapeMismatch {
        expected: vec![expected.0, expected.1, expected.2],
        got: vec![got.0, got.1, got.2],
    }
}

/// `(raw / 255 - mean) / std` per channel.
pub fn normalize(raw: &Array3<f64>, spec: &NormalizationSpec) -> Result<Image> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw image"));
    }
    if raw.iter().any(|&v| !(0.0..=255.0).contains(&v)) {
        return Err(Error::invalid("raw pixel value outside [0, 255]"));
    }
    Image::from_pixels(&raw.mapv(|v| v / 255.0), spec)
}

/// Inverse of normalization back to [0, 1] pixel units.
pub fn denormalize(data: &Array3<f64>, spec: &NormalizationSpec) -> Array3<f64> {
    let mut out = data.clone();
    for (c, mut plane) in out.outer_iter_mut().enumerate() {
        let (m, s) = (spec.mean[c], spec.std[c]);
        plane.mapv_inplace(|x| x * s + m);
    }
    out
}

/// An additive pixel-space perturbation bounded in L∞ by `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Array3<f64>,
    pub epsilon: f64,
}

impl Perturbation {
    pub fn zeros(shape: (usize, usize, usize), epsilon: f64) -> Self {
        Perturbation {
            delta: Array3::zeros(shape),
            epsilon,
        }
    }

    pub fn linf(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, &d| m.max(d.abs()))
    }
}

/// Projects `delta` onto the ε-ball intersected with the valid pixel box
/// around `image`. Entries that are already feasible pass through untouched.
pub fn clip_perturbation(delta: &Perturbation, image: &Image) -> Result<Perturbation> {
    if delta.delta.dim() != image.shape() {
        return Err(shape_err(image.shape(), delta.delta.dim()));
    }
    let pixels = image.to_pixels();
    let eps = delta.epsilon;
    let mut out = delta.delta.clone();
    Zip::from(&mut out).and(&pixels).for_each(|d, &p| {
        *d = clip_entry(*d, p, eps);
    });
    Ok(Perturbation {
        delta: out,
        epsilon: eps,
    })
}

#[inline]
pub(crate) fn clip_entry(d: f64, pixel: f64, eps: f64) -> f64 {
    let lo = (-eps).max(-pixel);
    let hi = eps.min(1.0 - pixel);
    if lo > hi {
        // pixel outside [0, 1] by rounding; the only feasible move is none
        return 0.0;
    }
    d.clamp(lo, hi)
}
